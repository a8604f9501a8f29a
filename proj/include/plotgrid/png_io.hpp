#pragma once

// PNG decode/encode through libpng's simplified API, plus directory loading.
//
// Directory layout accepted by load_image_directory:
//   <dir>/<species_id>/<name>.png  labeled training image
//   <dir>/<name>.png               unlabeled image (e.g. a plot)
//   <dir>/<name>.img1              IMG1 shard, records taken as-is

#include <png.h>

#include <filesystem>
#include <string>
#include <vector>

#include "plotgrid/core.hpp"
#include "plotgrid/preprocess.hpp"

namespace plotgrid {

inline Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw Error("png '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  Image img(png.height, png.width);
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error("png '" + path.string() + "': " + png.message);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = img.width;
  png.height = img.height;
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw Error("png '" + path.string() + "': " + png.message);
  }
}

inline std::vector<ImageRecord> load_image_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");

  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());

  std::vector<ImageRecord> out;
  for (const auto& p : entries) {
    if (fs::is_directory(p)) {
      const SpeciesId species{detail::parse_u64(p.filename().string(), "species directory name")};
      for (const auto& file : io::list_files(p, ".png")) {
        out.push_back({file.stem().string(), species, read_png(file)});
      }
    } else if (p.extension() == ".png") {
      out.push_back({p.stem().string(), std::nullopt, read_png(p)});
    } else if (p.extension() == ".img1") {
      auto records = load_shard(p);
      std::move(records.begin(), records.end(), std::back_inserter(out));
    }
  }
  return out;
}

}  // namespace plotgrid
