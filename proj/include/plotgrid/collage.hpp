#pragma once

// Synthetic benchmark: every species is a procedural stripe texture with its
// own mean color, contrast, frequency and orientation. Training images are
// single-species 128x128 tiles; each test plot is an n x n mosaic of fresh
// tiles drawn from a few distinct species.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "plotgrid/core.hpp"
#include "plotgrid/metrics.hpp"
#include "plotgrid/png_io.hpp"
#include "plotgrid/preprocess.hpp"
#include "plotgrid/random.hpp"

namespace plotgrid {

struct CollageSpec {
  std::size_t num_species = 10;
  std::size_t images_per_species = 50;
  std::size_t plots = 40;
  std::size_t grid_n = 3;
  std::size_t species_per_plot = 4;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_species == 0) throw Error("collage: num_species must be positive");
    if (grid_n == 0) throw Error("collage: grid must be at least 1");
    if (species_per_plot == 0) throw Error("collage: species_per_plot must be positive");
    if (species_per_plot > grid_n * grid_n) throw Error("collage: species_per_plot exceeds grid_n²");
    if (species_per_plot > num_species) throw Error("collage: species_per_plot exceeds num_species");
  }
};

struct CollageDataset {
  std::vector<ImageRecord> train;  // labeled 128x128 tiles
  std::vector<ImageRecord> plots;  // unlabeled mosaics
  std::vector<PlotLabelSet> truth;
};

namespace detail {

struct Texture {
  SpeciesId species;
  std::array<double, 3> mean;
  std::array<double, 3> contrast;
  double cycles;  // stripe cycles across one tile
  double angle;
};

inline std::vector<Texture> make_textures(const CollageSpec& spec, Rng& rng) {
  std::vector<Texture> out;
  for (std::size_t k = 0; k < spec.num_species; ++k) {
    Texture t;
    t.species = SpeciesId{1000 + 37 * k};
    // Mean colors walk around the hue circle so species stay apart in mean
    // RGB regardless of the seed.
    const double hue = 2.0 * M_PI * (static_cast<double>(k) + 0.3 * rng.uniform()) / spec.num_species;
    const double light = 110.0 + 40.0 * rng.uniform();
    for (int ch = 0; ch < 3; ++ch) {
      t.mean[ch] = light + 70.0 * std::cos(hue - 2.0 * M_PI * ch / 3.0);
      t.contrast[ch] = 15.0 + 35.0 * rng.uniform();
    }
    t.cycles = 2.0 + 14.0 * rng.uniform();
    t.angle = M_PI * rng.uniform();
    out.push_back(t);
  }
  return out;
}

inline Image render_texture(const Texture& t, std::uint32_t side, Rng& rng) {
  Image img(side, side);
  const double phase = 2.0 * M_PI * rng.uniform();
  const double cycles = t.cycles * (0.95 + 0.1 * rng.uniform());
  const double angle = t.angle + 0.1 * (rng.uniform() - 0.5);
  const double shift = 12.0 * (rng.uniform() - 0.5);
  const double kx = std::cos(angle), ky = std::sin(angle);
  for (std::uint32_t r = 0; r < side; ++r) {
    for (std::uint32_t c = 0; c < side; ++c) {
      const double wave = std::sin(2.0 * M_PI * cycles * (kx * c + ky * r) / side + phase);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double noise = 20.0 * (rng.uniform() - 0.5);
        const double v = t.mean[ch] + shift + t.contrast[ch] * wave + noise;
        img.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return img;
}

inline std::string padded(std::size_t n, int width) {
  std::string s = std::to_string(n);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace detail

inline CollageDataset make_collage_dataset(const CollageSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto textures = detail::make_textures(spec, rng);
  CollageDataset out;

  for (const auto& t : textures) {
    for (std::size_t i = 0; i < spec.images_per_species; ++i) {
      out.train.push_back({"s" + to_string(t.species) + "_" + detail::padded(i, 4), t.species,
                           detail::render_texture(t, kProcessedSide, rng)});
    }
  }

  const std::size_t cells = spec.grid_n * spec.grid_n;
  const std::uint32_t side = static_cast<std::uint32_t>(spec.grid_n * kProcessedSide);
  std::vector<std::size_t> pool(spec.num_species);
  for (std::size_t p = 0; p < spec.plots; ++p) {
    for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k;
    rng.shuffle(std::span<std::size_t>(pool));
    std::vector<std::size_t> cell_species(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      cell_species[c] = c < spec.species_per_plot ? pool[c] : pool[rng.below(spec.species_per_plot)];
    }
    rng.shuffle(std::span<std::size_t>(cell_species));

    ImageRecord plot{"plot_" + detail::padded(p, 4), std::nullopt, Image(side, side)};
    PlotLabelSet truth{plot.image_id, {}};
    for (std::size_t c = 0; c < cells; ++c) {
      const auto& t = textures[cell_species[c]];
      truth.species.insert(t.species);
      const Image tile = detail::render_texture(t, kProcessedSide, rng);
      const std::size_t r0 = (c / spec.grid_n) * kProcessedSide, c0 = (c % spec.grid_n) * kProcessedSide;
      for (std::uint32_t y = 0; y < kProcessedSide; ++y) {
        std::copy_n(tile.pixels.data() + std::size_t{y} * kProcessedSide * 3, kProcessedSide * 3,
                    plot.image.pixels.data() + ((r0 + y) * side + c0) * 3);
      }
    }
    out.plots.push_back(std::move(plot));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

/// Layout: train/train.img1, plots/plots.img1, truth.csv; with `as_png`,
/// train/<species>/<id>.png and plots/<id>.png instead of the shards.
inline void write_collage(const CollageDataset& data, const std::filesystem::path& dir, bool as_png = false) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "plots");
  if (as_png) {
    for (const auto& r : data.train) write_png(dir / "train" / to_string(*r.species) / (r.image_id + ".png"), r.image);
    for (const auto& r : data.plots) write_png(dir / "plots" / (r.image_id + ".png"), r.image);
  } else {
    pack_shard(data.train, dir / "train" / "train.img1");
    pack_shard(data.plots, dir / "plots" / "plots.img1");
  }
  io::write_text_file(dir / "truth.csv", format_truth_csv(data.truth));
}

}  // namespace plotgrid
