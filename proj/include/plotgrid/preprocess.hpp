#pragma once

// Image normalization (center square crop, bilinear resize), class-imbalance
// filtering and the IMG1 image shard format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "plotgrid/core.hpp"
#include "plotgrid/io.hpp"

namespace plotgrid {

/// Crops the largest centered square. Offsets round down when the remainder
/// is odd.
inline ImageRecord center_square_crop(const ImageRecord& in) {
  const Image& src = in.image;
  if (src.height == 0 || src.width == 0) {
    throw Error("image '" + in.image_id + "' has zero extent");
  }
  const std::uint32_t side = std::min(src.height, src.width);
  const std::uint32_t row0 = (src.height - side) / 2;
  const std::uint32_t col0 = (src.width - side) / 2;

  ImageRecord out{in.image_id, in.species, Image(side, side)};
  const std::size_t row_bytes = std::size_t{side} * 3;
  for (std::uint32_t r = 0; r < side; ++r) {
    const auto* from = src.pixels.data() + ((std::size_t{row0} + r) * src.width + col0) * 3;
    std::copy(from, from + row_bytes, out.image.pixels.data() + std::size_t{r} * row_bytes);
  }
  return out;
}

namespace detail {

struct SampleTap {
  std::uint32_t lo;
  std::uint32_t hi;
  double frac;  // weight of `hi`
};

// Half-pixel-centered source coordinate for each destination index,
// clamped to the source extent.
inline std::vector<SampleTap> bilinear_taps(std::uint32_t src_n, std::uint32_t dst_n) {
  std::vector<SampleTap> taps(dst_n);
  const double scale = static_cast<double>(src_n) / dst_n;
  for (std::uint32_t d = 0; d < dst_n; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
    const auto lo = static_cast<std::uint32_t>(std::floor(s));
    const std::uint32_t hi = std::min(lo + 1, src_n - 1);
    taps[d] = {lo, hi, s - lo};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of a square image to side x side, half-pixel centers,
/// channels independent, round half up.
inline ImageRecord resize_bilinear(const ImageRecord& in, std::uint32_t side) {
  const Image& src = in.image;
  if (src.height != src.width) {
    throw Error("resize_bilinear: image '" + in.image_id + "' is " + std::to_string(src.height) +
                "x" + std::to_string(src.width) + ", expected square input");
  }
  if (side == 0 || src.height == 0) throw Error("resize_bilinear: zero side");

  ImageRecord out{in.image_id, in.species, Image(side, side)};
  if (side == src.height) {
    out.image = src;
    return out;
  }
  const auto taps = detail::bilinear_taps(src.height, side);
  for (std::uint32_t r = 0; r < side; ++r) {
    const auto& ty = taps[r];
    for (std::uint32_t c = 0; c < side; ++c) {
      const auto& tx = taps[c];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double top = src.at(ty.lo, tx.lo, ch) * (1.0 - tx.frac) + src.at(ty.lo, tx.hi, ch) * tx.frac;
        const double bottom = src.at(ty.hi, tx.lo, ch) * (1.0 - tx.frac) + src.at(ty.hi, tx.hi, ch) * tx.frac;
        const double v = top * (1.0 - ty.frac) + bottom * ty.frac;
        out.image.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

/// Crop then resize: the normalization every training image and every
/// inference tile goes through.
inline ProcessedImage normalize_image(const ImageRecord& in, std::uint32_t side = kProcessedSide) {
  return resize_bilinear(center_square_crop(in), side);
}

inline constexpr std::uint64_t kDefaultMinImages = 100;

/// Keeps species with image_count >= min_count; indices are re-compacted.
inline SpeciesCatalog filter_min_images(const SpeciesCatalog& catalog, std::uint64_t min_count) {
  std::vector<CatalogEntry> kept;
  for (const auto& e : catalog.entries()) {
    if (e.image_count >= min_count) kept.push_back(e);
  }
  return SpeciesCatalog::from_entries(std::move(kept));
}

// IMG1 shard: magic, u32 count, then per record
//   u16 id_len, id, u8 has_label, [u64 species], u16 h, u16 w, h*w*3 RGB.

inline std::size_t image_record_encoded_size(const ImageRecord& r) {
  return 2 + r.image_id.size() + 1 + (r.species ? 8 : 0) + 2 + 2 + r.image.pixels.size();
}

inline std::vector<std::uint8_t> encode_image_shard(std::span<const ImageRecord> items) {
  if (items.empty()) throw Error("image shard: refusing to encode an empty record list");
  io::ByteWriter w;
  w.text("IMG1");
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& r : items) {
    const Image& img = r.image;
    if (img.height == 0 || img.width == 0 || img.height > 0xFFFF || img.width > 0xFFFF) {
      throw Error("image shard: record '" + r.image_id + "' has unsupported extent " +
                  std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    if (img.pixels.size() != std::size_t{img.height} * img.width * 3) {
      throw Error("image shard: record '" + r.image_id + "' pixel buffer does not match its extent");
    }
    w.short_string(r.image_id);
    w.u8(r.species ? 1 : 0);
    if (r.species) w.u64(r.species->value);
    w.u16(static_cast<std::uint16_t>(img.height));
    w.u16(static_cast<std::uint16_t>(img.width));
    w.bytes(img.pixels);
  }
  return w.take();
}

inline std::vector<ImageRecord> decode_image_shard(std::span<const std::uint8_t> data,
                                                   const std::string& context = "image shard") {
  io::ByteReader r(data, context);
  r.expect_magic("IMG1");
  const std::uint32_t count = r.u32();
  std::vector<ImageRecord> out;
  out.reserve(std::min<std::size_t>(count, r.remaining() / 8));
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageRecord rec;
    rec.image_id = r.short_string();
    const std::uint8_t has_label = r.u8();
    if (has_label > 1) r.fail("has_label must be 0 or 1");
    if (has_label) rec.species = SpeciesId{r.u64()};
    rec.image.height = r.u16();
    rec.image.width = r.u16();
    if (rec.image.height == 0 || rec.image.width == 0) r.fail("record '" + rec.image_id + "' has zero extent");
    auto px = r.bytes(std::size_t{rec.image.height} * rec.image.width * 3);
    rec.image.pixels.assign(px.begin(), px.end());
    out.push_back(std::move(rec));
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  return out;
}

/// Writes an IMG1 shard. Nothing is created when `items` is empty.
inline void pack_shard(std::span<const ImageRecord> items, const std::filesystem::path& path) {
  auto bytes = encode_image_shard(items);
  io::write_file_atomic(path, bytes);
}

inline std::vector<ImageRecord> load_shard(const std::filesystem::path& path) {
  return decode_image_shard(io::read_file(path), path.string());
}

}  // namespace plotgrid
