#pragma once

// Embedding features: orthonormal 2-D DCT-II, the low-frequency DCT block of
// a patch-token matrix, the [CLS] vector, the deterministic toy extractor
// standing in for a ViT, and the EMB1 embedding shard format.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "plotgrid/core.hpp"
#include "plotgrid/io.hpp"
#include "plotgrid/random.hpp"

namespace plotgrid {

inline constexpr std::size_t kPatchTokens = 256;
inline constexpr std::size_t kTokenDim = 768;
inline constexpr std::size_t kDctFilterSize = 8;

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite input");
  }
}

// First `keep` rows of the n-point orthonormal DCT-II basis, row-major
// keep x n: B[k][i] = a_k cos(pi (2i+1) k / 2n).
inline DenseMatrix<double> dct_basis(std::size_t n, std::size_t keep) {
  DenseMatrix<double> b(keep, n);
  const double a0 = std::sqrt(1.0 / n);
  const double ak = std::sqrt(2.0 / n);
  for (std::size_t k = 0; k < keep; ++k) {
    const double a = k == 0 ? a0 : ak;
    for (std::size_t i = 0; i < n; ++i) {
      b(k, i) = a * std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * n));
    }
  }
  return b;
}

// Y = Brows * M * Bcolsᵀ, where Brows is kr x R and Bcols is kc x C.
inline DenseMatrix<double> separable_transform(const DenseMatrix<double>& m,
                                               const DenseMatrix<double>& row_basis,
                                               const DenseMatrix<double>& col_basis) {
  const std::size_t R = m.rows(), C = m.cols();
  const std::size_t kr = row_basis.rows(), kc = col_basis.rows();
  // Along each row (length C) first.
  DenseMatrix<double> t(R, kc);
  for (std::size_t r = 0; r < R; ++r) {
    auto src = m.row(r);
    for (std::size_t k = 0; k < kc; ++k) {
      auto basis = col_basis.row(k);
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += basis[c] * src[c];
      t(r, k) = acc;
    }
  }
  // Then down each column (length R).
  DenseMatrix<double> y(kr, kc);
  for (std::size_t k = 0; k < kr; ++k) {
    auto basis = row_basis.row(k);
    auto out = y.row(k);
    for (std::size_t r = 0; r < R; ++r) {
      const double w = basis[r];
      auto src = t.row(r);
      for (std::size_t j = 0; j < kc; ++j) out[j] += w * src[j];
    }
  }
  return y;
}

inline DenseMatrix<double> transpose(const DenseMatrix<double>& m) {
  DenseMatrix<double> t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

}  // namespace detail

/// Orthonormal type-II DCT along rows, then along columns.
inline DenseMatrix<double> dct2_orthonormal(const DenseMatrix<double>& m) {
  if (m.rows() == 0 || m.cols() == 0) throw Error("dct2: empty matrix");
  detail::require_finite(m.flat(), "dct2");
  return detail::separable_transform(m, detail::dct_basis(m.rows(), m.rows()),
                                     detail::dct_basis(m.cols(), m.cols()));
}

/// Inverse of dct2_orthonormal (orthonormal DCT-III on both axes).
inline DenseMatrix<double> idct2_orthonormal(const DenseMatrix<double>& coeffs) {
  if (coeffs.rows() == 0 || coeffs.cols() == 0) throw Error("idct2: empty matrix");
  detail::require_finite(coeffs.flat(), "idct2");
  return detail::separable_transform(coeffs, detail::transpose(detail::dct_basis(coeffs.rows(), coeffs.rows())),
                                     detail::transpose(detail::dct_basis(coeffs.cols(), coeffs.cols())));
}

/// The top-left rows_keep x cols_keep block of dct2_orthonormal(m), computed
/// without forming the full transform.
inline DenseMatrix<double> dct2_lowpass(const DenseMatrix<double>& m, std::size_t rows_keep,
                                        std::size_t cols_keep) {
  if (m.rows() == 0 || m.cols() == 0) throw Error("dct2: empty matrix");
  if (rows_keep > m.rows() || cols_keep > m.cols()) {
    throw Error("dct2_lowpass: block " + std::to_string(rows_keep) + "x" + std::to_string(cols_keep) +
                " exceeds matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  detail::require_finite(m.flat(), "dct2");
  return detail::separable_transform(m, detail::dct_basis(m.rows(), rows_keep),
                                     detail::dct_basis(m.cols(), cols_keep));
}

/// Patch tokens of one image with the [CLS] vector split off.
struct PatchTokenMatrix {
  DenseMatrix<double> tokens{kPatchTokens, kTokenDim};
  std::vector<double> cls = std::vector<double>(kTokenDim, 0.0);

  void validate() const {
    if (tokens.rows() != kPatchTokens || tokens.cols() != kTokenDim || cls.size() != kTokenDim) {
      throw Error("patch token matrix must be 256x768 with a 768-d cls vector");
    }
    detail::require_finite(tokens.flat(), "patch tokens");
    detail::require_finite(cls, "cls token");
  }
};

/// Low-frequency DCT block of the token x channel matrix, flattened
/// row-major to filter_size² values.
inline std::vector<double> dct_coefficients(const PatchTokenMatrix& p, std::size_t filter_size = kDctFilterSize) {
  if (filter_size == 0 || filter_size > std::min(p.tokens.rows(), p.tokens.cols())) {
    throw Error("dct_coefficients: filter size " + std::to_string(filter_size) + " out of range");
  }
  auto block = dct2_lowpass(p.tokens, filter_size, filter_size);
  return {block.flat().begin(), block.flat().end()};
}

inline std::vector<double> cls_embedding(const PatchTokenMatrix& p) { return p.cls; }

/// Desk-scale stand-in for the ViT. Each 8x8 patch of a 128x128 image is
/// summarized by its per-channel mean and standard deviation (pixel values
/// scaled to [0,1]) and projected to 768 dims by a fixed seeded matrix; the
/// cls vector is the mean of the 256 tokens.
class ToyExtractor {
 public:
  static constexpr std::size_t kStats = 6;
  static constexpr std::size_t kPatchSide = 8;
  static constexpr std::size_t kGrid = kProcessedSide / kPatchSide;
  static_assert(kGrid * kGrid == kPatchTokens);

  explicit ToyExtractor(std::uint64_t seed) : seed_(seed), projection_(kTokenDim, kStats) {
    Rng rng(seed);
    for (double& w : projection_.flat()) w = rng.uniform(-1.0, 1.0);
  }

  std::uint64_t seed() const { return seed_; }

  PatchTokenMatrix embed(const ProcessedImage& img) const {
    if (img.image.height != kProcessedSide || img.image.width != kProcessedSide) {
      throw Error("toy extractor: image '" + img.image_id + "' is " + std::to_string(img.image.height) + "x" +
                  std::to_string(img.image.width) + ", expected 128x128");
    }
    PatchTokenMatrix out;
    for (std::size_t pr = 0; pr < kGrid; ++pr) {
      for (std::size_t pc = 0; pc < kGrid; ++pc) {
        const auto stats = patch_stats(img.image, pr, pc);
        auto token = out.tokens.row(pr * kGrid + pc);
        for (std::size_t d = 0; d < kTokenDim; ++d) {
          auto w = projection_.row(d);
          double acc = 0.0;
          for (std::size_t s = 0; s < kStats; ++s) acc += w[s] * stats[s];
          token[d] = acc;
        }
      }
    }
    for (std::size_t t = 0; t < kPatchTokens; ++t) {
      auto token = out.tokens.row(t);
      for (std::size_t d = 0; d < kTokenDim; ++d) out.cls[d] += token[d];
    }
    for (double& v : out.cls) v /= static_cast<double>(kPatchTokens);
    return out;
  }

 private:
  static std::array<double, kStats> patch_stats(const Image& img, std::size_t pr, std::size_t pc) {
    std::array<double, 3> sum{}, sq{};
    for (std::size_t r = 0; r < kPatchSide; ++r) {
      for (std::size_t c = 0; c < kPatchSide; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = img.at(pr * kPatchSide + r, pc * kPatchSide + c, ch) / 255.0;
          sum[ch] += v;
          sq[ch] += v * v;
        }
      }
    }
    constexpr double n = kPatchSide * kPatchSide;
    std::array<double, kStats> out{};
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double mean = sum[ch] / n;
      out[ch] = mean;
      out[3 + ch] = std::sqrt(std::max(0.0, sq[ch] / n - mean * mean));
    }
    return out;
  }

  std::uint64_t seed_;
  DenseMatrix<double> projection_;  // 768 x 6
};

inline PatchTokenMatrix toy_embed(const ProcessedImage& img, std::uint64_t seed) {
  return ToyExtractor(seed).embed(img);
}

// ---------------------------------------------------------------------------
// EMB1 embedding shards

enum class EmbeddingKind : std::uint8_t {
  dct64 = 0,
  cls768 = 1,
  raw_tokens = 2,  // 256x768 patch tokens, written by the external exporter
};

inline constexpr std::size_t kRawTokenDim = kPatchTokens * kTokenDim;

inline std::size_t embedding_dim(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::dct64: return kDctFilterSize * kDctFilterSize;
    case EmbeddingKind::cls768: return kTokenDim;
    case EmbeddingKind::raw_tokens: return kRawTokenDim;
  }
  throw Error("unknown embedding kind " + std::to_string(static_cast<int>(kind)));
}

inline std::string to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::dct64: return "dct64";
    case EmbeddingKind::cls768: return "cls768";
    case EmbeddingKind::raw_tokens: return "raw_tokens";
  }
  return "unknown";
}

inline EmbeddingKind parse_embedding_kind(std::string_view s) {
  if (s == "dct64") return EmbeddingKind::dct64;
  if (s == "cls768") return EmbeddingKind::cls768;
  if (s == "raw_tokens") return EmbeddingKind::raw_tokens;
  throw Error("unknown embedding kind '" + std::string(s) + "'");
}

struct EmbeddingRecord {
  std::string image_id;
  std::optional<SpeciesId> species;
  EmbeddingKind kind = EmbeddingKind::cls768;
  std::vector<float> values;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct EmbeddingShard {
  EmbeddingKind kind = EmbeddingKind::cls768;
  std::vector<EmbeddingRecord> records;
};

inline std::vector<float> to_f32(std::span<const double> v) { return {v.begin(), v.end()}; }

/// Embeds one processed image into the requested kind with the toy extractor.
inline std::vector<float> toy_features(const ToyExtractor& extractor, const ProcessedImage& img, EmbeddingKind kind) {
  const auto tokens = extractor.embed(img);
  switch (kind) {
    case EmbeddingKind::dct64: return to_f32(dct_coefficients(tokens));
    case EmbeddingKind::cls768: return to_f32(cls_embedding(tokens));
    case EmbeddingKind::raw_tokens: return to_f32(tokens.tokens.flat());
  }
  throw Error("unknown embedding kind");
}

/// 64 DCT coefficients from a raw-token record produced by the exporter.
inline EmbeddingRecord dct_from_raw_tokens(const EmbeddingRecord& raw) {
  if (raw.kind != EmbeddingKind::raw_tokens || raw.values.size() != kRawTokenDim) {
    throw Error("record '" + raw.image_id + "' is not a 256x768 raw token record");
  }
  PatchTokenMatrix p;
  std::copy(raw.values.begin(), raw.values.end(), p.tokens.flat().begin());
  return {raw.image_id, raw.species, EmbeddingKind::dct64, to_f32(dct_coefficients(p))};
}

inline std::vector<std::uint8_t> encode_embedding_shard(EmbeddingKind kind, std::span<const EmbeddingRecord> records) {
  const std::size_t dim = embedding_dim(kind);
  io::ByteWriter w;
  w.text("EMB1");
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  w.u8(static_cast<std::uint8_t>(kind));
  for (const auto& r : records) {
    if (r.kind != kind || r.values.size() != dim) {
      throw Error("embedding shard: record '" + r.image_id + "' is " + to_string(r.kind) + "/" +
                  std::to_string(r.values.size()) + ", shard is " + to_string(kind));
    }
    w.short_string(r.image_id);
    w.u8(r.species ? 1 : 0);
    if (r.species) w.u64(r.species->value);
    for (float v : r.values) {
      if (!std::isfinite(v)) throw Error("embedding shard: record '" + r.image_id + "' has a non-finite value");
      w.f32(v);
    }
  }
  return w.take();
}

/// Parses and validates an EMB1 shard: magic, kind/dim agreement, finite
/// values, no trailing bytes.
inline EmbeddingShard decode_embedding_shard(std::span<const std::uint8_t> data,
                                             const std::string& context = "embedding shard") {
  io::ByteReader r(data, context);
  r.expect_magic("EMB1");
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  const std::uint8_t kind_byte = r.u8();
  if (kind_byte > 2) r.fail("unknown kind byte " + std::to_string(kind_byte));
  EmbeddingShard shard;
  shard.kind = static_cast<EmbeddingKind>(kind_byte);
  if (dim != embedding_dim(shard.kind)) {
    r.fail("dim " + std::to_string(dim) + " does not match kind " + to_string(shard.kind));
  }
  shard.records.reserve(std::min<std::size_t>(count, r.remaining() / (4 * dim + 3)));
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.kind = shard.kind;
    rec.image_id = r.short_string();
    const std::uint8_t has_label = r.u8();
    if (has_label > 1) r.fail("has_label must be 0 or 1");
    if (has_label) rec.species = SpeciesId{r.u64()};
    rec.values.resize(dim);
    for (float& v : rec.values) {
      v = r.f32();
      if (!std::isfinite(v)) r.fail("record '" + rec.image_id + "' has a non-finite value");
    }
    shard.records.push_back(std::move(rec));
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  return shard;
}

inline void write_embedding_shard(const std::filesystem::path& path, EmbeddingKind kind,
                                  std::span<const EmbeddingRecord> records) {
  io::write_file_atomic(path, encode_embedding_shard(kind, records));
}

inline EmbeddingShard read_embedding_shard(const std::filesystem::path& path) {
  return decode_embedding_shard(io::read_file(path), path.string());
}

}  // namespace plotgrid
