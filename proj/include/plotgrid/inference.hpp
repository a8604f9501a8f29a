#pragma once

// Multi-label plot prediction: grid tiling, per-tile scoring, argmax and
// top-K/top-L aggregation, order-preserving deduplication, and the JSONL
// prediction file.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "plotgrid/classifier.hpp"
#include "plotgrid/core.hpp"
#include "plotgrid/features.hpp"
#include "plotgrid/parallel.hpp"
#include "plotgrid/preprocess.hpp"

namespace plotgrid {

enum class InferenceMode { full_image, grid_argmax, grid_topk };

/// Where the top-L cut is applied in grid_topk mode. `per_tile` keeps L
/// entries from every tile before the union; `global` keeps the L best
/// species of the union of per-tile top-K lists.
enum class TopLPlacement { per_tile, global };

inline InferenceMode parse_inference_mode(std::string_view s) {
  if (s == "full") return InferenceMode::full_image;
  if (s == "grid-argmax") return InferenceMode::grid_argmax;
  if (s == "grid-topk") return InferenceMode::grid_topk;
  throw Error("unknown inference mode '" + std::string(s) + "' (expected full, grid-argmax or grid-topk)");
}

inline TopLPlacement parse_top_l_placement(std::string_view s) {
  if (s == "per-tile") return TopLPlacement::per_tile;
  if (s == "global") return TopLPlacement::global;
  throw Error("unknown top-L placement '" + std::string(s) + "' (expected per-tile or global)");
}

struct InferenceConfig {
  std::size_t grid_n = 3;
  std::size_t top_k = 10;
  std::size_t top_l = 5;
  InferenceMode mode = InferenceMode::grid_argmax;
  TopLPlacement placement = TopLPlacement::per_tile;

  void validate(std::size_t classes) const {
    if (grid_n == 0) throw Error("grid size must be at least 1");
    if (top_l == 0 || top_k == 0) throw Error("top-K and top-L must be at least 1");
    if (top_l > top_k) throw Error("top-L (" + std::to_string(top_l) + ") exceeds top-K (" + std::to_string(top_k) + ")");
    if (top_k > classes) {
      throw Error("top-K (" + std::to_string(top_k) + ") exceeds the number of classes (" + std::to_string(classes) + ")");
    }
  }
};

struct ScoredSpecies {
  SpeciesId species;
  double score = 0.0;

  friend bool operator==(const ScoredSpecies&, const ScoredSpecies&) = default;
};

struct PredictionSet {
  std::string plot_id;
  std::vector<ScoredSpecies> ranked;  // unique species, nonincreasing score

  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

/// P(i, j): probability of class i in tile j. Columns are distributions.
struct TileProbabilityMatrix {
  DenseMatrix<double> probs;  // C x M

  std::size_t classes() const { return probs.rows(); }
  std::size_t tiles() const { return probs.cols(); }

  void validate(double tolerance = 1e-5) const {
    if (classes() == 0 || tiles() == 0) throw Error("tile probability matrix is empty");
    for (std::size_t j = 0; j < tiles(); ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < classes(); ++i) {
        const double p = probs(i, j);
        if (!(p >= 0.0 && p <= 1.0)) throw Error("tile probability outside [0, 1] in tile " + std::to_string(j));
        sum += p;
      }
      if (std::abs(sum - 1.0) > tolerance) {
        throw Error("tile " + std::to_string(j) + " probabilities sum to " + std::to_string(sum));
      }
    }
  }
};

/// Splits into an n x n grid, row-major. Tile (r, c) covers rows
/// [floor(rH/n), floor((r+1)H/n)) and the analogous columns, so the tiles
/// partition the image exactly.
inline std::vector<ImageRecord> tile_grid(const ImageRecord& img, std::size_t n) {
  const std::size_t H = img.image.height, W = img.image.width;
  if (n == 0) throw Error("tile_grid: grid size must be at least 1");
  if (H < n || W < n) {
    throw Error("tile_grid: image '" + img.image_id + "' (" + std::to_string(H) + "x" + std::to_string(W) +
                ") is smaller than a " + std::to_string(n) + "x" + std::to_string(n) + " grid");
  }
  std::vector<ImageRecord> tiles;
  tiles.reserve(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t r0 = r * H / n, r1 = (r + 1) * H / n;
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t c0 = c * W / n, c1 = (c + 1) * W / n;
      ImageRecord tile{img.image_id + "#" + std::to_string(r) + "_" + std::to_string(c), img.species,
                       Image(static_cast<std::uint32_t>(r1 - r0), static_cast<std::uint32_t>(c1 - c0))};
      for (std::size_t y = r0; y < r1; ++y) {
        const auto* from = img.image.pixels.data() + (y * W + c0) * 3;
        std::copy(from, from + (c1 - c0) * 3, tile.image.pixels.data() + (y - r0) * (c1 - c0) * 3);
      }
      tiles.push_back(std::move(tile));
    }
  }
  return tiles;
}

/// Anything that maps a processed 128x128 image to a feature vector.
template <typename E>
concept FeatureExtractor = requires(const E& e, const ProcessedImage& img) {
  { e(img) } -> std::convertible_to<std::vector<float>>;
};

/// Toy extractor reduced to one embedding kind.
class ToyFeatureExtractor {
 public:
  ToyFeatureExtractor(std::uint64_t seed, EmbeddingKind kind) : extractor_(seed), kind_(kind) {}

  std::vector<float> operator()(const ProcessedImage& img) const { return toy_features(extractor_, img, kind_); }

  EmbeddingKind kind() const { return kind_; }

 private:
  ToyExtractor extractor_;
  EmbeddingKind kind_;
};

namespace detail {

inline std::vector<double> class_probabilities(const LinearModel& model, std::span<const float> features) {
  const auto lp = predict_log_probs<float>(model, features);
  std::vector<double> p(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(static_cast<double>(lp[i]));
  return p;
}

struct Candidate {
  ClassIndex cls;
  double score;
  std::size_t tile;
};

// Score descending; ties go to the lower class index, then the earlier tile.
inline bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.cls != b.cls) return a.cls < b.cls;
  return a.tile < b.tile;
}

// Indices of the k best entries of column j, best first.
inline std::vector<Candidate> column_top(const TileProbabilityMatrix& p, std::size_t j, std::size_t k) {
  std::vector<Candidate> column(p.classes());
  for (std::size_t i = 0; i < p.classes(); ++i) column[i] = {i, p.probs(i, j), j};
  k = std::min(k, column.size());
  std::partial_sort(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(k), column.end(), ranks_before);
  column.resize(k);
  return column;
}

inline std::vector<ScoredSpecies> to_species(const std::vector<Candidate>& candidates, const SpeciesCatalog& catalog) {
  std::vector<ScoredSpecies> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back({catalog.decode(c.cls), c.score});
  return out;
}

inline void check_catalog(const TileProbabilityMatrix& p, const SpeciesCatalog& catalog) {
  if (p.classes() != catalog.size()) {
    throw Error("tile probability matrix has " + std::to_string(p.classes()) + " classes, catalog has " +
                std::to_string(catalog.size()));
  }
}

}  // namespace detail

/// Embeds and scores every tile. Each tile is normalized (crop + resize to
/// 128x128) first. Column j holds tile j's class probabilities.
template <FeatureExtractor E>
TileProbabilityMatrix score_tiles(const LinearModel& model, std::span<const ImageRecord> tiles, const E& extractor,
                                  std::size_t workers = 1) {
  if (tiles.empty()) throw Error("score_tiles: no tiles");
  TileProbabilityMatrix out{DenseMatrix<double>(model.classes(), tiles.size())};
  parallel_for(tiles.size(), workers, [&](std::size_t j) {
    const auto features = extractor(normalize_image(tiles[j]));
    const auto p = detail::class_probabilities(model, features);
    for (std::size_t i = 0; i < p.size(); ++i) out.probs(i, j) = p[i];
  });
  return out;
}

/// Keeps the first occurrence of each species. Input must already be sorted
/// by nonincreasing score.
inline std::vector<ScoredSpecies> dedup_preserve_order(std::span<const ScoredSpecies> pairs) {
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (pairs[i].score > pairs[i - 1].score) {
      throw Error("dedup_preserve_order: input not sorted by descending score at position " + std::to_string(i));
    }
  }
  std::unordered_set<SpeciesId> seen;
  std::vector<ScoredSpecies> out;
  for (const auto& p : pairs) {
    if (seen.insert(p.species).second) out.push_back(p);
  }
  return out;
}

/// One winner per tile (highest probability, lower class index on ties),
/// ranked by score and deduplicated.
inline PredictionSet aggregate_argmax(const TileProbabilityMatrix& p, const SpeciesCatalog& catalog) {
  detail::check_catalog(p, catalog);
  std::vector<detail::Candidate> winners;
  winners.reserve(p.tiles());
  for (std::size_t j = 0; j < p.tiles(); ++j) {
    detail::Candidate best{0, p.probs(0, j), j};
    for (std::size_t i = 1; i < p.classes(); ++i) {
      if (p.probs(i, j) > best.score) best = {i, p.probs(i, j), j};
    }
    winners.push_back(best);
  }
  std::sort(winners.begin(), winners.end(), detail::ranks_before);
  return {"", dedup_preserve_order(detail::to_species(winners, catalog))};
}

/// Ranked candidates before deduplication. With per-tile placement this is
/// the union of each tile's top-L (taken from its top-K), M*L entries; with
/// global placement it is the union of the per-tile top-K lists.
inline std::vector<ScoredSpecies> topk_candidates(const TileProbabilityMatrix& p, const InferenceConfig& cfg,
                                                  const SpeciesCatalog& catalog) {
  detail::check_catalog(p, catalog);
  cfg.validate(p.classes());
  const std::size_t keep = cfg.placement == TopLPlacement::per_tile ? cfg.top_l : cfg.top_k;
  std::vector<detail::Candidate> all;
  all.reserve(p.tiles() * keep);
  for (std::size_t j = 0; j < p.tiles(); ++j) {
    auto top = detail::column_top(p, j, cfg.top_k);
    top.resize(keep);
    all.insert(all.end(), top.begin(), top.end());
  }
  std::sort(all.begin(), all.end(), detail::ranks_before);
  return detail::to_species(all, catalog);
}

inline PredictionSet aggregate_topk(const TileProbabilityMatrix& p, const InferenceConfig& cfg,
                                    const SpeciesCatalog& catalog) {
  auto ranked = dedup_preserve_order(topk_candidates(p, cfg, catalog));
  if (cfg.placement == TopLPlacement::global && ranked.size() > cfg.top_l) ranked.resize(cfg.top_l);
  return {"", std::move(ranked)};
}

/// Whole image (crop + resize) embedded once; the top_l classes best first.
template <FeatureExtractor E>
PredictionSet predict_full_image(const LinearModel& model, const ImageRecord& img, const E& extractor,
                                 std::size_t top_l) {
  if (top_l == 0 || top_l > model.classes()) {
    throw Error("predict_full_image: top-L " + std::to_string(top_l) + " must lie in [1, " +
                std::to_string(model.classes()) + "]");
  }
  const auto features = extractor(normalize_image(img));
  TileProbabilityMatrix p{DenseMatrix<double>(model.classes(), 1)};
  const auto probs = detail::class_probabilities(model, features);
  for (std::size_t i = 0; i < probs.size(); ++i) p.probs(i, 0) = probs[i];
  auto top = detail::column_top(p, 0, top_l);
  return {img.image_id, detail::to_species(top, model.catalog)};
}

template <FeatureExtractor E>
PredictionSet predict_plot(const LinearModel& model, const ImageRecord& img, const E& extractor,
                           const InferenceConfig& cfg, std::size_t workers = 1) {
  if (cfg.mode == InferenceMode::full_image) return predict_full_image(model, img, extractor, cfg.top_l);
  const auto tiles = tile_grid(img, cfg.grid_n);
  const auto p = score_tiles(model, tiles, extractor, workers);
  PredictionSet out = cfg.mode == InferenceMode::grid_argmax ? aggregate_argmax(p, model.catalog)
                                                             : aggregate_topk(p, cfg, model.catalog);
  out.plot_id = img.image_id;
  return out;
}

// Prediction file: one JSON object per line,
//   {"plot_id": ..., "species": [ids...], "scores": [reals...]}

inline std::string format_predictions(std::span<const PredictionSet> preds) {
  std::string out;
  for (const auto& p : preds) {
    nlohmann::ordered_json line;
    line["plot_id"] = p.plot_id;
    auto species = nlohmann::ordered_json::array();
    auto scores = nlohmann::ordered_json::array();
    for (const auto& s : p.ranked) {
      species.push_back(s.species.value);
      scores.push_back(s.score);
    }
    line["species"] = std::move(species);
    line["scores"] = std::move(scores);
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<PredictionSet> parse_predictions(std::string_view text) {
  std::vector<PredictionSet> out;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty()) continue;
    const std::string where = "predictions line " + std::to_string(i + 1) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionSet p;
      p.plot_id = j.at("plot_id").get<std::string>();
      const auto& species = j.at("species");
      const auto& scores = j.at("scores");
      if (!species.is_array() || !scores.is_array() || species.size() != scores.size()) {
        throw Error("'species' and 'scores' must be arrays of equal length");
      }
      for (std::size_t k = 0; k < species.size(); ++k) {
        p.ranked.push_back({SpeciesId{species[k].get<std::uint64_t>()}, scores[k].get<double>()});
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + e.what());
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
  }
  return out;
}

inline void write_predictions(const std::filesystem::path& path, std::span<const PredictionSet> preds) {
  io::write_text_file(path, format_predictions(preds));
}

inline std::vector<PredictionSet> read_predictions(const std::filesystem::path& path) {
  return parse_predictions(io::read_text_file(path));
}

}  // namespace plotgrid
