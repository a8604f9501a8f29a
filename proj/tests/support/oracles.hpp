#pragma once

// Test-only data generators and independent reference implementations.

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "plotgrid/classifier.hpp"
#include "plotgrid/inference.hpp"
#include "plotgrid/random.hpp"

namespace plotgrid::testing {

/// Gaussian blobs: `classes` centers at 2.5*sigma times a random sign
/// vector, so any two centers differ by 0 or 5 sigma per coordinate.
inline TrainingSet<float> gaussian_blobs(std::size_t classes, std::size_t dim, std::size_t per_class,
                                         double sigma, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix<double> centers(classes, dim);
  for (double& v : centers.flat()) v = (rng.below(2) ? 2.5 : -2.5) * sigma;
  TrainingSet<float> set{DenseMatrix<float>(classes * per_class, dim), {}};
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      auto row = set.features.row(c * per_class + i);
      for (std::size_t d = 0; d < dim; ++d) row[d] = static_cast<float>(centers(c, d) + sigma * rng.normal());
      set.labels.push_back(c);
    }
  }
  return set;
}

/// Accuracy of classifying every sample by its nearest class centroid.
inline double nearest_centroid_accuracy(const TrainingSet<float>& set, std::size_t classes) {
  const std::size_t dim = set.features.cols();
  std::vector<std::vector<double>> centroid(classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    ++count[set.labels[i]];
    for (std::size_t d = 0; d < dim; ++d) centroid[set.labels[i]][d] += set.features(i, d);
  }
  for (std::size_t c = 0; c < classes; ++c)
    for (double& v : centroid[c]) v /= static_cast<double>(std::max<std::size_t>(count[c], 1));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      double dist = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dist += std::pow(set.features(i, d) - centroid[c][d], 2);
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    correct += best == set.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

/// Mean NLL evaluated directly in long double.
inline long double reference_loss(const BasicLinearModel<double>& m, const std::vector<std::vector<double>>& xs,
                                  const std::vector<ClassIndex>& ys) {
  long double total = 0;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    std::vector<long double> z(m.classes());
    for (std::size_t c = 0; c < m.classes(); ++c) {
      long double acc = m.bias[c];
      for (std::size_t d = 0; d < m.dim(); ++d) acc += static_cast<long double>(m.weights(c, d)) * xs[n][d];
      z[c] = acc;
    }
    long double sum = 0;
    for (auto v : z) sum += std::exp(v);
    total += std::log(sum) - z[ys[n]];
  }
  return total / static_cast<long double>(xs.size());
}

/// Central differences (step h) of the mean NLL against plotgrid::gradient,
/// relative error = |a - n|_2 / max(|a|_2, |n|_2).
template <std::floating_point T>
double gradient_relative_error(Rng& rng, std::size_t C, std::size_t D, std::size_t batch, double h) {
  BasicLinearModel<T> model;
  model.weights = DenseMatrix<T>(C, D);
  model.bias.assign(C, T{0});
  for (T& w : model.weights.flat()) w = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (T& b : model.bias) b = static_cast<T>(rng.uniform(-1.0, 1.0));
  std::vector<std::vector<T>> xs(batch, std::vector<T>(D));
  std::vector<ClassIndex> ys(batch);
  std::vector<LabeledSample<T>> samples;
  for (std::size_t n = 0; n < batch; ++n) {
    for (T& v : xs[n]) v = static_cast<T>(rng.uniform(-2.0, 2.0));
    ys[n] = rng.below(C);
  }
  for (std::size_t n = 0; n < batch; ++n) samples.push_back({xs[n], ys[n]});

  const auto analytic = gradient<T>(model, samples);

  // Independent loss in double precision regardless of T.
  auto loss_at = [&](const BasicLinearModel<T>& m) {
    double total = 0;
    for (std::size_t n = 0; n < batch; ++n) {
      std::vector<double> z(C);
      double peak = -1e300;
      for (std::size_t c = 0; c < C; ++c) {
        double acc = m.bias[c];
        for (std::size_t d = 0; d < D; ++d) acc += static_cast<double>(m.weights(c, d)) * xs[n][d];
        z[c] = acc;
        peak = std::max(peak, acc);
      }
      double sum = 0;
      for (double v : z) sum += std::exp(v - peak);
      total += peak + std::log(sum) - z[ys[n]];
    }
    return total / static_cast<double>(batch);
  };

  double diff2 = 0, a2 = 0, n2 = 0;
  for (std::size_t i = 0; i < C * D + C; ++i) {
    auto plus = model, minus = model;
    T* p_plus = i < C * D ? &plus.weights.flat()[i] : &plus.bias[i - C * D];
    T* p_minus = i < C * D ? &minus.weights.flat()[i] : &minus.bias[i - C * D];
    *p_plus += static_cast<T>(h);
    *p_minus -= static_cast<T>(h);
    // Use the actually-representable step.
    const double step = static_cast<double>(*p_plus) - static_cast<double>(*p_minus);
    const double numeric = (loss_at(plus) - loss_at(minus)) / step;
    const double a = i < C * D ? static_cast<double>(analytic.weights.flat()[i])
                               : static_cast<double>(analytic.bias[i - C * D]);
    diff2 += (a - numeric) * (a - numeric);
    a2 += a * a;
    n2 += numeric * numeric;
  }
  const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
  return denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
}

/// Exhaustive top-K/top-L aggregation: every column fully sorted, sliced,
/// unioned, globally sorted, first occurrence kept.
inline std::vector<ScoredSpecies> brute_force_topk(const TileProbabilityMatrix& p, std::size_t k, std::size_t l,
                                                   const SpeciesCatalog& catalog, std::vector<ScoredSpecies>* pre = nullptr) {
  struct Item {
    double score;
    std::size_t cls;
    std::size_t tile;
  };
  std::vector<Item> pool;
  for (std::size_t j = 0; j < p.tiles(); ++j) {
    std::vector<Item> col;
    for (std::size_t i = 0; i < p.classes(); ++i) col.push_back({p.probs(i, j), i, j});
    std::stable_sort(col.begin(), col.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
    col.resize(k);
    col.resize(l);
    pool.insert(pool.end(), col.begin(), col.end());
  }
  std::sort(pool.begin(), pool.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cls != b.cls) return a.cls < b.cls;
    return a.tile < b.tile;
  });
  std::vector<ScoredSpecies> out;
  std::set<std::size_t> seen;
  for (const auto& it : pool) {
    if (pre) pre->push_back({catalog.decode(it.cls), it.score});
    if (seen.insert(it.cls).second) out.push_back({catalog.decode(it.cls), it.score});
  }
  return out;
}

/// Random column-stochastic C x M matrix. With `ties`, probabilities are
/// drawn from a coarse grid so equal scores occur.
inline TileProbabilityMatrix random_tile_matrix(Rng& rng, std::size_t C, std::size_t M, bool ties = false) {
  TileProbabilityMatrix p{DenseMatrix<double>(C, M)};
  for (std::size_t j = 0; j < M; ++j) {
    double sum = 0;
    for (std::size_t i = 0; i < C; ++i) {
      const double v = ties ? static_cast<double>(1 + rng.below(4)) : rng.uniform() + 1e-3;
      p.probs(i, j) = v;
      sum += v;
    }
    for (std::size_t i = 0; i < C; ++i) p.probs(i, j) /= sum;
  }
  return p;
}

inline SpeciesCatalog sequential_catalog(std::size_t C, std::uint64_t first = 100, std::uint64_t step = 3) {
  std::vector<CatalogEntry> entries;
  for (std::size_t i = 0; i < C; ++i) entries.push_back({SpeciesId{first + step * i}, 1});
  return SpeciesCatalog::from_entries(entries);
}

/// Brute-force metric counting: every (plot, species) pair enumerated.
struct MetricOracle {
  double macro_plot = 0, macro_species = 0, micro = 0;
};

inline MetricOracle brute_force_metrics(const std::vector<std::set<std::uint64_t>>& preds,
                                        const std::vector<std::set<std::uint64_t>>& truths) {
  std::set<std::uint64_t> universe;
  for (const auto& s : preds) universe.insert(s.begin(), s.end());
  for (const auto& s : truths) universe.insert(s.begin(), s.end());
  auto f1 = [](double tp, double fp, double fn) {
    const double p = tp + fp == 0 ? 0 : tp / (tp + fp);
    const double r = tp + fn == 0 ? 0 : tp / (tp + fn);
    return p + r == 0 ? 0 : 2 * p * r / (p + r);
  };
  MetricOracle out;
  double TP = 0, FP = 0, FN = 0;
  for (std::size_t n = 0; n < truths.size(); ++n) {
    double tp = 0, fp = 0, fn = 0;
    for (auto s : universe) {
      const bool in_p = preds[n].count(s) > 0, in_t = truths[n].count(s) > 0;
      tp += in_p && in_t;
      fp += in_p && !in_t;
      fn += !in_p && in_t;
    }
    out.macro_plot += f1(tp, fp, fn);
    TP += tp;
    FP += fp;
    FN += fn;
  }
  out.macro_plot = truths.empty() ? 0 : out.macro_plot / truths.size();
  double involved = 0;
  for (auto s : universe) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t n = 0; n < truths.size(); ++n) {
      const bool in_p = preds[n].count(s) > 0, in_t = truths[n].count(s) > 0;
      tp += in_p && in_t;
      fp += in_p && !in_t;
      fn += !in_p && in_t;
    }
    if (tp + fp + fn == 0) continue;
    ++involved;
    out.macro_species += f1(tp, fp, fn);
  }
  out.macro_species = involved == 0 ? 0 : out.macro_species / involved;
  out.micro = 2 * TP + FP + FN == 0 ? 0 : 2 * TP / (2 * TP + FP + FN);
  return out;
}

}  // namespace plotgrid::testing
