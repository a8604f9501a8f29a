#pragma once

// Single-layer linear classifier trained with mean negative log-likelihood by
// minibatch SGD with momentum. Templated on the scalar so the gradient can be
// checked in double while training runs in float.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "plotgrid/core.hpp"
#include "plotgrid/features.hpp"
#include "plotgrid/io.hpp"
#include "plotgrid/parallel.hpp"
#include "plotgrid/random.hpp"

namespace plotgrid {

template <std::floating_point T>
struct BasicLinearModel {
  DenseMatrix<T> weights;  // C x D
  std::vector<T> bias;     // C
  SpeciesCatalog catalog;
  EmbeddingKind input_kind = EmbeddingKind::cls768;

  std::size_t classes() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }

  friend bool operator==(const BasicLinearModel&, const BasicLinearModel&) = default;
};

using LinearModel = BasicLinearModel<float>;

template <std::floating_point T>
BasicLinearModel<T> zero_model(const SpeciesCatalog& catalog, EmbeddingKind kind) {
  const std::size_t c = catalog.size(), d = embedding_dim(kind);
  return {DenseMatrix<T>(c, d), std::vector<T>(c, T{0}), catalog, kind};
}

/// log(softmax(x)) with max subtraction.
template <std::floating_point T>
std::vector<T> log_softmax(std::span<const T> logits) {
  if (logits.empty()) throw Error("log_softmax: empty input");
  T peak = -std::numeric_limits<T>::infinity();
  for (T v : logits) {
    if (!std::isfinite(v)) throw Error("log_softmax: non-finite logit");
    peak = std::max(peak, v);
  }
  T sum = 0;
  for (T v : logits) sum += std::exp(v - peak);
  const T log_norm = peak + std::log(sum);
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
  return out;
}

template <std::floating_point T>
T nll_loss(std::span<const T> log_probs, ClassIndex label) {
  if (label >= log_probs.size()) {
    throw Error("nll_loss: label " + std::to_string(label) + " out of range [0, " +
                std::to_string(log_probs.size()) + ")");
  }
  return -log_probs[label];
}

template <std::floating_point T>
std::vector<T> logits(const BasicLinearModel<T>& model, std::span<const T> x) {
  if (x.size() != model.dim()) {
    throw Error("dimension mismatch: model expects " + std::to_string(model.dim()) + ", got " +
                std::to_string(x.size()));
  }
  std::vector<T> z(model.bias);
  for (std::size_t c = 0; c < model.classes(); ++c) {
    auto w = model.weights.row(c);
    T acc = 0;
    for (std::size_t d = 0; d < x.size(); ++d) acc += w[d] * x[d];
    z[c] += acc;
  }
  return z;
}

template <std::floating_point T>
std::vector<T> predict_log_probs(const BasicLinearModel<T>& model, std::span<const T> x) {
  auto z = logits(model, x);
  return log_softmax<T>(z);
}

template <std::floating_point T>
ClassIndex argmax(std::span<const T> values) {
  ClassIndex best = 0;
  for (ClassIndex i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

template <std::floating_point T>
struct LabeledSample {
  std::span<const T> features;
  ClassIndex label;
};

template <std::floating_point T>
struct Gradient {
  DenseMatrix<T> weights;
  std::vector<T> bias;
  double loss = 0.0;  // mean NLL over the batch

  Gradient() = default;
  Gradient(std::size_t c, std::size_t d) : weights(c, d), bias(c, T{0}) {}

  void add(const Gradient& other) {
    auto dst = weights.flat();
    auto src = other.weights.flat();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += other.bias[i];
    loss += other.loss;
  }
};

/// Samples per partial sum. Partials are combined by a fixed pairwise tree,
/// so the result is bit-identical for any worker count.
inline constexpr std::size_t kGradientChunk = 16;

/// Analytic gradient of the mean NLL over `batch`.
template <std::floating_point T>
Gradient<T> gradient(const BasicLinearModel<T>& model, std::span<const LabeledSample<T>> batch,
                     std::size_t workers = 1) {
  if (batch.empty()) throw Error("gradient: empty batch");
  const std::size_t C = model.classes(), D = model.dim();
  for (const auto& s : batch) {
    if (s.features.size() != D) {
      throw Error("gradient: dimension mismatch, model expects " + std::to_string(D) + ", got " +
                  std::to_string(s.features.size()));
    }
    if (s.label >= C) throw Error("gradient: label " + std::to_string(s.label) + " out of range");
  }

  const std::size_t chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
  std::vector<Gradient<T>> partial(chunks, Gradient<T>(C, D));
  parallel_for(chunks, workers, [&](std::size_t k) {
    Gradient<T>& g = partial[k];
    const std::size_t end = std::min(batch.size(), (k + 1) * kGradientChunk);
    for (std::size_t i = k * kGradientChunk; i < end; ++i) {
      const auto& s = batch[i];
      auto lp = predict_log_probs(model, s.features);
      g.loss += static_cast<double>(nll_loss<T>(lp, s.label));
      for (std::size_t c = 0; c < C; ++c) {
        const T delta = std::exp(lp[c]) - (c == s.label ? T{1} : T{0});
        g.bias[c] += delta;
        auto row = g.weights.row(c);
        for (std::size_t d = 0; d < D; ++d) row[d] += delta * s.features[d];
      }
    }
  });

  for (std::size_t stride = 1; stride < chunks; stride *= 2) {
    for (std::size_t i = 0; i + stride < chunks; i += 2 * stride) partial[i].add(partial[i + stride]);
  }
  Gradient<T> g = std::move(partial.front());
  const T inv = T{1} / static_cast<T>(batch.size());
  for (T& v : g.weights.flat()) v *= inv;
  for (T& v : g.bias) v *= inv;
  g.loss /= static_cast<double>(batch.size());
  return g;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  std::uint64_t seed = 7;
  double weight_init_scale = 1.0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw Error("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
    if (batch_size == 0) throw Error("batch_size must be positive");
    if (epochs == 0) throw Error("epochs must be positive");
    if (!(weight_init_scale > 0.0) || !std::isfinite(weight_init_scale)) {
      throw Error("weight_init_scale must be positive");
    }
  }
};

/// Dense design matrix plus class-index labels.
template <std::floating_point T>
struct TrainingSet {
  DenseMatrix<T> features;  // N x D
  std::vector<ClassIndex> labels;

  std::size_t size() const { return labels.size(); }
};

template <std::floating_point T>
struct TrainResult {
  BasicLinearModel<T> model;
  double initial_loss = 0.0;
  std::vector<double> loss_trace;  // full-data mean NLL after each epoch
};

/// Mean NLL over the whole set, reduced in double.
template <std::floating_point T>
double dataset_loss(const BasicLinearModel<T>& model, const TrainingSet<T>& set) {
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto lp = predict_log_probs(model, set.features.row(i));
    total += static_cast<double>(nll_loss<T>(lp, set.labels[i]));
  }
  return total / static_cast<double>(set.size());
}

template <std::floating_point T>
double accuracy(const BasicLinearModel<T>& model, const TrainingSet<T>& set) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto z = logits(model, set.features.row(i));
    correct += argmax<T>(z) == set.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

/// Minibatch SGD with momentum (v <- m v + g; w <- w - lr v). Weights start
/// uniform in [-s, s], s = weight_init_scale / sqrt(D); bias starts at zero.
/// Shuffling and init are driven by cfg.seed only.
template <std::floating_point T>
TrainResult<T> train(const TrainingSet<T>& set, const SpeciesCatalog& catalog, EmbeddingKind kind,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (catalog.empty()) throw Error("empty catalog");
  if (set.size() == 0) throw Error("train: empty data");
  const std::size_t C = catalog.size(), D = set.features.cols();
  if (D != embedding_dim(kind)) {
    throw Error("train: features have dim " + std::to_string(D) + ", kind " + to_string(kind) + " needs " +
                std::to_string(embedding_dim(kind)));
  }
  for (ClassIndex label : set.labels) {
    if (label >= C) throw Error("train: label " + std::to_string(label) + " out of range");
  }

  Rng rng(cfg.seed);
  TrainResult<T> result{zero_model<T>(catalog, kind), 0.0, {}};
  auto& model = result.model;
  const double bound = cfg.weight_init_scale / std::sqrt(static_cast<double>(D));
  for (T& w : model.weights.flat()) w = static_cast<T>(rng.uniform(-bound, bound));

  DenseMatrix<T> velocity_w(C, D);
  std::vector<T> velocity_b(C, T{0});
  const T lr = static_cast<T>(cfg.learning_rate);
  const T mu = static_cast<T>(cfg.momentum);

  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<LabeledSample<T>> batch;
  batch.reserve(cfg.batch_size);

  result.initial_loss = dataset_loss(model, set);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back({set.features.row(order[i]), set.labels[order[i]]});
      const auto g = gradient<T>(model, batch);

      auto vw = velocity_w.flat();
      auto gw = g.weights.flat();
      auto w = model.weights.flat();
      for (std::size_t i = 0; i < w.size(); ++i) {
        vw[i] = mu * vw[i] + gw[i];
        w[i] -= lr * vw[i];
      }
      for (std::size_t c = 0; c < C; ++c) {
        velocity_b[c] = mu * velocity_b[c] + g.bias[c];
        model.bias[c] -= lr * velocity_b[c];
      }
    }
    result.loss_trace.push_back(dataset_loss(model, set));
  }
  for (T w : model.weights.flat()) {
    if (!std::isfinite(w)) throw Error("train: parameters diverged (non-finite weight)");
  }
  return result;
}

/// Collects labeled embedding records into a training set. Every record must
/// match `kind`, carry a label and belong to the catalog.
inline TrainingSet<float> make_training_set(std::span<const EmbeddingRecord> records, const SpeciesCatalog& catalog,
                                            EmbeddingKind kind) {
  if (catalog.empty()) throw Error("empty catalog");
  if (records.empty()) throw Error("train: empty data");
  const std::size_t D = embedding_dim(kind);
  TrainingSet<float> set{DenseMatrix<float>(records.size(), D), {}};
  set.labels.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.kind != kind || r.values.size() != D) {
      throw Error("train: record '" + r.image_id + "' is " + to_string(r.kind) + ", expected " + to_string(kind));
    }
    if (!r.species) throw Error("train: record '" + r.image_id + "' has no label");
    if (!catalog.contains(*r.species)) {
      throw LookupError("train: record '" + r.image_id + "' has unknown species " + to_string(*r.species));
    }
    set.labels.push_back(catalog.encode(*r.species));
    std::copy(r.values.begin(), r.values.end(), set.features.row(i).begin());
  }
  return set;
}

inline TrainResult<float> train(std::span<const EmbeddingRecord> records, const SpeciesCatalog& catalog,
                                const TrainConfig& cfg) {
  if (catalog.empty()) throw Error("empty catalog");
  if (records.empty()) throw Error("train: empty data");
  const EmbeddingKind kind = records.front().kind;
  if (kind == EmbeddingKind::raw_tokens) throw Error("train: raw token records must be reduced with embed first");
  return train(make_training_set(records, catalog, kind), catalog, kind, cfg);
}

// LIN1 model file: magic, u32 C, u32 D, u8 kind, C*D f32 weights, C f32
// bias, u32 length + catalog CSV.

inline std::vector<std::uint8_t> encode_model(const LinearModel& model) {
  if (model.classes() != model.catalog.size() || model.bias.size() != model.classes()) {
    throw Error("model: parameter shapes do not match the catalog");
  }
  io::ByteWriter w;
  w.text("LIN1");
  w.u32(static_cast<std::uint32_t>(model.classes()));
  w.u32(static_cast<std::uint32_t>(model.dim()));
  w.u8(static_cast<std::uint8_t>(model.input_kind));
  for (float v : model.weights.flat()) w.f32(v);
  for (float v : model.bias) w.f32(v);
  const std::string csv = model.catalog.to_csv();
  w.u32(static_cast<std::uint32_t>(csv.size()));
  w.text(csv);
  return w.take();
}

inline LinearModel decode_model(std::span<const std::uint8_t> data, const std::string& context = "model") {
  io::ByteReader r(data, context);
  r.expect_magic("LIN1");
  const std::uint32_t C = r.u32();
  const std::uint32_t D = r.u32();
  const std::uint8_t kind = r.u8();
  if (kind > 1) r.fail("input kind must be dct64 (0) or cls768 (1)");
  LinearModel model;
  model.input_kind = static_cast<EmbeddingKind>(kind);
  if (D != embedding_dim(model.input_kind)) r.fail("dim does not match input kind");
  model.weights = DenseMatrix<float>(C, D);
  for (float& v : model.weights.flat()) v = r.f32();
  model.bias.resize(C);
  for (float& v : model.bias) v = r.f32();
  model.catalog = SpeciesCatalog::from_csv(r.text(r.u32()));
  if (model.catalog.size() != C) r.fail("embedded catalog has " + std::to_string(model.catalog.size()) + " species, expected " + std::to_string(C));
  if (!r.at_end()) r.fail("trailing bytes");
  return model;
}

inline void write_model(const std::filesystem::path& path, const LinearModel& model) {
  io::write_file_atomic(path, encode_model(model));
}

inline LinearModel read_model(const std::filesystem::path& path) {
  return decode_model(io::read_file(path), path.string());
}

}  // namespace plotgrid
