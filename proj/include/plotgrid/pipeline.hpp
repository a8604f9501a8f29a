#pragma once

// Stage implementations shared by the CLI subcommands, and the `run`
// orchestrator: collage -> preprocess -> embed -> train -> infer -> evaluate
// -> submit, with content-hash staleness checks.

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "plotgrid/classifier.hpp"
#include "plotgrid/collage.hpp"
#include "plotgrid/core.hpp"
#include "plotgrid/features.hpp"
#include "plotgrid/inference.hpp"
#include "plotgrid/io.hpp"
#include "plotgrid/metrics.hpp"
#include "plotgrid/parallel.hpp"
#include "plotgrid/png_io.hpp"
#include "plotgrid/preprocess.hpp"
#include "plotgrid/submission.hpp"

namespace plotgrid {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Content hashing

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::uint8_t> data) {
    EVP_DigestUpdate(ctx_, data.data(), data.size());
    return *this;
  }
  Sha256& update(std::string_view s) {
    return update({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, digest, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

/// Hash of a file's bytes, or of every file under a directory (relative
/// paths and contents, sorted by path).
inline std::string content_hash(const fs::path& path) {
  Sha256 h;
  if (fs::is_regular_file(path)) {
    h.update(io::read_file(path));
    return h.hex();
  }
  if (!fs::is_directory(path)) throw Error("cannot hash missing path '" + path.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, path).generic_string();
    h.update(rel).update(std::string_view("\0", 1));
    const auto bytes = io::read_file(f);
    h.update(std::to_string(bytes.size())).update(bytes);
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Stages

struct PreprocessOptions {
  std::uint32_t side = kProcessedSide;
  std::uint64_t min_count = kDefaultMinImages;
  std::size_t shard_size = 1024;
};

struct PreprocessSummary {
  std::size_t inputs = 0;
  std::size_t written = 0;
  std::size_t unlabeled_skipped = 0;
  SpeciesCatalog catalog;
};

/// Reads images from a directory (PNG tree and/or IMG1 shards) or a single
/// IMG1 file.
inline std::vector<ImageRecord> load_images(const fs::path& input) {
  if (fs::is_regular_file(input)) return load_shard(input);
  return load_image_directory(input);
}

/// Crop + resize labeled images, drop species below min_count, write
/// part-NNNNN.img1 shards and catalog.csv into `out_dir`.
inline PreprocessSummary preprocess_images(const fs::path& input, const fs::path& out_dir,
                                           const PreprocessOptions& opt, std::size_t workers) {
  if (opt.side == 0) throw Error("preprocess: side must be positive");
  auto records = load_images(input);
  PreprocessSummary summary;
  summary.inputs = records.size();

  std::vector<ImageRecord> labeled;
  for (auto& r : records) {
    if (r.species) labeled.push_back(std::move(r));
    else ++summary.unlabeled_skipped;
  }
  summary.catalog = filter_min_images(build_catalog(labeled), opt.min_count);

  std::vector<ImageRecord> kept;
  for (auto& r : labeled) {
    if (summary.catalog.contains(*r.species)) kept.push_back(std::move(r));
  }
  std::vector<ImageRecord> processed(kept.size());
  parallel_for(kept.size(), workers, [&](std::size_t i) { processed[i] = normalize_image(kept[i], opt.side); });

  fs::create_directories(out_dir);
  const std::size_t shard_size = std::max<std::size_t>(opt.shard_size, 1);
  for (std::size_t start = 0, part = 0; start < processed.size(); start += shard_size, ++part) {
    const std::size_t n = std::min(shard_size, processed.size() - start);
    pack_shard(std::span<const ImageRecord>(processed).subspan(start, n),
               out_dir / ("part-" + detail::padded(part, 5) + ".img1"));
  }
  io::write_text_file(out_dir / "catalog.csv", summary.catalog.to_csv());
  summary.written = processed.size();
  return summary;
}

enum class ExtractorKind { toy, external };

inline ExtractorKind parse_extractor_kind(std::string_view s) {
  if (s == "toy") return ExtractorKind::toy;
  if (s == "external") return ExtractorKind::external;
  throw Error("unknown extractor '" + std::string(s) + "' (expected toy or external)");
}

struct EmbedOptions {
  EmbeddingKind kind = EmbeddingKind::cls768;
  ExtractorKind extractor = ExtractorKind::toy;
  std::uint64_t seed = 7;
};

/// toy: every IMG1 shard in `input` becomes an EMB1 shard with the same stem.
/// external: EMB1 shards from the exporter are validated and reduced to the
/// requested kind (raw tokens -> dct64, cls768 passed through).
inline std::size_t embed_shards(const fs::path& input, const fs::path& out_dir, const EmbedOptions& opt,
                                std::size_t workers) {
  if (opt.kind == EmbeddingKind::raw_tokens) throw Error("embed: output kind must be dct64 or cls768");
  fs::create_directories(out_dir);
  std::size_t total = 0;
  if (opt.extractor == ExtractorKind::toy) {
    const ToyFeatureExtractor extractor(opt.seed, opt.kind);
    const auto shards = fs::is_regular_file(input) ? std::vector<fs::path>{input} : io::list_files(input, ".img1");
    for (const auto& shard : shards) {
      const auto images = load_shard(shard);
      std::vector<EmbeddingRecord> out(images.size());
      parallel_for(images.size(), workers, [&](std::size_t i) {
        out[i] = {images[i].image_id, images[i].species, opt.kind, extractor(images[i])};
      });
      write_embedding_shard(out_dir / (shard.stem().string() + ".emb1"), opt.kind, out);
      total += out.size();
    }
    return total;
  }
  const auto shards = fs::is_regular_file(input) ? std::vector<fs::path>{input} : io::list_files(input, ".emb1");
  for (const auto& shard_path : shards) {
    auto shard = read_embedding_shard(shard_path);
    std::vector<EmbeddingRecord> out(shard.records.size());
    if (shard.kind == opt.kind) {
      out = std::move(shard.records);
    } else if (shard.kind == EmbeddingKind::raw_tokens && opt.kind == EmbeddingKind::dct64) {
      parallel_for(out.size(), workers, [&](std::size_t i) { out[i] = dct_from_raw_tokens(shard.records[i]); });
    } else {
      throw Error("embed: shard '" + shard_path.string() + "' holds " + to_string(shard.kind) +
                  " records, cannot produce " + to_string(opt.kind));
    }
    write_embedding_shard(out_dir / (shard_path.stem().string() + ".emb1"), opt.kind, out);
    total += out.size();
  }
  return total;
}

inline std::vector<EmbeddingRecord> load_embeddings(const fs::path& input) {
  std::vector<EmbeddingRecord> all;
  const auto shards = fs::is_regular_file(input) ? std::vector<fs::path>{input} : io::list_files(input, ".emb1");
  for (const auto& p : shards) {
    auto shard = read_embedding_shard(p);
    std::move(shard.records.begin(), shard.records.end(), std::back_inserter(all));
  }
  return all;
}

inline TrainResult<float> train_from_files(const fs::path& embeddings, const fs::path& catalog_csv,
                                           const fs::path& model_out, const TrainConfig& cfg) {
  const auto catalog = SpeciesCatalog::from_csv(io::read_text_file(catalog_csv));
  if (catalog.empty()) throw Error("empty catalog");
  const auto records = load_embeddings(embeddings);
  auto result = train(records, catalog, cfg);
  write_model(model_out, result.model);
  return result;
}

inline std::vector<PredictionSet> infer_images(const LinearModel& model, const fs::path& images,
                                               const InferenceConfig& cfg, std::uint64_t seed, std::size_t workers) {
  if (cfg.mode == InferenceMode::grid_topk) cfg.validate(model.classes());
  const auto plots = load_images(images);
  const ToyFeatureExtractor extractor(seed, model.input_kind);
  std::vector<PredictionSet> preds(plots.size());
  parallel_for(plots.size(), workers,
               [&](std::size_t i) { preds[i] = predict_plot(model, plots[i], extractor, cfg); });
  return preds;
}

inline MetricsReport evaluate_files(const fs::path& pred, const fs::path& truth, const fs::path& report_out) {
  const auto preds = read_predictions(pred);
  const auto truths = parse_truth_csv(io::read_text_file(truth));
  auto report = evaluate(preds, truths);
  io::write_text_file(report_out, report_to_json(report).dump(2) + "\n");
  return report;
}

inline void submit_file(const fs::path& pred, const fs::path& out_csv, std::size_t cap) {
  io::write_text_file(out_csv, format_submission(read_predictions(pred), cap));
}

// ---------------------------------------------------------------------------
// Pipeline configuration

struct PipelineConfig {
  fs::path work_dir = "work";
  std::size_t workers = 0;  // 0: PLOTGRID_WORKERS or hardware concurrency

  std::optional<CollageSpec> collage;

  fs::path preprocess_input;
  PreprocessOptions preprocess;

  EmbedOptions embed;
  fs::path external_embeddings;  // EMB1 input when embed.extractor == external

  TrainConfig train;

  fs::path infer_images;
  InferenceConfig infer;

  fs::path truth;
  std::size_t submission_cap = 20;

  std::size_t resolved_workers() const { return workers > 0 ? workers : default_workers(); }
};

namespace detail {

using boost::property_tree::ptree;

template <typename T>
T ini_get(const ptree& tree, const std::string& key, const T& fallback) {
  try {
    return tree.get<T>(key, fallback);
  } catch (const boost::property_tree::ptree_error& e) {
    throw Error("config key '" + key + "': " + e.what());
  }
}

inline fs::path resolve(const fs::path& base, const std::string& value) {
  if (value.empty()) return {};
  fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

}  // namespace detail

/// INI file with sections [pipeline], [collage], [preprocess], [embed],
/// [train], [infer], [evaluate], [submit]. Relative paths resolve against the
/// config file's directory. Everything is checked before any stage runs.
inline PipelineConfig parse_pipeline_config(std::string_view text, const fs::path& base_dir) {
  using detail::ini_get;
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  static const std::set<std::string> known = {"pipeline", "collage", "preprocess", "embed",
                                              "train",    "infer",   "evaluate",   "submit"};
  for (const auto& [section, _] : tree) {
    if (!known.contains(section)) throw Error("config: unknown section [" + section + "]");
  }

  PipelineConfig cfg;
  cfg.work_dir = detail::resolve(base_dir, ini_get<std::string>(tree, "pipeline.work_dir", "work"));
  cfg.workers = ini_get<std::size_t>(tree, "pipeline.workers", 0);

  fs::path collage_dir;
  if (tree.get_child_optional("collage") && ini_get<bool>(tree, "collage.enabled", true)) {
    CollageSpec spec;
    spec.num_species = ini_get(tree, "collage.num_species", spec.num_species);
    spec.images_per_species = ini_get(tree, "collage.images_per_species", spec.images_per_species);
    spec.plots = ini_get(tree, "collage.plots", spec.plots);
    spec.grid_n = ini_get(tree, "collage.grid", spec.grid_n);
    spec.species_per_plot = ini_get(tree, "collage.species_per_plot", spec.species_per_plot);
    spec.seed = ini_get(tree, "collage.seed", spec.seed);
    spec.validate();
    cfg.collage = spec;
    collage_dir = cfg.work_dir / "collage";
  }

  auto path_or = [&](const std::string& key, const fs::path& fallback) {
    auto p = detail::resolve(base_dir, ini_get<std::string>(tree, key, ""));
    return p.empty() ? fallback : p;
  };

  cfg.preprocess_input = path_or("preprocess.input", collage_dir.empty() ? fs::path{} : collage_dir / "train");
  cfg.preprocess.side = ini_get<std::uint32_t>(tree, "preprocess.side", kProcessedSide);
  cfg.preprocess.min_count = ini_get<std::uint64_t>(tree, "preprocess.min_count", kDefaultMinImages);
  cfg.preprocess.shard_size = ini_get<std::size_t>(tree, "preprocess.shard_size", 1024);

  cfg.embed.kind = parse_embedding_kind(ini_get<std::string>(tree, "embed.kind", "cls768"));
  cfg.embed.extractor = parse_extractor_kind(ini_get<std::string>(tree, "embed.extractor", "toy"));
  cfg.embed.seed = ini_get<std::uint64_t>(tree, "embed.seed", 7);
  cfg.external_embeddings = path_or("embed.input", {});

  cfg.train.learning_rate = ini_get(tree, "train.lr", cfg.train.learning_rate);
  cfg.train.momentum = ini_get(tree, "train.momentum", cfg.train.momentum);
  cfg.train.batch_size = ini_get(tree, "train.batch", cfg.train.batch_size);
  cfg.train.epochs = ini_get(tree, "train.epochs", cfg.train.epochs);
  cfg.train.seed = ini_get(tree, "train.seed", cfg.train.seed);
  cfg.train.weight_init_scale = ini_get(tree, "train.init_scale", cfg.train.weight_init_scale);

  cfg.infer_images = path_or("infer.images", collage_dir.empty() ? fs::path{} : collage_dir / "plots");
  cfg.infer.mode = parse_inference_mode(ini_get<std::string>(tree, "infer.mode", "grid-argmax"));
  cfg.infer.grid_n = ini_get(tree, "infer.grid", cfg.infer.grid_n);
  cfg.infer.top_k = ini_get(tree, "infer.top_k", cfg.infer.top_k);
  cfg.infer.top_l = ini_get(tree, "infer.top_l", cfg.infer.top_l);
  cfg.infer.placement = parse_top_l_placement(ini_get<std::string>(tree, "infer.placement", "per-tile"));

  cfg.truth = path_or("evaluate.truth", collage_dir.empty() ? fs::path{} : collage_dir / "truth.csv");
  cfg.submission_cap = ini_get(tree, "submit.cap", cfg.submission_cap);

  // Fail fast on anything checkable before stage 1.
  cfg.train.validate();
  if (cfg.embed.kind == EmbeddingKind::raw_tokens) throw Error("config: embed.kind must be dct64 or cls768");
  if (cfg.preprocess.side != kProcessedSide && cfg.embed.extractor == ExtractorKind::toy) {
    throw Error("config: the toy extractor needs preprocess.side = 128");
  }
  if (cfg.infer.grid_n == 0 || cfg.infer.top_l == 0 || cfg.infer.top_l > cfg.infer.top_k) {
    throw Error("config: infer needs grid >= 1 and 1 <= top_l <= top_k");
  }
  if (cfg.embed.extractor == ExtractorKind::external) {
    if (cfg.external_embeddings.empty()) throw Error("config: embed.input is required with extractor = external");
  } else if (cfg.preprocess_input.empty()) {
    throw Error("config: preprocess.input is required without a [collage] section");
  }
  if (cfg.infer_images.empty()) throw Error("config: infer.images is required without a [collage] section");
  if (cfg.truth.empty()) throw Error("config: evaluate.truth is required without a [collage] section");
  if (!cfg.collage) {
    for (const auto& p : {cfg.infer_images, cfg.truth}) {
      if (!fs::exists(p)) throw Error("config: path '" + p.string() + "' does not exist");
    }
    if (cfg.embed.extractor == ExtractorKind::toy && !fs::exists(cfg.preprocess_input)) {
      throw Error("config: path '" + cfg.preprocess_input.string() + "' does not exist");
    }
  }
  return cfg;
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  return parse_pipeline_config(io::read_text_file(path), fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Orchestration

struct StageOutcome {
  std::string name;
  bool skipped = false;
};

struct PipelineResult {
  std::vector<StageOutcome> stages;
  std::optional<MetricsReport> report;
};

namespace detail {

struct Stage {
  std::string name;
  std::string params;                // canonical parameter string
  std::vector<fs::path> inputs;      // files or directories, hashed by content
  std::vector<fs::path> outputs;     // removed before a run and on failure
  std::function<void()> run;
};

inline std::string stage_key(const Stage& s) {
  Sha256 h;
  h.update(s.name).update("\n").update(s.params).update("\n");
  for (const auto& in : s.inputs) h.update(content_hash(in)).update("\n");
  return h.hex();
}

inline bool stage_is_fresh(const Stage& s, const std::string& key, const fs::path& stamp) {
  if (!fs::exists(stamp)) return false;
  try {
    const auto j = nlohmann::json::parse(io::read_text_file(stamp));
    if (j.at("key").get<std::string>() != key) return false;
    const auto& outs = j.at("outputs");
    for (const auto& out : s.outputs) {
      if (!fs::exists(out) || !outs.contains(out.string())) return false;
      if (outs.at(out.string()).get<std::string>() != content_hash(out)) return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

inline void write_stamp(const Stage& s, const std::string& key, const fs::path& stamp) {
  nlohmann::ordered_json j;
  j["key"] = key;
  j["outputs"] = nlohmann::ordered_json::object();
  for (const auto& out : s.outputs) j["outputs"][out.string()] = content_hash(out);
  io::write_text_file(stamp, j.dump(2) + "\n");
}

inline std::string describe(const TrainConfig& t) {
  std::ostringstream os;
  os << std::setprecision(17) << "lr=" << t.learning_rate << " momentum=" << t.momentum << " batch=" << t.batch_size
     << " epochs=" << t.epochs << " seed=" << t.seed << " init=" << t.weight_init_scale;
  return os.str();
}

}  // namespace detail

/// Runs every stage in order. A stage is skipped when its stamp records the
/// same parameter+input content hash and its outputs still hash to the
/// recorded values. A failing stage has its outputs removed and aborts the
/// run with the stage name in the message.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, std::ostream& log) {
  const fs::path work = cfg.work_dir;
  const fs::path stamps = work / ".stamps";
  fs::create_directories(stamps);
  const std::size_t workers = cfg.resolved_workers();

  const fs::path shard_dir = work / "shards";
  const fs::path emb_dir = work / "embeddings";
  const fs::path model_path = work / "model.lin1";
  const fs::path pred_path = work / "predictions.jsonl";
  const fs::path report_path = work / "report.json";
  const fs::path submission_path = work / "submission.csv";

  PipelineResult result;
  std::vector<detail::Stage> stages;

  if (cfg.collage) {
    const auto& c = *cfg.collage;
    const fs::path collage_dir = work / "collage";
    stages.push_back({"make-collage",
                      "species=" + std::to_string(c.num_species) + " per=" + std::to_string(c.images_per_species) +
                          " plots=" + std::to_string(c.plots) + " grid=" + std::to_string(c.grid_n) +
                          " spp=" + std::to_string(c.species_per_plot) + " seed=" + std::to_string(c.seed),
                      {},
                      {collage_dir},
                      [c, collage_dir] { write_collage(make_collage_dataset(c), collage_dir); }});
  }

  if (cfg.embed.extractor == ExtractorKind::toy) {
    stages.push_back({"preprocess",
                      "side=" + std::to_string(cfg.preprocess.side) + " min=" + std::to_string(cfg.preprocess.min_count) +
                          " shard=" + std::to_string(cfg.preprocess.shard_size),
                      {cfg.preprocess_input},
                      {shard_dir},
                      [&] {
                        auto s = preprocess_images(cfg.preprocess_input, shard_dir, cfg.preprocess, workers);
                        log << "  " << s.written << " images, " << s.catalog.size() << " species retained\n";
                      }});
    stages.push_back({"embed",
                      "kind=" + to_string(cfg.embed.kind) + " extractor=toy seed=" + std::to_string(cfg.embed.seed),
                      {shard_dir},
                      {emb_dir},
                      [&] { embed_shards(shard_dir, emb_dir, cfg.embed, workers); }});
  } else {
    stages.push_back({"embed",
                      "kind=" + to_string(cfg.embed.kind) + " extractor=external",
                      {cfg.external_embeddings},
                      {emb_dir},
                      [&] {
                        embed_shards(cfg.external_embeddings, emb_dir, cfg.embed, workers);
                        // Catalog comes from the labels present in the exported records.
                        auto records = load_embeddings(emb_dir);
                        std::vector<ImageRecord> labels;
                        for (const auto& r : records) labels.push_back({r.image_id, r.species, {}});
                        auto catalog = filter_min_images(build_catalog(labels), cfg.preprocess.min_count);
                        fs::create_directories(shard_dir);
                        io::write_text_file(shard_dir / "catalog.csv", catalog.to_csv());
                      }});
  }

  stages.push_back({"train",
                    detail::describe(cfg.train),
                    {emb_dir, shard_dir / "catalog.csv"},
                    {model_path},
                    [&] {
                      auto r = train_from_files(emb_dir, shard_dir / "catalog.csv", model_path, cfg.train);
                      log << "  loss " << r.initial_loss << " -> " << r.loss_trace.back() << "\n";
                    }});

  std::ostringstream infer_params;
  infer_params << "mode=" << static_cast<int>(cfg.infer.mode) << " grid=" << cfg.infer.grid_n
               << " k=" << cfg.infer.top_k << " l=" << cfg.infer.top_l
               << " placement=" << static_cast<int>(cfg.infer.placement) << " seed=" << cfg.embed.seed;
  stages.push_back({"infer",
                    infer_params.str(),
                    {model_path, cfg.infer_images},
                    {pred_path},
                    [&] {
                      const auto model = read_model(model_path);
                      write_predictions(pred_path, infer_images(model, cfg.infer_images, cfg.infer, cfg.embed.seed, workers));
                    }});
  stages.push_back({"evaluate", "", {pred_path, cfg.truth}, {report_path}, [&] {
                      result.report = evaluate_files(pred_path, cfg.truth, report_path);
                    }});
  stages.push_back({"submit", "cap=" + std::to_string(cfg.submission_cap), {pred_path}, {submission_path},
                    [&] { submit_file(pred_path, submission_path, cfg.submission_cap); }});

  for (const auto& stage : stages) {
    const fs::path stamp = stamps / (stage.name + ".json");
    try {
      const std::string key = detail::stage_key(stage);
      if (detail::stage_is_fresh(stage, key, stamp)) {
        log << "[" << stage.name << "] up to date, skipped\n";
        result.stages.push_back({stage.name, true});
        continue;
      }
      log << "[" << stage.name << "] running\n";
      for (const auto& out : stage.outputs) fs::remove_all(out);
      fs::remove(stamp);
      stage.run();
      detail::write_stamp(stage, key, stamp);
      result.stages.push_back({stage.name, false});
    } catch (const std::exception& e) {
      std::error_code ignore;
      for (const auto& out : stage.outputs) fs::remove_all(out, ignore);
      fs::remove(stamp, ignore);
      throw Error("stage '" + stage.name + "' failed: " + e.what());
    }
  }
  if (!result.report && fs::exists(report_path)) {
    result.report = evaluate(read_predictions(pred_path), parse_truth_csv(io::read_text_file(cfg.truth)));
  }
  return result;
}

}  // namespace plotgrid
