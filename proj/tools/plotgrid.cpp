// plotgrid: batch pipeline for embedding-based multi-label plot prediction.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "plotgrid/plotgrid.hpp"

namespace {

using namespace plotgrid;

std::size_t workers_or_default(std::size_t requested) { return requested > 0 ? requested : default_workers(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plotgrid: train linear classifiers on image embeddings and predict plot species"};
  app.require_subcommand(1);
  std::size_t workers = 0;
  app.add_option("--workers", workers, "Worker threads (default: PLOTGRID_WORKERS or hardware concurrency)");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Crop/resize labeled images, filter rare species, write IMG1 shards");
  std::string pre_in, pre_out;
  PreprocessOptions pre_opt;
  pre->add_option("--input", pre_in, "PNG directory (<species_id>/<name>.png) or IMG1 shards")->required();
  pre->add_option("--output", pre_out, "Output shard directory")->required();
  pre->add_option("--side", pre_opt.side, "Output side length")->capture_default_str();
  pre->add_option("--min-count", pre_opt.min_count, "Minimum images per species")->capture_default_str();
  pre->add_option("--shard-size", pre_opt.shard_size, "Records per shard")->capture_default_str();

  // embed
  auto* emb = app.add_subcommand("embed", "Extract dct64 or cls768 embeddings into EMB1 shards");
  std::string emb_in, emb_out, emb_kind = "cls768", emb_extractor = "toy";
  std::uint64_t emb_seed = 7;
  emb->add_option("--input", emb_in, "IMG1 shards (toy) or exporter EMB1 shards (external)")->required();
  emb->add_option("--output", emb_out, "Output EMB1 directory")->required();
  emb->add_option("--kind", emb_kind, "dct64 | cls768")->capture_default_str();
  emb->add_option("--extractor", emb_extractor, "toy | external")->capture_default_str();
  emb->add_option("--seed", emb_seed, "Toy extractor seed")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a linear NLL classifier");
  std::string tr_emb, tr_catalog, tr_out;
  TrainConfig tr_cfg;
  tr->add_option("--embeddings", tr_emb, "EMB1 shard directory")->required();
  tr->add_option("--catalog", tr_catalog, "Catalog CSV")->required();
  tr->add_option("--out", tr_out, "Model file (LIN1)")->required();
  tr->add_option("--lr", tr_cfg.learning_rate)->capture_default_str();
  tr->add_option("--momentum", tr_cfg.momentum)->capture_default_str();
  tr->add_option("--epochs", tr_cfg.epochs)->capture_default_str();
  tr->add_option("--batch", tr_cfg.batch_size)->capture_default_str();
  tr->add_option("--seed", tr_cfg.seed)->capture_default_str();
  tr->add_option("--init-scale", tr_cfg.weight_init_scale)->capture_default_str();

  // infer
  auto* inf = app.add_subcommand("infer", "Predict species sets for plot images");
  std::string inf_model, inf_images, inf_out, inf_mode = "grid-argmax", inf_placement = "per-tile";
  InferenceConfig inf_cfg;
  std::uint64_t inf_seed = 7;
  inf->add_option("--model", inf_model, "Model file (LIN1)")->required();
  inf->add_option("--images", inf_images, "Plot images: PNG directory, IMG1 shard or directory of shards")->required();
  inf->add_option("--mode", inf_mode, "full | grid-argmax | grid-topk")->capture_default_str();
  inf->add_option("--grid", inf_cfg.grid_n)->capture_default_str();
  inf->add_option("--top-k", inf_cfg.top_k)->capture_default_str();
  inf->add_option("--top-l", inf_cfg.top_l, "Per-tile top-L (grid-topk) or ranking length (full)")->capture_default_str();
  inf->add_option("--placement", inf_placement, "per-tile | global (where the top-L cut applies)")->capture_default_str();
  inf->add_option("--seed", inf_seed, "Toy extractor seed (must match embed)")->capture_default_str();
  inf->add_option("--out", inf_out, "Prediction JSONL")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score predictions against ground truth");
  std::string ev_pred, ev_truth, ev_report;
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--truth", ev_truth, "CSV: plot_id;space-separated species ids")->required();
  ev->add_option("--report", ev_report, "Report JSON")->required();

  // submit
  auto* sub = app.add_subcommand("submit", "Format predictions as a submission CSV");
  std::string sub_pred, sub_out;
  std::size_t sub_cap = 20;
  sub->add_option("--pred", sub_pred)->required();
  sub->add_option("--out", sub_out)->required();
  sub->add_option("--cap", sub_cap, "Maximum species per plot")->capture_default_str();

  // make-collage
  auto* col = app.add_subcommand("make-collage", "Generate the synthetic collage benchmark");
  CollageSpec col_spec;
  std::string col_out;
  bool col_png = false;
  col->add_option("--out", col_out)->required();
  col->add_option("--species", col_spec.num_species)->capture_default_str();
  col->add_option("--images-per-species", col_spec.images_per_species)->capture_default_str();
  col->add_option("--plots", col_spec.plots)->capture_default_str();
  col->add_option("--grid", col_spec.grid_n)->capture_default_str();
  col->add_option("--species-per-plot", col_spec.species_per_plot)->capture_default_str();
  col->add_option("--seed", col_spec.seed)->capture_default_str();
  col->add_flag("--png", col_png, "Write PNG files instead of IMG1 shards");

  // validate
  auto* val = app.add_subcommand("validate", "Check an IMG1, EMB1 or LIN1 file against its format");
  std::string val_path;
  val->add_option("file", val_path)->required();

  // run
  auto* run = app.add_subcommand("run", "Run the full pipeline from a config file");
  std::string run_config;
  run->add_option("--config", run_config)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      auto s = preprocess_images(pre_in, pre_out, pre_opt, workers_or_default(workers));
      std::cout << "preprocess: " << s.inputs << " inputs, " << s.written << " written, " << s.catalog.size()
                << " species retained, " << s.unlabeled_skipped << " unlabeled skipped\n";
    } else if (*emb) {
      EmbedOptions opt{parse_embedding_kind(emb_kind), parse_extractor_kind(emb_extractor), emb_seed};
      auto n = embed_shards(emb_in, emb_out, opt, workers_or_default(workers));
      std::cout << "embed: " << n << " records\n";
    } else if (*tr) {
      auto r = train_from_files(tr_emb, tr_catalog, tr_out, tr_cfg);
      std::cout << "train: " << r.model.classes() << " classes, dim " << r.model.dim() << ", loss " << r.initial_loss
                << " -> " << r.loss_trace.back() << "\n";
    } else if (*inf) {
      inf_cfg.mode = parse_inference_mode(inf_mode);
      inf_cfg.placement = parse_top_l_placement(inf_placement);
      const auto model = read_model(inf_model);
      const auto preds = infer_images(model, inf_images, inf_cfg, inf_seed, workers_or_default(workers));
      write_predictions(inf_out, preds);
      std::cout << "infer: " << preds.size() << " plots\n";
    } else if (*ev) {
      auto r = evaluate_files(ev_pred, ev_truth, ev_report);
      std::cout << "macro_f1_per_plot=" << r.macro_f1_per_plot << " macro_f1_per_species=" << r.macro_f1_per_species
                << " micro_f1=" << r.micro_f1 << "\n";
    } else if (*sub) {
      submit_file(sub_pred, sub_out, sub_cap);
    } else if (*col) {
      write_collage(make_collage_dataset(col_spec), col_out, col_png);
    } else if (*val) {
      const auto bytes = io::read_file(val_path);
      const std::string magic(bytes.begin(), bytes.begin() + std::min<std::size_t>(4, bytes.size()));
      if (magic == "IMG1") {
        std::cout << "IMG1 ok: " << decode_image_shard(bytes, val_path).size() << " records\n";
      } else if (magic == "EMB1") {
        auto shard = decode_embedding_shard(bytes, val_path);
        std::cout << "EMB1 ok: " << shard.records.size() << " records, kind " << to_string(shard.kind) << "\n";
      } else if (magic == "LIN1") {
        auto m = decode_model(bytes, val_path);
        std::cout << "LIN1 ok: " << m.classes() << " classes, dim " << m.dim() << "\n";
      } else {
        throw Error(val_path + ": unrecognized magic");
      }
    } else if (*run) {
      auto cfg = load_pipeline_config(run_config);
      if (workers > 0) cfg.workers = workers;
      auto result = run_pipeline(cfg, std::cout);
      if (result.report) {
        std::cout << "macro_f1_per_plot=" << result.report->macro_f1_per_plot
                  << " macro_f1_per_species=" << result.report->macro_f1_per_species
                  << " micro_f1=" << result.report->micro_f1 << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
