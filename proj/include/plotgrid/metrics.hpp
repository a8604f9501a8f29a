#pragma once

// Set F1, macro F1 averaged per plot, macro F1 averaged per species, and
// micro F1. Any 0/0 in precision, recall or F1 evaluates to 0.

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "plotgrid/core.hpp"
#include "plotgrid/inference.hpp"

namespace plotgrid {

using SpeciesSet = std::set<SpeciesId>;

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

/// Harmonic mean of precision and recall.
inline double set_f1(const SpeciesSet& pred, const SpeciesSet& truth) {
  std::size_t hit = 0;
  for (const auto& s : pred) hit += truth.contains(s) ? 1 : 0;
  const double precision = safe_div(static_cast<double>(hit), static_cast<double>(pred.size()));
  const double recall = safe_div(static_cast<double>(hit), static_cast<double>(truth.size()));
  return safe_div(2.0 * precision * recall, precision + recall);
}

inline double f1_from_counts(const ConfusionCounts& c) {
  const double precision = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  const double recall = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  return safe_div(2.0 * precision * recall, precision + recall);
}

inline SpeciesSet species_set(const PredictionSet& p) {
  SpeciesSet out;
  for (const auto& s : p.ranked) out.insert(s.species);
  return out;
}

struct PlotScore {
  std::string plot_id;
  double f1 = 0.0;
  ConfusionCounts counts;
};

struct SpeciesScore {
  SpeciesId species;
  double f1 = 0.0;
  ConfusionCounts counts;
};

struct MetricsReport {
  double macro_f1_per_plot = 0.0;
  double macro_f1_per_species = 0.0;
  double micro_f1 = 0.0;
  std::vector<PlotScore> per_plot;        // ground-truth order
  std::vector<SpeciesScore> per_species;  // ascending species id, involved species only
  ConfusionCounts totals;
};

namespace detail {

// Pairs each ground-truth plot with its prediction set by exact id.
inline std::vector<SpeciesSet> align_predictions(std::span<const PredictionSet> preds,
                                                 std::span<const PlotLabelSet> truths) {
  std::unordered_map<std::string, const PredictionSet*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.plot_id, &p).second) throw Error("duplicate prediction for plot '" + p.plot_id + "'");
  }
  std::unordered_set<std::string> truth_ids;
  std::vector<SpeciesSet> aligned;
  aligned.reserve(truths.size());
  for (const auto& t : truths) {
    if (!truth_ids.insert(t.plot_id).second) throw Error("duplicate ground truth for plot '" + t.plot_id + "'");
    auto it = by_id.find(t.plot_id);
    if (it == by_id.end()) throw Error("missing prediction for plot '" + t.plot_id + "'");
    aligned.push_back(species_set(*it->second));
  }
  for (const auto& p : preds) {
    if (!truth_ids.contains(p.plot_id)) throw Error("prediction for unknown plot '" + p.plot_id + "'");
  }
  return aligned;
}

}  // namespace detail

inline MetricsReport evaluate(std::span<const PredictionSet> preds, std::span<const PlotLabelSet> truths) {
  const auto predicted = detail::align_predictions(preds, truths);
  MetricsReport report;
  std::map<SpeciesId, ConfusionCounts> per_species;
  double plot_sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto& truth = truths[i].species;
    const auto& pred = predicted[i];
    PlotScore score{truths[i].plot_id, set_f1(pred, truth), {}};
    for (const auto& s : pred) {
      if (truth.contains(s)) {
        ++score.counts.tp;
        ++per_species[s].tp;
      } else {
        ++score.counts.fp;
        ++per_species[s].fp;
      }
    }
    for (const auto& s : truth) {
      if (!pred.contains(s)) {
        ++score.counts.fn;
        ++per_species[s].fn;
      }
    }
    plot_sum += score.f1;
    report.totals += score.counts;
    report.per_plot.push_back(std::move(score));
  }
  report.macro_f1_per_plot = safe_div(plot_sum, static_cast<double>(truths.size()));

  double species_sum = 0.0;
  for (const auto& [species, counts] : per_species) {
    const double f1 = f1_from_counts(counts);
    species_sum += f1;
    report.per_species.push_back({species, f1, counts});
  }
  report.macro_f1_per_species = safe_div(species_sum, static_cast<double>(report.per_species.size()));
  const auto& t = report.totals;
  report.micro_f1 = safe_div(2.0 * t.tp, 2.0 * t.tp + t.fp + t.fn);
  return report;
}

inline double macro_f1_per_plot(std::span<const PredictionSet> preds, std::span<const PlotLabelSet> truths) {
  return evaluate(preds, truths).macro_f1_per_plot;
}

inline double macro_f1_per_species(std::span<const PredictionSet> preds, std::span<const PlotLabelSet> truths) {
  return evaluate(preds, truths).macro_f1_per_species;
}

inline double micro_f1(std::span<const PredictionSet> preds, std::span<const PlotLabelSet> truths) {
  return evaluate(preds, truths).micro_f1;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  auto counts_json = [](const ConfusionCounts& c) {
    return nlohmann::ordered_json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  };
  nlohmann::ordered_json j;
  j["macro_f1_per_plot"] = r.macro_f1_per_plot;
  j["macro_f1_per_species"] = r.macro_f1_per_species;
  j["micro_f1"] = r.micro_f1;
  j["totals"] = counts_json(r.totals);
  auto plots = nlohmann::ordered_json::array();
  for (const auto& p : r.per_plot) {
    auto row = counts_json(p.counts);
    row["plot_id"] = p.plot_id;
    row["f1"] = p.f1;
    plots.push_back(std::move(row));
  }
  j["per_plot"] = std::move(plots);
  auto species = nlohmann::ordered_json::array();
  for (const auto& s : r.per_species) {
    auto row = counts_json(s.counts);
    row["species_id"] = s.species.value;
    row["f1"] = s.f1;
    species.push_back(std::move(row));
  }
  j["per_species"] = std::move(species);
  return j;
}

// Truth CSV: header `plot_id;species_ids`, then `plot;id id id`.

inline std::string format_truth_csv(std::span<const PlotLabelSet> truths) {
  std::string out = "plot_id;species_ids\n";
  for (const auto& t : truths) {
    out += t.plot_id;
    out += ';';
    bool first = true;
    for (const auto& s : t.species) {
      if (!first) out += ' ';
      out += std::to_string(s.value);
      first = false;
    }
    out += '\n';
  }
  return out;
}

inline std::vector<PlotLabelSet> parse_truth_csv(std::string_view text) {
  std::vector<PlotLabelSet> out;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty() || (i == 0 && line == "plot_id;species_ids")) continue;
    const auto semi = line.find(';');
    if (semi == std::string_view::npos) throw Error("truth csv line " + std::to_string(i + 1) + ": missing ';'");
    PlotLabelSet row{std::string(line.substr(0, semi)), {}};
    auto rest = line.substr(semi + 1);
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      const auto tok = rest.substr(0, sp);
      if (!tok.empty()) row.species.insert(SpeciesId{detail::parse_u64(tok, "species id")});
      if (sp == std::string_view::npos) break;
      rest.remove_prefix(sp + 1);
    }
    if (row.species.empty()) {
      throw Error("truth csv line " + std::to_string(i + 1) + ": plot '" + row.plot_id + "' has no species");
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace plotgrid
