#pragma once

// Leaderboard submission CSV: header `plot_id;species_ids`, then one row per
// plot `plot_id;[id1, id2, ...]`, ranked order, LF endings.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plotgrid/core.hpp"
#include "plotgrid/inference.hpp"

namespace plotgrid {

struct SubmissionRow {
  std::string plot_id;
  std::vector<SpeciesId> species;

  friend bool operator==(const SubmissionRow&, const SubmissionRow&) = default;
};

inline std::string format_submission_row(const SubmissionRow& row) {
  std::string out = row.plot_id + ";[";
  for (std::size_t i = 0; i < row.species.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(row.species[i].value);
  }
  out += "]\n";
  return out;
}

/// At most `cap` species per plot, order preserved.
inline std::string format_submission(std::span<const PredictionSet> preds, std::size_t cap) {
  std::string out = "plot_id;species_ids\n";
  for (const auto& p : preds) {
    SubmissionRow row{p.plot_id, {}};
    for (std::size_t i = 0; i < p.ranked.size() && i < cap; ++i) row.species.push_back(p.ranked[i].species);
    out += format_submission_row(row);
  }
  return out;
}

inline std::vector<SubmissionRow> parse_submission(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || lines.front() != "plot_id;species_ids") throw Error("submission: missing header");
  std::vector<SubmissionRow> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.empty()) continue;
    const std::string where = "submission line " + std::to_string(i + 1) + ": ";
    const auto semi = line.find(';');
    if (semi == std::string_view::npos || line.size() < semi + 3 || line[semi + 1] != '[' || line.back() != ']') {
      throw Error(where + "expected 'plot_id;[ids]'");
    }
    SubmissionRow row{std::string(line.substr(0, semi)), {}};
    auto body = line.substr(semi + 2, line.size() - semi - 3);
    while (!body.empty()) {
      const auto comma = body.find(',');
      row.species.push_back(SpeciesId{detail::parse_u64(detail::trim(body.substr(0, comma)), "species id")});
      if (comma == std::string_view::npos) break;
      body.remove_prefix(comma + 1);
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace plotgrid
