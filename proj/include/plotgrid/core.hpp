#pragma once

// Shared domain types: species ids, the species catalog, images and plot
// label sets.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ranges>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace plotgrid {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a species id or class index is not part of a catalog.
class LookupError : public Error {
 public:
  using Error::Error;
};

struct SpeciesId {
  std::uint64_t value = 0;

  friend constexpr auto operator<=>(const SpeciesId&, const SpeciesId&) = default;
};

inline std::string to_string(SpeciesId id) { return std::to_string(id.value); }

}  // namespace plotgrid

template <>
struct std::hash<plotgrid::SpeciesId> {
  std::size_t operator()(const plotgrid::SpeciesId& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};

namespace plotgrid {

using ClassIndex = std::size_t;

/// Row-major dense matrix. Used for weights, tile probabilities and token
/// matrices.
template <typename T>
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() { return data_; }
  std::span<const T> flat() const { return data_; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// 8-bit RGB raster, row-major, channels interleaved.
struct Image {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::uint32_t h, std::uint32_t w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(std::size_t{h} * w * 3, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) {
    return pixels[(r * width + c) * 3 + ch];
  }
  std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const {
    return pixels[(r * width + c) * 3 + ch];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageRecord {
  std::string image_id;
  std::optional<SpeciesId> species;  // set for the single-label training split
  Image image;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Side length of every preprocessed training image.
inline constexpr std::uint32_t kProcessedSide = 128;

/// An ImageRecord that has passed crop + resize; always kProcessedSide square.
using ProcessedImage = ImageRecord;

struct PlotLabelSet {
  std::string plot_id;
  std::set<SpeciesId> species;

  friend bool operator==(const PlotLabelSet&, const PlotLabelSet&) = default;
};

struct CatalogEntry {
  SpeciesId species;
  std::uint64_t image_count = 0;

  friend bool operator==(const CatalogEntry&, const CatalogEntry&) = default;
};

/// Immutable species catalog. Class indices follow ascending species id.
class SpeciesCatalog {
 public:
  SpeciesCatalog() = default;

  /// Builds from (species, count) pairs in any order. Duplicate ids are an
  /// error.
  static SpeciesCatalog from_entries(std::vector<CatalogEntry> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const CatalogEntry& a, const CatalogEntry& b) { return a.species < b.species; });
    SpeciesCatalog catalog;
    catalog.index_.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!catalog.index_.emplace(entries[i].species, i).second) {
        throw Error("duplicate species id " + to_string(entries[i].species) + " in catalog");
      }
    }
    catalog.entries_ = std::move(entries);
    return catalog;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<CatalogEntry>& entries() const { return entries_; }

  bool contains(SpeciesId s) const { return index_.contains(s); }

  ClassIndex encode(SpeciesId s) const {
    auto it = index_.find(s);
    if (it == index_.end()) {
      throw LookupError("unknown species id " + to_string(s));
    }
    return it->second;
  }

  SpeciesId decode(ClassIndex index) const {
    if (index >= entries_.size()) {
      throw LookupError("class index " + std::to_string(index) + " out of range [0, " +
                        std::to_string(entries_.size()) + ")");
    }
    return entries_[index].species;
  }

  std::uint64_t image_count(SpeciesId s) const { return entries_[encode(s)].image_count; }

  std::uint64_t max_image_count() const {
    std::uint64_t best = 0;
    for (const auto& e : entries_) best = std::max(best, e.image_count);
    return best;
  }

  /// `species_id,image_count` with header, ascending, LF endings.
  std::string to_csv() const {
    std::string out = "species_id,image_count\n";
    for (const auto& e : entries_) {
      out += std::to_string(e.species.value);
      out += ',';
      out += std::to_string(e.image_count);
      out += '\n';
    }
    return out;
  }

  static SpeciesCatalog from_csv(std::string_view text);

  friend bool operator==(const SpeciesCatalog& a, const SpeciesCatalog& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<CatalogEntry> entries_;
  std::unordered_map<SpeciesId, ClassIndex> index_;
};

namespace detail {

inline std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw Error("invalid " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    auto nl = text.find('\n');
    lines.push_back(text.substr(0, nl));
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return lines;
}

}  // namespace detail

inline SpeciesCatalog SpeciesCatalog::from_csv(std::string_view text) {
  auto lines = detail::split_lines(text);
  if (lines.empty() || detail::trim(lines.front()) != "species_id,image_count") {
    throw Error("catalog csv: missing header 'species_id,image_count'");
  }
  std::vector<CatalogEntry> entries;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto line = detail::trim(lines[i]);
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string_view::npos) {
      throw Error("catalog csv line " + std::to_string(i + 1) + ": expected two columns");
    }
    entries.push_back({SpeciesId{detail::parse_u64(line.substr(0, comma), "species id")},
                       detail::parse_u64(line.substr(comma + 1), "image count")});
  }
  return from_entries(std::move(entries));
}

/// Counts images per species. Every record must carry a species label.
template <std::ranges::input_range R>
SpeciesCatalog build_catalog(R&& records) {
  std::unordered_map<SpeciesId, std::uint64_t> counts;
  for (const auto& record : records) {
    if (!record.species) {
      throw Error("record '" + record.image_id + "' has no species label");
    }
    ++counts[*record.species];
  }
  std::vector<CatalogEntry> entries;
  entries.reserve(counts.size());
  for (const auto& [species, count] : counts) entries.push_back({species, count});
  return SpeciesCatalog::from_entries(std::move(entries));
}

inline ClassIndex encode_label(const SpeciesCatalog& catalog, SpeciesId s) {
  return catalog.encode(s);
}

inline SpeciesId decode_label(const SpeciesCatalog& catalog, ClassIndex index) {
  return catalog.decode(index);
}

}  // namespace plotgrid
