#ifndef COBENEFIT_GRID_HPP
#define COBENEFIT_GRID_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cobenefit/nn/random.hpp"
#include "cobenefit/nn/tensor.hpp"

namespace cobenefit {

using nn::Tensor;

/// Input channels. The first five are fossil energy use (tce/yr), the last
/// three are geography (m, degC, mm).
enum class Channel : std::uint8_t { RRC, IDC, IDO, SVC, TRN, ALT, TEM, PCP };

inline constexpr std::size_t kChannels = 8;
inline constexpr std::size_t kEmissionChannels = 5;
inline constexpr std::size_t kAgeGroups = 12;

inline constexpr std::array<Channel, kChannels> kAllChannels = {
    Channel::RRC, Channel::IDC, Channel::IDO, Channel::SVC,
    Channel::TRN, Channel::ALT, Channel::TEM, Channel::PCP};

inline constexpr std::array<Channel, kEmissionChannels> kEmissionChannelList = {
    Channel::RRC, Channel::IDC, Channel::IDO, Channel::SVC, Channel::TRN};

inline constexpr std::array<std::string_view, kChannels> kChannelNames = {
    "RRC", "IDC", "IDO", "SVC", "TRN", "ALT", "TEM", "PCP"};

inline constexpr std::array<std::string_view, kAgeGroups> kAgeGroupNames = {
    "25-29", "30-34", "35-39", "40-44", "45-49", "50-54",
    "55-59", "60-64", "65-69", "70-74", "75-79", "80+"};

constexpr std::size_t index_of(Channel c) { return static_cast<std::size_t>(c); }
constexpr bool is_emission(Channel c) { return index_of(c) < kEmissionChannels; }
constexpr std::string_view channel_name(Channel c) { return kChannelNames[index_of(c)]; }

inline std::optional<Channel> parse_channel(std::string_view name) {
  for (Channel c : kAllChannels) {
    if (channel_name(c) == name) return c;
  }
  return std::nullopt;
}

inline std::optional<std::size_t> parse_age_group(std::string_view name) {
  for (std::size_t m = 0; m < kAgeGroups; ++m) {
    if (kAgeGroupNames[m] == name) return m;
  }
  return std::nullopt;
}

/// Domain violation in world data (out-of-grid station, negative
/// emissions, unknown city, ...).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const Cell&) const = default;
};

struct Station {
  std::string id;
  Cell cell;
  std::string city_id;
  double pm25 = 0.0;  // observed annual mean, ug/m3
};

/// Absolute national grid plus station registry. Immutable once loaded.
class World {
 public:
  World() = default;
  World(std::size_t rows, std::size_t cols, double cell_km = 10.0)
      : rows_(rows), cols_(cols), cell_km_(cell_km),
        channels_(kChannels * rows * cols, 0.0), population_(rows * cols * kAgeGroups, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t cells() const { return rows_ * cols_; }
  double cell_km() const { return cell_km_; }

  bool contains(long row, long col) const {
    return row >= 0 && col >= 0 && static_cast<std::size_t>(row) < rows_ && static_cast<std::size_t>(col) < cols_;
  }

  double value(Channel k, std::size_t row, std::size_t col) const {
    return channels_[(index_of(k) * rows_ + row) * cols_ + col];
  }
  double& value(Channel k, std::size_t row, std::size_t col) {
    return channels_[(index_of(k) * rows_ + row) * cols_ + col];
  }

  double population(std::size_t row, std::size_t col, std::size_t age) const {
    return population_[(row * cols_ + col) * kAgeGroups + age];
  }
  double& population(std::size_t row, std::size_t col, std::size_t age) {
    return population_[(row * cols_ + col) * kAgeGroups + age];
  }

  double channel_total(Channel k) const {
    const auto begin = channels_.begin() + static_cast<std::ptrdiff_t>(index_of(k) * cells());
    return std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(cells()), 0.0);
  }

  /// National population share of each age group; uniform if empty.
  std::array<double, kAgeGroups> age_shares() const {
    std::array<double, kAgeGroups> s{};
    double total = 0.0;
    for (std::size_t c = 0; c < cells(); ++c) {
      for (std::size_t m = 0; m < kAgeGroups; ++m) {
        s[m] += population_[c * kAgeGroups + m];
        total += population_[c * kAgeGroups + m];
      }
    }
    for (double& v : s) v = total > 0.0 ? v / total : 1.0 / kAgeGroups;
    return s;
  }

  std::vector<Station>& stations() { return stations_; }
  const std::vector<Station>& stations() const { return stations_; }

  const Station& station(std::string_view id) const {
    for (const auto& s : stations_) {
      if (s.id == id) return s;
    }
    throw DomainError("unknown station '" + std::string(id) + "'");
  }

  std::map<std::string, double>& city_population() { return city_population_; }
  const std::map<std::string, double>& city_population() const { return city_population_; }

  /// Checks the invariants: non-negative emissions, stations inside the
  /// grid, at most one station per cell.
  void validate() const {
    for (Channel k : kEmissionChannelList) {
      for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
          if (!(value(k, r, c) >= 0.0)) {
            throw DomainError("negative or NaN " + std::string(channel_name(k)) + " at (" +
                              std::to_string(r) + "," + std::to_string(c) + ")");
          }
        }
      }
    }
    std::set<Cell> seen;
    std::set<std::string> ids;
    for (const auto& s : stations_) {
      if (!contains(static_cast<long>(s.cell.row), static_cast<long>(s.cell.col))) {
        throw DomainError("station '" + s.id + "' lies outside the grid");
      }
      if (!seen.insert(s.cell).second) throw DomainError("more than one station in the cell of '" + s.id + "'");
      if (!ids.insert(s.id).second) throw DomainError("duplicate station id '" + s.id + "'");
    }
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double cell_km_ = 10.0;
  std::vector<double> channels_;    // [channel][row][col]
  std::vector<double> population_;  // [row][col][age group]
  std::vector<Station> stations_;
  std::map<std::string, double> city_population_;
};

// ---------------------------------------------------------------------------
// Station deduplication

/// A monitor with planar coordinates in km from the grid origin
/// (x along columns, y along rows).
struct RawMonitor {
  std::string id;
  double x_km = 0.0;
  double y_km = 0.0;
  std::string city_id;
  double pm25 = 0.0;
};

struct DedupeReport {
  std::vector<Station> stations;
  std::size_t raw_count = 0;
  std::size_t merged_count = 0;          // monitors folded into another
  std::vector<std::string> diagnostics;  // rejected monitors
};

/// Keeps one station per grid cell. The retained station takes the id and
/// city of the first monitor seen in that cell and the mean reading of all
/// monitors in it. Monitors outside the grid are rejected.
inline DedupeReport dedupe_stations(const std::vector<RawMonitor>& raw, std::size_t rows, std::size_t cols,
                                    double cell_km) {
  DedupeReport report;
  report.raw_count = raw.size();
  std::map<Cell, std::size_t> slot;
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (const auto& m : raw) {
    const double fr = std::floor(m.y_km / cell_km);
    const double fc = std::floor(m.x_km / cell_km);
    if (!std::isfinite(fr) || !std::isfinite(fc) || fr < 0 || fc < 0 || fr >= static_cast<double>(rows) ||
        fc >= static_cast<double>(cols)) {
      report.diagnostics.push_back("monitor '" + m.id + "' at (" + std::to_string(m.x_km) + " km, " +
                                   std::to_string(m.y_km) + " km) is outside the grid");
      continue;
    }
    const Cell cell{static_cast<std::size_t>(fr), static_cast<std::size_t>(fc)};
    auto [it, inserted] = slot.try_emplace(cell, report.stations.size());
    if (inserted) {
      report.stations.push_back({m.id, cell, m.city_id, 0.0});
      sums.push_back(m.pm25);
      counts.push_back(1);
    } else {
      sums[it->second] += m.pm25;
      ++counts[it->second];
      ++report.merged_count;
    }
  }
  for (std::size_t i = 0; i < report.stations.size(); ++i) {
    report.stations[i].pm25 = sums[i] / static_cast<double>(counts[i]);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Windows

/// Square window of all channels centered on a station.
///
/// Tensors are stored channel-major, [K, side, side], which is the layout
/// the convolutional branch consumes. Cells outside the national grid are
/// zero in `raw` and false in `mask`.
struct GridStack {
  std::string station_id;
  std::size_t half_extent = 0;
  Cell center;  // absolute cell of the station
  Tensor raw;
  Tensor normalized;
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> stddev{};
  std::array<bool, kChannels> degenerate{};
  std::vector<std::uint8_t> mask;  // [side * side], row-major
  bool has_stats = false;

  std::size_t side() const { return 2 * half_extent + 1; }
  std::size_t plane() const { return side() * side(); }

  double& raw_at(std::size_t k, std::size_t i, std::size_t j) { return raw[(k * side() + i) * side() + j]; }
  double raw_at(std::size_t k, std::size_t i, std::size_t j) const { return raw[(k * side() + i) * side() + j]; }

  bool inside(std::size_t i, std::size_t j) const { return mask[i * side() + j] != 0; }

  /// Absolute grid row/col of window cell (i, j); only meaningful when inside().
  Cell absolute(std::size_t i, std::size_t j) const {
    return {center.row + i - half_extent, center.col + j - half_extent};
  }
};

inline GridStack extract_window(const World& world, const Station& station, std::size_t half_extent) {
  GridStack s;
  s.station_id = station.id;
  s.half_extent = half_extent;
  s.center = station.cell;
  const std::size_t side = s.side();
  s.raw = Tensor({kChannels, side, side});
  s.mask.assign(side * side, 0);
  const long h = static_cast<long>(half_extent);
  for (std::size_t i = 0; i < side; ++i) {
    const long r = static_cast<long>(station.cell.row) + static_cast<long>(i) - h;
    for (std::size_t j = 0; j < side; ++j) {
      const long c = static_cast<long>(station.cell.col) + static_cast<long>(j) - h;
      if (!world.contains(r, c)) continue;
      s.mask[i * side + j] = 1;
      for (std::size_t k = 0; k < kChannels; ++k) {
        s.raw_at(k, i, j) = world.value(kAllChannels[k], static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      }
    }
  }
  return s;
}

/// Relative threshold under which a channel's spread counts as zero.
inline bool is_degenerate_spread(double sd, double mean) {
  return !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
}

/// Standardizes every channel over the whole window (masked cells
/// included, as zeros). Channels with zero spread normalize to all zeros
/// and are flagged degenerate.
inline void normalize_stack(GridStack& s) {
  const std::size_t n = s.plane();
  s.normalized = Tensor(s.raw.shape());
  for (std::size_t k = 0; k < kChannels; ++k) {
    const double* x = s.raw.data() + k * n;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += x[i];
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x[i] - mean) * (x[i] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.mean[k] = mean;
    s.stddev[k] = sd;
    s.degenerate[k] = is_degenerate_spread(sd, mean);
    double* z = s.normalized.data() + k * n;
    if (s.degenerate[k]) {
      std::fill(z, z + n, 0.0);
    } else {
      for (std::size_t i = 0; i < n; ++i) z[i] = (x[i] - mean) / sd;
    }
  }
  s.has_stats = true;
}

inline GridStack make_stack(const World& world, const Station& station, std::size_t half_extent) {
  GridStack s = extract_window(world, station, half_extent);
  normalize_stack(s);
  return s;
}

// ---------------------------------------------------------------------------
// Population weights

struct StationWeight {
  std::string station_id;
  double weight = 0.0;
};

/// Population each station represents: its city's population split evenly
/// among the city's stations.
inline std::vector<double> represented_population(const std::vector<Station>& stations,
                                                  const std::map<std::string, double>& city_population) {
  std::map<std::string, std::size_t> per_city;
  for (const auto& s : stations) ++per_city[s.city_id];
  std::vector<double> out;
  out.reserve(stations.size());
  for (const auto& s : stations) {
    auto it = city_population.find(s.city_id);
    if (it == city_population.end()) throw DomainError("station '" + s.id + "': unknown city '" + s.city_id + "'");
    if (!(it->second > 0.0)) throw DomainError("city '" + s.city_id + "' has zero population");
    out.push_back(it->second / static_cast<double>(per_city[s.city_id]));
  }
  return out;
}

/// Weights proportional to represented population, rescaled to mean 1.
inline std::vector<StationWeight> compute_station_weights(const std::vector<Station>& stations,
                                                          const std::map<std::string, double>& city_population) {
  if (stations.empty()) return {};
  const std::vector<double> raw = represented_population(stations, city_population);
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(raw.size());
  std::vector<StationWeight> out;
  out.reserve(stations.size());
  for (std::size_t i = 0; i < stations.size(); ++i) out.push_back({stations[i].id, raw[i] / mean});
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

/// Partition sizes for a 3:1:1 split: floor shares first, then the
/// remainder handed out one at a time to validation, test, train.
inline std::array<std::size_t, 3> split_sizes(std::size_t n) {
  std::array<std::size_t, 3> sz = {n * 3 / 5, n / 5, n / 5};
  std::size_t rem = n - sz[0] - sz[1] - sz[2];
  const std::array<std::size_t, 3> order = {1, 2, 0};
  for (std::size_t i = 0; rem > 0; ++i, --rem) ++sz[order[i % 3]];
  return sz;
}

inline DatasetSplit split_dataset(const std::vector<std::string>& ids, std::uint64_t seed) {
  if (ids.size() < 5) throw DomainError("split_dataset needs at least 5 stations, got " + std::to_string(ids.size()));
  std::vector<std::string> order = ids;
  nn::Rng rng(nn::mix_seed(seed, 0x5917));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  const auto sz = split_sizes(order.size());
  DatasetSplit split;
  split.seed = seed;
  auto it = order.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sz[0]));
  it += static_cast<std::ptrdiff_t>(sz[0]);
  split.validation.assign(it, it + static_cast<std::ptrdiff_t>(sz[1]));
  it += static_cast<std::ptrdiff_t>(sz[1]);
  split.test.assign(it, order.end());
  return split;
}

inline std::vector<std::string> station_ids(const std::vector<Station>& stations) {
  std::vector<std::string> ids;
  ids.reserve(stations.size());
  for (const auto& s : stations) ids.push_back(s.id);
  return ids;
}

}  // namespace cobenefit

#endif  // COBENEFIT_GRID_HPP
