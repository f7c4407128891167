#ifndef COBENEFIT_DAMAGE_HPP
#define COBENEFIT_DAMAGE_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cobenefit/gemm.hpp"
#include "cobenefit/grid.hpp"
#include "cobenefit/io.hpp"
#include "cobenefit/parallel.hpp"
#include "cobenefit/rescnn.hpp"

namespace cobenefit {

/// Everything the health chain needs besides concentrations.
struct HealthConfig {
  GemmParams gemm;
  AgeVector mortality{};
  std::optional<AgeVector> age_shares;  // national shares; taken from the world when absent
  VslConfig vsl;
  std::array<double, kEmissionChannels> emission_factor;  // tCO2 per tce; NaN = not configured
  DeathOptions deaths;

  HealthConfig() { emission_factor.fill(std::numeric_limits<double>::quiet_NaN()); }

  double factor(Channel sector) const {
    const double ef = emission_factor[index_of(sector)];
    if (!(ef > 0)) {
      throw SchemaError("emission factor for " + std::string(kChannelNames[index_of(sector)]) +
                        " is not configured (key ef." + std::string(kChannelNames[index_of(sector)]) + ")");
    }
    return ef;
  }
};

/// `age_group,mortality` table with all twelve groups.
inline AgeVector load_mortality(const std::filesystem::path& path) {
  const auto rows = read_csv(path, {"age_group", "mortality"});
  AgeVector out{};
  std::array<bool, kAgeGroups> seen{};
  for (const auto& r : rows) {
    const auto m = parse_age_group(r[0]);
    if (!m) throw SchemaError(path.string() + ": unknown age group '" + r[0] + "'");
    const double v = parse_double(r[1], path.string() + " mortality");
    if (!(v >= 0.0 && v <= 1.0)) throw SchemaError(path.string() + ": mortality rate outside [0,1] for " + r[0]);
    out[*m] = v;
    seen[*m] = true;
  }
  for (std::size_t m = 0; m < kAgeGroups; ++m) {
    if (!seen[m]) throw SchemaError(path.string() + ": missing age group " + std::string(kAgeGroupNames[m]));
  }
  return out;
}

/// Reads the health section of a key-value config. Relative paths resolve
/// against `base_dir`.
inline HealthConfig health_config_from(const KeyValueConfig& cfg, const std::filesystem::path& base_dir) {
  HealthConfig h;
  h.gemm.theta_mean = cfg.number("gemm.theta_mean");
  h.gemm.theta_sd = cfg.number("gemm.theta_sd");
  h.gemm.alpha = cfg.number("gemm.alpha");
  h.gemm.mu = cfg.number("gemm.mu");
  h.gemm.nu = cfg.number("gemm.nu");
  h.gemm.cf = cfg.number("gemm.cf");
  try {
    h.gemm.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(e.what());
  }
  std::filesystem::path mort = cfg.get("mortality_csv");
  if (mort.is_relative()) mort = base_dir / mort;
  h.mortality = load_mortality(mort);
  if (cfg.has("age_shares")) {
    const auto v = cfg.numbers("age_shares");
    if (v.size() != kAgeGroups) throw SchemaError("age_shares needs 12 values");
    AgeVector s{};
    std::copy(v.begin(), v.end(), s.begin());
    h.age_shares = s;
  }
  h.vsl.base = cfg.number_or("vsl.base", h.vsl.base);
  h.vsl.gdp_per_capita_base = cfg.number("vsl.gdp_per_capita_base");
  h.vsl.gdp_per_capita_target = cfg.number("vsl.gdp_per_capita_target");
  h.vsl.elasticity = cfg.number_or("vsl.elasticity", h.vsl.elasticity);
  for (std::size_t k = 0; k < kEmissionChannels; ++k) {
    const std::string key = "ef." + std::string(kChannelNames[k]);
    if (cfg.has(key)) h.emission_factor[k] = cfg.number(key);
  }
  h.deaths.draws = static_cast<std::size_t>(cfg.integer_or("deaths.draws", 1000));
  h.deaths.ci_level = cfg.number_or("deaths.ci_level", 0.95);
  if (h.deaths.draws < 1 || !(h.deaths.ci_level > 0 && h.deaths.ci_level < 1)) {
    throw SchemaError("deaths.draws must be >= 1 and deaths.ci_level in (0,1)");
  }
  return h;
}

/// pop_{m,n}: station-represented population times the national age shares.
inline std::vector<AgeVector> station_age_population(const World& world, const HealthConfig& h) {
  const AgeVector shares = h.age_shares ? *h.age_shares : world.age_shares();
  const auto rep = represented_population(world.stations(), world.city_population());
  std::vector<AgeVector> out(rep.size());
  for (std::size_t n = 0; n < rep.size(); ++n) {
    for (std::size_t m = 0; m < kAgeGroups; ++m) out[n][m] = rep[n] * shares[m];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenarios

struct Scenario {
  Channel sector = Channel::RRC;
  double p = 0.0;

  void validate() const {
    if (!is_emission(sector)) throw DomainError("scenario sector must be an emission channel");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("curtailment fraction must lie in [0,1]");
  }
};

/// Window with sector k scaled by (1-p) and re-normalized.
inline GridStack curtail(const GridStack& s, const Scenario& sc) {
  GridStack out = s;
  const std::size_t n = s.plane();
  double* x = out.raw.data() + index_of(sc.sector) * n;
  for (std::size_t i = 0; i < n; ++i) x[i] *= (1.0 - sc.p);
  normalize_stack(out);
  return out;
}

inline std::vector<double> predict_all(const ResCnn& model, std::span<const GridStack> stacks, unsigned workers) {
  std::vector<double> out(stacks.size());
  parallel_for(stacks.size(), workers, [&](std::size_t i) { out[i] = predict(model, stacks[i]).value; });
  return out;
}

inline std::vector<double> scenario_concentration(const ResCnn& model, std::span<const GridStack> stacks,
                                                  const Scenario& sc, unsigned workers = 1) {
  sc.validate();
  std::vector<double> out(stacks.size());
  parallel_for(stacks.size(), workers,
               [&](std::size_t i) { out[i] = predict(model, curtail(stacks[i], sc)).value; });
  return out;
}

struct SweepRow {
  double p = 0.0;
  double weighted_concentration = 0.0;
  DeathEstimate deaths;
};

/// Population-weighted concentration and avoided deaths against the
/// uncurtailed prediction, one row per fraction.
inline std::vector<SweepRow> curtailment_sweep(const ResCnn& model, std::span<const GridStack> stacks, Channel sector,
                                               std::span<const double> fractions, std::span<const double> weights,
                                               std::span<const AgeVector> population, const HealthConfig& h,
                                               unsigned workers = 1) {
  if (weights.size() != stacks.size()) throw std::invalid_argument("curtailment_sweep: one weight per station");
  const auto c0 = predict_all(model, stacks, workers);
  std::vector<SweepRow> rows;
  for (double p : fractions) {
    const auto c1 = scenario_concentration(model, stacks, {sector, p}, workers);
    SweepRow row;
    row.p = p;
    double wsum = 0.0;
    for (std::size_t i = 0; i < c1.size(); ++i) {
      row.weighted_concentration += weights[i] * c1[i];
      wsum += weights[i];
    }
    row.weighted_concentration /= wsum;
    row.deaths = avoided_deaths(c0, c1, population, h.mortality, h.gemm, h.deaths).total;
    rows.push_back(row);
  }
  return rows;
}

/// Fractions step, 2*step, ..., up to p_max (inclusive up to rounding).
inline std::vector<double> sweep_fractions(double p_max, double step) {
  if (!(step > 0) || !(p_max > 0) || p_max > 1.0) throw DomainError("sweep needs 0 < step and 0 < p_max <= 1");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor(p_max / step + 1e-9));
  for (std::size_t i = 1; i <= n; ++i) out.push_back(static_cast<double>(i) * step);
  return out;
}

// ---------------------------------------------------------------------------
// Marginal damages

/// Baseline concentration and d c / d x_raw for one station's window.
struct StationResponse {
  double c0 = 0.0;
  nn::Tensor grad;  // [K, side, side]
};

inline std::vector<StationResponse> model_responses(const ResCnn& model, std::span<const GridStack> stacks,
                                                    unsigned workers = 1) {
  std::vector<StationResponse> out(stacks.size());
  parallel_for(stacks.size(), workers, [&](std::size_t i) {
    out[i].c0 = predict(model, stacks[i]).value;
    out[i].grad = input_gradient(model, stacks[i]);
  });
  return out;
}

/// Per-cell marginal damage of one sector on the absolute grid, $/tCO2.
struct DamageField {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Channel sector = Channel::RRC;
  double emission_factor = 0.0;
  std::vector<double> md;               // rows*cols; NaN where uncovered
  std::vector<std::uint32_t> coverage;  // stations whose window reaches the cell

  bool covered(std::size_t r, std::size_t c) const { return coverage[r * cols + c] > 0; }
  double at(std::size_t r, std::size_t c) const { return md[r * cols + c]; }

  std::size_t negative_cells() const {
    std::size_t n = 0;
    for (double v : md) n += (v < 0.0);
    return n;
  }
  std::size_t uncovered_cells() const {
    std::size_t n = 0;
    for (auto c : coverage) n += (c == 0);
    return n;
  }
  DamageField clamped_nonnegative() const {
    DamageField f = *this;
    for (double& v : f.md) {
      if (v < 0.0) v = 0.0;
    }
    return f;
  }
};

/// MD_ij = -sum_n VSL * A_n * (E[1/RR](c0_n + g_nij) - E[1/RR](c0_n)) / ef, with
/// A_n = sum_m M_m pop_mn and g_nij the station's response to one extra
/// tce at (i,j). Only cells within Chebyshev distance `radius` of the
/// station are used (the full window when absent). Contributions are added
/// in station order.
inline DamageField marginal_damage_field(const World& world, std::span<const GridStack> stacks,
                                         std::span<const StationResponse> responses,
                                         std::span<const AgeVector> population, const HealthConfig& h, Channel sector,
                                         std::optional<std::size_t> radius = std::nullopt) {
  if (!is_emission(sector)) throw DomainError("marginal damages are defined for emission channels only");
  if (stacks.size() != responses.size() || stacks.size() != population.size()) {
    throw std::invalid_argument("marginal_damage_field: size mismatch");
  }
  const double ef = h.factor(sector);
  const double value = vsl(h.vsl);
  DamageField f;
  f.rows = world.rows();
  f.cols = world.cols();
  f.sector = sector;
  f.emission_factor = ef;
  f.md.assign(f.rows * f.cols, 0.0);
  f.coverage.assign(f.rows * f.cols, 0);
  const std::size_t k = index_of(sector);

  for (std::size_t n = 0; n < stacks.size(); ++n) {
    const GridStack& s = stacks[n];
    const std::size_t side = s.side(), hlf = s.half_extent;
    const std::size_t r = radius ? std::min(*radius, hlf) : hlf;
    const double a = baseline_deaths(h.mortality, population[n]);
    const double c0 = responses[n].c0;
    const double e0 = mean_inverse_rr(c0, h.gemm);
    const double* g = responses[n].grad.data() + k * s.plane();
    for (std::size_t i = hlf - r; i <= hlf + r; ++i) {
      for (std::size_t j = hlf - r; j <= hlf + r; ++j) {
        if (!s.inside(i, j)) continue;
        const Cell cell = s.absolute(i, j);
        const std::size_t idx = cell.row * f.cols + cell.col;
        const double deaths = a * (mean_inverse_rr(c0 + g[i * side + j], h.gemm) - e0);
        f.md[idx] += -value * deaths / ef;
        ++f.coverage[idx];
      }
    }
  }
  for (std::size_t i = 0; i < f.md.size(); ++i) {
    if (f.coverage[i] == 0) f.md[i] = std::numeric_limits<double>::quiet_NaN();
  }
  return f;
}

// ---------------------------------------------------------------------------
// Totals

/// `row,col,region`; cells not listed fall in the "unmapped" bucket.
struct RegionMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::string> region;  // rows*cols; empty = unmapped

  static RegionMap load(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
    RegionMap m{rows, cols, std::vector<std::string>(rows * cols)};
    for (const auto& r : read_csv(path, {"row", "col", "region"})) {
      const long row = parse_long(r[0], path.string() + " row");
      const long col = parse_long(r[1], path.string() + " col");
      if (row < 0 || col < 0 || static_cast<std::size_t>(row) >= rows || static_cast<std::size_t>(col) >= cols) {
        throw SchemaError(path.string() + ": cell (" + r[0] + "," + r[1] + ") outside the grid");
      }
      m.region[static_cast<std::size_t>(row) * cols + static_cast<std::size_t>(col)] = r[2];
    }
    return m;
  }

  std::string to_csv() const {
    std::string out = "row,col,region\n";
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const auto& name = region[r * cols + c];
        if (!name.empty()) out += std::to_string(r) + "," + std::to_string(c) + "," + name + "\n";
      }
    }
    return out;
  }
};

inline constexpr std::string_view kUnmapped = "unmapped";

struct DamageSummary {
  Channel sector = Channel::RRC;
  double total = 0.0;                    // $/yr
  std::map<std::string, double> by_region;
  std::size_t unmapped_cells = 0;        // covered cells without a region
  std::size_t uncovered_cells = 0;
};

/// TD = sum over covered cells of MD * x * ef, accumulated per region; the
/// total is the sum of the regional parts.
inline DamageSummary total_damage(const DamageField& f, const World& world, const RegionMap* regions = nullptr) {
  if (f.rows != world.rows() || f.cols != world.cols()) throw DomainError("damage field and world grids differ");
  if (regions && (regions->rows != f.rows || regions->cols != f.cols)) {
    throw DomainError("region map and world grids differ");
  }
  DamageSummary s;
  s.sector = f.sector;
  for (std::size_t r = 0; r < f.rows; ++r) {
    for (std::size_t c = 0; c < f.cols; ++c) {
      if (!f.covered(r, c)) {
        ++s.uncovered_cells;
        continue;
      }
      std::string name = regions ? regions->region[r * f.cols + c] : std::string(kUnmapped);
      if (name.empty()) {
        name = kUnmapped;
        ++s.unmapped_cells;
      }
      s.by_region[name] += f.at(r, c) * world.value(f.sector, r, c) * f.emission_factor;
    }
  }
  for (const auto& [name, v] : s.by_region) s.total += v;
  return s;
}

struct DistancePoint {
  std::size_t radius = 0;   // cells
  double edge_km = 0.0;     // (2 radius + 1) * cell_km
  double total = 0.0;       // $/yr
};

/// Converts sub-square edge lengths in km to Chebyshev radii.
inline std::vector<std::size_t> radii_for_edges(std::span<const double> edges_km, double cell_km,
                                                std::size_t half_extent) {
  std::vector<std::size_t> out;
  for (double e : edges_km) {
    const double cells = e / cell_km;
    const double rounded = std::round(cells);
    if (std::abs(cells - rounded) > 1e-9 || static_cast<long>(rounded) % 2 == 0 || rounded < 1) {
      throw DomainError("window edge " + format_double(e) + " km is not an odd multiple of the cell size");
    }
    const auto r = static_cast<std::size_t>(rounded - 1) / 2;
    if (r > half_extent) throw DomainError("window edge " + format_double(e) + " km exceeds the configured window");
    out.push_back(r);
  }
  return out;
}

/// Total damage when each station's response is cut to the central
/// (2r+1)^2 sub-square, for each radius.
inline std::vector<DistancePoint> damage_by_distance(const World& world, std::span<const GridStack> stacks,
                                                     std::span<const StationResponse> responses,
                                                     std::span<const AgeVector> population, const HealthConfig& h,
                                                     Channel sector, std::span<const std::size_t> radii) {
  std::vector<DistancePoint> out;
  for (std::size_t r : radii) {
    const auto field = marginal_damage_field(world, stacks, responses, population, h, sector, r);
    out.push_back({r, static_cast<double>(2 * r + 1) * world.cell_km(), total_damage(field, world).total});
  }
  return out;
}

}  // namespace cobenefit

#endif  // COBENEFIT_DAMAGE_HPP
