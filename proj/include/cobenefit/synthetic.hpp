#ifndef COBENEFIT_SYNTHETIC_HPP
#define COBENEFIT_SYNTHETIC_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "cobenefit/damage.hpp"
#include "cobenefit/grid.hpp"
#include "cobenefit/io.hpp"
#include "cobenefit/nn/random.hpp"
#include "cobenefit/world_io.hpp"

namespace cobenefit {

/// Known emission -> concentration map used as ground truth:
///   e = sum_k beta_k sum_{cells within cutoff} exp(-d / lambda) x_k
///   c = intercept + geo . (ALT, TEM, PCP at the station) + S(e)
/// with S(e) = e, or sat * (1 - exp(-e / sat)) when saturation > 0.
/// Observations carry multiplicative noise (1 + noise_rel * N(0,1)).
struct OracleKernel {
  std::array<double, kEmissionChannels> beta{};  // ug/m3 per tce/yr
  double lambda_km = 30.0;
  std::array<double, 3> geo{};  // per m, per degC, per mm
  double intercept = 0.0;
  double noise_rel = 0.05;
  std::uint64_t noise_seed = 0;
  std::size_t cutoff_cells = 10;  // Chebyshev radius of the source footprint
  double saturation = 0.0;        // 0 = linear

  void validate() const {
    for (double b : beta) {
      if (!(b >= 0)) throw DomainError("oracle kernel: beta must be non-negative");
    }
    if (!(lambda_km > 0)) throw DomainError("oracle kernel: lambda must be positive");
    if (!(noise_rel >= 0) || !(saturation >= 0)) throw DomainError("oracle kernel: negative noise or saturation");
  }
};

inline std::string kernel_to_text(const OracleKernel& k) {
  std::string out;
  for (std::size_t c = 0; c < kEmissionChannels; ++c) {
    out += "beta." + std::string(kChannelNames[c]) + " = " + format_double(k.beta[c]) + "\n";
  }
  out += "lambda_km = " + format_double(k.lambda_km) + "\n";
  for (std::size_t g = 0; g < 3; ++g) {
    out += "geo." + std::string(kChannelNames[kEmissionChannels + g]) + " = " + format_double(k.geo[g]) + "\n";
  }
  out += "intercept = " + format_double(k.intercept) + "\n";
  out += "noise_rel = " + format_double(k.noise_rel) + "\n";
  out += "noise_seed = " + std::to_string(k.noise_seed) + "\n";
  out += "cutoff_cells = " + std::to_string(k.cutoff_cells) + "\n";
  out += "saturation = " + format_double(k.saturation) + "\n";
  return out;
}

/// Reads `kernel.*` keys (prefix may be empty, as in the sidecar file).
inline OracleKernel kernel_from_config(const KeyValueConfig& cfg, const std::string& prefix = "",
                                       OracleKernel k = {}) {
  for (std::size_t c = 0; c < kEmissionChannels; ++c) {
    k.beta[c] = cfg.number_or(prefix + "beta." + std::string(kChannelNames[c]), k.beta[c]);
  }
  k.lambda_km = cfg.number_or(prefix + "lambda_km", k.lambda_km);
  for (std::size_t g = 0; g < 3; ++g) {
    k.geo[g] = cfg.number_or(prefix + "geo." + std::string(kChannelNames[kEmissionChannels + g]), k.geo[g]);
  }
  k.intercept = cfg.number_or(prefix + "intercept", k.intercept);
  k.noise_rel = cfg.number_or(prefix + "noise_rel", k.noise_rel);
  k.noise_seed = cfg.seed_or(prefix + "noise_seed", k.noise_seed);
  k.cutoff_cells = static_cast<std::size_t>(cfg.integer_or(prefix + "cutoff_cells", static_cast<long>(k.cutoff_cells)));
  k.saturation = cfg.number_or(prefix + "saturation", k.saturation);
  k.validate();
  return k;
}

inline OracleKernel load_kernel(const std::filesystem::path& path) {
  return kernel_from_config(KeyValueConfig::load(path));
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Kernel weight exp(-d/lambda) between cells, zero beyond the cutoff.
inline double kernel_weight(const World& w, const OracleKernel& k, Cell a, Cell b) {
  const long dr = static_cast<long>(a.row) - static_cast<long>(b.row);
  const long dc = static_cast<long>(a.col) - static_cast<long>(b.col);
  if (static_cast<std::size_t>(std::max(std::abs(dr), std::abs(dc))) > k.cutoff_cells) return 0.0;
  const double d = std::hypot(static_cast<double>(dr), static_cast<double>(dc)) * w.cell_km();
  return std::exp(-d / k.lambda_km);
}

/// Emission term e before saturation.
inline double oracle_emission_term(const World& w, Cell at, const OracleKernel& k) {
  const long rad = static_cast<long>(k.cutoff_cells);
  double e = 0.0;
  for (long dr = -rad; dr <= rad; ++dr) {
    for (long dc = -rad; dc <= rad; ++dc) {
      const long r = static_cast<long>(at.row) + dr, c = static_cast<long>(at.col) + dc;
      if (!w.contains(r, c)) continue;
      const Cell src{static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
      const double kw = kernel_weight(w, k, at, src);
      for (std::size_t ch = 0; ch < kEmissionChannels; ++ch) {
        e += k.beta[ch] * kw * w.value(kEmissionChannelList[ch], src.row, src.col);
      }
    }
  }
  return e;
}

inline double saturate(double e, const OracleKernel& k) {
  return k.saturation > 0 ? k.saturation * (1.0 - std::exp(-e / k.saturation)) : e;
}

/// Concentration at a cell; noise keyed by `noise_key` when requested.
inline double oracle_concentration_at(const World& w, Cell at, const OracleKernel& k, bool noisy = false,
                                      std::string_view noise_key = {}) {
  double c = k.intercept;
  for (std::size_t g = 0; g < 3; ++g) c += k.geo[g] * w.value(kAllChannels[kEmissionChannels + g], at.row, at.col);
  c += saturate(oracle_emission_term(w, at, k), k);
  if (noisy && k.noise_rel > 0) {
    nn::Rng rng(nn::mix_seed(k.noise_seed, fnv1a(noise_key)));
    c *= 1.0 + k.noise_rel * rng.normal();
  }
  return c;
}

inline double oracle_concentration(const World& w, const Station& s, const OracleKernel& k, bool noisy = false) {
  return oracle_concentration_at(w, s.cell, k, noisy, s.id);
}

/// d c / d x at `cell` for an emission channel: beta_k exp(-d/lambda),
/// times the saturation slope when that term is on.
inline double oracle_marginal(const World& w, const Station& s, Cell cell, Channel k, const OracleKernel& kern) {
  if (!is_emission(k)) throw DomainError("oracle marginal is defined for emission channels only");
  double slope = kern.beta[index_of(k)] * kernel_weight(w, kern, s.cell, cell);
  if (kern.saturation > 0) slope *= std::exp(-oracle_emission_term(w, s.cell, kern) / kern.saturation);
  return slope;
}

/// Oracle counterpart of model_responses: noiseless concentration and the
/// analytic marginal over each station's window (zero for geography).
inline std::vector<StationResponse> oracle_responses(const World& w, std::span<const GridStack> stacks,
                                                     const OracleKernel& kern) {
  std::vector<StationResponse> out(stacks.size());
  for (std::size_t n = 0; n < stacks.size(); ++n) {
    const GridStack& s = stacks[n];
    const Station& st = w.station(s.station_id);
    out[n].c0 = oracle_concentration(w, st, kern);
    out[n].grad = nn::Tensor(s.raw.shape());
    const double sat = kern.saturation > 0 ? std::exp(-oracle_emission_term(w, st.cell, kern) / kern.saturation) : 1.0;
    for (std::size_t i = 0; i < s.side(); ++i) {
      for (std::size_t j = 0; j < s.side(); ++j) {
        if (!s.inside(i, j)) continue;
        const double kw = kernel_weight(w, kern, st.cell, s.absolute(i, j)) * sat;
        for (std::size_t ch = 0; ch < kEmissionChannels; ++ch) {
          out[n].grad[(ch * s.side() + i) * s.side() + j] = kern.beta[ch] * kw;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generator

struct WorldSpec {
  std::size_t rows = 64;
  std::size_t cols = 64;
  double cell_km = 10.0;
  std::size_t n_stations = 600;
  std::size_t n_clusters = 10;  // per sector
  double cluster_radius_cells = 5.0;  // mean radius of emission clusters
  std::size_t city_block = 4;         // cities are city_block x city_block cell blocks
  std::size_t n_regions = 7;
  std::array<double, kEmissionChannels> totals = {2e6, 8e6, 3e6, 1e6, 2e6};  // tce/yr
  double total_population = 5e7;      // adults 25+
  double background_level = 1.0;      // diffuse emissions relative to a unit cluster peak
  double background_sigma = 0.3;      // log-normal cell-level spread
  double cluster_size_sigma = 0.8;    // log-normal spread of cluster strength
  double regional_sigma = 1.5;        // log-scale amplitude of the regional background
  double cross_share = 0.1;           // other sectors' share in a cluster
  double population_spread = 1.0;     // population radius relative to the cluster radius
};

inline WorldSpec world_spec_from(const KeyValueConfig& cfg, WorldSpec s = {}) {
  s.rows = static_cast<std::size_t>(cfg.integer_or("world.rows", static_cast<long>(s.rows)));
  s.cols = static_cast<std::size_t>(cfg.integer_or("world.cols", static_cast<long>(s.cols)));
  s.cell_km = cfg.number_or("world.cell_km", s.cell_km);
  s.n_stations = static_cast<std::size_t>(cfg.integer_or("world.stations", static_cast<long>(s.n_stations)));
  s.n_clusters = static_cast<std::size_t>(cfg.integer_or("world.clusters", static_cast<long>(s.n_clusters)));
  s.cluster_radius_cells = cfg.number_or("world.cluster_radius_cells", s.cluster_radius_cells);
  s.city_block = static_cast<std::size_t>(cfg.integer_or("world.city_block", static_cast<long>(s.city_block)));
  s.n_regions = static_cast<std::size_t>(cfg.integer_or("world.regions", static_cast<long>(s.n_regions)));
  for (std::size_t k = 0; k < kEmissionChannels; ++k) {
    s.totals[k] = cfg.number_or("world.total." + std::string(kChannelNames[k]), s.totals[k]);
  }
  s.total_population = cfg.number_or("world.population", s.total_population);
  s.background_level = cfg.number_or("world.background_level", s.background_level);
  s.background_sigma = cfg.number_or("world.background_sigma", s.background_sigma);
  s.cluster_size_sigma = cfg.number_or("world.cluster_size_sigma", s.cluster_size_sigma);
  s.regional_sigma = cfg.number_or("world.regional_sigma", s.regional_sigma);
  s.cross_share = cfg.number_or("world.cross_share", s.cross_share);
  s.population_spread = cfg.number_or("world.population_spread", s.population_spread);
  return s;
}

struct SyntheticWorld {
  World world;
  RegionMap regions;
  OracleKernel kernel;
};

/// Declining adult age pyramid used for every cell.
inline AgeVector synthetic_age_shares() {
  AgeVector s{};
  double total = 0.0;
  for (std::size_t m = 0; m < kAgeGroups; ++m) {
    s[m] = m + 1 < kAgeGroups ? std::exp(-0.06 * static_cast<double>(m)) : 0.6;
    total += s[m];
  }
  for (double& v : s) v /= total;
  return s;
}

/// Deterministic world for `seed`. Stations get noisy oracle readings.
inline SyntheticWorld generate_world(std::uint64_t seed, const WorldSpec& spec, OracleKernel kernel) {
  kernel.validate();
  const std::size_t cells = spec.rows * spec.cols;
  if (spec.rows == 0 || spec.cols == 0 || !(spec.cell_km > 0)) throw DomainError("world size must be positive");
  if (spec.n_stations > cells) throw DomainError("more stations than grid cells");
  if (spec.city_block == 0 || spec.n_regions == 0) throw DomainError("city_block and regions must be positive");
  for (double t : spec.totals) {
    if (!(t >= 0)) throw DomainError("emission totals must be non-negative");
  }

  SyntheticWorld out;
  World& w = out.world;
  w = World(spec.rows, spec.cols, spec.cell_km);
  nn::Rng rng(nn::mix_seed(seed, 0xA11));

  struct Cluster {
    double r, c, radius;
    std::array<double, kEmissionChannels> amp;
    double pop;
  };
  // Every sector has its own clusters (with a weak share of the other
  // sectors), so sector means vary independently across stations.
  std::vector<Cluster> clusters(spec.n_clusters * kEmissionChannels);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    Cluster& cl = clusters[i];
    cl.r = rng.uniform() * static_cast<double>(spec.rows);
    cl.c = rng.uniform() * static_cast<double>(spec.cols);
    cl.radius = spec.cluster_radius_cells * std::exp(0.3 * rng.normal());
    const double size = std::exp(spec.cluster_size_sigma * rng.normal());
    for (std::size_t k = 0; k < kEmissionChannels; ++k) {
      cl.amp[k] = size * (k == i % kEmissionChannels ? 1.0 : spec.cross_share * std::exp(0.5 * rng.normal()));
    }
    cl.pop = size * std::exp(0.4 * rng.normal());
  }
  // Transport spreads wider than point sources; residential follows people.
  const std::array<double, kEmissionChannels> spread = {1.3, 0.8, 1.0, 1.2, 1.8};

  std::vector<double> density(cells);
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      double pop = 0.02;
      for (const auto& cl : clusters) {
        const double d2 = (r + 0.5 - cl.r) * (r + 0.5 - cl.r) + (c + 0.5 - cl.c) * (c + 0.5 - cl.c);
        pop += cl.pop * std::exp(-d2 / (2.0 * spec.population_spread * spec.population_spread * cl.radius * cl.radius));
      }
      density[r * spec.cols + c] = pop * std::exp(0.3 * rng.normal());
    }
  }
  for (std::size_t k = 0; k < kEmissionChannels; ++k) {
    const Channel ch = kEmissionChannelList[k];
    // Regional background: a few long-wavelength waves, so sector levels
    // differ between regions independently of local cluster shapes.
    std::array<std::array<double, 4>, 4> waves{};
    for (auto& wv : waves) {
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      const double cycles = 0.5 + rng.uniform();
      wv = {cycles * std::cos(angle) / static_cast<double>(spec.rows),
            cycles * std::sin(angle) / static_cast<double>(spec.cols), 2.0 * std::numbers::pi * rng.uniform(), 0.0};
    }
    double sum = 0.0;
    for (std::size_t r = 0; r < spec.rows; ++r) {
      for (std::size_t c = 0; c < spec.cols; ++c) {
        double wave = 0.0;
        for (const auto& wv : waves) wave += std::cos(2.0 * std::numbers::pi * (wv[0] * r + wv[1] * c) + wv[2]);
        double v = spec.background_level * std::exp(spec.regional_sigma * wave / 2.0);
        for (const auto& cl : clusters) {
          const double rad = cl.radius * spread[k];
          const double d2 = (r + 0.5 - cl.r) * (r + 0.5 - cl.r) + (c + 0.5 - cl.c) * (c + 0.5 - cl.c);
          v += cl.amp[k] * std::exp(-d2 / (2.0 * rad * rad));
        }
        v *= std::exp(spec.background_sigma * rng.normal());
        w.value(ch, r, c) = v;
        sum += v;
      }
    }
    const double scale = spec.totals[k] / sum;
    for (std::size_t r = 0; r < spec.rows; ++r) {
      for (std::size_t c = 0; c < spec.cols; ++c) w.value(ch, r, c) *= scale;
    }
  }

  // Geography: smooth bumps for altitude, lapse-rate temperature and a
  // north-south rainfall gradient.
  std::array<std::array<double, 4>, 4> hills{};
  for (auto& h : hills) h = {rng.uniform() * spec.rows, rng.uniform() * spec.cols,
                             0.15 * spec.rows * (0.5 + rng.uniform()), 500 + 2000 * rng.uniform()};
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      double alt = 50.0;
      for (const auto& h : hills) {
        const double d2 = (r - h[0]) * (r - h[0]) + (c - h[1]) * (c - h[1]);
        alt += h[3] * std::exp(-d2 / (2 * h[2] * h[2]));
      }
      const double frac = static_cast<double>(r) / static_cast<double>(spec.rows);
      w.value(Channel::ALT, r, c) = alt;
      w.value(Channel::TEM, r, c) = 20.0 - 8.0 * frac - 0.0065 * alt;
      w.value(Channel::PCP, r, c) = 1400.0 - 900.0 * frac + 0.1 * alt;
    }
  }

  const double dsum = std::accumulate(density.begin(), density.end(), 0.0);
  const AgeVector shares = synthetic_age_shares();
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      const double pop = spec.total_population * density[r * spec.cols + c] / dsum;
      for (std::size_t m = 0; m < kAgeGroups; ++m) w.population(r, c, m) = pop * shares[m];
    }
  }

  // Stations: distinct cells drawn with probability proportional to
  // population (weighted sampling without replacement via u^(1/w) keys).
  std::vector<std::pair<double, std::size_t>> keys(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    keys[i] = {std::log(u) / density[i], i};
  }
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < spec.n_stations; ++i) chosen.push_back(keys[i].second);
  std::sort(chosen.begin(), chosen.end());

  auto city_of = [&](std::size_t r, std::size_t c) {
    return "C" + std::to_string(r / spec.city_block) + "_" + std::to_string(c / spec.city_block);
  };
  for (std::size_t n = 0; n < chosen.size(); ++n) {
    const Cell cell{chosen[n] / spec.cols, chosen[n] % spec.cols};
    char id[32];
    std::snprintf(id, sizeof id, "S%04zu", n + 1);
    w.stations().push_back({id, cell, city_of(cell.row, cell.col), 0.0});
  }
  for (const auto& s : w.stations()) {
    if (w.city_population().count(s.city_id)) continue;
    double total = 0.0;
    const std::size_t r0 = (s.cell.row / spec.city_block) * spec.city_block;
    const std::size_t c0 = (s.cell.col / spec.city_block) * spec.city_block;
    for (std::size_t r = r0; r < std::min(r0 + spec.city_block, spec.rows); ++r) {
      for (std::size_t c = c0; c < std::min(c0 + spec.city_block, spec.cols); ++c) {
        for (std::size_t m = 0; m < kAgeGroups; ++m) total += w.population(r, c, m);
      }
    }
    w.city_population()[s.city_id] = total;
  }

  kernel.noise_seed = nn::mix_seed(seed, 0x0B5);
  for (auto& s : w.stations()) s.pm25 = oracle_concentration(w, s, kernel, true);

  // Regions: nearest of n_regions seed points.
  std::vector<std::pair<double, double>> centers(spec.n_regions);
  for (auto& p : centers) p = {rng.uniform() * spec.rows, rng.uniform() * spec.cols};
  out.regions = RegionMap{spec.rows, spec.cols, std::vector<std::string>(cells)};
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t g = 0; g < centers.size(); ++g) {
        const double d = (r - centers[g].first) * (r - centers[g].first) + (c - centers[g].second) * (c - centers[g].second);
        if (d < bd) {
          bd = d;
          best = g;
        }
      }
      out.regions.region[r * spec.cols + c] = "R" + std::to_string(best + 1);
    }
  }
  out.kernel = kernel;
  w.validate();
  return out;
}

/// World files plus regions.csv and the kernel.txt sidecar.
inline std::vector<std::filesystem::path> save_synthetic(const SyntheticWorld& s, const std::filesystem::path& dir) {
  auto written = save_world(s.world, dir);
  write_text(dir / "regions.csv", s.regions.to_csv());
  written.push_back(dir / "regions.csv");
  write_text(dir / "kernel.txt", kernel_to_text(s.kernel));
  written.push_back(dir / "kernel.txt");
  return written;
}

}  // namespace cobenefit

#endif  // COBENEFIT_SYNTHETIC_HPP
