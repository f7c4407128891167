#ifndef COBENEFIT_GEMM_HPP
#define COBENEFIT_GEMM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cobenefit/grid.hpp"
#include "cobenefit/nn/random.hpp"

namespace cobenefit {

/// Concentration-response shape. theta ~ Normal(theta_mean, theta_sd).
struct GemmParams {
  double theta_mean = 0.0;
  double theta_sd = 0.0;
  double alpha = 1.0;
  double mu = 0.0;
  double nu = 1.0;
  double cf = 0.0;  // counterfactual concentration, ug/m3

  void validate() const {
    if (!(theta_sd >= 0) || !(alpha > 0) || !(nu > 0) || !(cf >= 0)) {
      throw std::invalid_argument("GemmParams: require theta_sd >= 0, alpha > 0, nu > 0, cf >= 0");
    }
  }
};

/// Published NCD+LRI curve (external source, not derived here): the
/// global fit without the Chinese cohort. Tests use their own fixtures.
inline GemmParams gemm_ncd_lri_external_defaults() {
  return {0.1430, 0.01807, 1.6, 15.5, 36.8, 2.4};
}

/// T(c) = ln(z/alpha + 1) / (1 + exp(-(z - mu)/nu)), z = max(0, c - cf).
inline double gemm_transform(double c, const GemmParams& g) {
  const double z = std::max(0.0, c - g.cf);
  return std::log(z / g.alpha + 1.0) / (1.0 + std::exp(-(z - g.mu) / g.nu));
}

/// RR(c) = exp(theta * T(c)); exactly 1 for c <= cf.
inline double hazard_ratio(double c, const GemmParams& g, double theta) {
  return std::exp(theta * gemm_transform(c, g));
}

/// E[1/RR(c)] for theta ~ Normal: 1/RR is lognormal, so
/// E = exp(-theta_mean T + theta_sd^2 T^2 / 2).
inline double mean_inverse_rr(double c, const GemmParams& g) {
  const double t = gemm_transform(c, g);
  return std::exp(-g.theta_mean * t + 0.5 * g.theta_sd * g.theta_sd * t * t);
}

using AgeVector = std::array<double, kAgeGroups>;

/// sum_m M_m^B * pop_m: deaths per unit change of 1/RR.
inline double baseline_deaths(const AgeVector& mortality, const AgeVector& population) {
  double a = 0.0;
  for (std::size_t m = 0; m < kAgeGroups; ++m) a += mortality[m] * population[m];
  return a;
}

struct DeathEstimate {
  double mean = 0.0;
  double low = 0.0;   // lower CI bound
  double high = 0.0;  // upper CI bound
};

struct AvoidedDeaths {
  DeathEstimate total;
  std::vector<DeathEstimate> per_station;
};

/// Type-7 (linear interpolation) quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Draws used for the confidence interval. theta is one national parameter,
/// so every station shares the same draws.
inline std::vector<double> theta_draws(const GemmParams& g, std::size_t n, std::uint64_t seed) {
  std::vector<double> out(n);
  nn::Rng rng(nn::mix_seed(seed, 0x7E7A));
  for (double& t : out) t = rng.normal(g.theta_mean, g.theta_sd);
  return out;
}

struct DeathOptions {
  std::size_t draws = 1000;
  std::uint64_t seed = 0;
  double ci_level = 0.95;
};

/// Avoided deaths of scenario 1 relative to scenario 0, positive when
/// c1 < c0. The mean uses the closed form for E[1/RR]; the interval comes
/// from sampling theta and evaluating sum_m M pop (1/RR(c1) - 1/RR(c0)).
inline AvoidedDeaths avoided_deaths(std::span<const double> c0, std::span<const double> c1,
                                    std::span<const AgeVector> population, const AgeVector& mortality,
                                    const GemmParams& g, const DeathOptions& opts = {}) {
  if (c0.size() != c1.size() || c0.size() != population.size()) {
    throw std::invalid_argument("avoided_deaths: size mismatch");
  }
  if (opts.draws == 0) throw std::invalid_argument("avoided_deaths: draws must be >= 1");
  g.validate();
  const auto thetas = theta_draws(g, opts.draws, opts.seed);
  const double tail = 0.5 * (1.0 - opts.ci_level);

  AvoidedDeaths out;
  out.per_station.resize(c0.size());
  std::vector<double> total_draws(opts.draws, 0.0);
  std::vector<double> station_draws(opts.draws);
  for (std::size_t n = 0; n < c0.size(); ++n) {
    const double a = baseline_deaths(mortality, population[n]);
    const double t0 = gemm_transform(c0[n], g);
    const double t1 = gemm_transform(c1[n], g);
    DeathEstimate& e = out.per_station[n];
    e.mean = a * (mean_inverse_rr(c1[n], g) - mean_inverse_rr(c0[n], g));
    for (std::size_t d = 0; d < opts.draws; ++d) {
      station_draws[d] = a * (std::exp(-thetas[d] * t1) - std::exp(-thetas[d] * t0));
      total_draws[d] += station_draws[d];
    }
    e.low = quantile(station_draws, tail);
    e.high = quantile(station_draws, 1.0 - tail);
    out.total.mean += e.mean;
  }
  out.total.low = quantile(total_draws, tail);
  out.total.high = quantile(total_draws, 1.0 - tail);
  return out;
}

// ---------------------------------------------------------------------------

struct VslConfig {
  double base = 8.7e6;          // base-country VSL
  double gdp_per_capita_base = 0;
  double gdp_per_capita_target = 0;
  double elasticity = 0.8;
};

/// VSL = VSL_base * (pcGDP_target / pcGDP_base)^elasticity.
inline double vsl(const VslConfig& c) {
  if (!(c.base > 0) || !(c.gdp_per_capita_base > 0) || !(c.gdp_per_capita_target > 0) || !(c.elasticity >= 0)) {
    throw std::invalid_argument("VslConfig: VSL and per-capita GDP must be positive, elasticity non-negative");
  }
  return c.base * std::pow(c.gdp_per_capita_target / c.gdp_per_capita_base, c.elasticity);
}

}  // namespace cobenefit

#endif  // COBENEFIT_GEMM_HPP
