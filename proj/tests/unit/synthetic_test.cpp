#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cobenefit/synthetic.hpp"
#include "fixtures.hpp"

using namespace cobenefit;

namespace {

OracleKernel plain_kernel() {
  OracleKernel k;
  k.beta = {1.0, 2.0, 0.5, 0.25, 3.0};
  k.lambda_km = 30.0;
  k.geo = {0.01, -0.2, 0.003};
  k.intercept = 5.0;
  k.noise_rel = 0.0;
  k.cutoff_cells = 4;
  return k;
}

World flat_world(std::size_t n) {
  World w(n, n);
  nn::Rng rng(4);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      w.value(Channel::ALT, r, c) = 100 * rng.uniform();
      w.value(Channel::TEM, r, c) = 10 + rng.uniform();
      w.value(Channel::PCP, r, c) = 50 * rng.uniform();
    }
  }
  return w;
}

double baseline(const World& w, Cell at, const OracleKernel& k) {
  return k.intercept + k.geo[0] * w.value(Channel::ALT, at.row, at.col) +
         k.geo[1] * w.value(Channel::TEM, at.row, at.col) + k.geo[2] * w.value(Channel::PCP, at.row, at.col);
}

}  // namespace

TEST(Generator, SameSeedGivesIdenticalFiles) {
  const auto a = fixtures::temp_dir("gen_a"), b = fixtures::temp_dir("gen_b");
  const auto fa = save_synthetic(generate_world(7, fixtures::small_spec(), fixtures::small_kernel()), a);
  const auto fb = save_synthetic(generate_world(7, fixtures::small_spec(), fixtures::small_kernel()), b);
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_EQ(fa[i].filename(), fb[i].filename());
    EXPECT_EQ(fixtures::slurp(fa[i]), fixtures::slurp(fb[i])) << fa[i];
  }
  const auto c = fixtures::temp_dir("gen_c");
  const auto fc = save_synthetic(generate_world(8, fixtures::small_spec(), fixtures::small_kernel()), c);
  EXPECT_NE(fixtures::slurp(fa[0]), fixtures::slurp(fc[0]));
}

TEST(Generator, StationInEveryCell) {
  WorldSpec spec = fixtures::small_spec();
  spec.rows = spec.cols = 8;
  spec.n_stations = 64;
  const auto sw = generate_world(3, spec, fixtures::small_kernel());
  std::set<std::pair<std::size_t, std::size_t>> cells;
  for (const auto& s : sw.world.stations()) cells.insert({s.cell.row, s.cell.col});
  EXPECT_EQ(cells.size(), 64u);
  spec.n_stations = 65;
  EXPECT_THROW(generate_world(3, spec, fixtures::small_kernel()), DomainError);
}

TEST(Generator, ObservationsFollowKernel) {
  OracleKernel k = fixtures::small_kernel();
  k.noise_rel = 0.0;
  const auto sw = generate_world(9, fixtures::small_spec(), k);
  for (const auto& s : sw.world.stations()) {
    EXPECT_NEAR(s.pm25, oracle_concentration(sw.world, s, k), 1e-9 * std::abs(s.pm25));
  }
  EXPECT_GT(sw.world.stations().size(), 0u);
}

TEST(Oracle, ZeroEmissionsGiveGeographyBaseline) {
  const World w = flat_world(9);
  const OracleKernel k = plain_kernel();
  for (std::size_t r = 0; r < 9; r += 2) {
    EXPECT_NEAR(oracle_concentration_at(w, {r, 4}, k), baseline(w, {r, 4}, k), 1e-12);
  }
}

TEST(Oracle, SingleSourceAddsBeta) {
  World w = flat_world(9);
  w.value(Channel::IDC, 4, 4) = 1.0;
  const OracleKernel k = plain_kernel();
  EXPECT_NEAR(oracle_concentration_at(w, {4, 4}, k), baseline(w, {4, 4}, k) + 2.0, 1e-12);
  EXPECT_NEAR(oracle_concentration_at(w, {4, 7}, k), baseline(w, {4, 7}, k) + 2.0 * std::exp(-1.0), 1e-12);
  EXPECT_NEAR(oracle_concentration_at(w, {4, 0}, k), baseline(w, {4, 0}, k) + 2.0 * std::exp(-4.0 / 3.0), 1e-12);
}

TEST(Oracle, MarginalIsKernel) {
  const World w = flat_world(9);
  const OracleKernel k = plain_kernel();
  const Station s{"S", {4, 4}, "C", 0.0};
  EXPECT_DOUBLE_EQ(oracle_marginal(w, s, {4, 4}, Channel::IDC, k), 2.0);
  EXPECT_DOUBLE_EQ(oracle_marginal(w, s, {1, 4}, Channel::TRN, k), 3.0 * std::exp(-1.0));
  EXPECT_EQ(oracle_marginal(w, s, {0, 8}, Channel::IDC, k), kernel_weight(w, k, {4, 4}, {0, 8}) * 2.0);
  EXPECT_THROW(oracle_marginal(w, s, {4, 4}, Channel::TEM, k), DomainError);
}

TEST(Oracle, LinearInEmissionsAndMarginalsIndependentOfLevel) {
  const OracleKernel k = plain_kernel();
  World a = flat_world(11), b = flat_world(11), ab = flat_world(11);
  nn::Rng rng(6);
  for (Channel ch : kEmissionChannelList) {
    for (std::size_t r = 0; r < 11; ++r) {
      for (std::size_t c = 0; c < 11; ++c) {
        a.value(ch, r, c) = rng.uniform();
        b.value(ch, r, c) = rng.uniform();
        ab.value(ch, r, c) = 2.0 * a.value(ch, r, c) + 3.0 * b.value(ch, r, c);
      }
    }
  }
  const World zero = flat_world(11);
  const Cell at{5, 5};
  const double base = oracle_concentration_at(zero, at, k);
  const double ea = oracle_concentration_at(a, at, k) - base;
  const double eb = oracle_concentration_at(b, at, k) - base;
  const double eab = oracle_concentration_at(ab, at, k) - base;
  EXPECT_NEAR(eab, 2.0 * ea + 3.0 * eb, 1e-12 * std::abs(eab));
  const Station s{"S", at, "C", 0.0};
  for (std::size_t r = 0; r < 11; ++r) {
    EXPECT_EQ(oracle_marginal(a, s, {r, 3}, Channel::SVC, k), oracle_marginal(zero, s, {r, 3}, Channel::SVC, k));
  }
}

TEST(Oracle, SaturationReducesSlope) {
  World w = flat_world(9);
  w.value(Channel::IDC, 4, 4) = 5.0;
  OracleKernel k = plain_kernel();
  k.saturation = 4.0;
  const Station s{"S", {4, 4}, "C", 0.0};
  const double e = 10.0;
  EXPECT_NEAR(oracle_concentration_at(w, {4, 4}, k), baseline(w, {4, 4}, k) + 4.0 * (1 - std::exp(-e / 4.0)), 1e-12);
  EXPECT_NEAR(oracle_marginal(w, s, {4, 4}, Channel::IDC, k), 2.0 * std::exp(-e / 4.0), 1e-12);
}

TEST(Oracle, DistanceCurveShape) {
  // Cumulative marginal mass within radius r of a station.
  World w = flat_world(41);
  OracleKernel k = plain_kernel();
  k.cutoff_cells = 20;
  k.lambda_km = 15.0;
  auto curve = [&](const OracleKernel& kern) {
    std::vector<double> out;
    for (long rad = 0; rad <= 20; ++rad) {
      double s = 0.0;
      for (long dr = -rad; dr <= rad; ++dr) {
        for (long dc = -rad; dc <= rad; ++dc) s += kernel_weight(w, kern, {20, 20}, {std::size_t(20 + dr), std::size_t(20 + dc)});
      }
      out.push_back(s);
    }
    return out;
  };
  const auto c = curve(k);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GT(c[i], c[i - 1]);
  for (std::size_t i = 4; i + 1 < c.size(); ++i) EXPECT_LT(c[i + 1] - c[i], c[i] - c[i - 1]) << i;
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GT(c[i] - c[i - 1], 0.0);
}

TEST(Kernel, TextRoundTrip) {
  OracleKernel k = plain_kernel();
  k.noise_rel = 0.07;
  k.noise_seed = 123456789012345ULL;
  k.saturation = 12.5;
  k.beta[3] = 1.0 / 3.0;
  const auto text = kernel_to_text(k);
  const OracleKernel back = kernel_from_config(KeyValueConfig::parse(text));
  EXPECT_EQ(back.beta, k.beta);
  EXPECT_EQ(back.geo, k.geo);
  EXPECT_EQ(back.lambda_km, k.lambda_km);
  EXPECT_EQ(back.intercept, k.intercept);
  EXPECT_EQ(back.noise_rel, k.noise_rel);
  EXPECT_EQ(back.noise_seed, k.noise_seed);
  EXPECT_EQ(back.cutoff_cells, k.cutoff_cells);
  EXPECT_EQ(back.saturation, k.saturation);
  EXPECT_EQ(kernel_to_text(back), text);
  OracleKernel bad = k;
  bad.lambda_km = 0.0;
  EXPECT_THROW(bad.validate(), DomainError);
}

TEST(Kernel, CutoffIsChebyshev) {
  const World w = flat_world(21);
  OracleKernel k = plain_kernel();
  k.cutoff_cells = 3;
  EXPECT_GT(kernel_weight(w, k, {10, 10}, {13, 13}), 0.0);
  EXPECT_EQ(kernel_weight(w, k, {10, 10}, {14, 10}), 0.0);
  EXPECT_EQ(kernel_weight(w, k, {10, 10}, {7, 6}), 0.0);
}
