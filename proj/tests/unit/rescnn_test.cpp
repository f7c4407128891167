#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "cobenefit/rescnn.hpp"
#include "cobenefit/nn/gradcheck.hpp"
#include "cobenefit/search.hpp"
#include "cobenefit/train.hpp"
#include "fd_check.hpp"
#include "fixtures.hpp"

using namespace cobenefit;

TEST(Build, TableExampleOnFullWindow) {
  HyperParams h;
  h.conv_layers = 1;
  h.filters = 20;
  h.conv_kernel = 2;
  h.conv_stride = 2;
  h.pool_kernel = 2;
  h.pool_stride = 2;
  h.fc_layers = 1;
  h.fc_width = 200;
  h.half_extent = 30;
  const ResCnn m = build_model(h, 1);
  EXPECT_EQ(m.net().output_shape({8, 61, 61}), (std::vector<std::size_t>{1}));
}

TEST(Build, UnderflowNamesTheBlock) {
  HyperParams h;
  h.conv_layers = 5;
  h.conv_kernel = 6;
  h.conv_stride = 2;
  h.half_extent = 10;
  try {
    build_model(h, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv block"), std::string::npos) << e.what();
  }
}

TEST(Build, SameSeedSameParameters) {
  HyperParams h = fixtures::small_hyper();
  ResCnn a = build_model(h, 3), b = build_model(h, 3), c = build_model(h, 4);
  const auto pa = a.trainable(), pb = b.trainable(), pc = c.trainable();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(fixtures::vec(*pa[i]), fixtures::vec(*pb[i]));
    differs |= fixtures::vec(*pa[i]) != fixtures::vec(*pc[i]);
  }
  EXPECT_TRUE(differs);
}

TEST(Build, EveryPrunedGridCombinationBuilds) {
  const auto combos = enumerate_grid(pruned_search_space(), HyperParams{});
  ASSERT_EQ(combos.size(), 384u);
  std::size_t failures = 0;
  for (const auto& h : combos) {
    try {
      HyperParams shape_only = h;
      const ResCnn m = build_model(shape_only, 0);
      failures += m.net().output_shape({8, 61, 61}) != std::vector<std::size_t>{1};
    } catch (const ShapeError&) {
      ++failures;
    }
  }
  EXPECT_EQ(failures, 0u);
}

TEST(Predict, DecompositionAndZeroedBranches) {
  auto s = fixtures::make_setup(5);
  ResCnn m = build_model(fixtures::small_hyper(), 2);
  EXPECT_THROW(predict(m, s.stacks[0]), std::invalid_argument);
  fit_training_stats(m, s.samples);
  for (const auto& st : s.stacks) {
    const auto p = predict(m, st);
    EXPECT_EQ(p.value, p.cnn + p.linear);
  }

  ResCnn cnn_off = m;
  for (nn::Tensor* p : cnn_off.net().params()) p->fill(0.0);
  const auto p0 = predict(cnn_off, s.stacks[3]);
  EXPECT_EQ(p0.cnn, 0.0);
  EXPECT_EQ(p0.value, linear_output(cnn_off, s.stacks[3]));

  ResCnn lin_off = m;
  lin_off.linear().weight.fill(0.0);
  lin_off.linear().intercept.fill(0.0);
  const auto p1 = predict(lin_off, s.stacks[3]);
  EXPECT_EQ(p1.linear, lin_off.target().mean);
  EXPECT_EQ(p1.value, p1.cnn + lin_off.target().mean);
}

TEST(Predict, WindowSizeMismatchIsShapeError) {
  auto s = fixtures::make_setup(5, 3);
  ResCnn m = build_model(fixtures::small_hyper(), 2);
  m.set_has_training_stats(true);
  EXPECT_THROW(predict(m, s.stacks[0]), ShapeError);
}

TEST(InputGradient, LinearOnlyModelIsUniformPerChannel) {
  auto s = fixtures::make_setup(6);
  HyperParams h = fixtures::small_hyper();
  h.cnn_enabled = false;
  ResCnn m = build_model(h, 1);
  fit_training_stats(m, s.samples);
  const auto& g = input_gradient(m, s.stacks[0]);
  const std::size_t n = s.stacks[0].plane();
  for (std::size_t k = 0; k < kChannels; ++k) {
    const double expect = m.target().scale * m.linear().weight[k] / (m.linear().feature_scale[k] * n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(g[k * n + i], expect, 1e-15 * std::abs(expect) + 1e-300);
  }
}

TEST(InputGradient, MatchesFiniteDifferencesOnTrainedModel) {
  auto s = fixtures::make_setup(7);
  HyperParams h = fixtures::small_hyper();
  h.batchnorm = true;
  h.dropout = true;
  ResCnn m = build_model(h, 9);
  train(m, s.samples, fixtures::seeded(3));
  nn::Rng rng(21);
  const double worst = fdcheck::worst_input_error(m, s.stacks, rng, 100);
  EXPECT_LT(worst, 1e-4);
}

TEST(Augment, SymmetriesArePermutations) {
  nn::Rng rng(3);
  nn::Tensor x({2, 5, 5});
  for (double& v : x.values()) v = rng.normal();
  EXPECT_EQ(fixtures::vec(apply_symmetry(apply_symmetry(x, Symmetry::kRot180), Symmetry::kRot180)), fixtures::vec(x));
  EXPECT_EQ(fixtures::vec(apply_symmetry(apply_symmetry(x, Symmetry::kRot90), Symmetry::kRot270)), fixtures::vec(x));
  EXPECT_EQ(fixtures::vec(apply_symmetry(x, Symmetry::kIdentity)), fixtures::vec(x));
  for (std::size_t sym = 0; sym < kSymmetryCount; ++sym) {
    const auto y = apply_symmetry(x, static_cast<Symmetry>(sym));
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<double> a(x.data() + k * 25, x.data() + (k + 1) * 25), b(y.data() + k * 25, y.data() + (k + 1) * 25);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
    }
  }
  // Centre cell is fixed by every symmetry.
  nn::Rng r2(4);
  const auto z = augment(x, r2, 0.0);
  EXPECT_EQ(z[12], x[12]);
}

TEST(Augment, NoiseVarianceMatchesEps) {
  const nn::Tensor x({1, 1001, 1001}, 0.0);
  nn::Rng rng(8);
  const auto y = augment(x, rng, 0.1);
  double m = 0.0, v = 0.0;
  for (double e : y.values()) m += e;
  m /= y.size();
  for (double e : y.values()) v += (e - m) * (e - m);
  v /= y.size();
  EXPECT_NEAR(v, 0.1, 0.005);
}

TEST(ModelBundle, RoundTripPredictsIdentically) {
  auto s = fixtures::make_setup(5);
  HyperParams h = fixtures::small_hyper();
  h.batchnorm = true;
  h.iterations = 5;
  ResCnn m = build_model(h, 2);
  train(m, s.samples, fixtures::seeded(1));
  const auto dir = fixtures::temp_dir("model_bundle");
  save_model(m, dir);
  const ResCnn back = load_model(dir);
  EXPECT_EQ(back.hyper(), m.hyper());
  for (const auto& st : s.stacks) EXPECT_EQ(predict(back, st).value, predict(m, st).value);

  write_text(dir / "model.txt", read_text(dir / "model.txt") + "conv_layers = 2\n");
  EXPECT_ANY_THROW(load_model(dir));
}
