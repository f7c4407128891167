#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "cobenefit/nn/checkpoint.hpp"
#include "cobenefit/nn/gradcheck.hpp"
#include "cobenefit/nn/optim.hpp"
#include "cobenefit/nn/sequential.hpp"
#include "fd_check.hpp"
#include "fixtures.hpp"

using namespace cobenefit::nn;

namespace {

using fdcheck::random_tensor;
using fdcheck::worst_layer_error;

void randomize_params(Sequential& s, Rng& rng) {
  for (Tensor* p : s.params()) {
    for (double& v : p->values()) v = rng.normal();
  }
}

}  // namespace

TEST(Conv2d, OutputShapeFormula) {
  Conv2d conv(8, 4, 3, 2);
  EXPECT_EQ(conv.output_shape({8, 61, 61}), (std::vector<std::size_t>{4, 30, 30}));
  EXPECT_THROW(conv.output_shape({8, 2, 2}), ShapeError);
  EXPECT_THROW(conv.output_shape({7, 61, 61}), ShapeError);
  EXPECT_THROW(Conv2d(1, 1, 0, 1), std::invalid_argument);
  EXPECT_THROW(Conv2d(1, 1, 1, 0), std::invalid_argument);
}

TEST(Conv2d, OneByOneIsAffine) {
  Sequential s;
  Conv2d conv(1, 1, 1, 1);
  (*conv.params()[0])[0] = 2.5;
  (*conv.params()[1])[0] = -0.75;
  s.add(conv);
  Tape tape;
  const Tensor y = s.forward(Tensor({1, 1, 1, 1}, std::vector<double>{4.0}), Mode::kEval, tape);
  EXPECT_DOUBLE_EQ(y[0], 2.5 * 4.0 - 0.75);
}

TEST(MaxPool2d, BlockMaxima) {
  Sequential s;
  s.add(MaxPool2d(2, 2));
  Tensor x({1, 1, 4, 4});
  const double v[16] = {1, 5, 2, 0, 3, 4, 8, 7, 9, 6, 10, 11, 12, 13, 15, 14};
  for (int i = 0; i < 16; ++i) x[i] = v[i];
  Tape tape;
  const Tensor y = s.forward(x, Mode::kEval, tape);
  EXPECT_EQ(fixtures::vec(y), (std::vector<double>{5, 8, 13, 15}));
  EXPECT_THROW(MaxPool2d(5, 1).output_shape({1, 4, 4}), ShapeError);
}

TEST(MaxPool2d, TiesRouteToFirstElement) {
  Sequential s;
  s.add(MaxPool2d(2, 2));
  const Tensor x({1, 1, 4, 4}, 3.0);
  Tape tape;
  const Tensor y = s.forward(x, Mode::kEval, tape);
  for (double v : fixtures::vec(y)) EXPECT_EQ(v, 3.0);
  const Tensor gx = s.backward(Tensor(y.shape(), 1.0), tape, nullptr);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(gx[i * 4 + j], (i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0);
  }
}

TEST(BatchNorm2d, TrainModeNeedsTwoSamples) {
  Sequential s;
  s.add(BatchNorm2d(2));
  Tape tape;
  EXPECT_THROW(s.forward(Tensor({1, 2, 3, 3}, 1.0), Mode::kTrain, tape), std::invalid_argument);
  EXPECT_NO_THROW(s.forward(Tensor({1, 2, 3, 3}, 1.0), Mode::kEval, tape));
}

TEST(Dropout, RateZeroIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 10}, rng);
  Sequential s;
  s.add(Dropout(0.0));
  const std::uint64_t seeds[] = {1, 2, 3};
  for (Mode m : {Mode::kTrain, Mode::kEval}) {
    Tape tape;
    EXPECT_EQ(fixtures::vec(s.forward(x, m, tape, seeds)), fixtures::vec(x));
  }
  EXPECT_THROW(Dropout(1.0), std::invalid_argument);
  EXPECT_THROW(Dropout(-0.1), std::invalid_argument);
}

TEST(Dropout, MaskFollowsSampleSeedNotBatchPosition) {
  Rng rng(2);
  const Tensor a = random_tensor({1, 50}, rng), b = random_tensor({1, 50}, rng);
  Tensor ab({2, 50}), ba({2, 50});
  for (std::size_t i = 0; i < 50; ++i) {
    ab[i] = a[i];
    ab[50 + i] = b[i];
    ba[i] = b[i];
    ba[50 + i] = a[i];
  }
  Sequential s;
  s.add(Dropout(0.5));
  const std::uint64_t s_ab[] = {11, 22}, s_ba[] = {22, 11};
  Tape t1, t2;
  const Tensor y1 = s.forward(ab, Mode::kTrain, t1, s_ab);
  const Tensor y2 = s.forward(ba, Mode::kTrain, t2, s_ba);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(y1[i], y2[50 + i]);
    EXPECT_EQ(y1[50 + i], y2[i]);
    EXPECT_TRUE(y1[i] == 0.0 || y1[i] == 2.0 * a[i]);
    dropped += y1[i] == 0.0;
  }
  EXPECT_GT(dropped, 10u);
  EXPECT_LT(dropped, 40u);
}

TEST(LayerGradients, EveryLayerMatchesFiniteDifferences) {
  Rng rng(7);
  struct Case {
    const char* name;
    std::function<Sequential()> make;
    std::vector<std::size_t> input;
    Mode mode;
  };
  const std::vector<Case> cases = {
      {"conv k2 s2", [] { Sequential s; s.add(Conv2d(2, 3, 2, 2)); return s; }, {2, 2, 7, 7}, Mode::kEval},
      {"conv k3 s1", [] { Sequential s; s.add(Conv2d(3, 2, 3, 1)); return s; }, {2, 3, 6, 6}, Mode::kEval},
      {"maxpool", [] { Sequential s; s.add(MaxPool2d(2, 2)); return s; }, {2, 2, 7, 7}, Mode::kEval},
      {"maxpool overlapping", [] { Sequential s; s.add(MaxPool2d(3, 1)); return s; }, {1, 2, 6, 6}, Mode::kEval},
      {"batchnorm train", [] { Sequential s; s.add(BatchNorm2d(3)); return s; }, {4, 3, 3, 3}, Mode::kTrain},
      {"batchnorm eval", [] { Sequential s; s.add(BatchNorm2d(3)); return s; }, {2, 3, 3, 3}, Mode::kEval},
      {"dropout train", [] { Sequential s; s.add(Dropout(0.3)); return s; }, {3, 20}, Mode::kTrain},
      {"dense", [] { Sequential s; s.add(Dense(12, 5)); return s; }, {3, 12}, Mode::kEval},
      {"dense on images", [] { Sequential s; s.add(Dense(18, 2)); return s; }, {2, 2, 3, 3}, Mode::kEval},
      {"relu", [] { Sequential s; s.add(Relu{}); return s; }, {3, 30}, Mode::kEval},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      Sequential s = c.make();
      randomize_params(s, rng);
      for (Tensor* p : s.params()) {
        if (p->shape().size() == 1 && c.name == std::string("batchnorm eval")) {
          for (double& v : p->values()) v = 1.0 + 0.3 * rng.normal();
        }
      }
      worst = std::max(worst, worst_layer_error(s, random_tensor(c.input, rng), c.mode, rng, 10).worst);
    }
    EXPECT_LT(worst, 1e-6) << c.name;
  }
}

TEST(LayerGradients, StackedNetworkMatchesFiniteDifferences) {
  Rng rng(9);
  Sequential s;
  s.add(Conv2d(8, 4, 2, 2));
  s.add(BatchNorm2d(4));
  s.add(Relu{});
  s.add(MaxPool2d(2, 2));
  s.add(Dropout(0.2));
  s.add(Dense(100, 6));
  s.add(Relu{});
  s.add(Dense(6, 1));
  randomize_params(s, rng);
  EXPECT_LT(worst_layer_error(s, random_tensor({3, 8, 21, 21}, rng), Mode::kTrain, rng, 100).worst, 1e-4);
}

TEST(LayerGradients, TiedPoolMaximaAreRedrawnNotScored) {
  Rng rng(4);
  Sequential s;
  s.add(MaxPool2d(2, 2));
  Tensor x({2, 1, 6, 6});
  for (std::size_t i = 0; i < x.size(); i += 3) x[i] = 1.0 + rng.uniform();
  const auto c = worst_layer_error(s, x, Mode::kEval, rng, 30);
  EXPECT_GT(c.skipped, 0);
  EXPECT_LT(c.worst, 1e-6);
}

TEST(Sequential, EvalForwardIsPure) {
  Rng rng(4);
  Sequential s;
  s.add(Conv2d(2, 3, 2, 1));
  s.add(BatchNorm2d(3));
  s.add(Relu{});
  s.add(Dropout(0.5));
  s.add(Dense(48, 1));
  randomize_params(s, rng);
  const Tensor x = random_tensor({2, 2, 5, 5}, rng);
  Tape t1, t2;
  EXPECT_EQ(fixtures::vec(s.forward(x, Mode::kEval, t1)), fixtures::vec(s.forward(x, Mode::kEval, t2)));
  EXPECT_THROW(s.output_shape({2, 1, 1}), ShapeError);
}

TEST(HeInit, VarianceAndDeterminism) {
  const Tensor w = he_init({1000000}, 2, 17);
  double m = 0, v = 0;
  for (double x : w.values()) m += x;
  m /= w.size();
  for (double x : w.values()) v += (x - m) * (x - m);
  v /= w.size();
  EXPECT_NEAR(v, 1.0, 0.01);
  EXPECT_EQ(fixtures::vec(he_init({50}, 3, 5)), fixtures::vec(he_init({50}, 3, 5)));
  EXPECT_NE(fixtures::vec(he_init({50}, 3, 5)), fixtures::vec(he_init({50}, 3, 6)));
  EXPECT_THROW(he_init({3}, 0, 1), std::invalid_argument);
  Dense d(4, 3);
  for (double b : d.params()[1]->values()) EXPECT_EQ(b, 0.0);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p({3}, std::vector<double>{1, -2, 3});
  const Tensor before = p;
  Adam adam({0.1, 0.9, 0.999, 1e-8});
  Tensor* params[] = {&p};
  const Tensor g({3});
  adam.step(params, std::span<const Tensor>(&g, 1));
  EXPECT_EQ(fixtures::vec(p), fixtures::vec(before));
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, TwoStepsMatchHandEvaluation) {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.5;
  Tensor p({1}, std::vector<double>{2.0});
  Adam adam({lr, b1, b2, eps});
  Tensor* params[] = {&p};
  const Tensor grad({1}, std::vector<double>{g});
  double expect = 2.0, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    adam.step(params, std::span<const Tensor>(&grad, 1));
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    expect -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(p[0], expect, 1e-15);
  }
  // With a constant gradient each step moves by lr * g / (|g| + eps), about lr.
  EXPECT_NEAR(p[0], 2.0 - 2 * lr, 1e-9);
}

TEST(Adam, NonFiniteGradientNamesTheLayer) {
  Tensor p({2});
  Adam adam;
  Tensor* params[] = {&p};
  const Tensor g({2}, std::vector<double>{0.0, std::numeric_limits<double>::quiet_NaN()});
  const std::string names[] = {"layer 3 (dense) param 0"};
  try {
    adam.step(params, std::span<const Tensor>(&g, 1), names);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 3 (dense)"), std::string::npos);
  }
}

TEST(GradCheck, ScalarFunctions) {
  const double x[] = {3.0}, dir[] = {1.0};
  auto square = [](std::span<const double> p) { return p[0] * p[0]; };
  const auto r = finite_diff_check(square, x, dir, 6.0, 1e-5);
  EXPECT_NEAR(r.numeric, 6.0, 1e-8);
  EXPECT_LT(r.rel_err, 1e-9);
  auto constant = [](std::span<const double>) { return 4.2; };
  const auto c = finite_diff_check(constant, x, dir, 0.0);
  EXPECT_EQ(c.numeric, 0.0);
  EXPECT_EQ(c.rel_err, 0.0);
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(5);
  std::vector<NamedTensor> entries = {{"a", random_tensor({2, 3, 4, 5}, rng)}, {"b", random_tensor({7}, rng)},
                                      {"empty-ish", Tensor({1}, std::vector<double>{-0.0})}};
  entries[1].tensor[3] = std::numeric_limits<double>::denorm_min();
  const auto dir = fixtures::temp_dir("checkpoint");
  write_checkpoint((dir / "m.ckpt").string(), entries);
  const auto back = read_checkpoint((dir / "m.ckpt").string());
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    EXPECT_EQ(back[i].name, entries[i].name);
    EXPECT_EQ(back[i].tensor.shape(), entries[i].tensor.shape());
    EXPECT_EQ(std::memcmp(back[i].tensor.data(), entries[i].tensor.data(), entries[i].tensor.size() * sizeof(double)),
              0);
  }
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(entries));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string good = encode_checkpoint({{"w", Tensor({2, 2}, 1.5)}});
  std::string flipped = good;
  flipped[20] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped), CheckpointError);
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), CheckpointError);
  EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 9)), CheckpointError);
  EXPECT_THROW(read_checkpoint("/nonexistent/dir/m.ckpt"), CheckpointError);
}
