#ifndef COBENEFIT_RESCNN_HPP
#define COBENEFIT_RESCNN_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cobenefit/grid.hpp"
#include "cobenefit/io.hpp"
#include "cobenefit/nn/checkpoint.hpp"
#include "cobenefit/nn/layers.hpp"
#include "cobenefit/nn/optim.hpp"
#include "cobenefit/nn/random.hpp"
#include "cobenefit/nn/sequential.hpp"

namespace cobenefit {

using nn::Mode;
using nn::ShapeError;

/// Architecture and training choices. Field names double as search
/// dimension names (see hyper_field_names()).
struct HyperParams {
  int iterations = 500;  // epochs over the training split
  int batch_size = 200;
  int conv_layers = 1;
  int filters = 20;
  int conv_kernel = 2;
  int conv_stride = 2;
  int pool_kernel = 2;
  int pool_stride = 2;
  bool dropout = false;
  double dropout_rate = 0.1;
  bool batchnorm = false;
  int fc_layers = 1;
  int fc_width = 200;
  bool augmentation = false;
  double augmentation_eps = 0.05;
  double learning_rate = 1e-3;
  int half_extent = 30;
  bool cnn_enabled = true;  // false: linear branch only

  bool operator==(const HyperParams&) const = default;
};

inline const std::vector<std::string>& hyper_field_names() {
  static const std::vector<std::string> names = {
      "iterations",  "batch_size",  "conv_layers", "filters",   "conv_kernel",  "conv_stride",
      "pool_kernel", "pool_stride", "dropout",     "dropout_rate", "batchnorm", "fc_layers",
      "fc_width",    "augmentation", "augmentation_eps", "learning_rate", "half_extent", "cnn_enabled"};
  return names;
}

inline double get_field(const HyperParams& h, const std::string& name) {
  if (name == "iterations") return h.iterations;
  if (name == "batch_size") return h.batch_size;
  if (name == "conv_layers") return h.conv_layers;
  if (name == "filters") return h.filters;
  if (name == "conv_kernel") return h.conv_kernel;
  if (name == "conv_stride") return h.conv_stride;
  if (name == "pool_kernel") return h.pool_kernel;
  if (name == "pool_stride") return h.pool_stride;
  if (name == "dropout") return h.dropout ? 1.0 : 0.0;
  if (name == "dropout_rate") return h.dropout_rate;
  if (name == "batchnorm") return h.batchnorm ? 1.0 : 0.0;
  if (name == "fc_layers") return h.fc_layers;
  if (name == "fc_width") return h.fc_width;
  if (name == "augmentation") return h.augmentation ? 1.0 : 0.0;
  if (name == "augmentation_eps") return h.augmentation_eps;
  if (name == "learning_rate") return h.learning_rate;
  if (name == "half_extent") return h.half_extent;
  if (name == "cnn_enabled") return h.cnn_enabled ? 1.0 : 0.0;
  throw std::invalid_argument("unknown hyperparameter '" + name + "'");
}

inline void set_field(HyperParams& h, const std::string& name, double v) {
  const int i = static_cast<int>(std::lround(v));
  if (name == "iterations") h.iterations = i;
  else if (name == "batch_size") h.batch_size = i;
  else if (name == "conv_layers") h.conv_layers = i;
  else if (name == "filters") h.filters = i;
  else if (name == "conv_kernel") h.conv_kernel = i;
  else if (name == "conv_stride") h.conv_stride = i;
  else if (name == "pool_kernel") h.pool_kernel = i;
  else if (name == "pool_stride") h.pool_stride = i;
  else if (name == "dropout") h.dropout = v != 0.0;
  else if (name == "dropout_rate") h.dropout_rate = v;
  else if (name == "batchnorm") h.batchnorm = v != 0.0;
  else if (name == "fc_layers") h.fc_layers = i;
  else if (name == "fc_width") h.fc_width = i;
  else if (name == "augmentation") h.augmentation = v != 0.0;
  else if (name == "augmentation_eps") h.augmentation_eps = v;
  else if (name == "learning_rate") h.learning_rate = v;
  else if (name == "half_extent") h.half_extent = i;
  else if (name == "cnn_enabled") h.cnn_enabled = v != 0.0;
  else throw std::invalid_argument("unknown hyperparameter '" + name + "'");
}

inline void validate(const HyperParams& h) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid hyperparameters: " + what);
  };
  require(h.iterations >= 0, "iterations < 0");
  require(h.batch_size >= 1, "batch_size < 1");
  require(h.half_extent >= 0, "half_extent < 0");
  require(h.learning_rate > 0, "learning_rate <= 0");
  require(h.augmentation_eps >= 0, "augmentation_eps < 0");
  if (!h.cnn_enabled) return;
  require(h.conv_layers >= 0 && h.fc_layers >= 0, "negative layer count");
  require(h.filters >= 1 && h.fc_width >= 1, "filters/fc_width < 1");
  require(h.conv_kernel >= 1 && h.conv_stride >= 1 && h.pool_kernel >= 1 && h.pool_stride >= 1,
          "kernel/stride < 1");
  require(h.dropout_rate >= 0 && h.dropout_rate < 1, "dropout_rate outside [0,1)");
}

// ---------------------------------------------------------------------------

/// Linear branch over channel means, standardized with training-set
/// statistics of those means.
struct LinearBranch {
  nn::Tensor weight{{kChannels}};
  nn::Tensor intercept{{1}};
  std::array<double, kChannels> feature_mean{};
  std::array<double, kChannels> feature_scale{};  // std of channel means; 1 when degenerate

  double feature(const GridStack& s, std::size_t k) const { return (s.mean[k] - feature_mean[k]) / feature_scale[k]; }
};

/// Output scaling. Both branches are expressed in concentration units:
/// f_c = scale * net(z), f_l = mean + scale * (b + w . u).
struct TargetScaling {
  double mean = 0.0;
  double scale = 1.0;
};

struct Prediction {
  std::string station_id;
  double value = 0.0;  // f_c + f_l, ug/m3
  double cnn = 0.0;
  double linear = 0.0;
};

class ResCnn {
 public:
  ResCnn() = default;

  const HyperParams& hyper() const { return hyper_; }
  const nn::Sequential& net() const { return net_; }
  nn::Sequential& net() { return net_; }
  const LinearBranch& linear() const { return linear_; }
  LinearBranch& linear() { return linear_; }
  const TargetScaling& target() const { return target_; }
  TargetScaling& target() { return target_; }
  bool has_training_stats() const { return has_stats_; }
  void set_has_training_stats(bool v) { has_stats_ = v; }

  std::size_t window_side() const { return 2 * static_cast<std::size_t>(hyper_.half_extent) + 1; }

  /// Trainable tensors: network parameters then linear weights, intercept.
  std::vector<nn::Tensor*> trainable() {
    auto p = net_.params();
    p.push_back(&linear_.weight);
    p.push_back(&linear_.intercept);
    return p;
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < net_.size(); ++i) {
      const auto count = std::visit([](const auto& l) { return l.params().size(); }, net_.layer(i));
      for (std::size_t j = 0; j < count; ++j) {
        names.push_back("layer " + std::to_string(i) + " (" + nn::layer_kind(net_.layer(i)) + ") param " +
                        std::to_string(j));
      }
    }
    names.push_back("linear branch weights");
    names.push_back("linear branch intercept");
    return names;
  }

  friend ResCnn build_model(const HyperParams& hyper, std::uint64_t seed);

 private:
  HyperParams hyper_;
  nn::Sequential net_;
  LinearBranch linear_;
  TargetScaling target_;
  bool has_stats_ = false;
};

/// Assembles the network for `hyper` on a (2h+1)^2 x 8 window:
/// [conv -> (batchnorm) -> relu -> maxpool -> (dropout)] x conv_layers,
/// flatten, [dense -> relu -> (dropout)] x fc_layers, dense -> scalar.
/// Weights are He-initialized, biases zero. Throws ShapeError naming the
/// first block whose input is too small.
inline ResCnn build_model(const HyperParams& hyper, std::uint64_t seed) {
  validate(hyper);
  ResCnn model;
  model.hyper_ = hyper;
  std::uint64_t stream = 0;
  auto next_seed = [&] { return nn::mix_seed(seed, ++stream); };

  model.linear_.weight = nn::he_init({kChannels}, kChannels, next_seed());
  model.linear_.feature_scale.fill(1.0);

  if (!hyper.cnn_enabled) return model;

  const std::size_t side = model.window_side();
  std::vector<std::size_t> shape = {kChannels, side, side};
  auto push = [&](nn::Layer layer, const std::string& where) {
    try {
      shape = std::visit([&](const auto& l) { return l.output_shape(shape); }, layer);
    } catch (const ShapeError& e) {
      throw ShapeError(where + ": " + e.what());
    }
    model.net_.add(std::move(layer));
  };

  for (int b = 0; b < hyper.conv_layers; ++b) {
    const std::string where = "conv block " + std::to_string(b + 1);
    nn::Conv2d conv(shape[0], static_cast<std::size_t>(hyper.filters), static_cast<std::size_t>(hyper.conv_kernel),
                    static_cast<std::size_t>(hyper.conv_stride));
    *conv.params()[0] = nn::he_init(conv.params()[0]->shape(), conv.fan_in(), next_seed());
    push(std::move(conv), where);
    if (hyper.batchnorm) push(nn::BatchNorm2d(shape[0]), where);
    push(nn::Relu{}, where);
    push(nn::MaxPool2d(static_cast<std::size_t>(hyper.pool_kernel), static_cast<std::size_t>(hyper.pool_stride)),
         where);
    if (hyper.dropout) push(nn::Dropout(hyper.dropout_rate), where);
  }
  for (int f = 0; f < hyper.fc_layers; ++f) {
    const std::string where = "fully connected layer " + std::to_string(f + 1);
    nn::Dense dense(nn::Tensor::count_of(shape), static_cast<std::size_t>(hyper.fc_width));
    *dense.params()[0] = nn::he_init(dense.params()[0]->shape(), dense.fan_in(), next_seed());
    push(std::move(dense), where);
    push(nn::Relu{}, where);
    if (hyper.dropout) push(nn::Dropout(hyper.dropout_rate), where);
  }
  nn::Dense head(nn::Tensor::count_of(shape), 1);
  *head.params()[0] = nn::he_init(head.params()[0]->shape(), head.fan_in(), next_seed());
  push(std::move(head), "output head");
  return model;
}

// ---------------------------------------------------------------------------
// Forward passes

/// Stacks normalized windows into a [B, K, side, side] batch.
inline nn::Tensor batch_inputs(std::span<const nn::Tensor* const> normalized) {
  if (normalized.empty()) throw std::invalid_argument("batch_inputs: empty batch");
  const auto& s = normalized.front()->shape();
  nn::Tensor x({normalized.size(), s[0], s[1], s[2]});
  const std::size_t per = normalized.front()->size();
  for (std::size_t b = 0; b < normalized.size(); ++b) {
    if (normalized[b]->shape() != s) throw ShapeError("batch_inputs: mixed window sizes");
    std::copy(normalized[b]->data(), normalized[b]->data() + per, x.data() + b * per);
  }
  return x;
}

inline void require_ready(const ResCnn& model, const GridStack& stack) {
  if (!stack.has_stats) throw std::invalid_argument("station '" + stack.station_id + "': window is not normalized");
  if (!model.has_training_stats()) throw std::invalid_argument("model has no training standardization statistics");
  if (stack.side() != model.window_side()) {
    throw ShapeError("station '" + stack.station_id + "': window side " + std::to_string(stack.side()) +
                     " does not match the model's " + std::to_string(model.window_side()));
  }
}

inline double linear_output(const ResCnn& model, const GridStack& stack) {
  const auto& lin = model.linear();
  double acc = lin.intercept[0];
  for (std::size_t k = 0; k < kChannels; ++k) acc += lin.weight[k] * lin.feature(stack, k);
  return model.target().mean + model.target().scale * acc;
}

/// ŷ = f_c(normalized window) + f_l(channel means). Train mode applies
/// dropout with `seed`; batchnorm needs batches and is eval-only here.
inline Prediction predict(const ResCnn& model, const GridStack& stack, Mode mode = Mode::kEval,
                          std::uint64_t seed = 0) {
  require_ready(model, stack);
  Prediction p;
  p.station_id = stack.station_id;
  p.linear = linear_output(model, stack);
  if (!model.net().empty()) {
    const nn::Tensor* in[] = {&stack.normalized};
    nn::Tape tape;
    const std::uint64_t seeds[] = {seed};
    const nn::Tensor out = model.net().forward(batch_inputs(in), mode, tape, seeds);
    p.cnn = model.target().scale * out[0];
  }
  p.value = p.cnn + p.linear;
  return p;
}

/// dŷ/dx_raw for every window cell and channel, shape [K, side, side], in
/// concentration units per raw input unit (ug/m3 per tce/yr for emission
/// channels). Eval mode. Includes the derivative of the per-window
/// standardization: with z = (x - mean)/sd over n cells and g = dŷ/dz,
///   dŷ/dx_a = (g_a - avg(g) - z_a * avg(g z)) / sd  + linear-branch term.
/// Degenerate channels receive only the linear-branch term.
inline nn::Tensor input_gradient(const ResCnn& model, const GridStack& stack) {
  require_ready(model, stack);
  const std::size_t n = stack.plane();
  nn::Tensor grad(stack.raw.shape());
  const double scale = model.target().scale;

  if (!model.net().empty()) {
    const nn::Tensor* in[] = {&stack.normalized};
    nn::Tape tape;
    const nn::Tensor out = model.net().forward(batch_inputs(in), Mode::kEval, tape);
    nn::Tensor seed_grad(out.shape(), scale);
    const nn::Tensor gz = model.net().backward(seed_grad, tape, nullptr);
    for (std::size_t k = 0; k < kChannels; ++k) {
      if (stack.degenerate[k]) continue;
      const double* g = gz.data() + k * n;
      const double* z = stack.normalized.data() + k * n;
      double sum_g = 0.0, sum_gz = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += g[i];
        sum_gz += g[i] * z[i];
      }
      const double avg_g = sum_g / static_cast<double>(n);
      const double avg_gz = sum_gz / static_cast<double>(n);
      const double inv_sd = 1.0 / stack.stddev[k];
      double* out_k = grad.data() + k * n;
      for (std::size_t i = 0; i < n; ++i) out_k[i] = (g[i] - avg_g - z[i] * avg_gz) * inv_sd;
    }
  }
  const auto& lin = model.linear();
  for (std::size_t k = 0; k < kChannels; ++k) {
    const double term = scale * lin.weight[k] / (lin.feature_scale[k] * static_cast<double>(n));
    double* out_k = grad.data() + k * n;
    for (std::size_t i = 0; i < n; ++i) out_k[i] += term;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Symmetries of the square: identity, rotations by 90/180/270 degrees,
/// horizontal flip, vertical flip.
enum class Symmetry : std::uint8_t { kIdentity, kRot90, kRot180, kRot270, kFlipH, kFlipV };
inline constexpr std::size_t kSymmetryCount = 6;

/// Applies `sym` to every channel of a [K, s, s] tensor.
inline nn::Tensor apply_symmetry(const nn::Tensor& x, Symmetry sym) {
  const std::size_t nk = x.dim(0), s = x.dim(1);
  if (x.dim(2) != s) throw ShapeError("apply_symmetry: window must be square");
  nn::Tensor y(x.shape());
  for (std::size_t k = 0; k < nk; ++k) {
    const double* src = x.data() + k * s * s;
    double* dst = y.data() + k * s * s;
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        std::size_t si = i, sj = j;
        switch (sym) {
          case Symmetry::kIdentity: break;
          case Symmetry::kRot90: si = s - 1 - j; sj = i; break;
          case Symmetry::kRot180: si = s - 1 - i; sj = s - 1 - j; break;
          case Symmetry::kRot270: si = j; sj = s - 1 - i; break;
          case Symmetry::kFlipH: sj = s - 1 - j; break;
          case Symmetry::kFlipV: si = s - 1 - i; break;
        }
        dst[i * s + j] = src[si * s + sj];
      }
    }
  }
  return y;
}

/// Random symmetry (uniform over the six) plus additive Gaussian noise of
/// variance `eps` on the normalized window. The target is left alone.
inline nn::Tensor augment(const nn::Tensor& normalized, nn::Rng& rng, double eps) {
  const auto sym = static_cast<Symmetry>(rng.below(kSymmetryCount));
  nn::Tensor y = apply_symmetry(normalized, sym);
  if (eps > 0.0) {
    const double sd = std::sqrt(eps);
    for (double& v : y.values()) v += sd * rng.normal();
  }
  return y;
}

// ---------------------------------------------------------------------------
// Model bundle: <dir>/model.ckpt (weights) + <dir>/model.txt (hyper + stats)

inline std::string hyper_to_text(const HyperParams& h) {
  std::string out;
  for (const auto& name : hyper_field_names()) out += name + " = " + format_double(get_field(h, name)) + "\n";
  return out;
}

inline HyperParams hyper_from_config(const KeyValueConfig& cfg, HyperParams base = {}) {
  for (const auto& name : hyper_field_names()) {
    if (cfg.has(name)) set_field(base, name, cfg.number(name));
  }
  return base;
}

inline std::vector<std::filesystem::path> save_model(const ResCnn& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<nn::NamedTensor> entries;
  std::size_t i = 0;
  for (const nn::Tensor* p : model.net().params()) entries.push_back({"net.param." + std::to_string(i++), *p});
  i = 0;
  for (const nn::Tensor* b : model.net().buffers()) entries.push_back({"net.buffer." + std::to_string(i++), *b});
  entries.push_back({"linear.weight", model.linear().weight});
  entries.push_back({"linear.intercept", model.linear().intercept});
  nn::write_checkpoint((dir / "model.ckpt").string(), entries);

  std::string text = "# model hyperparameters\n" + hyper_to_text(model.hyper());
  text += "# training-set standardization\n";
  text += "target_mean = " + format_double(model.target().mean) + "\n";
  text += "target_scale = " + format_double(model.target().scale) + "\n";
  for (std::size_t k = 0; k < kChannels; ++k) {
    const std::string ch(kChannelNames[k]);
    text += "feature_mean." + ch + " = " + format_double(model.linear().feature_mean[k]) + "\n";
    text += "feature_scale." + ch + " = " + format_double(model.linear().feature_scale[k]) + "\n";
  }
  write_text(dir / "model.txt", text);
  return {dir / "model.ckpt", dir / "model.txt"};
}

inline ResCnn load_model(const std::filesystem::path& dir) {
  const auto cfg = KeyValueConfig::load(dir / "model.txt");
  ResCnn model = build_model(hyper_from_config(cfg), 0);
  const auto entries = nn::read_checkpoint((dir / "model.ckpt").string());
  auto params = model.net().params();
  auto buffers = model.net().buffers();
  const std::size_t expected = params.size() + buffers.size() + 2;
  if (entries.size() != expected) {
    throw nn::CheckpointError("checkpoint has " + std::to_string(entries.size()) + " tensors, model needs " +
                              std::to_string(expected));
  }
  std::size_t e = 0;
  auto assign = [&](nn::Tensor& dst) {
    if (entries[e].tensor.shape() != dst.shape()) {
      throw nn::CheckpointError("checkpoint tensor '" + entries[e].name + "' has shape " +
                                nn::shape_string(entries[e].tensor.shape()) + ", expected " +
                                nn::shape_string(dst.shape()));
    }
    dst = entries[e++].tensor;
  };
  for (nn::Tensor* p : params) assign(*p);
  for (nn::Tensor* b : buffers) assign(*b);
  assign(model.linear().weight);
  assign(model.linear().intercept);

  model.target().mean = cfg.number("target_mean");
  model.target().scale = cfg.number("target_scale");
  for (std::size_t k = 0; k < kChannels; ++k) {
    const std::string ch(kChannelNames[k]);
    model.linear().feature_mean[k] = cfg.number("feature_mean." + ch);
    model.linear().feature_scale[k] = cfg.number("feature_scale." + ch);
  }
  model.set_has_training_stats(true);
  return model;
}

}  // namespace cobenefit

#endif  // COBENEFIT_RESCNN_HPP
