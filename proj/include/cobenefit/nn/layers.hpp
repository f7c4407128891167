#ifndef COBENEFIT_NN_LAYERS_HPP
#define COBENEFIT_NN_LAYERS_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cobenefit/nn/random.hpp"
#include "cobenefit/nn/tensor.hpp"

namespace cobenefit::nn {

enum class Mode { kTrain, kEval };

/// Raised when a layer stack cannot be applied to a given input shape.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-call activations a layer needs for its backward pass. Owned by the
/// caller so that a network's parameters stay immutable during inference.
struct LayerCache {
  Tensor input;
  Tensor aux;                        // batchnorm x-hat, dropout mask
  std::vector<std::size_t> argmax;   // maxpool routing
  std::vector<double> batch_mean;    // batchnorm (train mode)
  std::vector<double> batch_var;
  std::vector<double> inv_std;
};

/// Seeds for stochastic layers. One seed per sample in the batch, so a
/// sample's dropout mask does not depend on its batch position.
struct ForwardContext {
  std::span<const std::uint64_t> sample_seeds;
  std::size_t layer_index = 0;
};

/// Valid-padding output length of a sliding window.
inline std::size_t window_output(std::size_t n, std::size_t kernel, std::size_t stride) {
  return (n - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------

class Conv2d {
 public:
  Conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel, std::size_t stride)
      : kernel_(kernel), stride_(stride),
        weight_({filters, in_channels, kernel, kernel}), bias_({filters}) {
    if (kernel == 0 || stride == 0) throw std::invalid_argument("Conv2d: kernel and stride must be >= 1");
  }

  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t fan_in() const { return weight_.dim(1) * kernel_ * kernel_; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& chw) const {
    if (chw.size() != 3 || chw[0] != weight_.dim(1)) {
      throw ShapeError("conv2d expects " + std::to_string(weight_.dim(1)) + " input channels, got " +
                       shape_string(chw));
    }
    if (chw[1] < kernel_ || chw[2] < kernel_) {
      throw ShapeError("conv2d kernel " + std::to_string(kernel_) + " larger than input " +
                       shape_string(chw));
    }
    return {weight_.dim(0), window_output(chw[1], kernel_, stride_),
            window_output(chw[2], kernel_, stride_)};
  }

  Tensor forward(const Tensor& x, Mode, LayerCache& cache, const ForwardContext&) const {
    const auto out = output_shape({x.dim(1), x.dim(2), x.dim(3)});
    const std::size_t batch = x.dim(0), nc = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t nf = out[0], oh = out[1], ow = out[2];
    Tensor y({batch, nf, oh, ow});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < nf; ++f) {
        double* yp = &y.at(b, f, 0, 0);
        for (std::size_t i = 0; i < oh * ow; ++i) yp[i] = bias_[f];
        for (std::size_t c = 0; c < nc; ++c) {
          const double* xp = &x.at(b, c, 0, 0);
          for (std::size_t ki = 0; ki < kernel_; ++ki) {
            for (std::size_t kj = 0; kj < kernel_; ++kj) {
              const double wv = weight_.at(f, c, ki, kj);
              for (std::size_t oi = 0; oi < oh; ++oi) {
                const double* row = xp + (oi * stride_ + ki) * w + kj;
                double* yrow = yp + oi * ow;
                for (std::size_t oj = 0; oj < ow; ++oj) yrow[oj] += wv * row[oj * stride_];
              }
            }
          }
        }
      }
    }
    (void)h;
    cache.input = x;
    return y;
  }

  Tensor backward(const Tensor& gy, const LayerCache& cache, std::span<Tensor> grads) const {
    const Tensor& x = cache.input;
    const std::size_t batch = x.dim(0), nc = x.dim(1), w = x.dim(3);
    const std::size_t nf = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
    Tensor gx(x.shape());
    Tensor& gw = grads[0];
    Tensor& gb = grads[1];
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < nf; ++f) {
        const double* gp = &gy.at(b, f, 0, 0);
        double sum = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) sum += gp[i];
        gb[f] += sum;
        for (std::size_t c = 0; c < nc; ++c) {
          const double* xp = &x.at(b, c, 0, 0);
          double* gxp = &gx.at(b, c, 0, 0);
          for (std::size_t ki = 0; ki < kernel_; ++ki) {
            for (std::size_t kj = 0; kj < kernel_; ++kj) {
              const double wv = weight_.at(f, c, ki, kj);
              double acc = 0.0;
              for (std::size_t oi = 0; oi < oh; ++oi) {
                const std::size_t off = (oi * stride_ + ki) * w + kj;
                const double* grow = gp + oi * ow;
                for (std::size_t oj = 0; oj < ow; ++oj) {
                  acc += grow[oj] * xp[off + oj * stride_];
                  gxp[off + oj * stride_] += wv * grow[oj];
                }
              }
              gw.at(f, c, ki, kj) += acc;
            }
          }
        }
      }
    }
    return gx;
  }

  std::vector<Tensor*> params() { return {&weight_, &bias_}; }
  std::vector<const Tensor*> params() const { return {&weight_, &bias_}; }

 private:
  std::size_t kernel_;
  std::size_t stride_;
  Tensor weight_;  // [filters, channels, k, k]
  Tensor bias_;    // [filters]
};

// ---------------------------------------------------------------------------

/// Max pooling with valid padding; ties go to the first element in
/// row-major order within the window.
class MaxPool2d {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {
    if (kernel == 0 || stride == 0) throw std::invalid_argument("MaxPool2d: kernel and stride must be >= 1");
  }

  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& chw) const {
    if (chw.size() != 3) throw ShapeError("maxpool2d expects a 3-d input, got " + shape_string(chw));
    if (chw[1] < kernel_ || chw[2] < kernel_) {
      throw ShapeError("maxpool2d kernel " + std::to_string(kernel_) + " larger than input " +
                       shape_string(chw));
    }
    return {chw[0], window_output(chw[1], kernel_, stride_), window_output(chw[2], kernel_, stride_)};
  }

  Tensor forward(const Tensor& x, Mode, LayerCache& cache, const ForwardContext&) const {
    const auto out = output_shape({x.dim(1), x.dim(2), x.dim(3)});
    const std::size_t batch = x.dim(0), nc = x.dim(1), w = x.dim(3);
    const std::size_t oh = out[1], ow = out[2];
    Tensor y({batch, nc, oh, ow});
    cache.argmax.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < nc; ++c) {
        const std::size_t base = (b * nc + c) * x.dim(2) * w;
        for (std::size_t oi = 0; oi < oh; ++oi) {
          for (std::size_t oj = 0; oj < ow; ++oj, ++o) {
            std::size_t best = base + (oi * stride_) * w + oj * stride_;
            double best_v = x[best];
            for (std::size_t ki = 0; ki < kernel_; ++ki) {
              for (std::size_t kj = 0; kj < kernel_; ++kj) {
                const std::size_t idx = base + (oi * stride_ + ki) * w + oj * stride_ + kj;
                if (x[idx] > best_v) {
                  best_v = x[idx];
                  best = idx;
                }
              }
            }
            y[o] = best_v;
            cache.argmax[o] = best;
          }
        }
      }
    }
    cache.input = Tensor(x.shape());  // shape only; values are not needed
    return y;
  }

  Tensor backward(const Tensor& gy, const LayerCache& cache, std::span<Tensor>) const {
    Tensor gx(cache.input.shape());
    for (std::size_t o = 0; o < gy.size(); ++o) gx[cache.argmax[o]] += gy[o];
    return gx;
  }

  std::vector<Tensor*> params() { return {}; }
  std::vector<const Tensor*> params() const { return {}; }

 private:
  std::size_t kernel_;
  std::size_t stride_;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalization over (batch, rows, cols).
class BatchNorm2d {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.9;

  explicit BatchNorm2d(std::size_t channels)
      : gamma_({channels}, 1.0), beta_({channels}, 0.0),
        running_mean_({channels}, 0.0), running_var_({channels}, 1.0) {}

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& chw) const {
    if (chw.size() != 3 || chw[0] != gamma_.size()) {
      throw ShapeError("batchnorm2d expects " + std::to_string(gamma_.size()) + " channels, got " +
                       shape_string(chw));
    }
    return chw;
  }

  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, const ForwardContext&) const {
    const std::size_t batch = x.dim(0), nc = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor y(x.shape());
    cache.inv_std.assign(nc, 0.0);
    if (mode == Mode::kTrain) {
      if (batch < 2) throw std::invalid_argument("batchnorm2d: train mode needs a batch of at least 2");
      const double n = static_cast<double>(batch * plane);
      cache.batch_mean.assign(nc, 0.0);
      cache.batch_var.assign(nc, 0.0);
      cache.aux = Tensor(x.shape());
      for (std::size_t c = 0; c < nc; ++c) {
        double mean = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const double* p = &x.at(b, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        }
        mean /= n;
        double var = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const double* p = &x.at(b, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + kEpsilon);
        cache.batch_mean[c] = mean;
        cache.batch_var[c] = var;
        cache.inv_std[c] = inv;
        for (std::size_t b = 0; b < batch; ++b) {
          const double* p = &x.at(b, c, 0, 0);
          double* xh = &cache.aux.at(b, c, 0, 0);
          double* yp = &y.at(b, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            xh[i] = (p[i] - mean) * inv;
            yp[i] = gamma_[c] * xh[i] + beta_[c];
          }
        }
      }
      cache.input = Tensor(x.shape());
    } else {
      for (std::size_t c = 0; c < nc; ++c) {
        const double inv = 1.0 / std::sqrt(running_var_[c] + kEpsilon);
        cache.inv_std[c] = inv;
        for (std::size_t b = 0; b < batch; ++b) {
          const double* p = &x.at(b, c, 0, 0);
          double* yp = &y.at(b, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            yp[i] = gamma_[c] * (p[i] - running_mean_[c]) * inv + beta_[c];
          }
        }
      }
      cache.input = x;
      cache.aux = Tensor();
    }
    return y;
  }

  Tensor backward(const Tensor& gy, const LayerCache& cache, std::span<Tensor> grads) const {
    const std::size_t batch = gy.dim(0), nc = gy.dim(1), plane = gy.dim(2) * gy.dim(3);
    Tensor gx(gy.shape());
    Tensor& g_gamma = grads[0];
    Tensor& g_beta = grads[1];
    const bool train = !cache.aux.empty();
    for (std::size_t c = 0; c < nc; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* gp = &gy.at(b, c, 0, 0);
        const double* src = train ? &cache.aux.at(b, c, 0, 0) : &cache.input.at(b, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) {
          const double xh = train ? src[i] : (src[i] - running_mean_[c]) * cache.inv_std[c];
          sum_g += gp[i];
          sum_gx += gp[i] * xh;
        }
      }
      g_beta[c] += sum_g;
      g_gamma[c] += sum_gx;
      const double scale = gamma_[c] * cache.inv_std[c];
      if (train) {
        const double n = static_cast<double>(batch * plane);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gp = &gy.at(b, c, 0, 0);
          const double* xh = &cache.aux.at(b, c, 0, 0);
          double* gxp = &gx.at(b, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) {
            gxp[i] = scale * (gp[i] - sum_g / n - xh[i] * sum_gx / n);
          }
        }
      } else {
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gp = &gy.at(b, c, 0, 0);
          double* gxp = &gx.at(b, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) gxp[i] = scale * gp[i];
        }
      }
    }
    return gx;
  }

  /// Folds the batch statistics recorded by a train-mode forward pass into
  /// the running estimates used in eval mode.
  void update_running_stats(const LayerCache& cache, std::size_t samples_per_channel) {
    const double n = static_cast<double>(samples_per_channel);
    const double unbias = n > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < cache.batch_mean.size(); ++c) {
      running_mean_[c] = kMomentum * running_mean_[c] + (1.0 - kMomentum) * cache.batch_mean[c];
      running_var_[c] = kMomentum * running_var_[c] + (1.0 - kMomentum) * cache.batch_var[c] * unbias;
    }
  }

  std::vector<Tensor*> params() { return {&gamma_, &beta_}; }
  std::vector<const Tensor*> params() const { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() { return {&running_mean_, &running_var_}; }
  std::vector<const Tensor*> buffers() const { return {&running_mean_, &running_var_}; }

 private:
  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1-rate) in train mode and
/// eval mode is the identity.
class Dropout {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("Dropout: rate must be in [0, 1)");
  }

  double rate() const { return rate_; }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& s) const { return s; }

  Tensor forward(const Tensor& x, Mode mode, LayerCache& cache, const ForwardContext& ctx) const {
    if (mode == Mode::kEval || rate_ == 0.0) {
      cache.aux = Tensor();
      return x;
    }
    const std::size_t batch = x.dim(0), per = x.stride0();
    if (ctx.sample_seeds.size() != batch) {
      throw std::invalid_argument("Dropout: one seed per sample is required in train mode");
    }
    Tensor y(x.shape());
    cache.aux = Tensor(x.shape());
    const double keep_scale = 1.0 / (1.0 - rate_);
    for (std::size_t b = 0; b < batch; ++b) {
      Rng rng(mix_seed(ctx.sample_seeds[b], ctx.layer_index));
      for (std::size_t i = 0; i < per; ++i) {
        const double m = rng.uniform() >= rate_ ? keep_scale : 0.0;
        cache.aux[b * per + i] = m;
        y[b * per + i] = x[b * per + i] * m;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& gy, const LayerCache& cache, std::span<Tensor>) const {
    if (cache.aux.empty()) return gy;
    Tensor gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * cache.aux[i];
    return gx;
  }

  std::vector<Tensor*> params() { return {}; }
  std::vector<const Tensor*> params() const { return {}; }

 private:
  double rate_;
};

// ---------------------------------------------------------------------------

/// Fully connected layer. Inputs of any rank are flattened per sample.
class Dense {
 public:
  Dense(std::size_t inputs, std::size_t outputs) : weight_({outputs, inputs}), bias_({outputs}) {
    if (inputs == 0 || outputs == 0) throw std::invalid_argument("Dense: widths must be >= 1");
  }

  std::size_t inputs() const { return weight_.dim(1); }
  std::size_t outputs() const { return weight_.dim(0); }
  std::size_t fan_in() const { return inputs(); }

  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& s) const {
    if (Tensor::count_of(s) != inputs()) {
      throw ShapeError("dense expects " + std::to_string(inputs()) + " inputs, got " + shape_string(s));
    }
    return {outputs()};
  }

  Tensor forward(const Tensor& x, Mode, LayerCache& cache, const ForwardContext&) const {
    const std::size_t batch = x.dim(0), in = x.stride0(), out = outputs();
    if (in != inputs()) throw ShapeError("dense: input width mismatch");
    Tensor y({batch, out});
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xp = x.data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wp = weight_.data() + o * in;
        double acc = bias_[o];
        for (std::size_t i = 0; i < in; ++i) acc += wp[i] * xp[i];
        y.at(b, o) = acc;
      }
    }
    cache.input = x;
    return y;
  }

  Tensor backward(const Tensor& gy, const LayerCache& cache, std::span<Tensor> grads) const {
    const Tensor& x = cache.input;
    const std::size_t batch = x.dim(0), in = inputs(), out = outputs();
    Tensor gx(x.shape());
    Tensor& gw = grads[0];
    Tensor& gb = grads[1];
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xp = x.data() + b * in;
      double* gxp = gx.data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = gy.at(b, o);
        if (g == 0.0) continue;
        gb[o] += g;
        const double* wp = weight_.data() + o * in;
        double* gwp = gw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          gwp[i] += g * xp[i];
          gxp[i] += g * wp[i];
        }
      }
    }
    return gx;
  }

  std::vector<Tensor*> params() { return {&weight_, &bias_}; }
  std::vector<const Tensor*> params() const { return {&weight_, &bias_}; }

 private:
  Tensor weight_;  // [outputs, inputs]
  Tensor bias_;
};

// ---------------------------------------------------------------------------

class Relu {
 public:
  std::vector<std::size_t> output_shape(const std::vector<std::size_t>& s) const { return s; }

  Tensor forward(const Tensor& x, Mode, LayerCache& cache, const ForwardContext&) const {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    cache.input = x;
    return y;
  }

  Tensor backward(const Tensor& gy, const LayerCache& cache, std::span<Tensor>) const {
    Tensor gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = cache.input[i] > 0.0 ? gy[i] : 0.0;
    return gx;
  }

  std::vector<Tensor*> params() { return {}; }
  std::vector<const Tensor*> params() const { return {}; }
};

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

using Layer = std::variant<Conv2d, MaxPool2d, BatchNorm2d, Dropout, Dense, Relu>;

inline const char* layer_kind(const Layer& layer) {
  static constexpr const char* kNames[] = {"conv2d", "maxpool2d", "batchnorm2d", "dropout", "dense", "relu"};
  return kNames[layer.index()];
}

}  // namespace cobenefit::nn

#endif  // COBENEFIT_NN_LAYERS_HPP
