#ifndef COBENEFIT_NN_SEQUENTIAL_HPP
#define COBENEFIT_NN_SEQUENTIAL_HPP

#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cobenefit/nn/layers.hpp"
#include "cobenefit/nn/random.hpp"

namespace cobenefit::nn {

/// Activations recorded by one forward pass.
struct Tape {
  std::vector<LayerCache> caches;
};

/// Gradient buffers laid out like Sequential::params().
using GradientSet = std::vector<Tensor>;

/// A fixed chain of layers. Parameters live here; per-call state lives in
/// a Tape, so const forward/backward calls may run concurrently.
class Sequential {
 public:
  Sequential() = default;

  void add(Layer layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }

  /// Per-sample output shape; throws ShapeError naming the first layer
  /// that cannot accept its input.
  std::vector<std::size_t> output_shape(std::vector<std::size_t> shape) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        shape = std::visit([&](const auto& l) { return l.output_shape(shape); }, layers_[i]);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + layer_kind(layers_[i]) + "): " + e.what());
      }
    }
    return shape;
  }

  Tensor forward(const Tensor& x, Mode mode, Tape& tape,
                 std::span<const std::uint64_t> sample_seeds = {}) const {
    tape.caches.assign(layers_.size(), LayerCache{});
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      ForwardContext ctx{sample_seeds, i};
      cur = std::visit([&](const auto& l) { return l.forward(cur, mode, tape.caches[i], ctx); }, layers_[i]);
    }
    return cur;
  }

  /// Backpropagates `grad_out`; accumulates into `grads` when non-null and
  /// returns the gradient with respect to the network input.
  Tensor backward(const Tensor& grad_out, const Tape& tape, GradientSet* grads) const {
    std::vector<std::size_t> offsets = param_offsets();
    GradientSet scratch;
    Tensor cur = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      std::span<Tensor> g;
      if (grads) {
        g = std::span<Tensor>(grads->data() + offsets[i], offsets[i + 1] - offsets[i]);
      } else {
        scratch = zero_like(i);
        g = scratch;
      }
      cur = std::visit([&](const auto& l) { return l.backward(cur, tape.caches[i], g); }, layers_[i]);
    }
    return cur;
  }

  std::vector<Tensor*> params() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      auto p = std::visit([](auto& x) { return x.params(); }, l);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  std::vector<const Tensor*> params() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers_) {
      auto p = std::visit([](const auto& x) { return x.params(); }, l);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  /// Non-trainable state (batchnorm running statistics).
  std::vector<Tensor*> buffers() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
      if (auto* bn = std::get_if<BatchNorm2d>(&l)) {
        auto b = bn->buffers();
        out.insert(out.end(), b.begin(), b.end());
      }
    }
    return out;
  }

  std::vector<const Tensor*> buffers() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers_) {
      if (const auto* bn = std::get_if<BatchNorm2d>(&l)) {
        auto b = bn->buffers();
        out.insert(out.end(), b.begin(), b.end());
      }
    }
    return out;
  }

  GradientSet zero_gradients() const {
    GradientSet g;
    for (const Tensor* p : params()) g.emplace_back(p->shape());
    return g;
  }

  /// Applies batchnorm running-stat updates from a train-mode tape.
  void update_running_stats(const Tape& tape) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (auto* bn = std::get_if<BatchNorm2d>(&layers_[i])) {
        const LayerCache& c = tape.caches[i];
        if (c.batch_mean.empty()) continue;
        const auto& s = c.aux.shape();
        bn->update_running_stats(c, s[0] * s[2] * s[3]);
      }
    }
  }

 private:
  std::vector<std::size_t> param_offsets() const {
    std::vector<std::size_t> off{0};
    for (const auto& l : layers_) {
      off.push_back(off.back() + std::visit([](const auto& x) { return x.params().size(); }, l));
    }
    return off;
  }

  GradientSet zero_like(std::size_t layer_index) const {
    GradientSet g;
    for (const Tensor* p : std::visit([](const auto& x) { return x.params(); }, layers_[layer_index])) {
      g.emplace_back(p->shape());
    }
    return g;
  }

  std::vector<Layer> layers_;
};

}  // namespace cobenefit::nn

#endif  // COBENEFIT_NN_SEQUENTIAL_HPP
