#ifndef COBENEFIT_NN_OPTIM_HPP
#define COBENEFIT_NN_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cobenefit/nn/random.hpp"
#include "cobenefit/nn/tensor.hpp"

namespace cobenefit::nn {

/// Raised when an optimizer receives NaN/Inf gradients.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// He-normal weights: N(0, 2 / fan_in), deterministic per seed.
inline Tensor he_init(std::vector<std::size_t> shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be >= 1");
  Tensor w(std::move(shape));
  Rng rng(seed);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : w.values()) v = rng.normal(0.0, sd);
  return w;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed list of parameter tensors.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  /// `names[i]` labels params[i] in error messages (may be empty).
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads,
            std::span<const std::string> names = {}) {
    if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads count mismatch");
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->shape() != grads[i].shape() || m_[i].shape() != grads[i].shape()) {
        throw std::invalid_argument("Adam: shape mismatch for parameter " + std::to_string(i));
      }
      if (!grads[i].all_finite()) {
        const std::string label = i < names.size() ? names[i] : "parameter " + std::to_string(i);
        throw NonFiniteError("non-finite gradient in " + label);
      }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
        const double m_hat = m[j] / c1;
        const double v_hat = v[j] / c2;
        p[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace cobenefit::nn

#endif  // COBENEFIT_NN_OPTIM_HPP
