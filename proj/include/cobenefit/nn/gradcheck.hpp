#ifndef COBENEFIT_NN_GRADCHECK_HPP
#define COBENEFIT_NN_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace cobenefit::nn {

struct GradCheckResult {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

/// |a - b| / max(|a|, |b|); zero when both vanish.
inline double relative_error(double a, double b, double floor = 1e-300) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

/// Central-difference directional derivative of `f` at `point` along
/// `direction`, compared with a supplied analytic value. `step` applies to
/// unit-scaled inputs; `scale` converts it to the input's units.
template <typename F>
GradCheckResult finite_diff_check(F&& f, std::span<const double> point, std::span<const double> direction,
                                  double analytic, double step = 1e-5, double scale = 1.0) {
  const double h = step * scale;
  std::vector<double> plus(point.begin(), point.end());
  std::vector<double> minus(point.begin(), point.end());
  for (std::size_t i = 0; i < plus.size(); ++i) {
    plus[i] += h * direction[i];
    minus[i] -= h * direction[i];
  }
  const double numeric = (f(std::span<const double>(plus)) - f(std::span<const double>(minus))) / (2.0 * h);
  return {analytic, numeric, relative_error(analytic, numeric)};
}

}  // namespace cobenefit::nn

#endif  // COBENEFIT_NN_GRADCHECK_HPP
