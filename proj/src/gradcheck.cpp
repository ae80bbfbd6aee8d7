#include "convnorm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace convnorm {

namespace {

// Earliest recorded intermediate holding a non-finite value.
template <typename T>
NonFiniteError first_non_finite(const Tensor<T>& y) {
  Tape<T> tape(y);
  for (const auto* node : tape.order()) {
    for (std::size_t i = 0; i < node->value.size(); ++i) {
      if (!std::isfinite(static_cast<double>(node->value[i]))) {
        return NonFiniteError("grad_check: non-finite value in " + node->op +
                                  " output at element " + std::to_string(i),
                              i);
      }
    }
  }
  return NonFiniteError("grad_check: f(x) is not finite", 0);
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           Tensor<T> x, double eps) {
  if (!x.requires_grad()) {
    throw std::invalid_argument("grad_check: input does not require grad");
  }
  x.zero_grad();
  {
    Tensor<T> y = f(x);
    if (y.numel() != 1) {
      throw std::invalid_argument("grad_check: f must be scalar-valued, got " +
                                  y.shape().str());
    }
    if (!std::isfinite(static_cast<double>(y.item()))) throw first_non_finite(y);
    backward(y);
  }
  const std::vector<T> analytic(x.grad().begin(), x.grad().end());

  GradCheckResult result;
  result.elements = analytic.size();
  NoGradGuard no_grad;
  auto values = x.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(static_cast<double>(analytic[i]))) {
      throw NonFiniteError("grad_check: analytic gradient not finite at element " +
                               std::to_string(i),
                           i);
    }
    const T saved = values[i];
    values[i] = static_cast<T>(saved + eps);
    const double plus = static_cast<double>(f(x).item());
    values[i] = static_cast<T>(saved - eps);
    const double minus = static_cast<double>(f(x).item());
    values[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NonFiniteError("grad_check: f not finite when perturbing element " +
                               std::to_string(i),
                           i);
    }
    const double cd = (plus - minus) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    const double err = std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-8});
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

template GradCheckResult grad_check<float>(
    const std::function<Tensor<float>(const Tensor<float>&)>&, Tensor<float>, double);
template GradCheckResult grad_check<double>(
    const std::function<Tensor<double>(const Tensor<double>&)>&, Tensor<double>,
    double);

}  // namespace convnorm
