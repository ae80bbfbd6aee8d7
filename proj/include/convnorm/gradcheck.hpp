#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

#include "convnorm/tensor.hpp"

namespace convnorm {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t elements = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Compares the backward() gradient of the scalar f(x) w.r.t. x against central
// differences, perturbing x in place. x must require grad. Returns
// max |analytic - cd| / max(|analytic|, |cd|, 1e-8).
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                           Tensor<T> x, double eps = 1e-3);

}  // namespace convnorm
