#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "segvggt/numerics/tensor.hpp"

namespace segvggt::numerics {

class CheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
  // Location of the worst entry.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. The function is re-evaluated from the current parameter values
/// on every call. Relative error per entry is
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `stride` > 1 probes every stride-th entry of each parameter.
GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  double eps, std::size_t stride = 1);

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps);

}  // namespace segvggt::numerics
