#include "segvggt/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "segvggt/numerics/tape.hpp"

namespace segvggt::numerics {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  const Tensor loss = f();
  if (loss.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  return loss.item();
}

}  // namespace

GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  double eps, std::size_t stride) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  stride = std::max<std::size_t>(1, stride);

  const double base_a = evaluate(f);
  const double base_b = evaluate(f);
  if (base_a != base_b) {
    throw CheckError("grad_check: function is not deterministic (" + std::to_string(base_a) +
                     " vs " + std::to_string(base_b) + ")");
  }

  std::vector<std::vector<double>> analytic;
  {
    for (auto& p : params) {
      p.set_requires_grad(true);
      p.zero_grad();
    }
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = f();
    }
    tape.backward(loss);
    for (auto& p : params) {
      const auto g = p.has_grad() ? p.grad() : std::span<const double>{};
      std::vector<double> copy(p.numel(), 0.0);
      std::copy(g.begin(), g.end(), copy.begin());
      analytic.push_back(std::move(copy));
      p.zero_grad();
    }
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(f);
      values[i] = saved - eps;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double err = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (err > report.max_relative_error || !std::isfinite(err)) {
        report.max_relative_error = std::isfinite(err) ? err : INFINITY;
        report.worst_param = pi;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps) {
  return grad_check_report(f, std::move(params), eps).max_relative_error;
}

}  // namespace segvggt::numerics
