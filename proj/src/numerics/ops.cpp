#include "segvggt/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "segvggt/numerics/tape.hpp"

namespace segvggt::numerics {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

template <typename Rule>
void maybe_record(std::vector<Tensor> inputs, const Tensor& out, Rule&& rule) {
  if (!should_record(inputs)) return;
  active_tape()->record(std::move(inputs), out, std::forward<Rule>(rule));
}

// Unary elementwise op with derivative expressed from input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  std::vector<double> y(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  Tensor out(x.shape(), std::move(y));
  maybe_record({x}, out, [x, out, dfdx]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    const auto xs = x.data();
    const auto ys = out.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dfdx(xs[i], ys[i]);
  });
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> c(m * n);
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), c.data(), false);
  Tensor out({m, n}, std::move(c));
  maybe_record({a, b}, out, [a, b, out, m, n, k]() mutable {
    const double* g = out.grad().data();
    if (a.requires_grad()) kernels::gemm_nt(m, k, n, g, b.data().data(), a.mutable_grad().data(), true);
    if (b.requires_grad()) kernels::gemm_tn(k, n, m, a.data().data(), g, b.mutable_grad().data(), true);
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> c(m * n);
  kernels::gemm_nt(m, n, k, a.data().data(), b.data().data(), c.data(), false);
  Tensor out({m, n}, std::move(c));
  maybe_record({a, b}, out, [a, b, out, m, n, k]() mutable {
    const double* g = out.grad().data();
    if (a.requires_grad()) kernels::gemm_nn(m, k, n, g, b.data().data(), a.mutable_grad().data(), true);
    if (b.requires_grad()) kernels::gemm_tn(n, k, m, g, a.data().data(), b.mutable_grad().data(), true);
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  const std::size_t in = weight.dim(0), n_out = weight.dim(1);
  if (x.cols() != in) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not fit weight " +
                         shape_string(weight.shape()));
  }
  if (bias.defined() && (bias.numel() != n_out)) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not fit weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t rows = x.rows();
  std::vector<double> y(rows * n_out);
  if (bias.defined()) {
    const auto bs = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bs.begin(), bs.end(), y.begin() + r * n_out);
  }
  kernels::gemm_nn(rows, n_out, in, x.data().data(), weight.data().data(), y.data(), bias.defined());
  Tensor out(with_last(x.shape(), n_out), std::move(y));
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  maybe_record(std::move(inputs), out, [x, weight, bias, out, rows, in, n_out]() mutable {
    const double* g = out.grad().data();
    if (x.requires_grad()) kernels::gemm_nt(rows, in, n_out, g, weight.data().data(), x.mutable_grad().data(), true);
    if (weight.requires_grad()) kernels::gemm_tn(in, n_out, rows, x.data().data(), g, weight.mutable_grad().data(), true);
    if (bias.defined() && bias.requires_grad()) {
      auto gb = bias.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n_out; ++j) gb[j] += g[r * n_out + j];
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> t(r * c);
  kernels::transpose(r, c, a.data().data(), t.data());
  Tensor out({c, r}, std::move(t));
  maybe_record({a}, out, [a, out, r, c]() mutable {
    if (!a.requires_grad()) return;
    std::vector<double> back(r * c);
    kernels::transpose(c, r, out.grad().data(), back.data());
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < back.size(); ++i) ga[i] += back[i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  const auto as = a.data(), bs = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] + bs[i];
  Tensor out(a.shape(), std::move(y));
  maybe_record({a, b}, out, [a, b, out]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  const auto as = a.data(), bs = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] - bs[i];
  Tensor out(a.shape(), std::move(y));
  maybe_record({a, b}, out, [a, b, out]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  const auto as = a.data(), bs = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = as[i] * bs[i];
  Tensor out(a.shape(), std::move(y));
  maybe_record({a, b}, out, [a, b, out]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      const auto bs = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      const auto as = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(std::max(v, kLogFloor)); },
      [](double v, double) { return v > kLogFloor ? 1.0 / v : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + k * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
      });
}

Tensor huber(const Tensor& x, double delta) {
  return unary(
      x,
      [delta](double v) {
        const double a = std::abs(v);
        return a <= delta ? 0.5 * v * v : delta * (a - 0.5 * delta);
      },
      [delta](double v, double) {
        if (std::abs(v) <= delta) return v;
        return v > 0 ? delta : -delta;
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  maybe_record({x}, out, [x, out]() mutable {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0];
    for (auto& v : x.mutable_grad()) v += g;
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for tensor " + shape_string(x.shape()));
  }
  double s = 0.0;
  const auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) s += xs[i] * weights[i];
  Tensor out = Tensor::scalar(s);
  std::vector<double> w(weights.begin(), weights.end());
  maybe_record({x}, out, [x, out, w = std::move(w)]() mutable {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0];
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w[i];
  });
  return out;
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index, std::span<const double> weights) {
  require_rank(x, 2, "pick");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (index.size() != rows || weights.size() != rows) {
    throw DimensionError("pick: index/weight count does not match rows of " + shape_string(x.shape()));
  }
  double s = 0.0;
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) throw DimensionError("pick: column index out of range");
    s += weights[r] * xs[r * cols + index[r]];
  }
  Tensor out = Tensor::scalar(s);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> w(weights.begin(), weights.end());
  maybe_record({x}, out, [x, out, idx = std::move(idx), w = std::move(w), cols]() mutable {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0];
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) gx[r * cols + idx[r]] += g * w[r];
  });
  return out;
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw DimensionError("stack_scalars: empty list");
  std::vector<double> y;
  y.reserve(scalars.size());
  for (const auto& s : scalars) y.push_back(s.item());
  Tensor out({scalars.size()}, std::move(y));
  maybe_record(scalars, out, [scalars, out]() mutable {
    const auto g = out.grad();
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      if (scalars[i].requires_grad()) scalars[i].mutable_grad()[0] += g[i];
    }
  });
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> y(x.numel());
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double* o = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  Tensor out(x.shape(), std::move(y));
  maybe_record({x}, out, [x, out, rows, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    const auto ys = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[o + j] * ys[o + j];
      for (std::size_t j = 0; j < n; ++j) gx[o + j] += ys[o + j] * (g[o + j] - dot);
    }
  });
  return out;
}

Tensor log_softmax_lastdim(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> y(x.numel());
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double* o = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lz;
  }
  Tensor out(x.shape(), std::move(y));
  maybe_record({x}, out, [x, out, rows, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    const auto ys = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += g[o + j];
      for (std::size_t j = 0; j < n; ++j) gx[o + j] += g[o + j] - std::exp(ys[o + j]) * total;
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: parameters do not fit input " + shape_string(x.shape()));
  }
  std::vector<double> normalized(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> y(x.numel());
  const auto xs = x.data(), gs = gain.data(), bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[j] - mu) * is;
      normalized[r * n + j] = h;
      y[r * n + j] = h * gs[j] + bs[j];
    }
  }
  Tensor out(x.shape(), std::move(y));
  maybe_record({x, gain, bias}, out,
               [x, gain, bias, out, rows, n, normalized = std::move(normalized),
                inv_std = std::move(inv_std)]() mutable {
                 const auto g = out.grad();
                 const auto gs = gain.data();
                 if (gain.requires_grad() || bias.requires_grad()) {
                   auto gg = gain.requires_grad() ? gain.mutable_grad() : std::span<double>{};
                   auto gb = bias.requires_grad() ? bias.mutable_grad() : std::span<double>{};
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t j = 0; j < n; ++j) {
                       if (!gg.empty()) gg[j] += g[r * n + j] * normalized[r * n + j];
                       if (!gb.empty()) gb[j] += g[r * n + j];
                     }
                   }
                 }
                 if (!x.requires_grad()) return;
                 auto gx = x.mutable_grad();
                 const double inv_n = 1.0 / static_cast<double>(n);
                 for (std::size_t r = 0; r < rows; ++r) {
                   const std::size_t o = r * n;
                   double mean_gh = 0.0, mean_ghh = 0.0;
                   for (std::size_t j = 0; j < n; ++j) {
                     const double gh = g[o + j] * gs[j];
                     mean_gh += gh;
                     mean_ghh += gh * normalized[o + j];
                   }
                   mean_gh *= inv_n;
                   mean_ghh *= inv_n;
                   for (std::size_t j = 0; j < n; ++j) {
                     const double gh = g[o + j] * gs[j];
                     gx[o + j] += inv_std[r] * (gh - mean_gh - normalized[o + j] * mean_ghh);
                   }
                 }
               });
  return out;
}

Tensor normalize_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<double> y(x.numel());
  std::vector<double> norms(rows);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xs[r * n + j] * xs[r * n + j];
    const double nr = std::max(std::sqrt(s), kLogFloor);
    norms[r] = nr;
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xs[r * n + j] / nr;
  }
  Tensor out(x.shape(), std::move(y));
  maybe_record({x}, out, [x, out, rows, n, norms = std::move(norms)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    const auto ys = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += ys[o + j] * g[o + j];
      for (std::size_t j = 0; j < n; ++j) gx[o + j] += (g[o + j] - ys[o + j] * dot) / norms[r];
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  const auto xs = x.data();
  Tensor out(std::move(shape), std::vector<double>(xs.begin(), xs.end()));
  maybe_record({x}, out, [x, out]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  const std::size_t n = x.dim(1);
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
  }
  const auto xs = x.data();
  Tensor out({end - begin, n}, std::vector<double>(xs.begin() + begin * n, xs.begin() + end * n));
  maybe_record({x}, out, [x, out, begin, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<double> y;
  y.reserve(rows * n);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  Tensor out({rows, n}, std::move(y));
  maybe_record(parts, out, [parts, out]() mutable {
    const auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.numel();
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> y(rows * w);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xs.begin() + r * n + begin, w, y.begin() + r * w);
  }
  Tensor out({rows, w}, std::move(y));
  maybe_record({x}, out, [x, out, rows, n, begin, w]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) gx[r * n + begin + j] += g[r * w + j];
    }
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    n += p.dim(1);
  }
  std::vector<double> y(rows * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    const auto ps = p.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(ps.begin() + r * w, w, y.begin() + r * n + col);
    col += w;
  }
  Tensor out({rows, n}, std::move(y));
  maybe_record(parts, out, [parts, out, rows, n]() mutable {
    const auto g = out.grad();
    std::size_t col = 0;
    for (auto& p : parts) {
      const std::size_t w = p.dim(1);
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += g[r * n + col + j];
        }
      }
      col += w;
    }
  });
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(1);
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  std::vector<double> y(index.size() * n);
  const auto xs = x.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.dim(0)) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(xs.begin() + index[r] * n, n, y.begin() + r * n);
  }
  Tensor out({index.size(), n}, std::move(y));
  std::vector<std::size_t> idx(index.begin(), index.end());
  maybe_record({x}, out, [x, out, n, idx = std::move(idx)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += g[r * n + j];
    }
  });
  return out;
}

namespace {

// Copies columns [h*dh, (h+1)*dh) of a row-major [rows x d] matrix.
std::vector<double> head_columns(std::span<const double> src, std::size_t rows, std::size_t d,
                                 std::size_t h, std::size_t dh) {
  std::vector<double> out(rows * dh);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(src.begin() + r * d + h * dh, dh, out.begin() + r * dh);
  }
  return out;
}

void add_head_columns(std::span<double> dst, const std::vector<double>& src, std::size_t rows,
                      std::size_t d, std::size_t h, std::size_t dh) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < dh; ++j) dst[r * d + h * dh + j] += src[r * dh + j];
  }
}

}  // namespace

Tensor mha_scores(const Tensor& q, const Tensor& k, std::size_t heads) {
  require_rank(q, 2, "mha_scores");
  require_rank(k, 2, "mha_scores");
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d) {
    throw DimensionError("mha_scores: query " + shape_string(q.shape()) + " vs key " + shape_string(k.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("mha_scores: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> y(heads * n * m);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = head_columns(q.data(), n, d, h, dh);
    const auto kh = head_columns(k.data(), m, d, h, dh);
    double* out = y.data() + h * n * m;
    kernels::gemm_nt(n, m, dh, qh.data(), kh.data(), out, false);
    for (std::size_t i = 0; i < n * m; ++i) out[i] *= s;
  }
  Tensor out({heads, n, m}, std::move(y));
  maybe_record({q, k}, out, [q, k, out, heads, n, m, d, dh, s]() mutable {
    const auto g = out.grad();
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> gs(g.begin() + h * n * m, g.begin() + (h + 1) * n * m);
      for (auto& v : gs) v *= s;
      if (q.requires_grad()) {
        const auto kh = head_columns(k.data(), m, d, h, dh);
        std::vector<double> gq(n * dh);
        kernels::gemm_nn(n, dh, m, gs.data(), kh.data(), gq.data(), false);
        add_head_columns(q.mutable_grad(), gq, n, d, h, dh);
      }
      if (k.requires_grad()) {
        const auto qh = head_columns(q.data(), n, d, h, dh);
        std::vector<double> gk(m * dh);
        kernels::gemm_tn(m, dh, n, gs.data(), qh.data(), gk.data(), false);
        add_head_columns(k.mutable_grad(), gk, m, d, h, dh);
      }
    }
  });
  return out;
}

Tensor mha_combine(const Tensor& p, const Tensor& v) {
  require_rank(p, 3, "mha_combine");
  require_rank(v, 2, "mha_combine");
  const std::size_t heads = p.dim(0), n = p.dim(1), m = p.dim(2), d = v.dim(1);
  if (v.dim(0) != m || d % heads != 0) {
    throw DimensionError("mha_combine: weights " + shape_string(p.shape()) + " vs values " +
                         shape_string(v.shape()));
  }
  const std::size_t dh = d / heads;
  std::vector<double> y(n * d);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto vh = head_columns(v.data(), m, d, h, dh);
    std::vector<double> oh(n * dh);
    kernels::gemm_nn(n, dh, m, p.data().data() + h * n * m, vh.data(), oh.data(), false);
    add_head_columns(y, oh, n, d, h, dh);
  }
  Tensor out({n, d}, std::move(y));
  maybe_record({p, v}, out, [p, v, out, heads, n, m, d, dh]() mutable {
    const auto g = out.grad();
    for (std::size_t h = 0; h < heads; ++h) {
      const auto gh = head_columns(g, n, d, h, dh);
      if (p.requires_grad()) {
        const auto vh = head_columns(v.data(), m, d, h, dh);
        kernels::gemm_nt(n, m, dh, gh.data(), vh.data(), p.mutable_grad().data() + h * n * m, true);
      }
      if (v.requires_grad()) {
        std::vector<double> gv(m * dh);
        kernels::gemm_tn(m, dh, n, p.data().data() + h * n * m, gh.data(), gv.data(), false);
        add_head_columns(v.mutable_grad(), gv, m, d, h, dh);
      }
    }
  });
  return out;
}

Tensor mean_leading(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("mean_leading: need rank >= 2, got " + shape_string(x.shape()));
  const std::size_t h = x.dim(0);
  const std::size_t inner = x.numel() / h;
  const double inv = 1.0 / static_cast<double>(h);
  std::vector<double> y(inner, 0.0);
  const auto xs = x.data();
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < inner; ++j) y[j] += xs[i * inner + j];
  }
  for (auto& v : y) v *= inv;
  Shape shape(x.shape().begin() + 1, x.shape().end());
  Tensor out(std::move(shape), std::move(y));
  maybe_record({x}, out, [x, out, h, inner, inv]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < inner; ++j) gx[i * inner + j] += g[j] * inv;
    }
  });
  return out;
}

Tensor segment_sum_cols(const Tensor& x, std::span<const std::size_t> boundaries) {
  require_rank(x, 2, "segment_sum_cols");
  const std::size_t rows = x.dim(0), m = x.dim(1);
  if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != m) {
    throw DimensionError("segment_sum_cols: boundaries must run from 0 to " + std::to_string(m));
  }
  for (std::size_t s = 1; s < boundaries.size(); ++s) {
    if (boundaries[s] <= boundaries[s - 1]) {
      throw DimensionError("segment_sum_cols: boundaries must be strictly increasing");
    }
  }
  const std::size_t segs = boundaries.size() - 1;
  std::vector<double> y(rows * segs, 0.0);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t s = 0; s < segs; ++s) {
      double acc = 0.0;
      for (std::size_t c = boundaries[s]; c < boundaries[s + 1]; ++c) acc += xs[r * m + c];
      y[r * segs + s] = acc;
    }
  }
  Tensor out({rows, segs}, std::move(y));
  std::vector<std::size_t> b(boundaries.begin(), boundaries.end());
  maybe_record({x}, out, [x, out, rows, m, segs, b = std::move(b)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const auto g = out.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t s = 0; s < segs; ++s) {
        for (std::size_t c = b[s]; c < b[s + 1]; ++c) gx[r * m + c] += g[r * segs + s];
      }
    }
  });
  return out;
}

}  // namespace segvggt::numerics
