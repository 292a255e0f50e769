#include "segvggt/fada/fada.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"

namespace segvggt::fada {

namespace nm = numerics;

namespace {

std::atomic<std::uint64_t> g_calls{0};

double safe_log(double x) { return std::log(std::max(x, nm::kLogFloor)); }

double checked_sum(std::span<const double> v, const char* name) {
  double s = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) throw DomainError(std::string("js_divergence: negative or non-finite entry in ") + name);
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-6) {
    throw DomainError(std::string("js_divergence: ") + name + " sums to " + std::to_string(s));
  }
  return s;
}

// JS of already-normalized vectors and its gradient with respect to q.
double js_normalized(const double* p, const double* q, std::size_t n, double* dq) {
  double js = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    const double log_m = safe_log(m);
    if (p[i] > 0.0) js += 0.5 * p[i] * (safe_log(p[i]) - log_m);
    if (q[i] > 0.0) js += 0.5 * q[i] * (safe_log(q[i]) - log_m);
    if (dq) dq[i] = 0.5 * (safe_log(q[i]) - log_m);
  }
  return std::max(js, 0.0);
}

}  // namespace

std::uint64_t instrumentation_count() { return g_calls.load(); }
void reset_instrumentation() { g_calls.store(0); }

void check_partition(std::span<const std::size_t> boundaries, std::size_t tokens) {
  if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != tokens) {
    throw PartitionError("view boundaries must start at 0 and end at " + std::to_string(tokens));
  }
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) {
      throw PartitionError("view boundaries must be strictly increasing (view " + std::to_string(i - 1) + ")");
    }
  }
}

std::vector<double> marginalize_frames(std::span<const double> row, std::span<const std::size_t> boundaries) {
  ++g_calls;
  check_partition(boundaries, row.size());
  std::vector<double> out(boundaries.size() - 1, 0.0);
  for (std::size_t v = 0; v + 1 < boundaries.size(); ++v) {
    for (std::size_t t = boundaries[v]; t < boundaries[v + 1]; ++t) out[v] += row[t];
  }
  return out;
}

Tensor marginalize_frames(const Tensor& attention, std::span<const std::size_t> boundaries) {
  ++g_calls;
  check_partition(boundaries, attention.cols());
  return nm::segment_sum_cols(attention, boundaries);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  ++g_calls;
  if (p.size() != q.size() || p.empty()) throw DomainError("js_divergence: length mismatch");
  const double sp = checked_sum(p, "p"), sq = checked_sum(q, "q");
  std::vector<double> pn(p.size()), qn(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    pn[i] = p[i] / sp;
    qn[i] = q[i] / sq;
  }
  return js_normalized(pn.data(), qn.data(), p.size(), nullptr);
}

Tensor js_divergence_rows(const Tensor& pred, std::span<const double> target) {
  ++g_calls;
  const std::size_t rows = pred.rows(), n = pred.cols();
  if (target.size() != rows * n) throw DomainError("js_divergence_rows: target size mismatch");
  const auto q = pred.data();
  std::vector<double> values(rows), qn(rows * n), pn(rows * n), dq(rows * n), qsum(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto pr = target.subspan(r * n, n);
    const auto qr = q.subspan(r * n, n);
    const double sp = checked_sum(pr, "target"), sq = checked_sum(qr, "prediction");
    qsum[r] = sq;
    for (std::size_t i = 0; i < n; ++i) {
      pn[r * n + i] = pr[i] / sp;
      qn[r * n + i] = qr[i] / sq;
    }
    values[r] = js_normalized(pn.data() + r * n, qn.data() + r * n, n, dq.data() + r * n);
  }
  Tensor out({rows}, std::move(values));
  if (nm::should_record({&pred})) {
    nm::active_tape()->record({pred}, out, [pred, out, dq = std::move(dq), qn = std::move(qn),
                                            qsum = std::move(qsum), rows, n] {
      // Chain through q -> q / sum(q): dq_i = (g_i - sum_j g_j qn_j) / sum(q).
      const auto go = out.grad();
      auto gp = pred.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += dq[r * n + i] * qn[r * n + i];
        for (std::size_t i = 0; i < n; ++i) gp[r * n + i] += go[r] * (dq[r * n + i] - dot) / qsum[r];
      }
    });
  }
  return out;
}

namespace {

void check_targets(const std::vector<std::vector<double>>& targets, std::size_t views) {
  for (const auto& t : targets) {
    if (t.size() != views) throw DomainError("target distribution length does not match view count");
  }
}

}  // namespace

FadaCostBlock fada_cost_matrix(const std::vector<Tensor>& layer_attention,
                               std::span<const std::size_t> boundaries,
                               const std::vector<std::vector<double>>& targets) {
  if (layer_attention.empty()) throw nm::ContractError("fada_cost_matrix: no recorded attention layers");
  const std::size_t views = boundaries.size() - 1, layers = layer_attention.size();
  check_targets(targets, views);
  FadaCostBlock block;
  block.queries = layer_attention.front().rows();
  block.instances = targets.size();
  block.cost.assign(block.queries * block.instances, 0.0);
  for (const auto& a : layer_attention) {
    if (!a.defined() || a.rows() != block.queries) {
      throw nm::ContractError("fada_cost_matrix: attention layer record missing or malformed");
    }
    const auto data = a.data();
    for (std::size_t j = 0; j < block.queries; ++j) {
      const auto marginal = marginalize_frames(data.subspan(j * a.cols(), a.cols()), boundaries);
      for (std::size_t k = 0; k < block.instances; ++k) {
        block.cost[j * block.instances + k] += js_divergence(targets[k], marginal);
      }
    }
  }
  const double norm = 1.0 / static_cast<double>(layers * views);
  for (auto& c : block.cost) c *= norm;
  return block;
}

FadaLossResult fada_loss(const std::vector<std::pair<std::size_t, std::size_t>>& matches,
                         const std::vector<Tensor>& layer_attention,
                         std::span<const std::size_t> boundaries,
                         const std::vector<std::vector<double>>& targets) {
  FadaLossResult result;
  if (matches.empty()) {
    result.value = Tensor::scalar(0.0);
    result.no_matches = true;
    return result;
  }
  if (layer_attention.empty()) throw nm::ContractError("fada_loss: no recorded attention layers");
  const std::size_t views = boundaries.size() - 1, layers = layer_attention.size();
  check_targets(targets, views);
  std::vector<std::size_t> rows;
  std::vector<double> target;
  for (const auto& [j, k] : matches) {
    rows.push_back(j);
    target.insert(target.end(), targets.at(k).begin(), targets.at(k).end());
  }
  std::vector<Tensor> per_layer;
  for (const auto& a : layer_attention) {
    const Tensor marginal = marginalize_frames(nm::gather_rows(a, rows), boundaries);
    per_layer.push_back(nm::sum(js_divergence_rows(marginal, target)));
  }
  const Tensor total = per_layer.size() == 1 ? per_layer.front() : nm::sum(nm::stack_scalars(per_layer));
  result.value = nm::scale(total, 1.0 / static_cast<double>(matches.size() * layers * views));
  return result;
}

}  // namespace segvggt::fada
