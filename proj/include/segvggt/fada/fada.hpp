#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "segvggt/numerics/tensor.hpp"

// Frame-level attention alignment: a query's cross-attention mass per view is
// compared with the target instance's per-view share of visible pixels.

namespace segvggt::fada {

using numerics::Tensor;

class PartitionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Counts calls into js_divergence and marginalize_frames (all overloads), so
/// callers can assert that a code path never touches alignment machinery.
std::uint64_t instrumentation_count();
void reset_instrumentation();

/// Checks that boundaries b_0 = 0 < b_1 < ... < b_N = tokens.
void check_partition(std::span<const std::size_t> boundaries, std::size_t tokens);

/// Sums a token-level attention row over each view.
std::vector<double> marginalize_frames(std::span<const double> row, std::span<const std::size_t> boundaries);
/// Differentiable form over rows: [O x M] -> [O x N].
Tensor marginalize_frames(const Tensor& attention, std::span<const std::size_t> boundaries);

/// Jensen-Shannon divergence in nats. Inputs are renormalized to sum 1.
double js_divergence(std::span<const double> p, std::span<const double> q);

/// Row-wise JS(target_r || pred_r): pred [R x N] (differentiable), target R*N
/// constants, result [R].
Tensor js_divergence_rows(const Tensor& pred, std::span<const double> target);

struct FadaCostBlock {
  std::size_t queries = 0;
  std::size_t instances = 0;
  std::vector<double> cost;  // row-major [queries x instances]

  double at(std::size_t j, std::size_t k) const { return cost[j * instances + k]; }
};

/// C_{j,k} = (1 / (L N)) sum_l JS(target_k || marginal_j^(l)).
FadaCostBlock fada_cost_matrix(const std::vector<Tensor>& layer_attention,
                               std::span<const std::size_t> boundaries,
                               const std::vector<std::vector<double>>& targets);

struct FadaLossResult {
  Tensor value;             // scalar
  bool no_matches = false;  // set when the match set was empty (value = 0)
};

/// Mean over matched (query, instance) pairs of the layer-summed JS, divided
/// by L N. Differentiable in the attention rows.
FadaLossResult fada_loss(const std::vector<std::pair<std::size_t, std::size_t>>& matches,
                         const std::vector<Tensor>& layer_attention,
                         std::span<const std::size_t> boundaries,
                         const std::vector<std::vector<double>>& targets);

}  // namespace segvggt::fada
