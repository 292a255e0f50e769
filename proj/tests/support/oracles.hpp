#pragma once

// Slow, direct reference implementations used as test oracles. None of them
// calls into the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "segvggt/eval/eval.hpp"

namespace oracle {

/// JS divergence in nats computed from the definition in long double.
inline double js(const std::vector<double>& p, const std::vector<double>& q) {
  long double sp = 0, sq = 0;
  for (double x : p) sp += x;
  for (double x : q) sq += x;
  long double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double a = p[i] / sp, b = q[i] / sq, m = (a + b) / 2;
    if (a > 0) d += a * std::log(a / m) / 2;
    if (b > 0) d += b * std::log(b / m) / 2;
  }
  return static_cast<double>(d);
}

/// Per-view sums taken one token at a time in index order.
inline std::vector<double> view_sums(std::span<const double> row, std::span<const std::size_t> bounds) {
  std::vector<double> out;
  for (std::size_t v = 0; v + 1 < bounds.size(); ++v) {
    double s = 0.0;
    for (std::size_t t = bounds[v]; t < bounds[v + 1]; ++t) s += row[t];
    out.push_back(s);
  }
  return out;
}

struct BruteAssignment {
  double cost = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // ascending query
};

/// Enumerates every injective map from columns to rows. Costs are summed in
/// column order; among equal totals the lexicographically smallest sorted
/// (row, column) sequence wins.
inline BruteAssignment brute_assignment(std::span<const double> c, std::size_t rows, std::size_t cols) {
  BruteAssignment best;
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  // Enumerate permutations of rows; the first `cols` entries are the rows
  // assigned to columns 0..cols-1. Duplicates of the tail are harmless.
  do {
    double total = 0.0;
    for (std::size_t k = 0; k < cols; ++k) total += c[perm[k] * cols + k];
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t k = 0; k < cols; ++k) pairs.emplace_back(perm[k], k);
    std::sort(pairs.begin(), pairs.end());
    if (total < best.cost || (total == best.cost && pairs < best.pairs)) {
      best.cost = total;
      best.pairs = pairs;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// AP from the rank form: each true positive at rank k contributes
/// (1/G) * max precision at ranks >= k. Order is found by scanning every
/// permutation for the one sorted by (score desc, scene, id).
inline double ap(const std::vector<segvggt::eval::InstanceSet>& preds,
                 const std::vector<segvggt::eval::InstanceSet>& gts, double thr, int cls) {
  std::vector<const segvggt::eval::InstanceSet*> g, p;
  for (const auto& x : gts) {
    if (x.class_index == cls) g.push_back(&x);
  }
  if (g.empty()) return -1.0;
  for (const auto& x : preds) {
    if (x.class_index == cls) p.push_back(&x);
  }
  auto before = [](const segvggt::eval::InstanceSet* a, const segvggt::eval::InstanceSet* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->scene != b->scene) return a->scene < b->scene;
    return a->id < b->id;
  };
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> chosen;
  do {
    bool ok = true;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      if (before(p[order[i + 1]], p[order[i]])) ok = false;
      if (!before(p[order[i]], p[order[i + 1]]) && order[i] > order[i + 1]) ok = false;  // stable on full ties
    }
    if (ok) {
      chosen = order;
      break;
    }
  } while (std::next_permutation(order.begin(), order.end()));

  auto iou = [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> in, un;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(in));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(un));
    return un.empty() ? 0.0 : static_cast<double>(in.size()) / static_cast<double>(un.size());
  };
  std::vector<bool> used(g.size(), false), tp(chosen.size(), false);
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const auto* pr = p[chosen[r]];
    int pick = -1;
    double best = -1.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (used[k] || g[k]->scene != pr->scene) continue;
      const double v = iou(pr->points, g[k]->points);
      if (v > best) {
        best = v;
        pick = static_cast<int>(k);
      }
    }
    if (pick >= 0 && best >= thr) {
      used[pick] = true;
      tp[r] = true;
    }
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    if (!tp[k]) continue;
    double best = 0.0;
    for (std::size_t j = k; j < chosen.size(); ++j) {
      const auto hits = static_cast<double>(std::count(tp.begin(), tp.begin() + static_cast<long>(j) + 1, true));
      best = std::max(best, hits / static_cast<double>(j + 1));
    }
    sum += best;
  }
  return sum / static_cast<double>(g.size());
}

/// Mean over thresholds 0.50..0.95 of the mean AP over classes with gt.
inline double map(const std::vector<segvggt::eval::InstanceSet>& preds,
                  const std::vector<segvggt::eval::InstanceSet>& gts) {
  std::vector<int> classes;
  for (const auto& x : gts) {
    if (std::find(classes.begin(), classes.end(), x.class_index) == classes.end()) classes.push_back(x.class_index);
  }
  if (classes.empty()) return 0.0;
  double total = 0.0;
  for (int t = 0; t < 10; ++t) {
    double s = 0.0;
    for (int c : classes) s += ap(preds, gts, 0.5 + 0.05 * t, c);
    total += s / static_cast<double>(classes.size());
  }
  return total / 10.0;
}

/// Random small AP case: up to 3 predictions and 3 gts over a shared point pool.
inline void random_ap_case(std::mt19937_64& rng, std::vector<segvggt::eval::InstanceSet>& preds,
                           std::vector<segvggt::eval::InstanceSet>& gts, int classes) {
  preds.clear();
  gts.clear();
  std::uniform_int_distribution<int> count(0, 3), cls(0, classes - 1), scene(0, 1);
  std::uniform_int_distribution<int> score_level(0, 3);  // coarse scores produce ties
  std::bernoulli_distribution take(0.5);
  auto points = [&] {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < 8; ++i) {
      if (take(rng)) s.push_back(i);
    }
    if (s.empty()) s.push_back(rng() % 8);
    return s;
  };
  const int ng = count(rng), np = count(rng);
  for (int i = 0; i < ng; ++i) {
    gts.push_back({static_cast<std::size_t>(scene(rng)), static_cast<std::size_t>(i), cls(rng), 1.0, points()});
  }
  for (int i = 0; i < np; ++i) {
    preds.push_back({static_cast<std::size_t>(scene(rng)), static_cast<std::size_t>(i), cls(rng),
                     0.25 * score_level(rng) + 0.1, points()});
  }
}

}  // namespace oracle
