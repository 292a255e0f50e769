#include "segvggt/assign/assign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"

namespace segvggt::assign {

namespace nm = numerics;

namespace {

double safe_log(double x) { return std::log(std::max(x, nm::kLogFloor)); }

void require_same_length(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw nm::DimensionError(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " +
                             std::to_string(b));
  }
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<double> flatten_masks(const std::vector<std::vector<double>>& views, std::size_t height,
                                  std::size_t width) {
  std::vector<double> flat;
  flat.reserve(views.size() * height * width);
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].size() != height * width) {
      throw nm::DimensionError("flatten_masks: view " + std::to_string(v) + " has " +
                               std::to_string(views[v].size()) + " entries, expected " +
                               std::to_string(height) + "x" + std::to_string(width));
    }
    flat.insert(flat.end(), views[v].begin(), views[v].end());
  }
  return flat;
}

std::vector<std::vector<double>> unflatten_masks(std::span<const double> flat, std::size_t views,
                                                 std::size_t height, std::size_t width) {
  const std::size_t per = height * width;
  require_same_length(flat.size(), views * per, "unflatten_masks");
  std::vector<std::vector<double>> out(views);
  for (std::size_t v = 0; v < views; ++v) out[v].assign(flat.begin() + v * per, flat.begin() + (v + 1) * per);
  return out;
}

double bce(std::span<const double> m, std::span<const double> gt) {
  require_same_length(m.size(), gt.size(), "bce");
  if (m.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    s -= gt[i] * safe_log(m[i]) + (1.0 - gt[i]) * safe_log(1.0 - m[i]);
  }
  return s / static_cast<double>(m.size());
}

double dice(std::span<const double> m, std::span<const double> gt) {
  require_same_length(m.size(), gt.size(), "dice");
  double inter = 0.0, sm = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    inter += m[i] * gt[i];
    sm += m[i];
    sg += gt[i];
  }
  return 1.0 - (2.0 * inter + 1.0) / (sm + sg + 1.0);
}

// From logits, -[g log s(x) + (1-g) log(1 - s(x))] = softplus(x) - g x, which
// matches the floored probability form everywhere the floor is inactive.
Tensor bce_rows(const Tensor& logits, std::span<const double> gt) {
  const std::size_t rows = logits.rows(), p = logits.cols();
  require_same_length(gt.size(), rows * p, "bce_rows");
  const auto x = logits.data();
  std::vector<double> values(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = r * p; i < (r + 1) * p; ++i) s += softplus(x[i]) - gt[i] * x[i];
    values[r] = s / static_cast<double>(p);
  }
  Tensor out({rows}, std::move(values));
  if (nm::should_record({&logits})) {
    std::vector<double> target(gt.begin(), gt.end());
    nm::active_tape()->record({logits}, out, [logits, out, target = std::move(target), rows, p] {
      const auto go = out.grad();
      const auto xs = logits.data();
      auto g = logits.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double scale = go[r] / static_cast<double>(p);
        for (std::size_t i = r * p; i < (r + 1) * p; ++i) g[i] += scale * (stable_sigmoid(xs[i]) - target[i]);
      }
    });
  }
  return out;
}

Tensor dice_rows(const Tensor& logits, std::span<const double> gt) {
  const std::size_t rows = logits.rows(), p = logits.cols();
  require_same_length(gt.size(), rows * p, "dice_rows");
  const auto x = logits.data();
  std::vector<double> m(rows * p), num(rows), den(rows), values(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double inter = 0.0, sm = 0.0, sg = 0.0;
    for (std::size_t i = r * p; i < (r + 1) * p; ++i) {
      m[i] = stable_sigmoid(x[i]);
      inter += m[i] * gt[i];
      sm += m[i];
      sg += gt[i];
    }
    num[r] = 2.0 * inter + 1.0;
    den[r] = sm + sg + 1.0;
    values[r] = 1.0 - num[r] / den[r];
  }
  Tensor out({rows}, std::move(values));
  if (nm::should_record({&logits})) {
    std::vector<double> target(gt.begin(), gt.end());
    nm::active_tape()->record({logits}, out, [logits, out, target = std::move(target), m = std::move(m),
                                              num = std::move(num), den = std::move(den), rows, p] {
      const auto go = out.grad();
      auto g = logits.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double d2 = den[r] * den[r];
        for (std::size_t i = r * p; i < (r + 1) * p; ++i) {
          const double dm = -(2.0 * target[i] * den[r] - num[r]) / d2;
          g[i] += go[r] * dm * m[i] * (1.0 - m[i]);
        }
      }
    });
  }
  return out;
}

CostMatrix match_cost(std::span<const double> class_probs, std::size_t num_classes,
                      std::span<const double> masks, std::span<const int> gt_classes,
                      std::span<const double> gt_masks, const fada::FadaCostBlock* js,
                      const LossWeights& w) {
  const std::size_t classes1 = num_classes + 1;
  if (class_probs.size() % classes1) throw nm::DimensionError("match_cost: class probability size");
  const std::size_t o = class_probs.size() / classes1, g = gt_classes.size();
  if (o == 0) throw nm::DimensionError("match_cost: no queries");
  const std::size_t p = masks.size() / o;
  require_same_length(masks.size(), o * p, "match_cost masks");
  require_same_length(gt_masks.size(), g * p, "match_cost gt masks");
  for (int c : gt_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw std::out_of_range("match_cost: gt class " + std::to_string(c) + " out of range");
    }
  }
  if (js && (js->queries != o || js->instances != g)) throw nm::DimensionError("match_cost: js block shape");

  CostMatrix c;
  c.queries = o;
  c.instances = g;
  c.cls.resize(o * g);
  c.bce.resize(o * g);
  c.dice.resize(o * g);
  c.js.assign(o * g, 0.0);
  c.total.resize(o * g);
  for (std::size_t j = 0; j < o; ++j) {
    const auto mj = masks.subspan(j * p, p);
    for (std::size_t k = 0; k < g; ++k) {
      const auto gk = gt_masks.subspan(k * p, p);
      const std::size_t e = j * g + k;
      c.cls[e] = class_probs[j * classes1 + static_cast<std::size_t>(gt_classes[k])];
      c.bce[e] = bce(mj, gk);
      c.dice[e] = dice(mj, gk);
      if (js) c.js[e] = js->at(j, k);
      c.total[e] = -w.cls * c.cls[e] + w.mask * (c.bce[e] + c.dice[e]) + w.js * c.js[e];
    }
  }
  return c;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest augmenting path assignment of every row of an n x m (n <= m)
// matrix; `allowed` masks usable entries. Returns +inf when infeasible.
double solve_rows(const std::vector<double>& a, const std::vector<char>& allowed, std::size_t n,
                  std::size_t m, std::vector<std::size_t>* row_to_col) {
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        if (allowed[(i0 - 1) * m + (j - 1)]) {
          const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (delta == kInf) return kInf;
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  row_to_col->assign(n, 0);
  double total = 0.0;
  for (std::size_t j = 1; j <= m; ++j) {
    if (match[j]) (*row_to_col)[match[j] - 1] = j - 1;
  }
  for (std::size_t i = 0; i < n; ++i) total += a[i * m + (*row_to_col)[i]];
  return total;
}

}  // namespace

Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  require_same_length(cost.size(), rows * cols, "hungarian");
  if (rows < cols) {
    throw CapacityError("hungarian: " + std::to_string(cols) + " instances exceed " + std::to_string(rows) +
                        " queries");
  }
  for (double c : cost) {
    if (!std::isfinite(c)) throw std::domain_error("hungarian: non-finite cost entry");
  }
  Assignment out;
  if (cols == 0) return out;

  // Solve with instances as rows so every instance is matched.
  std::vector<double> a(cols * rows);
  for (std::size_t j = 0; j < rows; ++j) {
    for (std::size_t k = 0; k < cols; ++k) a[k * rows + j] = cost[j * cols + k];
  }
  std::vector<char> allowed(a.size(), 1);
  std::vector<std::size_t> inst_to_query;
  const double best = solve_rows(a, allowed, cols, rows, &inst_to_query);
  const double tol = 1e-12 * std::max(1.0, std::abs(best));

  // Walk queries in order; give each the smallest instance that keeps the
  // optimum reachable, or leave it unmatched if none does.
  std::vector<char> instance_taken(cols, 0);
  for (std::size_t j = 0; j < rows; ++j) {
    bool placed = false;
    for (std::size_t k = 0; k < cols && !placed; ++k) {
      if (instance_taken[k]) continue;
      std::vector<char> trial = allowed;
      for (std::size_t kk = 0; kk < cols; ++kk) trial[kk * rows + j] = kk == k;
      for (std::size_t jj = 0; jj < rows; ++jj) trial[k * rows + jj] = jj == j;
      std::vector<std::size_t> tmp;
      const double value = solve_rows(a, trial, cols, rows, &tmp);
      if (value <= best + tol) {
        allowed = std::move(trial);
        instance_taken[k] = 1;
        placed = true;
      }
    }
    if (!placed) {
      for (std::size_t k = 0; k < cols; ++k) allowed[k * rows + j] = 0;
    }
  }
  solve_rows(a, allowed, cols, rows, &inst_to_query);
  for (std::size_t k = 0; k < cols; ++k) out.cost += cost[inst_to_query[k] * cols + k];
  for (std::size_t k = 0; k < cols; ++k) out.pairs.emplace_back(inst_to_query[k], k);
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

Assignment hungarian(const CostMatrix& c) { return hungarian(c.total, c.queries, c.instances); }

InstanceLoss instance_loss(const Assignment& matches, const Tensor& class_logits, const Tensor& mask_logits,
                           std::span<const int> gt_classes, std::span<const double> gt_masks,
                           const LossWeights& w) {
  const std::size_t o = class_logits.rows(), no_object = class_logits.cols() - 1;
  const std::size_t p = mask_logits.cols();
  std::vector<std::size_t> target(o, no_object);
  std::vector<double> weight(o, w.no_object);
  std::vector<std::size_t> rows;
  std::vector<double> gt_rows;
  for (const auto& [j, k] : matches.pairs) {
    target[j] = static_cast<std::size_t>(gt_classes[k]);
    weight[j] = 1.0;
    rows.push_back(j);
    gt_rows.insert(gt_rows.end(), gt_masks.begin() + k * p, gt_masks.begin() + (k + 1) * p);
  }
  double weight_sum = 0.0;
  for (double x : weight) weight_sum += x;
  for (auto& x : weight) x = -x / weight_sum;

  InstanceLoss out;
  out.cls = nm::pick(nm::log_softmax_lastdim(class_logits), target, weight);
  if (rows.empty()) {
    out.bce = Tensor::scalar(0.0);
    out.dice = Tensor::scalar(0.0);
    out.total = nm::scale(out.cls, w.cls);
    return out;
  }
  const Tensor matched = nm::gather_rows(mask_logits, rows);
  out.bce = nm::mean(bce_rows(matched, gt_rows));
  out.dice = nm::mean(dice_rows(matched, gt_rows));
  out.total = nm::add(nm::scale(out.cls, w.cls), nm::scale(nm::add(out.bce, out.dice), w.mask));
  return out;
}

GeometryLoss geometry_loss(const Tensor& cameras, std::span<const double> gt_cameras, const Tensor& depth,
                           std::span<const double> gt_depth, const LossWeights& w) {
  const std::size_t n = cameras.rows();
  require_same_length(gt_cameras.size(), n * 9, "geometry_loss cameras");
  require_same_length(gt_depth.size(), depth.numel(), "geometry_loss depth");

  // q and -q are the same rotation; compare against the nearer sign.
  std::vector<double> target(gt_cameras.begin(), gt_cameras.end());
  const auto pred = cameras.data();
  for (std::size_t v = 0; v < n; ++v) {
    double dot = 0.0;
    for (std::size_t i = 0; i < 4; ++i) dot += pred[v * 9 + i] * target[v * 9 + i];
    if (dot < 0.0) {
      for (std::size_t i = 0; i < 4; ++i) target[v * 9 + i] = -target[v * 9 + i];
    }
  }
  GeometryLoss out;
  out.camera = nm::mean(nm::huber(nm::sub(cameras, Tensor(cameras.shape(), std::move(target))), 0.1));

  std::size_t valid = 0;
  for (double d : gt_depth) valid += d > 0.0;
  if (valid == 0) throw DegenerateSupervision("geometry_loss: no valid depth pixels in any view");
  std::vector<double> log_gt(gt_depth.size(), 0.0), weights(gt_depth.size(), 0.0);
  for (std::size_t i = 0; i < gt_depth.size(); ++i) {
    if (gt_depth[i] > 0.0) {
      log_gt[i] = std::log(gt_depth[i]);
      weights[i] = 1.0 / static_cast<double>(valid);
    }
  }
  // Invalid pixels compare log D with itself so they contribute nothing.
  const Tensor log_d = nm::log(depth);
  const auto ld = log_d.data();
  for (std::size_t i = 0; i < gt_depth.size(); ++i) {
    if (weights[i] == 0.0) log_gt[i] = ld[i];
  }
  out.depth = nm::weighted_sum(nm::abs(nm::sub(log_d, Tensor(depth.shape(), std::move(log_gt)))), weights);
  out.total = nm::add(nm::scale(out.camera, w.camera), nm::scale(out.depth, w.depth));
  return out;
}

Tensor total_loss(const Tensor& geometry, const Tensor& instance, const Tensor& alignment,
                  const LossWeights& w) {
  return nm::add(nm::add(geometry, instance), nm::scale(alignment, w.js));
}

}  // namespace segvggt::assign
