#pragma once

#include <functional>
#include <vector>

#include "segvggt/numerics/tensor.hpp"

namespace segvggt::numerics {

/// Records differentiable primitives in execution order. A tape lives for one
/// forward pass; backward() replays the recorded rules in reverse.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule);

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  /// requires_grad tensor reachable from the loss. Leaf gradients accumulate
  /// across calls; call zero_grad on parameters between steps.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule rule;
  };
  std::vector<Entry> entries_;
};

/// The tape that ops record onto on this thread, or nullptr when gradients
/// are not being tracked.
Tape* active_tape();

/// Makes a tape active for the current thread for the guard's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording (evaluation-only code paths).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// True when an op on these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

}  // namespace segvggt::numerics
