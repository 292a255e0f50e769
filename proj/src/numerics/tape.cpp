#include "segvggt/numerics/tape.hpp"

namespace segvggt::numerics {

namespace {
thread_local Tape* current_tape = nullptr;
}

Tape* active_tape() { return current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!current_tape) return false;
  for (const auto* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
  if (!current_tape) return false;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule) {
  output.set_requires_grad(true);
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward on a loss that was not produced through a tape");
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->rule();
  }
}

}  // namespace segvggt::numerics
