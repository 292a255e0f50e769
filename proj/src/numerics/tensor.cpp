#include "segvggt/numerics/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace segvggt::numerics {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero extent");
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  storage_ = std::make_shared<Storage>();
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::vector<double>(values), requires_grad);
}

void Tensor::require_defined() const {
  if (!storage_) throw ContractError("use of an undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined();
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const {
  require_defined();
  return storage_->data.size();
}

std::size_t Tensor::rows() const { return numel() / cols(); }

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const {
  require_defined();
  return storage_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined();
  return storage_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return storage_->data[0];
}

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  require_defined();
  storage_->requires_grad = flag;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined();
  return storage_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  require_defined();
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() const {
  require_defined();
  if (!storage_->grad.empty()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  require_defined();
  storage_->grad.clear();
  storage_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  require_defined();
  return Tensor(storage_->shape, storage_->data, storage_->requires_grad);
}

}  // namespace segvggt::numerics
