#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segvggt::numerics {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Dense row-major array of doubles. A Tensor is a cheap handle: copies share
/// storage, so a parameter held by a model and by an optimizer is one object.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(storage_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  /// Leading dimensions folded together; the matrix view used by last-dim ops.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Allocates a zeroed gradient buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;
  void clear_grad();

  /// Deep copy detached from any tape.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  void require_defined() const;

  std::shared_ptr<Storage> storage_;
};

}  // namespace segvggt::numerics
