#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dspl {

using Shape = std::vector<std::size_t>;

/// Thrown when operand extents do not satisfy an op's shape rules.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a NaN or Inf shows up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Images use NCHW order. The gradient buffer is absent until something
/// (usually Graph::backward on a bound parameter) allocates it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 4-D (NCHW) element access; no bounds checks beyond debug asserts.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool has_grad() const { return has_grad_; }
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates a zero gradient buffer if none exists.
  void ensure_grad();
  void zero_grad();
  void clear_grad();

  std::optional<std::size_t> node_id() const { return node_id_; }
  void set_node_id(std::optional<std::size_t> id) { node_id_ = id; }

  /// Reinterprets the extents; the element count must not change.
  void reshape(Shape shape);

  bool all_finite() const;
  /// Throws NumericError naming `where` if any element is NaN/Inf.
  void check_finite(std::string_view where) const;

  /// Exact comparison of shape and every bit of the payload.
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool has_grad_ = false;
  std::optional<std::size_t> node_id_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace dspl
