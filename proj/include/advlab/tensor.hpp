#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace advlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any shape or geometry inconsistency. The message names the
/// offending extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

bool same_shape(const Tensor& a, const Tensor& b);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Element-wise arithmetic (identical shapes).
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor operator-(const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);

Tensor map(const Tensor& a, double (*fn)(double));
Tensor sign(const Tensor& a);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double norm_l1(std::span<const double> v);
double norm_l2(std::span<const double> v);
double norm_linf(std::span<const double> v);
/// ℓp norm for p in {1, 2, inf}; `p <= 0` or `p == inf` selects ℓ∞.
double norm_p(std::span<const double> v, double p);

/// 2-D matrix product with optional transposes: op(a) · op(b).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// Same-rank broadcast: every axis of `a` equals the target or is 1.
Tensor expand(const Tensor& a, const Shape& target);
/// Adjoint of expand: sums the axes of `a` that are 1 in `target`.
Tensor reduce_to(const Tensor& a, const Shape& target);

enum class Padding { Zero, None };

/// Convolution window geometry. Output extent per spatial axis is
///   out = floor((in + 2·pad − dilation·(k−1) − 1) / stride) + 1.
struct ConvGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::None;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  /// Zero padding of dilation·(k−1)/2, which keeps extents at stride 1.
  static ConvGeometry same(std::size_t k, std::size_t stride = 1, std::size_t dilation = 1);
  static ConvGeometry valid(std::size_t k, std::size_t stride = 1, std::size_t dilation = 1);

  std::size_t out_h(std::size_t in) const;
  std::size_t out_w(std::size_t in) const;
  void validate() const;

  bool operator==(const ConvGeometry&) const = default;
};

/// Cross-correlation. Accepts input [C,H,W] (kernel [Co,C,h,w]) or a batch
/// [N,C,H,W]; the output rank follows the input.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom);
/// Gradient of conv2d with respect to its input, given the output gradient.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, const ConvGeometry& geom,
                             std::size_t in_h, std::size_t in_w);
/// Gradient of conv2d with respect to its kernel.
Tensor conv2d_backward_kernel(const Tensor& input, const Tensor& grad_out, const ConvGeometry& geom,
                              std::size_t kernel_h, std::size_t kernel_w);

/// Non-overlapping window. `stride` must equal `mask` and divide the input.
struct PoolWindow {
  std::size_t h = 2;
  std::size_t w = 2;
  std::size_t area() const { return h * w; }
  bool operator==(const PoolWindow&) const = default;
};

Tensor avg_pool(const Tensor& input, PoolWindow mask, PoolWindow stride);
inline Tensor avg_pool(const Tensor& input, PoolWindow mask) { return avg_pool(input, mask, mask); }
/// Adjoint of avg_pool: each output gradient spread as g/a over its window.
Tensor avg_pool_backward(const Tensor& grad_out, PoolWindow mask, const Shape& input_shape);

/// Max pooling. When `argmax` is non-null it receives, for every output
/// element, the flat input index of the first maximal entry of its window.
Tensor max_pool(const Tensor& input, PoolWindow mask, PoolWindow stride,
                std::vector<std::uint32_t>* argmax = nullptr);
inline Tensor max_pool(const Tensor& input, PoolWindow mask) { return max_pool(input, mask, mask); }

/// out[i] = src[index[i]].
Tensor gather(const Tensor& src, std::span<const std::uint32_t> index, const Shape& out_shape);
/// out = zeros(out_shape); out[index[i]] += src[i].
Tensor scatter_add(const Tensor& src, std::span<const std::uint32_t> index, const Shape& out_shape);

// Binary serialization: little-endian u32 rank, u32 extents, f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
std::vector<std::uint8_t> serialize(const Tensor& t);
Tensor deserialize(std::span<const std::uint8_t> bytes);

}  // namespace advlab
