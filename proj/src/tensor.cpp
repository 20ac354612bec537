#include "advlab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace advlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const std::string& msg) { throw ShapeError(msg); }

// View a [C,H,W] tensor as a batch of one.
Shape as_batch(const Shape& s, const char* what) {
  if (s.size() == 4) return s;
  if (s.size() == 3) return Shape{1, s[0], s[1], s[2]};
  shape_fail(std::string(what) + ": expected [C,H,W] or [N,C,H,W], got " + shape_str(s));
}

void check_pool(const Shape& in4, PoolWindow mask, PoolWindow stride, const char* what) {
  if (mask.h == 0 || mask.w == 0) shape_fail(std::string(what) + ": empty pooling window");
  if (!(mask == stride)) {
    shape_fail(std::string(what) + ": only non-overlapping windows are supported (mask " +
               std::to_string(mask.h) + "x" + std::to_string(mask.w) + " != stride " +
               std::to_string(stride.h) + "x" + std::to_string(stride.w) + ")");
  }
  if (in4[2] % mask.h != 0 || in4[3] % mask.w != 0) {
    shape_fail(std::string(what) + ": window " + std::to_string(mask.h) + "x" +
               std::to_string(mask.w) + " does not divide input extent " + std::to_string(in4[2]) +
               "x" + std::to_string(in4[3]));
  }
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("read_tensor: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("read_tensor: truncated payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto e : shape_)
    if (e == 0) shape_fail("Tensor: zero extent in shape " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_)
    if (e == 0) shape_fail("Tensor: zero extent in shape " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size()) {
    shape_fail("Tensor: shape " + shape_str(shape_) + " holds " + std::to_string(shape_numel(shape_)) +
               " elements but data has " + std::to_string(data_.size()));
  }
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) shape_fail("Tensor::at: rank mismatch for " + shape_str(shape_));
  std::size_t off = 0;
  std::size_t k = 0;
  for (auto i : idx) {
    if (i >= shape_[k]) shape_fail("Tensor::at: index out of range for " + shape_str(shape_));
    off = off * shape_[k] + i;
    ++k;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

double Tensor::item() const {
  if (data_.size() != 1) shape_fail("Tensor::item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    shape_fail("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!same_shape(a, b))
    shape_fail(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

Tensor operator-(const Tensor& a) { return -1.0 * a; }

Tensor& operator+=(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Tensor map(const Tensor& a, double (*fn)(double)) {
  Tensor out = a;
  for (auto& v : out.data()) v = fn(v);
  return out;
}

Tensor sign(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data()) v = (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return out;
}

double sum(const Tensor& a) { return std::accumulate(a.vec().begin(), a.vec().end(), 0.0); }

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  return std::inner_product(a.vec().begin(), a.vec().end(), b.vec().begin(), 0.0);
}

double norm_l1(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

double norm_l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double norm_linf(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

double norm_p(std::span<const double> v, double p) {
  if (p == 1.0) return norm_l1(v);
  if (p == 2.0) return norm_l2(v);
  if (std::isinf(p) || p <= 0.0) return norm_linf(v);
  double s = 0.0;
  for (double x : v) s += std::pow(std::abs(x), p);
  return std::pow(s, 1.0 / p);
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    shape_fail("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    shape_fail("matmul: inner extents differ (" + std::to_string(ka) + " vs " + std::to_string(kb) +
               ") for " + shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
               (trans_b ? "^T" : ""));
  }
  Tensor out(Shape{m, n});
  ConstMap am(a.data().data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  ConstMap bm(b.data().data(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
  MutMap om(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!trans_a && !trans_b) om.noalias() = am * bm;
  else if (trans_a && !trans_b) om.noalias() = am.transpose() * bm;
  else if (!trans_a && trans_b) om.noalias() = am * bm.transpose();
  else om.noalias() = am.transpose() * bm.transpose();
  return out;
}

namespace {

// Row-major strides of `s`, with zero stride on broadcast axes of `src`.
std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& dst, const char* what) {
  if (src.size() != dst.size())
    shape_fail(std::string(what) + ": rank mismatch " + shape_str(src) + " vs " + shape_str(dst));
  std::vector<std::size_t> strides(src.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    if (src[i] != dst[i] && src[i] != 1)
      shape_fail(std::string(what) + ": cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
    strides[i] = (src[i] == 1 && dst[i] != 1) ? 0 : acc;
    acc *= src[i];
  }
  return strides;
}

template <typename Fn>
void for_each_broadcast(const Shape& big, const std::vector<std::size_t>& small_strides, Fn&& fn) {
  const std::size_t rank = big.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t small = 0;
  const std::size_t n = shape_numel(big);
  for (std::size_t flat = 0; flat < n; ++flat) {
    fn(flat, small);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      small += small_strides[ax];
      if (idx[ax] < big[ax]) break;
      small -= small_strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

Tensor expand(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  const auto strides = broadcast_strides(a.shape(), target, "expand");
  Tensor out(target);
  for_each_broadcast(target, strides, [&](std::size_t o, std::size_t s) { out[o] = a[s]; });
  return out;
}

Tensor reduce_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  const auto strides = broadcast_strides(target, a.shape(), "reduce_to");
  Tensor out(target);
  for_each_broadcast(a.shape(), strides, [&](std::size_t o, std::size_t s) { out[s] += a[o]; });
  return out;
}

ConvGeometry ConvGeometry::same(std::size_t k, std::size_t stride, std::size_t dilation) {
  ConvGeometry g;
  g.kernel_h = g.kernel_w = k;
  g.stride = stride;
  g.dilation = dilation;
  g.padding = Padding::Zero;
  g.pad_h = g.pad_w = dilation * (k - 1) / 2;
  return g;
}

ConvGeometry ConvGeometry::valid(std::size_t k, std::size_t stride, std::size_t dilation) {
  ConvGeometry g;
  g.kernel_h = g.kernel_w = k;
  g.stride = stride;
  g.dilation = dilation;
  return g;
}

void ConvGeometry::validate() const {
  if (kernel_h == 0 || kernel_w == 0) shape_fail("ConvGeometry: empty kernel");
  if (stride < 1) shape_fail("ConvGeometry: stride must be >= 1");
  if (dilation < 1) shape_fail("ConvGeometry: dilation must be >= 1");
  if (padding == Padding::None && (pad_h != 0 || pad_w != 0))
    shape_fail("ConvGeometry: padding mode 'none' with non-zero pad");
}

namespace {
std::size_t out_extent(std::size_t in, std::size_t pad, std::size_t dil, std::size_t k, std::size_t stride) {
  const auto span = static_cast<long long>(dil * (k - 1) + 1);
  const auto avail = static_cast<long long>(in + 2 * pad);
  if (avail < span) {
    shape_fail("conv2d: kernel span " + std::to_string(span) + " exceeds padded input extent " +
               std::to_string(avail));
  }
  return static_cast<std::size_t>((avail - span) / static_cast<long long>(stride)) + 1;
}
}  // namespace

std::size_t ConvGeometry::out_h(std::size_t in) const { return out_extent(in, pad_h, dilation, kernel_h, stride); }
std::size_t ConvGeometry::out_w(std::size_t in) const { return out_extent(in, pad_w, dilation, kernel_w, stride); }

namespace {

struct ConvDims {
  std::size_t n, ci, h, w, co, kh, kw, oh, ow;
  std::size_t rows() const { return ci * kh * kw; }
  std::size_t cols() const { return oh * ow; }
};

void im2col(const double* x, const ConvDims& d, const ConvGeometry& g, double* cols) {
  const auto hh = static_cast<long long>(d.h), ww = static_cast<long long>(d.w);
  for (std::size_t c = 0; c < d.ci; ++c)
    for (std::size_t i = 0; i < d.kh; ++i)
      for (std::size_t j = 0; j < d.kw; ++j) {
        double* row = cols + ((c * d.kh + i) * d.kw + j) * d.cols();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long long y = static_cast<long long>(oy * g.stride + i * g.dilation) - static_cast<long long>(g.pad_h);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long long xx = static_cast<long long>(ox * g.stride + j * g.dilation) - static_cast<long long>(g.pad_w);
            row[oy * d.ow + ox] = (y >= 0 && y < hh && xx >= 0 && xx < ww) ? x[(c * d.h + y) * d.w + xx] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvDims& d, const ConvGeometry& g, double* x) {
  const auto hh = static_cast<long long>(d.h), ww = static_cast<long long>(d.w);
  for (std::size_t c = 0; c < d.ci; ++c)
    for (std::size_t i = 0; i < d.kh; ++i)
      for (std::size_t j = 0; j < d.kw; ++j) {
        const double* row = cols + ((c * d.kh + i) * d.kw + j) * d.cols();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long long y = static_cast<long long>(oy * g.stride + i * g.dilation) - static_cast<long long>(g.pad_h);
          if (y < 0 || y >= hh) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long long xx = static_cast<long long>(ox * g.stride + j * g.dilation) - static_cast<long long>(g.pad_w);
            if (xx >= 0 && xx < ww) x[(c * d.h + y) * d.w + xx] += row[oy * d.ow + ox];
          }
        }
      }
}

ConvDims conv_dims(const Shape& in4, const Shape& kshape, const ConvGeometry& g) {
  g.validate();
  if (kshape.size() != 4) shape_fail("conv2d: kernel must be [Co,Ci,h,w], got " + shape_str(kshape));
  if (kshape[1] != in4[1]) {
    shape_fail("conv2d: input has " + std::to_string(in4[1]) + " channels but kernel expects " +
               std::to_string(kshape[1]) + " (input " + shape_str(in4) + ", kernel " + shape_str(kshape) + ")");
  }
  if (kshape[2] != g.kernel_h || kshape[3] != g.kernel_w) {
    shape_fail("conv2d: kernel extent " + std::to_string(kshape[2]) + "x" + std::to_string(kshape[3]) +
               " disagrees with geometry " + std::to_string(g.kernel_h) + "x" + std::to_string(g.kernel_w));
  }
  ConvDims d{in4[0], in4[1], in4[2], in4[3], kshape[0], kshape[2], kshape[3], 0, 0};
  d.oh = g.out_h(d.h);
  d.ow = g.out_w(d.w);
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom) {
  const Shape in4 = as_batch(input.shape(), "conv2d");
  const ConvDims d = conv_dims(in4, kernel.shape(), geom);
  Tensor out(Shape{d.n, d.co, d.oh, d.ow});
  std::vector<double> cols(d.rows() * d.cols());
  ConstMap wm(kernel.data().data(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(d.rows()));
  ConstMap cm(cols.data(), static_cast<Eigen::Index>(d.rows()), static_cast<Eigen::Index>(d.cols()));
  for (std::size_t s = 0; s < d.n; ++s) {
    im2col(input.data().data() + s * d.ci * d.h * d.w, d, geom, cols.data());
    MutMap om(out.data().data() + s * d.co * d.cols(), static_cast<Eigen::Index>(d.co),
              static_cast<Eigen::Index>(d.cols()));
    om.noalias() = wm * cm;
  }
  if (input.rank() == 3) return out.reshaped(Shape{d.co, d.oh, d.ow});
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, const ConvGeometry& geom,
                             std::size_t in_h, std::size_t in_w) {
  const Shape g4 = as_batch(grad_out.shape(), "conv2d_backward_input");
  const Shape in4{g4[0], kernel.dim(1), in_h, in_w};
  const ConvDims d = conv_dims(in4, kernel.shape(), geom);
  if (g4[1] != d.co || g4[2] != d.oh || g4[3] != d.ow) {
    shape_fail("conv2d_backward_input: gradient " + shape_str(g4) + " does not match output extents [" +
               std::to_string(d.co) + "," + std::to_string(d.oh) + "," + std::to_string(d.ow) + "]");
  }
  Tensor out(in4);
  std::vector<double> cols(d.rows() * d.cols());
  ConstMap wm(kernel.data().data(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(d.rows()));
  MutMap cm(cols.data(), static_cast<Eigen::Index>(d.rows()), static_cast<Eigen::Index>(d.cols()));
  for (std::size_t s = 0; s < d.n; ++s) {
    ConstMap gm(grad_out.data().data() + s * d.co * d.cols(), static_cast<Eigen::Index>(d.co),
                static_cast<Eigen::Index>(d.cols()));
    cm.noalias() = wm.transpose() * gm;
    col2im_add(cols.data(), d, geom, out.data().data() + s * d.ci * d.h * d.w);
  }
  if (grad_out.rank() == 3) return out.reshaped(Shape{d.ci, d.h, d.w});
  return out;
}

Tensor conv2d_backward_kernel(const Tensor& input, const Tensor& grad_out, const ConvGeometry& geom,
                              std::size_t kernel_h, std::size_t kernel_w) {
  const Shape in4 = as_batch(input.shape(), "conv2d_backward_kernel");
  const Shape g4 = as_batch(grad_out.shape(), "conv2d_backward_kernel");
  const Shape kshape{g4[1], in4[1], kernel_h, kernel_w};
  const ConvDims d = conv_dims(in4, kshape, geom);
  if (g4[0] != d.n || g4[2] != d.oh || g4[3] != d.ow)
    shape_fail("conv2d_backward_kernel: gradient " + shape_str(g4) + " inconsistent with input " + shape_str(in4));
  Tensor out(kshape);
  std::vector<double> cols(d.rows() * d.cols());
  ConstMap cm(cols.data(), static_cast<Eigen::Index>(d.rows()), static_cast<Eigen::Index>(d.cols()));
  MutMap wm(out.data().data(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(d.rows()));
  for (std::size_t s = 0; s < d.n; ++s) {
    im2col(input.data().data() + s * d.ci * d.h * d.w, d, geom, cols.data());
    ConstMap gm(grad_out.data().data() + s * d.co * d.cols(), static_cast<Eigen::Index>(d.co),
                static_cast<Eigen::Index>(d.cols()));
    wm.noalias() += gm * cm.transpose();
  }
  return out;
}

Tensor avg_pool(const Tensor& input, PoolWindow mask, PoolWindow stride) {
  const Shape in4 = as_batch(input.shape(), "avg_pool");
  check_pool(in4, mask, stride, "avg_pool");
  const std::size_t oh = in4[2] / mask.h, ow = in4[3] / mask.w, planes = in4[0] * in4[1];
  const double inv = 1.0 / static_cast<double>(mask.area());
  Shape oshape = input.shape();
  oshape[oshape.size() - 2] = oh;
  oshape[oshape.size() - 1] = ow;
  Tensor out(oshape);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.data().data() + p * in4[2] * in4[3];
    double* dst = out.data().data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t i = 0; i < mask.h; ++i)
          for (std::size_t j = 0; j < mask.w; ++j) s += src[(y * mask.h + i) * in4[3] + x * mask.w + j];
        dst[y * ow + x] = s * inv;
      }
  }
  return out;
}

Tensor avg_pool_backward(const Tensor& grad_out, PoolWindow mask, const Shape& input_shape) {
  const Shape in4 = as_batch(input_shape, "avg_pool_backward");
  check_pool(in4, mask, mask, "avg_pool_backward");
  const std::size_t oh = in4[2] / mask.h, ow = in4[3] / mask.w, planes = in4[0] * in4[1];
  if (grad_out.size() != planes * oh * ow)
    shape_fail("avg_pool_backward: gradient " + shape_str(grad_out.shape()) + " vs input " + shape_str(input_shape));
  const double inv = 1.0 / static_cast<double>(mask.area());
  Tensor out(input_shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = grad_out.data().data() + p * oh * ow;
    double* dst = out.data().data() + p * in4[2] * in4[3];
    for (std::size_t y = 0; y < in4[2]; ++y)
      for (std::size_t x = 0; x < in4[3]; ++x) dst[y * in4[3] + x] = src[(y / mask.h) * ow + x / mask.w] * inv;
  }
  return out;
}

Tensor max_pool(const Tensor& input, PoolWindow mask, PoolWindow stride, std::vector<std::uint32_t>* argmax) {
  const Shape in4 = as_batch(input.shape(), "max_pool");
  check_pool(in4, mask, stride, "max_pool");
  if (input.size() > std::numeric_limits<std::uint32_t>::max()) shape_fail("max_pool: input too large");
  const std::size_t oh = in4[2] / mask.h, ow = in4[3] / mask.w, planes = in4[0] * in4[1];
  Shape oshape = input.shape();
  oshape[oshape.size() - 2] = oh;
  oshape[oshape.size() - 1] = ow;
  Tensor out(oshape);
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * in4[2] * in4[3];
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = base + (y * mask.h) * in4[3] + x * mask.w;
        for (std::size_t i = 0; i < mask.h; ++i)
          for (std::size_t j = 0; j < mask.w; ++j) {
            const std::size_t k = base + (y * mask.h + i) * in4[3] + x * mask.w + j;
            if (input[k] > input[best]) best = k;
          }
        const std::size_t o = p * oh * ow + y * ow + x;
        out[o] = input[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
  }
  return out;
}

Tensor gather(const Tensor& src, std::span<const std::uint32_t> index, const Shape& out_shape) {
  if (shape_numel(out_shape) != index.size())
    shape_fail("gather: index count " + std::to_string(index.size()) + " vs output " + shape_str(out_shape));
  Tensor out(out_shape);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= src.size()) shape_fail("gather: index out of range");
    out[i] = src[index[i]];
  }
  return out;
}

Tensor scatter_add(const Tensor& src, std::span<const std::uint32_t> index, const Shape& out_shape) {
  if (src.size() != index.size())
    shape_fail("scatter_add: " + std::to_string(src.size()) + " values vs " + std::to_string(index.size()) + " indices");
  Tensor out(out_shape);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= out.size()) shape_fail("scatter_add: index out of range");
    out[index[i]] += src[i];
  }
  return out;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (double v : t.data()) put_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  const std::uint32_t rank = get_u32(is);
  if (rank == 0 || rank > 8) throw std::runtime_error("read_tensor: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_u32(is);
    if (e == 0) throw std::runtime_error("read_tensor: zero extent");
  }
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = get_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> serialize(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor deserialize(std::span<const std::uint8_t> bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_tensor(is);
}

}  // namespace advlab
