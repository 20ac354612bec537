#include "advlab/tensor.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace advlab;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Tensor, ShapeAndSize) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(shape_numel(t.shape()), t.size());
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(Tensor::from({1, 2}).item(), std::exception);
  EXPECT_DOUBLE_EQ(Tensor::scalar(3.5).item(), 3.5);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.at({0, 1}), 1.0);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
  EXPECT_EQ(t.reshaped({3, 2}).at({2, 0}), 4.0);
}

TEST(Tensor, Norms) {
  std::vector<double> v{3, -4, 0};
  EXPECT_DOUBLE_EQ(norm_l1(v), 7.0);
  EXPECT_DOUBLE_EQ(norm_l2(v), 5.0);
  EXPECT_DOUBLE_EQ(norm_linf(v), 4.0);
  EXPECT_DOUBLE_EQ(norm_p(v, 0.0), 4.0);
}

TEST(Tensor, ElementwiseRejectsMismatch) {
  EXPECT_THROW(Tensor({2}) + Tensor({3}), ShapeError);
}

TEST(Tensor, MatmulTransposes) {
  Tensor a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(c.at({0, 0}), 58);
  EXPECT_DOUBLE_EQ(c.at({1, 1}), 154);
  auto ct = matmul(b, a, true, true);  // (a b)^T
  EXPECT_DOUBLE_EQ(ct.at({0, 1}), c.at({1, 0}));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Tensor, ExpandAndReduceAreAdjoint) {
  auto a = random_tensor({3, 1}, 1);
  auto g = random_tensor({3, 4}, 2);
  double lhs = dot(expand(a, {3, 4}), g);
  double rhs = dot(a, reduce_to(g, {3, 1}));
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Conv, OnesKernelCountsOverlaps) {
  Tensor x({1, 3, 3}, 1.0);
  Tensor k({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, k, ConvGeometry::same(3));
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3}));
  EXPECT_EQ(y.at({0, 1, 1}), 9.0);
  EXPECT_EQ(y.at({0, 0, 0}), 4.0);
  EXPECT_EQ(y.at({0, 2, 2}), 4.0);
  EXPECT_EQ(y.at({0, 0, 1}), 6.0);
}

TEST(Conv, IdentityKernel) {
  auto x = random_tensor({1, 5, 5}, 3);
  Tensor k({1, 1, 1, 1}, 1.0);
  auto y = conv2d(x, k, ConvGeometry::valid(1));
  EXPECT_EQ(y.vec(), x.vec());
}

TEST(Conv, StridedEqualsSubsampledUnstrided) {
  auto x = random_tensor({1, 8, 8}, 4);
  auto k = random_tensor({2, 1, 3, 3}, 5);
  auto full = conv2d(x, k, ConvGeometry::same(3, 1));
  auto strided = conv2d(x, k, ConvGeometry::same(3, 2));
  ASSERT_EQ(strided.shape(), (Shape{2, 4, 4}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(strided.at({c, i, j}), full.at({c, 2 * i, 2 * j}));
}

TEST(Conv, LinearInBothArguments) {
  auto x = random_tensor({2, 6, 6}, 6);
  auto y = random_tensor({2, 6, 6}, 7);
  auto k = random_tensor({3, 2, 3, 3}, 8);
  auto k2 = random_tensor({3, 2, 3, 3}, 9);
  auto g = ConvGeometry::same(3, 1, 2);
  auto lhs = conv2d(1.5 * x + (-0.5) * y, k, g);
  auto rhs = 1.5 * conv2d(x, k, g) + (-0.5) * conv2d(y, k, g);
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
  auto lk = conv2d(x, 2.0 * k + k2, g);
  auto rk = 2.0 * conv2d(x, k, g) + conv2d(x, k2, g);
  EXPECT_LT(max_abs_diff(lk, rk), 1e-12);
}

TEST(Conv, OutputExtentFormula) {
  ConvGeometry g;
  g.kernel_h = g.kernel_w = 3;
  g.stride = 2;
  g.dilation = 2;
  g.padding = Padding::Zero;
  g.pad_h = g.pad_w = 1;
  // floor((9 + 2 - 4 - 1)/2) + 1 = 4
  EXPECT_EQ(g.out_h(9), 4u);
  auto y = conv2d(random_tensor({1, 9, 9}, 10), random_tensor({1, 1, 3, 3}, 11), g);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4}));
}

TEST(Conv, ShapeMismatchNamesExtents) {
  Tensor x({2, 4, 4});
  Tensor k({1, 3, 3, 3});
  try {
    conv2d(x, k, ConvGeometry::same(3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos);
    EXPECT_NE(msg.find('3'), std::string::npos);
  }
  ConvGeometry bad;
  bad.stride = 0;
  EXPECT_THROW(bad.validate(), std::exception);
}

TEST(Conv, BatchedMatchesPerSample) {
  auto x = random_tensor({3, 2, 5, 5}, 12);
  auto k = random_tensor({4, 2, 3, 3}, 13);
  auto g = ConvGeometry::same(3, 2);
  auto yb = conv2d(x, k, g);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor xn({2, 5, 5}, std::vector<double>(x.vec().begin() + n * 50, x.vec().begin() + (n + 1) * 50));
    auto yn = conv2d(xn, k, g);
    for (std::size_t i = 0; i < yn.size(); ++i) EXPECT_DOUBLE_EQ(yb[n * yn.size() + i], yn[i]);
  }
}

TEST(Conv, BackwardInputIsAdjoint) {
  auto x = random_tensor({2, 7, 7}, 14);
  auto k = random_tensor({3, 2, 3, 3}, 15);
  auto g = ConvGeometry::same(3, 2, 1);
  auto y = conv2d(x, k, g);
  auto gy = random_tensor(y.shape(), 16);
  auto gx = conv2d_backward_input(gy, k, g, 7, 7);
  EXPECT_NEAR(dot(y, gy), dot(x, gx), 1e-10);
  auto gk = conv2d_backward_kernel(x, gy, g, 3, 3);
  EXPECT_NEAR(dot(y, gy), dot(k, gk), 1e-10);
}

TEST(AvgPool, Block) {
  Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(avg_pool(x, {2, 2}).item(), 2.5);
}

TEST(AvgPool, ConstantInput) {
  Tensor x({2, 4, 4}, 3.25);
  auto y = avg_pool(x, {2, 2});
  for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, 3.25);
}

TEST(AvgPool, RampHandMeans) {
  Tensor x({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  auto y = avg_pool(x, {2, 2});
  // windows {0,1,4,5}, {2,3,6,7}, {8,9,12,13}, {10,11,14,15}
  EXPECT_EQ(y.vec(), (std::vector<double>{2.5, 4.5, 10.5, 12.5}));
}

TEST(AvgPool, EqualsUniformConv) {
  auto x = random_tensor({2, 8, 8}, 17);
  for (std::size_t m : {2u, 4u}) {
    Tensor k({2, 2, m, m}, 0.0);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) k.at({c, c, i, j}) = 1.0 / static_cast<double>(m * m);
    auto y = avg_pool(x, {m, m});
    auto yc = conv2d(x, k, ConvGeometry::valid(m, m));
    EXPECT_LT(max_abs_diff(y, yc), 1e-12);
  }
}

TEST(AvgPool, RejectsNonDividing) {
  EXPECT_THROW(avg_pool(Tensor({1, 5, 4}), {2, 2}), ShapeError);
  EXPECT_THROW(avg_pool(Tensor({1, 4, 4}), {2, 2}, {1, 1}), ShapeError);
}

TEST(AvgPool, BackwardSpreadsUniformly) {
  Tensor g({1, 1, 1}, 8.0);
  auto gx = avg_pool_backward(g, {2, 2}, {1, 2, 2});
  for (double v : gx.vec()) EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(MaxPool, Block) {
  Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(max_pool(x, {2, 2}).item(), 4.0);
  Tensor c({1, 4, 4}, -2.0);
  auto y = max_pool(c, {2, 2});
  for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, -2.0);
}

TEST(MaxPool, BruteForceWindowScan) {
  auto x = random_tensor({2, 4, 4}, 18);
  std::vector<std::uint32_t> arg;
  auto y = max_pool(x, {2, 2}, {2, 2}, &arg);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double m = -1e300;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) m = std::max(m, x.at({c, 2 * i + a, 2 * j + b}));
        EXPECT_EQ(y.at({c, i, j}), m);
        EXPECT_EQ(x[arg[c * 4 + i * 2 + j]], m);
      }
}

TEST(MaxPool, TiesGoToFirstIndex) {
  Tensor x({1, 2, 2}, 1.0);
  std::vector<std::uint32_t> arg;
  max_pool(x, {2, 2}, {2, 2}, &arg);
  EXPECT_EQ(arg.at(0), 0u);
}

TEST(Gather, ScatterIsAdjoint) {
  auto src = random_tensor({6}, 19);
  std::vector<std::uint32_t> idx{5, 0, 0, 3};
  auto g = gather(src, idx, {4});
  EXPECT_EQ(g[2], src[0]);
  auto up = random_tensor({4}, 20);
  EXPECT_NEAR(dot(g, up), dot(src, scatter_add(up, idx, {6})), 1e-12);
}

TEST(Serialization, RoundTripAndLayout) {
  Tensor t({2, 3}, std::vector<double>{1, -2, 3.5, 0, 1e-300, 7});
  auto bytes = serialize(t);
  ASSERT_EQ(bytes.size(), 4u + 2 * 4u + 6 * 8u);
  EXPECT_EQ(bytes[0], 2);  // rank, little-endian
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 3);
  auto back = deserialize(bytes);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.vec(), t.vec());

  std::stringstream ss;
  write_tensor(ss, t);
  EXPECT_EQ(read_tensor(ss).vec(), t.vec());

  bytes.pop_back();
  EXPECT_THROW(deserialize(bytes), std::runtime_error);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({2}, std::vector<double>{1.0, 0.0});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}
