#include "advlab/data.hpp"
#include "advlab/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace advlab;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("advlab_data_" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<std::uint8_t> cifar_bytes(std::size_t records, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> b(records * 3073);
  for (std::size_t r = 0; r < records; ++r) {
    b[r * 3073] = static_cast<std::uint8_t>(r % 10);
    for (std::size_t i = 1; i < 3073; ++i) b[r * 3073 + i] = static_cast<std::uint8_t>(rng());
  }
  return b;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

double phi(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); }
double Phi(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

// P(correct) of the nearest-mean rule for K orthogonal means at distance `margin`:
// ∫ φ(t) Φ(t + margin/√2)^(K−1) dt.
double bayes_accuracy(std::size_t K, double margin) {
  const double a = margin / std::sqrt(2.0);
  double s = 0.0;
  const double h = 1e-3;
  for (double t = -10.0; t <= 10.0; t += h) s += phi(t) * std::pow(Phi(t + a), static_cast<double>(K - 1)) * h;
  return s;
}

Tensor random_image(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

}  // namespace

TEST(Cifar, DecodesRecordsByteFaithfully) {
  TempDir dir;
  auto bytes = cifar_bytes(3, 1);
  write_bytes(dir / "b.bin", bytes);
  auto ds = data::load_cifar10_file((dir / "b.bin").string(), "test");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.sample_shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(ds.classes, 10u);
  EXPECT_EQ(ds.split, "test");
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{0, 1, 2}));
  auto s = ds.sample(2);
  for (std::size_t i = 0; i < 3072; ++i) ASSERT_EQ(s[i], bytes[2 * 3073 + 1 + i] / 255.0);
}

TEST(Cifar, TruncatedFileNamesOffset) {
  TempDir dir;
  auto bytes = cifar_bytes(2, 2);
  bytes.resize(3073 + 100);
  write_bytes(dir / "t.bin", bytes);
  try {
    data::load_cifar10_file((dir / "t.bin").string());
    FAIL() << "expected DecodeError";
  } catch (const data::DecodeError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 3073"), std::string::npos) << e.what();
  }
  bytes = cifar_bytes(1, 3);
  bytes[0] = 12;
  write_bytes(dir / "l.bin", bytes);
  EXPECT_THROW(data::load_cifar10_file((dir / "l.bin").string()), data::DecodeError);
  EXPECT_THROW(data::load_cifar10_file((dir / "missing.bin").string()), data::DecodeError);
}

TEST(Cifar, TestBatchLayoutGivesTenThousand) {
  const char* env = std::getenv("DATA_DIR");
  fs::path real = env ? fs::path(env) / "cifar-10-batches-bin" : fs::path();
  if (!real.empty() && fs::exists(real / "test_batch.bin")) {
    auto ds = data::load_cifar10(real.string(), "test");
    EXPECT_EQ(ds.size(), 10000u);
    EXPECT_EQ(ds.classes, 10u);
    return;
  }
  TempDir dir;
  write_bytes(dir / "test_batch.bin", cifar_bytes(10000, 4));
  auto ds = data::load_cifar10(dir.path().string(), "test");
  EXPECT_EQ(ds.size(), 10000u);
  EXPECT_EQ(ds.classes, 10u);
  EXPECT_THROW(data::load_cifar10(dir.path().string(), "train"), data::DecodeError);
}

TEST(Cifar, SerializationRoundTripKeepsPixelBytes) {
  TempDir dir;
  write_bytes(dir / "b.bin", cifar_bytes(2, 5));
  auto ds = data::load_cifar10_file((dir / "b.bin").string());
  auto back = deserialize(serialize(ds.samples));
  ASSERT_EQ(back.size(), ds.samples.size());
  EXPECT_EQ(std::memcmp(back.data().data(), ds.samples.data().data(), back.size() * sizeof(double)), 0);
}

TEST(Mnist, DecodesIdxPair) {
  TempDir dir;
  std::vector<std::uint8_t> img, lab;
  put_be32(img, 2051);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 3);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<std::uint8_t>(i * 20));
  put_be32(lab, 2049);
  put_be32(lab, 2);
  lab.push_back(7);
  lab.push_back(3);
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", lab);
  auto ds = data::load_mnist((dir / "img").string(), (dir / "lab").string());
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.sample_shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{7, 3}));
  EXPECT_DOUBLE_EQ(ds.sample(1)[5], 220.0 / 255.0);

  img.resize(img.size() - 1);
  write_bytes(dir / "img", img);
  EXPECT_THROW(data::load_mnist((dir / "img").string(), (dir / "lab").string()), data::DecodeError);
  img[3] = 0;
  write_bytes(dir / "img", img);
  EXPECT_THROW(data::load_mnist((dir / "img").string(), (dir / "lab").string()), data::DecodeError);
}

TEST(Normalization, UnitStdAndInvertible) {
  data::GaussianMixture mix{{3, 4, 4}, 3, 2.0, 1, 1};
  auto ds = data::synth_gaussian(mix, 500, 2);
  for (auto& v : ds.samples.data()) v = 0.2 * v + 0.5;  // pixel-like scale
  auto norm = data::fit_normalization(ds);
  auto nds = data::normalize(ds, norm);
  auto refit = data::fit_normalization(nds);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(refit.mean[c], 0.0, 1e-12);
    EXPECT_GE(refit.scale[c], 0.9);
    EXPECT_LE(refit.scale[c], 1.1);
  }
  auto back = data::denormalize(nds);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) EXPECT_NEAR(back.samples[i], ds.samples[i], 1e-12);
  EXPECT_THROW(data::normalize(nds, norm), std::logic_error);
}

TEST(Upsample, SinglePixelBecomesBlock) {
  auto y = data::upsample_copy(Tensor({1, 1, 1}, 2.5), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
  for (double v : y.vec()) EXPECT_EQ(v, 2.5);
}

TEST(Upsample, FactorOneIsIdentity) {
  auto x = random_image({2, 3, 3}, 1);
  EXPECT_EQ(data::upsample_copy(x, 1).vec(), x.vec());
}

TEST(Upsample, SquaredNormScalesByKSquared) {
  auto x = random_image({3, 4, 4}, 2);
  for (std::size_t k : {2u, 3u}) {
    auto y = data::upsample_copy(x, k);
    EXPECT_NEAR(dot(y, y), static_cast<double>(k * k) * dot(x, x), 1e-10 * dot(y, y));
  }
}

TEST(Upsample, BlockKernelStridedConvMatchesOriginal) {
  const std::size_t k = 2;
  auto x = random_image({2, 6, 6}, 3);
  auto w = random_image({3, 2, 3, 3}, 4);
  Tensor wu({3, 2, 3 * k, 3 * k});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 3 * k; ++i)
        for (std::size_t j = 0; j < 3 * k; ++j) wu.at({o, c, i, j}) = w.at({o, c, i / k, j / k});
  auto lhs = conv2d(data::upsample_copy(x, k), wu, ConvGeometry::valid(3 * k, k));
  auto rhs = static_cast<double>(k * k) * conv2d(x, w, ConvGeometry::valid(3, 1));
  ASSERT_EQ(lhs.shape(), rhs.shape());
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-11);
}

TEST(Downsample, LeftInverseOfUpsample) {
  auto x = random_image({2, 4, 4}, 5);
  EXPECT_EQ(data::downsample_mean(data::upsample_copy(x, 2), 2).vec(), x.vec());
  EXPECT_EQ(data::downsample_mean(data::upsample_copy(x, 4), 4).vec(), x.vec());
}

TEST(Downsample, ConstantAndHandMeans) {
  auto c = data::downsample_mean(Tensor({1, 4, 4}, 1.75), 2);
  for (double v : c.vec()) EXPECT_EQ(v, 1.75);
  auto x = random_image({1, 4, 4}, 6);
  auto y = data::downsample_mean(x, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double m = (x.at({0, 2 * i, 2 * j}) + x.at({0, 2 * i, 2 * j + 1}) + x.at({0, 2 * i + 1, 2 * j}) +
                  x.at({0, 2 * i + 1, 2 * j + 1})) /
                 4.0;
      EXPECT_NEAR(y.at({0, i, j}), m, 1e-15);
    }
  EXPECT_THROW(data::downsample_mean(Tensor({1, 5, 4}), 2), ShapeError);
}

TEST(Upsample, DatasetFormKeepsLabels) {
  auto ds = data::synth_gaussian({{1, 2, 2}, 2, 3.0, 0, 1}, 10, 1);
  auto up = data::upsample_copy(ds, 3);
  EXPECT_EQ(up.sample_shape(), (Shape{1, 6, 6}));
  EXPECT_EQ(up.labels, ds.labels);
  EXPECT_EQ(data::downsample_mean(up, 3).samples.vec(), ds.samples.vec());
}

TEST(Synth, SeedDeterminism) {
  auto a = data::synth_gaussian(16, 4, 100, 9);
  auto b = data::synth_gaussian(16, 4, 100, 9);
  auto c = data::synth_gaussian(16, 4, 100, 10);
  EXPECT_EQ(a.samples.vec(), b.samples.vec());
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.samples.vec(), c.samples.vec());
  EXPECT_EQ(data::fingerprint(a), data::fingerprint(b));
  EXPECT_NE(data::fingerprint(a), data::fingerprint(c));
}

TEST(Synth, MeansArePairwiseMarginApart) {
  data::GaussianMixture mix{{2, 8, 8}, 5, 3.0, 4, 2};
  auto m = data::mixture_means(mix);
  ASSERT_EQ(m.shape(), (Shape{5, 2, 8, 8}));
  const std::size_t d = 128;
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += std::pow(m[a * d + i] - m[b * d + i], 2);
      EXPECT_NEAR(std::sqrt(s), 3.0, 1e-12);
    }
}

TEST(Synth, LargeMarginIsSeparable) {
  data::GaussianMixture mix{{20}, 3, 200.0, 1, 1};
  auto ds = data::synth_gaussian(mix, 300, 2);
  auto m = data::mixture_means(mix);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<double> score(3);
    auto x = ds.sample(i);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < 20; ++j) score[k] += x[j] * m[k * 20 + j];
    EXPECT_EQ(nn::argmax(score), ds.labels[i]);
  }
}

TEST(Synth, BayesAccuracyMatchesClosedForm) {
  for (std::size_t K : {2u, 10u}) {
    data::GaussianMixture mix{{32}, K, 2.5, 3, 1};
    auto ds = data::synth_gaussian(mix, 20000, 4);
    auto m = data::mixture_means(mix);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      std::vector<double> score(K);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < 32; ++j) score[k] += ds.samples[i * 32 + j] * m[k * 32 + j];
      correct += nn::argmax(score) == ds.labels[i];
    }
    const double acc = static_cast<double>(correct) / 20000.0;
    EXPECT_NEAR(acc, bayes_accuracy(K, 2.5), 0.02) << "K=" << K;
  }
  EXPECT_NEAR(bayes_accuracy(2, 2.0), Phi(1.0), 1e-6);
}

TEST(Dataset, ValidateAndSubsets) {
  auto ds = data::synth_gaussian(4, 3, 10, 1);
  EXPECT_NO_THROW(ds.validate());
  auto sub = ds.subset({1, 3});
  EXPECT_EQ(sub.size(), 2u);
  EXPECT_EQ(sub.sample(1).vec(), ds.sample(3).vec());
  ds.labels[0] = 3;
  EXPECT_THROW(ds.validate(), std::invalid_argument);
  EXPECT_THROW(ds.sample(99), std::out_of_range);
}

TEST(Hash, Sha256KnownVector) {
  EXPECT_EQ(data::sha256_hex("abc", 3), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(SampleIndices, SortedUniqueSeeded) {
  auto a = data::sample_indices(100, 10, 5);
  EXPECT_EQ(a, data::sample_indices(100, 10, 5));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  EXPECT_EQ(data::sample_indices(5, 10, 1).size(), 5u);
}
