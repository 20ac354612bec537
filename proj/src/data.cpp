#include "advlab/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace advlab::data {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DecodeError("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw DecodeError(path + ": truncated header at offset " + std::to_string(off));
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

// Channel count and per-channel element count of a sample shape.
std::pair<std::size_t, std::size_t> channel_layout(const Shape& s) {
  if (s.size() == 3) return {s[0], s[1] * s[2]};
  return {1, shape_numel(s)};
}

}  // namespace

Shape Dataset::sample_shape() const { return Shape(samples.shape().begin() + 1, samples.shape().end()); }

Tensor Dataset::sample(std::size_t i) const {
  const Shape s = sample_shape();
  const std::size_t per = shape_numel(s);
  if (i >= size()) throw std::out_of_range("Dataset::sample: index " + std::to_string(i) + " out of range");
  const auto* p = samples.data().data() + i * per;
  return Tensor(s, std::vector<double>(p, p + per));
}

Tensor Dataset::batch(const std::vector<std::size_t>& idx) const {
  Shape s = sample_shape();
  const std::size_t per = shape_numel(s);
  Shape bs{idx.size()};
  bs.insert(bs.end(), s.begin(), s.end());
  std::vector<double> out(idx.size() * per);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= size()) throw std::out_of_range("Dataset::batch: index out of range");
    std::copy_n(samples.data().data() + idx[j] * per, per, out.data() + j * per);
  }
  return Tensor(std::move(bs), std::move(out));
}

std::vector<std::size_t> Dataset::batch_labels(const std::vector<std::size_t>& idx) const {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.samples = batch(idx);
  out.labels = batch_labels(idx);
  out.classes = classes;
  out.split = split;
  out.norm = norm;
  return out;
}

void Dataset::validate() const {
  if (samples.rank() < 2 || samples.dim(0) != labels.size())
    throw std::invalid_argument("Dataset: " + std::to_string(labels.size()) + " labels for samples " +
                                shape_str(samples.shape()));
  for (auto l : labels)
    if (l >= classes) throw std::invalid_argument("Dataset: label " + std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
}

Dataset load_cifar10_file(const std::string& path, const std::string& split) {
  const auto bytes = read_all(path);
  if (bytes.empty()) throw DecodeError(path + ": empty file");
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t whole = bytes.size() / kCifarRecord;
    throw DecodeError(path + ": truncated record at offset " + std::to_string(whole * kCifarRecord) + " (file size " +
                      std::to_string(bytes.size()) + " is not a multiple of " + std::to_string(kCifarRecord) + ")");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.classes = 10;
  ds.split = split;
  ds.labels.resize(n);
  std::vector<double> px(n * kCifarPixels);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * kCifarRecord;
    const unsigned label = bytes[off];
    if (label >= 10) throw DecodeError(path + ": label " + std::to_string(label) + " out of range at offset " + std::to_string(off));
    ds.labels[i] = label;
    for (std::size_t j = 0; j < kCifarPixels; ++j) px[i * kCifarPixels + j] = bytes[off + 1 + j] / 255.0;
  }
  ds.samples = Tensor(Shape{n, 3, kCifarSide, kCifarSide}, std::move(px));
  return ds;
}

Dataset load_cifar10(const std::string& dir, const std::string& split) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (split == "test") {
    files.push_back((fs::path(dir) / "test_batch.bin").string());
  } else {
    for (int i = 1; i <= 5; ++i) files.push_back((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
  }
  std::vector<Dataset> parts;
  std::size_t total = 0;
  for (const auto& f : files) {
    parts.push_back(load_cifar10_file(f, split));
    total += parts.back().size();
  }
  Dataset ds;
  ds.classes = 10;
  ds.split = split;
  std::vector<double> px;
  px.reserve(total * kCifarPixels);
  for (auto& p : parts) {
    px.insert(px.end(), p.samples.vec().begin(), p.samples.vec().end());
    ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
  }
  ds.samples = Tensor(Shape{total, 3, kCifarSide, kCifarSide}, std::move(px));
  return ds;
}

Dataset load_mnist(const std::string& images_path, const std::string& labels_path, const std::string& split) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  if (be32(img, 0, images_path) != 2051) throw DecodeError(images_path + ": bad magic at offset 0 (expected 2051)");
  if (be32(lab, 0, labels_path) != 2049) throw DecodeError(labels_path + ": bad magic at offset 0 (expected 2049)");
  const std::size_t n = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t nl = be32(lab, 4, labels_path);
  if (n != nl) throw DecodeError("mnist: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  const std::size_t need = 16 + n * rows * cols;
  if (img.size() < need) throw DecodeError(images_path + ": truncated payload at offset " + std::to_string(img.size()));
  if (lab.size() < 8 + n) throw DecodeError(labels_path + ": truncated payload at offset " + std::to_string(lab.size()));
  Dataset ds;
  ds.classes = 10;
  ds.split = split;
  ds.labels.resize(n);
  std::vector<double> px(n * rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] >= 10) throw DecodeError(labels_path + ": label out of range at offset " + std::to_string(8 + i));
    ds.labels[i] = lab[8 + i];
  }
  for (std::size_t j = 0; j < px.size(); ++j) px[j] = img[16 + j] / 255.0;
  ds.samples = Tensor(Shape{n, 1, rows, cols}, std::move(px));
  return ds;
}

Normalization fit_normalization(const Dataset& ds) {
  const auto [channels, per] = channel_layout(ds.sample_shape());
  Normalization norm;
  norm.mean.assign(channels, 0.0);
  norm.scale.assign(channels, 0.0);
  const std::size_t stride = channels * per;
  const double count = static_cast<double>(ds.size() * per);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < per; ++j) s += ds.samples[i * stride + c * per + j];
    const double mean = s / count;
    double v = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < per; ++j) {
        const double dv = ds.samples[i * stride + c * per + j] - mean;
        v += dv * dv;
      }
    norm.mean[c] = mean;
    norm.scale[c] = std::sqrt(v / count);
    if (!(norm.scale[c] > 0.0)) norm.scale[c] = 1.0;
  }
  return norm;
}

Tensor normalize_sample(const Tensor& x, const Normalization& norm) {
  if (norm.identity()) return x;
  const auto [channels, per] = channel_layout(x.shape());
  if (channels != norm.mean.size()) throw ShapeError("normalize: channel count mismatch");
  Tensor out = x;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t j = 0; j < per; ++j) out[c * per + j] = (x[c * per + j] - norm.mean[c]) / norm.scale[c];
  return out;
}

Tensor denormalize_sample(const Tensor& x, const Normalization& norm) {
  if (norm.identity()) return x;
  const auto [channels, per] = channel_layout(x.shape());
  Tensor out = x;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t j = 0; j < per; ++j) out[c * per + j] = x[c * per + j] * norm.scale[c] + norm.mean[c];
  return out;
}

namespace {
Dataset map_samples(const Dataset& ds, const Shape& out_sample, const std::function<Tensor(const Tensor&)>& fn) {
  Dataset out = ds;
  Shape bs{ds.size()};
  bs.insert(bs.end(), out_sample.begin(), out_sample.end());
  std::vector<double> data;
  data.reserve(shape_numel(bs));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor t = fn(ds.sample(i));
    data.insert(data.end(), t.vec().begin(), t.vec().end());
  }
  out.samples = Tensor(std::move(bs), std::move(data));
  return out;
}
}  // namespace

Dataset normalize(const Dataset& ds, const Normalization& norm) {
  if (!ds.norm.identity()) throw std::logic_error("normalize: dataset is already normalized");
  Dataset out = map_samples(ds, ds.sample_shape(), [&](const Tensor& x) { return normalize_sample(x, norm); });
  out.norm = norm;
  return out;
}

Dataset denormalize(const Dataset& ds) {
  Dataset out = map_samples(ds, ds.sample_shape(), [&](const Tensor& x) { return denormalize_sample(x, ds.norm); });
  out.norm = {};
  return out;
}

Tensor upsample_copy(const Tensor& x, std::size_t k) {
  if (x.rank() != 3) throw ShapeError("upsample_copy: expected [C,H,W], got " + shape_str(x.shape()));
  if (k == 0) throw std::invalid_argument("upsample_copy: factor must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out(Shape{c, h * k, w * k});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h * k; ++y)
      for (std::size_t xx = 0; xx < w * k; ++xx) out[(ch * h * k + y) * w * k + xx] = x[(ch * h + y / k) * w + xx / k];
  return out;
}

Tensor downsample_mean(const Tensor& x, std::size_t k) {
  if (x.rank() != 3) throw ShapeError("downsample_mean: expected [C,H,W], got " + shape_str(x.shape()));
  if (k == 0) throw std::invalid_argument("downsample_mean: factor must be >= 1");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % k || W % k) throw ShapeError("downsample_mean: factor " + std::to_string(k) + " does not divide " + shape_str(x.shape()));
  const std::size_t oh = H / k, ow = W / k;
  const double a = static_cast<double>(k * k);
  Tensor out({C, oh, ow});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        // mean as first + mean deviation: exact on constant blocks
        const double first = x[(c * H + i * k) * W + j * k];
        double dev = 0.0;
        for (std::size_t u = 0; u < k; ++u)
          for (std::size_t v = 0; v < k; ++v) dev += x[(c * H + i * k + u) * W + j * k + v] - first;
        out[(c * oh + i) * ow + j] = first + dev / a;
      }
  return out;
}

Dataset upsample_copy(const Dataset& ds, std::size_t k) {
  Shape s = ds.sample_shape();
  const Shape out{s.at(0), s.at(1) * k, s.at(2) * k};
  return map_samples(ds, out, [&](const Tensor& x) { return upsample_copy(x, k); });
}

Dataset downsample_mean(const Dataset& ds, std::size_t k) {
  Shape s = ds.sample_shape();
  if (s.size() != 3 || s[1] % k || s[2] % k) throw ShapeError("downsample_mean: factor does not divide " + shape_str(s));
  const Shape out{s[0], s[1] / k, s[2] / k};
  return map_samples(ds, out, [&](const Tensor& x) { return downsample_mean(x, k); });
}

Tensor mixture_means(const GaussianMixture& mix) {
  const std::size_t d = shape_numel(mix.shape);
  Shape base = mix.shape;
  if (mix.smooth > 1) {
    if (base.size() != 3 || base[1] % mix.smooth || base[2] % mix.smooth)
      throw ShapeError("synth_gaussian: smooth factor must divide the spatial extents of " + shape_str(base));
    base[1] /= mix.smooth;
    base[2] /= mix.smooth;
  }
  const std::size_t db = shape_numel(base);
  if (mix.classes > db) throw std::invalid_argument("synth_gaussian: more classes than (base) dimensions");
  std::mt19937_64 rng(mix.mean_seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < mix.classes) {
    std::vector<double> v(db);
    for (auto& e : v) e = nd(rng);
    for (const auto& u : dirs) {
      const double p = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t i = 0; i < db; ++i) v[i] -= p * u[i];
    }
    const double n = norm_l2(v);
    if (n < 1e-8) continue;
    for (auto& e : v) e /= n;
    dirs.push_back(std::move(v));
  }
  Shape ms{mix.classes};
  ms.insert(ms.end(), mix.shape.begin(), mix.shape.end());
  Tensor means(ms);
  const double a = mix.margin / std::sqrt(2.0);
  for (std::size_t k = 0; k < mix.classes; ++k) {
    Tensor dir(base, dirs[k]);
    if (mix.smooth > 1) {
      dir = upsample_copy(dir, mix.smooth);
      dir = (1.0 / mix.smooth) * dir;  // keeps unit norm
    }
    for (std::size_t i = 0; i < d; ++i) means[k * d + i] = a * dir[i];
  }
  return means;
}

Dataset synth_gaussian(const GaussianMixture& mix, std::size_t n, std::uint64_t sample_seed, const std::string& split) {
  const Tensor means = mixture_means(mix);
  const std::size_t d = shape_numel(mix.shape);
  std::mt19937_64 rng(sample_seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cls(0, mix.classes - 1);
  Dataset ds;
  ds.classes = mix.classes;
  ds.split = split;
  ds.labels.resize(n);
  std::vector<double> px(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = cls(rng);
    ds.labels[i] = c;
    for (std::size_t j = 0; j < d; ++j) px[i * d + j] = means[c * d + j] + nd(rng);
  }
  Shape bs{n};
  bs.insert(bs.end(), mix.shape.begin(), mix.shape.end());
  ds.samples = Tensor(std::move(bs), std::move(px));
  return ds;
}

Dataset synth_gaussian(std::size_t d, std::size_t classes, std::size_t n, std::uint64_t seed, double margin) {
  GaussianMixture mix{Shape{d}, classes, margin, seed, 1};
  return synth_gaussian(mix, n, seed + 1);
}

std::string sha256_hex(const void* data, std::size_t len) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int md_len = 0;
  if (EVP_Digest(data, len, md, &md_len, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned i = 0; i < md_len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string fingerprint(const Dataset& ds) {
  std::vector<unsigned char> buf;
  buf.reserve(ds.samples.size() * 8 + ds.labels.size());
  for (double v : ds.samples.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
  }
  for (auto l : ds.labels) buf.push_back(static_cast<unsigned char>(l));
  return sha256_hex(buf.data(), buf.size());
}

std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (n >= total) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace advlab::data
