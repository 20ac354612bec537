#pragma once

#include "advlab/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace advlab::data {

/// Per-channel affine map: normalized = (raw − mean[c]) / scale[c].
struct Normalization {
  std::vector<double> mean;
  std::vector<double> scale;

  bool identity() const { return mean.empty(); }
};

/// Labelled samples, stored as one contiguous batch [N, sample...].
struct Dataset {
  Tensor samples;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::string split = "train";
  Normalization norm;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  std::size_t dim() const { return shape_numel(sample_shape()); }
  Tensor sample(std::size_t i) const;
  /// Samples at `idx` stacked into [len(idx), sample...].
  Tensor batch(const std::vector<std::size_t>& idx) const;
  std::vector<std::size_t> batch_labels(const std::vector<std::size_t>& idx) const;
  Dataset subset(const std::vector<std::size_t>& idx) const;
  /// Checks label range and sample/label counts.
  void validate() const;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// CIFAR-10 binary batch (1 label byte + 3072 pixel bytes per record), or a
/// directory holding data_batch_{1..5}.bin (split "train") / test_batch.bin
/// (split "test"). Pixels are scaled to [0,1]; no normalization applied.
Dataset load_cifar10_file(const std::string& path, const std::string& split = "train");
Dataset load_cifar10(const std::string& dir, const std::string& split);
/// MNIST IDX pair (magic 2051 images, 2049 labels), pixels scaled to [0,1].
Dataset load_mnist(const std::string& images_path, const std::string& labels_path, const std::string& split = "train");

/// Per-channel mean and standard deviation of `ds` (channel = axis 0 of a
/// sample; rank-1 samples are treated as one channel).
Normalization fit_normalization(const Dataset& ds);
Dataset normalize(const Dataset& ds, const Normalization& norm);
Dataset denormalize(const Dataset& ds);
Tensor normalize_sample(const Tensor& x, const Normalization& norm);
Tensor denormalize_sample(const Tensor& x, const Normalization& norm);

/// Nearest-neighbour up-sampling: each pixel becomes a k×k block.
Tensor upsample_copy(const Tensor& x, std::size_t k);
/// Block means over k×k windows; left inverse of upsample_copy.
Tensor downsample_mean(const Tensor& x, std::size_t k);
Dataset upsample_copy(const Dataset& ds, std::size_t k);
Dataset downsample_mean(const Dataset& ds, std::size_t k);

/// Class-conditional isotropic Gaussians. Class means are `margin`/√2 times
/// orthonormal directions (drawn from `mean_seed`), so every pair of means
/// is `margin` apart; noise is N(0, I).
struct GaussianMixture {
  Shape shape;
  std::size_t classes = 2;
  double margin = 4.0;
  std::uint64_t mean_seed = 0;
  /// When > 1 the class means are generated at 1/smooth resolution and
  /// upsampled, giving spatially correlated image-like structure.
  std::size_t smooth = 1;
};

Dataset synth_gaussian(const GaussianMixture& mix, std::size_t n, std::uint64_t sample_seed,
                       const std::string& split = "train");
/// Convenience form: flat samples of dimension d.
Dataset synth_gaussian(std::size_t d, std::size_t classes, std::size_t n, std::uint64_t seed, double margin = 4.0);
/// Class means of the mixture, [K, shape...].
Tensor mixture_means(const GaussianMixture& mix);

/// SHA-256 (hex) over the little-endian f64 payload of every sample, then
/// the label bytes.
std::string fingerprint(const Dataset& ds);
std::string sha256_hex(const void* data, std::size_t len);

/// Random subset of `n` indices from [0, total), seeded and sorted.
std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed);

}  // namespace advlab::data
