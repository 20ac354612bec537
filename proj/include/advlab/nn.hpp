#pragma once

#include "advlab/autodiff.hpp"
#include "advlab/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace advlab::nn {

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;
};

struct Conv {
  ConvGeometry geom;
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  bool bias = true;
};

struct ReLU {};

struct BatchNorm {
  std::size_t channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
};

struct AvgPool {
  PoolWindow mask;
};

struct MaxPool {
  PoolWindow mask;
};

struct Flatten {};

using LayerSpec = std::variant<Dense, Conv, ReLU, BatchNorm, AvgPool, MaxPool, Flatten>;

std::string layer_kind(const LayerSpec& layer);

/// Declarative feedforward network. `input` is the per-sample shape:
/// [d] for dense-only nets or [C,H,W] for convolutional ones.
struct NetworkSpec {
  std::string name;
  Shape input;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;

  std::size_t input_dim() const { return shape_numel(input); }
  /// Per-sample activation shape after every layer; throws ShapeError when
  /// adjacent layers do not fit or the last layer does not emit `classes` logits.
  std::vector<Shape> activation_shapes() const;
  void validate() const { (void)activation_shapes(); }
  /// Number of incoming weights per neuron of each weighted layer (0 for others).
  std::vector<std::size_t> fan_in() const;
};

/// Standard deviation multiplier used at initialization: 2 when the next
/// non-BatchNorm layer is a ReLU, else 1 (linear logit layer).
double init_gain(const NetworkSpec& spec, std::size_t layer);

struct ArchOptions {
  std::size_t channels = 64;
  std::size_t classes = 10;
  /// Pooling variant for "pool6": "avg", "max" or "strided".
  std::string pooling = "avg";
  /// Hidden widths of "mlp"; empty means two hidden layers of width d.
  std::vector<std::size_t> hidden;
};

/// Named architectures:
///   mlp         dense ReLU layers [d, hidden..., classes]
///   strided6    6 × (3×3 conv, strides 1,2,2,2,2,2 → BatchNorm → ReLU) → dense
///   pool6       6 × (conv → BatchNorm → ReLU), 2×2 pooling after every second
///               block (avg | max | strided), final average pool to one pixel → dense
///   dilated8    8 × (3×3 conv dilated by H/32 → BatchNorm → ReLU), 2×2 max pool
///               after blocks 2,4,6,8, final max pool to one pixel → dense
///   patch       kernel = stride convolutions (strides 1,2,2,...) down to one
///               pixel → dense; exactly symmetric, no BatchNorm
///   avgpool-reduce / strided-reduce
///               1×1 conv → ReLU → 2×2 avg pool, repeated to one pixel, versus
///               the same net with 2×2 stride-2 convolutions in place of the pools
NetworkSpec standard_arch(const std::string& name, const Shape& input, const ArchOptions& opts = {});

enum class BatchNormMode { Inference, Training };

/// Materialized parameters. Trainable tensors per layer are
///   Dense: W[out,in], b[out]    Conv: K[Co,Ci,h,w], b[Co]
///   BatchNorm: gamma[C], beta[C]
/// BatchNorm running statistics live in `buffers` (mean[C], var[C]).
struct Network {
  NetworkSpec spec;
  std::uint64_t seed = 0;
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;
  /// First index into params/buffers for each layer.
  std::vector<std::size_t> param_offset;
  std::vector<std::size_t> buffer_offset;

  std::size_t num_params() const;
  /// Indices into `params` of the weight tensors (excludes biases and BatchNorm affine).
  std::vector<std::size_t> weight_indices() const;
};

/// Independent zero-mean Gaussian weights with variance gain/fan-in, zero
/// biases, BatchNorm scale 1 and shift 0. Deterministic per seed.
Network he_init(const NetworkSpec& spec, std::uint64_t seed);

/// Zero-filled parameters with the layout of `spec`.
Network zeros(const NetworkSpec& spec);

/// Parameter leaves on a tape.
std::vector<ad::Var> bind_params(ad::Tape& tape, const Network& net, bool requires_grad);

struct ForwardOptions {
  BatchNormMode batchnorm = BatchNormMode::Inference;
  /// When set in training mode, receives updated running statistics.
  std::vector<Tensor>* updated_buffers = nullptr;
};

/// Logits [N, K] for a batch [N, input...] on `tape`.
ad::Var forward(const Network& net, const std::vector<ad::Var>& params, const ad::Var& batch,
                const ForwardOptions& opts = {});

/// Stacks per-sample tensors into a batch [N, ...].
Tensor stack(const std::vector<Tensor>& samples);
Tensor stack(const std::vector<const Tensor*>& samples);
/// Sample `i` of a batch.
Tensor unstack(const Tensor& batch, std::size_t i);

/// Logits of one input (inference-mode BatchNorm).
Tensor logits(const Network& net, const Tensor& x);
/// Logits of a batch [N, input...] → [N, K].
Tensor logits_batch(const Network& net, const Tensor& batch);

/// ∂xL for cross-entropy at (x, c).
Tensor input_gradient(const Network& net, const Tensor& x, std::size_t c);
/// Per-sample ∂xL for a batch; also returns the per-sample losses when asked.
Tensor input_gradients(const Network& net, const Tensor& batch, const std::vector<std::size_t>& labels,
                       std::vector<double>* losses = nullptr);
/// Per-sample ∂x f_k for every logit k: result[k] has shape [N, input...].
std::vector<Tensor> logit_gradients(const Network& net, const Tensor& batch);

/// Index of the largest logit; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

// Spec / checkpoint serialization.
nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// Checkpoint: u32 header length, JSON header {spec, seed, epoch}, then
/// every param and buffer tensor in binary tensor serialization.
void save_checkpoint(const std::string& path, const Network& net, std::size_t epoch);
Network load_checkpoint(const std::string& path, std::size_t* epoch = nullptr);

}  // namespace advlab::nn
