#pragma once

#include "advlab/autodiff.hpp"
#include "advlab/nn.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace advlab::objectives {

/// Per-sample cross-entropy −log q_c of a logit batch [N,K]; result [N,1].
/// Uses the max-shifted log-sum-exp; the shift is held constant.
ad::Var cross_entropy(const ad::Var& logits, std::span<const std::size_t> labels);

/// Scalar cross-entropy of one logit vector.
double cross_entropy(std::span<const double> logits, std::size_t c);
/// ∂L/∂f_k = q_k − 1{k=c}.
std::vector<double> logit_gradient(std::span<const double> logits, std::size_t c);

struct SoftmaxState {
  std::vector<double> q;
  std::size_t c = 0;

  static SoftmaxState from_logits(std::span<const double> logits, std::size_t c);
};

enum class Regularizer { None, GradPenalty, Augment, FgsmVariant, CrossLipschitz };

std::string regularizer_name(Regularizer r);
Regularizer parse_regularizer(const std::string& s);

/// Cross-entropy plus one regularizer:
///   grad-penalty     L + (eps/2)·‖∂xL‖_q, q ∈ {1,2}
///   augment          ½(L(x) + L(x+δ)), δ from `method` with radius eps in
///                    the attack's own norm, held constant
///   fgsm-variant     as augment with fgsm, but δ stays on the graph
///   cross-lipschitz  L + weight·(1/K²)Σ_{k,h}‖∂x f_h − ∂x f_k‖²
struct ObjectiveSpec {
  Regularizer kind = Regularizer::None;
  double q = 1.0;
  double eps = 0.0;
  std::string method = "fgsm";  // fgsm | step-l2 | pgd-linf | pgd-l2
  double weight = 0.0;

  void validate() const;
  std::string label() const;
};

nlohmann::json to_json(const ObjectiveSpec& spec);
ObjectiveSpec objective_from_json(const nlohmann::json& j);

struct BuildOptions {
  nn::BatchNormMode batchnorm = nn::BatchNormMode::Inference;
  std::vector<Tensor>* updated_buffers = nullptr;
  /// Seed for random starts of pgd augmentation.
  std::uint64_t seed = 0;
};

/// Mean objective over a batch, recorded on `params`' tape so it can be
/// differentiated with respect to the parameters.
ad::Var batch_objective(const nn::Network& net, const std::vector<ad::Var>& params, const Tensor& batch,
                        std::span<const std::size_t> labels, const ObjectiveSpec& spec,
                        const BuildOptions& opts = {});

struct Evaluation {
  double loss = 0.0;
  std::vector<Tensor> param_grads;  // empty unless requested
};

/// Value (and optionally parameter gradients) of `batch_objective` in
/// inference-mode BatchNorm.
Evaluation evaluate(const nn::Network& net, const Tensor& batch, std::span<const std::size_t> labels,
                    const ObjectiveSpec& spec, bool with_grads, std::uint64_t seed = 0);

// Single-sample objectives.
double grad_penalty_loss(const nn::Network& net, const Tensor& x, std::size_t c, double q, double eps);
/// `method` ∈ {fgsm, step-l2, pgd-linf, pgd-l2}; eps in that attack's norm.
double augmented_loss(const nn::Network& net, const Tensor& x, std::size_t c, const std::string& method, double eps);
double fgsm_variant_loss(const nn::Network& net, const Tensor& x, std::size_t c, double eps);
/// |augmented − grad-penalty| for dual exponents: p = inf pairs fgsm with
/// q = 1, p = 2 pairs step-l2 with q = 2.
double duality_gap(const nn::Network& net, const Tensor& x, std::size_t c, double eps, double p);

/// (1/K²) Σ_{k,h} ‖∂x f_h − ∂x f_k‖₂².
double cross_lipschitz(const nn::Network& net, const Tensor& x);
/// Σ_{k,h} q_k q_h (∂x f_c − ∂x f_k)·(∂x f_c − ∂x f_h).
double our_regularizer_expanded(const nn::Network& net, const Tensor& x, std::size_t c);
/// min_{k≠c} (f_c − f_k) / ‖∂x f_c − ∂x f_k‖_q at x, c = predicted class,
/// q dual to p. Exact distance to the decision boundary for affine nets.
double hein_bound(const nn::Network& net, const Tensor& x, double p);

/// Exponent q with 1/p + 1/q = 1 (p = inf gives 1, p = 1 gives inf).
double dual_exponent(double p);

}  // namespace advlab::objectives
