#pragma once

#include "advlab/data.hpp"
#include "advlab/nn.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace advlab::attacks {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Method { Fgsm, StepL2, PgdLinf, PgdL2, DeepFool };

std::string method_name(Method m);
Method parse_method(const std::string& s);
/// Norm exponent the method's ball is measured in (inf or 2).
double method_norm(Method m);

struct AttackSpec {
  Method method = Method::Fgsm;
  /// Exponent used to calibrate the threshold from eps_inf; defaults to the
  /// method's own norm and must match it.
  double p = kInf;
  double eps_inf = 0.0;
  std::size_t steps = 7;
  double step_factor = 0.2;
  bool random_start = false;
  std::optional<std::pair<double, double>> clamp;
  std::uint64_t seed = 0;
  double overshoot = 0.02;
  std::size_t max_iter = 50;

  static AttackSpec make(Method m, double eps_inf);
  /// 7 steps of 0.2·ε, random start.
  static AttackSpec pgd_preset(Method m, double eps_inf);

  /// ε_p for inputs of dimension d.
  double threshold(std::size_t d) const;
  void validate() const;
};

nlohmann::json to_json(const AttackSpec& spec);
AttackSpec attack_from_json(const nlohmann::json& j);

struct AttackOutcome {
  Tensor perturbed;
  std::size_t class_before = 0;
  std::size_t class_after = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
  /// Norm the attack reports as its result: the achieved norm in the attack's
  /// ball, or for deepfool the ℓ₂ norm before overshoot.
  double reported_norm = 0.0;
  bool success = false;
  bool zero_gradient = false;
};

/// ε∞·d^{1/p}; ε∞ for p = inf.
double calibrate_threshold(double p, double eps_inf, std::size_t d);
/// ε‖x‖₂·d^{1/p − 1/2}.
double snr_threshold(double p, double eps, const Tensor& x);

/// Loss gradient oracle for a batch: returns ∂xL per sample and, when asked,
/// the per-sample losses.
using GradFn = std::function<Tensor(const Tensor& batch, std::vector<double>* losses)>;

struct PerturbResult {
  Tensor perturbed;
  std::vector<bool> zero_gradient;
};

/// First-order / iterative attack core (fgsm, step-l2, pgd-*) on a batch,
/// with radius eps_p in the method's norm.
PerturbResult perturb(const GradFn& grad_fn, const Tensor& batch, const AttackSpec& spec, double eps_p);

/// Gradient oracle of the cross-entropy of `net` (inference-mode BatchNorm).
GradFn network_grad_fn(const nn::Network& net, std::vector<std::size_t> labels);

AttackOutcome fgsm(const nn::Network& net, const Tensor& x, std::size_t c, double eps_inf);
AttackOutcome step_l2(const nn::Network& net, const Tensor& x, std::size_t c, double eps_2);
AttackOutcome pgd(const nn::Network& net, const Tensor& x, std::size_t c, const AttackSpec& spec);
/// Minimal-ℓ₂ linearization attack. The starting class is `label` when
/// given, else the prediction; an input already predicted differently from
/// `label` gets a zero perturbation.
AttackOutcome deepfool(const nn::Network& net, const Tensor& x, const AttackSpec& spec,
                       std::optional<std::size_t> label = std::nullopt);

/// Runs `spec` on every sample of a batch [N, ...] against labels.
std::vector<AttackOutcome> attack_batch(const nn::Network& net, const Tensor& batch,
                                        const std::vector<std::size_t>& labels, const AttackSpec& spec);
/// Whole dataset, processed in chunks.
std::vector<AttackOutcome> attack_dataset(const nn::Network& net, const data::Dataset& ds, const AttackSpec& spec,
                                          std::size_t chunk = 256);

/// Fraction of samples whose predicted class the attack changes.
double vulnerability(const std::vector<AttackOutcome>& outcomes);
double vulnerability(const nn::Network& net, const data::Dataset& ds, const AttackSpec& spec);

enum class DamageLoss { Xent, ZeroOne };

/// Mean loss increase; ZeroOne measures it against the true labels, i.e.
/// the accuracy drop.
double adversarial_damage(const std::vector<AttackOutcome>& outcomes, const std::vector<std::size_t>& labels,
                          DamageLoss loss);
double adversarial_damage(const nn::Network& net, const data::Dataset& ds, const AttackSpec& spec, DamageLoss loss);

/// ε_p·E‖∂xL‖_q with q dual to p.
double first_order_damage(const nn::Network& net, const data::Dataset& ds, double p, double eps_inf);

/// CSV: sample_id,method,p,eps_inf,success,dL,l1,l2,linf
void write_attack_csv_header(std::ostream& os);
void write_attack_csv(std::ostream& os, const std::vector<AttackOutcome>& outcomes, const AttackSpec& spec,
                      std::size_t first_id = 0);

}  // namespace advlab::attacks
