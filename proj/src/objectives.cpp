#include "advlab/objectives.hpp"

#include "advlab/attacks.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace advlab::objectives {

using json = nlohmann::json;

ad::Var cross_entropy(const ad::Var& logits, std::span<const std::size_t> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy: expected logits [N,K], got " + shape_str(s));
  const std::size_t n = s[0], k = s[1];
  if (labels.size() != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  Tensor shift(s);
  Tensor onehot(s);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " >= K");
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, logits.value()[i * k + j]);
    for (std::size_t j = 0; j < k; ++j) shift[i * k + j] = -m;
    onehot[i * k + labels[i]] = 1.0;
  }
  const ad::Var z = ad::add_const(logits, std::move(shift));
  const ad::Var lse = ad::log(ad::reduce_to(ad::exp(z), Shape{n, 1}));
  const ad::Var picked = ad::reduce_to(ad::mul_const(z, std::move(onehot)), Shape{n, 1});
  return ad::sub(lse, picked);
}

SoftmaxState SoftmaxState::from_logits(std::span<const double> logits, std::size_t c) {
  if (c >= logits.size()) throw std::out_of_range("softmax: class index out of range");
  SoftmaxState s;
  s.c = c;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  s.q.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) z += (s.q[k] = std::exp(logits[k] - m));
  for (auto& v : s.q) v /= z;
  return s;
}

double cross_entropy(std::span<const double> logits, std::size_t c) {
  if (c >= logits.size()) throw std::out_of_range("cross_entropy: class index out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  return std::log(z) - (logits[c] - m);
}

std::vector<double> logit_gradient(std::span<const double> logits, std::size_t c) {
  auto g = SoftmaxState::from_logits(logits, c).q;
  g[c] -= 1.0;
  return g;
}

std::string regularizer_name(Regularizer r) {
  switch (r) {
    case Regularizer::None: return "none";
    case Regularizer::GradPenalty: return "grad-penalty";
    case Regularizer::Augment: return "augment";
    case Regularizer::FgsmVariant: return "fgsm-variant";
    case Regularizer::CrossLipschitz: return "cross-lipschitz";
  }
  return "?";
}

Regularizer parse_regularizer(const std::string& s) {
  for (auto r : {Regularizer::None, Regularizer::GradPenalty, Regularizer::Augment, Regularizer::FgsmVariant,
                 Regularizer::CrossLipschitz})
    if (regularizer_name(r) == s) return r;
  throw std::invalid_argument("unknown regularizer '" + s + "'");
}

void ObjectiveSpec::validate() const {
  if (!(eps >= 0.0)) throw std::invalid_argument("objective: eps must be >= 0");
  if (!(weight >= 0.0)) throw std::invalid_argument("objective: weight must be >= 0");
  if (kind == Regularizer::GradPenalty && q != 1.0 && q != 2.0)
    throw std::invalid_argument("objective: grad-penalty q must be 1 or 2");
  if (kind == Regularizer::Augment) {
    const auto m = attacks::parse_method(method);
    if (m == attacks::Method::DeepFool) throw std::invalid_argument("objective: deepfool cannot be used for augmentation");
  }
}

std::string ObjectiveSpec::label() const {
  switch (kind) {
    case Regularizer::None: return "plain";
    case Regularizer::GradPenalty: return q == 1.0 ? "grad-l1" : "grad-l2";
    case Regularizer::Augment: return "aug-" + method;
    case Regularizer::FgsmVariant: return "fgsm-variant";
    case Regularizer::CrossLipschitz: return "cross-lipschitz";
  }
  return "?";
}

json to_json(const ObjectiveSpec& s) {
  json j{{"regularizer", regularizer_name(s.kind)}};
  switch (s.kind) {
    case Regularizer::None: break;
    case Regularizer::GradPenalty: j["q"] = s.q; j["eps"] = s.eps; break;
    case Regularizer::Augment: j["method"] = s.method; j["eps"] = s.eps; break;
    case Regularizer::FgsmVariant: j["eps"] = s.eps; break;
    case Regularizer::CrossLipschitz: j["weight"] = s.weight; break;
  }
  return j;
}

ObjectiveSpec objective_from_json(const json& j) {
  ObjectiveSpec s;
  s.kind = parse_regularizer(j.value("regularizer", std::string("none")));
  s.q = j.value("q", 1.0);
  s.eps = j.value("eps", 0.0);
  s.method = j.value("method", std::string("fgsm"));
  s.weight = j.value("weight", 0.0);
  s.validate();
  return s;
}

namespace {

Tensor onehot_column(const Shape& s, std::size_t k) {
  Tensor t(s);
  for (std::size_t i = 0; i < s[0]; ++i) t[i * s[1] + k] = 1.0;
  return t;
}

// Per-sample ‖g‖_q of a batch gradient, shape [N,1].
ad::Var per_sample_norm(const ad::Var& g, double q) {
  const Shape& s = g.shape();
  const std::size_t n = s[0];
  Shape reduced(s.size(), 1);
  reduced[0] = n;
  ad::Var r;
  if (q == 1.0) {
    r = ad::reduce_to(ad::mul_const(g, sign(g.value())), reduced);
  } else {
    r = ad::pow(ad::reduce_to(ad::mul(g, g), reduced), 0.5);
  }
  return ad::reshape(r, Shape{n, 1});
}

ad::Var mean_rows(const ad::Var& v) { return ad::scale(ad::sum(v), 1.0 / static_cast<double>(v.shape()[0])); }

}  // namespace

ad::Var batch_objective(const nn::Network& net, const std::vector<ad::Var>& params, const Tensor& batch,
                        std::span<const std::size_t> labels, const ObjectiveSpec& spec, const BuildOptions& opts) {
  spec.validate();
  ad::Tape& tape = *params.front().tape();
  nn::ForwardOptions fwd{opts.batchnorm, opts.updated_buffers};
  nn::ForwardOptions fwd_quiet{opts.batchnorm, nullptr};
  const std::vector<std::size_t> labs(labels.begin(), labels.end());

  switch (spec.kind) {
    case Regularizer::None: {
      const ad::Var x = tape.constant(batch);
      return mean_rows(cross_entropy(nn::forward(net, params, x, fwd), labs));
    }
    case Regularizer::GradPenalty: {
      const ad::Var x = tape.leaf(batch, true);
      const ad::Var per = cross_entropy(nn::forward(net, params, x, fwd), labs);
      if (spec.eps == 0.0) return mean_rows(per);
      const ad::Var g = ad::gradients(ad::sum(per), {x}, true)[0];
      return mean_rows(ad::add(per, ad::scale(per_sample_norm(g, spec.q), spec.eps / 2.0)));
    }
    case Regularizer::Augment: {
      const ad::Var clean = mean_rows(cross_entropy(nn::forward(net, params, tape.constant(batch), fwd), labs));
      if (spec.eps == 0.0) return clean;
      const auto method = attacks::parse_method(spec.method);
      const bool iterative = method == attacks::Method::PgdLinf || method == attacks::Method::PgdL2;
      auto aspec = iterative ? attacks::AttackSpec::pgd_preset(method, 0.0) : attacks::AttackSpec::make(method, 0.0);
      aspec.seed = opts.seed;
      const attacks::GradFn grad_fn = [&](const Tensor& b, std::vector<double>* losses) {
        ad::Tape t;
        const auto ps = nn::bind_params(t, net, false);
        const ad::Var xv = t.leaf(b, true);
        const ad::Var per = cross_entropy(nn::forward(net, ps, xv, fwd_quiet), labs);
        if (losses) losses->assign(per.value().vec().begin(), per.value().vec().end());
        return ad::grad(ad::sum(per), {xv})[0];
      };
      const Tensor adv = attacks::perturb(grad_fn, batch, aspec, spec.eps).perturbed;
      const ad::Var attacked = mean_rows(cross_entropy(nn::forward(net, params, tape.constant(adv), fwd_quiet), labs));
      return ad::scale(ad::add(clean, attacked), 0.5);
    }
    case Regularizer::FgsmVariant: {
      const ad::Var x = tape.leaf(batch, true);
      const ad::Var per = cross_entropy(nn::forward(net, params, x, fwd), labs);
      if (spec.eps == 0.0) return mean_rows(per);
      const ad::Var g = ad::gradients(ad::sum(per), {x}, true)[0];
      // δ = ε·sign(g), kept on the graph; sign contributes a zero derivative.
      const ad::Var delta = ad::add_const(ad::scale(g, 0.0), spec.eps * sign(g.value()));
      const ad::Var attacked = cross_entropy(nn::forward(net, params, ad::add(x, delta), fwd_quiet), labs);
      return ad::scale(ad::add(mean_rows(per), mean_rows(attacked)), 0.5);
    }
    case Regularizer::CrossLipschitz: {
      const ad::Var x = tape.leaf(batch, true);
      const ad::Var z = nn::forward(net, params, x, fwd);
      const ad::Var ce = mean_rows(cross_entropy(z, labs));
      if (spec.weight == 0.0) return ce;
      const std::size_t k = z.shape()[1];
      const double kd = static_cast<double>(k);
      ad::Var sq_sum, grad_sum;
      for (std::size_t h = 0; h < k; ++h) {
        const ad::Var g = ad::gradients(ad::sum(ad::mul_const(z, onehot_column(z.shape(), h))), {x}, true)[0];
        const ad::Var sq = ad::sum(ad::mul(g, g));
        sq_sum = h == 0 ? sq : ad::add(sq_sum, sq);
        grad_sum = h == 0 ? g : ad::add(grad_sum, g);
      }
      // (1/K²)Σ_{k,h}‖g_h − g_k‖² = (2/K)Σ‖g_k‖² − (2/K²)‖Σ g_k‖²
      const ad::Var reg = ad::sub(ad::scale(sq_sum, 2.0 / kd), ad::scale(ad::sum(ad::mul(grad_sum, grad_sum)), 2.0 / (kd * kd)));
      return ad::add(ce, ad::scale(reg, spec.weight / static_cast<double>(batch.dim(0))));
    }
  }
  throw std::logic_error("batch_objective: unhandled regularizer");
}

Evaluation evaluate(const nn::Network& net, const Tensor& batch, std::span<const std::size_t> labels,
                    const ObjectiveSpec& spec, bool with_grads, std::uint64_t seed) {
  ad::Tape tape;
  const auto params = nn::bind_params(tape, net, with_grads);
  BuildOptions opts;
  opts.seed = seed;
  const ad::Var loss = batch_objective(net, params, batch, labels, spec, opts);
  Evaluation ev;
  ev.loss = loss.value().item();
  if (with_grads) ev.param_grads = ad::grad(loss, params);
  return ev;
}

namespace {

Tensor as_batch(const Tensor& x) { return nn::stack(std::vector<const Tensor*>{&x}); }

double single(const nn::Network& net, const Tensor& x, std::size_t c, const ObjectiveSpec& spec) {
  const std::size_t labels[1] = {c};
  return evaluate(net, as_batch(x), labels, spec, false).loss;
}

}  // namespace

double grad_penalty_loss(const nn::Network& net, const Tensor& x, std::size_t c, double q, double eps) {
  return single(net, x, c, ObjectiveSpec{Regularizer::GradPenalty, q, eps});
}

double augmented_loss(const nn::Network& net, const Tensor& x, std::size_t c, const std::string& method, double eps) {
  ObjectiveSpec s{Regularizer::Augment};
  s.method = method;
  s.eps = eps;
  return single(net, x, c, s);
}

double fgsm_variant_loss(const nn::Network& net, const Tensor& x, std::size_t c, double eps) {
  ObjectiveSpec s{Regularizer::FgsmVariant};
  s.eps = eps;
  return single(net, x, c, s);
}

double duality_gap(const nn::Network& net, const Tensor& x, std::size_t c, double eps, double p) {
  if (std::isinf(p)) return std::abs(augmented_loss(net, x, c, "fgsm", eps) - grad_penalty_loss(net, x, c, 1.0, eps));
  if (p == 2.0) return std::abs(augmented_loss(net, x, c, "step-l2", eps) - grad_penalty_loss(net, x, c, 2.0, eps));
  throw std::invalid_argument("duality_gap: p must be inf or 2");
}

double cross_lipschitz(const nn::Network& net, const Tensor& x) {
  const auto g = nn::logit_gradients(net, as_batch(x));
  const std::size_t k = g.size();
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      const Tensor diff = g[a] - g[b];
      total += dot(diff, diff);
    }
  return total / static_cast<double>(k * k);
}

double our_regularizer_expanded(const nn::Network& net, const Tensor& x, std::size_t c) {
  const Tensor xb = as_batch(x);
  const auto g = nn::logit_gradients(net, xb);
  const Tensor z = nn::logits_batch(net, xb);
  const auto sm = SoftmaxState::from_logits(z.data(), c);
  const std::size_t k = g.size();
  std::vector<Tensor> diff;
  diff.reserve(k);
  for (std::size_t j = 0; j < k; ++j) diff.push_back(g[c] - g[j]);
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) total += sm.q[a] * sm.q[b] * dot(diff[a], diff[b]);
  return total;
}

double dual_exponent(double p) {
  if (std::isinf(p)) return 1.0;
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  if (!(p > 1.0)) throw std::invalid_argument("dual_exponent: p must be >= 1");
  return p / (p - 1.0);
}

double hein_bound(const nn::Network& net, const Tensor& x, double p) {
  const Tensor xb = as_batch(x);
  const Tensor z = nn::logits_batch(net, xb);
  const std::size_t c = nn::argmax(z.data());
  const auto g = nn::logit_gradients(net, xb);
  const double q = dual_exponent(p);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (k == c) continue;
    const double margin = z[c] - z[k];
    const double n = norm_p((g[c] - g[k]).data(), q);
    if (margin == 0.0) return 0.0;
    if (n > 0.0) best = std::min(best, margin / n);
  }
  return best;
}

}  // namespace advlab::objectives
