#include "advlab/attacks.hpp"

#include "advlab/objectives.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace advlab::attacks {

using json = nlohmann::json;

std::string method_name(Method m) {
  switch (m) {
    case Method::Fgsm: return "fgsm";
    case Method::StepL2: return "step-l2";
    case Method::PgdLinf: return "pgd-linf";
    case Method::PgdL2: return "pgd-l2";
    case Method::DeepFool: return "deepfool";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (auto m : {Method::Fgsm, Method::StepL2, Method::PgdLinf, Method::PgdL2, Method::DeepFool})
    if (method_name(m) == s) return m;
  throw std::invalid_argument("unknown attack method '" + s + "'");
}

double method_norm(Method m) { return m == Method::Fgsm || m == Method::PgdLinf ? kInf : 2.0; }

AttackSpec AttackSpec::make(Method m, double eps_inf) {
  AttackSpec s;
  s.method = m;
  s.p = method_norm(m);
  s.eps_inf = eps_inf;
  s.steps = 1;
  s.step_factor = 1.0;
  if (m == Method::PgdLinf || m == Method::PgdL2) {
    s.steps = 7;
    s.step_factor = 0.2;
  }
  return s;
}

AttackSpec AttackSpec::pgd_preset(Method m, double eps_inf) {
  if (m != Method::PgdLinf && m != Method::PgdL2) throw std::invalid_argument("pgd_preset: not a pgd method");
  AttackSpec s = make(m, eps_inf);
  s.random_start = true;
  return s;
}

double AttackSpec::threshold(std::size_t d) const { return calibrate_threshold(p, eps_inf, d); }

void AttackSpec::validate() const {
  if (!(eps_inf >= 0.0)) throw std::invalid_argument("attack: eps_inf must be >= 0");
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (!(step_factor > 0.0)) throw std::invalid_argument("attack: step_factor must be > 0");
  if (method_norm(method) != p)
    throw std::invalid_argument("attack: p does not match the norm of " + method_name(method));
  if (clamp && !(clamp->first < clamp->second)) throw std::invalid_argument("attack: empty clamp range");
}

namespace {
json p_json(double p) { return std::isinf(p) ? json("inf") : json(p); }
double p_from(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kInf;
    return std::stod(j.get<std::string>());
  }
  return j.get<double>();
}
}  // namespace

json to_json(const AttackSpec& s) {
  json j{{"method", method_name(s.method)}, {"p", p_json(s.p)},   {"eps_inf", s.eps_inf},
         {"steps", s.steps},               {"step_factor", s.step_factor}, {"random_start", s.random_start},
         {"seed", s.seed},                 {"overshoot", s.overshoot},     {"max_iter", s.max_iter}};
  if (s.clamp) j["clamp"] = {s.clamp->first, s.clamp->second};
  return j;
}

AttackSpec attack_from_json(const json& j) {
  AttackSpec s = AttackSpec::make(parse_method(j.at("method").get<std::string>()), j.value("eps_inf", 0.0));
  if (j.contains("p")) s.p = p_from(j["p"]);
  s.steps = j.value("steps", s.steps);
  s.step_factor = j.value("step_factor", s.step_factor);
  s.random_start = j.value("random_start", s.random_start);
  s.seed = j.value("seed", s.seed);
  s.overshoot = j.value("overshoot", s.overshoot);
  s.max_iter = j.value("max_iter", s.max_iter);
  if (j.contains("clamp")) s.clamp = std::make_pair(j["clamp"].at(0).get<double>(), j["clamp"].at(1).get<double>());
  s.validate();
  return s;
}

double calibrate_threshold(double p, double eps_inf, std::size_t d) {
  if (d < 1) throw std::invalid_argument("calibrate_threshold: d must be >= 1");
  if (std::isinf(p)) return eps_inf;
  if (p != 1.0 && p != 2.0) throw std::invalid_argument("calibrate_threshold: p must be 1, 2 or inf");
  return eps_inf * std::pow(static_cast<double>(d), 1.0 / p);
}

double snr_threshold(double p, double eps, const Tensor& x) {
  const double inv_p = std::isinf(p) ? 0.0 : 1.0 / p;
  if (!std::isinf(p) && p != 1.0 && p != 2.0) throw std::invalid_argument("snr_threshold: p must be 1, 2 or inf");
  return eps * norm_l2(x.data()) * std::pow(static_cast<double>(x.size()), inv_p - 0.5);
}

namespace {

std::size_t per_sample(const Tensor& batch) { return batch.size() / batch.dim(0); }

// Ascent direction of unit dual size: sign(g) for ℓ∞, g/‖g‖₂ for ℓ₂.
void ascent_direction(std::span<const double> g, double norm, std::span<double> out, bool& zero) {
  if (std::isinf(norm)) {
    zero = std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
  } else {
    const double n = norm_l2(g);
    zero = n == 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = zero ? 0.0 : g[i] / n;
  }
}

void project(std::span<const double> x0, std::span<double> x, double norm, double eps) {
  if (std::isinf(norm)) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], x0[i] - eps, x0[i] + eps);
    return;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - x0[i]) * (x[i] - x0[i]);
  const double n = std::sqrt(s);
  if (n > eps && n > 0.0) {
    const double f = eps / n;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + (x[i] - x0[i]) * f;
  }
}

}  // namespace

PerturbResult perturb(const GradFn& grad_fn, const Tensor& batch, const AttackSpec& spec, double eps_p) {
  spec.validate();
  if (spec.method == Method::DeepFool) throw std::invalid_argument("perturb: deepfool has its own driver");
  if (!(eps_p >= 0.0)) throw std::invalid_argument("perturb: radius must be >= 0");
  const std::size_t n = batch.dim(0), per = per_sample(batch);
  const double norm = method_norm(spec.method);
  PerturbResult res{batch, std::vector<bool>(n, false)};
  if (eps_p == 0.0) return res;

  const bool single_step = spec.method == Method::Fgsm || spec.method == Method::StepL2;
  const std::size_t steps = single_step ? 1 : spec.steps;
  const double alpha = single_step ? eps_p : spec.step_factor * eps_p;
  Tensor& x = res.perturbed;
  auto apply_clamp = [&](std::span<double> v) {
    if (spec.clamp)
      for (auto& e : v) e = std::clamp(e, spec.clamp->first, spec.clamp->second);
  };

  if (!single_step && spec.random_start) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<double> dir(per);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.data().subspan(i * per, per);
      if (std::isinf(norm)) {
        for (auto& e : xi) e += eps_p * uni(rng);
      } else {
        for (auto& e : dir) e = nd(rng);
        const double r = eps_p * std::pow(u01(rng), 1.0 / static_cast<double>(per)) / norm_l2(dir);
        for (std::size_t j = 0; j < per; ++j) xi[j] += r * dir[j];
      }
      apply_clamp(xi);
    }
  }

  std::vector<double> step(per);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor g = grad_fn(x, nullptr);
    for (std::size_t i = 0; i < n; ++i) {
      bool zero = false;
      ascent_direction(g.data().subspan(i * per, per), norm, step, zero);
      if (t == 0) res.zero_gradient[i] = zero;
      if (zero) continue;
      auto xi = x.data().subspan(i * per, per);
      for (std::size_t j = 0; j < per; ++j) xi[j] += alpha * step[j];
      project(batch.data().subspan(i * per, per), xi, norm, eps_p);
      apply_clamp(xi);
    }
  }
  return res;
}

GradFn network_grad_fn(const nn::Network& net, std::vector<std::size_t> labels) {
  return [&net, labels = std::move(labels)](const Tensor& b, std::vector<double>* losses) {
    return nn::input_gradients(net, b, labels, losses);
  };
}

namespace {

void fill_norms(AttackOutcome& o, std::span<const double> x0, std::span<const double> x1) {
  std::vector<double> d(x0.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = x1[i] - x0[i];
  o.l1 = norm_l1(d);
  o.l2 = norm_l2(d);
  o.linf = norm_linf(d);
}

std::vector<double> row_losses(const Tensor& z, const std::vector<std::size_t>& labels) {
  const std::size_t k = z.dim(1);
  std::vector<double> out(z.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = objectives::cross_entropy(z.data().subspan(i * k, k), labels[i]);
  return out;
}

std::vector<std::size_t> row_argmax(const Tensor& z) {
  const std::size_t k = z.dim(1);
  std::vector<std::size_t> out(z.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nn::argmax(z.data().subspan(i * k, k));
  return out;
}

std::vector<AttackOutcome> first_order_batch(const nn::Network& net, const Tensor& batch,
                                             const std::vector<std::size_t>& labels, const AttackSpec& spec,
                                             double eps_p) {
  const std::size_t n = batch.dim(0), per = per_sample(batch);
  const Tensor z0 = nn::logits_batch(net, batch);
  const PerturbResult pr = perturb(network_grad_fn(net, labels), batch, spec, eps_p);
  const Tensor z1 = nn::logits_batch(net, pr.perturbed);
  const auto l0 = row_losses(z0, labels), l1 = row_losses(z1, labels);
  const auto c0 = row_argmax(z0), c1 = row_argmax(z1);
  std::vector<AttackOutcome> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& o = out[i];
    o.perturbed = nn::unstack(pr.perturbed, i);
    o.class_before = c0[i];
    o.class_after = c1[i];
    o.loss_before = l0[i];
    o.loss_after = l1[i];
    fill_norms(o, batch.data().subspan(i * per, per), pr.perturbed.data().subspan(i * per, per));
    o.reported_norm = std::isinf(method_norm(spec.method)) ? o.linf : o.l2;
    o.success = c1[i] != c0[i];
    o.zero_gradient = pr.zero_gradient[i];
  }
  return out;
}

AttackOutcome single(const nn::Network& net, const Tensor& x, std::size_t c, const AttackSpec& spec, double eps_p) {
  return first_order_batch(net, nn::stack(std::vector<const Tensor*>{&x}), {c}, spec, eps_p).front();
}

}  // namespace

AttackOutcome fgsm(const nn::Network& net, const Tensor& x, std::size_t c, double eps_inf) {
  return single(net, x, c, AttackSpec::make(Method::Fgsm, eps_inf), eps_inf);
}

AttackOutcome step_l2(const nn::Network& net, const Tensor& x, std::size_t c, double eps_2) {
  return single(net, x, c, AttackSpec::make(Method::StepL2, 0.0), eps_2);
}

AttackOutcome pgd(const nn::Network& net, const Tensor& x, std::size_t c, const AttackSpec& spec) {
  if (spec.method != Method::PgdLinf && spec.method != Method::PgdL2) throw std::invalid_argument("pgd: spec is not pgd");
  return single(net, x, c, spec, spec.threshold(x.size()));
}

AttackOutcome deepfool(const nn::Network& net, const Tensor& x, const AttackSpec& spec, std::optional<std::size_t> label) {
  const std::size_t k = net.spec.classes;
  if (k < 2) throw std::invalid_argument("deepfool: needs at least two classes");
  auto logits_of = [&](const Tensor& v) { return nn::logits(net, v); };
  const Tensor z0 = logits_of(x);
  AttackOutcome o;
  o.class_before = nn::argmax(z0.data());
  const std::size_t c = label.value_or(o.class_before);
  o.loss_before = objectives::cross_entropy(z0.data(), c);
  o.perturbed = x;
  o.class_after = o.class_before;
  o.loss_after = o.loss_before;
  if (o.class_before != c) return o;  // already misclassified: nothing to do

  Tensor r_total(x.shape());
  Tensor xi = x;
  for (std::size_t it = 0; it < spec.max_iter; ++it) {
    const Tensor xb = nn::stack(std::vector<const Tensor*>{&xi});
    const Tensor z = nn::logits_batch(net, xb);
    const auto grads = nn::logit_gradients(net, xb);
    double best = std::numeric_limits<double>::infinity();
    Tensor best_w;
    double best_f = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == c) continue;
      Tensor w = (grads[j] - grads[c]).reshaped(x.shape());
      const double f = z[j] - z[c];
      const double wn = norm_l2(w.data());
      if (wn == 0.0) continue;
      const double dist = std::abs(f) / wn;
      if (dist < best) {
        best = dist;
        best_w = std::move(w);
        best_f = f;
      }
    }
    if (!best_w.size()) {
      o.zero_gradient = true;
      break;
    }
    const double wn2 = dot(best_w, best_w);
    r_total += (std::abs(best_f) / wn2) * best_w;
    xi = x + (1.0 + spec.overshoot) * r_total;
    if (spec.clamp)
      for (auto& e : xi.data()) e = std::clamp(e, spec.clamp->first, spec.clamp->second);
    const Tensor z1 = logits_of(xi);
    if (nn::argmax(z1.data()) != c) {
      o.success = true;
      break;
    }
  }
  o.perturbed = xi;
  const Tensor z1 = logits_of(xi);
  o.class_after = nn::argmax(z1.data());
  o.loss_after = objectives::cross_entropy(z1.data(), c);
  o.success = o.class_after != o.class_before;
  fill_norms(o, x.data(), xi.data());
  o.reported_norm = norm_l2(r_total.data());
  return o;
}

std::vector<AttackOutcome> attack_batch(const nn::Network& net, const Tensor& batch,
                                        const std::vector<std::size_t>& labels, const AttackSpec& spec) {
  spec.validate();
  if (labels.size() != batch.dim(0)) throw std::invalid_argument("attack_batch: label count mismatch");
  if (spec.method == Method::DeepFool) {
    std::vector<AttackOutcome> out;
    out.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out.push_back(deepfool(net, nn::unstack(batch, i), spec, labels[i]));
    return out;
  }
  return first_order_batch(net, batch, labels, spec, spec.threshold(per_sample(batch)));
}

std::vector<AttackOutcome> attack_dataset(const nn::Network& net, const data::Dataset& ds, const AttackSpec& spec,
                                          std::size_t chunk) {
  std::vector<AttackOutcome> out;
  out.reserve(ds.size());
  if (chunk == 0) chunk = ds.size();
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) idx.push_back(i);
    AttackSpec s = spec;
    s.seed = spec.seed + start;  // distinct random starts per chunk, independent of chunk order
    auto part = attack_batch(net, ds.batch(idx), ds.batch_labels(idx), s);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

double vulnerability(const std::vector<AttackOutcome>& outcomes) {
  if (outcomes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& o : outcomes) s += o.success ? 1.0 : 0.0;
  return s / static_cast<double>(outcomes.size());
}

double vulnerability(const nn::Network& net, const data::Dataset& ds, const AttackSpec& spec) {
  return vulnerability(attack_dataset(net, ds, spec));
}

double adversarial_damage(const std::vector<AttackOutcome>& outcomes, const std::vector<std::size_t>& labels,
                          DamageLoss loss) {
  if (outcomes.size() != labels.size()) throw std::invalid_argument("adversarial_damage: label count mismatch");
  if (outcomes.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (loss == DamageLoss::Xent) {
      s += o.loss_after - o.loss_before;
    } else {
      s += (o.class_after != labels[i] ? 1.0 : 0.0) - (o.class_before != labels[i] ? 1.0 : 0.0);
    }
  }
  return s / static_cast<double>(outcomes.size());
}

double adversarial_damage(const nn::Network& net, const data::Dataset& ds, const AttackSpec& spec, DamageLoss loss) {
  return adversarial_damage(attack_dataset(net, ds, spec), ds.labels, loss);
}

double first_order_damage(const nn::Network& net, const data::Dataset& ds, double p, double eps_inf) {
  if (ds.size() == 0) return 0.0;
  const double q = objectives::dual_exponent(p);
  const double eps_p = calibrate_threshold(p, eps_inf, ds.dim());
  double s = 0.0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) idx.push_back(i);
    const Tensor g = nn::input_gradients(net, ds.batch(idx), ds.batch_labels(idx));
    const std::size_t per = per_sample(g);
    for (std::size_t i = 0; i < idx.size(); ++i) s += norm_p(g.data().subspan(i * per, per), q);
  }
  return eps_p * s / static_cast<double>(ds.size());
}

void write_attack_csv_header(std::ostream& os) { os << "sample_id,method,p,eps_inf,success,dL,l1,l2,linf\n"; }

void write_attack_csv(std::ostream& os, const std::vector<AttackOutcome>& outcomes, const AttackSpec& spec,
                      std::size_t first_id) {
  const std::string p = std::isinf(spec.p) ? "inf" : std::to_string(static_cast<int>(spec.p));
  const auto prec = os.precision(17);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    os << first_id + i << ',' << method_name(spec.method) << ',' << p << ',' << spec.eps_inf << ','
       << (o.success ? 1 : 0) << ',' << (o.loss_after - o.loss_before) << ',' << o.l1 << ',' << o.l2 << ','
       << o.linf << '\n';
  }
  os.precision(prec);
}

}  // namespace advlab::attacks
