#include "advlab/theory.hpp"

#include "advlab/objectives.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

namespace advlab::theory {

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t index) {
  // splitmix64 over a mix of both words
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void PathDag::add_edge(std::size_t from, std::size_t to) {
  if (from >= to || to >= size()) throw std::invalid_argument("PathDag: edge must go forward between existing nodes");
  auto& ps = parents[to];
  if (std::find(ps.begin(), ps.end(), from) != ps.end()) throw std::invalid_argument("PathDag: duplicate edge");
  ps.push_back(from);
}

void PathDag::validate() const {
  if (output >= size()) throw std::invalid_argument("PathDag: output out of range");
  std::vector<char> is_input(size(), 0);
  for (auto x : inputs) {
    if (x >= size()) throw std::invalid_argument("PathDag: input out of range");
    if (!parents[x].empty()) throw std::invalid_argument("PathDag: input node " + std::to_string(x) + " has parents");
    is_input[x] = 1;
  }
  for (std::size_t p = 0; p < size(); ++p) {
    if (is_input[p]) continue;
    if (parents[p].empty()) throw std::invalid_argument("PathDag: node " + std::to_string(p) + " has in-degree 0");
    for (auto u : parents[p])
      if (u >= p) throw std::invalid_argument("PathDag: edge " + std::to_string(u) + "->" + std::to_string(p) + " is not forward");
  }
  // backward reachability from the output
  std::vector<char> reach(size(), 0);
  reach[output] = 1;
  for (std::size_t p = output + 1; p-- > 0;)
    if (reach[p])
      for (auto u : parents[p]) reach[u] = 1;
  for (auto x : inputs)
    if (!reach[x]) throw std::invalid_argument("PathDag: input " + std::to_string(x) + " does not reach the output");
}

PathDag dense_dag(const std::vector<std::size_t>& widths) {
  if (widths.size() < 2 || widths.back() != 1) throw std::invalid_argument("dense_dag: need >= 2 layers ending in width 1");
  PathDag dag;
  std::vector<std::size_t> prev;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    std::vector<std::size_t> cur;
    for (std::size_t i = 0; i < widths[l]; ++i) {
      const std::size_t v = dag.add_node();
      for (auto u : prev) dag.add_edge(u, v);
      cur.push_back(v);
      if (l == 0) dag.inputs.push_back(v);
    }
    prev = std::move(cur);
  }
  dag.output = prev.front();
  dag.validate();
  return dag;
}

PathDag conv1d_dag(std::size_t input_size, std::size_t kernel, std::size_t stride, std::size_t layers) {
  if (kernel == 0 || stride == 0) throw std::invalid_argument("conv1d_dag: kernel and stride must be >= 1");
  PathDag dag;
  std::vector<std::size_t> prev;
  for (std::size_t i = 0; i < input_size; ++i) prev.push_back(dag.add_node());
  dag.inputs = prev;
  for (std::size_t l = 0; l < layers; ++l) {
    if (prev.size() < kernel) throw std::invalid_argument("conv1d_dag: layer narrower than the kernel");
    const std::size_t out = (prev.size() - kernel) / stride + 1;
    std::vector<std::size_t> cur;
    for (std::size_t j = 0; j < out; ++j) {
      const std::size_t v = dag.add_node();
      for (std::size_t t = 0; t < kernel; ++t) dag.add_edge(prev[j * stride + t], v);
      cur.push_back(v);
    }
    prev = std::move(cur);
  }
  dag.output = dag.add_node();
  for (auto u : prev) dag.add_edge(u, dag.output);
  dag.validate();
  return dag;
}

PathDag random_dag(std::size_t nodes, std::size_t inputs, std::mt19937_64& rng) {
  if (inputs == 0 || nodes <= inputs) throw std::invalid_argument("random_dag: need at least one input and one other node");
  PathDag dag;
  for (std::size_t i = 0; i < nodes; ++i) dag.add_node();
  for (std::size_t i = 0; i < inputs; ++i) dag.inputs.push_back(i);
  dag.output = nodes - 1;
  for (std::size_t p = inputs; p < nodes; ++p) {
    std::uniform_int_distribution<std::size_t> count(1, std::min<std::size_t>(p, 4));
    std::vector<std::size_t> pool(p);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(count(rng));
    std::sort(pool.begin(), pool.end());
    for (auto u : pool) dag.add_edge(u, p);
  }
  std::vector<char> reach(nodes, 0);
  reach[dag.output] = 1;
  for (std::size_t u = nodes - 1; u-- > 0;) {
    for (std::size_t v = u + 1; v < nodes && !reach[u]; ++v) {
      const auto& ps = dag.parents[v];
      if (reach[v] && std::find(ps.begin(), ps.end(), u) != ps.end()) reach[u] = 1;
    }
    if (reach[u]) continue;
    std::vector<std::size_t> targets;
    for (std::size_t v = std::max(u + 1, inputs); v < nodes; ++v)
      if (reach[v]) targets.push_back(v);
    std::uniform_int_distribution<std::size_t> pick(0, targets.size() - 1);
    dag.add_edge(u, targets[pick(rng)]);
    reach[u] = 1;
  }
  dag.validate();
  return dag;
}

PathBudgetExceeded::PathBudgetExceeded(double est, std::size_t budget)
    : std::runtime_error("path enumeration refused: about " + std::to_string(static_cast<long double>(est)) +
                         " paths exceed the budget of " + std::to_string(budget)),
      estimate(est) {}

SymmetryViolation::SymmetryViolation(std::size_t a, std::size_t b, std::string detail)
    : std::runtime_error("symmetry assumption violated between inputs " + std::to_string(a) + " and " +
                         std::to_string(b) + ": " + detail),
      input_a(a),
      input_b(b) {}

namespace {

// Number of paths from each node back to the inputs (restricted to `only`
// when given).
std::vector<double> paths_to_inputs(const PathDag& dag, std::optional<std::size_t> only) {
  std::vector<double> np(dag.size(), 0.0);
  for (auto x : dag.inputs)
    if (!only || *only == x) np[x] = 1.0;
  for (std::size_t p = 0; p < dag.size(); ++p)
    for (auto u : dag.parents[p]) np[p] += np[u];
  return np;
}

void require_budget(const PathDag& dag, std::optional<std::size_t> only, std::size_t budget) {
  dag.validate();
  const double n = paths_to_inputs(dag, only)[dag.output];
  if (n > static_cast<double>(budget)) throw PathBudgetExceeded(n, budget);
}

// Enumerates paths backwards from the output. `visit(input, nodes)` gets the
// nodes after the input, ordered from the output down.
template <class Visit>
void enumerate(const PathDag& dag, std::optional<std::size_t> only, Visit&& visit) {
  std::vector<char> is_input(dag.size(), 0);
  for (auto x : dag.inputs) is_input[x] = 1;
  std::vector<std::size_t> stack{dag.output};
  auto rec = [&](auto& self, std::size_t p) -> void {
    for (auto u : dag.parents[p]) {
      if (is_input[u]) {
        if (!only || *only == u) visit(u, stack);
        continue;
      }
      stack.push_back(u);
      self(self, u);
      stack.pop_back();
    }
  };
  rec(rec, dag.output);
}

std::string seq_str(const std::vector<std::vector<std::size_t>>& m) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < m.size() && i < 8; ++i) {
    os << (i ? " " : "") << '(';
    for (std::size_t j = 0; j < m[i].size(); ++j) os << (j ? "," : "") << m[i][j];
    os << ')';
  }
  if (m.size() > 8) os << " ...";
  os << '}';
  return os.str();
}

}  // namespace

double count_paths(const PathDag& dag) {
  dag.validate();
  return paths_to_inputs(dag, std::nullopt)[dag.output];
}

double total_path_sum(const PathDag& dag, std::size_t budget) {
  require_budget(dag, std::nullopt, budget);
  double total = 0.0;
  enumerate(dag, std::nullopt, [&](std::size_t, const std::vector<std::size_t>& nodes) {
    double prod = 1.0;
    for (auto p : nodes) prod /= static_cast<double>(dag.in_degree(p));
    total += prod;
  });
  return total;
}

std::vector<std::vector<std::size_t>> path_degree_multiset(const PathDag& dag, std::size_t input, std::size_t budget) {
  require_budget(dag, input, budget);
  std::vector<std::vector<std::size_t>> out;
  enumerate(dag, input, [&](std::size_t, const std::vector<std::size_t>& nodes) {
    std::vector<std::size_t> seq;
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) seq.push_back(dag.in_degree(*it));
    out.push_back(std::move(seq));
  });
  std::sort(out.begin(), out.end());
  return out;
}

void check_symmetry(const PathDag& dag, std::size_t budget) {
  if (dag.inputs.empty()) return;
  const auto ref = path_degree_multiset(dag, dag.inputs.front(), budget);
  for (std::size_t i = 1; i < dag.inputs.size(); ++i) {
    const auto m = path_degree_multiset(dag, dag.inputs[i], budget);
    if (m != ref) throw SymmetryViolation(dag.inputs.front(), dag.inputs[i], seq_str(ref) + " vs " + seq_str(m));
  }
}

double per_input_path_sum(const PathDag& dag, std::size_t input, std::size_t budget) {
  if (std::find(dag.inputs.begin(), dag.inputs.end(), input) == dag.inputs.end())
    throw std::invalid_argument("per_input_path_sum: node " + std::to_string(input) + " is not an input");
  check_symmetry(dag, budget);
  double total = 0.0;
  enumerate(dag, input, [&](std::size_t, const std::vector<std::size_t>& nodes) {
    double prod = 1.0;
    for (auto p : nodes) prod /= static_cast<double>(dag.in_degree(p));
    total += prod;
  });
  return total;
}

EdgeLaw he_edge(const PathDag& dag, std::size_t to, std::size_t) {
  return EdgeLaw{false, 0.0, 2.0 / static_cast<double>(dag.in_degree(to))};
}

double DecorrelationReport::max_cross_z() const {
  double m = 0.0;
  for (const auto& c : cross) m = std::max(m, c.z());
  return m;
}

double DecorrelationReport::max_second_z() const {
  double m = 0.0;
  for (const auto& c : second) m = std::max(m, c.z());
  return m;
}

DecorrelationReport decorrelation_check(const PathDag& dag, std::size_t input, const EdgeLawFn& law,
                                        std::size_t trials, std::uint64_t seed, std::size_t max_pairs) {
  if (trials < 2) throw std::invalid_argument("decorrelation_check: need at least 2 trials");
  require_budget(dag, input, 100000);

  // Edge ids: offset[to] + slot.
  std::vector<std::size_t> offset(dag.size() + 1, 0);
  for (std::size_t p = 0; p < dag.size(); ++p) offset[p + 1] = offset[p] + dag.parents[p].size();
  std::vector<EdgeLaw> laws(offset.back());
  for (std::size_t p = 0; p < dag.size(); ++p)
    for (std::size_t s = 0; s < dag.parents[p].size(); ++s) laws[offset[p] + s] = law(dag, p, s);

  std::vector<std::vector<std::size_t>> paths;  // edge ids per path
  enumerate(dag, input, [&](std::size_t x, const std::vector<std::size_t>& nodes) {
    std::vector<std::size_t> edges;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const std::size_t to = nodes[i];
      const std::size_t from = i + 1 < nodes.size() ? nodes[i + 1] : x;
      const auto& ps = dag.parents[to];
      edges.push_back(offset[to] + static_cast<std::size_t>(std::find(ps.begin(), ps.end(), from) - ps.begin()));
    }
    std::sort(edges.begin(), edges.end());
    paths.push_back(std::move(edges));
  });

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < paths.size() && pairs.size() < max_pairs; ++a)
    for (std::size_t b = a + 1; b < paths.size() && pairs.size() < max_pairs; ++b) pairs.emplace_back(a, b);

  auto m1 = [&](std::size_t e) { return laws[e].fixed ? laws[e].value : 0.0; };
  auto m2 = [&](std::size_t e) { return laws[e].fixed ? laws[e].value * laws[e].value : laws[e].variance; };

  DecorrelationReport rep;
  rep.trials = trials;
  rep.paths = paths.size();
  rep.first.resize(paths.size());
  rep.second.resize(paths.size());
  rep.cross.resize(pairs.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    double e1 = 1.0, e2 = 1.0;
    for (auto e : paths[i]) {
      e1 *= m1(e);
      e2 *= m2(e);
    }
    rep.first[i].expected = e1;
    rep.second[i].expected = e2;
  }
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& a = paths[pairs[k].first];
    const auto& b = paths[pairs[k].second];
    std::map<std::size_t, int> mult;
    for (auto e : a) ++mult[e];
    for (auto e : b) ++mult[e];
    double ex = 1.0;
    for (auto [e, c] : mult) ex *= c == 2 ? m2(e) : m1(e);
    rep.cross[k].expected = ex;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> w(laws.size()), omega(paths.size());
  std::vector<double> s1(paths.size()), q1(paths.size()), s2(paths.size()), q2(paths.size());
  std::vector<double> sc(pairs.size()), qc(pairs.size());
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t e = 0; e < w.size(); ++e) w[e] = laws[e].fixed ? laws[e].value : std::sqrt(laws[e].variance) * nd(rng);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      double o = 1.0;
      for (auto e : paths[i]) o *= w[e];
      omega[i] = o;
      s1[i] += o;
      q1[i] += o * o;
      s2[i] += o * o;
      q2[i] += o * o * o * o;
    }
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const double v = omega[pairs[k].first] * omega[pairs[k].second];
      sc[k] += v;
      qc[k] += v * v;
    }
  }
  const double n = static_cast<double>(trials);
  auto fill = [&](Moment& m, double s, double q) {
    m.mean = s / n;
    const double var = std::max(0.0, (q / n - m.mean * m.mean) * n / (n - 1.0));
    m.se = std::sqrt(var / n);
  };
  for (std::size_t i = 0; i < paths.size(); ++i) {
    fill(rep.first[i], s1[i], q1[i]);
    fill(rep.second[i], s2[i], q2[i]);
  }
  for (std::size_t k = 0; k < pairs.size(); ++k) fill(rep.cross[k], sc[k], qc[k]);
  return rep;
}

// ---------------------------------------------------------------------------

DrawSummary summarize(const std::vector<double>& values) {
  DrawSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double v = 0.0;
  for (double x : values) v += (x - s.mean) * (x - s.mean);
  s.se = values.size() > 1 ? std::sqrt(v / (n - 1.0) / n) : 0.0;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  auto quant = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  s.q10 = quant(0.1);
  s.q90 = quant(0.9);
  return s;
}

namespace {

Tensor normal_batch(const Shape& input, std::size_t n, std::uint64_t seed) {
  Shape bs{n};
  bs.insert(bs.end(), input.begin(), input.end());
  Tensor t(bs);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

constexpr std::uint64_t kInputStream = 0x5EED'1A7A'0000'0001ULL;
constexpr std::uint64_t kLabelStream = 0x5EED'1A7A'0000'0002ULL;

}  // namespace

LogitGradStats mc_logit_grad_stats(const nn::NetworkSpec& spec, std::size_t seeds, std::size_t inputs_per_seed,
                                   std::uint64_t master_seed) {
  LogitGradStats st;
  st.d = spec.input_dim();
  const double d = static_cast<double>(st.d);
  for (std::size_t s = 0; s < seeds; ++s) {
    const nn::Network net = nn::he_init(spec, trial_seed(master_seed, s));
    const Tensor batch = normal_batch(spec.input, inputs_per_seed, trial_seed(master_seed ^ kInputStream, s));
    const auto grads = nn::logit_gradients(net, batch);
    const double k = static_cast<double>(grads.size());
    for (std::size_t i = 0; i < inputs_per_seed; ++i) {
      double sq = 0.0;
      for (const auto& g : grads) {
        const auto row = g.data().subspan(i * st.d, st.d);
        for (double v : row) sq += v * v;
      }
      sq /= k;
      st.sq_norm.push_back(sq);
      st.coord_second_moment.push_back(sq / d);
    }
  }
  st.draws = st.sq_norm.size();
  return st;
}

double avgpool_factor(const nn::NetworkSpec& spec) {
  double f = 1.0;
  for (const auto& l : spec.layers)
    if (const auto* p = std::get_if<nn::AvgPool>(&l)) f /= static_cast<double>(p->mask.area());
  return f;
}

PoolScaling mc_avgpool_scaling(const nn::NetworkSpec& spec, std::size_t seeds, std::size_t inputs_per_seed,
                               std::uint64_t master_seed) {
  return PoolScaling{mc_logit_grad_stats(spec, seeds, inputs_per_seed, master_seed), avgpool_factor(spec)};
}

std::string statistic_name(Statistic s, double p) {
  switch (s) {
    case Statistic::LossGradL1: return "grad_l1";
    case Statistic::LossGradL2: return "grad_l2";
    case Statistic::LogitGradSqNorm: return "logit_grad_sq_norm";
    case Statistic::CoordMomentTimesD: return "coord_moment_times_d";
    case Statistic::ScaledProxy: return std::isinf(p) ? "eps_p_grad_q_pinf" : "eps_p_grad_q_p" + std::to_string(static_cast<int>(p));
  }
  return "?";
}

namespace {

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> u(0, classes - 1);
  std::vector<std::size_t> out(n);
  for (auto& v : out) v = u(rng);
  return out;
}

}  // namespace

std::vector<double> mc_statistic(const nn::NetworkSpec& spec, Statistic stat, std::size_t seeds,
                                 std::size_t inputs_per_seed, std::uint64_t master_seed, double p) {
  if (stat == Statistic::LogitGradSqNorm) return mc_logit_grad_stats(spec, seeds, inputs_per_seed, master_seed).sq_norm;
  if (stat == Statistic::CoordMomentTimesD) {
    auto st = mc_logit_grad_stats(spec, seeds, inputs_per_seed, master_seed);
    for (auto& v : st.coord_second_moment) v *= static_cast<double>(st.d);
    return st.coord_second_moment;
  }
  const std::size_t d = spec.input_dim();
  double q = 1.0, scale = 1.0;
  if (stat == Statistic::LossGradL2) q = 2.0;
  if (stat == Statistic::ScaledProxy) {
    q = objectives::dual_exponent(p);
    scale = std::isinf(p) ? 1.0 : std::pow(static_cast<double>(d), 1.0 / p);
  }
  std::vector<double> out;
  for (std::size_t s = 0; s < seeds; ++s) {
    const nn::Network net = nn::he_init(spec, trial_seed(master_seed, s));
    const Tensor batch = normal_batch(spec.input, inputs_per_seed, trial_seed(master_seed ^ kInputStream, s));
    const auto labels = random_labels(inputs_per_seed, spec.classes, trial_seed(master_seed ^ kLabelStream, s));
    const Tensor g = nn::input_gradients(net, batch, labels);
    for (std::size_t i = 0; i < inputs_per_seed; ++i) out.push_back(scale * norm_p(g.data().subspan(i * d, d), q));
  }
  return out;
}

VarianceCheck loss_grad_variance_check(const nn::NetworkSpec& spec, std::size_t seeds, std::size_t inputs_per_seed,
                                       std::uint64_t master_seed) {
  const std::size_t d = spec.input_dim();
  const std::size_t k = spec.classes;
  double measured = 0.0, predicted = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const nn::Network net = nn::he_init(spec, trial_seed(master_seed, s));
    const Tensor batch = normal_batch(spec.input, inputs_per_seed, trial_seed(master_seed ^ kInputStream, s));
    const auto labels = random_labels(inputs_per_seed, k, trial_seed(master_seed ^ kLabelStream, s));
    const Tensor g = nn::input_gradients(net, batch, labels);
    const Tensor z = nn::logits_batch(net, batch);
    for (std::size_t i = 0; i < inputs_per_seed; ++i) {
      const auto row = g.data().subspan(i * d, d);
      double sq = 0.0;
      for (double v : row) sq += v * v;
      measured += sq / static_cast<double>(d);
      const auto sm = objectives::SoftmaxState::from_logits(z.data().subspan(i * k, k), labels[i]);
      double pred = 0.0;
      for (std::size_t j = 0; j < k; ++j) pred += j == labels[i] ? (1.0 - sm.q[j]) * (1.0 - sm.q[j]) : sm.q[j] * sm.q[j];
      predicted += pred / static_cast<double>(d);
      ++n;
    }
  }
  return VarianceCheck{measured / static_cast<double>(n), predicted / static_cast<double>(n)};
}

std::vector<double> relu_activity(const nn::Network& net, const Tensor& batch) {
  ad::Tape tape;
  const auto params = nn::bind_params(tape, net, false);
  (void)nn::forward(net, params, tape.constant(batch));
  std::vector<double> out;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& node = tape.node(static_cast<int>(i));
    if (node.op != ad::Op::Relu || !node.mask) continue;
    out.push_back(sum(*node.mask) / static_cast<double>(node.mask->size()));
  }
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 matched points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]) - mx;
    sxy += lx * (std::log(y[i]) - my);
    sxx += lx * lx;
  }
  return sxy / sxx;
}

void ScalingReport::write_csv(std::ostream& os) const {
  os << "d,statistic,mean,q10,q90\n";
  const auto prec = os.precision(17);
  for (const auto& r : rows) os << r.d << ',' << statistic << ',' << r.summary.mean << ',' << r.summary.q10 << ',' << r.summary.q90 << '\n';
  os.precision(prec);
}

nlohmann::json ScalingReport::summary_json() const {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& r : rows) dims.push_back(r.d);
  return {{"statistic", statistic}, {"slope", slope}, {"ci", ci}, {"dims", dims}};
}

ScalingReport scaling_slope(const std::function<nn::NetworkSpec(std::size_t)>& family, const std::vector<std::size_t>& dims,
                            Statistic stat, std::size_t seeds, std::size_t inputs_per_seed, std::uint64_t master_seed,
                            double p, std::size_t bootstrap) {
  if (dims.size() < 2) throw std::invalid_argument("scaling_slope: need at least two dimensions");
  ScalingReport rep;
  rep.statistic = statistic_name(stat, p);
  std::vector<std::vector<double>> samples;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto spec = family(dims[i]);
    samples.push_back(mc_statistic(spec, stat, seeds, inputs_per_seed, trial_seed(master_seed, 1000 + i), p));
    rep.rows.push_back(ScalingRow{spec.input_dim(), summarize(samples.back())});
    xs.push_back(static_cast<double>(spec.input_dim()));
    ys.push_back(rep.rows.back().summary.mean);
  }
  rep.slope = loglog_slope(xs, ys);
  if (bootstrap > 1) {
    std::mt19937_64 rng(trial_seed(master_seed, 0xB007));
    std::vector<double> slopes;
    slopes.reserve(bootstrap);
    for (std::size_t b = 0; b < bootstrap; ++b) {
      std::vector<double> yb;
      for (const auto& s : samples) {
        std::uniform_int_distribution<std::size_t> u(0, s.size() - 1);
        double m = 0.0;
        for (std::size_t j = 0; j < s.size(); ++j) m += s[u(rng)];
        yb.push_back(m / static_cast<double>(s.size()));
      }
      slopes.push_back(loglog_slope(xs, yb));
    }
    std::sort(slopes.begin(), slopes.end());
    const auto at = [&](double q) { return slopes[static_cast<std::size_t>(q * static_cast<double>(slopes.size() - 1))]; };
    rep.ci = (at(0.975) - at(0.025)) / 2.0;
  }
  return rep;
}

}  // namespace advlab::theory
