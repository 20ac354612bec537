#pragma once

#include "advlab/nn.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace advlab::theory {

/// Deterministic per-trial seed from (master, index).
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t index);

/// Directed acyclic graph with designated inputs and one output. Node ids
/// are a topological order; edges are stored as parent lists.
struct PathDag {
  std::vector<std::vector<std::size_t>> parents;
  std::vector<std::size_t> inputs;
  std::size_t output = 0;

  std::size_t size() const { return parents.size(); }
  std::size_t add_node() {
    parents.emplace_back();
    return parents.size() - 1;
  }
  void add_edge(std::size_t from, std::size_t to);
  std::size_t in_degree(std::size_t p) const { return parents.at(p).size(); }
  /// Inputs have no parents, every other node has at least one parent that
  /// precedes it, and every input reaches the output.
  void validate() const;
};

/// Fully connected layers, e.g. {2,3,1}; the single last-layer node is the output.
PathDag dense_dag(const std::vector<std::size_t>& widths);
/// 1-D single-channel convolutions without padding (window `kernel`, step
/// `stride`), repeated `layers` times on `input_size` inputs, followed by a
/// fully connected output node.
PathDag conv1d_dag(std::size_t input_size, std::size_t kernel, std::size_t stride, std::size_t layers);
/// Random DAG with `nodes` nodes of which `inputs` are inputs.
PathDag random_dag(std::size_t nodes, std::size_t inputs, std::mt19937_64& rng);

/// Raised when a path enumeration would exceed its budget.
class PathBudgetExceeded : public std::runtime_error {
 public:
  PathBudgetExceeded(double estimate, std::size_t budget);
  double estimate;
};

/// Raised when two inputs see different path in-degree multisets.
class SymmetryViolation : public std::runtime_error {
 public:
  SymmetryViolation(std::size_t a, std::size_t b, std::string detail);
  std::size_t input_a, input_b;
};

inline constexpr std::size_t kPathBudget = 10'000'000;

/// Number of input→output paths (counted by dynamic programming).
double count_paths(const PathDag& dag);

/// Σ_x Σ_{paths x→o} Π_{nodes after x} 1/d_p, by explicit enumeration.
double total_path_sum(const PathDag& dag, std::size_t budget = kPathBudget);
/// Same sum restricted to paths from one input. Checks (S) first.
double per_input_path_sum(const PathDag& dag, std::size_t input, std::size_t budget = kPathBudget);
/// Sorted list of in-degree sequences of all paths from `input`.
std::vector<std::vector<std::size_t>> path_degree_multiset(const PathDag& dag, std::size_t input,
                                                           std::size_t budget = kPathBudget);
/// Throws SymmetryViolation unless all inputs share one multiset.
void check_symmetry(const PathDag& dag, std::size_t budget = kPathBudget);

/// Weight law of an edge into node `to`: either fixed or zero-mean random.
struct EdgeLaw {
  bool fixed = false;
  double value = 0.0;     // when fixed
  double variance = 0.0;  // when random
};
/// Law for the edge parents[to][slot] → to.
using EdgeLawFn = std::function<EdgeLaw(const PathDag&, std::size_t to, std::size_t slot)>;
/// He law: N(0, 2/d_to).
EdgeLaw he_edge(const PathDag& dag, std::size_t to, std::size_t slot);

struct Moment {
  double mean = 0.0;
  double se = 0.0;
  double expected = 0.0;
  double z() const { return se > 0.0 ? std::abs(mean - expected) / se : (mean == expected ? 0.0 : 1e300); }
};

struct DecorrelationReport {
  std::size_t trials = 0;
  std::size_t paths = 0;
  std::vector<Moment> cross;   // E[ω_p ω_p′], p ≠ p′ from the same input, expected 0
  std::vector<Moment> second;  // E[ω_p²], expected Π E[w²]
  std::vector<Moment> first;   // E[ω_p], expected Π E[w]
  double max_cross_z() const;
  double max_second_z() const;
};

/// Monte-Carlo moments of path products from `input` under `law`.
/// Pairs are capped at `max_pairs` (first pairs in path order).
DecorrelationReport decorrelation_check(const PathDag& dag, std::size_t input, const EdgeLawFn& law,
                                        std::size_t trials, std::uint64_t seed, std::size_t max_pairs = 2000);

// ---------------------------------------------------------------------------
// Statistics of freshly initialized networks

struct DrawSummary {
  double mean = 0.0;
  double se = 0.0;
  double q10 = 0.0;
  double q90 = 0.0;
  std::size_t n = 0;
};
DrawSummary summarize(const std::vector<double>& values);

struct LogitGradStats {
  std::size_t d = 0;
  std::size_t draws = 0;
  /// Per (seed, input) draw, averaged over logits and coordinates.
  std::vector<double> coord_second_moment;
  /// Per draw, ‖∂x f_k‖₂² averaged over logits.
  std::vector<double> sq_norm;
  DrawSummary coord() const { return summarize(coord_second_moment); }
  DrawSummary norm() const { return summarize(sq_norm); }
};

/// He-initialized nets from `seeds` fresh seeds, `inputs_per_seed`
/// standard-normal inputs each.
LogitGradStats mc_logit_grad_stats(const nn::NetworkSpec& spec, std::size_t seeds, std::size_t inputs_per_seed,
                                   std::uint64_t master_seed);

/// Π 1/a over the spec's average-pool layers.
double avgpool_factor(const nn::NetworkSpec& spec);

struct PoolScaling {
  LogitGradStats stats;
  double expected = 0.0;
  double ratio() const { return stats.norm().mean / expected; }
};
PoolScaling mc_avgpool_scaling(const nn::NetworkSpec& spec, std::size_t seeds, std::size_t inputs_per_seed,
                               std::uint64_t master_seed);

enum class Statistic { LossGradL1, LossGradL2, LogitGradSqNorm, CoordMomentTimesD, ScaledProxy };
std::string statistic_name(Statistic s, double p = 0.0);

/// Per-draw samples of a statistic on He-initialized nets with random labels.
/// ScaledProxy is ε_p‖∂xL‖_q with ε∞ = 1 and q dual to `p`.
std::vector<double> mc_statistic(const nn::NetworkSpec& spec, Statistic stat, std::size_t seeds,
                                 std::size_t inputs_per_seed, std::uint64_t master_seed, double p = 2.0);

/// Measured mean (∂xL)² per coordinate vs. ((1−q_c)² + Σ_{k≠c} q_k²)/d on the
/// same draws.
struct VarianceCheck {
  double measured = 0.0;
  double predicted = 0.0;
  double relative_error() const { return std::abs(measured - predicted) / predicted; }
};
VarianceCheck loss_grad_variance_check(const nn::NetworkSpec& spec, std::size_t seeds, std::size_t inputs_per_seed,
                                       std::uint64_t master_seed);

/// Fraction of active units per ReLU layer, over a batch.
std::vector<double> relu_activity(const nn::Network& net, const Tensor& batch);

struct ScalingRow {
  std::size_t d = 0;
  DrawSummary summary;
};

struct ScalingReport {
  std::string statistic;
  std::vector<ScalingRow> rows;
  double slope = 0.0;
  double ci = 0.0;  // bootstrap 95% half-width

  void write_csv(std::ostream& os) const;
  nlohmann::json summary_json() const;
};

/// Least-squares slope of (log x, log y).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Fits log mean(statistic) against log d over `dims`.
ScalingReport scaling_slope(const std::function<nn::NetworkSpec(std::size_t)>& family, const std::vector<std::size_t>& dims,
                            Statistic stat, std::size_t seeds, std::size_t inputs_per_seed, std::uint64_t master_seed,
                            double p = 2.0, std::size_t bootstrap = 1000);

}  // namespace advlab::theory
