#include "advlab/theory.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace advlab;
using namespace advlab::theory;

namespace {

nn::NetworkSpec linear_spec(std::size_t d, std::size_t K) {
  nn::NetworkSpec s;
  s.name = "linear";
  s.input = {d};
  s.classes = K;
  s.layers = {nn::Dense{d, K, true}};
  return s;
}

}  // namespace

TEST(PathSum, Chain) {
  auto dag = dense_dag({1, 1, 1, 1});
  EXPECT_EQ(count_paths(dag), 1.0);
  EXPECT_EQ(total_path_sum(dag), 1.0);
  EXPECT_EQ(per_input_path_sum(dag, dag.inputs[0]), 1.0);
}

TEST(PathSum, TwoThreeOne) {
  auto dag = dense_dag({2, 3, 1});
  EXPECT_EQ(count_paths(dag), 6.0);
  for (auto x : dag.inputs) EXPECT_NEAR(per_input_path_sum(dag, x), 0.5, 1e-15);
  EXPECT_NEAR(total_path_sum(dag), 1.0, 1e-15);
}

TEST(PathSum, RandomDagsSumToOne) {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<std::size_t> nodes(3, 12);
    const std::size_t n = nodes(rng);
    std::uniform_int_distribution<std::size_t> ins(1, n - 1);
    auto dag = random_dag(n, ins(rng), rng);
    EXPECT_NEAR(total_path_sum(dag), 1.0, 1e-9) << "trial " << t;
  }
}

TEST(PathSum, SymmetricConvGivesOneOverD) {
  // kernel = stride: each input sees exactly one path
  auto dag = conv1d_dag(8, 2, 2, 2);
  EXPECT_NO_THROW(check_symmetry(dag));
  for (auto x : dag.inputs) EXPECT_DOUBLE_EQ(per_input_path_sum(dag, x), 1.0 / 8.0);
  auto dense = dense_dag({5, 4, 4, 1});
  for (auto x : dense.inputs) EXPECT_NEAR(per_input_path_sum(dense, x), 0.2, 1e-15);
}

TEST(PathSum, AsymmetryDetected) {
  auto dag = conv1d_dag(5, 3, 1, 1);  // border inputs see fewer windows
  EXPECT_THROW(check_symmetry(dag), SymmetryViolation);
  EXPECT_THROW(per_input_path_sum(dag, dag.inputs[0]), SymmetryViolation);
  EXPECT_NEAR(total_path_sum(dag), 1.0, 1e-12);
  try {
    check_symmetry(dag);
  } catch (const SymmetryViolation& e) {
    EXPECT_NE(e.input_a, e.input_b);
  }
}

TEST(PathSum, BudgetExceeded) {
  auto dag = dense_dag({10, 10, 10, 10, 1});
  EXPECT_EQ(count_paths(dag), 10000.0);
  EXPECT_THROW(total_path_sum(dag, 100), PathBudgetExceeded);
  EXPECT_NO_THROW(total_path_sum(dag, 10000));
}

TEST(PathSum, NonInputRejected) {
  auto dag = dense_dag({2, 3, 1});
  EXPECT_THROW(per_input_path_sum(dag, dag.output), std::invalid_argument);
  EXPECT_THROW(dense_dag({3, 2}), std::invalid_argument);
}

TEST(PathDag, ValidateRejectsBadGraphs) {
  PathDag dag;
  auto a = dag.add_node();
  auto b = dag.add_node();
  dag.inputs = {a};
  dag.output = b;
  EXPECT_THROW(dag.validate(), std::invalid_argument);  // b has no parent
  dag.add_edge(a, b);
  EXPECT_NO_THROW(dag.validate());
  EXPECT_THROW(dag.add_edge(b, a), std::invalid_argument);
}

TEST(Decorrelation, HeLawOnTwoThreeOne) {
  auto dag = dense_dag({2, 3, 1});
  auto rep = decorrelation_check(dag, dag.inputs[0], he_edge, 100000, 7);
  EXPECT_EQ(rep.paths, 3u);
  EXPECT_EQ(rep.cross.size(), 3u);
  EXPECT_LT(rep.max_cross_z(), 4.0);
  EXPECT_LT(rep.max_second_z(), 4.0);
  for (const auto& m : rep.second) EXPECT_NEAR(m.expected, (2.0 / 2.0) * (2.0 / 3.0), 1e-15);
}

TEST(Decorrelation, FixedAveragePoolEdge) {
  // edges into the output are a fixed 1/3, as in average pooling
  auto dag = dense_dag({2, 3, 1});
  EdgeLawFn law = [](const PathDag& g, std::size_t to, std::size_t slot) {
    if (to == g.output) return EdgeLaw{true, 1.0 / 3.0, 0.0};
    return he_edge(g, to, slot);
  };
  auto rep = decorrelation_check(dag, dag.inputs[1], law, 100000, 8);
  EXPECT_LT(rep.max_cross_z(), 4.0);
  EXPECT_LT(rep.max_second_z(), 4.0);
  for (const auto& m : rep.second) EXPECT_NEAR(m.expected, 1.0 / 9.0, 1e-15);
  for (const auto& m : rep.first) EXPECT_EQ(m.expected, 0.0);
}

TEST(Summaries, Basic) {
  auto s = summarize({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  EXPECT_DOUBLE_EQ(s.mean, 5.5);
  EXPECT_EQ(s.n, 10u);
  EXPECT_LE(s.q10, s.q90);
  EXPECT_NEAR(s.se, std::sqrt(55.0 / 6.0) / std::sqrt(10.0), 1e-12);
  EXPECT_EQ(trial_seed(1, 2), trial_seed(1, 2));
  EXPECT_NE(trial_seed(1, 2), trial_seed(1, 3));
}

TEST(InitStats, SingleLinearLayerHasGainOverD) {
  // He gain on the logit layer is 1, so E(∂x f_k)² = 1/d and E‖∂x f_k‖² = 1
  for (std::size_t d : {16u, 64u}) {
    auto st = mc_logit_grad_stats(linear_spec(d, 10), 200, 1, 3);
    EXPECT_EQ(st.d, d);
    EXPECT_EQ(st.draws, 200u);
    EXPECT_NEAR(st.coord().mean * static_cast<double>(d), 1.0, 0.1);
    EXPECT_NEAR(st.norm().mean, 1.0, 0.1);
  }
}

TEST(InitStats, MlpCoordMomentInRange) {
  auto spec = nn::standard_arch("mlp", {64}, {.classes = 10, .hidden = {64, 64}});
  auto st = mc_logit_grad_stats(spec, 40, 5, 11);
  const double v = st.coord().mean * 64.0;
  EXPECT_GT(v, 0.7);
  EXPECT_LT(v, 1.3);
}

TEST(InitStats, AvgPoolDampening) {
  auto spec = nn::standard_arch("avgpool-reduce", {3, 4, 4}, {.channels = 16});
  EXPECT_DOUBLE_EQ(avgpool_factor(spec), 1.0 / 16.0);
  auto ps = mc_avgpool_scaling(spec, 40, 5, 5);
  EXPECT_DOUBLE_EQ(ps.expected, 1.0 / 16.0);
  EXPECT_GT(ps.ratio(), 0.7);
  EXPECT_LT(ps.ratio(), 1.3);
  auto strided = mc_logit_grad_stats(nn::standard_arch("strided-reduce", {3, 4, 4}, {.channels = 16}), 40, 5, 5);
  EXPECT_GT(strided.norm().mean, 5.0 * ps.stats.norm().mean);
}

TEST(InitStats, LossGradVarianceMatchesPrediction) {
  auto spec = nn::standard_arch("mlp", {32}, {.classes = 10, .hidden = {32, 32}});
  auto vc = loss_grad_variance_check(spec, 50, 4, 9);
  EXPECT_LT(vc.relative_error(), 0.3);
}

TEST(InitStats, ReluActivityNearHalf) {
  auto net = nn::he_init(nn::standard_arch("mlp", {100}, {.classes = 10, .hidden = {200, 200}}), 1);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> xs(100 * 100);
  for (auto& v : xs) v = nd(rng);
  auto act = relu_activity(net, Tensor({100, 100}, xs));
  ASSERT_EQ(act.size(), 2u);
  for (double a : act) {
    EXPECT_GT(a, 0.45);
    EXPECT_LT(a, 0.55);
  }
}

TEST(Scaling, LogLogSlopeExact) {
  std::vector<double> x{1, 10, 100, 1000}, y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 0.5));
  EXPECT_NEAR(loglog_slope(x, y), 0.5, 1e-12);
}

TEST(Scaling, L1GradientGrowsLikeSqrtD) {
  auto family = [](std::size_t d) { return nn::standard_arch("mlp", {d}, {.classes = 10, .hidden = {d, d}}); };
  auto rep = scaling_slope(family, {16, 64, 256}, Statistic::LossGradL1, 30, 4, 21, 2.0, 200);
  EXPECT_GT(rep.slope, 0.4);
  EXPECT_LT(rep.slope, 0.6);
  EXPECT_GT(rep.ci, 0.0);
  ASSERT_EQ(rep.rows.size(), 3u);
  EXPECT_EQ(rep.rows[2].d, 256u);

  std::ostringstream os;
  rep.write_csv(os);
  EXPECT_EQ(os.str().rfind("d,statistic,mean,q10,q90\n16,", 0), 0u);
  auto j = rep.summary_json();
  EXPECT_EQ(j["dims"].size(), 3u);
  EXPECT_DOUBLE_EQ(j["slope"].get<double>(), rep.slope);
  EXPECT_THROW(scaling_slope(family, {16}, Statistic::LossGradL1, 2, 2, 1), std::invalid_argument);
}

TEST(Scaling, L2GradientIsFlat) {
  auto family = [](std::size_t d) { return nn::standard_arch("mlp", {d}, {.classes = 10, .hidden = {d, d}}); };
  auto rep = scaling_slope(family, {16, 64, 256}, Statistic::LossGradL2, 30, 4, 22, 2.0, 0);
  EXPECT_LT(std::abs(rep.slope), 0.1);
}
