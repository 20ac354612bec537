#include "advlab/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace advlab;
using namespace advlab::trainer;

namespace {

// Two well separated blobs in the plane.
data::Dataset separable_2d(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.3);
  data::Dataset ds;
  ds.classes = 2;
  std::vector<double> xs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % 2;
    const double s = c ? 1.0 : -1.0;
    xs.push_back(2.0 * s + nd(rng));
    xs.push_back(s + nd(rng));
    ds.labels.push_back(c);
  }
  ds.samples = Tensor({n, 2}, xs);
  return ds;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.window = std::min<std::size_t>(epochs == 0 ? 1 : epochs, 5);
  c.lr = 0.05;
  c.batch_size = 32;
  c.eval_points = 100;
  c.pgd = attacks::AttackSpec::pgd_preset(attacks::Method::PgdLinf, 0.1);
  c.fgsm = attacks::AttackSpec::make(attacks::Method::Fgsm, 0.1);
  return c;
}

ExperimentRecord rec(std::size_t epoch, const std::string& split, double xent, double vuln, double acc = 0.5) {
  ExperimentRecord r;
  r.run_id = "r";
  r.epoch = epoch;
  r.split = split;
  r.xent = xent;
  r.vuln_pgd = vuln;
  r.accuracy = acc;
  return r;
}

}  // namespace

TEST(Train, ZeroEpochsGivesInitRecordsOnly) {
  auto ds = separable_2d(100, 1);
  auto net = nn::he_init(nn::standard_arch("mlp", {2}, {.classes = 2, .hidden = {8}}), 1);
  auto res = train(net, ds, ds, quick_config(0), "zero");
  ASSERT_EQ(res.records.size(), 2u);
  EXPECT_EQ(res.records[0].split, "train");
  EXPECT_EQ(res.records[1].split, "test");
  EXPECT_EQ(res.records[0].epoch, 0u);
  EXPECT_EQ(res.net.params[0].vec(), net.params[0].vec());
  EXPECT_EQ(res.completed_epochs, 0u);
}

TEST(Train, SeparableToyReachesFullAccuracy) {
  auto ds = separable_2d(200, 2);
  auto net = nn::he_init(nn::standard_arch("mlp", {2}, {.classes = 2, .hidden = {8}}), 2);
  auto cfg = quick_config(50);
  cfg.evaluate_attacks = false;
  auto res = train(net, ds, ds, cfg, "sep");
  EXPECT_EQ(res.records.back().accuracy, 1.0);
  EXPECT_FALSE(res.diverged);
  for (const auto& r : res.records) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
    EXPECT_LE(r.dmg01, r.vuln_pgd + 1e-15);
  }
}

TEST(Train, SameSeedSameRecords) {
  auto ds = data::synth_gaussian(6, 3, 150, 4);
  auto spec = nn::standard_arch("mlp", {6}, {.classes = 3, .hidden = {8}});
  auto cfg = quick_config(3);
  cfg.objective.kind = objectives::Regularizer::GradPenalty;
  cfg.objective.eps = 0.05;
  auto a = train(nn::he_init(spec, 3), ds, ds, cfg, "det");
  auto b = train(nn::he_init(spec, 3), ds, ds, cfg, "det");
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.net.params[0].vec(), b.net.params[0].vec());
  cfg.seed = 9;
  auto c = train(nn::he_init(spec, 3), ds, ds, cfg, "det");
  EXPECT_NE(c.net.params[0].vec(), a.net.params[0].vec());
}

TEST(Train, DivergenceKeepsLastGoodParameters) {
  auto ds = data::synth_gaussian(4, 2, 64, 5);
  auto net = nn::he_init(nn::standard_arch("mlp", {4}, {.classes = 2, .hidden = {8}}), 5);
  auto cfg = quick_config(5);
  cfg.lr = 1e200;
  cfg.evaluate_attacks = false;
  auto res = train(net, ds, ds, cfg, "nan");
  EXPECT_TRUE(res.diverged);
  EXPECT_LT(res.completed_epochs, 5u);
  for (const auto& p : res.net.params) EXPECT_TRUE(p.all_finite());
}

TEST(Train, AdamAndBatchNormRun) {
  auto ds = data::synth_gaussian(data::GaussianMixture{{1, 8, 8}, 3, 4.0, 1, 2}, 96, 6);
  auto net = nn::he_init(nn::standard_arch("patch", {1, 8, 8}, {.channels = 4, .classes = 3}), 6);
  auto cfg = quick_config(2);
  cfg.optimizer = "adam";
  cfg.lr = 0.01;
  cfg.evaluate_attacks = false;
  auto res = train(net, ds, ds, cfg, "adam");
  EXPECT_EQ(res.completed_epochs, 2u);
  EXPECT_LT(res.records.back().xent, res.records.front().xent);
}

TEST(Config, ValidationAndJsonRoundTrip) {
  TrainConfig c;
  c.epochs = 5;
  c.window = 10;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.window = 5;
  c.optimizer = "rmsprop";
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.optimizer = "adam";
  c.objective.kind = objectives::Regularizer::Augment;
  c.objective.eps = 0.01;
  c.objective.method = "pgd-l2";
  c.lr = 0.003;
  auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.objective.method, "pgd-l2");
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"lr", "fast"}}), std::exception);
}

TEST(GradientStats, ZeroOutputNetIsZero) {
  auto ds = data::synth_gaussian(5, 3, 40, 7);
  nn::NetworkSpec s;
  s.name = "z";
  s.input = {5};
  s.classes = 3;
  s.layers = {nn::Dense{5, 3, true}};
  auto st = gradient_norm_stats(nn::zeros(s), ds, 1.0);
  EXPECT_EQ(st.mean, 0.0);
  EXPECT_EQ(st.q90, 0.0);
  EXPECT_EQ(st.n, 40u);
}

TEST(GradientStats, L1AndL2MeansLinearlyRelated) {
  std::vector<double> g1, g2;
  for (std::size_t d : {16u, 32u, 64u, 128u}) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      auto ds = data::synth_gaussian(d, 10, 60, 10 + s, 0.0);
      auto net = nn::he_init(nn::standard_arch("mlp", {d}, {.classes = 10, .hidden = {d, d}}), s);
      g1.push_back(gradient_norm_stats(net, ds, 1.0).mean);
      g2.push_back(gradient_norm_stats(net, ds, 2.0).mean * std::sqrt(static_cast<double>(d)));
    }
  }
  EXPECT_GT(r_squared(g1, g2), 0.95);
}

TEST(Discrepancy, IdenticalSetsGiveOne) {
  auto ds = data::synth_gaussian(6, 2, 80, 8);
  auto cfg = quick_config(2);
  cfg.evaluate_attacks = false;
  auto res = train(nn::he_init(nn::standard_arch("mlp", {6}, {.classes = 2, .hidden = {8}}), 8), ds, ds, cfg, "id");
  auto rows = discrepancy_report(res.records);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_EQ(r.ratio, 1.0);
}

TEST(Discrepancy, UntrainedNetNearOne) {
  data::GaussianMixture mix{{10}, 3, 2.0, 1, 1};
  auto a = data::synth_gaussian(mix, 400, 1, "train");
  auto b = data::synth_gaussian(mix, 400, 2, "test");
  auto cfg = quick_config(0);
  cfg.evaluate_attacks = false;
  cfg.eval_points = 400;
  auto res = train(nn::he_init(nn::standard_arch("mlp", {10}, {.classes = 3, .hidden = {16}}), 1), a, b, cfg, "u");
  auto rows = discrepancy_report(res.records);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].ratio, 1.0, 0.15);
}

TEST(EarlyStopping, MonotoneRunEqualsFinal) {
  std::vector<ExperimentRecord> rs;
  for (std::size_t e = 0; e <= 10; ++e) rs.push_back(rec(e, "test", 2.0 - 0.1 * e, 0.1 * e));
  auto v = early_stopping_view(rs, 3);
  EXPECT_EQ(v.early, v.final);
  EXPECT_EQ(v.final.front().epoch, 8u);
}

TEST(EarlyStopping, OverfitRunIsLessVulnerable) {
  std::vector<ExperimentRecord> rs;
  for (std::size_t e = 1; e <= 10; ++e) {
    const double x = std::abs(static_cast<double>(e) - 4.0);  // best at epoch 4
    rs.push_back(rec(e, "test", 1.0 + 0.1 * x, 0.05 * e));
    rs.push_back(rec(e, "train", 1.0 / e, 0.0));
  }
  auto v = early_stopping_view(rs, 3);
  EXPECT_EQ(v.early.size(), 3u);
  EXPECT_EQ(v.early[1].epoch, 4u);
  EXPECT_LE(v.early_vulnerability(), v.final_vulnerability());
  EXPECT_THROW(early_stopping_view({}, 3), std::invalid_argument);
}

TEST(Tradeoff, SinglePointAndEmpty) {
  std::vector<ExperimentRecord> rs;
  for (std::size_t e = 0; e <= 5; ++e) rs.push_back(rec(e, "test", 1.0, 0.1 * e, 0.5 + 0.05 * e));
  auto pts = tradeoff_curve({{0.0, rs}}, 3);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_DOUBLE_EQ(pts[0].vulnerability, 0.4);
  EXPECT_DOUBLE_EQ(pts[0].accuracy, 0.7);
  EXPECT_THROW(tradeoff_curve({}, 3), std::invalid_argument);
}

TEST(Tradeoff, CsvReplayReproducesCurve) {
  std::vector<std::pair<double, std::vector<ExperimentRecord>>> sweep;
  for (double eps : {0.0, 0.1, 0.2}) {
    std::vector<ExperimentRecord> rs;
    for (std::size_t e = 0; e <= 4; ++e) {
      auto r = rec(e, "test", 1.0 / (e + 1), 0.3 - eps + 0.01 * e, 0.9 - eps / 3);
      r.g1 = 1.0 / 3.0 + e;
      r.dmgxent_over_eps = std::sqrt(2.0) * e;
      rs.push_back(r);
    }
    sweep.emplace_back(eps, rs);
  }
  auto direct = tradeoff_curve(sweep, 2);
  auto replayed = sweep;
  for (auto& [eps, rs] : replayed) {
    std::stringstream ss;
    write_records_csv(ss, rs);
    rs = read_records_csv(ss);
  }
  EXPECT_EQ(replayed[1].second, sweep[1].second);
  auto again = tradeoff_curve(replayed, 2);
  ASSERT_EQ(again.size(), direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    EXPECT_EQ(again[i].accuracy, direct[i].accuracy);
    EXPECT_EQ(again[i].vulnerability, direct[i].vulnerability);
  }
  // ε = 0 endpoint is the most vulnerable
  EXPECT_GT(direct[0].vulnerability, direct[2].vulnerability);
}

TEST(RecordsCsv, SchemaErrors) {
  std::istringstream bad("run_id,epoch,split\nx,1,test\n");
  EXPECT_THROW(read_records_csv(bad), std::runtime_error);
  std::istringstream empty("");
  EXPECT_THROW(read_records_csv(empty), std::runtime_error);
  std::istringstream short_row(records_header() + "\nr,1,test,0.5\n");
  EXPECT_THROW(read_records_csv(short_row), std::runtime_error);
  std::istringstream nan_row(records_header() + "\nr,x,test,1,1,1,1,1,1,1,1,1\n");
  EXPECT_THROW(read_records_csv(nan_row), std::runtime_error);
}

TEST(RSquared, Basics) {
  EXPECT_DOUBLE_EQ(r_squared({1, 2, 3, 4}, {3, 5, 7, 9}), 1.0);
  EXPECT_LT(r_squared({1, 2, 3, 4}, {1, -1, 1, -1}), 0.3);
  EXPECT_THROW(r_squared({1, 2}, {1, 2}), std::invalid_argument);
}

TEST(FinalWindow, MeanSkipsInit) {
  std::vector<ExperimentRecord> rs;
  for (std::size_t e = 0; e <= 4; ++e) {
    auto r = rec(e, "train", 0, 0);
    r.g1 = static_cast<double>(e);
    rs.push_back(r);
  }
  EXPECT_DOUBLE_EQ(final_window_mean(rs, "train", 2, &ExperimentRecord::g1), 3.5);
  EXPECT_DOUBLE_EQ(final_window_mean(rs, "train", 100, &ExperimentRecord::g1), 2.5);
  EXPECT_THROW(final_window_mean(rs, "test", 2, &ExperimentRecord::g1), std::invalid_argument);
}

TEST(Manifest, Fields) {
  auto ds = data::synth_gaussian(3, 2, 10, 1);
  nlohmann::json cfg{{"lr", 0.1}};
  auto m = run_manifest("run", cfg, ds, ds);
  EXPECT_EQ(m["schema"], kRecordSchema);
  EXPECT_EQ(m["config_hash"].get<std::string>().size(), 64u);
  EXPECT_EQ(m["dataset"]["train_fingerprint"], data::fingerprint(ds));
  EXPECT_FALSE(m.contains("completed_epochs"));
  EXPECT_EQ(run_manifest("run", cfg, ds, ds)["config_hash"], m["config_hash"]);
}
