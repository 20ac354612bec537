#pragma once

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/nn.hpp"
#include "advlab/objectives.hpp"
#include "advlab/theory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace advlab::trainer {

inline constexpr const char* kRecordSchema = "advlab-records/1";
inline constexpr const char* kCodeVersion = "advlab 1.0.0";

struct TrainConfig {
  std::string optimizer = "sgd";  // sgd (momentum) | adam
  double lr = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;
  objectives::ObjectiveSpec objective;
  /// Evaluation attacks; vuln_pgd / vuln_fgsm and the damages come from these.
  attacks::AttackSpec pgd = attacks::AttackSpec::pgd_preset(attacks::Method::PgdLinf, 0.005);
  attacks::AttackSpec fgsm = attacks::AttackSpec::make(attacks::Method::Fgsm, 0.005);
  bool evaluate_attacks = true;
  std::size_t window = 20;
  std::size_t eval_points = 1000;
  std::uint64_t eval_seed = 1234;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ExperimentRecord {
  std::string run_id;
  std::size_t epoch = 0;
  std::string split;
  double accuracy = 0.0;
  double xent = 0.0;
  double g1 = 0.0;
  double g2 = 0.0;
  double vuln_pgd = 0.0;
  double vuln_fgsm = 0.0;
  double dmg01 = 0.0;
  double dmgxent = 0.0;
  double dmgxent_over_eps = 0.0;

  bool operator==(const ExperimentRecord&) const = default;
};

/// Metrics of `net` on `ds` (inference-mode BatchNorm). Damages use the pgd attack.
ExperimentRecord evaluate_split(const nn::Network& net, const data::Dataset& ds, const TrainConfig& config,
                                const std::string& run_id, std::size_t epoch);

struct TrainResult {
  nn::Network net;
  std::vector<ExperimentRecord> records;
  bool diverged = false;
  std::size_t completed_epochs = 0;
  std::vector<std::size_t> train_eval_indices;
  std::vector<std::size_t> test_eval_indices;
};

struct TrainHooks {
  /// Called after every epoch with (epoch, total epochs, elapsed seconds).
  std::function<void(std::size_t, std::size_t, double)> heartbeat;
  /// When set, the network is checkpointed here after every good epoch.
  std::string checkpoint_path;
};

/// Optimizes `net` on `train_ds`; emits train and test records for epoch 0
/// (initialization) and after every epoch. A non-finite loss aborts the run
/// and returns the last good parameters.
TrainResult train(nn::Network net, const data::Dataset& train_ds, const data::Dataset& test_ds,
                  const TrainConfig& config, const std::string& run_id, const TrainHooks& hooks = {});

/// Mean, 10th and 90th quantile of ‖∂xL‖_q over the dataset.
theory::DrawSummary gradient_norm_stats(const nn::Network& net, const data::Dataset& ds, double q);

struct DiscrepancyRow {
  std::size_t epoch = 0;
  double train_g1 = 0.0;
  double test_g1 = 0.0;
  double ratio = 0.0;  // test / train
};
std::vector<DiscrepancyRow> discrepancy_report(const std::vector<ExperimentRecord>& records);

struct EarlyStoppingView {
  std::vector<ExperimentRecord> early;  // test records at the `window` epochs of lowest test xent
  std::vector<ExperimentRecord> final;  // test records of the last `window` epochs
  double early_vulnerability() const;
  double final_vulnerability() const;
};
EarlyStoppingView early_stopping_view(const std::vector<ExperimentRecord>& records, std::size_t window);

struct TradeoffPoint {
  double eps = 0.0;
  double accuracy = 0.0;
  double vulnerability = 0.0;
};
/// Median test accuracy and pgd vulnerability over the final window of each run.
std::vector<TradeoffPoint> tradeoff_curve(const std::vector<std::pair<double, std::vector<ExperimentRecord>>>& sweep,
                                          std::size_t window);

/// Mean of a record field over the final `window` epochs of one split.
double final_window_mean(const std::vector<ExperimentRecord>& records, const std::string& split, std::size_t window,
                         double ExperimentRecord::*field);

/// R² of the least-squares line y = a + b·x.
double r_squared(const std::vector<double>& x, const std::vector<double>& y);

void write_records_csv(std::ostream& os, const std::vector<ExperimentRecord>& records, bool header = true);
/// Parses a record CSV; throws std::runtime_error on a header that is not
/// the record schema.
std::vector<ExperimentRecord> read_records_csv(std::istream& is);
std::string records_header();

/// Run manifest: config, its hash, seeds, dataset fingerprints, code version.
nlohmann::json run_manifest(const std::string& run_id, const nlohmann::json& config, const data::Dataset& train_ds,
                            const data::Dataset& test_ds, const TrainResult* result = nullptr);

}  // namespace advlab::trainer
