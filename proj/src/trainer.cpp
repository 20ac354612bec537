#include "advlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace advlab::trainer {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (optimizer != "sgd" && optimizer != "adam") throw std::invalid_argument("train: optimizer must be sgd or adam");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (window == 0) throw std::invalid_argument("train: window must be >= 1");
  if (epochs > 0 && window > epochs)
    throw std::invalid_argument("train: window " + std::to_string(window) + " exceeds epochs " + std::to_string(epochs));
  objective.validate();
  pgd.validate();
  fgsm.validate();
}

json to_json(const TrainConfig& c) {
  return json{{"optimizer", c.optimizer},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"init_seed", c.init_seed},
              {"objective", objectives::to_json(c.objective)},
              {"pgd", attacks::to_json(c.pgd)},
              {"fgsm", attacks::to_json(c.fgsm)},
              {"evaluate_attacks", c.evaluate_attacks},
              {"window", c.window},
              {"eval_points", c.eval_points},
              {"eval_seed", c.eval_seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.optimizer = j.value("optimizer", c.optimizer);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.init_seed = j.value("init_seed", c.init_seed);
  if (j.contains("objective")) c.objective = objectives::objective_from_json(j["objective"]);
  if (j.contains("pgd")) c.pgd = attacks::attack_from_json(j["pgd"]);
  if (j.contains("fgsm")) c.fgsm = attacks::attack_from_json(j["fgsm"]);
  c.evaluate_attacks = j.value("evaluate_attacks", c.evaluate_attacks);
  c.window = j.value("window", c.window);
  c.eval_points = j.value("eval_points", c.eval_points);
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  c.validate();
  return c;
}

namespace {

std::vector<std::size_t> iota_n(std::size_t b, std::size_t e) {
  std::vector<std::size_t> v(e - b);
  std::iota(v.begin(), v.end(), b);
  return v;
}

}  // namespace

ExperimentRecord evaluate_split(const nn::Network& net, const data::Dataset& ds, const TrainConfig& config,
                                const std::string& run_id, std::size_t epoch) {
  ExperimentRecord r;
  r.run_id = run_id;
  r.epoch = epoch;
  r.split = ds.split;
  if (ds.size() == 0) return r;
  const std::size_t k = net.spec.classes;
  const std::size_t chunk = 256;
  double correct = 0.0, xent = 0.0, g1 = 0.0, g2 = 0.0;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const auto idx = iota_n(start, std::min(ds.size(), start + chunk));
    const Tensor b = ds.batch(idx);
    const auto labels = ds.batch_labels(idx);
    std::vector<double> losses;
    const Tensor g = nn::input_gradients(net, b, labels, &losses);
    const Tensor z = nn::logits_batch(net, b);
    const std::size_t per = g.size() / idx.size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      correct += nn::argmax(z.data().subspan(i * k, k)) == labels[i] ? 1.0 : 0.0;
      xent += losses[i];
      g1 += norm_l1(g.data().subspan(i * per, per));
      g2 += norm_l2(g.data().subspan(i * per, per));
    }
  }
  const double n = static_cast<double>(ds.size());
  r.accuracy = correct / n;
  r.xent = xent / n;
  r.g1 = g1 / n;
  r.g2 = g2 / n;
  if (config.evaluate_attacks) {
    const auto pgd_out = attacks::attack_dataset(net, ds, config.pgd);
    r.vuln_pgd = attacks::vulnerability(pgd_out);
    r.dmg01 = attacks::adversarial_damage(pgd_out, ds.labels, attacks::DamageLoss::ZeroOne);
    r.dmgxent = attacks::adversarial_damage(pgd_out, ds.labels, attacks::DamageLoss::Xent);
    r.dmgxent_over_eps = config.pgd.eps_inf > 0.0 ? r.dmgxent / config.pgd.eps_inf : 0.0;
    r.vuln_fgsm = attacks::vulnerability(net, ds, config.fgsm);
  }
  return r;
}

namespace {

struct Optimizer {
  explicit Optimizer(const TrainConfig& c) : cfg(c) {}

  const TrainConfig& cfg;
  std::vector<Tensor> m, v;
  std::size_t t = 0;

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.emplace_back(p.shape());
        v.emplace_back(p.shape());
      }
    }
    ++t;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].data();
      const auto g = grads[i].data();
      auto mi = m[i].data();
      auto vi = v[i].data();
      if (cfg.optimizer == "sgd") {
        for (std::size_t j = 0; j < p.size(); ++j) {
          mi[j] = cfg.momentum * mi[j] + g[j];
          p[j] -= cfg.lr * mi[j];
        }
      } else {
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t j = 0; j < p.size(); ++j) {
          mi[j] = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * g[j];
          vi[j] = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * g[j] * g[j];
          p[j] -= cfg.lr * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + cfg.adam_eps);
        }
      }
    }
  }
};

bool finite_all(const std::vector<Tensor>& ts) {
  return std::all_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.all_finite(); });
}

}  // namespace

TrainResult train(nn::Network net, const data::Dataset& train_ds, const data::Dataset& test_ds,
                  const TrainConfig& config, const std::string& run_id, const TrainHooks& hooks) {
  config.validate();
  train_ds.validate();
  if (train_ds.size() == 0) throw std::invalid_argument("train: empty training set");
  TrainResult res;
  res.train_eval_indices = data::sample_indices(train_ds.size(), config.eval_points, config.eval_seed);
  res.test_eval_indices = data::sample_indices(test_ds.size(), config.eval_points, config.eval_seed + 1);
  data::Dataset train_eval = train_ds.subset(res.train_eval_indices);
  data::Dataset test_eval = test_ds.subset(res.test_eval_indices);
  train_eval.split = "train";
  test_eval.split = "test";

  auto record = [&](std::size_t epoch) {
    res.records.push_back(evaluate_split(net, train_eval, config, run_id, epoch));
    res.records.push_back(evaluate_split(net, test_eval, config, run_id, epoch));
  };
  record(0);

  const bool has_bn = std::any_of(net.spec.layers.begin(), net.spec.layers.end(),
                                  [](const nn::LayerSpec& l) { return std::holds_alternative<nn::BatchNorm>(l); });
  Optimizer opt(config);
  std::mt19937_64 rng(config.seed);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order = iota_n(0, train_ds.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const nn::Network last_good = net;
    std::shuffle(order.begin(), order.end(), rng);
    bool bad = false;
    for (std::size_t start = 0; start < order.size() && !bad; start += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
      const Tensor batch = train_ds.batch(idx);
      const auto labels = train_ds.batch_labels(idx);
      ad::Tape tape;
      const auto params = nn::bind_params(tape, net, true);
      std::vector<Tensor> buffers;
      objectives::BuildOptions bo;
      bo.batchnorm = has_bn ? nn::BatchNormMode::Training : nn::BatchNormMode::Inference;
      bo.updated_buffers = has_bn ? &buffers : nullptr;
      bo.seed = config.seed ^ (epoch * 1000003ULL + start);
      const ad::Var loss = objectives::batch_objective(net, params, batch, labels, config.objective, bo);
      if (!std::isfinite(loss.value().item())) {
        bad = true;
        break;
      }
      const auto grads = ad::grad(loss, params);
      if (!finite_all(grads)) {
        bad = true;
        break;
      }
      opt.step(net.params, grads);
      if (has_bn) net.buffers = std::move(buffers);
      if (!finite_all(net.params)) bad = true;
    }
    if (bad) {
      net = last_good;
      res.diverged = true;
      break;
    }
    res.completed_epochs = epoch;
    record(epoch);
    if (!hooks.checkpoint_path.empty()) nn::save_checkpoint(hooks.checkpoint_path, net, epoch);
    if (hooks.heartbeat)
      hooks.heartbeat(epoch, config.epochs,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  res.net = std::move(net);
  return res;
}

theory::DrawSummary gradient_norm_stats(const nn::Network& net, const data::Dataset& ds, double q) {
  std::vector<double> values;
  values.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += 256) {
    const auto idx = iota_n(start, std::min(ds.size(), start + 256));
    const Tensor g = nn::input_gradients(net, ds.batch(idx), ds.batch_labels(idx));
    const std::size_t per = g.size() / idx.size();
    for (std::size_t i = 0; i < idx.size(); ++i) values.push_back(norm_p(g.data().subspan(i * per, per), q));
  }
  return theory::summarize(values);
}

std::vector<DiscrepancyRow> discrepancy_report(const std::vector<ExperimentRecord>& records) {
  std::map<std::size_t, DiscrepancyRow> rows;
  std::map<std::size_t, int> seen;
  for (const auto& r : records) {
    auto& row = rows[r.epoch];
    row.epoch = r.epoch;
    if (r.split == "train") {
      row.train_g1 = r.g1;
      seen[r.epoch] |= 1;
    } else if (r.split == "test") {
      row.test_g1 = r.g1;
      seen[r.epoch] |= 2;
    }
  }
  std::vector<DiscrepancyRow> out;
  for (auto& [e, row] : rows) {
    if (seen[e] != 3) continue;
    row.ratio = row.train_g1 > 0.0 ? row.test_g1 / row.train_g1 : (row.test_g1 == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
    out.push_back(row);
  }
  return out;
}

namespace {

std::vector<ExperimentRecord> split_records(const std::vector<ExperimentRecord>& records, const std::string& split,
                                            bool skip_init) {
  std::vector<ExperimentRecord> out;
  for (const auto& r : records)
    if (r.split == split && !(skip_init && r.epoch == 0)) out.push_back(r);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.epoch < b.epoch; });
  return out;
}

double mean_vuln(const std::vector<ExperimentRecord>& rs) {
  if (rs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rs) s += r.vuln_pgd;
  return s / static_cast<double>(rs.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double EarlyStoppingView::early_vulnerability() const { return mean_vuln(early); }
double EarlyStoppingView::final_vulnerability() const { return mean_vuln(final); }

EarlyStoppingView early_stopping_view(const std::vector<ExperimentRecord>& records, std::size_t window) {
  auto test = split_records(records, "test", true);
  if (test.empty()) test = split_records(records, "test", false);
  if (test.empty()) throw std::invalid_argument("early_stopping_view: no test records");
  window = std::max<std::size_t>(1, std::min(window, test.size()));
  EarlyStoppingView v;
  v.final.assign(test.end() - static_cast<std::ptrdiff_t>(window), test.end());
  auto by_xent = test;
  std::stable_sort(by_xent.begin(), by_xent.end(), [](const auto& a, const auto& b) { return a.xent < b.xent; });
  v.early.assign(by_xent.begin(), by_xent.begin() + static_cast<std::ptrdiff_t>(window));
  std::sort(v.early.begin(), v.early.end(), [](const auto& a, const auto& b) { return a.epoch < b.epoch; });
  return v;
}

double final_window_mean(const std::vector<ExperimentRecord>& records, const std::string& split, std::size_t window,
                         double ExperimentRecord::*field) {
  auto rs = split_records(records, split, true);
  if (rs.empty()) rs = split_records(records, split, false);
  if (rs.empty()) throw std::invalid_argument("final_window_mean: no records for split " + split);
  window = std::max<std::size_t>(1, std::min(window, rs.size()));
  double s = 0.0;
  for (std::size_t i = rs.size() - window; i < rs.size(); ++i) s += rs[i].*field;
  return s / static_cast<double>(window);
}

std::vector<TradeoffPoint> tradeoff_curve(const std::vector<std::pair<double, std::vector<ExperimentRecord>>>& sweep,
                                          std::size_t window) {
  if (sweep.empty()) throw std::invalid_argument("tradeoff_curve: empty sweep");
  std::vector<TradeoffPoint> out;
  for (const auto& [eps, records] : sweep) {
    auto test = split_records(records, "test", true);
    if (test.empty()) test = split_records(records, "test", false);
    if (test.empty()) throw std::invalid_argument("tradeoff_curve: run without test records");
    const std::size_t w = std::max<std::size_t>(1, std::min(window, test.size()));
    std::vector<double> acc, vul;
    for (std::size_t i = test.size() - w; i < test.size(); ++i) {
      acc.push_back(test[i].accuracy);
      vul.push_back(test[i].vuln_pgd);
    }
    out.push_back(TradeoffPoint{eps, median(acc), median(vul)});
  }
  return out;
}

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) throw std::invalid_argument("r_squared: need >= 3 matched points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy * sxy / (sxx * syy);
}

std::string records_header() {
  return "run_id,epoch,split,accuracy,xent,g1,g2,vuln_pgd,vuln_fgsm,dmg01,dmgxent,dmgxent_over_eps";
}

void write_records_csv(std::ostream& os, const std::vector<ExperimentRecord>& records, bool header) {
  if (header) os << records_header() << '\n';
  const auto prec = os.precision(17);
  for (const auto& r : records) {
    os << r.run_id << ',' << r.epoch << ',' << r.split << ',' << r.accuracy << ',' << r.xent << ',' << r.g1 << ','
       << r.g2 << ',' << r.vuln_pgd << ',' << r.vuln_fgsm << ',' << r.dmg01 << ',' << r.dmgxent << ','
       << r.dmgxent_over_eps << '\n';
  }
  os.precision(prec);
}

std::vector<ExperimentRecord> read_records_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("records csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != records_header()) throw std::runtime_error("records csv: schema mismatch, header '" + line + "'");
  std::vector<ExperimentRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw std::runtime_error("records csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    ExperimentRecord r;
    try {
      r.run_id = f[0];
      r.epoch = std::stoull(f[1]);
      r.split = f[2];
      double* vals[] = {&r.accuracy, &r.xent, &r.g1, &r.g2, &r.vuln_pgd, &r.vuln_fgsm, &r.dmg01, &r.dmgxent, &r.dmgxent_over_eps};
      for (std::size_t i = 0; i < 9; ++i) *vals[i] = std::stod(f[3 + i]);
    } catch (const std::logic_error&) {
      throw std::runtime_error("records csv: bad number on line " + std::to_string(lineno));
    }
    out.push_back(std::move(r));
  }
  return out;
}

json run_manifest(const std::string& run_id, const json& config, const data::Dataset& train_ds,
                  const data::Dataset& test_ds, const TrainResult* result) {
  const std::string dump = config.dump();
  json m{{"schema", kRecordSchema},
         {"code_version", kCodeVersion},
         {"run_id", run_id},
         {"config", config},
         {"config_hash", data::sha256_hex(dump.data(), dump.size())},
         {"dataset", {{"train_fingerprint", data::fingerprint(train_ds)},
                      {"test_fingerprint", data::fingerprint(test_ds)},
                      {"train_size", train_ds.size()},
                      {"test_size", test_ds.size()}}}};
  if (result) {
    m["completed_epochs"] = result->completed_epochs;
    m["diverged"] = result->diverged;
    m["train_eval_indices"] = result->train_eval_indices;
    m["test_eval_indices"] = result->test_eval_indices;
  }
  return m;
}

}  // namespace advlab::trainer
