// advlab command-line driver: verify-theory, attack, train, sweep, report.

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/nn.hpp"
#include "advlab/objectives.hpp"
#include "advlab/theory.hpp"
#include "advlab/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace advlab;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config " + path);
  try {
    return json::parse(is, nullptr, true, true);  // comments allowed
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  os << j.dump(2) << '\n';
}

void heartbeat(const std::string& what, std::size_t done, std::size_t total, double seconds) {
  const double eta = done ? seconds / static_cast<double>(done) * static_cast<double>(total - done) : 0.0;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[" << what << "] " << done << "/" << total << " elapsed " << static_cast<long>(seconds) << "s eta "
            << static_cast<long>(eta) << "s\n";
}

// ---------------------------------------------------------------------------
// Config sections

json dataset_defaults(json d) {
  if (!d.is_object()) d = json::object();
  d["source"] = d.value("source", std::string("synthetic"));
  d["n_train"] = d.value("n_train", std::size_t{2000});
  d["n_test"] = d.value("n_test", std::size_t{1000});
  d["seed"] = d.value("seed", std::uint64_t{0});
  d["upsample"] = d.value("upsample", std::size_t{1});
  d["normalize"] = d.value("normalize", d["source"] != "synthetic");
  if (d["source"] == "synthetic") {
    d["shape"] = d.value("shape", std::vector<std::size_t>{3, 8, 8});
    d["classes"] = d.value("classes", std::size_t{10});
    d["margin"] = d.value("margin", 4.0);
    d["smooth"] = d.value("smooth", std::size_t{1});
  }
  return d;
}

std::pair<data::Dataset, data::Dataset> load_datasets(const json& d) {
  const std::string src = d.at("source");
  const std::uint64_t seed = d.at("seed");
  data::Dataset train, test;
  if (src == "synthetic") {
    data::GaussianMixture mix;
    mix.shape = d.at("shape").get<Shape>();
    mix.classes = d.at("classes");
    mix.margin = d.at("margin");
    mix.smooth = d.at("smooth");
    mix.mean_seed = seed;
    train = data::synth_gaussian(mix, d.at("n_train"), seed + 1, "train");
    test = data::synth_gaussian(mix, d.at("n_test"), seed + 2, "test");
  } else if (src == "cifar10") {
    const std::string dir = d.value("dir", (fs::path(env_or("DATA_DIR", "data")) / "cifar-10-batches-bin").string());
    train = data::load_cifar10(dir, "train");
    test = data::load_cifar10(dir, "test");
    train = train.subset(data::sample_indices(train.size(), d.at("n_train"), seed));
    test = test.subset(data::sample_indices(test.size(), d.at("n_test"), seed + 1));
  } else if (src == "mnist") {
    const fs::path dir = d.value("dir", (fs::path(env_or("DATA_DIR", "data")) / "mnist").string());
    train = data::load_mnist((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string(), "train");
    test = data::load_mnist((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string(), "test");
    train = train.subset(data::sample_indices(train.size(), d.at("n_train"), seed));
    test = test.subset(data::sample_indices(test.size(), d.at("n_test"), seed + 1));
  } else {
    throw UsageError("dataset.source must be synthetic, cifar10 or mnist");
  }
  const std::size_t up = d.at("upsample");
  if (up > 1) {
    train = data::upsample_copy(train, up);
    test = data::upsample_copy(test, up);
  }
  if (d.at("normalize").get<bool>()) {
    const auto norm = data::fit_normalization(train);
    train = data::normalize(train, norm);
    test = data::normalize(test, norm);
  }
  return {std::move(train), std::move(test)};
}

json network_defaults(json n) {
  if (!n.is_object()) n = json::object();
  n["arch"] = n.value("arch", std::string("mlp"));
  n["channels"] = n.value("channels", std::size_t{16});
  n["pooling"] = n.value("pooling", std::string("avg"));
  n["hidden"] = n.value("hidden", std::vector<std::size_t>{});
  n["init_seed"] = n.value("init_seed", std::uint64_t{0});
  return n;
}

nn::NetworkSpec network_spec(const json& n, const Shape& input, std::size_t classes) {
  nn::ArchOptions o;
  o.channels = n.at("channels");
  o.classes = classes;
  o.pooling = n.at("pooling");
  o.hidden = n.at("hidden").get<std::vector<std::size_t>>();
  return nn::standard_arch(n.at("arch"), input, o);
}

// ---------------------------------------------------------------------------

int cmd_verify_theory(const json& cfg_in, std::uint64_t seed, const fs::path& out) {
  json cfg = cfg_in;
  cfg["dims"] = cfg.value("dims", std::vector<std::size_t>{64, 256, 1024, 4096});
  cfg["seeds"] = cfg.value("seeds", std::size_t{10});
  cfg["inputs_per_seed"] = cfg.value("inputs_per_seed", std::size_t{20});
  cfg["dag_count"] = cfg.value("dag_count", std::size_t{100});
  cfg["seed"] = seed;
  fs::create_directories(out);
  write_json(out / "manifest.json", json{{"subcommand", "verify-theory"}, {"config", cfg}, {"code_version", trainer::kCodeVersion}});

  bool ok = true;
  auto report = [&](const std::string& name, bool pass, const std::string& detail) {
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << name << ' ' << detail << '\n';
  };

  // DAG lemma suite
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < cfg["dag_count"].get<std::size_t>(); ++i) {
    std::uniform_int_distribution<std::size_t> nodes(3, 12);
    const std::size_t n = nodes(rng);
    std::uniform_int_distribution<std::size_t> ins(1, n - 2);
    const auto dag = theory::random_dag(n, ins(rng), rng);
    worst = std::max(worst, std::abs(theory::total_path_sum(dag) - 1.0));
  }
  report("path_sum", worst < 1e-9, "max_abs_err=" + std::to_string(worst));

  const auto dims = cfg["dims"].get<std::vector<std::size_t>>();
  auto family = [](std::size_t d) { return nn::standard_arch("mlp", Shape{d}, nn::ArchOptions{}); };
  struct Target {
    theory::Statistic stat;
    double lo, hi;
  };
  const Target targets[] = {{theory::Statistic::LossGradL1, 0.4, 0.6}, {theory::Statistic::LossGradL2, -0.1, 0.1}};
  std::size_t done = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& t : targets) {
    const auto rep = theory::scaling_slope(family, dims, t.stat, cfg["seeds"], cfg["inputs_per_seed"], seed);
    const std::string name = rep.statistic;
    std::ofstream csv(out / ("scaling_" + name + ".csv"));
    rep.write_csv(csv);
    write_json(out / ("scaling_" + name + ".json"), rep.summary_json());
    report("slope_" + name, rep.slope >= t.lo && rep.slope <= t.hi,
           "slope=" + std::to_string(rep.slope) + " ci=" + std::to_string(rep.ci));
    heartbeat("verify-theory", ++done, std::size(targets),
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return ok ? 0 : 1;
}

int cmd_attack(const json& cfg_in, std::uint64_t seed, const fs::path& out) {
  json cfg = cfg_in;
  cfg["dataset"] = dataset_defaults(cfg.value("dataset", json::object()));
  cfg["network"] = network_defaults(cfg.value("network", json::object()));
  if (!cfg.contains("attacks")) cfg["attacks"] = json::array({attacks::to_json(attacks::AttackSpec::make(attacks::Method::Fgsm, 0.005))});
  cfg["seed"] = seed;
  const auto [train, test] = load_datasets(cfg["dataset"]);
  nn::Network net;
  if (cfg["network"].contains("checkpoint")) {
    net = nn::load_checkpoint(cfg["network"]["checkpoint"]);
  } else {
    net = nn::he_init(network_spec(cfg["network"], test.sample_shape(), test.classes), cfg["network"]["init_seed"]);
  }
  fs::create_directories(out);
  write_json(out / "manifest.json", json{{"subcommand", "attack"},
                                         {"config", cfg},
                                         {"code_version", trainer::kCodeVersion},
                                         {"test_fingerprint", data::fingerprint(test)}});
  std::ofstream csv(out / "attacks.csv");
  attacks::write_attack_csv_header(csv);
  json summary = json::array();
  for (const auto& aj : cfg["attacks"]) {
    auto spec = attacks::attack_from_json(aj);
    spec.seed ^= seed;
    const auto outcomes = attacks::attack_dataset(net, test, spec);
    attacks::write_attack_csv(csv, outcomes, spec);
    summary.push_back({{"attack", attacks::to_json(spec)},
                       {"vulnerability", attacks::vulnerability(outcomes)},
                       {"damage_01", attacks::adversarial_damage(outcomes, test.labels, attacks::DamageLoss::ZeroOne)},
                       {"damage_xent", attacks::adversarial_damage(outcomes, test.labels, attacks::DamageLoss::Xent)}});
  }
  write_json(out / "summary.json", summary);
  return 0;
}

struct RunPlan {
  std::string run_id;
  json config;  // full normalized config of one training run
};

json train_defaults(const json& cfg_in, std::uint64_t seed) {
  json cfg = cfg_in;
  cfg["dataset"] = dataset_defaults(cfg.value("dataset", json::object()));
  cfg["network"] = network_defaults(cfg.value("network", json::object()));
  json t = cfg.value("train", json::object());
  if (!t.contains("seed")) t["seed"] = seed;
  cfg["train"] = trainer::to_json(trainer::train_config_from_json(t));
  return cfg;
}

void execute_run(const RunPlan& plan, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& cfg = plan.config;
  const auto [train_ds, test_ds] = load_datasets(cfg["dataset"]);
  const auto tc = trainer::train_config_from_json(cfg["train"]);
  write_json(dir / "manifest.json", trainer::run_manifest(plan.run_id, cfg, train_ds, test_ds));
  const auto spec = network_spec(cfg["network"], train_ds.sample_shape(), train_ds.classes);
  const nn::Network net = nn::he_init(spec, cfg["network"]["init_seed"]);
  trainer::TrainHooks hooks;
  hooks.checkpoint_path = (dir / "checkpoint.bin").string();
  hooks.heartbeat = [&](std::size_t e, std::size_t total, double s) { heartbeat(plan.run_id, e, total, s); };
  const auto res = trainer::train(net, train_ds, test_ds, tc, plan.run_id, hooks);
  std::ofstream csv(dir / "records.csv");
  trainer::write_records_csv(csv, res.records);
  write_json(dir / "manifest.json", trainer::run_manifest(plan.run_id, cfg, train_ds, test_ds, &res));
  if (res.diverged) std::cerr << "[" << plan.run_id << "] diverged; kept last good epoch " << res.completed_epochs << "\n";
}

int cmd_train(const json& cfg_in, std::uint64_t seed, const fs::path& out) {
  const json cfg = train_defaults(cfg_in, seed);
  const std::string run_id = cfg_in.value("run_id", std::string("run"));
  execute_run(RunPlan{run_id, cfg}, out / run_id);
  return 0;
}

std::string eps_tag(double eps) {
  std::ostringstream os;
  os << eps;
  return os.str();
}

int cmd_sweep(const json& cfg_in, std::uint64_t seed, const fs::path& out, std::size_t jobs) {
  const json base = train_defaults(cfg_in, seed);
  const json sweep = cfg_in.value("sweep", json::object());
  const auto objs = sweep.value("objectives", json::array({json{{"regularizer", "grad-penalty"}, {"q", 1}}}));
  const auto eps = sweep.value("eps", std::vector<double>{0.0});
  if (objs.empty() || eps.empty()) throw UsageError("sweep: objectives and eps must be non-empty");
  std::vector<RunPlan> plans;
  for (const auto& o : objs) {
    for (double e : eps) {
      json oj = o;
      if (oj.value("regularizer", std::string("none")) == "cross-lipschitz") oj["weight"] = e;
      else oj["eps"] = e;
      const auto ospec = objectives::objective_from_json(oj);
      json cfg = base;
      cfg["train"]["objective"] = objectives::to_json(ospec);
      plans.push_back(RunPlan{ospec.label() + "_eps" + eps_tag(e), cfg});
    }
  }
  fs::create_directories(out);
  write_json(out / "sweep.json", json{{"config", cfg_in}, {"runs", plans.size()}, {"code_version", trainer::kCodeVersion}});

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < plans.size();) {
      try {
        execute_run(plans[i], out / plans[i].run_id);
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mu);
        if (first_error.empty()) first_error = plans[i].run_id + ": " + e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < std::max<std::size_t>(1, jobs); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (!first_error.empty()) throw std::runtime_error(first_error);

  std::ofstream merged(out / "merged.csv");
  merged << trainer::records_header() << '\n';
  for (const auto& p : plans) {
    std::ifstream is(out / p.run_id / "records.csv");
    const auto rs = trainer::read_records_csv(is);
    trainer::write_records_csv(merged, rs, false);
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const fs::path& out, std::size_t window) {
  std::vector<fs::path> runs;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw UsageError("report: not a directory: " + d);
    if (fs::exists(fs::path(d) / "records.csv")) {
      runs.emplace_back(d);
      continue;
    }
    std::vector<fs::path> sub;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_directory() && fs::exists(e.path() / "records.csv")) sub.push_back(e.path());
    std::sort(sub.begin(), sub.end());
    runs.insert(runs.end(), sub.begin(), sub.end());
  }
  if (runs.empty()) throw UsageError("report: no run directories found");
  fs::create_directories(out);
  std::ofstream merged(out / "report.csv");
  merged << trainer::records_header() << '\n';
  json summary = json::array();
  std::vector<std::pair<double, std::vector<trainer::ExperimentRecord>>> sweep;
  for (const auto& r : runs) {
    std::ifstream ms(r / "manifest.json");
    if (!ms) throw UsageError("report: missing manifest in " + r.string());
    const json m = json::parse(ms);
    if (m.value("schema", std::string()) != trainer::kRecordSchema)
      throw UsageError("report: schema-version mismatch in " + r.string() + " (found '" + m.value("schema", std::string()) +
                       "', expected '" + trainer::kRecordSchema + "')");
    std::ifstream is(r / "records.csv");
    std::vector<trainer::ExperimentRecord> rs;
    try {
      rs = trainer::read_records_csv(is);
    } catch (const std::runtime_error& e) {
      throw UsageError("report: " + r.string() + ": " + e.what());
    }
    trainer::write_records_csv(merged, rs, false);
    const auto& obj = m["config"]["train"]["objective"];
    const double eps = obj.contains("eps") ? obj["eps"].get<double>() : obj.value("weight", 0.0);
    sweep.emplace_back(eps, rs);
    json disc = json::array();
    for (const auto& d : trainer::discrepancy_report(rs)) disc.push_back({{"epoch", d.epoch}, {"ratio", d.ratio}});
    summary.push_back({{"run_id", m["run_id"]},
                       {"objective", obj},
                       {"test_g1", trainer::final_window_mean(rs, "test", window, &trainer::ExperimentRecord::g1)},
                       {"test_g2", trainer::final_window_mean(rs, "test", window, &trainer::ExperimentRecord::g2)},
                       {"test_accuracy", trainer::final_window_mean(rs, "test", window, &trainer::ExperimentRecord::accuracy)},
                       {"test_vuln_pgd", trainer::final_window_mean(rs, "test", window, &trainer::ExperimentRecord::vuln_pgd)},
                       {"discrepancy", disc}});
  }
  json tradeoff = json::array();
  for (const auto& p : trainer::tradeoff_curve(sweep, window))
    tradeoff.push_back({{"eps", p.eps}, {"accuracy", p.accuracy}, {"vulnerability", p.vulnerability}});
  write_json(out / "report.json", json{{"schema", trainer::kRecordSchema}, {"runs", summary}, {"tradeoff", tradeoff}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advlab: adversarial vulnerability vs. input dimension"};
  app.require_subcommand(1);
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = env_or("OUT_DIR", "out");
  std::size_t jobs = 1;
  std::size_t window = 20;
  std::vector<std::string> report_dirs;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out_dir, "output directory (default $OUT_DIR or ./out)");
  };
  auto* verify = app.add_subcommand("verify-theory", "scaling laws and path lemmas at initialization");
  add_common(verify, true);
  auto* attack = app.add_subcommand("attack", "attack a network on a dataset");
  add_common(attack, true);
  auto* train = app.add_subcommand("train", "train one network and record metrics");
  add_common(train, true);
  auto* sweep = app.add_subcommand("sweep", "grid of training runs");
  add_common(sweep, true);
  sweep->add_option("--jobs", jobs, "parallel runs")->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "aggregate run directories");
  add_common(report, false);
  report->add_option("dirs", report_dirs, "run or sweep directories")->required();
  report->add_option("--window", window, "final-epoch window");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    const fs::path out(out_dir);
    if (*verify) return cmd_verify_theory(read_config(config_path), seed, out);
    if (*attack) return cmd_attack(read_config(config_path), seed, out);
    if (*train) return cmd_train(read_config(config_path), seed, out);
    if (*sweep) return cmd_sweep(read_config(config_path), seed, out, jobs);
    if (*report) return cmd_report(report_dirs, out, window);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
