#include "co2po/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace co2po {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string format_float(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

const char* kProgressHeader =
    "iteration,env_steps,mean_ep_return,mean_ep_cost,lambda,tau,write_rate,"
    "hazard_label_rate,wbce,clip_loss,value_r_loss,value_c_loss,entropy,approx_kl,"
    "context_occupancy";

const char* kCheckpointsHeader = "step,mean_return,mean_cost,violations,n_eval";

std::string progress_row(const IterationDiagnostics& d) {
  std::ostringstream row;
  row << d.iteration << ',' << d.env_steps << ',' << format_float(d.mean_ep_return) << ','
      << format_float(d.mean_ep_cost) << ',' << format_float(d.lambda) << ','
      << format_float(d.tau) << ',' << format_float(d.write_rate) << ','
      << format_float(d.hazard_label_rate) << ',' << format_float(d.wbce_loss) << ','
      << format_float(d.clip_loss) << ',' << format_float(d.value_r_loss) << ','
      << format_float(d.value_c_loss) << ',' << format_float(d.entropy) << ','
      << format_float(d.approx_kl) << ',' << format_float(d.context_occupancy);
  return row.str();
}

std::string checkpoint_row(const EvalCheckpoint& cp) {
  std::ostringstream row;
  row << cp.step << ',' << format_float(cp.mean_return) << ',' << format_float(cp.mean_cost)
      << ',' << cp.violations << ',' << cp.episode_returns.size();
  return row.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t eval_seed_for(int seed, int checkpoint_index) {
  return mix_seed(mix_seed(static_cast<std::uint64_t>(seed), 0xEA1ULL),
                  static_cast<std::uint64_t>(checkpoint_index));
}

}  // namespace

TrainResult run_training(const ExperimentConfig& cfg, int seed, const fs::path& seed_dir) {
  fs::create_directories(seed_dir);
  write_text(seed_dir / "config.json", cfg.to_json().dump(2) + "\n");

  Trainer trainer(cfg, seed);
  std::ofstream progress(seed_dir / "progress.csv", std::ios::binary);
  std::ofstream checkpoints(seed_dir / "checkpoints.csv", std::ios::binary);
  progress << kProgressHeader << '\n';
  checkpoints << kCheckpointsHeader << '\n';

  TrainResult result;
  result.seed_dir = seed_dir;

  const long long per_iter =
      static_cast<long long>(cfg.run.rollout_len) * cfg.run.num_envs;
  const long long iterations = (cfg.run.total_steps + per_iter - 1) / per_iter;
  long long next_eval = cfg.run.eval_interval;
  int checkpoint_index = 0;

  for (long long iter = 0; iter < iterations; ++iter) {
    IterationDiagnostics diag;
    try {
      diag = trainer.run_iteration();
    } catch (const NumericalError& e) {
      progress << "# aborted: " << e.what() << '\n';
      result.aborted = true;
      break;
    }
    progress << progress_row(diag) << '\n';
    if (iter == 0) result.first_iter_label_rate = diag.hazard_label_rate;
    result.final_write_rate = diag.write_rate;
    while (next_eval <= trainer.env_steps_done()) {
      const EvalCheckpoint cp = trainer.evaluate(eval_seed_for(seed, checkpoint_index), next_eval);
      checkpoints << checkpoint_row(cp) << '\n';
      result.checkpoints.push_back(cp);
      next_eval += cfg.run.eval_interval;
      ++checkpoint_index;
    }
  }
  progress.close();
  checkpoints.close();

  write_text(seed_dir / "final_model.json", trainer.models().to_checkpoint_json() + "\n");
  if (!result.checkpoints.empty()) {
    result.report = make_report(result.checkpoints, cfg.algo.cost_budget);
    write_text(seed_dir / "metrics_report.json", report_to_json(result.report).dump(2) + "\n");
  }
  return result;
}

ojson report_to_json(const MetricsReport& report) {
  ojson j;
  j["r_final"] = report.r_final;
  j["c_final"] = report.c_final;
  j["c_peak"] = report.c_peak;
  j["violation_rate"] = report.violation_rate;
  if (report.r_feas) {
    j["r_feas"] = *report.r_feas;
  } else {
    j["r_feas"] = "--";
  }
  if (report.time_to_feasible) {
    j["time_to_feasible"] = *report.time_to_feasible;
  } else {
    j["time_to_feasible"] = "--";
  }
  j["feasible_indicator"] = report.feasible_indicator;
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport report;
  report.r_final = j.at("r_final").get<double>();
  report.c_final = j.at("c_final").get<double>();
  report.c_peak = j.at("c_peak").get<double>();
  report.violation_rate = j.at("violation_rate").get<double>();
  if (j.at("r_feas").is_number()) report.r_feas = j.at("r_feas").get<double>();
  if (j.at("time_to_feasible").is_number()) {
    report.time_to_feasible = j.at("time_to_feasible").get<long long>();
  }
  report.feasible_indicator = j.at("feasible_indicator").get<double>();
  return report;
}

namespace {

void write_manifest(const ExperimentConfig& cfg, const fs::path& out_dir) {
  ojson manifest;
  manifest["version"] = kVersion;
  manifest["config"] = cfg.to_json();
  manifest["seeds"] = cfg.run.seeds;
  ojson artifacts = ojson::array();
  for (int seed : cfg.run.seeds) {
    const std::string base = "seed_" + std::to_string(seed);
    artifacts.push_back(base + "/config.json");
    artifacts.push_back(base + "/progress.csv");
    artifacts.push_back(base + "/checkpoints.csv");
    artifacts.push_back(base + "/final_model.json");
  }
  manifest["artifacts"] = artifacts;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg) {
  const fs::path out_dir(cfg.run.out_dir);
  fs::create_directories(out_dir);
  write_manifest(cfg, out_dir);
  int code = 0;
  for (int seed : cfg.run.seeds) {
    const TrainResult result =
        run_training(cfg, seed, out_dir / ("seed_" + std::to_string(seed)));
    if (result.aborted) code = 3;
    std::cout << "seed " << seed << ": " << result.checkpoints.size() << " checkpoints"
              << (result.aborted ? " (aborted)" : "") << '\n';
  }
  return code;
}

int cmd_eval(const fs::path& seed_dir, const std::string& checkpoint_file,
             std::uint64_t eval_seed) {
  const fs::path cfg_path = seed_dir / "config.json";
  if (!fs::exists(cfg_path)) {
    std::cerr << "eval: no config.json under " << seed_dir << '\n';
    return 2;
  }
  const ExperimentConfig cfg = config_from_text(read_text(cfg_path));
  const fs::path model_path =
      checkpoint_file.empty() ? seed_dir / "final_model.json" : fs::path(checkpoint_file);
  if (!fs::exists(model_path)) {
    std::cerr << "eval: checkpoint not found: " << model_path << '\n';
    return 2;
  }
  Trainer trainer(cfg, 0);
  try {
    trainer.models().load_checkpoint_json(read_text(model_path));
  } catch (const std::exception& e) {
    std::cerr << "eval: corrupt checkpoint: " << e.what() << '\n';
    return 2;
  }
  const EvalCheckpoint cp = trainer.evaluate(eval_seed, 0);
  const MetricsReport report = make_report({cp}, cfg.algo.cost_budget);
  const ojson j = report_to_json(report);
  write_text(seed_dir / "eval_report.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return 0;
}

namespace {

std::string opt_cell(const std::optional<double>& v) {
  return v ? format_float(*v) : std::string();
}

std::string opt_cell(const std::optional<long long>& v) {
  return v ? std::to_string(*v) : std::string();
}

}  // namespace

int cmd_ablate(const ExperimentConfig& base) {
  const std::vector<std::string> variants = {"co2po", "no-blackboard", "always-write",
                                             "no-hazard-loss"};
  const fs::path out_dir(base.run.out_dir);
  fs::create_directories(out_dir);
  std::ofstream summary(out_dir / "ablation_summary.csv", std::ios::binary);
  summary << "variant,seed,r_final,c_final,r_feas,time_to_feasible,feasible\n";
  int code = 0;
  for (const std::string& variant : variants) {
    ExperimentConfig cfg = base;
    cfg.algo.variant = variant;
    cfg.run.out_dir = (out_dir / variant).string();
    const int sub = cmd_train(cfg);
    if (sub != 0) code = sub;
    for (int seed : cfg.run.seeds) {
      const fs::path report_path =
          out_dir / variant / ("seed_" + std::to_string(seed)) / "metrics_report.json";
      if (!fs::exists(report_path)) continue;
      const MetricsReport report =
          report_from_json(nlohmann::json::parse(read_text(report_path)));
      summary << variant << ',' << seed << ',' << format_float(report.r_final) << ','
              << format_float(report.c_final) << ',' << opt_cell(report.r_feas) << ','
              << opt_cell(report.time_to_feasible) << ',' << (report.r_feas ? 1 : 0) << '\n';
    }
  }
  return code;
}

int cmd_sweep_h(const ExperimentConfig& base, const std::vector<int>& horizons) {
  for (int h : horizons) {
    if (h < 0) throw ConfigError("sweep-h: horizons must be >= 0");
  }
  const fs::path out_dir(base.run.out_dir);
  fs::create_directories(out_dir);
  std::ofstream summary(out_dir / "sweep_summary.csv", std::ios::binary);
  summary << "h,seed,r_final,c_final,feasible,first_iter_label_rate\n";
  int code = 0;
  for (int h : horizons) {
    ExperimentConfig cfg = base;
    cfg.algo.hazard_horizon = h;
    cfg.run.out_dir = (out_dir / ("h_" + std::to_string(h))).string();
    const fs::path h_dir(cfg.run.out_dir);
    fs::create_directories(h_dir);
    write_manifest(cfg, h_dir);
    for (int seed : cfg.run.seeds) {
      const TrainResult result =
          run_training(cfg, seed, h_dir / ("seed_" + std::to_string(seed)));
      if (result.aborted) code = 3;
      const bool feasible = !result.checkpoints.empty() && result.report.r_feas.has_value();
      summary << h << ',' << seed << ','
              << format_float(result.checkpoints.empty() ? 0.0 : result.report.r_final) << ','
              << format_float(result.checkpoints.empty() ? 0.0 : result.report.c_final) << ','
              << (feasible ? 1 : 0) << ',' << format_float(result.first_iter_label_rate) << '\n';
    }
  }
  return code;
}

int cmd_report(const fs::path& out_dir) {
  std::vector<MetricsReport> reports;
  std::vector<std::string> seed_names;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("seed_", 0) != 0) continue;
    const fs::path report_path = entry.path() / "metrics_report.json";
    if (!fs::exists(report_path)) continue;
    reports.push_back(report_from_json(nlohmann::json::parse(read_text(report_path))));
    seed_names.push_back(name);
  }
  if (reports.empty()) {
    std::cerr << "report: no seed reports under " << out_dir << '\n';
    return 2;
  }

  auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= xs.size();
    return std::make_pair(mean, std::sqrt(var));
  };

  std::vector<double> r_final, c_final, c_peak, viol, r_feas;
  for (const auto& r : reports) {
    r_final.push_back(r.r_final);
    c_final.push_back(r.c_final);
    c_peak.push_back(r.c_peak);
    viol.push_back(r.violation_rate);
    if (r.r_feas) r_feas.push_back(*r.r_feas);
  }

  ojson j;
  j["seeds"] = seed_names;
  auto emit = [&](const char* key, const std::vector<double>& xs) {
    if (xs.empty()) {
      j[key] = "--";
      return;
    }
    const auto [m, s] = mean_std(xs);
    j[key] = {{"mean", m}, {"std", s}, {"count", xs.size()}};
  };
  emit("r_final", r_final);
  emit("c_final", c_final);
  emit("c_peak", c_peak);
  emit("violation_rate", viol);
  emit("r_feas", r_feas);
  write_text(out_dir / "report.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace co2po
