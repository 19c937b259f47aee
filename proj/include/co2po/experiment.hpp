#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "co2po/config.hpp"
#include "co2po/metrics.hpp"
#include "co2po/trainer.hpp"

namespace co2po {

inline constexpr const char* kVersion = "co2po 0.1.0";

// All floats in emitted CSVs use this formatting (9 significant digits).
std::string format_float(double value);

extern const char* kProgressHeader;
extern const char* kCheckpointsHeader;

std::string progress_row(const IterationDiagnostics& diag);
std::string checkpoint_row(const EvalCheckpoint& cp);

struct TrainResult {
  std::vector<EvalCheckpoint> checkpoints;
  MetricsReport report;
  std::filesystem::path seed_dir;
  bool aborted = false;
  double first_iter_label_rate = 0.0;
  double final_write_rate = 0.0;
};

// Trains one seed end to end; writes config.json, progress.csv,
// checkpoints.csv, final_model.json and metrics_report.json into seed_dir.
TrainResult run_training(const ExperimentConfig& cfg, int seed,
                         const std::filesystem::path& seed_dir);

nlohmann::ordered_json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

int cmd_train(const ExperimentConfig& cfg);
int cmd_eval(const std::filesystem::path& seed_dir, const std::string& checkpoint_file,
             std::uint64_t eval_seed);
int cmd_ablate(const ExperimentConfig& base);
int cmd_sweep_h(const ExperimentConfig& base, const std::vector<int>& horizons);
int cmd_report(const std::filesystem::path& out_dir);

}  // namespace co2po
