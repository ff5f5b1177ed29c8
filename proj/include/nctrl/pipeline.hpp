#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nctrl/datagen.hpp"
#include "nctrl/metrics.hpp"
#include "nctrl/theory.hpp"
#include "nctrl/trainer.hpp"

namespace nctrl {

// Shared subcommand implementations.  Each run_* writes a manifest.json
// into its output directory before doing work, so any run can be
// reproduced from its manifest alone.  Input problems raise IoError
// (missing files) or FormatError/ChecksumError (corrupt files); runtime
// failures raise ValueError/DivergenceError and friends.

extern const char kToolVersion[];

// Strict JSON round trip for the training configuration: unknown keys are
// rejected so typos never silently fall back to defaults.
TrainConfig train_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& cfg);

struct GenRun {
  std::string dir;
  DatasetMeta meta;
  // Non-empty when the generated instance cannot satisfy the
  // sufficient-variability condition (single regime, or more latent
  // dimensions than the regime count supports with constant noise scales).
  std::string variability_warning;
};
GenRun run_gen(const GenConfig& cfg, const std::string& out_dir, bool csv);

struct TrainRun {
  std::string out_dir;
  TrainReport report;
};
TrainRun run_train(const std::string& data_dir, const std::string& out_dir,
                   const TrainConfig& cfg);

struct EvalRun {
  double mcc_spearman = 0.0;
  double mcc_pearson = 0.0;
  double accuracy = 0.0;
  double a_mse = 0.0;
  double recon_mse = 0.0;  // in standardized observation space
  std::vector<double> per_component;  // matched spearman |corr| per component
  std::vector<std::size_t> assignment;
  std::vector<std::uint32_t> sigma;
  std::vector<std::size_t> constant_true;
  std::vector<std::size_t> constant_est;
};
EvalRun run_eval(const std::string& data_dir, const std::string& model_dir,
                 const std::string& out_dir);

void run_decode(const std::string& data_dir, const std::string& model_dir,
                const std::string& out_dir);

struct CheckRun {
  std::string kind;
  bool pass = false;
  std::size_t points = 0;
  std::size_t pass_count = 0;      // variability: points at full rank
  double max_abs_log_det = 0.0;    // volume
};
CheckRun run_check(const std::string& data_dir, const std::string& kind,
                   std::size_t points, std::uint64_t seed,
                   const std::string& out_dir);

// Splits an eval run's scatter data into per-factor CSVs and emits regime
// and loss-curve CSVs; `run_dir` must contain an eval manifest.
void run_export(const std::string& run_dir, const std::string& out_dir);

}  // namespace nctrl
