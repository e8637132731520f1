#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "masking.hpp"
#include "model.hpp"
#include "training.hpp"

namespace mem::eval {

// Classification quality over the three intention classes. Confusion rows are
// true classes, columns predictions, both in left/right/straight order.
struct MetricsReport {
  double micro_accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::array<std::array<int64_t, 3>, 3> confusion{};
  int n_samples = 0;
  std::string test_state = "all";

  std::string to_json() const;
  std::string confusion_csv() const;
};

// Micro accuracy plus unweighted macro precision/recall/F1; a class that is
// never predicted (or never present) contributes 0 for the undefined ratio.
MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);

struct EvalOptions {
  double mask_ratio = 0.0;  // 0: no masking
  uint64_t seed = 1;        // drives the per-sample mask plans
  std::string test_state = "all";
};

// Argmax prediction for one sample under the given plan.
int predict(const model::MemModel& model, const nn::Array& features, const mask::MaskPlan& plan);

// Deterministic pass over the given trial ids; with a nonzero ratio every
// sample gets a fresh plan drawn from one seeded stream, so missing channels
// or bands are simulated exactly the way training saw them.
MetricsReport evaluate(const model::MemModel& model,
                       const std::vector<data::PreparedTrial>& trials,
                       const std::vector<int>& ids, const EvalOptions& options = {});

// Accuracy as a function of the masking ratio, one report per (ratio, seed).
struct RobustnessCurve {
  mask::Strategy strategy = mask::Strategy::kChannel;
  std::vector<double> ratios;  // strictly increasing
  std::vector<uint64_t> seeds;
  std::vector<std::vector<MetricsReport>> reports;  // [ratio][seed]
  std::vector<double> mean_accuracy;                // per ratio, over seeds

  std::string to_csv() const;
};

RobustnessCurve robustness_sweep(const model::MemModel& model,
                                 const std::vector<data::PreparedTrial>& trials,
                                 const std::vector<int>& ids, const std::vector<double>& ratios,
                                 const std::vector<uint64_t>& seeds);

// One exported sample: ground truth and reconstruction grids plus the masked
// token indices, written as CSV grids and portable-pixmap previews.
struct ReconstructionExport {
  int trial_id = -1;
  double ratio = 0.0;
  std::vector<int> masked;
  nn::Array truth;  // N x d
  nn::Array recon;  // N x d
  std::string base;  // path prefix of the files written for this export
};

std::vector<ReconstructionExport> export_reconstructions(
    const model::MemModel& model, const std::vector<data::PreparedTrial>& trials,
    const std::vector<int>& ids, const std::vector<double>& ratios, const std::string& out_dir,
    uint64_t seed = 1);

// One row of the strategy-comparison table: a model trained on the given
// vigilance regime with the given strategy, scored on one test state.
struct StrategyComparisonRow {
  std::string train_states;  // "alert" or "all"
  std::string test_state;
  mask::Strategy strategy = mask::Strategy::kChannel;
  MetricsReport report;
};

// Trains channel- and frequency-strategy models for the alert-only and
// all-states regimes and scores each on every test state present; states
// without test trials are skipped with a warning.
std::vector<StrategyComparisonRow> compare_strategies(
    const std::vector<data::PreparedTrial>& trials, const data::SplitManifest& split,
    const model::MemConfig& base_config, const train::TrainConfig& train_config);

std::string comparison_csv(const std::vector<StrategyComparisonRow>& rows);

}  // namespace mem::eval
