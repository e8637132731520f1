#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"
#include "util.hpp"

namespace mem::train {

struct CurriculumStage {
  double ratio = 0.0;
  int epochs = 0;
};

// Scheduled masking: each stage holds its ratio for a block of epochs; epochs
// past the table keep the final ratio.
struct CurriculumSchedule {
  std::vector<CurriculumStage> stages;

  static CurriculumSchedule default_schedule();  // 0.05, 0.15, ..., 0.85 then 0.90
  void validate() const;
  int total_epochs() const;
  double ratio_for_epoch(int epoch) const;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  uint64_t seed = 1;
  double alpha = 0.1;  // reconstruction weight
  CurriculumSchedule schedule = CurriculumSchedule::default_schedule();
  int max_epochs = -1;       // -1: run the whole schedule
  int checkpoint_every = 0;  // 0: no periodic checkpoints

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double ratio = 0.0;
  double train_loss_cls = 0.0;
  double train_loss_mse = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;

  std::string to_json_line() const;
};

// One adaptive-moment update from the gradients on the tape; step_count is
// 1-based and drives bias correction.
void adam_step(nn::ParamStore& store, nn::Tape& tape, const std::vector<nn::Var>& vars,
               const TrainConfig& cfg, int64_t step_count);

// One pass over the training ids: seeded shuffle, fresh mask per sample,
// joint loss, adaptive-moment updates. val_acc is left at 0 for the caller.
EpochMetrics train_epoch(model::MemModel& model, const std::vector<data::PreparedTrial>& trials,
                         const std::vector<int>& train_ids, const TrainConfig& cfg, int epoch,
                         int64_t& step_count);

// Unmasked classification accuracy over the given trial ids.
double evaluate_accuracy(const model::MemModel& model,
                         const std::vector<data::PreparedTrial>& trials,
                         const std::vector<int>& ids);

struct FitOptions {
  std::string log_path;        // JSONL, one record per epoch when nonempty
  std::string checkpoint_dir;  // periodic checkpoints when cadence is set
};

struct FitResult {
  int best_epoch = -1;
  double best_val_acc = 0.0;
  std::vector<EpochMetrics> history;
};

// Runs the schedule, selects the epoch with the highest validation accuracy,
// and leaves the model holding that best checkpoint's weights.
FitResult fit(model::MemModel& model, const std::vector<data::PreparedTrial>& trials,
              const data::SplitManifest& split, const TrainConfig& cfg,
              const FitOptions& options = {});

// Checkpoint container: magic, length-prefixed JSON header (config, context,
// parameter table), then raw little-endian float32 payloads in header order.
struct CheckpointHeader {
  model::MemConfig config;
  uint64_t config_hash = 0;  // experiment-config hash; 0 when standalone
  std::vector<std::string> channel_names;
  std::vector<double> bin_freqs_hz;
};

void save_checkpoint(const std::string& path, const model::MemModel& model,
                     const CheckpointHeader& header);
model::MemModel load_checkpoint(const std::string& path, CheckpointHeader* header_out = nullptr);

}  // namespace mem::train
