#pragma once

#include <string>

#include "experiment.hpp"

namespace mem::pipe {

// End-to-end commands behind the CLI and the C API. Each returns the primary
// payload (JSON or CSV) and writes the same content plus side artifacts under
// the configured directories; every artifact embeds the config hash.

// Synthesize the corpus into config.corpus_dir; returns a summary with
// per-class and per-state counts.
std::string run_synth(const ExperimentConfig& config);

// Build a corpus from a raw recording (JSON sidecar + sample file) and an
// events CSV; events are sorted by onset and filtered to the recording's
// subject. Returns the same summary shape as run_synth.
std::string run_prepare(const ExperimentConfig& config, const std::string& events_csv,
                        const std::string& recording_sidecar);

// Train on config.corpus_dir: writes train_log.jsonl, model.ckpt (best
// validation accuracy), and train_result.json under config.output_dir.
std::string run_train(const ExperimentConfig& config);

// Score the checkpoint on the test split (metrics.json + confusion.csv).
// A checkpoint whose config hash disagrees with the current config is
// rejected unless force is set.
std::string run_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
                     bool force);

// Accuracy-vs-masking-ratio sweep on the test split (robustness.csv).
std::string run_robustness(const ExperimentConfig& config, const std::string& checkpoint_path,
                           bool force);

// Reconstruction exports for a few test samples at the configured ratios
// (reconstructions/ grid files + reconstructions.json manifest).
std::string run_reconstruct(const ExperimentConfig& config, const std::string& checkpoint_path,
                            bool force);

// Masking-strategy comparison table across vigilance regimes
// (comparison.csv); trains four models with the configured schedule.
std::string run_compare(const ExperimentConfig& config);

}  // namespace mem::pipe
