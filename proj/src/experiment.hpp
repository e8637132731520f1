#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "dsp.hpp"
#include "model.hpp"
#include "training.hpp"

namespace mem::pipe {

// One experiment, one JSON document. Every field has a default; a config file
// only overrides what it names, and unknown keys are rejected so typos fail
// loudly instead of silently falling back.
struct ExperimentConfig {
  std::string corpus_dir = "corpus";
  std::string output_dir = "out";
  uint64_t seed = 1;

  std::vector<std::string> channels = data::default_channel_names();
  double sampling_rate_hz = 500.0;
  double window_seconds = 0.5;
  double window_offset_seconds = 0.1;
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
  dsp::WelchConfig welch;

  model::MemConfig model;
  train::TrainConfig train;

  // Synthetic-corpus knobs; shared fields (channels, rates, welch, timing,
  // fractions, seed) are taken from the experiment itself.
  int synth_subjects = 6;
  int synth_turning_events = 400;
  double synth_noise_amplitude = 1.0;
  double synth_burst_amplitude = 2.0;
  double synth_burst_freq_hz = 10.0;

  // Evaluation settings.
  double eval_mask_ratio = 0.0;
  std::vector<double> sweep_ratios = {0.0, 0.25, 0.5, 0.75, 0.9};
  std::vector<uint64_t> sweep_seeds = {1, 2, 3, 4, 5};
  std::vector<int> export_ids;  // empty: first two test trials
  std::vector<double> export_ratios = {0.3, 0.6, 0.9};

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  std::string to_json() const;  // canonical full dump
  void validate() const;

  // Fingerprint of the compatibility-critical subset (channels, rates,
  // window, spectral grid, model); stable under key reordering because it is
  // computed from a canonical re-serialization, and embedded in artifacts so
  // mismatched checkpoint/config pairs are caught.
  uint64_t config_hash() const;

  data::WindowTiming timing() const;
  data::SynthConfig synth_config() const;
};

}  // namespace mem::pipe
