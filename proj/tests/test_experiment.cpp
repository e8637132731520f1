#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>
#include <string>
#include <vector>

#include "experiment.hpp"
#include "util.hpp"

using namespace mem;
using pipe::ExperimentConfig;
using nlohmann::json;

TEST_CASE("empty document yields the full default config") {
  const ExperimentConfig cfg = ExperimentConfig::from_json("{}");
  CHECK(cfg.corpus_dir == "corpus");
  CHECK(cfg.output_dir == "out");
  CHECK(cfg.seed == 1);
  CHECK(cfg.channels == data::default_channel_names());
  CHECK(cfg.sampling_rate_hz == 500.0);
  CHECK(cfg.window_seconds == 0.5);
  CHECK(cfg.window_offset_seconds == 0.1);
  CHECK(cfg.split_fractions == std::array<double, 3>{0.8, 0.1, 0.1});
  CHECK(cfg.welch.segment_len == 125);
  CHECK(cfg.model.n_channels == 12);
  CHECK(cfg.model.n_bins == 18);
  CHECK(cfg.train.learning_rate == 1e-4);
  CHECK(cfg.synth_subjects == 6);
  CHECK(cfg.synth_turning_events == 400);
  CHECK(cfg.eval_mask_ratio == 0.0);
  CHECK(cfg.sweep_ratios == std::vector<double>{0.0, 0.25, 0.5, 0.75, 0.9});
  CHECK(cfg.sweep_seeds == std::vector<uint64_t>{1, 2, 3, 4, 5});
  CHECK(cfg.export_ratios == std::vector<double>{0.3, 0.6, 0.9});
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("partial overrides keep the remaining defaults") {
  const ExperimentConfig cfg = ExperimentConfig::from_json(R"({
    "seed": 42,
    "model": {"embed_size": 32, "strategy": "frequency"},
    "train": {"learning_rate": 0.001,
              "schedule": [{"ratio": 0.2, "epochs": 3}, {"ratio": 0.6, "epochs": 4}]},
    "eval": {"mask_ratio": 0.5}
  })");
  CHECK(cfg.seed == 42);
  CHECK(cfg.model.embed_size == 32);
  CHECK(cfg.model.strategy == mask::Strategy::kFrequency);
  CHECK(cfg.model.encoder_blocks == 2);  // untouched default
  CHECK(cfg.train.learning_rate == 0.001);
  CHECK(cfg.train.beta1 == 0.9);
  REQUIRE(cfg.train.schedule.stages.size() == 2);
  CHECK(cfg.train.schedule.stages[0].ratio == 0.2);
  CHECK(cfg.train.schedule.stages[1].epochs == 4);
  CHECK(cfg.eval_mask_ratio == 0.5);
  CHECK(cfg.sweep_ratios.size() == 5);  // untouched default
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("canonical dump round-trips exactly") {
  ExperimentConfig cfg = ExperimentConfig::from_json(R"({
    "channels": ["C3", "CP3", "P3", "C4", "CP4", "P4"],
    "seed": 9,
    "welch": {"f_lo_hz": 4.0, "f_hi_hz": 16.0},
    "model": {"embed_size": 16, "attention_heads": 2}
  })");
  const std::string dumped = cfg.to_json();
  const ExperimentConfig back = ExperimentConfig::from_json(dumped);
  CHECK(back.to_json() == dumped);
  CHECK(back.config_hash() == cfg.config_hash());
  CHECK(back.channels == cfg.channels);
  CHECK(back.model.n_channels == 6);
}

TEST_CASE("token-grid dimensions are always derived") {
  const ExperimentConfig cfg = ExperimentConfig::from_json(R"({
    "channels": ["C3", "CP3", "P3", "C4"],
    "welch": {"f_lo_hz": 4.0, "f_hi_hz": 16.0}
  })");
  CHECK(cfg.model.n_channels == 4);
  CHECK(cfg.model.n_bins == cfg.welch.retained_bins(cfg.sampling_rate_hz));

  // Explicit grid keys are rejected outright: they could silently disagree.
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"model": {"n_channels": 4}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"model": {"n_bins": 18}})"), ConfigError);
}

TEST_CASE("unknown keys are rejected and the message names the section") {
  const struct {
    const char* doc;
    const char* fragment;
  } cases[] = {
      {R"({"corpus_path": "x"})", "the top level"},
      {R"({"welch": {"segment": 125}})", "'welch'"},
      {R"({"model": {"heads": 4}})", "'model'"},
      {R"({"train": {"lr": 0.001}})", "'train'"},
      {R"({"train": {"schedule": [{"ratio": 0.1, "epoch": 2}]}})", "'train.schedule'"},
      {R"({"synth": {"n_subjects": 2}})", "'synth'"},
      {R"({"eval": {"ratios": [0.5]}})", "'eval'"},
  };
  for (const auto& c : cases) {
    CAPTURE(c.doc);
    try {
      ExperimentConfig::from_json(c.doc);
      FAIL_CHECK("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("unknown key") != std::string::npos);
      CHECK(std::string(e.what()).find(c.fragment) != std::string::npos);
    }
  }
}

TEST_CASE("malformed documents raise format errors") {
  CHECK_THROWS_AS(ExperimentConfig::from_json("not json"), FormatError);
  CHECK_THROWS_AS(ExperimentConfig::from_json("[1, 2]"), FormatError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"seed": "abc"})"), FormatError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"channels": 3})"), FormatError);
  CHECK_THROWS_AS(ExperimentConfig::from_file("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config hash is stable under key reordering") {
  const char* a = R"({
    "seed": 7,
    "channels": ["C3", "CP3", "P3", "C4", "CP4", "P4"],
    "model": {"embed_size": 16, "attention_heads": 2},
    "welch": {"f_hi_hz": 16.0, "f_lo_hz": 4.0}
  })";
  const char* b = R"({
    "welch": {"f_lo_hz": 4.0, "f_hi_hz": 16.0},
    "model": {"attention_heads": 2, "embed_size": 16},
    "channels": ["C3", "CP3", "P3", "C4", "CP4", "P4"],
    "seed": 7
  })";
  CHECK(ExperimentConfig::from_json(a).config_hash() ==
        ExperimentConfig::from_json(b).config_hash());
}

TEST_CASE("config hash tracks compatibility-critical fields only") {
  const ExperimentConfig base = ExperimentConfig::from_json("{}");
  const uint64_t h = base.config_hash();

  // Irrelevant knobs leave the hash alone.
  for (const char* doc : {R"({"seed": 99})", R"({"output_dir": "elsewhere"})",
                          R"({"train": {"learning_rate": 0.01}})",
                          R"({"eval": {"mask_ratio": 0.5}})",
                          R"({"synth": {"turning_events": 10}})",
                          R"({"split_fractions": [0.6, 0.2, 0.2]})"}) {
    CAPTURE(doc);
    CHECK(ExperimentConfig::from_json(doc).config_hash() == h);
  }

  // Compatibility-critical knobs move it.
  for (const char* doc :
       {R"({"model": {"strategy": "frequency"}})", R"({"model": {"embed_size": 32}})",
        R"({"channels": ["C3", "CP3", "P3", "C4", "CP4", "P4"]})",
        R"({"welch": {"f_hi_hz": 18.0}})", R"({"window_seconds": 1.0})",
        R"({"sampling_rate_hz": 250.0})"}) {
    CAPTURE(doc);
    CHECK(ExperimentConfig::from_json(doc).config_hash() != h);
  }
}

TEST_CASE("validate rejects inconsistent settings") {
  auto throws_config = [](const char* doc) {
    const ExperimentConfig cfg = ExperimentConfig::from_json(doc);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  throws_config(R"({"corpus_dir": ""})");
  throws_config(R"({"output_dir": ""})");
  throws_config(R"({"split_fractions": [0.5, 0.3, 0.1]})");   // sums to 0.9
  throws_config(R"({"split_fractions": [1.0, -0.1, 0.1]})");  // negative
  throws_config(R"({"eval": {"mask_ratio": 1.5}})");
  throws_config(R"({"eval": {"sweep_ratios": [0.0, 2.0]}})");
  throws_config(R"({"eval": {"export_ratios": [-0.1]}})");
  throws_config(R"({"eval": {"sweep_seeds": []}})");
  throws_config(R"({"synth": {"subjects": 0}})");
  throws_config(R"({"train": {"batch_size": 0}})");
  throws_config(R"({"model": {"embed_size": 7}})");  // not divisible by heads

  // Duplicate channels and a channel list that breaks the burst sites.
  const ExperimentConfig dup = ExperimentConfig::from_json(
      R"({"channels": ["C3", "C3", "P3", "C4", "CP4", "P4"]})");
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  const ExperimentConfig no_burst =
      ExperimentConfig::from_json(R"({"channels": ["Fz", "Cz", "Pz", "Oz"]})");
  CHECK_THROWS_AS(no_burst.validate(), ConfigError);

  // Bad welch settings fail during parsing (the grid has to be derivable).
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"welch": {"overlap": 125}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"sampling_rate_hz": -1.0})"), ConfigError);
}

TEST_CASE("synth_config mirrors the experiment-wide fields") {
  const ExperimentConfig cfg = ExperimentConfig::from_json(R"({
    "seed": 31,
    "channels": ["C3", "CP3", "P3", "C4", "CP4", "P4"],
    "sampling_rate_hz": 500.0,
    "window_seconds": 0.5,
    "split_fractions": [0.7, 0.2, 0.1],
    "synth": {"subjects": 3, "turning_events": 60, "noise_amplitude": 0.5,
              "burst_amplitude": 3.0, "burst_freq_hz": 11.0}
  })");
  const data::SynthConfig sc = cfg.synth_config();
  CHECK(sc.channel_names == cfg.channels);
  CHECK(sc.sampling_rate_hz == 500.0);
  CHECK(sc.n_subjects == 3);
  CHECK(sc.total_turning_events == 60);
  CHECK(sc.noise_amplitude == 0.5);
  CHECK(sc.burst_amplitude == 3.0);
  CHECK(sc.burst_freq_hz == 11.0);
  CHECK(sc.split_fractions == std::array<double, 3>{0.7, 0.2, 0.1});
  CHECK(sc.seed == 31);
  CHECK(sc.timing.window_seconds == 0.5);
  CHECK(sc.timing.offset_seconds == 0.1);
}

TEST_CASE("hash serializes as the fixed-width hex used in artifacts") {
  const ExperimentConfig cfg = ExperimentConfig::from_json("{}");
  const std::string hex = util::hex64(cfg.config_hash());
  CHECK(hex.size() == 16);
  CHECK(hex.find_first_not_of("0123456789abcdef") == std::string::npos);
}
