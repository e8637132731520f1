#include "pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "evaluation.hpp"
#include "json.hpp"
#include "util.hpp"

namespace mem::pipe {

using nlohmann::json;
namespace fsys = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("pipeline: cannot open " + path + " for writing");
  f << body;
  if (!f) throw FormatError("pipeline: failed writing " + path);
}

std::string corpus_summary(const data::Corpus& corpus, const ExperimentConfig& config) {
  int classes[3] = {0, 0, 0};
  int states[3] = {0, 0, 0};
  for (const data::StoredTrial& t : corpus.trials) {
    ++classes[static_cast<int>(t.intention)];
    ++states[static_cast<int>(t.vigilance)];
  }
  json j;
  j["config_hash"] = util::hex64(config.config_hash());
  j["corpus_dir"] = config.corpus_dir;
  j["n_trials"] = corpus.trials.size();
  j["n_references"] = corpus.references.size();
  j["classes"] = {{"left", classes[0]}, {"right", classes[1]}, {"straight", classes[2]}};
  j["states"] = {{"alert", states[0]}, {"transition", states[1]}, {"drowsy", states[2]}};
  j["split"] = {{"train", corpus.split.train_ids().size()},
                {"val", corpus.split.val_ids().size()},
                {"test", corpus.split.test_ids().size()}};
  return j.dump(2);
}

data::Corpus load_corpus_checked(const ExperimentConfig& config) {
  data::Corpus corpus = data::read_corpus(config.corpus_dir);
  if (corpus.channel_names != config.channels)
    throw ConfigError("config: corpus channels disagree with the channel list");
  if (corpus.sampling_rate_hz != config.sampling_rate_hz)
    throw ConfigError("config: corpus sampling_rate_hz disagrees with the config");
  const dsp::WelchConfig& a = corpus.welch;
  const dsp::WelchConfig& b = config.welch;
  if (a.segment_len != b.segment_len || a.overlap != b.overlap || a.fft_len != b.fft_len ||
      a.window != b.window || a.f_lo_hz != b.f_lo_hz || a.f_hi_hz != b.f_hi_hz)
    throw ConfigError("config: corpus welch settings disagree with the config");
  if (corpus.trial_samples != config.timing().samples(config.sampling_rate_hz))
    throw ConfigError("config: corpus window length disagrees with window_seconds");
  return corpus;
}

model::MemModel load_model_checked(const ExperimentConfig& config,
                                   const std::string& checkpoint_path, bool force,
                                   train::CheckpointHeader* header_out = nullptr) {
  train::CheckpointHeader header;
  model::MemModel model = train::load_checkpoint(checkpoint_path, &header);
  if (model.config().n_channels != static_cast<int>(config.channels.size()) ||
      model.config().n_bins != config.welch.retained_bins(config.sampling_rate_hz))
    throw MismatchError("checkpoint: token grid does not fit the configured corpus layout");
  const uint64_t expected = config.config_hash();
  if (header.config_hash != expected) {
    const std::string msg = "checkpoint config hash " + util::hex64(header.config_hash) +
                            " differs from the current config " + util::hex64(expected);
    if (!force) throw MismatchError("checkpoint: " + msg + " (pass force to override)");
    log::warn("checkpoint: " + msg + "; proceeding under force");
  }
  if (header_out) *header_out = header;
  return model;
}

std::vector<int> test_ids_checked(const data::Corpus& corpus) {
  std::vector<int> ids = corpus.split.test_ids();
  if (ids.empty()) throw ConfigError("eval: test split is empty");
  return ids;
}

}  // namespace

std::string run_synth(const ExperimentConfig& config) {
  config.validate();
  const data::Corpus corpus = data::synthesize_corpus(config.synth_config());
  data::write_corpus(corpus, config.corpus_dir);
  const std::string summary = corpus_summary(corpus, config);
  write_text((fsys::path(config.corpus_dir) / "summary.json").string(), summary);
  return summary;
}

std::string run_prepare(const ExperimentConfig& config, const std::string& events_csv,
                        const std::string& recording_sidecar) {
  config.validate();
  const data::Recording recording = data::read_recording(recording_sidecar);
  if (recording.channel_names != config.channels)
    throw ConfigError("config: recording channels disagree with the channel list");
  if (recording.sampling_rate_hz != config.sampling_rate_hz)
    throw ConfigError("config: recording sampling_rate_hz disagrees with the config");

  std::vector<data::DrivingEvent> events;
  int dropped = 0;
  for (data::DrivingEvent& e : data::parse_events_csv(events_csv)) {
    if (e.subject_id == recording.subject_id)
      events.push_back(std::move(e));
    else
      ++dropped;
  }
  if (dropped > 0)
    log::warn("prepare: dropped " + std::to_string(dropped) + " events for other subjects");
  if (events.empty())
    throw ConfigError("prepare: no events for subject '" + recording.subject_id + "'");
  std::stable_sort(events.begin(), events.end(),
                   [](const data::DrivingEvent& a, const data::DrivingEvent& b) {
                     return a.deviation_onset_s < b.deviation_onset_s;
                   });

  data::CorpusBuildOptions options;
  options.welch = config.welch;
  options.timing = config.timing();
  // Recorded data is scarce: keep every extractable straight window instead of
  // rebalancing the class mix the way the synthesizer does.
  options.balance_straights = false;
  options.split_fractions = config.split_fractions;
  options.seed = config.seed;
  const data::Corpus corpus = data::build_corpus({recording}, {events}, options);
  data::write_corpus(corpus, config.corpus_dir);
  const std::string summary = corpus_summary(corpus, config);
  write_text((fsys::path(config.corpus_dir) / "summary.json").string(), summary);
  return summary;
}

std::string run_train(const ExperimentConfig& config) {
  config.validate();
  const data::Corpus corpus = load_corpus_checked(config);
  const std::vector<data::PreparedTrial> trials = data::prepare_features(corpus);

  fsys::create_directories(config.output_dir);
  model::MemModel model(config.model, config.seed);
  train::TrainConfig tc = config.train;
  tc.seed = config.seed;

  train::FitOptions options;
  options.log_path = (fsys::path(config.output_dir) / "train_log.jsonl").string();
  options.checkpoint_dir = config.output_dir;
  const train::FitResult result = train::fit(model, trials, corpus.split, tc, options);

  train::CheckpointHeader header;
  header.config = model.config();
  header.config_hash = config.config_hash();
  header.channel_names = corpus.channel_names;
  header.bin_freqs_hz = corpus.bin_freqs_hz;
  train::save_checkpoint((fsys::path(config.output_dir) / "model.ckpt").string(), model, header);

  json j;
  j["config_hash"] = util::hex64(config.config_hash());
  j["epochs_run"] = result.history.size();
  j["best_epoch"] = result.best_epoch;
  j["best_val_acc"] = result.best_val_acc;
  j["final_train_acc"] = result.history.empty() ? 0.0 : result.history.back().train_acc;
  j["checkpoint"] = "model.ckpt";
  j["log"] = "train_log.jsonl";
  const std::string text = j.dump(2);
  write_text((fsys::path(config.output_dir) / "train_result.json").string(), text);
  return text;
}

std::string run_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
                     bool force) {
  config.validate();
  const data::Corpus corpus = load_corpus_checked(config);
  const std::vector<data::PreparedTrial> trials = data::prepare_features(corpus);
  const model::MemModel model = load_model_checked(config, checkpoint_path, force);
  const std::vector<int> ids = test_ids_checked(corpus);

  eval::EvalOptions options;
  options.mask_ratio = config.eval_mask_ratio;
  options.seed = config.seed;
  const eval::MetricsReport report = eval::evaluate(model, trials, ids, options);

  json j;
  j["config_hash"] = util::hex64(config.config_hash());
  j["checkpoint"] = checkpoint_path;
  j["strategy"] = mask::to_string(model.config().strategy);
  j["mask_ratio"] = options.mask_ratio;
  j["seed"] = options.seed;
  j["report"] = json::parse(report.to_json());
  const std::string text = j.dump(2);
  fsys::create_directories(config.output_dir);
  write_text((fsys::path(config.output_dir) / "metrics.json").string(), text);
  write_text((fsys::path(config.output_dir) / "confusion.csv").string(),
             report.confusion_csv());
  return text;
}

std::string run_robustness(const ExperimentConfig& config, const std::string& checkpoint_path,
                           bool force) {
  config.validate();
  const data::Corpus corpus = load_corpus_checked(config);
  const std::vector<data::PreparedTrial> trials = data::prepare_features(corpus);
  const model::MemModel model = load_model_checked(config, checkpoint_path, force);
  const std::vector<int> ids = test_ids_checked(corpus);

  const eval::RobustnessCurve curve =
      eval::robustness_sweep(model, trials, ids, config.sweep_ratios, config.sweep_seeds);
  const std::string csv = curve.to_csv();
  fsys::create_directories(config.output_dir);
  write_text((fsys::path(config.output_dir) / "robustness.csv").string(), csv);

  json j;
  j["config_hash"] = util::hex64(config.config_hash());
  j["checkpoint"] = checkpoint_path;
  j["strategy"] = mask::to_string(curve.strategy);
  j["ratios"] = curve.ratios;
  j["seeds"] = curve.seeds;
  j["mean_accuracy"] = curve.mean_accuracy;
  j["csv"] = "robustness.csv";
  write_text((fsys::path(config.output_dir) / "robustness.json").string(), j.dump(2));
  return csv;
}

std::string run_reconstruct(const ExperimentConfig& config, const std::string& checkpoint_path,
                            bool force) {
  config.validate();
  const data::Corpus corpus = load_corpus_checked(config);
  const std::vector<data::PreparedTrial> trials = data::prepare_features(corpus);
  const model::MemModel model = load_model_checked(config, checkpoint_path, force);

  std::vector<int> ids = config.export_ids;
  if (ids.empty()) {
    const std::vector<int> test = test_ids_checked(corpus);
    for (size_t i = 0; i < test.size() && i < 2; ++i) ids.push_back(test[i]);
  }

  const std::string export_dir = (fsys::path(config.output_dir) / "reconstructions").string();
  const auto exports = eval::export_reconstructions(model, trials, ids, config.export_ratios,
                                                    export_dir, config.seed);
  json rows = json::array();
  for (const eval::ReconstructionExport& e : exports)
    rows.push_back({{"trial_id", e.trial_id},
                    {"ratio", e.ratio},
                    {"base", fsys::path(e.base).filename().string()},
                    {"masked", e.masked}});
  json j;
  j["config_hash"] = util::hex64(config.config_hash());
  j["checkpoint"] = checkpoint_path;
  j["strategy"] = mask::to_string(model.config().strategy);
  j["export_dir"] = "reconstructions";
  j["exports"] = rows;
  const std::string text = j.dump(2);
  write_text((fsys::path(config.output_dir) / "reconstructions.json").string(), text);
  return text;
}

std::string run_compare(const ExperimentConfig& config) {
  config.validate();
  const data::Corpus corpus = load_corpus_checked(config);
  const std::vector<data::PreparedTrial> trials = data::prepare_features(corpus);
  train::TrainConfig tc = config.train;
  tc.seed = config.seed;

  const auto rows = eval::compare_strategies(trials, corpus.split, config.model, tc);
  const std::string csv = eval::comparison_csv(rows);
  fsys::create_directories(config.output_dir);
  write_text((fsys::path(config.output_dir) / "comparison.csv").string(), csv);

  json row_list = json::array();
  for (const eval::StrategyComparisonRow& row : rows)
    row_list.push_back({{"train_states", row.train_states},
                        {"test_state", row.test_state},
                        {"strategy", mask::to_string(row.strategy)},
                        {"report", json::parse(row.report.to_json())}});
  json j;
  j["config_hash"] = util::hex64(config.config_hash());
  j["rows"] = std::move(row_list);
  j["csv"] = "comparison.csv";
  write_text((fsys::path(config.output_dir) / "comparison.json").string(), j.dump(2));
  return csv;
}

}  // namespace mem::pipe
