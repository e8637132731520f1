#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "masking.hpp"
#include "util.hpp"

namespace mem::pipe {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const char* section) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (allowed.find(it.key()) == allowed.end())
      throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " + section);
}

json welch_to_json(const dsp::WelchConfig& w) {
  json j;
  j["segment_len"] = w.segment_len;
  j["overlap"] = w.overlap;
  j["fft_len"] = w.fft_len;
  j["window"] = w.window;
  j["f_lo_hz"] = w.f_lo_hz;
  j["f_hi_hz"] = w.f_hi_hz;
  return j;
}

json schedule_to_json(const train::CurriculumSchedule& s) {
  json arr = json::array();
  for (const auto& st : s.stages) arr.push_back({{"ratio", st.ratio}, {"epochs", st.epochs}});
  return arr;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ExperimentConfig cfg;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw FormatError("config: document must be a JSON object");
    check_keys(j,
               {"corpus_dir", "output_dir", "seed", "channels", "sampling_rate_hz",
                "window_seconds", "window_offset_seconds", "split_fractions", "welch", "model",
                "train", "synth", "eval"},
               "the top level");

    cfg.corpus_dir = j.value("corpus_dir", cfg.corpus_dir);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.channels = j.value("channels", cfg.channels);
    cfg.sampling_rate_hz = j.value("sampling_rate_hz", cfg.sampling_rate_hz);
    cfg.window_seconds = j.value("window_seconds", cfg.window_seconds);
    cfg.window_offset_seconds = j.value("window_offset_seconds", cfg.window_offset_seconds);
    if (j.contains("split_fractions")) {
      const auto fr = j.at("split_fractions").get<std::vector<double>>();
      if (fr.size() != 3) throw ConfigError("config: split_fractions needs 3 entries");
      std::copy(fr.begin(), fr.end(), cfg.split_fractions.begin());
    }

    if (j.contains("welch")) {
      const json& w = j.at("welch");
      check_keys(w, {"segment_len", "overlap", "fft_len", "window", "f_lo_hz", "f_hi_hz"},
                 "'welch'");
      cfg.welch.segment_len = w.value("segment_len", cfg.welch.segment_len);
      cfg.welch.overlap = w.value("overlap", cfg.welch.overlap);
      cfg.welch.fft_len = w.value("fft_len", cfg.welch.fft_len);
      cfg.welch.window = w.value("window", cfg.welch.window);
      cfg.welch.f_lo_hz = w.value("f_lo_hz", cfg.welch.f_lo_hz);
      cfg.welch.f_hi_hz = w.value("f_hi_hz", cfg.welch.f_hi_hz);
    }

    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m,
                 {"embed_size", "encoder_blocks", "decoder_blocks", "attention_heads",
                  "feedforward_width", "strategy", "num_classes", "dropout", "positional",
                  "reconstruct_masked_only"},
                 "'model'");
      cfg.model.embed_size = m.value("embed_size", cfg.model.embed_size);
      cfg.model.encoder_blocks = m.value("encoder_blocks", cfg.model.encoder_blocks);
      cfg.model.decoder_blocks = m.value("decoder_blocks", cfg.model.decoder_blocks);
      cfg.model.attention_heads = m.value("attention_heads", cfg.model.attention_heads);
      cfg.model.feedforward_width = m.value("feedforward_width", cfg.model.feedforward_width);
      if (m.contains("strategy"))
        cfg.model.strategy = mask::strategy_from_string(m.at("strategy").get<std::string>());
      cfg.model.num_classes = m.value("num_classes", cfg.model.num_classes);
      cfg.model.dropout = m.value("dropout", cfg.model.dropout);
      cfg.model.positional = m.value("positional", cfg.model.positional);
      cfg.model.reconstruct_masked_only =
          m.value("reconstruct_masked_only", cfg.model.reconstruct_masked_only);
    }

    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t,
                 {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "alpha",
                  "max_epochs", "checkpoint_every", "schedule"},
                 "'train'");
      cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
      cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
      cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
      cfg.train.epsilon = t.value("epsilon", cfg.train.epsilon);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.alpha = t.value("alpha", cfg.train.alpha);
      cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
      cfg.train.checkpoint_every = t.value("checkpoint_every", cfg.train.checkpoint_every);
      if (t.contains("schedule")) {
        cfg.train.schedule.stages.clear();
        for (const json& st : t.at("schedule")) {
          check_keys(st, {"ratio", "epochs"}, "'train.schedule'");
          cfg.train.schedule.stages.push_back(
              {st.at("ratio").get<double>(), st.at("epochs").get<int>()});
        }
      }
    }

    if (j.contains("synth")) {
      const json& s = j.at("synth");
      check_keys(s,
                 {"subjects", "turning_events", "noise_amplitude", "burst_amplitude",
                  "burst_freq_hz"},
                 "'synth'");
      cfg.synth_subjects = s.value("subjects", cfg.synth_subjects);
      cfg.synth_turning_events = s.value("turning_events", cfg.synth_turning_events);
      cfg.synth_noise_amplitude = s.value("noise_amplitude", cfg.synth_noise_amplitude);
      cfg.synth_burst_amplitude = s.value("burst_amplitude", cfg.synth_burst_amplitude);
      cfg.synth_burst_freq_hz = s.value("burst_freq_hz", cfg.synth_burst_freq_hz);
    }

    if (j.contains("eval")) {
      const json& e = j.at("eval");
      check_keys(e, {"mask_ratio", "sweep_ratios", "sweep_seeds", "export_ids", "export_ratios"},
                 "'eval'");
      cfg.eval_mask_ratio = e.value("mask_ratio", cfg.eval_mask_ratio);
      cfg.sweep_ratios = e.value("sweep_ratios", cfg.sweep_ratios);
      cfg.sweep_seeds = e.value("sweep_seeds", cfg.sweep_seeds);
      cfg.export_ids = e.value("export_ids", cfg.export_ids);
      cfg.export_ratios = e.value("export_ratios", cfg.export_ratios);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: malformed JSON: ") + e.what());
  }

  // Token-grid dimensions are derived, never configured.
  cfg.welch.validate(cfg.sampling_rate_hz);
  cfg.model.n_channels = static_cast<int>(cfg.channels.size());
  cfg.model.n_bins = cfg.welch.retained_bins(cfg.sampling_rate_hz);
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["corpus_dir"] = corpus_dir;
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  j["channels"] = channels;
  j["sampling_rate_hz"] = sampling_rate_hz;
  j["window_seconds"] = window_seconds;
  j["window_offset_seconds"] = window_offset_seconds;
  j["split_fractions"] = std::vector<double>(split_fractions.begin(), split_fractions.end());
  j["welch"] = welch_to_json(welch);
  j["model"] = {{"embed_size", model.embed_size},
                {"encoder_blocks", model.encoder_blocks},
                {"decoder_blocks", model.decoder_blocks},
                {"attention_heads", model.attention_heads},
                {"feedforward_width", model.feedforward_width},
                {"strategy", mask::to_string(model.strategy)},
                {"num_classes", model.num_classes},
                {"dropout", model.dropout},
                {"positional", model.positional},
                {"reconstruct_masked_only", model.reconstruct_masked_only}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"epsilon", train.epsilon},
                {"batch_size", train.batch_size},
                {"alpha", train.alpha},
                {"max_epochs", train.max_epochs},
                {"checkpoint_every", train.checkpoint_every},
                {"schedule", schedule_to_json(train.schedule)}};
  j["synth"] = {{"subjects", synth_subjects},
                {"turning_events", synth_turning_events},
                {"noise_amplitude", synth_noise_amplitude},
                {"burst_amplitude", synth_burst_amplitude},
                {"burst_freq_hz", synth_burst_freq_hz}};
  j["eval"] = {{"mask_ratio", eval_mask_ratio},
               {"sweep_ratios", sweep_ratios},
               {"sweep_seeds", sweep_seeds},
               {"export_ids", export_ids},
               {"export_ratios", export_ratios}};
  return j.dump(2);
}

void ExperimentConfig::validate() const {
  if (corpus_dir.empty()) throw ConfigError("config: corpus_dir must not be empty");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  if (channels.empty()) throw ConfigError("config: channels must not be empty");
  std::set<std::string> unique(channels.begin(), channels.end());
  if (unique.size() != channels.size())
    throw ConfigError("config: channels contains duplicates");
  if (!(sampling_rate_hz > 0.0)) throw ConfigError("config: sampling_rate_hz must be positive");
  if (!(window_seconds > 0.0)) throw ConfigError("config: window_seconds must be positive");
  if (!(window_offset_seconds >= 0.0))
    throw ConfigError("config: window_offset_seconds must be >= 0");
  double total = 0.0;
  for (double f : split_fractions) {
    if (!(f > 0.0)) throw ConfigError("config: split_fractions must be positive");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9)
    throw ConfigError("config: split_fractions must sum to 1");
  welch.validate(sampling_rate_hz);
  model.validate();
  train.validate();
  if (model.n_channels != static_cast<int>(channels.size()))
    throw ContractError("config: model channel count lost sync with the channel list");
  if (model.n_bins != welch.retained_bins(sampling_rate_hz))
    throw ContractError("config: model bin count lost sync with the spectral grid");
  synth_config().validate();
  if (!(eval_mask_ratio >= 0.0 && eval_mask_ratio <= 1.0))
    throw ConfigError("config: eval.mask_ratio must lie in [0, 1]");
  for (double r : sweep_ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("config: eval.sweep_ratios must lie in [0, 1]");
  for (double r : export_ratios)
    if (!(r >= 0.0 && r <= 1.0))
      throw ConfigError("config: eval.export_ratios must lie in [0, 1]");
  if (sweep_seeds.empty()) throw ConfigError("config: eval.sweep_seeds must not be empty");
}

uint64_t ExperimentConfig::config_hash() const {
  json j;
  j["channels"] = channels;
  j["sampling_rate_hz"] = sampling_rate_hz;
  j["window_seconds"] = window_seconds;
  j["welch"] = welch_to_json(welch);
  j["model"] = json::parse(model.to_json());
  return util::fnv1a64(j.dump());
}

data::WindowTiming ExperimentConfig::timing() const {
  data::WindowTiming t;
  t.window_seconds = window_seconds;
  t.offset_seconds = window_offset_seconds;
  return t;
}

data::SynthConfig ExperimentConfig::synth_config() const {
  data::SynthConfig sc;
  sc.channel_names = channels;
  sc.sampling_rate_hz = sampling_rate_hz;
  sc.n_subjects = synth_subjects;
  sc.total_turning_events = synth_turning_events;
  sc.noise_amplitude = synth_noise_amplitude;
  sc.burst_amplitude = synth_burst_amplitude;
  sc.burst_freq_hz = synth_burst_freq_hz;
  sc.welch = welch;
  sc.timing = timing();
  sc.split_fractions = split_fractions;
  sc.seed = seed;
  return sc;
}

}  // namespace mem::pipe
