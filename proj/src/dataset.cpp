#include "dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace mem::data {

namespace {

void round_to_storage_precision(nn::Array& a) {
  for (double& v : a.data) v = static_cast<double>(static_cast<float>(v));
}

nn::Array copy_window(const nn::Array& samples, int start, int len) {
  const int n_ch = samples.rows();
  nn::Array out({n_ch, len});
  for (int ch = 0; ch < n_ch; ++ch)
    for (int i = 0; i < len; ++i) out.at(ch, i) = samples.at(ch, start + i);
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

const char* to_string(Intention v) {
  switch (v) {
    case Intention::kLeft: return "left";
    case Intention::kRight: return "right";
    case Intention::kStraight: return "straight";
  }
  throw ContractError("to_string: bad intention value");
}

const char* to_string(Vigilance v) {
  switch (v) {
    case Vigilance::kAlert: return "alert";
    case Vigilance::kTransition: return "transition";
    case Vigilance::kDrowsy: return "drowsy";
  }
  throw ContractError("to_string: bad vigilance value");
}

Intention intention_from_string(const std::string& s) {
  const std::string t = lower(s);
  if (t == "left") return Intention::kLeft;
  if (t == "right") return Intention::kRight;
  if (t == "straight") return Intention::kStraight;
  throw ConfigError("unknown intention '" + s + "'");
}

Vigilance vigilance_from_string(const std::string& s) {
  const std::string t = lower(s);
  if (t == "alert") return Vigilance::kAlert;
  if (t == "transition") return Vigilance::kTransition;
  if (t == "drowsy") return Vigilance::kDrowsy;
  throw ConfigError("unknown vigilance state '" + s + "'");
}

std::vector<std::string> default_channel_names() {
  return {"C3", "CZ", "C4", "CP3", "CPZ", "CP4", "P3", "PZ", "P4", "O1", "OZ", "O2"};
}

void DrivingEvent::validate() const {
  if (!(deviation_onset_s < response_onset_s))
    throw ConfigError("event: deviation onset must precede response onset");
  if (!(response_onset_s <= response_offset_s))
    throw ConfigError("event: response onset must not follow response offset");
  if (steering_direction == Intention::kStraight)
    throw ConfigError("event: steering direction must be left or right");
}

int WindowTiming::samples(double fs) const {
  const int n = static_cast<int>(std::llround(window_seconds * fs));
  if (n <= 0) throw ConfigError("window duration too short for the sampling rate");
  return n;
}

// ---------------------------------------------------------------------------
// window extraction
// ---------------------------------------------------------------------------

namespace {

bool cut_window(const Recording& rec, double start_s, int len, int event_index,
                const char* kind, nn::Array& out) {
  const int64_t start = std::llround(start_s * rec.sampling_rate_hz);
  if (start < 0 || start + len > rec.total_samples()) {
    log::warn("event " + std::to_string(event_index) + " (" + rec.subject_id + "): " + kind +
              " window [" + std::to_string(start_s) + "s, ...) outside the recording; skipped");
    return false;
  }
  out = copy_window(rec.samples, static_cast<int>(start), len);
  return true;
}

}  // namespace

std::vector<ExtractedWindow> extract_intention_windows(const Recording& rec,
                                                       const std::vector<DrivingEvent>& events,
                                                       const WindowTiming& timing) {
  const int len = timing.samples(rec.sampling_rate_hz);
  std::vector<ExtractedWindow> out;
  for (size_t i = 0; i < events.size(); ++i) {
    const DrivingEvent& ev = events[i];
    ev.validate();
    if (ev.subject_id != rec.subject_id)
      throw ContractError("extract: event subject '" + ev.subject_id +
                          "' does not match recording subject '" + rec.subject_id + "'");

    ExtractedWindow turn;
    turn.start_s = ev.response_onset_s - timing.window_seconds;
    turn.end_s = ev.response_onset_s;
    if (cut_window(rec, turn.start_s, len, static_cast<int>(i), "turning", turn.raw)) {
      turn.intention = ev.steering_direction;
      turn.subject_id = rec.subject_id;
      turn.event_index = static_cast<int>(i);
      out.push_back(std::move(turn));
    }

    ExtractedWindow straight;
    straight.start_s = ev.response_offset_s + timing.offset_seconds;
    straight.end_s = straight.start_s + timing.window_seconds;
    if (cut_window(rec, straight.start_s, len, static_cast<int>(i), "straight", straight.raw)) {
      straight.intention = Intention::kStraight;
      straight.subject_id = rec.subject_id;
      straight.event_index = static_cast<int>(i);
      out.push_back(std::move(straight));
    }
  }
  return out;
}

std::vector<ExtractedWindow> extract_reference_windows(const Recording& rec,
                                                       const std::vector<DrivingEvent>& events,
                                                       const WindowTiming& timing) {
  const int len = timing.samples(rec.sampling_rate_hz);
  std::vector<ExtractedWindow> out;
  for (size_t i = 0; i < events.size(); ++i) {
    const DrivingEvent& ev = events[i];
    ev.validate();
    if (ev.subject_id != rec.subject_id)
      throw ContractError("extract: event subject '" + ev.subject_id +
                          "' does not match recording subject '" + rec.subject_id + "'");
    ExtractedWindow ref;
    ref.start_s = ev.deviation_onset_s - timing.offset_seconds - timing.window_seconds;
    ref.end_s = ev.deviation_onset_s - timing.offset_seconds;
    if (cut_window(rec, ref.start_s, len, static_cast<int>(i), "reference", ref.raw)) {
      ref.intention = Intention::kStraight;
      ref.subject_id = rec.subject_id;
      ref.event_index = static_cast<int>(i);
      out.push_back(std::move(ref));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// vigilance labeling
// ---------------------------------------------------------------------------

double alert_reaction_time(const std::vector<double>& local_rts) {
  if (local_rts.empty()) throw ContractError("alert_reaction_time: no reaction times");
  if (local_rts.size() < 20)
    log::warn("only " + std::to_string(local_rts.size()) +
              " reaction times; the 5th-percentile alert threshold may be unstable");
  return util::percentile(local_rts, 5.0);
}

Vigilance classify_reaction_time(double local_rt, double alert_rt) {
  if (local_rt < 1.5 * alert_rt) return Vigilance::kAlert;
  if (local_rt > 2.5 * alert_rt) return Vigilance::kDrowsy;
  return Vigilance::kTransition;
}

std::vector<Vigilance> label_vigilance(const std::vector<DrivingEvent>& events) {
  if (events.empty()) throw ContractError("label_vigilance: no events");
  std::map<std::string, std::vector<double>> rts_by_subject;
  for (const DrivingEvent& ev : events) {
    ev.validate();
    rts_by_subject[ev.subject_id].push_back(ev.response_onset_s - ev.deviation_onset_s);
  }
  std::map<std::string, double> alert_by_subject;
  for (const auto& [subject, rts] : rts_by_subject)
    alert_by_subject[subject] = alert_reaction_time(rts);

  std::vector<Vigilance> labels;
  labels.reserve(events.size());
  for (const DrivingEvent& ev : events)
    labels.push_back(classify_reaction_time(ev.response_onset_s - ev.deviation_onset_s,
                                            alert_by_subject[ev.subject_id]));
  return labels;
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

std::vector<int> SplitManifest::train_ids() const {
  std::vector<int> ids;
  for (const auto& v : train) ids.insert(ids.end(), v.begin(), v.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> SplitManifest::val_ids() const {
  std::vector<int> ids;
  for (const auto& v : val) ids.insert(ids.end(), v.begin(), v.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> SplitManifest::test_ids() const {
  std::vector<int> ids;
  for (const auto& v : test) ids.insert(ids.end(), v.begin(), v.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

SplitManifest split_dataset(const std::vector<Vigilance>& states,
                            std::array<double, 3> fractions, uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (!(fractions[0] > 0 && fractions[1] > 0 && fractions[2] > 0))
    throw ConfigError("split: all fractions must be positive");
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

  SplitManifest manifest;
  manifest.fractions = fractions;
  manifest.seed = seed;
  for (int s = 0; s < 3; ++s) {
    std::vector<int> ids;
    for (size_t i = 0; i < states.size(); ++i)
      if (static_cast<int>(states[i]) == s) ids.push_back(static_cast<int>(i));
    if (ids.empty()) continue;
    if (ids.size() < 3) {
      log::warn(std::string("stratum '") + to_string(static_cast<Vigilance>(s)) + "' has only " +
                std::to_string(ids.size()) + " trials; assigning all to train");
      manifest.train[s] = ids;
      continue;
    }
    util::Rng rng(util::derive_seed(seed, util::kSeedSplit, static_cast<uint64_t>(s)));
    rng.shuffle(ids);
    const size_t n = ids.size();
    const size_t n_val = static_cast<size_t>(std::floor(fractions[1] * static_cast<double>(n)));
    const size_t n_test = static_cast<size_t>(std::floor(fractions[2] * static_cast<double>(n)));
    manifest.val[s].assign(ids.begin(), ids.begin() + n_val);
    manifest.test[s].assign(ids.begin() + n_val, ids.begin() + n_val + n_test);
    manifest.train[s].assign(ids.begin() + n_val + n_test, ids.end());
    std::sort(manifest.val[s].begin(), manifest.val[s].end());
    std::sort(manifest.test[s].begin(), manifest.test[s].end());
    std::sort(manifest.train[s].begin(), manifest.train[s].end());
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// corpus assembly
// ---------------------------------------------------------------------------

Corpus build_corpus(const std::vector<Recording>& recordings,
                    const std::vector<std::vector<DrivingEvent>>& events,
                    const CorpusBuildOptions& options) {
  if (recordings.size() != events.size())
    throw ShapeError("build_corpus: one event list per recording required");
  if (recordings.empty()) throw ConfigError("build_corpus: no recordings");
  const double fs = recordings[0].sampling_rate_hz;
  options.welch.validate(fs);
  const std::vector<std::string>& channels = recordings[0].channel_names;
  for (const Recording& rec : recordings) {
    if (rec.channel_names != channels)
      throw ConfigError("build_corpus: recordings disagree on channel names");
    if (rec.sampling_rate_hz != fs)
      throw ConfigError("build_corpus: recordings disagree on sampling rate");
    if (rec.channels() != static_cast<int>(channels.size()))
      throw ShapeError("build_corpus: sample rows do not match channel names");
  }

  // One concatenated event list, labeled per subject.
  std::vector<DrivingEvent> all_events;
  std::vector<size_t> event_offsets;
  for (const auto& evs : events) {
    event_offsets.push_back(all_events.size());
    all_events.insert(all_events.end(), evs.begin(), evs.end());
  }
  const std::vector<Vigilance> labels = label_vigilance(all_events);

  std::vector<StoredTrial> turning;
  std::vector<StoredTrial> straight;
  std::vector<StoredWindow> references;
  for (size_t r = 0; r < recordings.size(); ++r) {
    for (ExtractedWindow& w : extract_intention_windows(recordings[r], events[r], options.timing)) {
      StoredTrial trial;
      trial.subject_id = w.subject_id;
      trial.start_s = w.start_s;
      trial.end_s = w.end_s;
      trial.raw = std::move(w.raw);
      round_to_storage_precision(trial.raw);
      trial.intention = w.intention;
      trial.vigilance = labels[event_offsets[r] + w.event_index];
      (trial.intention == Intention::kStraight ? straight : turning).push_back(std::move(trial));
    }
    for (ExtractedWindow& w : extract_reference_windows(recordings[r], events[r], options.timing)) {
      StoredWindow ref;
      ref.subject_id = w.subject_id;
      ref.start_s = w.start_s;
      ref.end_s = w.end_s;
      ref.raw = std::move(w.raw);
      round_to_storage_precision(ref.raw);
      references.push_back(std::move(ref));
    }
  }

  if (options.balance_straights && !straight.empty()) {
    const size_t target =
        static_cast<size_t>(std::llround(static_cast<double>(turning.size()) / 2.0));
    if (straight.size() > target) {
      std::vector<int> keep(straight.size());
      for (size_t i = 0; i < keep.size(); ++i) keep[i] = static_cast<int>(i);
      util::Rng rng(util::derive_seed(options.seed, util::kSeedBalance));
      rng.shuffle(keep);
      keep.resize(target);
      std::sort(keep.begin(), keep.end());
      std::vector<StoredTrial> kept;
      kept.reserve(target);
      for (int idx : keep) kept.push_back(std::move(straight[idx]));
      straight = std::move(kept);
    }
  }

  Corpus corpus;
  corpus.channel_names = channels;
  corpus.sampling_rate_hz = fs;
  corpus.welch = options.welch;
  corpus.bin_freqs_hz = options.welch.bin_grid(fs);
  corpus.trial_samples = options.timing.samples(fs);
  corpus.seed = options.seed;
  corpus.trials = std::move(turning);
  corpus.trials.insert(corpus.trials.end(), std::make_move_iterator(straight.begin()),
                       std::make_move_iterator(straight.end()));
  corpus.references = std::move(references);

  std::vector<Vigilance> trial_states;
  trial_states.reserve(corpus.trials.size());
  for (const StoredTrial& t : corpus.trials) trial_states.push_back(t.vigilance);
  corpus.split = split_dataset(trial_states, options.split_fractions, options.seed);
  return corpus;
}

// ---------------------------------------------------------------------------
// synthesis
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  if (channel_names.empty()) throw ConfigError("synth: channel list is empty");
  for (size_t i = 0; i < channel_names.size(); ++i)
    for (size_t j = i + 1; j < channel_names.size(); ++j)
      if (channel_names[i] == channel_names[j])
        throw ConfigError("synth: duplicate channel name '" + channel_names[i] + "'");
  if (sampling_rate_hz <= 0) throw ConfigError("synth: sampling rate must be positive");
  if (n_subjects < 1) throw ConfigError("synth: need at least one subject");
  if (total_turning_events < 1) throw ConfigError("synth: need at least one event");
  if (noise_amplitude < 0 || burst_amplitude < 0)
    throw ConfigError("synth: amplitudes must be nonnegative");
  if (burst_freq_hz <= 0 || burst_freq_hz >= sampling_rate_hz / 2)
    throw ConfigError("synth: burst frequency must lie below Nyquist");
  welch.validate(sampling_rate_hz);
  if (burst_amplitude > 0) {
    for (const char* name : {"C3", "CP3", "P3", "C4", "CP4", "P4"})
      if (std::find(channel_names.begin(), channel_names.end(), name) == channel_names.end())
        throw ConfigError(std::string("synth: burst target channel '") + name +
                          "' missing from the channel list");
  }
}

namespace {

int channel_index(const std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown channel name '" + name + "'");
  return static_cast<int>(it - names.begin());
}

int events_for_subject(const SynthConfig& cfg, int subject_index) {
  const int base = cfg.total_turning_events / cfg.n_subjects;
  return base + (subject_index < cfg.total_turning_events % cfg.n_subjects ? 1 : 0);
}

int event_offset_for_subject(const SynthConfig& cfg, int subject_index) {
  int off = 0;
  for (int s = 0; s < subject_index; ++s) off += events_for_subject(cfg, s);
  return off;
}

}  // namespace

Recording synthesize_recording(const SynthConfig& cfg, int subject_index,
                               std::vector<DrivingEvent>& events_out) {
  cfg.validate();
  if (subject_index < 0 || subject_index >= cfg.n_subjects)
    throw ContractError("synthesize_recording: subject index out of range");
  util::Rng rng(util::derive_seed(cfg.seed, util::kSeedSynth, subject_index));

  const double gain = std::pow(10.0, (rng.uniform() - 0.5) * 0.3);
  const int n_events = events_for_subject(cfg, subject_index);
  const int global_offset = event_offset_for_subject(cfg, subject_index);
  const std::string subject = "S" + std::to_string(subject_index + 1);

  // Reaction-time bands chosen so each subject shows all three vigilance
  // states: the 5th percentile lands in the fast band, putting 1.5x and 2.5x
  // thresholds between the bands.
  events_out.clear();
  const double spacing = 8.0;
  for (int i = 0; i < n_events; ++i) {
    DrivingEvent ev;
    ev.subject_id = subject;
    ev.deviation_onset_s = 10.0 + i * spacing;
    double rt;
    switch (i % 5) {
      case 3: rt = rng.uniform(0.85, 1.15); break;   // transition band
      case 4: rt = rng.uniform(1.40, 2.00); break;   // drowsy band
      default: rt = rng.uniform(0.50, 0.70); break;  // alert band
    }
    ev.response_onset_s = ev.deviation_onset_s + rt;
    ev.response_offset_s = ev.response_onset_s + rng.uniform(1.0, 2.0);
    ev.steering_direction =
        ((global_offset + i) % 2 == 0) ? Intention::kLeft : Intention::kRight;
    events_out.push_back(ev);
  }

  const double session_seconds = 10.0 + n_events * spacing + 10.0;
  const int total = static_cast<int>(std::llround(session_seconds * cfg.sampling_rate_hz));
  const int n_ch = static_cast<int>(cfg.channel_names.size());

  Recording rec;
  rec.subject_id = subject;
  rec.channel_names = cfg.channel_names;
  rec.sampling_rate_hz = cfg.sampling_rate_hz;
  rec.samples = nn::Array({n_ch, total});

  // Pink-noise base per channel (three-pole filter over white noise).
  for (int ch = 0; ch < n_ch; ++ch) {
    double b0 = 0.0, b1 = 0.0, b2 = 0.0;
    for (int t = 0; t < total; ++t) {
      const double white = rng.normal();
      b0 = 0.99765 * b0 + white * 0.0990460;
      b1 = 0.96300 * b1 + white * 0.2965164;
      b2 = 0.57000 * b2 + white * 1.0526913;
      rec.samples.at(ch, t) = cfg.noise_amplitude * (b0 + b1 + b2 + white * 0.1848);
    }
  }

  // Steering-dependent alpha bursts over the turning window, lateralized to
  // the hemisphere opposite the upcoming action. The sites only need to exist
  // when bursts are actually injected.
  std::vector<int> left_burst, right_burst;
  if (cfg.burst_amplitude != 0.0) {
    left_burst = {channel_index(cfg.channel_names, "C4"),
                  channel_index(cfg.channel_names, "CP4"),
                  channel_index(cfg.channel_names, "P4")};
    right_burst = {channel_index(cfg.channel_names, "C3"),
                   channel_index(cfg.channel_names, "CP3"),
                   channel_index(cfg.channel_names, "P3")};
  }
  const double two_pi = 2.0 * std::acos(-1.0);
  for (const DrivingEvent& ev : events_out) {
    const double phase = rng.uniform(0.0, two_pi);
    if (cfg.burst_amplitude == 0.0) continue;
    const int64_t s0 = std::llround((ev.response_onset_s - cfg.timing.window_seconds) *
                                    cfg.sampling_rate_hz);
    const int64_t s1 = std::llround(ev.response_onset_s * cfg.sampling_rate_hz);
    const std::vector<int>& targets =
        (ev.steering_direction == Intention::kLeft) ? left_burst : right_burst;
    for (int64_t t = std::max<int64_t>(s0, 0); t < std::min<int64_t>(s1, total); ++t) {
      const double wave =
          cfg.burst_amplitude *
          std::sin(two_pi * cfg.burst_freq_hz * static_cast<double>(t - s0) /
                       cfg.sampling_rate_hz +
                   phase);
      for (int ch : targets) rec.samples.at(ch, static_cast<int>(t)) += wave;
    }
  }

  for (double& v : rec.samples.data) v *= gain;
  return rec;
}

Corpus synthesize_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Recording> recordings;
  std::vector<std::vector<DrivingEvent>> events;
  for (int s = 0; s < cfg.n_subjects; ++s) {
    std::vector<DrivingEvent> evs;
    recordings.push_back(synthesize_recording(cfg, s, evs));
    events.push_back(std::move(evs));
  }
  CorpusBuildOptions options;
  options.welch = cfg.welch;
  options.timing = cfg.timing;
  options.balance_straights = true;
  options.split_fractions = cfg.split_fractions;
  options.seed = cfg.seed;
  return build_corpus(recordings, events, options);
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace {

constexpr int kCorpusVersion = 1;

json welch_to_json(const dsp::WelchConfig& w) {
  return json{{"segment_len", w.segment_len}, {"overlap", w.overlap},
              {"fft_len", w.fft_len},         {"window", w.window},
              {"f_lo_hz", w.f_lo_hz},         {"f_hi_hz", w.f_hi_hz}};
}

dsp::WelchConfig welch_from_json(const json& j) {
  dsp::WelchConfig w;
  w.segment_len = j.at("segment_len").get<int>();
  w.overlap = j.at("overlap").get<int>();
  w.fft_len = j.at("fft_len").get<int>();
  w.window = j.at("window").get<std::string>();
  w.f_lo_hz = j.at("f_lo_hz").get<double>();
  w.f_hi_hz = j.at("f_hi_hz").get<double>();
  return w;
}

json split_to_json(const SplitManifest& m) {
  auto by_state = [](const std::array<std::vector<int>, 3>& lists) {
    return json{{"alert", lists[0]}, {"transition", lists[1]}, {"drowsy", lists[2]}};
  };
  return json{{"seed", m.seed},
              {"fractions", m.fractions},
              {"train", by_state(m.train)},
              {"val", by_state(m.val)},
              {"test", by_state(m.test)}};
}

SplitManifest split_from_json(const json& j) {
  SplitManifest m;
  m.seed = j.at("seed").get<uint64_t>();
  const auto fr = j.at("fractions").get<std::vector<double>>();
  if (fr.size() != 3) throw FormatError("corpus: split fractions must have 3 entries");
  m.fractions = {fr[0], fr[1], fr[2]};
  auto read_state = [](const json& lists, std::array<std::vector<int>, 3>& out) {
    out[0] = lists.at("alert").get<std::vector<int>>();
    out[1] = lists.at("transition").get<std::vector<int>>();
    out[2] = lists.at("drowsy").get<std::vector<int>>();
  };
  read_state(j.at("train"), m.train);
  read_state(j.at("val"), m.val);
  read_state(j.at("test"), m.test);
  return m;
}

void write_window_payload(std::ofstream& bin, const nn::Array& raw, uint64_t& offset,
                          json& entry) {
  std::vector<float> buf(raw.data.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(raw.data[i]);
  const uint64_t bytes = buf.size() * sizeof(float);
  bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(bytes));
  entry["offset"] = offset;
  entry["length"] = bytes;
  offset += bytes;
}

nn::Array read_window_payload(const std::vector<char>& blob, uint64_t offset, uint64_t length,
                              int n_ch, int len) {
  if (length != static_cast<uint64_t>(n_ch) * len * sizeof(float))
    throw FormatError("corpus: window payload length disagrees with the channel/sample counts");
  if (offset + length > blob.size()) throw FormatError("corpus: trials.bin is truncated");
  nn::Array raw({n_ch, len});
  const float* f = reinterpret_cast<const float*>(blob.data() + offset);
  for (size_t i = 0; i < raw.data.size(); ++i) raw.data[i] = static_cast<double>(f[i]);
  return raw;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream bin(fs::path(dir) / "trials.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw FormatError("corpus: cannot open trials.bin for writing in " + dir);

  uint64_t offset = 0;
  json trials = json::array();
  for (const StoredTrial& t : corpus.trials) {
    json entry{{"subject", t.subject_id},
               {"intention", to_string(t.intention)},
               {"vigilance", to_string(t.vigilance)},
               {"window_start_s", t.start_s},
               {"window_end_s", t.end_s}};
    write_window_payload(bin, t.raw, offset, entry);
    trials.push_back(std::move(entry));
  }
  json references = json::array();
  for (const StoredWindow& w : corpus.references) {
    json entry{{"subject", w.subject_id},
               {"window_start_s", w.start_s},
               {"window_end_s", w.end_s}};
    write_window_payload(bin, w.raw, offset, entry);
    references.push_back(std::move(entry));
  }
  bin.close();
  if (!bin) throw FormatError("corpus: failed writing trials.bin in " + dir);

  json manifest{{"version", kCorpusVersion},
                {"channels", corpus.channel_names},
                {"sampling_rate_hz", corpus.sampling_rate_hz},
                {"trial_samples", corpus.trial_samples},
                {"welch", welch_to_json(corpus.welch)},
                {"bin_freqs_hz", corpus.bin_freqs_hz},
                {"seed", corpus.seed},
                {"trials", std::move(trials)},
                {"references", std::move(references)},
                {"split", split_to_json(corpus.split)}};
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!mf) throw FormatError("corpus: cannot open manifest.json for writing in " + dir);
  mf << manifest.dump(2) << "\n";
  mf.close();
  if (!mf) throw FormatError("corpus: failed writing manifest.json in " + dir);
}

Corpus read_corpus(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw FormatError("corpus: missing manifest.json in " + dir);
  std::ifstream bf(fs::path(dir) / "trials.bin", std::ios::binary);
  if (!bf) throw FormatError("corpus: missing trials.bin in " + dir);
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  try {
    const json manifest = json::parse(mf);
    if (manifest.at("version").get<int>() != kCorpusVersion)
      throw FormatError("corpus: unsupported manifest version");

    Corpus corpus;
    corpus.channel_names = manifest.at("channels").get<std::vector<std::string>>();
    corpus.sampling_rate_hz = manifest.at("sampling_rate_hz").get<double>();
    corpus.trial_samples = manifest.at("trial_samples").get<int>();
    corpus.welch = welch_from_json(manifest.at("welch"));
    corpus.bin_freqs_hz = manifest.at("bin_freqs_hz").get<std::vector<double>>();
    corpus.seed = manifest.at("seed").get<uint64_t>();
    corpus.split = split_from_json(manifest.at("split"));
    const int n_ch = static_cast<int>(corpus.channel_names.size());
    if (n_ch == 0) throw FormatError("corpus: empty channel list");

    for (const json& entry : manifest.at("trials")) {
      StoredTrial t;
      t.subject_id = entry.at("subject").get<std::string>();
      t.intention = intention_from_string(entry.at("intention").get<std::string>());
      t.vigilance = vigilance_from_string(entry.at("vigilance").get<std::string>());
      t.start_s = entry.at("window_start_s").get<double>();
      t.end_s = entry.at("window_end_s").get<double>();
      t.raw = read_window_payload(blob, entry.at("offset").get<uint64_t>(),
                                  entry.at("length").get<uint64_t>(), n_ch,
                                  corpus.trial_samples);
      corpus.trials.push_back(std::move(t));
    }
    for (const json& entry : manifest.at("references")) {
      StoredWindow w;
      w.subject_id = entry.at("subject").get<std::string>();
      w.start_s = entry.at("window_start_s").get<double>();
      w.end_s = entry.at("window_end_s").get<double>();
      w.raw = read_window_payload(blob, entry.at("offset").get<uint64_t>(),
                                  entry.at("length").get<uint64_t>(), n_ch,
                                  corpus.trial_samples);
      corpus.references.push_back(std::move(w));
    }

    // The split must partition the trial list and agree with the stored
    // vigilance labels.
    std::vector<int> seen(corpus.trials.size(), 0);
    auto check_lists = [&](const std::array<std::vector<int>, 3>& lists) {
      for (int s = 0; s < 3; ++s)
        for (int id : lists[s]) {
          if (id < 0 || id >= static_cast<int>(corpus.trials.size()))
            throw FormatError("corpus: split references trial " + std::to_string(id) +
                              " outside the trial list");
          if (static_cast<int>(corpus.trials[id].vigilance) != s)
            throw FormatError("corpus: split stratum disagrees with trial " +
                              std::to_string(id));
          if (seen[id]++)
            throw FormatError("corpus: trial " + std::to_string(id) +
                              " appears in multiple split lists");
        }
    };
    check_lists(corpus.split.train);
    check_lists(corpus.split.val);
    check_lists(corpus.split.test);
    for (size_t i = 0; i < seen.size(); ++i)
      if (!seen[i])
        throw FormatError("corpus: trial " + std::to_string(i) + " missing from the split");
    return corpus;
  } catch (const json::exception& e) {
    throw FormatError(std::string("corpus: malformed manifest.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("corpus: malformed manifest.json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// feature preparation
// ---------------------------------------------------------------------------

std::vector<PreparedTrial> prepare_features(const Corpus& corpus) {
  corpus.welch.validate(corpus.sampling_rate_hz);

  std::map<std::string, dsp::Spectrogram> reference_by_subject;
  std::map<std::string, int> reference_counts;
  for (const StoredWindow& w : corpus.references) {
    dsp::RawEegSegment seg{corpus.channel_names, corpus.sampling_rate_hz, w.raw};
    dsp::Spectrogram psd = dsp::welch_psd(seg, corpus.welch);
    auto it = reference_by_subject.find(w.subject_id);
    if (it == reference_by_subject.end()) {
      reference_by_subject.emplace(w.subject_id, std::move(psd));
      reference_counts[w.subject_id] = 1;
    } else {
      for (size_t i = 0; i < it->second.psd.data.size(); ++i)
        it->second.psd.data[i] += psd.psd.data[i];
      ++reference_counts[w.subject_id];
    }
  }
  for (auto& [subject, spec] : reference_by_subject) {
    const double n = reference_counts[subject];
    for (double& v : spec.psd.data) v /= n;
  }

  std::vector<PreparedTrial> out;
  out.reserve(corpus.trials.size());
  for (size_t i = 0; i < corpus.trials.size(); ++i) {
    const StoredTrial& t = corpus.trials[i];
    const auto ref = reference_by_subject.find(t.subject_id);
    if (ref == reference_by_subject.end())
      throw FormatError("corpus: no reference windows for subject '" + t.subject_id + "'");
    dsp::RawEegSegment seg{corpus.channel_names, corpus.sampling_rate_hz, t.raw};
    const dsp::Spectrogram normalized =
        dsp::apply_reference(dsp::welch_psd(seg, corpus.welch), ref->second);
    PreparedTrial p;
    p.corpus_index = static_cast<int>(i);
    p.intention = t.intention;
    p.vigilance = t.vigilance;
    p.subject_id = t.subject_id;
    p.features = normalized.psd;
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// external inputs
// ---------------------------------------------------------------------------

Recording read_recording(const std::string& sidecar_json_path) {
  std::ifstream jf(sidecar_json_path);
  if (!jf) throw FormatError("recording: cannot open " + sidecar_json_path);
  try {
    const json j = json::parse(jf);
    Recording rec;
    rec.subject_id = j.at("subject_id").get<std::string>();
    rec.channel_names = j.at("channels").get<std::vector<std::string>>();
    rec.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
    const std::string samples_file = j.at("samples_file").get<std::string>();
    const fs::path path = fs::path(sidecar_json_path).parent_path() / samples_file;
    std::ifstream sf(path, std::ios::binary);
    if (!sf) throw FormatError("recording: cannot open samples file " + path.string());
    std::vector<char> blob((std::istreambuf_iterator<char>(sf)),
                           std::istreambuf_iterator<char>());
    const int n_ch = static_cast<int>(rec.channel_names.size());
    if (n_ch == 0) throw FormatError("recording: empty channel list");
    if (blob.size() % sizeof(float) != 0)
      throw FormatError("recording: samples file size is not a multiple of 4 bytes");
    const size_t n_values = blob.size() / sizeof(float);
    if (n_values % n_ch != 0)
      throw FormatError("recording: sample count is not divisible by the channel count");
    const int total = static_cast<int>(n_values / n_ch);
    if (total == 0) throw FormatError("recording: samples file is empty");
    rec.samples = nn::Array({n_ch, total});
    const float* f = reinterpret_cast<const float*>(blob.data());
    for (size_t i = 0; i < n_values; ++i) rec.samples.data[i] = static_cast<double>(f[i]);
    return rec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("recording: malformed sidecar: ") + e.what());
  }
}

std::vector<DrivingEvent> parse_events_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("events: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("events: " + path + " is empty");
  auto fields_of = [](const std::string& s) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(s);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
  };
  const std::vector<std::string> header = fields_of(line);
  const std::vector<std::string> expected = {"subject_id", "deviation_onset_s",
                                             "response_onset_s", "response_offset_s",
                                             "steering_direction"};
  if (header != expected)
    throw ConfigError("events: " + path + " line 1: expected header subject_id,deviation_onset_s,"
                      "response_onset_s,response_offset_s,steering_direction");

  std::vector<DrivingEvent> events;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = fields_of(line);
    const std::string where = "events: " + path + " line " + std::to_string(line_no);
    if (fields.size() != 5) throw ConfigError(where + ": expected 5 comma-separated fields");
    DrivingEvent ev;
    ev.subject_id = fields[0];
    try {
      size_t used = 0;
      ev.deviation_onset_s = std::stod(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing characters");
      ev.response_onset_s = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
      ev.response_offset_s = std::stod(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(where + ": timestamps must be decimal seconds");
    }
    const std::string dir = lower(fields[4]);
    if (dir == "left") ev.steering_direction = Intention::kLeft;
    else if (dir == "right") ev.steering_direction = Intention::kRight;
    else throw ConfigError(where + ": steering_direction must be left or right");
    try {
      ev.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    events.push_back(std::move(ev));
  }
  return events;
}

}  // namespace mem::data
