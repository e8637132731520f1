#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dsp.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace mem::data {

enum class Intention { kLeft = 0, kRight = 1, kStraight = 2 };
enum class Vigilance { kAlert = 0, kTransition = 1, kDrowsy = 2 };

const char* to_string(Intention v);
const char* to_string(Vigilance v);
Intention intention_from_string(const std::string& s);
Vigilance vigilance_from_string(const std::string& s);

std::vector<std::string> default_channel_names();  // 12 centro-parietal sites

// One lane-departure event: the car drifts at deviation_onset, the driver
// begins steering at response_onset and finishes at response_offset.
struct DrivingEvent {
  std::string subject_id;
  double deviation_onset_s = 0.0;
  double response_onset_s = 0.0;
  double response_offset_s = 0.0;
  Intention steering_direction = Intention::kLeft;  // never kStraight

  void validate() const;
};

// Continuous multi-channel session, channel-major samples (N x total).
struct Recording {
  std::string subject_id;
  std::vector<std::string> channel_names;
  double sampling_rate_hz = 500.0;
  nn::Array samples;

  int channels() const { return samples.rows(); }
  int total_samples() const { return samples.cols(); }
};

struct WindowTiming {
  double window_seconds = 0.5;   // T
  double offset_seconds = 0.1;   // t-delta
  int samples(double fs) const;  // L
};

// A fixed-length window cut from a recording, plus its provenance.
struct ExtractedWindow {
  nn::Array raw;  // N x L
  Intention intention = Intention::kStraight;
  std::string subject_id;
  double start_s = 0.0;
  double end_s = 0.0;
  int event_index = -1;
};

// Per event: a turning window [response_onset-T, response_onset) labeled with
// the steering direction, and a straight window [response_offset+dt,
// response_offset+dt+T). Windows falling outside the recording are skipped
// with a warning.
std::vector<ExtractedWindow> extract_intention_windows(const Recording& rec,
                                                       const std::vector<DrivingEvent>& events,
                                                       const WindowTiming& timing = {});

// Baseline windows [deviation_onset-dt-T, deviation_onset-dt), used for
// per-subject reference spectra.
std::vector<ExtractedWindow> extract_reference_windows(const Recording& rec,
                                                       const std::vector<DrivingEvent>& events,
                                                       const WindowTiming& timing = {});

// Reaction-time based vigilance labeling. The alert reaction time is the 5th
// percentile of a subject's own local reaction times.
double alert_reaction_time(const std::vector<double>& local_rts);
Vigilance classify_reaction_time(double local_rt, double alert_rt);
// One label per event; subjects are grouped by subject_id.
std::vector<Vigilance> label_vigilance(const std::vector<DrivingEvent>& events);

// Train/val/test assignment, stratified by vigilance state.
struct SplitManifest {
  std::array<std::vector<int>, 3> train, val, test;  // indexed by Vigilance
  std::array<double, 3> fractions = {0.8, 0.1, 0.1};
  uint64_t seed = 0;

  std::vector<int> train_ids() const;
  std::vector<int> val_ids() const;
  std::vector<int> test_ids() const;
};

SplitManifest split_dataset(const std::vector<Vigilance>& states,
                            std::array<double, 3> fractions, uint64_t seed);

// A stored raw window; values are exactly representable as 32-bit floats so
// persisting and reloading is the identity.
struct StoredWindow {
  std::string subject_id;
  double start_s = 0.0;
  double end_s = 0.0;
  nn::Array raw;  // N x L
};

struct StoredTrial : StoredWindow {
  Intention intention = Intention::kStraight;
  Vigilance vigilance = Vigilance::kAlert;
};

struct Corpus {
  std::vector<std::string> channel_names;
  double sampling_rate_hz = 500.0;
  dsp::WelchConfig welch;
  std::vector<double> bin_freqs_hz;
  int trial_samples = 250;  // L
  std::vector<StoredTrial> trials;
  std::vector<StoredWindow> references;
  SplitManifest split;
  uint64_t seed = 0;
};

struct CorpusBuildOptions {
  dsp::WelchConfig welch;
  WindowTiming timing;
  bool balance_straights = true;  // subsample straights to (left+right)/2
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
  uint64_t seed = 0;
};

// Shared assembly path: extract windows, label vigilance, balance classes,
// round to storage precision, split.
Corpus build_corpus(const std::vector<Recording>& recordings,
                    const std::vector<std::vector<DrivingEvent>>& events,
                    const CorpusBuildOptions& options);

// Synthetic sessions: pink-noise base with 10 Hz bursts on the hemisphere
// opposite the steering direction, per-subject gain offsets, and reaction
// times spanning all three vigilance states.
struct SynthConfig {
  std::vector<std::string> channel_names = default_channel_names();
  double sampling_rate_hz = 500.0;
  int n_subjects = 6;
  int total_turning_events = 400;  // alternating left/right
  double noise_amplitude = 1.0;
  double burst_amplitude = 2.0;
  double burst_freq_hz = 10.0;
  dsp::WelchConfig welch;
  WindowTiming timing;
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
  uint64_t seed = 1;

  void validate() const;
};

Recording synthesize_recording(const SynthConfig& cfg, int subject_index,
                               std::vector<DrivingEvent>& events_out);
Corpus synthesize_corpus(const SynthConfig& cfg);

// Directory layout: manifest.json plus trials.bin (little-endian float32,
// each window stored channel-major). Round-trips bit-exactly.
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus read_corpus(const std::string& dir);

// Normalized model inputs: per-subject mean reference spectra in linear
// power, then the log-ratio of each trial's spectrogram against it.
struct PreparedTrial {
  int corpus_index = -1;
  Intention intention = Intention::kStraight;
  Vigilance vigilance = Vigilance::kAlert;
  std::string subject_id;
  nn::Array features;  // N x d
};

std::vector<PreparedTrial> prepare_features(const Corpus& corpus);

// Sidecar-described raw recording: <name>.json next to a float32 sample file.
Recording read_recording(const std::string& sidecar_json_path);

// Event list parsing; one header line then
// subject_id,deviation_onset_s,response_onset_s,response_offset_s,steering_direction
std::vector<DrivingEvent> parse_events_csv(const std::string& path);

}  // namespace mem::data
