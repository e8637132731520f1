#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "masking.hpp"

namespace mem::train {

using nlohmann::json;

// --- curriculum -------------------------------------------------------------

CurriculumSchedule CurriculumSchedule::default_schedule() {
  CurriculumSchedule s;
  const double ramp[] = {0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85};
  for (double r : ramp) s.stages.push_back({r, 200});
  s.stages.push_back({0.90, 200});
  return s;
}

void CurriculumSchedule::validate() const {
  if (stages.empty()) throw ConfigError("curriculum: no stages");
  double prev = -1.0;
  for (const auto& st : stages) {
    if (!(st.ratio >= 0.0 && st.ratio <= 1.0))
      throw ConfigError("curriculum: ratio must lie in [0, 1]");
    if (st.ratio < prev) throw ConfigError("curriculum: ratios must be nondecreasing");
    if (st.epochs < 1) throw ConfigError("curriculum: each stage needs at least one epoch");
    prev = st.ratio;
  }
}

int CurriculumSchedule::total_epochs() const {
  validate();
  int total = 0;
  for (const auto& st : stages) total += st.epochs;
  return total;
}

double CurriculumSchedule::ratio_for_epoch(int epoch) const {
  validate();
  if (epoch < 0) throw ContractError("curriculum: negative epoch");
  int start = 0;
  for (const auto& st : stages) {
    if (epoch < start + st.epochs) return st.ratio;
    start += st.epochs;
  }
  return stages.back().ratio;  // held past the end of the table
}

// --- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train: beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("train: alpha must be >= 0");
  if (max_epochs < -1) throw ConfigError("train: max epochs must be -1 or nonnegative");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint cadence must be >= 0");
  schedule.validate();
}

std::string EpochMetrics::to_json_line() const {
  json j;
  j["epoch"] = epoch;
  j["ratio"] = ratio;
  j["train_loss_cls"] = train_loss_cls;
  j["train_loss_mse"] = train_loss_mse;
  j["train_acc"] = train_acc;
  j["val_acc"] = val_acc;
  return j.dump();
}

// --- optimizer --------------------------------------------------------------

void adam_step(nn::ParamStore& store, nn::Tape& tape, const std::vector<nn::Var>& vars,
               const TrainConfig& cfg, int64_t step_count) {
  if (step_count < 1) throw ContractError("adam: step count must be >= 1");
  if (vars.size() != store.size()) throw ContractError("adam: vars do not match the store");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
  for (size_t i = 0; i < store.size(); ++i) {
    nn::Parameter& param = store.at(static_cast<int>(i));
    const nn::Array& g = tape.grad(vars[i]);
    if (g.data.size() != param.value.data.size())
      throw ContractError("adam: gradient shape disagrees with parameter '" + param.name + "'");
    for (size_t j = 0; j < param.value.data.size(); ++j) {
      double& m = param.adam_m.data[j];
      double& v = param.adam_v.data[j];
      const double grad = g.data[j];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
      param.value.data[j] -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
    }
  }
}

// --- training loop ----------------------------------------------------------

namespace {

int argmax_row(const nn::Array& row) {
  int best = 0;
  for (size_t j = 1; j < row.data.size(); ++j)
    if (row.data[j] > row.data[best]) best = static_cast<int>(j);
  return best;
}

std::string param_norms(const nn::ParamStore& store) {
  double sq = 0.0, mx = 0.0;
  for (size_t i = 0; i < store.size(); ++i) {
    for (double v : store.at(static_cast<int>(i)).value.data) {
      sq += v * v;
      mx = std::max(mx, std::fabs(v));
    }
  }
  return "|theta|_2=" + util::format_double(std::sqrt(sq)) +
         ", max|theta|=" + util::format_double(mx);
}

void check_ids(const std::vector<int>& ids, size_t n_trials, const char* what) {
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= n_trials)
      throw ContractError(std::string(what) + ": trial id " + std::to_string(id) +
                          " is out of range");
}

}  // namespace

EpochMetrics train_epoch(model::MemModel& model, const std::vector<data::PreparedTrial>& trials,
                         const std::vector<int>& train_ids, const TrainConfig& cfg, int epoch,
                         int64_t& step_count) {
  cfg.validate();
  if (epoch < 0) throw ContractError("train_epoch: negative epoch");
  if (train_ids.empty()) throw ConfigError("train_epoch: no training trials");
  check_ids(train_ids, trials.size(), "train_epoch");

  const model::MemConfig& mc = model.config();
  const double ratio = cfg.schedule.ratio_for_epoch(epoch);

  std::vector<int> order = train_ids;
  util::Rng shuffle_rng(util::derive_seed(cfg.seed, util::kSeedShuffle, epoch));
  shuffle_rng.shuffle(order);
  util::Rng aug_rng(util::derive_seed(cfg.seed, util::kSeedMask, epoch));

  double sum_ce = 0.0, sum_mse = 0.0;
  int correct = 0;
  const int n = static_cast<int>(order.size());
  for (int batch_start = 0; batch_start < n; batch_start += cfg.batch_size) {
    const int batch_end = std::min(batch_start + cfg.batch_size, n);
    nn::Tape tape;
    std::vector<nn::Var> p = model.bind(tape);
    std::vector<nn::Var> totals;
    for (int i = batch_start; i < batch_end; ++i) {
      const data::PreparedTrial& trial = trials[order[i]];
      const int label = static_cast<int>(trial.intention);
      mask::MaskPlan plan = mask::sample_mask(mc.strategy, mc.token_count(), ratio, aug_rng);
      util::Rng* drop = mc.dropout > 0.0 ? &aug_rng : nullptr;
      model::ForwardOutput out = model.forward(tape, p, trial.features, plan, drop);
      model::LossBreakdown lb = model.loss(tape, out, label, trial.features, cfg.alpha, plan);
      totals.push_back(lb.total);
      sum_ce += tape.value(lb.cross_entropy).data[0];
      sum_mse += tape.value(lb.mse).data[0];
      if (argmax_row(tape.value(out.class_probs)) == label) ++correct;
    }
    nn::Var batch_loss = totals[0];
    for (size_t k = 1; k < totals.size(); ++k) batch_loss = tape.add(batch_loss, totals[k]);
    if (totals.size() > 1) batch_loss = tape.scale(batch_loss, 1.0 / totals.size());
    const double loss_value = tape.value(batch_loss).data[0];
    if (!std::isfinite(loss_value))
      throw NumericError("training aborted: non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch_start / cfg.batch_size) + " (" +
                         param_norms(model.params()) + ")");
    tape.backward(batch_loss);
    adam_step(model.params(), tape, p, cfg, ++step_count);
  }

  EpochMetrics m;
  m.epoch = epoch;
  m.ratio = ratio;
  m.train_loss_cls = sum_ce / n;
  m.train_loss_mse = sum_mse / n;
  m.train_acc = static_cast<double>(correct) / n;
  m.val_acc = 0.0;
  return m;
}

double evaluate_accuracy(const model::MemModel& model,
                         const std::vector<data::PreparedTrial>& trials,
                         const std::vector<int>& ids) {
  if (ids.empty()) throw ConfigError("evaluate_accuracy: no trial ids");
  check_ids(ids, trials.size(), "evaluate_accuracy");
  const model::MemConfig& mc = model.config();
  mask::MaskPlan none;
  none.strategy = mc.strategy;
  none.ratio = 0.0;
  none.total_tokens = mc.token_count();
  int correct = 0;
  for (int id : ids) {
    const data::PreparedTrial& trial = trials[id];
    nn::Tape tape;
    std::vector<nn::Var> p = model.bind(tape);
    model::ForwardOutput out = model.forward_classifier(tape, p, trial.features, none);
    if (argmax_row(tape.value(out.class_probs)) == static_cast<int>(trial.intention)) ++correct;
  }
  return static_cast<double>(correct) / ids.size();
}

FitResult fit(model::MemModel& model, const std::vector<data::PreparedTrial>& trials,
              const data::SplitManifest& split, const TrainConfig& cfg,
              const FitOptions& options) {
  cfg.validate();
  const std::vector<int> train_ids = split.train_ids();
  const std::vector<int> val_ids = split.val_ids();
  if (train_ids.empty()) throw ConfigError("fit: training split is empty");
  if (val_ids.empty()) throw ConfigError("fit: validation split is empty");
  check_ids(train_ids, trials.size(), "fit");
  check_ids(val_ids, trials.size(), "fit");

  const bool logging = !options.log_path.empty();
  std::ofstream log;
  if (logging) {
    log.open(options.log_path);
    if (!log) throw ConfigError("fit: cannot open log file " + options.log_path);
  }

  const int epochs = cfg.max_epochs >= 0 ? cfg.max_epochs : cfg.schedule.total_epochs();
  FitResult result;
  std::vector<nn::Array> best;
  int64_t step_count = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    EpochMetrics m = train_epoch(model, trials, train_ids, cfg, epoch, step_count);
    m.val_acc = evaluate_accuracy(model, trials, val_ids);
    result.history.push_back(m);
    if (logging) {
      log << m.to_json_line() << "\n";
      if (!log) throw ConfigError("fit: failed writing log file " + options.log_path);
    }
    if (result.best_epoch < 0 || m.val_acc > result.best_val_acc) {
      result.best_epoch = epoch;
      result.best_val_acc = m.val_acc;
      best.clear();
      for (size_t i = 0; i < model.params().size(); ++i)
        best.push_back(model.params().at(static_cast<int>(i)).value);
    }
    if (cfg.checkpoint_every > 0 && !options.checkpoint_dir.empty() &&
        (epoch + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%06d.ckpt", epoch);
      CheckpointHeader h;
      h.config = model.config();
      save_checkpoint(options.checkpoint_dir + "/" + name, model, h);
    }
  }
  if (!best.empty())
    for (size_t i = 0; i < best.size(); ++i)
      model.params().at(static_cast<int>(i)).value = best[i];
  return result;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'E', 'M', 'C', 'K', 'P', 'T', '1'};

void put_u64_le(std::string& out, uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<uint64_t>(p[k]) << (8 * k);
  return v;
}

void put_f32_le(std::string& out, float f) {
  uint32_t u = 0;
  std::memcpy(&u, &f, 4);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
}

float get_f32_le(const unsigned char* p) {
  uint32_t u = 0;
  for (int k = 0; k < 4; ++k) u |= static_cast<uint32_t>(p[k]) << (8 * k);
  float f = 0.0f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace

void save_checkpoint(const std::string& path, const model::MemModel& model,
                     const CheckpointHeader& header) {
  json h;
  h["version"] = 1;
  h["dtype"] = "f32";
  h["config"] = json::parse(model.config().to_json());
  h["config_hash"] = util::hex64(header.config_hash);
  h["channels"] = header.channel_names;
  h["bin_freqs_hz"] = header.bin_freqs_hz;
  json table = json::array();
  const nn::ParamStore& store = model.params();
  for (size_t i = 0; i < store.size(); ++i) {
    const nn::Parameter& param = store.at(static_cast<int>(i));
    table.push_back({{"name", param.name},
                     {"rows", param.value.rows()},
                     {"cols", param.value.cols()}});
  }
  h["params"] = table;

  const std::string head = h.dump();
  std::string blob;
  blob.reserve(16 + head.size() + static_cast<size_t>(store.total_elements()) * 4);
  blob.append(kMagic, 8);
  put_u64_le(blob, head.size());
  blob += head;
  for (size_t i = 0; i < store.size(); ++i)
    for (double v : store.at(static_cast<int>(i)).value.data)
      put_f32_le(blob, static_cast<float>(v));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path + " for writing");
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw FormatError("checkpoint: failed writing " + path);
}

model::MemModel load_checkpoint(const std::string& path, CheckpointHeader* header_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  if (blob.size() < 16) throw FormatError("checkpoint: file is truncated");
  if (std::memcmp(blob.data(), kMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  const uint64_t head_len = get_u64_le(bytes + 8);
  if (head_len > blob.size() - 16) throw FormatError("checkpoint: header is truncated");

  CheckpointHeader header;
  json h;
  try {
    h = json::parse(blob.substr(16, head_len));
    if (h.at("version").get<int>() != 1)
      throw FormatError("checkpoint: unsupported version");
    if (h.at("dtype").get<std::string>() != "f32")
      throw FormatError("checkpoint: unsupported dtype");
    header.config = model::MemConfig::from_json(h.at("config").dump());
    header.config_hash = std::stoull(h.at("config_hash").get<std::string>(), nullptr, 16);
    header.channel_names = h.at("channels").get<std::vector<std::string>>();
    header.bin_freqs_hz = h.at("bin_freqs_hz").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("checkpoint: bad config hash");
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }

  model::MemModel model(header.config);
  nn::ParamStore& store = model.params();
  const json& table = h.at("params");
  if (!table.is_array() || table.size() != store.size())
    throw FormatError("checkpoint: parameter table does not match the configuration");

  size_t offset = 16 + head_len;
  for (size_t i = 0; i < store.size(); ++i) {
    nn::Parameter& param = store.at(static_cast<int>(i));
    const json& row = table.at(i);
    try {
      if (row.at("name").get<std::string>() != param.name ||
          row.at("rows").get<int>() != param.value.rows() ||
          row.at("cols").get<int>() != param.value.cols())
        throw FormatError("checkpoint: parameter '" + param.name + "' does not match");
    } catch (const json::exception& e) {
      throw FormatError(std::string("checkpoint: bad parameter table: ") + e.what());
    }
    const size_t need = param.value.data.size() * 4;
    if (offset + need > blob.size()) throw FormatError("checkpoint: payload is truncated");
    for (size_t j = 0; j < param.value.data.size(); ++j)
      param.value.data[j] = static_cast<double>(get_f32_le(bytes + offset + j * 4));
    offset += need;
  }
  if (offset != blob.size()) throw FormatError("checkpoint: trailing bytes after the payload");

  if (header_out) *header_out = header;
  return model;
}

}  // namespace mem::train
