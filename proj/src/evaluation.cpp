#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "util.hpp"

namespace mem::eval {

using nlohmann::json;
namespace fsys = std::filesystem;

// --- metrics ------------------------------------------------------------------

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels) {
  if (predictions.empty()) throw ContractError("metrics: empty input");
  if (predictions.size() != labels.size())
    throw ContractError("metrics: predictions and labels differ in length");

  MetricsReport r;
  r.n_samples = static_cast<int>(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || t > 2 || p < 0 || p > 2)
      throw ContractError("metrics: class values must lie in {0, 1, 2}");
    ++r.confusion[t][p];
  }

  int64_t correct = 0;
  for (int c = 0; c < 3; ++c) correct += r.confusion[c][c];
  r.micro_accuracy = static_cast<double>(correct) / r.n_samples;

  for (int c = 0; c < 3; ++c) {
    int64_t tp = r.confusion[c][c], fp = 0, fn = 0;
    for (int o = 0; o < 3; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall)
                                             : 0.0;
    r.macro_precision += precision / 3.0;
    r.macro_recall += recall / 3.0;
    r.macro_f1 += f1 / 3.0;
  }
  return r;
}

std::string MetricsReport::to_json() const {
  json j;
  j["micro_accuracy"] = micro_accuracy;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  json rows = json::array();
  for (const auto& row : confusion) rows.push_back(std::vector<int64_t>(row.begin(), row.end()));
  j["confusion"] = rows;
  j["n_samples"] = n_samples;
  j["test_state"] = test_state;
  return j.dump(2);
}

std::string MetricsReport::confusion_csv() const {
  std::string out = "true\\pred,left,right,straight\n";
  const char* names[3] = {"left", "right", "straight"};
  for (int t = 0; t < 3; ++t) {
    out += names[t];
    for (int p = 0; p < 3; ++p) out += "," + std::to_string(confusion[t][p]);
    out += "\n";
  }
  return out;
}

// --- inference ------------------------------------------------------------------

int predict(const model::MemModel& model, const nn::Array& features,
            const mask::MaskPlan& plan) {
  nn::Tape tape;
  std::vector<nn::Var> p = model.bind(tape);
  const model::ForwardOutput out = model.forward_classifier(tape, p, features, plan);
  const nn::Array& probs = tape.value(out.class_probs);
  int best = 0;
  for (size_t j = 1; j < probs.data.size(); ++j)
    if (probs.data[j] > probs.data[best]) best = static_cast<int>(j);
  return best;
}

MetricsReport evaluate(const model::MemModel& model,
                       const std::vector<data::PreparedTrial>& trials,
                       const std::vector<int>& ids, const EvalOptions& options) {
  if (ids.empty()) throw ConfigError("evaluate: no trial ids");
  if (!(options.mask_ratio >= 0.0 && options.mask_ratio <= 1.0))
    throw ConfigError("evaluate: mask ratio must lie in [0, 1]");
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= trials.size())
      throw ContractError("evaluate: trial id " + std::to_string(id) + " is out of range");

  const model::MemConfig& mc = model.config();
  mask::MaskPlan plan;
  plan.strategy = mc.strategy;
  plan.total_tokens = mc.token_count();
  util::Rng rng(util::derive_seed(options.seed, util::kSeedEval));

  std::vector<int> predictions, labels;
  predictions.reserve(ids.size());
  labels.reserve(ids.size());
  for (int id : ids) {
    const data::PreparedTrial& trial = trials[id];
    if (options.mask_ratio > 0.0)
      plan = mask::sample_mask(mc.strategy, mc.token_count(), options.mask_ratio, rng);
    predictions.push_back(predict(model, trial.features, plan));
    labels.push_back(static_cast<int>(trial.intention));
  }
  MetricsReport r = compute_metrics(predictions, labels);
  r.test_state = options.test_state;
  return r;
}

// --- robustness sweep -------------------------------------------------------------

RobustnessCurve robustness_sweep(const model::MemModel& model,
                                 const std::vector<data::PreparedTrial>& trials,
                                 const std::vector<int>& ids, const std::vector<double>& ratios,
                                 const std::vector<uint64_t>& seeds) {
  if (ratios.empty()) throw ConfigError("sweep: no ratios");
  if (seeds.empty()) throw ConfigError("sweep: no seeds");
  for (size_t i = 0; i < ratios.size(); ++i) {
    if (!(ratios[i] >= 0.0 && ratios[i] <= 1.0))
      throw ConfigError("sweep: ratios must lie in [0, 1]");
    if (i > 0 && !(ratios[i] > ratios[i - 1]))
      throw ConfigError("sweep: ratios must be strictly increasing");
  }

  RobustnessCurve curve;
  curve.strategy = model.config().strategy;
  curve.ratios = ratios;
  curve.seeds = seeds;
  for (size_t i = 0; i < ratios.size(); ++i) {
    std::vector<MetricsReport> row;
    double acc = 0.0;
    for (size_t j = 0; j < seeds.size(); ++j) {
      EvalOptions opt;
      opt.mask_ratio = ratios[i];
      opt.seed = util::derive_seed(seeds[j], util::kSeedEval, i);
      row.push_back(evaluate(model, trials, ids, opt));
      acc += row.back().micro_accuracy;
    }
    curve.mean_accuracy.push_back(acc / seeds.size());
    curve.reports.push_back(std::move(row));
  }
  return curve;
}

std::string RobustnessCurve::to_csv() const {
  std::string out = "ratio,seed,micro_accuracy,macro_precision,macro_recall,macro_f1,n_samples\n";
  for (size_t i = 0; i < ratios.size(); ++i)
    for (size_t j = 0; j < seeds.size(); ++j) {
      const MetricsReport& r = reports[i][j];
      out += util::format_double(ratios[i]) + "," + std::to_string(seeds[j]) + "," +
             util::format_double(r.micro_accuracy) + "," +
             util::format_double(r.macro_precision) + "," +
             util::format_double(r.macro_recall) + "," + util::format_double(r.macro_f1) + "," +
             std::to_string(r.n_samples) + "\n";
    }
  return out;
}

// --- reconstruction export ----------------------------------------------------------

namespace {

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("export: cannot open " + path + " for writing");
  f << body;
  if (!f) throw FormatError("export: failed writing " + path);
}

std::string grid_csv(const nn::Array& grid) {
  std::string out;
  for (int r = 0; r < grid.rows(); ++r) {
    for (int c = 0; c < grid.cols(); ++c) {
      if (c > 0) out += ",";
      out += util::format_double(grid.at(r, c));
    }
    out += "\n";
  }
  return out;
}

// Grayscale grid with masked cells tinted red; both grids share one scale so
// truth and reconstruction previews are visually comparable.
std::string grid_ppm(const nn::Array& grid, mask::Strategy strategy,
                     const std::vector<int>& masked, double lo, double hi) {
  const double span = hi > lo ? hi - lo : 1.0;
  std::string out = "P3\n" + std::to_string(grid.cols()) + " " + std::to_string(grid.rows()) +
                    "\n255\n";
  for (int r = 0; r < grid.rows(); ++r) {
    for (int c = 0; c < grid.cols(); ++c) {
      const int token = strategy == mask::Strategy::kChannel ? r : c;
      const bool flagged = std::binary_search(masked.begin(), masked.end(), token);
      const int v = static_cast<int>(std::lround((grid.at(r, c) - lo) / span * 255.0));
      const int pix = std::clamp(v, 0, 255);
      if (flagged)
        out += "255 " + std::to_string(pix / 2) + " " + std::to_string(pix / 2) + " ";
      else
        out += std::to_string(pix) + " " + std::to_string(pix) + " " + std::to_string(pix) + " ";
    }
    out += "\n";
  }
  return out;
}

}  // namespace

std::vector<ReconstructionExport> export_reconstructions(
    const model::MemModel& model, const std::vector<data::PreparedTrial>& trials,
    const std::vector<int>& ids, const std::vector<double>& ratios, const std::string& out_dir,
    uint64_t seed) {
  if (ids.empty()) throw ConfigError("export: no trial ids");
  if (ratios.empty()) throw ConfigError("export: no ratios");
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("export: ratios must lie in [0, 1]");
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= trials.size())
      throw ContractError("export: trial id " + std::to_string(id) + " is out of range");
  fsys::create_directories(out_dir);

  const model::MemConfig& mc = model.config();
  util::Rng rng(util::derive_seed(seed, util::kSeedEval));
  std::vector<ReconstructionExport> exports;
  for (int id : ids) {
    const data::PreparedTrial& trial = trials[id];
    for (double ratio : ratios) {
      const mask::MaskPlan plan = mask::sample_mask(mc.strategy, mc.token_count(), ratio, rng);

      nn::Tape tape;
      std::vector<nn::Var> p = model.bind(tape);
      const model::ForwardOutput out = model.forward(tape, p, trial.features, plan);

      ReconstructionExport e;
      e.trial_id = id;
      e.ratio = ratio;
      e.masked = plan.masked_indices;
      e.truth = trial.features;
      e.recon = tape.value(out.reconstruction);

      char tag[32];
      std::snprintf(tag, sizeof(tag), "s%04d_r%04d", id,
                    static_cast<int>(std::lround(ratio * 1000.0)));
      e.base = (fsys::path(out_dir) / tag).string();

      double lo = e.truth.data[0], hi = e.truth.data[0];
      for (double v : e.truth.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      for (double v : e.recon.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }

      std::string flags;
      for (int t = 0; t < plan.total_tokens; ++t) {
        if (t > 0) flags += ",";
        flags += std::binary_search(e.masked.begin(), e.masked.end(), t) ? "1" : "0";
      }
      flags += "\n";

      write_text(e.base + "_truth.csv", grid_csv(e.truth));
      write_text(e.base + "_recon.csv", grid_csv(e.recon));
      write_text(e.base + "_mask.csv", flags);
      write_text(e.base + "_truth.ppm", grid_ppm(e.truth, mc.strategy, e.masked, lo, hi));
      write_text(e.base + "_recon.ppm", grid_ppm(e.recon, mc.strategy, e.masked, lo, hi));
      exports.push_back(std::move(e));
    }
  }
  return exports;
}

// --- strategy comparison ------------------------------------------------------------

std::vector<StrategyComparisonRow> compare_strategies(
    const std::vector<data::PreparedTrial>& trials, const data::SplitManifest& split,
    const model::MemConfig& base_config, const train::TrainConfig& train_config) {
  base_config.validate();
  train_config.validate();

  struct Regime {
    const char* name;
    std::vector<data::Vigilance> states;
  };
  const Regime regimes[] = {
      {"alert", {data::Vigilance::kAlert}},
      {"all",
       {data::Vigilance::kAlert, data::Vigilance::kTransition, data::Vigilance::kDrowsy}},
  };
  const mask::Strategy strategies[] = {mask::Strategy::kChannel, mask::Strategy::kFrequency};

  std::vector<StrategyComparisonRow> rows;
  for (const Regime& regime : regimes) {
    data::SplitManifest sub = split;
    for (int s = 0; s < 3; ++s) {
      const auto v = static_cast<data::Vigilance>(s);
      if (std::find(regime.states.begin(), regime.states.end(), v) == regime.states.end()) {
        sub.train[s].clear();
        sub.val[s].clear();
      }
    }
    if (sub.train_ids().empty() || sub.val_ids().empty()) {
      log::warn(std::string("comparison: regime '") + regime.name +
                "' has no train/val trials; skipped");
      continue;
    }

    for (mask::Strategy strategy : strategies) {
      model::MemConfig cfg = base_config;
      cfg.strategy = strategy;
      model::MemModel m(cfg, train_config.seed);
      train::fit(m, trials, sub, train_config);

      for (int s = 0; s < 3; ++s) {
        const auto state = static_cast<data::Vigilance>(s);
        if (split.test[s].empty()) {
          log::warn(std::string("comparison: no test trials for state '") +
                    data::to_string(state) + "'; row skipped");
          continue;
        }
        EvalOptions opt;
        opt.seed = train_config.seed;
        opt.test_state = data::to_string(state);
        StrategyComparisonRow row;
        row.train_states = regime.name;
        row.test_state = data::to_string(state);
        row.strategy = strategy;
        row.report = evaluate(m, trials, split.test[s], opt);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::string comparison_csv(const std::vector<StrategyComparisonRow>& rows) {
  std::string out =
      "train_states,strategy,test_state,micro_accuracy,macro_precision,macro_recall,macro_f1,"
      "n_samples\n";
  for (const StrategyComparisonRow& row : rows) {
    out += row.train_states + "," + mask::to_string(row.strategy) + "," + row.test_state + "," +
           util::format_double(row.report.micro_accuracy) + "," +
           util::format_double(row.report.macro_precision) + "," +
           util::format_double(row.report.macro_recall) + "," +
           util::format_double(row.report.macro_f1) + "," +
           std::to_string(row.report.n_samples) + "\n";
  }
  return out;
}

}  // namespace mem::eval
