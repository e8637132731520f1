#include "mem/mem.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <utility>

#include "evaluation.hpp"
#include "json.hpp"
#include "pipeline.hpp"
#include "util.hpp"

using nlohmann::json;

struct mem_model {
  mem::model::MemModel model;
  mem::train::CheckpointHeader header;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mem_status map_current_exception() noexcept {
  try {
    throw;
  } catch (const mem::MismatchError& e) {
    g_last_error = e.what();
    return MEM_ERR_MISMATCH;
  } catch (const mem::NumericError& e) {
    g_last_error = e.what();
    return MEM_ERR_NUMERIC;
  } catch (const mem::ConfigError& e) {
    g_last_error = e.what();
    return MEM_ERR_CONFIG;
  } catch (const mem::FormatError& e) {
    g_last_error = e.what();
    return MEM_ERR_CONFIG;
  } catch (const std::invalid_argument& e) {  // shape violations
    g_last_error = e.what();
    return MEM_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MEM_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MEM_ERR_INTERNAL;
  }
}

const char* require(const char* p, const char* what) {
  if (!p) throw mem::ConfigError(std::string(what) + " must not be null");
  return p;
}

template <typename Fn>
mem_status guarded(char** out, Fn&& fn) {
  if (out) *out = nullptr;
  try {
    const std::string payload = fn();
    if (out) {
      *out = dup_string(payload);
      if (!*out) {
        g_last_error = "out of memory";
        return MEM_ERR_INTERNAL;
      }
    }
    g_last_error.clear();
    return MEM_OK;
  } catch (...) {
    return map_current_exception();
  }
}

mem::pipe::ExperimentConfig parse_config(const char* config_json) {
  return mem::pipe::ExperimentConfig::from_json(require(config_json, "config_json"));
}

}  // namespace

extern "C" {

const char* mem_last_error(void) { return g_last_error.c_str(); }

void mem_string_free(char* s) { std::free(s); }

mem_status mem_config_hash(const char* config_json, char** out_hex) {
  return guarded(out_hex, [&] {
    return mem::util::hex64(parse_config(config_json).config_hash());
  });
}

mem_status mem_synth(const char* config_json, char** out_summary) {
  return guarded(out_summary, [&] { return mem::pipe::run_synth(parse_config(config_json)); });
}

mem_status mem_prepare(const char* config_json, const char* events_csv,
                       const char* recording_sidecar, char** out_summary) {
  return guarded(out_summary, [&] {
    return mem::pipe::run_prepare(parse_config(config_json), require(events_csv, "events_csv"),
                                  require(recording_sidecar, "recording_sidecar"));
  });
}

mem_status mem_train(const char* config_json, char** out_result) {
  return guarded(out_result, [&] { return mem::pipe::run_train(parse_config(config_json)); });
}

mem_status mem_eval(const char* config_json, const char* checkpoint_path, int force,
                    char** out_report) {
  return guarded(out_report, [&] {
    return mem::pipe::run_eval(parse_config(config_json),
                               require(checkpoint_path, "checkpoint_path"), force != 0);
  });
}

mem_status mem_robustness(const char* config_json, const char* checkpoint_path, int force,
                          char** out_csv) {
  return guarded(out_csv, [&] {
    return mem::pipe::run_robustness(parse_config(config_json),
                                     require(checkpoint_path, "checkpoint_path"), force != 0);
  });
}

mem_status mem_reconstruct(const char* config_json, const char* checkpoint_path, int force,
                           char** out_manifest) {
  return guarded(out_manifest, [&] {
    return mem::pipe::run_reconstruct(parse_config(config_json),
                                      require(checkpoint_path, "checkpoint_path"), force != 0);
  });
}

mem_status mem_compare(const char* config_json, char** out_csv) {
  return guarded(out_csv, [&] { return mem::pipe::run_compare(parse_config(config_json)); });
}

mem_status mem_model_load(const char* checkpoint_path, mem_model** out_model) {
  if (out_model) *out_model = nullptr;
  try {
    require(checkpoint_path, "checkpoint_path");
    if (!out_model) throw mem::ConfigError("out_model must not be null");
    mem::train::CheckpointHeader header;
    mem::model::MemModel model = mem::train::load_checkpoint(checkpoint_path, &header);
    *out_model = new mem_model{std::move(model), std::move(header)};
    g_last_error.clear();
    return MEM_OK;
  } catch (...) {
    return map_current_exception();
  }
}

void mem_model_free(mem_model* model) { delete model; }

mem_status mem_model_info(const mem_model* model, char** out_json) {
  return guarded(out_json, [&]() -> std::string {
    if (!model) throw mem::ConfigError("model handle must not be null");
    json j;
    j["config"] = json::parse(model->model.config().to_json());
    j["config_hash"] = mem::util::hex64(model->header.config_hash);
    j["channels"] = model->header.channel_names;
    j["bin_freqs_hz"] = model->header.bin_freqs_hz;
    j["parameters"] = model->model.params().total_elements();
    return j.dump(2);
  });
}

mem_status mem_model_predict(const mem_model* model, const double* features, int n_channels,
                             int n_bins, const char* plan_json, char** out_json) {
  return guarded(out_json, [&]() -> std::string {
    if (!model) throw mem::ConfigError("model handle must not be null");
    if (!features) throw mem::ConfigError("features must not be null");
    const mem::model::MemConfig& cfg = model->model.config();
    if (n_channels != cfg.n_channels || n_bins != cfg.n_bins)
      throw mem::ConfigError("features shape does not match the model: expected " +
                             std::to_string(cfg.n_channels) + "x" +
                             std::to_string(cfg.n_bins));

    mem::nn::Array grid({n_channels, n_bins});
    std::memcpy(grid.data.data(), features,
                sizeof(double) * static_cast<size_t>(n_channels) * n_bins);

    mem::mask::MaskPlan plan;
    plan.strategy = cfg.strategy;
    plan.total_tokens = cfg.token_count();
    if (plan_json) {
      plan = mem::mask::MaskPlan::from_json(plan_json);
      if (plan.strategy != cfg.strategy || plan.total_tokens != cfg.token_count())
        throw mem::ConfigError("mask plan does not fit the model's token grid");
    }

    mem::nn::Tape tape;
    std::vector<mem::nn::Var> p = model->model.bind(tape);
    const auto out = model->model.forward_classifier(tape, p, grid, plan);
    const mem::nn::Array& probs = tape.value(out.class_probs);
    int best = 0;
    for (size_t i = 1; i < probs.data.size(); ++i)
      if (probs.data[i] > probs.data[best]) best = static_cast<int>(i);

    json j;
    j["prediction"] = mem::data::to_string(static_cast<mem::data::Intention>(best));
    j["label_index"] = best;
    j["probs"] = probs.data;
    return j.dump(2);
  });
}

}  // extern "C"
