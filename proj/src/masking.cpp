#include "masking.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

using nlohmann::json;

namespace mem::mask {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kChannel: return "channel";
    case Strategy::kFrequency: return "frequency";
  }
  throw ContractError("to_string: bad strategy value");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "channel") return Strategy::kChannel;
  if (s == "frequency") return Strategy::kFrequency;
  throw ConfigError("unknown masking strategy '" + s + "'");
}

int token_count(Strategy strategy, int n_channels, int n_bins) {
  return strategy == Strategy::kChannel ? n_channels : n_bins;
}

int patch_length(Strategy strategy, int n_channels, int n_bins) {
  return strategy == Strategy::kChannel ? n_bins : n_channels;
}

int mask_count(double ratio, int total_tokens) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("mask ratio must lie in [0, 1]");
  if (total_tokens < 1) throw ContractError("mask_count: no tokens");
  const long count = std::lround(ratio * total_tokens);
  return static_cast<int>(std::clamp(count, 0L, static_cast<long>(total_tokens - 1)));
}

void MaskPlan::validate() const {
  if (total_tokens < 1) throw ContractError("mask plan: no tokens");
  if (ratio < 0.0 || ratio > 1.0) throw ContractError("mask plan: ratio outside [0, 1]");
  if (static_cast<int>(masked_indices.size()) >= total_tokens)
    throw ContractError("mask plan: no visible tokens left");
  for (size_t i = 0; i < masked_indices.size(); ++i) {
    if (masked_indices[i] < 0 || masked_indices[i] >= total_tokens)
      throw ContractError("mask plan: index out of range");
    if (i > 0 && masked_indices[i] <= masked_indices[i - 1])
      throw ContractError("mask plan: indices must be sorted and unique");
  }
}

std::vector<int> MaskPlan::visible_indices() const {
  std::vector<int> out;
  out.reserve(total_tokens - masked_indices.size());
  size_t m = 0;
  for (int i = 0; i < total_tokens; ++i) {
    if (m < masked_indices.size() && masked_indices[m] == i) {
      ++m;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

std::string MaskPlan::to_json() const {
  validate();
  const json j{{"strategy", to_string(strategy)},
               {"ratio", ratio},
               {"masked_indices", masked_indices},
               {"total_tokens", total_tokens}};
  return j.dump();
}

MaskPlan MaskPlan::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    MaskPlan plan;
    plan.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    plan.ratio = j.at("ratio").get<double>();
    plan.masked_indices = j.at("masked_indices").get<std::vector<int>>();
    plan.total_tokens = j.at("total_tokens").get<int>();
    plan.validate();
    return plan;
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask plan: malformed JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("mask plan: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("mask plan: ") + e.what());
  }
}

MaskPlan sample_mask(Strategy strategy, int total_tokens, double ratio, util::Rng& rng) {
  const int count = mask_count(ratio, total_tokens);
  std::vector<int> pool(total_tokens);
  for (int i = 0; i < total_tokens; ++i) pool[i] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(total_tokens - i));
    std::swap(pool[i], pool[j]);
  }
  MaskPlan plan;
  plan.strategy = strategy;
  plan.ratio = ratio;
  plan.total_tokens = total_tokens;
  plan.masked_indices.assign(pool.begin(), pool.begin() + count);
  std::sort(plan.masked_indices.begin(), plan.masked_indices.end());
  plan.validate();
  return plan;
}

nn::Array patchify(const dsp::Spectrogram& w, Strategy strategy) {
  if (!w.reference_applied)
    throw ContractError("patchify: spectrogram must be reference-normalized first");
  if (strategy == Strategy::kChannel) return w.psd;
  nn::Array out({w.bins(), w.channels()});
  for (int i = 0; i < w.channels(); ++i)
    for (int j = 0; j < w.bins(); ++j) out.at(j, i) = w.psd.at(i, j);
  return out;
}

nn::Array depatchify(const nn::Array& patches, Strategy strategy, int n_channels, int n_bins) {
  const int rows = patches.rows(), cols = patches.cols();
  if (strategy == Strategy::kChannel) {
    if (rows != n_channels || cols != n_bins)
      throw ShapeError("depatchify: expected one patch row per channel");
    return patches;
  }
  if (rows != n_bins || cols != n_channels)
    throw ShapeError("depatchify: expected one patch row per retained bin");
  nn::Array out({n_channels, n_bins});
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i) out.at(i, j) = patches.at(j, i);
  return out;
}

TokenSequence embed_patches(nn::Tape& tape, nn::Var patches, Strategy strategy, nn::Var weight,
                            nn::Var bias) {
  // Capture shapes by value: emitting nodes may reallocate the tape.
  const int n_patches = tape.value(patches).rows();
  const int width = tape.value(patches).cols();
  const int w_rows = tape.value(weight).rows();
  const int w_cols = tape.value(weight).cols();
  if (width != w_rows)
    throw ShapeError("embed_patches: projection width does not match the patch length");
  TokenSequence seq;
  seq.strategy = strategy;
  seq.count = n_patches;
  seq.embed_size = w_cols;
  seq.tokens = tape.add_bias(tape.matmul(patches, weight), bias);
  return seq;
}

SplitTokens split_by_mask(nn::Tape& tape, const TokenSequence& seq, const MaskPlan& plan) {
  plan.validate();
  if (plan.total_tokens != seq.count)
    throw ContractError("split_by_mask: plan token count does not match the sequence");
  if (plan.strategy != seq.strategy)
    throw ContractError("split_by_mask: plan strategy does not match the sequence");
  SplitTokens out;
  out.visible_positions = plan.visible_indices();
  out.masked_positions = plan.masked_indices;
  out.visible = tape.gather_rows(seq.tokens, out.visible_positions);
  return out;
}

}  // namespace mem::mask
