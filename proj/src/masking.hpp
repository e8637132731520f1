#pragma once

#include <string>
#include <vector>

#include "dsp.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace mem::mask {

// Channel strategy tokenizes spectrogram rows (one per channel); frequency
// strategy tokenizes columns (one per retained bin).
enum class Strategy { kChannel = 0, kFrequency = 1 };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

int token_count(Strategy strategy, int n_channels, int n_bins);
int patch_length(Strategy strategy, int n_channels, int n_bins);

// Number of masked tokens: round half away from zero, then clamp so at least
// one token stays visible.
int mask_count(double ratio, int total_tokens);

struct MaskPlan {
  Strategy strategy = Strategy::kChannel;
  double ratio = 0.0;
  std::vector<int> masked_indices;  // sorted, unique, each < total_tokens
  int total_tokens = 0;

  void validate() const;
  std::vector<int> visible_indices() const;
  std::string to_json() const;
  static MaskPlan from_json(const std::string& text);
};

// Uniform sample without replacement of mask_count(ratio, total) indices.
MaskPlan sample_mask(Strategy strategy, int total_tokens, double ratio, util::Rng& rng);

// Lossless views of an N x d spectrogram as token-order patch rows.
nn::Array patchify(const dsp::Spectrogram& w, Strategy strategy);
nn::Array depatchify(const nn::Array& patches, Strategy strategy, int n_channels, int n_bins);

struct TokenSequence {
  nn::Var tokens;  // K x s
  Strategy strategy = Strategy::kChannel;
  int count = 0;       // K
  int embed_size = 0;  // s
};

// Shared affine projection applied to every patch row.
TokenSequence embed_patches(nn::Tape& tape, nn::Var patches, Strategy strategy, nn::Var weight,
                            nn::Var bias);

struct SplitTokens {
  nn::Var visible;  // V x s, original relative order
  std::vector<int> visible_positions;
  std::vector<int> masked_positions;
};

SplitTokens split_by_mask(nn::Tape& tape, const TokenSequence& seq, const MaskPlan& plan);

}  // namespace mem::mask
