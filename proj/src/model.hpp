#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masking.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace mem::model {

struct MemConfig {
  int embed_size = 512;         // s
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int attention_heads = 4;
  int feedforward_width = 0;    // 0 resolves to 4*s
  mask::Strategy strategy = mask::Strategy::kChannel;
  int num_classes = 3;
  double dropout = 0.0;
  std::string positional = "learned";  // or "sinusoidal"
  int n_channels = 12;          // N
  int n_bins = 18;              // d
  bool reconstruct_masked_only = false;

  void validate() const;
  int ff_width() const { return feedforward_width > 0 ? feedforward_width : 4 * embed_size; }
  int head_dim() const { return embed_size / attention_heads; }
  int token_count() const { return mask::token_count(strategy, n_channels, n_bins); }
  int patch_len() const { return mask::patch_length(strategy, n_channels, n_bins); }
  int64_t parameter_count() const;  // closed form, checked against the store

  std::string to_json() const;
  static MemConfig from_json(const std::string& text);
};

struct ForwardOutput {
  nn::Var latent;          // V x s, one row per visible token
  nn::Var recon_tokens;    // K x patch_len
  nn::Var reconstruction;  // N x d (token rows mapped back to spectrogram layout)
  nn::Var class_logits;    // 1 x num_classes
  nn::Var class_probs;     // softmax of the logits
};

struct LossBreakdown {
  nn::Var total;
  nn::Var cross_entropy;
  nn::Var mse;
};

class MemModel {
 public:
  explicit MemModel(const MemConfig& cfg, uint64_t seed = 1);

  const MemConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  std::vector<nn::Var> bind(nn::Tape& tape) const { return store_.bind(tape); }

  // Full masked-autoencoding pass: gather visible patches (masked content
  // never enters the graph), embed, add positional embeddings, encode,
  // re-assemble with the mask token, decode, classify.
  ForwardOutput forward(nn::Tape& tape, const std::vector<nn::Var>& p,
                        const nn::Array& features, const mask::MaskPlan& plan,
                        util::Rng* dropout_rng = nullptr) const;

  // Classifier-only pass (no decoder); with an empty mask this is the plain
  // vision-transformer configuration and reproduces forward()'s logits
  // bit for bit.
  ForwardOutput forward_classifier(nn::Tape& tape, const std::vector<nn::Var>& p,
                                   const nn::Array& features, const mask::MaskPlan& plan,
                                   util::Rng* dropout_rng = nullptr) const;

  // L = CE(probs, label) + alpha * mean((reconstruction - target)^2); the
  // mean runs over all N*d elements, or only masked token rows when
  // configured (empty mask then contributes zero).
  LossBreakdown loss(nn::Tape& tape, const ForwardOutput& out, int label,
                     const nn::Array& target_features, double alpha,
                     const mask::MaskPlan& plan) const;

  // Pre-norm transformer blocks over the visible tokens; one latent row per
  // visible token, no trailing normalization.
  nn::Var encode(nn::Tape& tape, const std::vector<nn::Var>& p, nn::Var visible_tokens,
                 util::Rng* dropout_rng = nullptr) const;

  // Insert the mask token at masked positions, add positional embeddings to
  // the full-size sequence, run the decoder blocks, and map every token back
  // to its patch (K x patch_len).
  nn::Var decode(nn::Tape& tape, const std::vector<nn::Var>& p, nn::Var latent,
                 const std::vector<int>& visible_positions,
                 const std::vector<int>& masked_positions,
                 util::Rng* dropout_rng = nullptr) const;

  // Mean-pool over latent tokens, then an affine map to class logits.
  nn::Var classify(nn::Tape& tape, const std::vector<nn::Var>& p, nn::Var latent) const;

 private:
  struct BlockLayout {
    int ln1_g, ln1_b;
    int wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b;
    int w1, b1, w2, b2;
  };
  struct Layout {
    int embed_w = -1, embed_b = -1;
    int pos = -1;  // -1 when sinusoidal (not a parameter)
    int mask_token = -1;
    std::vector<BlockLayout> enc, dec;
    int recon_w = -1, recon_b = -1;
    int cls_w = -1, cls_b = -1;
  };

  nn::Var positional_rows(nn::Tape& tape, const std::vector<nn::Var>& p,
                          const std::vector<int>& positions) const;
  nn::Var run_blocks(nn::Tape& tape, const std::vector<nn::Var>& p,
                     const std::vector<BlockLayout>& blocks, nn::Var x,
                     util::Rng* dropout_rng) const;

  MemConfig cfg_;
  nn::ParamStore store_;
  Layout layout_;
  nn::Array sinusoidal_;  // precomputed table when positional == "sinusoidal"
};

// Sinusoidal position table (K x s): interleaved sine/cosine pairs.
nn::Array sinusoidal_table(int count, int width);

}  // namespace mem::model
