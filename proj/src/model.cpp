#include "model.hpp"

#include <cmath>
#include <utility>

#include <json.hpp>

using nlohmann::json;

namespace mem::model {

void MemConfig::validate() const {
  if (embed_size < 1) throw ConfigError("model: embed size must be positive");
  if (attention_heads < 1 || embed_size % attention_heads != 0)
    throw ConfigError("model: embed size must be divisible by the attention head count");
  if (encoder_blocks < 1 || decoder_blocks < 1)
    throw ConfigError("model: encoder and decoder need at least one block each");
  if (feedforward_width < 0) throw ConfigError("model: feedforward width must be nonnegative");
  if (num_classes < 2) throw ConfigError("model: need at least two classes");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
  if (positional != "learned" && positional != "sinusoidal")
    throw ConfigError("model: positional must be 'learned' or 'sinusoidal'");
  if (n_channels < 1 || n_bins < 1)
    throw ConfigError("model: channel and bin counts must be positive");
}

int64_t MemConfig::parameter_count() const {
  const int64_t s = embed_size;
  const int64_t ff = ff_width();
  const int64_t k = token_count();
  const int64_t pl = patch_len();
  const int64_t per_block = 4 * s * s + 2 * s * ff + ff + 9 * s;
  int64_t total = pl * s + s;                       // patch projection
  if (positional == "learned") total += k * s;      // positional table
  total += s;                                       // mask token
  total += (encoder_blocks + decoder_blocks) * per_block;
  total += s * pl + pl;                             // reconstruction head
  total += s * num_classes + num_classes;           // classifier head
  return total;
}

std::string MemConfig::to_json() const {
  const json j{{"embed_size", embed_size},
               {"encoder_blocks", encoder_blocks},
               {"decoder_blocks", decoder_blocks},
               {"attention_heads", attention_heads},
               {"feedforward_width", feedforward_width},
               {"strategy", mask::to_string(strategy)},
               {"num_classes", num_classes},
               {"dropout", dropout},
               {"positional", positional},
               {"n_channels", n_channels},
               {"n_bins", n_bins},
               {"reconstruct_masked_only", reconstruct_masked_only}};
  return j.dump();
}

MemConfig MemConfig::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    MemConfig cfg;
    cfg.embed_size = j.at("embed_size").get<int>();
    cfg.encoder_blocks = j.at("encoder_blocks").get<int>();
    cfg.decoder_blocks = j.at("decoder_blocks").get<int>();
    cfg.attention_heads = j.at("attention_heads").get<int>();
    cfg.feedforward_width = j.at("feedforward_width").get<int>();
    cfg.strategy = mask::strategy_from_string(j.at("strategy").get<std::string>());
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.positional = j.at("positional").get<std::string>();
    cfg.n_channels = j.at("n_channels").get<int>();
    cfg.n_bins = j.at("n_bins").get<int>();
    cfg.reconstruct_masked_only = j.at("reconstruct_masked_only").get<bool>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: malformed JSON: ") + e.what());
  }
}

nn::Array sinusoidal_table(int count, int width) {
  nn::Array table({count, width});
  for (int pos = 0; pos < count; ++pos)
    for (int i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(width));
      table.at(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  return table;
}

namespace {

nn::Array normal_init(util::Rng& rng, std::vector<int> shape, double stddev = 0.02) {
  nn::Array a(std::move(shape));
  for (double& v : a.data) v = rng.normal(0.0, stddev);
  return a;
}

nn::Array ones(std::vector<int> shape) {
  nn::Array a(std::move(shape));
  for (double& v : a.data) v = 1.0;
  return a;
}

// Channel strategy: rows of the feature matrix; frequency strategy: columns.
nn::Array patch_matrix(const nn::Array& features, mask::Strategy strategy) {
  if (strategy == mask::Strategy::kChannel) return features;
  nn::Array out({features.cols(), features.rows()});
  for (int i = 0; i < features.rows(); ++i)
    for (int j = 0; j < features.cols(); ++j) out.at(j, i) = features.at(i, j);
  return out;
}

nn::Array gather_rows_plain(const nn::Array& m, const std::vector<int>& rows) {
  nn::Array out({static_cast<int>(rows.size()), m.cols()});
  for (size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < m.cols(); ++c) out.at(static_cast<int>(r), c) = m.at(rows[r], c);
  return out;
}

}  // namespace

MemModel::MemModel(const MemConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  util::Rng rng(util::derive_seed(seed, util::kSeedInit));
  const int s = cfg_.embed_size;
  const int ff = cfg_.ff_width();
  const int k = cfg_.token_count();
  const int pl = cfg_.patch_len();

  layout_.embed_w = store_.add("embed.weight", normal_init(rng, {pl, s}));
  layout_.embed_b = store_.add("embed.bias", nn::Array({1, s}));
  if (cfg_.positional == "learned")
    layout_.pos = store_.add("pos.table", normal_init(rng, {k, s}));
  else
    sinusoidal_ = sinusoidal_table(k, s);
  layout_.mask_token = store_.add("mask.token", normal_init(rng, {1, s}));

  auto add_block = [&](const std::string& prefix) {
    BlockLayout b;
    b.ln1_g = store_.add(prefix + ".ln1.gamma", ones({1, s}));
    b.ln1_b = store_.add(prefix + ".ln1.beta", nn::Array({1, s}));
    b.wq = store_.add(prefix + ".attn.wq", normal_init(rng, {s, s}));
    b.bq = store_.add(prefix + ".attn.bq", nn::Array({1, s}));
    b.wk = store_.add(prefix + ".attn.wk", normal_init(rng, {s, s}));
    b.bk = store_.add(prefix + ".attn.bk", nn::Array({1, s}));
    b.wv = store_.add(prefix + ".attn.wv", normal_init(rng, {s, s}));
    b.bv = store_.add(prefix + ".attn.bv", nn::Array({1, s}));
    b.wo = store_.add(prefix + ".attn.wo", normal_init(rng, {s, s}));
    b.bo = store_.add(prefix + ".attn.bo", nn::Array({1, s}));
    b.ln2_g = store_.add(prefix + ".ln2.gamma", ones({1, s}));
    b.ln2_b = store_.add(prefix + ".ln2.beta", nn::Array({1, s}));
    b.w1 = store_.add(prefix + ".ff.w1", normal_init(rng, {s, ff}));
    b.b1 = store_.add(prefix + ".ff.b1", nn::Array({1, ff}));
    b.w2 = store_.add(prefix + ".ff.w2", normal_init(rng, {ff, s}));
    b.b2 = store_.add(prefix + ".ff.b2", nn::Array({1, s}));
    return b;
  };
  for (int i = 0; i < cfg_.encoder_blocks; ++i)
    layout_.enc.push_back(add_block("enc" + std::to_string(i)));
  for (int i = 0; i < cfg_.decoder_blocks; ++i)
    layout_.dec.push_back(add_block("dec" + std::to_string(i)));

  layout_.recon_w = store_.add("recon.weight", normal_init(rng, {s, pl}));
  layout_.recon_b = store_.add("recon.bias", nn::Array({1, pl}));
  layout_.cls_w = store_.add("cls.weight", normal_init(rng, {s, cfg_.num_classes}));
  layout_.cls_b = store_.add("cls.bias", nn::Array({1, cfg_.num_classes}));

  if (store_.total_elements() != cfg_.parameter_count())
    throw ContractError("model: parameter count disagrees with the closed form");
}

nn::Var MemModel::positional_rows(nn::Tape& tape, const std::vector<nn::Var>& p,
                                  const std::vector<int>& positions) const {
  if (layout_.pos >= 0) return tape.gather_rows(p[layout_.pos], positions);
  return tape.constant(gather_rows_plain(sinusoidal_, positions));
}

nn::Var MemModel::run_blocks(nn::Tape& tape, const std::vector<nn::Var>& p,
                             const std::vector<BlockLayout>& blocks, nn::Var x,
                             util::Rng* dropout_rng) const {
  const int heads = cfg_.attention_heads;
  const int hd = cfg_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  auto maybe_dropout = [&](nn::Var v) {
    if (cfg_.dropout <= 0.0 || dropout_rng == nullptr) return v;
    const double keep = 1.0 - cfg_.dropout;
    nn::Array mask(tape.value(v).shape);
    for (double& m : mask.data) m = dropout_rng->uniform() < keep ? 1.0 : 0.0;
    return tape.dropout(v, mask, keep);
  };

  for (const BlockLayout& b : blocks) {
    const nn::Var h = tape.layer_norm_rows(x, p[b.ln1_g], p[b.ln1_b]);
    const nn::Var q = tape.add_bias(tape.matmul(h, p[b.wq]), p[b.bq]);
    const nn::Var kk = tape.add_bias(tape.matmul(h, p[b.wk]), p[b.bk]);
    const nn::Var v = tape.add_bias(tape.matmul(h, p[b.wv]), p[b.bv]);
    std::vector<nn::Var> head_outs;
    for (int head = 0; head < heads; ++head) {
      const nn::Var qh = tape.slice_cols(q, head * hd, hd);
      const nn::Var kh = tape.slice_cols(kk, head * hd, hd);
      const nn::Var vh = tape.slice_cols(v, head * hd, hd);
      const nn::Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale);
      head_outs.push_back(tape.matmul(tape.softmax_rows(scores), vh));
    }
    const nn::Var merged = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    const nn::Var attended =
        maybe_dropout(tape.add_bias(tape.matmul(merged, p[b.wo]), p[b.bo]));
    x = tape.add(x, attended);

    const nn::Var h2 = tape.layer_norm_rows(x, p[b.ln2_g], p[b.ln2_b]);
    const nn::Var inner = tape.gelu(tape.add_bias(tape.matmul(h2, p[b.w1]), p[b.b1]));
    const nn::Var ff_out =
        maybe_dropout(tape.add_bias(tape.matmul(inner, p[b.w2]), p[b.b2]));
    x = tape.add(x, ff_out);
  }
  return x;
}

nn::Var MemModel::encode(nn::Tape& tape, const std::vector<nn::Var>& p, nn::Var visible_tokens,
                         util::Rng* dropout_rng) const {
  if (tape.value(visible_tokens).rows() < 1)
    throw ContractError("encode: at least one visible token required");
  return run_blocks(tape, p, layout_.enc, visible_tokens, dropout_rng);
}

nn::Var MemModel::classify(nn::Tape& tape, const std::vector<nn::Var>& p, nn::Var latent) const {
  const nn::Var pooled = tape.mean_rows(latent);
  return tape.add_bias(tape.matmul(pooled, p[layout_.cls_w]), p[layout_.cls_b]);
}

nn::Var MemModel::decode(nn::Tape& tape, const std::vector<nn::Var>& p, nn::Var latent,
                         const std::vector<int>& visible_positions,
                         const std::vector<int>& masked_positions,
                         util::Rng* dropout_rng) const {
  const int k = cfg_.token_count();
  if (static_cast<int>(visible_positions.size() + masked_positions.size()) != k)
    throw ContractError("decode: positions do not add up to the token count");
  const nn::Var full =
      tape.assemble_rows(latent, p[layout_.mask_token], visible_positions, masked_positions, k);
  std::vector<int> all_positions(k);
  for (int i = 0; i < k; ++i) all_positions[i] = i;
  const nn::Var decoded = run_blocks(
      tape, p, layout_.dec, tape.add(full, positional_rows(tape, p, all_positions)),
      dropout_rng);
  return tape.add_bias(tape.matmul(decoded, p[layout_.recon_w]), p[layout_.recon_b]);
}

ForwardOutput MemModel::forward(nn::Tape& tape, const std::vector<nn::Var>& p,
                                const nn::Array& features, const mask::MaskPlan& plan,
                                util::Rng* dropout_rng) const {
  ForwardOutput out = forward_classifier(tape, p, features, plan, dropout_rng);
  out.recon_tokens = decode(tape, p, out.latent, plan.visible_indices(), plan.masked_indices,
                            dropout_rng);
  out.reconstruction = cfg_.strategy == mask::Strategy::kChannel
                           ? out.recon_tokens
                           : tape.transpose(out.recon_tokens);
  return out;
}

ForwardOutput MemModel::forward_classifier(nn::Tape& tape, const std::vector<nn::Var>& p,
                                           const nn::Array& features, const mask::MaskPlan& plan,
                                           util::Rng* dropout_rng) const {
  if (features.rows() != cfg_.n_channels || features.cols() != cfg_.n_bins)
    throw ShapeError("forward: feature matrix does not match the configured N x d");
  plan.validate();
  if (plan.strategy != cfg_.strategy)
    throw ContractError("forward: mask plan strategy does not match the model");
  if (plan.total_tokens != cfg_.token_count())
    throw ContractError("forward: mask plan token count does not match the model");

  // Only visible patches enter the graph: masked content cannot influence
  // any downstream value.
  const std::vector<int> visible = plan.visible_indices();
  const nn::Array patches = gather_rows_plain(patch_matrix(features, cfg_.strategy), visible);
  const mask::TokenSequence seq = mask::embed_patches(
      tape, tape.constant(patches), cfg_.strategy, p[layout_.embed_w], p[layout_.embed_b]);
  const nn::Var tokens = tape.add(seq.tokens, positional_rows(tape, p, visible));

  ForwardOutput out;
  out.latent = encode(tape, p, tokens, dropout_rng);
  out.class_logits = classify(tape, p, out.latent);
  out.class_probs = tape.softmax_rows(out.class_logits);
  return out;
}

LossBreakdown MemModel::loss(nn::Tape& tape, const ForwardOutput& out, int label,
                             const nn::Array& target_features, double alpha,
                             const mask::MaskPlan& plan) const {
  if (alpha < 0) throw ConfigError("loss: alpha must be nonnegative");
  if (label < 0 || label >= cfg_.num_classes)
    throw ContractError("loss: label outside the class range");
  if (target_features.rows() != cfg_.n_channels || target_features.cols() != cfg_.n_bins)
    throw ShapeError("loss: target does not match the configured N x d");

  LossBreakdown breakdown;
  breakdown.cross_entropy = tape.cross_entropy(out.class_probs, label);

  const nn::Array target_patches = patch_matrix(target_features, cfg_.strategy);
  nn::Var mse;
  if (cfg_.reconstruct_masked_only) {
    if (plan.masked_indices.empty()) {
      mse = tape.constant(nn::Array::scalar(0.0));
    } else {
      const nn::Var masked_rows = tape.gather_rows(out.recon_tokens, plan.masked_indices);
      const nn::Var diff = tape.sub(
          masked_rows, tape.constant(gather_rows_plain(target_patches, plan.masked_indices)));
      mse = tape.mean_all(tape.mul(diff, diff));
    }
  } else {
    const nn::Var diff = tape.sub(out.recon_tokens, tape.constant(target_patches));
    mse = tape.mean_all(tape.mul(diff, diff));
  }
  breakdown.mse = mse;
  breakdown.total = tape.add(breakdown.cross_entropy, tape.scale(mse, alpha));
  return breakdown;
}

}  // namespace mem::model
