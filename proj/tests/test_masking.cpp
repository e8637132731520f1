#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "masking.hpp"
#include "tensor.hpp"
#include "util.hpp"

using namespace mem;
using namespace mem::mask;

namespace {

dsp::Spectrogram random_spectrogram(int n_ch, int n_bins, uint64_t seed) {
  dsp::Spectrogram w;
  w.psd = nn::Array({n_ch, n_bins});
  util::Rng rng(seed);
  for (double& v : w.psd.data) v = rng.normal();
  for (int j = 0; j < n_bins; ++j) w.bin_freqs_hz.push_back(3.0 + j);
  w.reference_applied = true;
  return w;
}

}  // namespace

TEST_CASE("strategy names round-trip") {
  CHECK(strategy_from_string("channel") == Strategy::kChannel);
  CHECK(strategy_from_string("frequency") == Strategy::kFrequency);
  CHECK(std::string(to_string(Strategy::kFrequency)) == "frequency");
  CHECK_THROWS_AS(strategy_from_string("temporal"), ConfigError);
}

TEST_CASE("patchify shapes: rows per channel or per retained bin") {
  const dsp::Spectrogram w = random_spectrogram(12, 18, 1);
  const nn::Array by_channel = patchify(w, Strategy::kChannel);
  CHECK(by_channel.rows() == 12);
  CHECK(by_channel.cols() == 18);
  const nn::Array by_freq = patchify(w, Strategy::kFrequency);
  CHECK(by_freq.rows() == 18);
  CHECK(by_freq.cols() == 12);
  CHECK(by_freq.at(5, 3) == w.psd.at(3, 5));

  CHECK(token_count(Strategy::kChannel, 12, 18) == 12);
  CHECK(token_count(Strategy::kFrequency, 12, 18) == 18);
  CHECK(patch_length(Strategy::kChannel, 12, 18) == 18);
  CHECK(patch_length(Strategy::kFrequency, 12, 18) == 12);
}

TEST_CASE("patchify requires normalized input") {
  dsp::Spectrogram w = random_spectrogram(4, 6, 2);
  w.reference_applied = false;
  CHECK_THROWS_AS(patchify(w, Strategy::kChannel), ContractError);
}

TEST_CASE("depatchify inverts patchify for both strategies") {
  const dsp::Spectrogram w = random_spectrogram(12, 18, 3);
  for (Strategy s : {Strategy::kChannel, Strategy::kFrequency}) {
    const nn::Array back = depatchify(patchify(w, s), s, 12, 18);
    CHECK(back.data == w.psd.data);
  }
  CHECK_THROWS_AS(depatchify(nn::Array({5, 18}), Strategy::kChannel, 12, 18), ShapeError);
  CHECK_THROWS_AS(depatchify(nn::Array({12, 18}), Strategy::kFrequency, 12, 18), ShapeError);
}

TEST_CASE("mask counts round half away from zero and keep one token visible") {
  CHECK(mask_count(0.0, 12) == 0);
  CHECK(mask_count(0.5, 12) == 6);
  CHECK(mask_count(0.9, 12) == 11);
  CHECK(mask_count(1.0, 12) == 11);  // clamp: one visible token remains
  CHECK(mask_count(0.125, 12) == 2); // 1.5 rounds away from zero
  CHECK(mask_count(0.05, 12) == 1);
  CHECK_THROWS_AS(mask_count(-0.1, 12), ConfigError);
  CHECK_THROWS_AS(mask_count(1.1, 12), ConfigError);
}

TEST_CASE("ratio zero samples an empty mask; ratio half masks exactly six of twelve") {
  util::Rng rng(7);
  const MaskPlan none = sample_mask(Strategy::kChannel, 12, 0.0, rng);
  CHECK(none.masked_indices.empty());
  CHECK(none.visible_indices().size() == 12);
  const MaskPlan half = sample_mask(Strategy::kChannel, 12, 0.5, rng);
  CHECK(half.masked_indices.size() == 6);
}

TEST_CASE("mask sampling is uniform across indices") {
  util::Rng rng(11);
  const int draws = 100000;
  std::vector<int> hits(12, 0);
  for (int i = 0; i < draws; ++i) {
    const MaskPlan plan = sample_mask(Strategy::kChannel, 12, 0.5, rng);
    for (int idx : plan.masked_indices) ++hits[idx];
  }
  for (int idx = 0; idx < 12; ++idx) {
    const double freq = static_cast<double>(hits[idx]) / draws;
    CHECK(std::fabs(freq - 0.5) < 0.01);
  }
}

TEST_CASE("mask sampling never repeats an index") {
  util::Rng rng(13);
  for (int trial = 0; trial < 1000000; ++trial) {
    const int total = 2 + static_cast<int>(rng.uniform_int(14));
    const MaskPlan plan = sample_mask(Strategy::kFrequency, total, rng.uniform(), rng);
    for (size_t i = 1; i < plan.masked_indices.size(); ++i)
      if (plan.masked_indices[i] <= plan.masked_indices[i - 1]) {
        REQUIRE(false);  // duplicate or unsorted index
      }
  }
  CHECK(true);
}

TEST_CASE("visible and masked positions partition the token range") {
  util::Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int total = 2 + static_cast<int>(rng.uniform_int(30));
    const MaskPlan plan = sample_mask(Strategy::kChannel, total, rng.uniform(), rng);
    std::set<int> all;
    for (int i : plan.masked_indices) all.insert(i);
    for (int i : plan.visible_indices()) {
      CHECK(all.find(i) == all.end());
      all.insert(i);
    }
    CHECK(static_cast<int>(all.size()) == total);
  }
}

TEST_CASE("mask plans serialize to JSON and back") {
  util::Rng rng(19);
  const MaskPlan plan = sample_mask(Strategy::kFrequency, 18, 0.4, rng);
  const std::string text = plan.to_json();
  const MaskPlan back = MaskPlan::from_json(text);
  CHECK(back.strategy == plan.strategy);
  CHECK(back.ratio == plan.ratio);
  CHECK(back.total_tokens == plan.total_tokens);
  CHECK(back.masked_indices == plan.masked_indices);

  CHECK_THROWS_AS(MaskPlan::from_json("{bad"), FormatError);
  CHECK_THROWS_AS(MaskPlan::from_json(R"({"strategy":"channel","ratio":0.5})"), FormatError);
  CHECK_THROWS_AS(
      MaskPlan::from_json(
          R"({"strategy":"channel","ratio":0.5,"masked_indices":[3,3],"total_tokens":12})"),
      FormatError);
  CHECK_THROWS_AS(
      MaskPlan::from_json(
          R"({"strategy":"channel","ratio":0.5,"masked_indices":[12],"total_tokens":12})"),
      FormatError);
}

TEST_CASE("zero projection embeds every patch to the zero token") {
  nn::Tape tape;
  const dsp::Spectrogram w = random_spectrogram(5, 7, 23);
  const nn::Var patches = tape.constant(patchify(w, Strategy::kChannel));
  const nn::Var weight = tape.leaf(nn::Array({7, 4}));  // zero-initialized
  const nn::Var bias = tape.leaf(nn::Array({1, 4}));
  const TokenSequence seq = embed_patches(tape, patches, Strategy::kChannel, weight, bias);
  CHECK(seq.count == 5);
  CHECK(seq.embed_size == 4);
  for (double v : tape.value(seq.tokens).data) CHECK(v == 0.0);
}

TEST_CASE("identity projection with matching widths reproduces the patches") {
  nn::Tape tape;
  const dsp::Spectrogram w = random_spectrogram(6, 9, 29);
  const nn::Array p = patchify(w, Strategy::kChannel);
  const nn::Var patches = tape.constant(p);
  const nn::Var weight = tape.leaf(nn::Array::identity(9));
  const nn::Var bias = tape.leaf(nn::Array({1, 9}));
  const TokenSequence seq = embed_patches(tape, patches, Strategy::kChannel, weight, bias);
  CHECK(tape.value(seq.tokens).data == p.data);
}

TEST_CASE("embedding equals an explicit matrix-product oracle") {
  nn::Tape tape;
  util::Rng rng(31);
  const dsp::Spectrogram w = random_spectrogram(12, 18, 37);
  const nn::Array p = patchify(w, Strategy::kChannel);
  nn::Array weight({18, 8}), bias({1, 8});
  for (double& v : weight.data) v = rng.normal();
  for (double& v : bias.data) v = rng.normal();
  const TokenSequence seq = embed_patches(tape, tape.constant(p), Strategy::kChannel,
                                          tape.leaf(weight), tape.leaf(bias));
  const nn::Array& tokens = tape.value(seq.tokens);
  for (int i = 0; i < 12; ++i)
    for (int k = 0; k < 8; ++k) {
      long double acc = bias.at(0, k);
      for (int j = 0; j < 18; ++j)
        acc += static_cast<long double>(p.at(i, j)) * weight.at(j, k);
      CHECK(tokens.at(i, k) == doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
    }

  // width mismatch is rejected before any arithmetic happens
  nn::Tape t2;
  CHECK_THROWS_AS(embed_patches(t2, t2.constant(p), Strategy::kChannel,
                                t2.leaf(nn::Array({17, 8})), t2.leaf(nn::Array({1, 8}))),
                  ShapeError);
}

TEST_CASE("empty mask keeps every token visible in order") {
  nn::Tape tape;
  const dsp::Spectrogram w = random_spectrogram(5, 4, 41);
  const TokenSequence seq = embed_patches(tape, tape.constant(patchify(w, Strategy::kChannel)),
                                          Strategy::kChannel, tape.leaf(nn::Array::identity(4)),
                                          tape.leaf(nn::Array({1, 4})));
  MaskPlan plan;
  plan.strategy = Strategy::kChannel;
  plan.ratio = 0.0;
  plan.total_tokens = 5;
  const SplitTokens split = split_by_mask(tape, seq, plan);
  CHECK(split.masked_positions.empty());
  CHECK(split.visible_positions == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(tape.value(split.visible).data == tape.value(seq.tokens).data);
}

TEST_CASE("all-but-one masked leaves the single unmasked token") {
  nn::Tape tape;
  const dsp::Spectrogram w = random_spectrogram(6, 3, 43);
  const TokenSequence seq = embed_patches(tape, tape.constant(patchify(w, Strategy::kChannel)),
                                          Strategy::kChannel, tape.leaf(nn::Array::identity(3)),
                                          tape.leaf(nn::Array({1, 3})));
  MaskPlan plan;
  plan.strategy = Strategy::kChannel;
  plan.ratio = 5.0 / 6.0;
  plan.total_tokens = 6;
  plan.masked_indices = {0, 1, 2, 4, 5};
  const SplitTokens split = split_by_mask(tape, seq, plan);
  CHECK(split.visible_positions == std::vector<int>{3});
  const nn::Array& visible = tape.value(split.visible);
  CHECK(visible.rows() == 1);
  for (int j = 0; j < 3; ++j) CHECK(visible.at(0, j) == tape.value(seq.tokens).at(3, j));
}

TEST_CASE("reassembling split tokens restores visible rows and marks masked ones") {
  nn::Tape tape;
  util::Rng rng(47);
  const dsp::Spectrogram w = random_spectrogram(8, 5, 53);
  const TokenSequence seq = embed_patches(tape, tape.constant(patchify(w, Strategy::kChannel)),
                                          Strategy::kChannel, tape.leaf(nn::Array::identity(5)),
                                          tape.leaf(nn::Array({1, 5})));
  const MaskPlan plan = sample_mask(Strategy::kChannel, 8, 0.5, rng);
  const SplitTokens split = split_by_mask(tape, seq, plan);

  nn::Array token_value({1, 5});
  for (double& v : token_value.data) v = rng.normal();
  const nn::Var mask_token = tape.leaf(token_value);
  const nn::Var rebuilt = tape.assemble_rows(split.visible, mask_token, split.visible_positions,
                                             split.masked_positions, 8);
  const nn::Array& r = tape.value(rebuilt);
  for (int pos : split.visible_positions)
    for (int j = 0; j < 5; ++j) CHECK(r.at(pos, j) == tape.value(seq.tokens).at(pos, j));
  for (int pos : split.masked_positions)
    for (int j = 0; j < 5; ++j) CHECK(r.at(pos, j) == token_value.at(0, j));
}

TEST_CASE("split rejects plans that disagree with the sequence") {
  nn::Tape tape;
  const dsp::Spectrogram w = random_spectrogram(4, 3, 59);
  const TokenSequence seq = embed_patches(tape, tape.constant(patchify(w, Strategy::kChannel)),
                                          Strategy::kChannel, tape.leaf(nn::Array::identity(3)),
                                          tape.leaf(nn::Array({1, 3})));
  MaskPlan plan;
  plan.strategy = Strategy::kChannel;
  plan.total_tokens = 9;  // wrong K
  CHECK_THROWS_AS(split_by_mask(tape, seq, plan), ContractError);
  plan.total_tokens = 4;
  plan.strategy = Strategy::kFrequency;
  CHECK_THROWS_AS(split_by_mask(tape, seq, plan), ContractError);
  plan.strategy = Strategy::kChannel;
  plan.masked_indices = {7};  // out of range
  CHECK_THROWS_AS(split_by_mask(tape, seq, plan), ContractError);
}

TEST_CASE("gradients flow through embed, split, and reassembly") {
  util::Rng rng(61);
  nn::Array patches({4, 3}), weight({3, 4}), bias({1, 4}), token({1, 4});
  for (double& v : patches.data) v = rng.normal();
  for (double& v : weight.data) v = rng.normal();
  for (double& v : bias.data) v = rng.normal();
  for (double& v : token.data) v = rng.normal();
  MaskPlan plan;
  plan.strategy = Strategy::kChannel;
  plan.ratio = 0.5;
  plan.total_tokens = 4;
  plan.masked_indices = {1, 3};

  auto loss_at = [&](const nn::Array& wv, const nn::Array& bv, const nn::Array& tv) {
    nn::Tape tape;
    const TokenSequence seq = embed_patches(tape, tape.constant(patches), Strategy::kChannel,
                                            tape.leaf(wv), tape.leaf(bv));
    const SplitTokens split = split_by_mask(tape, seq, plan);
    const nn::Var rebuilt = tape.assemble_rows(split.visible, tape.leaf(tv),
                                               split.visible_positions, split.masked_positions, 4);
    const nn::Var sq = tape.mul(rebuilt, rebuilt);
    return tape.value(tape.mean_all(sq)).data[0];
  };

  nn::Tape tape;
  const nn::Var wv = tape.leaf(weight), bv = tape.leaf(bias), tv = tape.leaf(token);
  const TokenSequence seq =
      embed_patches(tape, tape.constant(patches), Strategy::kChannel, wv, bv);
  const SplitTokens split = split_by_mask(tape, seq, plan);
  const nn::Var rebuilt = tape.assemble_rows(split.visible, tv, split.visible_positions,
                                             split.masked_positions, 4);
  tape.backward(tape.mean_all(tape.mul(rebuilt, rebuilt)));

  const double h = 1e-5;
  auto check_grad = [&](nn::Var var, nn::Array base, int kind) {
    const nn::Array& g = tape.grad(var);
    for (size_t i = 0; i < base.data.size(); ++i) {
      nn::Array plus = base, minus = base;
      plus.data[i] += h;
      minus.data[i] -= h;
      double fd;
      if (kind == 0) fd = (loss_at(plus, bias, token) - loss_at(minus, bias, token)) / (2 * h);
      else if (kind == 1) fd = (loss_at(weight, plus, token) - loss_at(weight, minus, token)) / (2 * h);
      else fd = (loss_at(weight, bias, plus) - loss_at(weight, bias, minus)) / (2 * h);
      CHECK(g.data[i] == doctest::Approx(fd).epsilon(1e-4));
    }
  };
  check_grad(wv, weight, 0);
  check_grad(bv, bias, 1);
  check_grad(tv, token, 2);
}
