#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "model.hpp"
#include "training.hpp"
#include "util.hpp"

using namespace mem;
using namespace mem::train;
namespace fsys = std::filesystem;

namespace {

struct TempDir {
  fsys::path path;
  explicit TempDir(const std::string& tag) {
    path = fsys::temp_directory_path() / ("mem_train_" + tag + "_" + std::to_string(::getpid()));
    fsys::remove_all(path);
    fsys::create_directories(path);
  }
  ~TempDir() { fsys::remove_all(path); }
  std::string str() const { return path.string(); }
};

const data::Corpus& corpus() {
  static const data::Corpus c = [] {
    data::SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.total_turning_events = 30;
    cfg.seed = 7;
    return data::synthesize_corpus(cfg);
  }();
  return c;
}

const std::vector<data::PreparedTrial>& features() {
  static const std::vector<data::PreparedTrial> f = data::prepare_features(corpus());
  return f;
}

model::MemConfig tiny_config() {
  model::MemConfig cfg;
  cfg.embed_size = 8;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.attention_heads = 2;
  cfg.feedforward_width = 16;
  cfg.n_channels = 12;
  cfg.n_bins = 18;
  return cfg;
}

TrainConfig fast_train_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 16;
  cfg.seed = 11;
  cfg.schedule.stages = {{0.25, 1000}};
  return cfg;
}

std::vector<int> first_ids(int n) {
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(static_cast<bool>(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  REQUIRE(static_cast<bool>(f));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("default curriculum steps the ratio every 200 epochs and holds the cap") {
  const CurriculumSchedule s = CurriculumSchedule::default_schedule();
  CHECK(s.stages.size() == 10);
  CHECK(s.total_epochs() == 2000);

  CHECK(s.ratio_for_epoch(0) == 0.05);
  CHECK(s.ratio_for_epoch(199) == 0.05);
  CHECK(s.ratio_for_epoch(200) == 0.15);
  CHECK(s.ratio_for_epoch(399) == 0.15);
  CHECK(s.ratio_for_epoch(400) == 0.25);
  CHECK(s.ratio_for_epoch(1600) == 0.85);
  CHECK(s.ratio_for_epoch(1799) == 0.85);
  CHECK(s.ratio_for_epoch(1800) == 0.90);
  CHECK(s.ratio_for_epoch(1999) == 0.90);
  CHECK(s.ratio_for_epoch(2000) == 0.90);  // held past the table
  CHECK(s.ratio_for_epoch(5000) == 0.90);

  double prev = 0.0;
  for (int e = 0; e < 2200; e += 7) {
    const double r = s.ratio_for_epoch(e);
    CHECK(r >= prev);
    prev = r;
  }
}

TEST_CASE("curriculum validation rejects malformed tables") {
  CurriculumSchedule s;
  CHECK_THROWS_AS(s.validate(), ConfigError);  // empty

  s.stages = {{0.5, 10}, {0.3, 10}};
  CHECK_THROWS_AS(s.validate(), ConfigError);  // decreasing

  s.stages = {{1.2, 10}};
  CHECK_THROWS_AS(s.validate(), ConfigError);  // ratio out of range

  s.stages = {{0.5, 0}};
  CHECK_THROWS_AS(s.validate(), ConfigError);  // empty stage

  s.stages = {{0.5, 10}};
  CHECK_NOTHROW(s.validate());
  CHECK_THROWS_AS(s.ratio_for_epoch(-1), ContractError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  TrainConfig bad = cfg;
  bad.learning_rate = -1e-4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("optimizer defaults match the training recipe") {
  const TrainConfig cfg;
  CHECK(cfg.learning_rate == 1e-4);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.epsilon == 1e-8);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.alpha == 0.1);
}

TEST_CASE("adaptive-moment update matches a hand-rolled scalar oracle") {
  nn::ParamStore store;
  store.add("theta", nn::Array::scalar(0.3));

  TrainConfig cfg;
  cfg.learning_rate = 0.1;

  // Oracle state, updated with the textbook recursions.
  double theta = 0.3, m = 0.0, v = 0.0;
  for (int64_t t = 1; t <= 5; ++t) {
    nn::Tape tape;
    auto vars = store.bind(tape);
    nn::Var loss = tape.mul(vars[0], vars[0]);  // g = 2 theta
    tape.backward(loss);

    const double g = 2.0 * theta;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const double v_hat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    theta -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);

    adam_step(store, tape, vars, cfg, t);
    CHECK(store.at(0).value.data[0] == doctest::Approx(theta).epsilon(1e-12));
  }
  // First step moves by almost exactly the learning rate (m_hat/sqrt(v_hat) ~ sign(g)).
  CHECK(std::fabs(0.3 - cfg.learning_rate - theta) < 1.0);
}

TEST_CASE("zero learning rate leaves every parameter bit-identical") {
  model::MemModel m(tiny_config(), 5);
  std::vector<std::vector<double>> before;
  for (size_t i = 0; i < m.params().size(); ++i)
    before.push_back(m.params().at(static_cast<int>(i)).value.data);

  TrainConfig cfg = fast_train_config();
  cfg.learning_rate = 0.0;
  int64_t steps = 0;
  train_epoch(m, features(), first_ids(8), cfg, 0, steps);
  CHECK(steps == 1);

  bool any_moment = false;
  for (size_t i = 0; i < m.params().size(); ++i) {
    CHECK(m.params().at(static_cast<int>(i)).value.data == before[i]);
    for (double x : m.params().at(static_cast<int>(i)).adam_m.data) any_moment |= x != 0.0;
  }
  CHECK(any_moment);  // the update ran; only the step size was zero
}

TEST_CASE("a single sample is memorized with the mask ratio pinned at zero") {
  model::MemModel m(tiny_config(), 2);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 1;
  cfg.alpha = 0.0;  // classification term only
  cfg.seed = 3;
  cfg.schedule.stages = {{0.0, 500}};

  const std::vector<int> ids = {0};
  int64_t steps = 0;
  EpochMetrics first = train_epoch(m, features(), ids, cfg, 0, steps);
  EpochMetrics last = first;
  for (int epoch = 1; epoch < 500; ++epoch)
    last = train_epoch(m, features(), ids, cfg, epoch, steps);

  CHECK(steps == 500);
  CHECK(last.ratio == 0.0);
  CHECK(last.train_acc == 1.0);
  CHECK(last.train_loss_cls < first.train_loss_cls);
  CHECK(last.train_loss_cls < 1e-2);
}

TEST_CASE("fixed seed reproduces metrics and parameters exactly") {
  TrainConfig cfg = fast_train_config();
  const std::vector<int> ids = first_ids(12);

  auto run = [&](uint64_t model_seed) {
    model::MemModel m(tiny_config(), model_seed);
    int64_t steps = 0;
    std::vector<EpochMetrics> log;
    for (int epoch = 0; epoch < 3; ++epoch)
      log.push_back(train_epoch(m, features(), ids, cfg, epoch, steps));
    std::vector<std::vector<double>> params;
    for (size_t i = 0; i < m.params().size(); ++i)
      params.push_back(m.params().at(static_cast<int>(i)).value.data);
    return std::make_pair(log, params);
  };

  const auto a = run(5);
  const auto b = run(5);
  REQUIRE(a.first.size() == b.first.size());
  for (size_t e = 0; e < a.first.size(); ++e) {
    CHECK(a.first[e].train_loss_cls == b.first[e].train_loss_cls);
    CHECK(a.first[e].train_loss_mse == b.first[e].train_loss_mse);
    CHECK(a.first[e].train_acc == b.first[e].train_acc);
  }
  CHECK(a.second == b.second);

  const auto c = run(6);  // different init should actually change the trajectory
  CHECK(a.first.back().train_loss_cls != c.first.back().train_loss_cls);
}

TEST_CASE("loss terms stay isolated: alpha gates the decoder, the squared error skips the classifier") {
  model::MemModel m(tiny_config(), 9);
  const data::PreparedTrial& trial = features()[0];
  util::Rng rng(util::derive_seed(1, util::kSeedMask));
  const mask::MaskPlan plan =
      mask::sample_mask(m.config().strategy, m.config().token_count(), 0.5, rng);

  auto zero_grad = [](const nn::Array& g) {
    return std::all_of(g.data.begin(), g.data.end(), [](double x) { return x == 0.0; });
  };

  {
    nn::Tape tape;
    auto p = m.bind(tape);
    auto out = m.forward(tape, p, trial.features, plan);
    auto lb = m.loss(tape, out, 0, trial.features, 0.0, plan);
    tape.backward(lb.total);
    const auto& store = m.params();
    CHECK(zero_grad(tape.grad(p[store.index_of("recon.weight")])));
    CHECK(zero_grad(tape.grad(p[store.index_of("recon.bias")])));
    CHECK(zero_grad(tape.grad(p[store.index_of("mask.token")])));
    CHECK_FALSE(zero_grad(tape.grad(p[store.index_of("cls.weight")])));
  }
  {
    nn::Tape tape;
    auto p = m.bind(tape);
    auto out = m.forward(tape, p, trial.features, plan);
    auto lb = m.loss(tape, out, 0, trial.features, 0.1, plan);
    tape.backward(lb.mse);
    const auto& store = m.params();
    CHECK(zero_grad(tape.grad(p[store.index_of("cls.weight")])));
    CHECK(zero_grad(tape.grad(p[store.index_of("cls.bias")])));
    CHECK_FALSE(zero_grad(tape.grad(p[store.index_of("recon.weight")])));
  }
}

TEST_CASE("fit walks the schedule, logs JSONL, and restores the best checkpoint") {
  TempDir tmp("fit");
  const std::string log_path = tmp.str() + "/train_log.jsonl";

  model::MemModel m(tiny_config(), 4);
  TrainConfig cfg = fast_train_config();
  cfg.schedule.stages = {{0.1, 2}, {0.5, 2}};

  FitOptions opt;
  opt.log_path = log_path;
  const FitResult res = fit(m, features(), corpus().split, cfg, opt);

  REQUIRE(res.history.size() == 4);
  CHECK(res.history[0].ratio == 0.1);
  CHECK(res.history[1].ratio == 0.1);
  CHECK(res.history[2].ratio == 0.5);
  CHECK(res.history[3].ratio == 0.5);

  double best = -1.0;
  int best_epoch = -1;
  for (const auto& e : res.history)
    if (e.val_acc > best) {
      best = e.val_acc;
      best_epoch = e.epoch;
    }
  CHECK(res.best_val_acc == best);
  CHECK(res.best_epoch == best_epoch);
  CHECK(res.best_val_acc >= res.history.back().val_acc);

  // The model left behind is the best epoch's snapshot, not the last one.
  CHECK(evaluate_accuracy(m, features(), corpus().split.val_ids()) == res.best_val_acc);

  std::ifstream log(log_path);
  REQUIRE(static_cast<bool>(log));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch").get<int>() == lines);
    CHECK(j.at("ratio").get<double>() == res.history[lines].ratio);
    CHECK(j.at("train_loss_cls").get<double>() == res.history[lines].train_loss_cls);
    CHECK(j.at("train_loss_mse").get<double>() == res.history[lines].train_loss_mse);
    CHECK(j.at("train_acc").get<double>() == res.history[lines].train_acc);
    CHECK(j.at("val_acc").get<double>() == res.history[lines].val_acc);
    ++lines;
  }
  CHECK(lines == 4);
}

TEST_CASE("fit refuses empty splits") {
  model::MemModel m(tiny_config(), 4);
  data::SplitManifest split;  // all empty
  CHECK_THROWS_AS(fit(m, features(), split, fast_train_config()), ConfigError);

  split.train[0] = {0, 1};
  CHECK_THROWS_AS(fit(m, features(), split, fast_train_config()), ConfigError);
}

TEST_CASE("periodic checkpoints follow the cadence") {
  TempDir tmp("cadence");
  model::MemModel m(tiny_config(), 4);
  TrainConfig cfg = fast_train_config();
  cfg.schedule.stages = {{0.1, 4}};
  cfg.checkpoint_every = 2;

  FitOptions opt;
  opt.checkpoint_dir = tmp.str();
  fit(m, features(), corpus().split, cfg, opt);

  CHECK(fsys::exists(tmp.path / "epoch_000001.ckpt"));
  CHECK_FALSE(fsys::exists(tmp.path / "epoch_000002.ckpt"));
  CHECK(fsys::exists(tmp.path / "epoch_000003.ckpt"));
  CHECK_NOTHROW(load_checkpoint((tmp.path / "epoch_000003.ckpt").string()));
}

TEST_CASE("a poisoned parameter aborts the epoch with diagnostics") {
  model::MemModel m(tiny_config(), 4);
  for (double& v : m.params().by_name("embed.weight").value.data)
    v = std::numeric_limits<double>::quiet_NaN();

  int64_t steps = 0;
  try {
    train_epoch(m, features(), first_ids(4), fast_train_config(), 0, steps);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite loss") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
    CHECK(msg.find("theta") != std::string::npos);
  }
}

TEST_CASE("checkpoint round-trip restores the model at storage precision") {
  TempDir tmp("ckpt");
  const std::string path_a = tmp.str() + "/model_a.ckpt";
  const std::string path_b = tmp.str() + "/model_b.ckpt";

  model::MemModel m(tiny_config(), 17);
  CheckpointHeader hdr;
  hdr.config = m.config();
  hdr.config_hash = 0xdeadbeefcafef00dULL;
  hdr.channel_names = data::default_channel_names();
  hdr.bin_freqs_hz = {3.0, 4.0, 5.0};
  save_checkpoint(path_a, m, hdr);

  CheckpointHeader back;
  model::MemModel loaded = load_checkpoint(path_a, &back);
  CHECK(back.config_hash == hdr.config_hash);
  CHECK(back.channel_names == hdr.channel_names);
  CHECK(back.bin_freqs_hz == hdr.bin_freqs_hz);
  CHECK(back.config.embed_size == m.config().embed_size);
  CHECK(back.config.strategy == m.config().strategy);

  REQUIRE(loaded.params().size() == m.params().size());
  for (size_t i = 0; i < m.params().size(); ++i) {
    const auto& orig = m.params().at(static_cast<int>(i));
    const auto& got = loaded.params().at(static_cast<int>(i));
    CHECK(got.name == orig.name);
    REQUIRE(got.value.data.size() == orig.value.data.size());
    for (size_t j = 0; j < orig.value.data.size(); ++j)
      CHECK(got.value.data[j] == static_cast<double>(static_cast<float>(orig.value.data[j])));
  }

  // Save-load-save is the identity on the container bytes.
  save_checkpoint(path_b, loaded, back);
  CHECK(read_file(path_a) == read_file(path_b));
}

TEST_CASE("checkpoint loading rejects corrupt containers") {
  TempDir tmp("corrupt");
  const std::string path = tmp.str() + "/model.ckpt";
  model::MemModel m(tiny_config(), 17);
  CheckpointHeader hdr;
  hdr.config = m.config();
  save_checkpoint(path, m, hdr);
  const std::string good = read_file(path);

  CHECK_THROWS_AS(load_checkpoint(tmp.str() + "/missing.ckpt"), FormatError);

  write_file(path, good.substr(0, good.size() - 5));  // chopped payload
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  std::string flipped = good;
  flipped[0] = 'X';
  write_file(path, flipped);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  std::string huge_header = good;
  huge_header[8] = static_cast<char>(0xff);  // header length beyond the file
  huge_header[15] = static_cast<char>(0x7f);
  write_file(path, huge_header);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  std::string garbage = good;
  garbage[20] = '!';  // break the JSON header
  write_file(path, garbage);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  write_file(path, good + std::string(1, '\0'));  // trailing bytes
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  write_file(path, good.substr(0, 7));  // shorter than the magic
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("identical runs produce byte-identical checkpoints") {
  TempDir tmp("det");
  auto run = [&](const std::string& name) {
    model::MemModel m(tiny_config(), 4);
    TrainConfig cfg = fast_train_config();
    cfg.schedule.stages = {{0.25, 2}};
    fit(m, features(), corpus().split, cfg);
    CheckpointHeader hdr;
    hdr.config = m.config();
    const std::string path = tmp.str() + "/" + name;
    save_checkpoint(path, m, hdr);
    return read_file(path);
  };
  CHECK(run("a.ckpt") == run("b.ckpt"));
}
