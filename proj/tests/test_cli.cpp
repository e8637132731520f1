#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "util.hpp"

using nlohmann::json;
namespace fsys = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return {};
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  REQUIRE(f);
  f << text;
}

struct TempDir {
  fsys::path path;
  TempDir() {
    path = fsys::temp_directory_path() /
           ("mem_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fsys::create_directories(path);
  }
  ~TempDir() { fsys::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string str(const std::string& leaf) const { return (path / leaf).string(); }

  RunResult run(const std::string& args) const {
    const std::string out = str("stdout.txt"), err = str("stderr.txt");
    const std::string cmd =
        std::string(MEMCLI_PATH) + " " + args + " >" + out + " 2>" + err;
    const int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
  }
};

// Same tiny-but-trainable setup the pipeline suite uses.
std::string write_config(const TempDir& dir, const std::string& patch = "{}") {
  json j;
  j["corpus_dir"] = dir.str("corpus");
  j["output_dir"] = dir.str("out");
  j["seed"] = 5;
  j["channels"] = {"C3", "CP3", "P3", "C4", "CP4", "P4"};
  j["model"] = {{"embed_size", 8}, {"encoder_blocks", 1}, {"decoder_blocks", 1},
                {"attention_heads", 2}, {"feedforward_width", 16}};
  j["train"] = {{"learning_rate", 0.001}, {"batch_size", 8},
                {"schedule", json::array({{{"ratio", 0.25}, {"epochs", 2}}})}};
  j["synth"] = {{"subjects", 2}, {"turning_events", 16}};
  const json p = json::parse(patch);
  for (auto it = p.begin(); it != p.end(); ++it) {
    if (it->is_object() && j.contains(it.key()))
      for (auto inner = it->begin(); inner != it->end(); ++inner)
        j[it.key()][inner.key()] = inner.value();
    else
      j[it.key()] = it.value();
  }
  const std::string path = dir.str("cfg.json");
  write_file(path, j.dump(2));
  return path;
}

void write_recording(const std::string& sidecar_path, const std::string& subject,
                     double seconds) {
  const std::vector<std::string> channels = {"C3", "CP3", "P3", "C4", "CP4", "P4"};
  const int total = static_cast<int>(seconds * 500.0);
  mem::util::Rng rng(23);
  std::string blob;
  blob.reserve(channels.size() * total * 4);
  for (size_t c = 0; c < channels.size(); ++c) {
    for (int t = 0; t < total; ++t) {
      const float v = static_cast<float>(rng.normal());
      blob.append(reinterpret_cast<const char*>(&v), 4);
    }
  }
  const fsys::path samples = fsys::path(sidecar_path).parent_path() / "samples.f32";
  write_file(samples.string(), blob);
  json side;
  side["subject_id"] = subject;
  side["channels"] = channels;
  side["sampling_rate_hz"] = 500.0;
  side["samples_file"] = "samples.f32";
  write_file(sidecar_path, side.dump(2));
}

}  // namespace

TEST_CASE("synth prints a summary, writes the corpus, and reruns identically") {
  TempDir dir;
  const std::string cfg = write_config(dir);
  const RunResult r = dir.run("synth --config " + cfg);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const json summary = json::parse(r.out);
  CHECK(summary.at("n_trials") == 24);
  CHECK(fsys::exists(dir.str("corpus") + "/manifest.json"));
  CHECK(fsys::exists(dir.str("corpus") + "/trials.bin"));

  TempDir dir2;
  const RunResult r2 = dir2.run("synth --config " + write_config(dir2));
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file(dir.str("corpus") + "/trials.bin") ==
        read_file(dir2.str("corpus") + "/trials.bin"));

  // --quiet suppresses the payload but not the artifacts.
  TempDir dir3;
  const RunResult r3 = dir3.run("synth --quiet --config " + write_config(dir3));
  REQUIRE(r3.exit_code == 0);
  CHECK(r3.out.empty());
  CHECK(fsys::exists(dir3.str("corpus") + "/trials.bin"));
}

TEST_CASE("config and usage problems exit with code 2") {
  TempDir dir;

  // Duplicate channel name: the message names the offending field.
  const std::string dup = write_config(
      dir, R"({"channels": ["C3", "C3", "P3", "C4", "CP4", "P4"]})");
  const RunResult r = dir.run("synth --config " + dup);
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("channels") != std::string::npos);

  CHECK(dir.run("synth --config " + dir.str("missing.json")).exit_code == 2);

  write_file(dir.str("broken.json"), "{not json");
  const RunResult bad = dir.run("synth --config " + dir.str("broken.json"));
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("malformed") != std::string::npos);

  write_file(dir.str("typo.json"), R"({"corpus_path": "x"})");
  const RunResult typo = dir.run("synth --config " + dir.str("typo.json"));
  CHECK(typo.exit_code == 2);
  CHECK(typo.err.find("unknown key") != std::string::npos);

  CHECK(dir.run("synth").exit_code == 2);              // missing --config
  CHECK(dir.run("frobnicate --config x").exit_code == 2);  // unknown command
  CHECK(dir.run("--help").exit_code == 0);
}

TEST_CASE("train then eval produce the metric artifacts and honor overrides") {
  TempDir dir;
  const std::string cfg = write_config(dir);
  REQUIRE(dir.run("synth --quiet --config " + cfg).exit_code == 0);
  const RunResult tr = dir.run("train --config " + cfg);
  CAPTURE(tr.err);
  REQUIRE(tr.exit_code == 0);
  CHECK(fsys::exists(dir.str("out") + "/model.ckpt"));
  CHECK(fsys::exists(dir.str("out") + "/train_log.jsonl"));

  const RunResult ev = dir.run("eval --config " + cfg + " --mask-ratio 0.5 --seed 9");
  CAPTURE(ev.err);
  REQUIRE(ev.exit_code == 0);
  const json m = json::parse(ev.out);
  CHECK(m.at("mask_ratio") == 0.5);
  CHECK(m.at("seed") == 9);
  CHECK(m.at("strategy") == "channel");
  for (const char* key : {"micro_accuracy", "macro_precision", "macro_recall", "macro_f1"})
    CHECK(m.at("report").contains(key));
  CHECK(fsys::exists(dir.str("out") + "/metrics.json"));
  CHECK(fsys::exists(dir.str("out") + "/confusion.csv"));
}

TEST_CASE("a fingerprint mismatch exits 4 unless forced") {
  TempDir dir;
  const std::string cfg = write_config(dir);
  REQUIRE(dir.run("synth --quiet --config " + cfg).exit_code == 0);
  REQUIRE(dir.run("train --quiet --config " + cfg).exit_code == 0);

  const RunResult refused = dir.run("eval --config " + cfg + " --strategy frequency");
  CHECK(refused.exit_code == 4);
  CHECK(refused.err.find("force") != std::string::npos);

  const RunResult forced = dir.run("eval --config " + cfg + " --strategy frequency --force");
  CAPTURE(forced.err);
  CHECK(forced.exit_code == 0);
}

TEST_CASE("a diverging run exits 3") {
  TempDir dir;
  const std::string cfg = write_config(dir, R"({"train": {"learning_rate": 1e30}})");
  REQUIRE(dir.run("synth --quiet --config " + cfg).exit_code == 0);
  const RunResult r = dir.run("train --config " + cfg);
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("prepare builds a corpus from raw inputs and reports bad rows") {
  TempDir dir;
  const std::string cfg = write_config(dir);
  write_recording(dir.str("rec.json"), "s01", 21.5);
  const std::string header =
      "subject_id,deviation_onset_s,response_onset_s,response_offset_s,steering_direction\n";
  write_file(dir.str("events.csv"), header +
                                        "s01,12.0,12.9,13.7,right\n"
                                        "s01,5.0,5.8,6.6,left\n"
                                        "s01,19.0,20.0,20.6,right\n");
  const RunResult r = dir.run("prepare --config " + cfg + " --events " + dir.str("events.csv") +
                              " --recording " + dir.str("rec.json"));
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(json::parse(r.out).at("n_trials") == 6);
  CHECK(json::parse(r.out).at("n_references") == 3);

  write_file(dir.str("bad.csv"), header + "s01,5.0,5.8,6.6,left\ns01,oops,9.9,10.1,right\n");
  const RunResult bad = dir.run("prepare --config " + cfg + " --events " + dir.str("bad.csv") +
                                " --recording " + dir.str("rec.json"));
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("line 3") != std::string::npos);

  CHECK(dir.run("prepare --config " + cfg).exit_code == 2);  // missing required flags
}

TEST_CASE("robustness and reconstruct honor --ratios") {
  TempDir dir;
  const std::string cfg = write_config(dir, R"({"eval": {"sweep_seeds": [1]}})");
  REQUIRE(dir.run("synth --quiet --config " + cfg).exit_code == 0);
  REQUIRE(dir.run("train --quiet --config " + cfg).exit_code == 0);

  const RunResult sweep = dir.run("robustness --config " + cfg + " --ratios 0.0,0.5");
  CAPTURE(sweep.err);
  REQUIRE(sweep.exit_code == 0);
  int lines = 0;
  for (char ch : sweep.out) lines += ch == '\n';
  CHECK(lines == 1 + 2);
  CHECK(fsys::exists(dir.str("out") + "/robustness.csv"));

  const RunResult rec = dir.run("reconstruct --config " + cfg + " --ratios 0.3,0.6,0.9");
  CAPTURE(rec.err);
  REQUIRE(rec.exit_code == 0);
  const json manifest = json::parse(rec.out);
  REQUIRE(manifest.at("exports").size() % 3 == 0);  // three ratios per exported trial
  CHECK(manifest.at("exports").size() >= 3);
  std::set<double> seen;
  for (const json& e : manifest.at("exports")) seen.insert(e.at("ratio").get<double>());
  CHECK(seen == std::set<double>{0.3, 0.6, 0.9});

  const RunResult badratio = dir.run("robustness --config " + cfg + " --ratios 0.3,abc");
  CHECK(badratio.exit_code == 2);
  CHECK(badratio.err.find("bad ratio") != std::string::npos);
}

TEST_CASE("compare emits the strategy table") {
  TempDir dir;
  const std::string cfg = write_config(dir);
  REQUIRE(dir.run("synth --quiet --config " + cfg).exit_code == 0);
  const RunResult r = dir.run("compare --config " + cfg);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("strategy") != std::string::npos);
  CHECK(fsys::exists(dir.str("out") + "/comparison.csv"));
}

TEST_CASE("--out redirects every artifact") {
  TempDir dir;
  const std::string cfg = write_config(dir);
  REQUIRE(dir.run("synth --quiet --config " + cfg).exit_code == 0);
  const RunResult tr = dir.run("train --quiet --config " + cfg + " --out " + dir.str("elsewhere"));
  CAPTURE(tr.err);
  REQUIRE(tr.exit_code == 0);
  CHECK(fsys::exists(dir.str("elsewhere") + "/model.ckpt"));
  // The default checkpoint path follows the overridden output directory.
  const RunResult ev = dir.run("eval --config " + cfg + " --out " + dir.str("elsewhere"));
  CAPTURE(ev.err);
  CHECK(ev.exit_code == 0);
  CHECK(fsys::exists(dir.str("elsewhere") + "/metrics.json"));
}
