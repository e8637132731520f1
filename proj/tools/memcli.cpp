// Command-line front end; all real work happens behind the C API.
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mem/mem.h"

namespace {

using nlohmann::json;

struct CliArgs {
  std::string config_path;
  std::string out_dir;
  std::string strategy;
  std::string checkpoint;
  std::string events;
  std::string recording;
  std::string ratios_csv;
  double mask_ratio = 0.0;
  bool has_mask_ratio = false;
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool force = false;
  bool quiet = false;
};

struct CliError {
  std::string message;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CliError{"cannot open config file " + path};
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::vector<double> parse_ratio_list(const std::string& text) {
  std::vector<double> out;
  std::string cell;
  std::stringstream ss(text);
  while (std::getline(ss, cell, ',')) {
    try {
      size_t used = 0;
      const double v = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      out.push_back(v);
    } catch (const std::exception&) {
      throw CliError{"bad ratio '" + cell + "' in --ratios"};
    }
  }
  if (out.empty()) throw CliError{"--ratios needs at least one value"};
  return out;
}

// Loads the config file and folds the command-line overrides into it; the
// patched document is what crosses the C API.
json patched_config(const CliArgs& args, const char* ratios_key) {
  json j;
  try {
    j = json::parse(read_file(args.config_path));
  } catch (const json::exception& e) {
    throw CliError{std::string("config: malformed JSON: ") + e.what()};
  }
  if (!j.is_object()) throw CliError{"config: document must be a JSON object"};
  if (args.has_seed) j["seed"] = args.seed;
  if (!args.out_dir.empty()) j["output_dir"] = args.out_dir;
  if (!args.strategy.empty()) j["model"]["strategy"] = args.strategy;
  if (args.has_mask_ratio) j["eval"]["mask_ratio"] = args.mask_ratio;
  if (ratios_key && !args.ratios_csv.empty())
    j["eval"][ratios_key] = parse_ratio_list(args.ratios_csv);
  return j;
}

std::string checkpoint_path(const CliArgs& args, const json& config) {
  if (!args.checkpoint.empty()) return args.checkpoint;
  return config.value("output_dir", std::string("out")) + "/model.ckpt";
}

int finish(mem_status status, char* payload, bool quiet) {
  if (status != MEM_OK) {
    std::fprintf(stderr, "error: %s\n", mem_last_error());
    mem_string_free(payload);
    return static_cast<int>(status);
  }
  if (!quiet && payload && *payload) {
    std::fputs(payload, stdout);
    if (payload[std::strlen(payload) - 1] != '\n') std::fputc('\n', stdout);
  }
  mem_string_free(payload);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-EEG driving-intention pipeline"};
  app.require_subcommand(1);

  CliArgs args;
  std::string command;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")
        ->required();
    cmd->add_option("--seed", args.seed, "override the config seed")
        ->each([&](const std::string&) { args.has_seed = true; });
    cmd->add_option("--out", args.out_dir, "override the output directory");
    cmd->add_flag("--quiet", args.quiet, "suppress the payload on stdout");
    cmd->callback([&, cmd] { command = cmd->get_name(); });
    return cmd;
  };
  auto add_strategy = [&](CLI::App* cmd) {
    cmd->add_option("--strategy", args.strategy, "masking strategy")
        ->check(CLI::IsMember({"channel", "frequency"}));
  };
  auto add_checkpoint = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", args.checkpoint,
                    "checkpoint path (default: <output_dir>/model.ckpt)");
    cmd->add_flag("--force", args.force, "proceed past a config-fingerprint mismatch");
  };

  add_common(app.add_subcommand("synth", "synthesize a labeled corpus"));

  CLI::App* prepare = add_common(
      app.add_subcommand("prepare", "build a corpus from a recording and an events CSV"));
  prepare->add_option("--events", args.events, "driving events CSV")->required();
  prepare->add_option("--recording", args.recording, "recording JSON sidecar")->required();

  CLI::App* train = add_common(app.add_subcommand("train", "train a model on the corpus"));
  add_strategy(train);

  CLI::App* evalc = add_common(app.add_subcommand("eval", "score a checkpoint on the test split"));
  add_strategy(evalc);
  add_checkpoint(evalc);
  evalc->add_option("--mask-ratio", args.mask_ratio, "masking ratio at inference")
      ->each([&](const std::string&) { args.has_mask_ratio = true; });

  CLI::App* robust =
      add_common(app.add_subcommand("robustness", "accuracy-vs-masking-ratio sweep"));
  add_strategy(robust);
  add_checkpoint(robust);
  robust->add_option("--ratios", args.ratios_csv, "comma-separated sweep ratios");

  CLI::App* recon =
      add_common(app.add_subcommand("reconstruct", "export reconstruction grids"));
  add_strategy(recon);
  add_checkpoint(recon);
  recon->add_option("--ratios", args.ratios_csv, "comma-separated export ratios");

  add_common(app.add_subcommand("compare", "masking-strategy comparison table"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const char* ratios_key = command == "robustness"  ? "sweep_ratios"
                             : command == "reconstruct" ? "export_ratios"
                                                        : nullptr;
    const json config = patched_config(args, ratios_key);
    const std::string config_text = config.dump();
    char* payload = nullptr;
    mem_status status = MEM_OK;

    if (command == "synth") {
      status = mem_synth(config_text.c_str(), &payload);
    } else if (command == "prepare") {
      status = mem_prepare(config_text.c_str(), args.events.c_str(), args.recording.c_str(),
                           &payload);
    } else if (command == "train") {
      status = mem_train(config_text.c_str(), &payload);
    } else if (command == "eval") {
      status = mem_eval(config_text.c_str(), checkpoint_path(args, config).c_str(),
                        args.force ? 1 : 0, &payload);
    } else if (command == "robustness") {
      status = mem_robustness(config_text.c_str(), checkpoint_path(args, config).c_str(),
                              args.force ? 1 : 0, &payload);
    } else if (command == "reconstruct") {
      status = mem_reconstruct(config_text.c_str(), checkpoint_path(args, config).c_str(),
                               args.force ? 1 : 0, &payload);
    } else if (command == "compare") {
      status = mem_compare(config_text.c_str(), &payload);
    } else {
      std::fprintf(stderr, "error: unknown command '%s'\n", command.c_str());
      return 2;
    }
    return finish(status, payload, args.quiet);
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s\n", e.message.c_str());
    return 2;
  }
}
