#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "statml/cli/runner.hpp"

namespace {

namespace fs = std::filesystem;
using namespace statml::cli;

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string format = "csv";
};

int load_config(const std::string& path, ConfigDocument& doc) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "statml: cannot open config '" << path << "'\n";
    return kExitValidation;
  }
  try {
    doc = ConfigDocument::parse(in);
  } catch (const std::exception& e) {
    std::cerr << "statml: " << path << ": " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"statml: reproducible statistical-mechanics and learning experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  int exit_code = kExitOk;

  for (const auto& cmd : subcommands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.summary);
    auto flags = std::make_shared<CommonFlags>();
    sub->add_option("--config", flags->config, "Config file (key = value lines)")->required();
    auto* seed_opt = sub->add_option("--seed", flags->seed, "Master seed");
    sub->add_option("--out", flags->out, "Output directory")->capture_default_str();
    sub->add_option("--format", flags->format, "Trace format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    sub->callback([&exit_code, flags, seed_opt, name = cmd.name] {
      RunRequest req;
      req.subcommand = name;
      if ((exit_code = load_config(flags->config, req.config)) != kExitOk) return;
      req.config_dir = fs::path(flags->config).parent_path();
      if (seed_opt->count() > 0) req.seed = flags->seed;
      req.out_dir = flags->out;
      req.format = flags->format;
      exit_code = run(req, std::cerr);
    });
  }

  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  std::string validate_target, validate_config_path;
  validate->add_option("subcommand", validate_target, "Subcommand the config is for")->required();
  validate->add_option("--config", validate_config_path, "Config file")->required();
  validate->callback([&] {
    if (!find_subcommand(validate_target)) {
      std::cerr << "statml validate: unknown subcommand '" << validate_target << "'\n";
      exit_code = kExitUsage;
      return;
    }
    ConfigDocument doc;
    if ((exit_code = load_config(validate_config_path, doc)) != kExitOk) return;
    const auto diags = validate_config(validate_target, doc, fs::path(validate_config_path).parent_path());
    for (const auto& d : diags) std::cout << d.to_string() << "\n";
    if (diags.empty()) std::cout << "ok\n";
    exit_code = diags.empty() ? kExitOk : kExitValidation;
  });

  auto* replay_cmd = app.add_subcommand("replay", "Re-run a recorded manifest and compare artifacts");
  std::string manifest_path, replay_out = "replay";
  replay_cmd->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
  replay_cmd->add_option("--out", replay_out, "Output directory")->capture_default_str();
  replay_cmd->callback([&] { exit_code = replay(manifest_path, replay_out, std::cout, std::cerr); });

  auto* keys = app.add_subcommand("keys", "Print the config key reference");
  keys->callback([] { std::cout << config_reference(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  return exit_code;
}
