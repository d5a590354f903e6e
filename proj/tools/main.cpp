#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "cem/errors.hpp"
#include "commands.hpp"

namespace {

using cem::cli::RunConfig;

struct Alias {
  const char* flag;
  const char* path;
  const char* help;
};

constexpr Alias kAliases[] = {
    {"--objective", "objective.name", "alias of --objective.name"},
    {"--dataset", "dataset.kind", "alias of --dataset.kind"},
    {"--seed", "run.seed", "alias of --run.seed"},
    {"--out", "run.output_dir", "alias of --run.output_dir"},
    {"--checkpoint", "model.checkpoint", "alias of --model.checkpoint"},
    {"--ucr-weight", "objective.reg_weight", "alias of --objective.reg_weight"},
    {"--reg-weight", "objective.reg_weight", "alias of --objective.reg_weight"},
    {"--rule", "sampler.rule", "alias of --sampler.rule"},
    {"--alpha", "sampler.alpha", "alias of --sampler.alpha"},
    {"--beta", "sampler.beta", "alias of --sampler.beta"},
    {"--eta", "sampler.eta", "alias of --sampler.eta"},
    {"--steps", "sampler.steps", "alias of --sampler.steps"},
    {"--check", "verify.checks", "alias of --verify.checks"},
    {"--inject-fault", "verify.inject_fault", "test only: perturb one gradient route"},
};

// Options of one subcommand, captured as raw strings and applied over the
// defaults and the config file afterwards.
struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_file;
  bool all = false;
  std::map<std::string, std::string> dotted;
  std::map<std::string, std::string> aliased;
  std::vector<std::pair<CLI::Option*, std::string>> dotted_opts;
  std::vector<std::pair<CLI::Option*, const Alias*>> alias_opts;
};

void add_options(Subcommand& sub) {
  sub.app->add_option("--config", sub.config_file, "YAML config or manifest file");
  for (const auto& key : cem::cli::config_schema()) {
    auto* opt = sub.app->add_option("--" + key.path, sub.dotted[key.path],
                                    key.help + " [" + key.default_value + "]");
    sub.dotted_opts.emplace_back(opt, key.path);
  }
  for (const auto& alias : kAliases) {
    auto* opt = sub.app->add_option(alias.flag, sub.aliased[alias.flag], alias.help);
    sub.alias_opts.emplace_back(opt, &alias);
  }
  sub.app->add_flag("--all", sub.all, "alias of --verify.all true");
}

RunConfig resolve(const Subcommand& sub) {
  RunConfig config;
  if (!sub.config_file.empty()) config.merge_yaml_file(sub.config_file);
  for (const auto& [opt, alias] : sub.alias_opts) {
    if (opt->count() > 0) config.set(alias->path, sub.aliased.at(alias->flag));
  }
  for (const auto& [opt, path] : sub.dotted_opts) {
    if (opt->count() > 0) config.set(path, sub.dotted.at(path));
  }
  if (sub.all) config.set("verify.all", "true");
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive energy-based models: train, sample, verify, eval"};
  app.set_version_flag("--version", cem::cli::version_string());
  app.require_subcommand(1);

  using Command = int (*)(const RunConfig&);
  const std::pair<const char*, Command> commands[] = {
      {"train", cem::cli::cmd_train},
      {"sample", cem::cli::cmd_sample},
      {"verify", cem::cli::cmd_verify},
      {"eval", cem::cli::cmd_eval},
  };
  const char* descriptions[] = {
      "train a model and write weights, metrics and a manifest",
      "run sampler chains from a checkpoint",
      "run the gradient identity suite and write a JSON report",
      "natural and robust accuracy over an attack radius sweep",
  };
  std::vector<Subcommand> subs(std::size(commands));
  for (std::size_t i = 0; i < subs.size(); ++i) {
    subs[i].app = app.add_subcommand(commands[i].first, descriptions[i]);
    add_options(subs[i]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cem::cli::kExitUsage;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i].app->parsed()) continue;
    try {
      return commands[i].second(resolve(subs[i]));
    } catch (const cem::cli::UsageError& e) {
      std::cerr << "usage error: " << e.what() << "\n";
      return cem::cli::kExitUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return cem::cli::kExitFailure;
    }
  }
  return cem::cli::kExitUsage;
}
