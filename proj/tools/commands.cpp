#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <fcntl.h>
#include <unistd.h>

#include "cem/identity.hpp"
#include "cem/training.hpp"

namespace cem::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Translates contract violations raised while interpreting the config.
template <class F>
auto as_usage(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ContractError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

SamplerConfig attack_config(const RunConfig& c, const std::string& section) {
  SamplerConfig s;
  s.alpha = c.get_double(section + ".alpha");
  s.beta = c.get_double(section + ".beta");
  s.eta = c.get_double(section + ".eta");
  s.k_steps = c.get_uint(section + ".steps");
  s.normalize_gradient = c.get_bool(section + ".normalize");
  s.rule = Rule::kPgd;
  as_usage(section, [&] {
    s.validate();
    return 0;
  });
  return s;
}

SamplerConfig sampler_config(const RunConfig& c) {
  SamplerConfig s;
  s.rule = as_usage("sampler.rule", [&] { return parse_rule(c.get_string("sampler.rule")); });
  s.alpha = c.get_double("sampler.alpha");
  s.beta = c.get_double("sampler.beta");
  s.eta = c.get_double("sampler.eta");
  s.k_steps = c.get_uint("sampler.steps");
  s.anneal = c.get_double("sampler.anneal");
  s.normalize_gradient = c.get_bool("sampler.normalize");
  s.trajectory_stride = c.get_uint("sampler.trajectory_stride");
  as_usage("sampler", [&] {
    s.validate();
    return 0;
  });
  return s;
}

Encoder build_encoder(const RunConfig& c) {
  const std::string act = c.get_string("model.activation");
  if (act != "tanh" && act != "relu") {
    throw UsageError("model.activation: expected tanh or relu, got '" + act + "'");
  }
  Rng rng(c.get_uint("model.seed"));
  return Encoder::mlp(2, c.get_sizes("model.hidden"), c.get_uint("model.features"),
                      act == "tanh" ? Activation::kTanh : Activation::kRelu, rng);
}

LoadedModel load_checkpoint(const RunConfig& c) {
  const std::string path = c.get_string("model.checkpoint");
  if (path.empty()) throw UsageError("model.checkpoint: a weights file is required");
  if (!fs::exists(path)) throw UsageError("model.checkpoint: no such file " + path);
  return load_weights(path);
}

struct Workspace {
  fs::path dir;
  OutputLock lock;

  Workspace(const RunConfig& config, const std::string& command)
      : dir(resolve_output_dir(config, command)), lock((fs::create_directories(dir), dir)) {
    write_text(dir / "manifest.yaml", manifest_yaml(config, command));
  }
};

}  // namespace

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".lock") {
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw std::runtime_error("output directory " + dir.string() +
                             " is in use (remove " + path_.string() + " if stale)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(fd, pid.data(), pid.size()) < 0) {
    // The pid is informational only.
  }
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

fs::path resolve_output_dir(const RunConfig& config, const std::string& command) {
  const std::string& dir = config.get_string("run.output_dir");
  if (!dir.empty()) return dir;
  const char* root = std::getenv("CEM_OUTPUT_ROOT");
  return fs::path(root != nullptr && *root != '\0' ? root : "cem_runs") / command;
}

Dataset2D build_dataset(const RunConfig& c) {
  const std::string kind = c.get_string("dataset.kind");
  Rng rng(c.get_uint("dataset.seed"));
  const std::size_t size = c.get_uint("dataset.size");
  return as_usage("dataset", [&]() -> Dataset2D {
    if (kind == "moons") return make_two_moons(size, c.get_double("dataset.noise"), rng);
    if (kind == "mixture") {
      return make_gaussian_mixture(c.get_uint("dataset.modes"), c.get_double("dataset.radius"),
                                   c.get_double("dataset.sigma"), size, rng);
    }
    if (kind == "gaussians") {
      const auto mean = c.get_doubles("dataset.mean");
      const auto sd = c.get_doubles("dataset.stddev");
      if (mean.size() != 2 || sd.size() != 2) {
        throw UsageError("dataset.mean / dataset.stddev: expected two comma-separated values");
      }
      return make_two_gaussians({mean[0], mean[1]}, {sd[0], sd[1]}, size, rng);
    }
    if (kind == "csv") {
      const std::string& path = c.get_string("dataset.path");
      if (path.empty()) throw UsageError("dataset.path: required for dataset.kind=csv");
      return read_dataset_csv(path);
    }
    throw UsageError("dataset.kind: expected moons, mixture, gaussians or csv, got '" + kind + "'");
  });
}

int cmd_train(const RunConfig& c) {
  const Objective objective = as_usage(
      "objective.name", [&] { return parse_objective(c.get_string("objective.name")); });
  Dataset2D data = build_dataset(c);
  TrainSpec spec;
  spec.objective = objective;
  spec.reg_weight = c.get_double("objective.reg_weight");
  spec.attack = attack_config(c, "attack");
  spec.eval_attack = attack_config(c, "eval_attack");
  spec.optimizer.lr = c.get_double("optimizer.lr");
  spec.optimizer.momentum = c.get_double("optimizer.momentum");
  spec.optimizer.weight_decay = c.get_double("optimizer.weight_decay");
  spec.optimizer.epochs = c.get_uint("optimizer.epochs");
  spec.optimizer.batch_size = c.get_uint("optimizer.batch_size");
  spec.seed = c.get_uint("run.seed");
  Encoder encoder = build_encoder(c);
  if (is_supervised(objective) && !data.labels) {
    throw UsageError("objective.name: " + to_string(objective) + " needs a labeled dataset");
  }

  Workspace ws(c, "train");
  const fs::path weights = ws.dir / "model.cemw";
  const fs::path metrics = ws.dir / "metrics.csv";
  auto run = [&](auto& model) {
    try {
      TrainResult result = as_usage("train", [&] { return train(model, data, spec); });
      save_weights(weights.string(), model);
      write_metrics_csv(metrics.string(), result.log);
      std::cout << "trained " << to_string(objective) << " for " << result.log.size()
                << " epochs; outputs in " << ws.dir.string() << "\n";
      return kExitOk;
    } catch (const TrainingDiverged& e) {
      save_weights(weights.string(), model);
      write_metrics_csv(metrics.string(), e.log());
      std::cerr << "error: " << e.what() << "; last good weights saved to " << weights.string()
                << "\n";
      return kExitFailure;
    }
  };
  if (is_supervised(objective)) {
    Rng rng(c.get_uint("model.seed") + 1);
    PCemModel model = PCemModel::random(std::move(encoder), data.num_classes(), rng);
    return run(model);
  }
  NPCemModel model(std::move(encoder));
  return run(model);
}

int cmd_sample(const RunConfig& c) {
  const SamplerConfig config = sampler_config(c);
  LoadedModel loaded = load_checkpoint(c);
  const bool parametric = loaded.kind == ModelKind::kPCem;
  if (parametric != is_supervised(config.rule)) {
    throw UsageError("sampler.rule: " + to_string(config.rule) + " cannot run on a " +
                     (parametric ? "P-CEM" : "NP-CEM") + " checkpoint");
  }
  Dataset2D data = build_dataset(c);
  SeedSpec seeds_spec;
  seeds_spec.mode = as_usage("seeds.mode", [&] { return parse_seed_mode(c.get_string("seeds.mode")); });
  seeds_spec.reference = data.points;
  if (data.labels) seeds_spec.labels = *data.labels;
  const std::size_t chains = c.get_uint("sampler.chains");
  if (chains == 0) throw UsageError("sampler.chains: must be >= 1");
  const std::uint64_t seed = c.get_uint("run.seed");
  Rng rng(seed);
  SeedBatch seeds = as_usage("seeds", [&] { return init_seeds(seeds_spec, chains, rng); });

  Workspace ws(c, "sample");
  ChainResult result;
  std::vector<std::size_t> classes;
  if (parametric) {
    const std::size_t k = loaded.pcem.num_classes();
    ChainAux aux;
    for (std::size_t i = 0; i < chains; ++i) {
      aux.labels.push_back(seeds.classes.size() == chains && seeds.classes[i] < k
                               ? seeds.classes[i]
                               : i % k);
    }
    classes = aux.labels;
    result = run_chain(loaded.pcem, config, seeds.points, aux, seed);
  } else {
    ChainAux aux;
    aux.positives = seeds.points;
    aux.negatives = data.points;
    result = run_chain(loaded.npcem, config, seeds.points, aux, seed);
  }
  write_samples_csv((ws.dir / "samples.csv").string(), result.final_state, classes);
  if (config.trajectory_stride > 0) {
    write_trajectory_csv((ws.dir / "trajectory.csv").string(), result.trajectory);
  }
  std::cout << "sampled " << chains << " chains x " << config.k_steps << " steps ("
            << to_string(config.rule) << "); outputs in " << ws.dir.string() << "\n";
  return kExitOk;
}

int cmd_verify(const RunConfig& c) {
  const std::string kLangevin = "langevin_gaussian";
  std::vector<std::string> all = suite_check_names();
  all.push_back(kLangevin);
  std::vector<std::string> selected;
  const std::string& list = c.get_string("verify.checks");
  if (c.get_bool("verify.all") || list.empty()) {
    selected = all;
  } else {
    std::string item;
    for (char ch : list + ",") {
      if (ch == ',') {
        if (!item.empty()) {
          if (std::find(all.begin(), all.end(), item) == all.end()) {
            throw UsageError("verify.checks: unknown check '" + item + "'");
          }
          selected.push_back(item);
        }
        item.clear();
      } else if (ch != ' ') {
        item += ch;
      }
    }
  }
  SuiteOptions options;
  options.seed = c.get_uint("verify.seed");
  options.trials = c.get_uint("verify.trials");
  options.fault = c.get_double("verify.inject_fault");
  if (options.trials == 0) throw UsageError("verify.trials: must be >= 1");

  Workspace ws(c, "verify");
  std::vector<CheckReport> reports;
  for (const auto& name : selected) {
    if (name == kLangevin) {
      reports.push_back(langevin_gaussian_diagnostic({}).report);
    } else {
      reports.push_back(run_suite_check(name, options));
    }
  }
  const std::string json = report_json(reports);
  write_text(ws.dir / "report.json", json);
  std::cout << json;
  bool ok = true;
  for (const auto& r : reports) ok = ok && r.pass;
  return ok ? kExitOk : kExitFailure;
}

int cmd_eval(const RunConfig& c) {
  LoadedModel loaded = load_checkpoint(c);
  Dataset2D data = build_dataset(c);
  if (!data.labels) throw UsageError("dataset: eval needs a labeled dataset");
  const auto eps_list = c.get_doubles("eval.eps");
  if (eps_list.empty()) throw UsageError("eval.eps: at least one radius required");
  SamplerConfig base = attack_config(c, "eval_attack");
  const std::uint64_t seed = c.get_uint("run.seed");

  Workspace ws(c, "eval");
  std::ofstream out(ws.dir / "accuracy.csv", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write accuracy.csv");
  out << "eps,natural_acc,robust_acc\n";
  char buf[128];
  for (double eps : eps_list) {
    if (!(eps >= 0.0) || std::isinf(eps)) throw UsageError("eval.eps: radii must be finite and >= 0");
    SamplerConfig attack = base;
    attack.beta = eps;
    attack.alpha = eps / 4.0;
    if (eps == 0.0) attack.k_steps = 0;
    Accuracy acc = loaded.kind == ModelKind::kPCem
                       ? evaluate_accuracy(loaded.pcem, data, attack, seed)
                       : evaluate_accuracy(loaded.npcem, data, data, attack, seed);
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", eps, acc.natural, acc.robust);
    out << buf;
  }
  std::cout << "evaluated " << eps_list.size() << " radii; outputs in " << ws.dir.string()
            << "\n";
  return kExitOk;
}

}  // namespace cem::cli
