#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#ifndef CEM_VERSION
#define CEM_VERSION "0.0.0"
#endif

namespace cem::cli {

namespace {

using T = ValueType;

const ConfigKey* find_key(const std::string& path) {
  const auto& schema = config_schema();
  auto it = std::find_if(schema.begin(), schema.end(),
                         [&](const ConfigKey& k) { return k.path == path; });
  return it == schema.end() ? nullptr : &*it;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_uint(const std::string& path, const std::string& text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw UsageError(path + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::string canonical_bool(const std::string& path, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return "true";
  if (text == "false" || text == "0" || text == "no" || text == "off") return "false";
  throw UsageError(path + ": expected true or false, got '" + text + "'");
}

void flatten(const YAML::Node& node, const std::string& prefix, RunConfig& config,
             const std::string& origin) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      if (prefix.empty() && key == "manifest") continue;
      flatten(kv.second, prefix.empty() ? key : prefix + "." + key, config, origin);
    }
    return;
  }
  if (prefix.empty()) throw UsageError(origin + ": top level must be a mapping");
  if (node.IsSequence()) {
    std::string joined;
    for (const auto& item : node) {
      if (!item.IsScalar()) throw UsageError(origin + ": " + prefix + ": nested lists");
      joined += (joined.empty() ? "" : ",") + item.as<std::string>();
    }
    config.set(prefix, joined);
    return;
  }
  config.set(prefix, node.IsNull() ? std::string() : node.as<std::string>());
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"run.seed", T::kUint, "0", "rng seed for training streams and chains"},
      {"run.output_dir", T::kString, "", "output directory (default $CEM_OUTPUT_ROOT/<command>)"},
      {"dataset.kind", T::kString, "moons", "moons | mixture | gaussians | csv"},
      {"dataset.path", T::kString, "", "CSV file for dataset.kind=csv"},
      {"dataset.size", T::kUint, "500", "points (moons), per mode (mixture) or per class"},
      {"dataset.noise", T::kDouble, "0.1", "two-moons jitter"},
      {"dataset.modes", T::kUint, "8", "mixture modes"},
      {"dataset.radius", T::kDouble, "2", "mixture ring radius"},
      {"dataset.sigma", T::kDouble, "0.25", "mixture mode standard deviation"},
      {"dataset.mean", T::kString, "1.1,0.15", "two-gaussians class mean (x1,x2)"},
      {"dataset.stddev", T::kString, "0.5,0.02", "two-gaussians per-axis stddev"},
      {"dataset.seed", T::kUint, "1", "dataset generator seed"},
      {"model.hidden", T::kString, "32,32", "hidden widths"},
      {"model.features", T::kUint, "16", "feature dimension"},
      {"model.activation", T::kString, "tanh", "tanh | relu"},
      {"model.seed", T::kUint, "2", "initialisation seed"},
      {"model.checkpoint", T::kString, "", "weights file for sample / eval"},
      {"objective.name", T::kString, "ce", "ce | at | at+trades | at+cr | infonce | uat | uat+ucr"},
      {"objective.reg_weight", T::kDouble, "1", "TRADES / CR / UCR weight"},
      {"optimizer.lr", T::kDouble, "0.05", "learning rate"},
      {"optimizer.momentum", T::kDouble, "0.9", "SGD momentum"},
      {"optimizer.weight_decay", T::kDouble, "0", "L2 weight decay"},
      {"optimizer.epochs", T::kUint, "50", "epochs"},
      {"optimizer.batch_size", T::kUint, "64", "mini-batch size"},
      {"attack.alpha", T::kDouble, "0.1125", "training attack step"},
      {"attack.beta", T::kDouble, "0.45", "training attack radius (inf allowed)"},
      {"attack.eta", T::kDouble, "0", "training attack noise"},
      {"attack.steps", T::kUint, "10", "training attack steps"},
      {"attack.normalize", T::kBool, "true", "normalise attack gradients per row"},
      {"eval_attack.alpha", T::kDouble, "0.1125", "evaluation attack step"},
      {"eval_attack.beta", T::kDouble, "0.45", "evaluation attack radius"},
      {"eval_attack.eta", T::kDouble, "0", "evaluation attack noise"},
      {"eval_attack.steps", T::kUint, "20", "evaluation attack steps (0 disables)"},
      {"eval_attack.normalize", T::kBool, "true", "normalise evaluation gradients"},
      {"eval.eps", T::kString, "0,0.1,0.2,0.3,0.45", "radius sweep for eval; step = eps/4"},
      {"sampler.rule", T::kString, "rcs",
       "pgd | langevin | ta | cs | rcs | unsup_langevin | unsup_pgd | maxent"},
      {"sampler.alpha", T::kDouble, "1", "step size"},
      {"sampler.beta", T::kDouble, "6", "projection radius (inf allowed)"},
      {"sampler.eta", T::kDouble, "0.01", "noise scale"},
      {"sampler.steps", T::kUint, "20", "chain length"},
      {"sampler.anneal", T::kDouble, "1", "noise decay per step"},
      {"sampler.normalize", T::kBool, "false", "normalise the drift per row"},
      {"sampler.trajectory_stride", T::kUint, "0", "trajectory snapshot spacing (0 = off)"},
      {"sampler.chains", T::kUint, "500", "number of chains"},
      {"seeds.mode", T::kString, "fitted_normal",
       "data_point | fitted_normal | classwise_normal | standard_normal"},
      {"verify.all", T::kBool, "false", "run every check"},
      {"verify.checks", T::kString, "", "comma-separated check names"},
      {"verify.trials", T::kUint, "20", "random fixtures per check"},
      {"verify.seed", T::kUint, "2024", "fixture seed"},
      {"verify.inject_fault", T::kDouble, "0", "test-only gradient perturbation"},
  };
  return schema;
}

double parse_double(const std::string& path, const std::string& text) {
  if (text == "inf" || text == "+inf" || text == "infinity") {
    return std::numeric_limits<double>::infinity();
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty() || std::isnan(v)) {
    throw UsageError(path + ": expected a number, got '" + text + "'");
  }
  return v;
}

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.path] = k.default_value;
}

bool RunConfig::has_key(const std::string& path) const { return find_key(path) != nullptr; }

void RunConfig::set(const std::string& path, const std::string& value) {
  const ConfigKey* key = find_key(path);
  if (key == nullptr) throw UsageError("unknown config key '" + path + "'");
  switch (key->type) {
    case T::kBool: values_[path] = canonical_bool(path, value); return;
    case T::kUint: parse_uint(path, value); break;
    case T::kDouble: parse_double(path, value); break;
    case T::kString: break;
  }
  values_[path] = value;
}

bool RunConfig::get_bool(const std::string& path) const { return values_.at(path) == "true"; }

std::uint64_t RunConfig::get_uint(const std::string& path) const {
  return parse_uint(path, values_.at(path));
}

double RunConfig::get_double(const std::string& path) const {
  return parse_double(path, values_.at(path));
}

const std::string& RunConfig::get_string(const std::string& path) const {
  return values_.at(path);
}

std::vector<double> RunConfig::get_doubles(const std::string& path) const {
  std::vector<double> out;
  for (const auto& item : split_commas(values_.at(path))) out.push_back(parse_double(path, item));
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& path) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_commas(values_.at(path))) out.push_back(parse_uint(path, item));
  return out;
}

void RunConfig::merge_yaml_text(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw UsageError(origin + ": " + e.what());
  }
  if (root.IsNull()) return;
  flatten(root, "", *this, origin);
}

void RunConfig::merge_yaml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  merge_yaml_text(ss.str(), path);
}

std::string manifest_yaml(const RunConfig& config, const std::string& command) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "manifest" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "command" << YAML::Value << command;
  out << YAML::Key << "version" << YAML::Value << version_string();
  out << YAML::Key << "seed" << YAML::Value << config.get_string("run.seed");
  out << YAML::EndMap;
  std::string section;
  for (const auto& key : config_schema()) {
    const auto dot = key.path.find('.');
    const std::string head = key.path.substr(0, dot);
    if (head != section) {
      if (!section.empty()) out << YAML::EndMap;
      section = head;
      out << YAML::Key << head << YAML::Value << YAML::BeginMap;
    }
    out << YAML::Key << key.path.substr(dot + 1) << YAML::Value << YAML::DoubleQuoted
        << config.get_string(key.path);
  }
  if (!section.empty()) out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string version_string() { return CEM_VERSION; }

}  // namespace cem::cli
