// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number of failures.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "cem/identity.hpp"
#include "cem/training.hpp"
#include "op_cases.hpp"

using namespace cem;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

// Shared 8-mode ring and its exact-likelihood P-CEM, trained once.
struct RingFixture {
  Dataset2D data;
  PCemModel model;
  Matrix centers = mixture_centers(8, 2.0);
  static constexpr double kSigma = 0.25;
};

RingFixture& ring() {
  static RingFixture* fixture = [] {
    Rng rng(1);
    Dataset2D data = make_gaussian_mixture(8, 2.0, RingFixture::kSigma, 100, rng);
    Rng init(2);
    auto model = PCemModel::random(Encoder::mlp(2, {32, 32}, 16, Activation::kTanh, init), 8, init);
    OptimizerSpec opt;
    opt.lr = 0.05;
    opt.momentum = 0.9;
    opt.epochs = 1000;
    train_exact_mle(model, data, GridDomain::default_2d(), opt);
    return new RingFixture{std::move(data), std::move(model)};
  }();
  return *fixture;
}

Outcome autodiff_soundness() {
  const auto start = std::chrono::steady_clock::now();
  std::size_t failures = 0, cases = 0;
  double worst = 0.0;
  std::string bad;
  for (const auto& c : oracle::op_cases()) {
    auto r = oracle::check_op(c, 100, 1000 + cases++);
    failures += r.failures;
    worst = std::max(worst, r.max_rel);
    if (r.failures) bad += " " + c.name;
  }
  const double t = seconds_since(start);
  return {failures == 0 && t < 30.0,
          fmt("%zu ops x 100 trials, max rel %.2e, %.1fs%s", cases, worst, t, bad.c_str())};
}

Outcome identity_suite() {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> required = {
      "ebm_gradient",       "st_equals_ce",          "at_equals_contrastive",
      "infonce_equivalence", "adv_infonce_equivalence", "sampler_decompositions"};
  SuiteOptions options;
  options.trials = 20;
  bool ok = true;
  std::string detail;
  for (const auto& report : run_suite(suite_check_names(), options)) {
    ok = ok && report.pass;
    if (!report.pass) detail += " FAILED:" + report.name;
  }
  for (const auto& name : required) {
    const auto names = suite_check_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      ok = false;
      detail += " MISSING:" + name;
    }
  }
  const double t = seconds_since(start);
  return {ok && t < 60.0,
          fmt("%zu checks x 20 fixtures, %.2fs%s", suite_check_names().size(), t, detail.c_str())};
}

Outcome langevin_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  LangevinDiagnostic d = langevin_gaussian_diagnostic(LangevinDiagnosticConfig{});
  const double t = seconds_since(start);
  return {d.mean_error <= 0.05 && d.cov_error <= 0.1 && t < 60.0,
          fmt("mean err %.4f (<=0.05), cov err %.4f (<=0.1), %.1fs", d.mean_error, d.cov_error, t)};
}

Outcome grid_sampling_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  RingFixture& r = ring();
  SamplerConfig config;
  config.rule = Rule::kLangevin;
  config.alpha = 0.005;
  config.eta = std::sqrt(2 * config.alpha);
  config.anneal = 0.9999;
  config.k_steps = 1000;
  config.trajectory_stride = 10;
  SeedSpec seeds;
  seeds.mode = SeedMode::kDataPoint;
  seeds.reference = r.data.points;
  Rng rng(3);
  auto result = run_chain(r.model, config, init_seeds(seeds, 2000, rng).points, {}, 4);
  std::vector<double> pooled;
  for (const auto& frame : result.trajectory) {
    if (frame.step <= 500) continue;
    pooled.insert(pooled.end(), frame.state.data.begin(), frame.state.data.end());
  }
  const std::size_t rows = pooled.size() / 2;
  Matrix samples(rows, 2, std::move(pooled));
  const double kl = grid_kl(samples, r.model, GridDomain::default_2d());
  return {kl <= 0.15 && samples.rows >= 100000,
          fmt("grid KL %.4f (<=0.15) at %zu samples, %.1fs incl. training", kl, samples.rows,
              seconds_since(start))};
}

Outcome supervised_ordering() {
  RingFixture& r = ring();
  SeedSpec spec;
  spec.mode = SeedMode::kFittedNormal;
  spec.reference = r.data.points;
  Rng rng(5);
  const Matrix seeds = init_seeds(spec, 1000, rng).points;
  ChainAux aux;
  for (std::size_t i = 0; i < seeds.rows; ++i) aux.labels.push_back(i % 8);
  double hq[3];
  bool covered = true;
  std::string detail;
  const Rule rules[3] = {Rule::kTa, Rule::kCs, Rule::kRcs};
  for (int i = 0; i < 3; ++i) {
    SamplerConfig c;
    c.rule = rules[i];
    c.alpha = 0.05;
    c.beta = 6.0;
    c.eta = 0.01;
    c.k_steps = 20;
    auto out = run_chain(r.model, c, seeds, aux, 6);
    auto cov = mode_coverage(out.final_state, r.centers, RingFixture::kSigma);
    hq[i] = cov.high_quality;
    covered = covered && cov.covered == 8;
    detail += fmt("%s hq %.3f cov %zu/8; ", to_string(rules[i]).c_str(), hq[i], cov.covered);
  }
  const bool ordered = hq[2] >= hq[1] - 0.02 && hq[1] >= hq[0] - 0.02;
  return {ordered && covered, detail};
}

Outcome unsupervised_maxent() {
  Rng rng(1);
  const Dataset2D data = make_gaussian_mixture(8, 2.0, 0.25, 100, rng);
  Rng init(2);
  NPCemModel model(Encoder::mlp(2, {32, 32}, 16, Activation::kTanh, init));
  TrainSpec spec;
  spec.objective = Objective::kUat;
  spec.attack.rule = Rule::kUnsupPgd;
  spec.attack.alpha = 0.05;
  spec.attack.beta = 0.25;
  spec.attack.k_steps = 3;
  spec.optimizer.lr = 0.02;
  spec.optimizer.epochs = 30;
  spec.optimizer.batch_size = 64;
  spec.seed = 3;
  train(model, data, spec);

  SeedSpec seed_spec;
  seed_spec.mode = SeedMode::kFittedNormal;
  seed_spec.reference = data.points;
  Rng seed_rng(4);
  const Matrix seeds = init_seeds(seed_spec, 400, seed_rng).points;

  SamplerConfig maxent;
  maxent.rule = Rule::kMaxEnt;
  maxent.alpha = 0.05;
  maxent.k_steps = 50;
  SamplerConfig pgd = maxent;
  pgd.rule = Rule::kUnsupPgd;
  ChainAux aux;
  aux.positives = seeds;
  aux.negatives = data.points;

  const Matrix me = run_chain(model, maxent, seeds, {}, 5).final_state;
  const Matrix pg = run_chain(model, pgd, seeds, aux, 5).final_state;
  const double h_me = entropy_estimate(model, me), h_pg = entropy_estimate(model, pg);
  auto cov = mode_coverage(me, mixture_centers(8, 2.0), 0.25, 0.01);
  const double min_frac = *std::min_element(cov.fractions.begin(), cov.fractions.end());
  return {cov.covered == 8 && min_frac >= 0.01 && h_me > h_pg,
          fmt("MaxEnt H %.3f > PGD H %.3f; coverage %zu/8, min mode share %.3f", h_me, h_pg,
              cov.covered, min_frac)};
}

Outcome robustness_ordering() {
  const auto start = std::chrono::steady_clock::now();
  Rng train_rng(1), test_rng(9);
  const Dataset2D train_data = make_two_gaussians({1.1, 0.15}, {0.5, 0.02}, 500, train_rng);
  const Dataset2D test_data = make_two_gaussians({1.1, 0.15}, {0.5, 0.02}, 500, test_rng);
  const double eps = 0.45;
  SamplerConfig attack;
  attack.rule = Rule::kPgd;
  attack.alpha = eps / 4;
  attack.beta = eps;
  attack.k_steps = 10;
  attack.normalize_gradient = true;
  SamplerConfig eval_attack = attack;
  eval_attack.k_steps = 20;

  Accuracy acc[3];
  const Objective objectives[3] = {Objective::kCe, Objective::kAt, Objective::kAtCr};
  std::string detail;
  for (int i = 0; i < 3; ++i) {
    Rng init(2);
    auto model = PCemModel::random(Encoder::mlp(2, {32, 32}, 16, Activation::kTanh, init), 2, init);
    TrainSpec spec;
    spec.objective = objectives[i];
    spec.attack = attack;
    spec.optimizer.lr = 0.05;
    spec.optimizer.epochs = 100;
    spec.optimizer.batch_size = 64;
    spec.seed = 3;
    train(model, train_data, spec);
    acc[i] = evaluate_accuracy(model, test_data, eval_attack, 11);
    detail += fmt("%s nat %.3f rob %.3f; ", to_string(objectives[i]).c_str(), acc[i].natural,
                  acc[i].robust);
  }
  const double t = seconds_since(start);
  bool ok = acc[0].robust < 0.30 && acc[1].robust >= 0.80 && acc[2].robust >= 0.80 && t < 300.0;
  for (const auto& a : acc) ok = ok && a.natural >= 0.95;
  return {ok, detail + fmt("%.1fs", t)};
}

bool same_log(const TrainResult& a, const TrainResult& b) {
  if (a.log.size() != b.log.size()) return false;
  for (std::size_t i = 0; i < a.log.size(); ++i)
    if (a.log[i].loss != b.log[i].loss || a.log[i].main_loss != b.log[i].main_loss) return false;
  return true;
}

bool same_params(const auto& a, const auto& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!std::ranges::equal(pa[i].second.values(), pb[i].second.values())) return false;
  return true;
}

Outcome null_equivalences() {
  Rng data_rng(1);
  const Dataset2D pairs = make_two_gaussians({1.1, 0.15}, {0.5, 0.02}, 100, data_rng);
  auto pcem = [] {
    Rng init(2);
    return PCemModel::random(Encoder::mlp(2, {16}, 8, Activation::kTanh, init), 2, init);
  };
  TrainSpec spec;
  spec.optimizer.epochs = 5;
  spec.seed = 3;
  spec.attack.rule = Rule::kPgd;
  spec.attack.k_steps = 5;
  spec.attack.beta = 0.45;

  auto ce_model = pcem(), at0_model = pcem();
  auto ce = train(ce_model, pairs, spec);
  spec.objective = Objective::kAt;
  spec.attack.alpha = 0.0;
  auto at0 = train(at0_model, pairs, spec);
  const bool at_ce = same_log(ce, at0) && same_params(ce_model, at0_model);

  spec.attack.alpha = 0.1125;
  auto at_model = pcem(), cr_model = pcem();
  auto at = train(at_model, pairs, spec);
  spec.objective = Objective::kAtCr;
  spec.reg_weight = 0.0;
  auto cr = train(cr_model, pairs, spec);
  const bool cr_at = same_log(at, cr) && same_params(at_model, cr_model);

  Rng ring_rng(4);
  const Dataset2D ring_data = make_gaussian_mixture(4, 2.0, 0.2, 30, ring_rng);
  auto npcem = [] {
    Rng init(5);
    return NPCemModel(Encoder::mlp(2, {16}, 8, Activation::kTanh, init));
  };
  TrainSpec uspec;
  uspec.objective = Objective::kUat;
  uspec.attack.rule = Rule::kUnsupPgd;
  uspec.attack.alpha = 0.05;
  uspec.attack.beta = 0.25;
  uspec.attack.k_steps = 2;
  uspec.optimizer.lr = 0.02;
  uspec.optimizer.epochs = 3;
  uspec.seed = 6;
  auto uat_model = npcem(), ucr_model = npcem();
  auto uat = train(uat_model, ring_data, uspec);
  uspec.objective = Objective::kUatUcr;
  uspec.reg_weight = 0.0;
  auto ucr = train(ucr_model, ring_data, uspec);
  const bool ucr_uat = same_log(uat, ucr) && same_params(uat_model, ucr_model);

  bool zero_steps = true;
  const Matrix seeds = pairs.points;
  ChainAux aux;
  aux.labels = *pairs.labels;
  for (Rule rule : {Rule::kPgd, Rule::kLangevin, Rule::kTa, Rule::kCs, Rule::kRcs}) {
    SamplerConfig c;
    c.rule = rule;
    c.eta = 0.5;
    zero_steps = zero_steps && run_chain(ce_model, c, seeds, aux, 7).final_state == seeds;
  }
  SamplerConfig me;
  me.rule = Rule::kMaxEnt;
  me.eta = 0.5;
  zero_steps = zero_steps && run_chain(uat_model, me, seeds, {}, 7).final_state == seeds;

  return {at_ce && cr_at && ucr_uat && zero_steps,
          fmt("AT(alpha=0)==CE %s, AT+CR(w=0)==AT %s, UAT+UCR(w=0)==UAT %s, K=0 returns seeds %s",
              at_ce ? "yes" : "no", cr_at ? "yes" : "no", ucr_uat ? "yes" : "no",
              zero_steps ? "yes" : "no")};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(CEM_BINARY) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome manifest_replay() {
  const fs::path root = fs::temp_directory_path() / "cem_acceptance_replay";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path log = root / "log.txt";
  const std::string ckpt = (root / "train" / "model.cemw").string();
  struct Run {
    std::string command, args;
    std::vector<std::string> outputs;
  };
  const std::vector<Run> runs = {
      {"train",
       "--objective at+cr --dataset gaussians --dataset.size 100 --seed 7 --optimizer.epochs 3 "
       "--attack.steps 3",
       {"metrics.csv", "model.cemw"}},
      {"sample",
       "--checkpoint " + ckpt + " --rule rcs --sampler.chains 50 --sampler.trajectory_stride 5 --seed 8",
       {"samples.csv", "trajectory.csv"}},
      {"eval", "--checkpoint " + ckpt + " --dataset gaussians --dataset.size 100", {"accuracy.csv"}},
      {"verify", "--check st_equals_ce,sampler_decompositions", {"report.json"}},
  };
  bool ok = true;
  std::string detail;
  for (const auto& run : runs) {
    const fs::path first = root / run.command, again = root / (run.command + "_replay");
    const int rc1 = run_cli(run.command + " " + run.args + " --out " + first.string(), log);
    const int rc2 = run_cli(run.command + " --config " + (first / "manifest.yaml").string() +
                                " --out " + again.string(),
                            log);
    bool same = rc1 == 0 && rc2 == 0;
    for (const auto& file : run.outputs) {
      const std::string a = slurp(first / file);
      same = same && !a.empty() && a == slurp(again / file);
    }
    ok = ok && same;
    detail += run.command + (same ? " identical; " : " DIFFERS; ");
  }
  fs::remove_all(root);
  return {ok, detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"autodiff soundness", autodiff_soundness},
      {"identity suite", identity_suite},
      {"Langevin fidelity", langevin_fidelity},
      {"exact-grid sampling fidelity", grid_sampling_fidelity},
      {"supervised sampler ordering", supervised_ordering},
      {"unsupervised MaxEnt", unsupervised_maxent},
      {"robustness ordering", robustness_ordering},
      {"null-configuration equivalences", null_equivalences},
      {"manifest reproducibility", manifest_replay},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
