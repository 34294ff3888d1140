#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cbiv/errors.hpp"
#include "cbiv/harness.hpp"

using namespace cbiv;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMajorityFailed = 3;
constexpr int kExitIo = 4;

struct DataOptions {
  std::string dataset = "syn";
  std::string csv_path;
  int mz = 2, mx = 4, mu = 4;
  double gamma = 0.0, lambda = 1.0;
  long long n = 10000;
};

struct RunOptions {
  DataOptions data;
  std::string estimator = "cbiv";
  std::string scenario = "conventional";
  int reps = 10;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  int jobs = 1;
  std::optional<double> alpha, lr;
  std::optional<int> epochs, batch, t_epochs, l_epochs;
  std::vector<int> rep_hidden, head_hidden;
};

void add_data_options(CLI::App* cmd, DataOptions& d, bool allow_csv) {
  cmd->add_option("--dataset", d.dataset, allow_csv ? "syn | demand | csv" : "syn | demand")->capture_default_str();
  if (allow_csv) cmd->add_option("--csv", d.csv_path, "dataset file for --dataset csv");
  cmd->add_option("--mz", d.mz, "Syn: instrument dimensions")->capture_default_str();
  cmd->add_option("--mx", d.mx, "Syn: observed confounder dimensions")->capture_default_str();
  cmd->add_option("--mu", d.mu, "Syn: unobserved confounder dimensions")->capture_default_str();
  cmd->add_option("--gamma", d.gamma, "Demand: instrument strength shift")->capture_default_str();
  cmd->add_option("--lambda", d.lambda, "Demand: confounding strength")->capture_default_str();
  cmd->add_option("--n", d.n, "sample size")->capture_default_str();
}

void add_run_options(CLI::App* cmd, RunOptions& o) {
  add_data_options(cmd, o.data, true);
  cmd->add_option("--estimator", o.estimator, "cbiv | cbiv_l | no_balance | no_iv | plain")->capture_default_str();
  cmd->add_option("--scenario", o.scenario, "conventional | mixed | latent | no_iv_available")
      ->capture_default_str();
  cmd->add_option("--reps", o.reps, "replications")->capture_default_str();
  cmd->add_option("--seed", o.seed, "base seed; replication r uses seed + r")->capture_default_str();
  cmd->add_option("--out", o.out, "report path")->required();
  cmd->add_option("--jobs", o.jobs, "worker threads")->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "balancing weight");
  cmd->add_option("--epochs", o.epochs, "outcome-stage iterations");
  cmd->add_option("--batch", o.batch, "outcome-stage batch size");
  cmd->add_option("--lr", o.lr, "outcome-stage learning rate");
  cmd->add_option("--t-epochs", o.t_epochs, "treatment-stage epochs");
  cmd->add_option("--l-epochs", o.l_epochs, "latent-module epochs");
  cmd->add_option("--rep-hidden", o.rep_hidden, "representation widths, e.g. 64,64")->delimiter(',');
  cmd->add_option("--head-hidden", o.head_hidden, "outcome head widths")->delimiter(',');
}

ExperimentConfig to_config(const RunOptions& o) {
  ExperimentConfig c;
  c.dataset = parse_dataset(o.data.dataset);
  c.syn.m_z = o.data.mz;
  c.syn.m_x = o.data.mx;
  c.syn.m_u = o.data.mu;
  c.syn.n = o.data.n;
  c.demand.gamma = o.data.gamma;
  c.demand.lambda = o.data.lambda;
  c.demand.n = o.data.n;
  c.csv_path = o.data.csv_path;
  c.scenario = parse_scenario(o.scenario);
  c.estimator = parse_estimator(o.estimator);
  c.replications = o.reps;
  c.base_seed = o.seed;
  c.overrides.alpha = o.alpha;
  c.overrides.lr = o.lr;
  c.overrides.epochs = o.epochs;
  c.overrides.batch = o.batch;
  c.overrides.t_epochs = o.t_epochs;
  c.overrides.l_epochs = o.l_epochs;
  if (!o.rep_hidden.empty()) c.overrides.rep_hidden = o.rep_hidden;
  if (!o.head_hidden.empty()) c.overrides.head_hidden = o.head_hidden;
  return c;
}

void print_summary(const SummaryReport& rep) {
  for (const auto& [k, mean] : rep.metric_means) {
    std::printf("%-22s %.6g (%.6g)\n", k.c_str(), mean, rep.metric_stds.at(k));
  }
  std::printf("failed replications: %d of %zu\n", rep.n_failed, rep.replications.size());
  for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int cmd_gen(const DataOptions& d, std::uint64_t seed, const std::string& out) {
  const DatasetKind kind = parse_dataset(d.dataset);
  Dataset ds;
  if (kind == DatasetKind::Syn) {
    SynConfig c{d.mz, d.mx, d.mu, d.n, seed};
    ds = generate_syn(c);
  } else if (kind == DatasetKind::Demand) {
    DemandConfig c{d.gamma, d.lambda, d.n, seed};
    ds = generate_demand(c);
  } else {
    throw ConfigError("gen supports --dataset syn or demand");
  }
  write_csv(ds, out);
  std::printf("wrote %lld rows to %s\n", static_cast<long long>(ds.size()), out.c_str());
  return 0;
}

int cmd_run(const RunOptions& o) {
  const ExperimentConfig cfg = to_config(o);
  const ReportFormat fmt = parse_format(o.format);
  const SummaryReport rep = run_experiment(cfg, o.jobs);
  emit_report(rep, o.out, fmt);
  print_summary(rep);
  return rep.majority_failed() ? kExitMajorityFailed : 0;
}

int cmd_sweep(const RunOptions& o, const std::vector<long long>& sizes) {
  const ExperimentConfig cfg = to_config(o);
  std::vector<Eigen::Index> n(sizes.begin(), sizes.end());
  const auto rows = sample_size_sweep(cfg, n, o.jobs);
  emit_sweep(rows, o.out);
  bool majority_failed = false;
  std::printf("%8s %12s %12s %12s %s\n", "n", "mean_bias", "std_bias", "mean_|bias|", "failed");
  for (const auto& r : rows) {
    std::printf("%8lld %12.6g %12.6g %12.6g %d\n", static_cast<long long>(r.n), r.mean_bias, r.std_bias,
                r.mean_abs_bias, r.n_failed);
    majority_failed |= 2 * r.n_failed > cfg.replications;
  }
  return majority_failed ? kExitMajorityFailed : 0;
}

int cmd_verify(const std::string& fixture) {
  std::vector<ToyDGP> toys;
  if (fixture.empty()) {
    toys = {additive_toy(), multiplicative_toy()};
  } else {
    toys = {load_toy(fixture)};
  }
  bool ok = true;
  for (const auto& toy : toys) {
    const double v = verify_inverse_identity(toy);
    const bool pass = v <= 1e-12;
    ok &= pass;
    std::printf("%-16s max violation %.3e  %s\n", toy.name.c_str(), v, pass ? "ok" : "VIOLATED");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage instrumental-variable treatment-effect estimation with confounder balancing"};
  app.require_subcommand(1);

  DataOptions gen_data;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "generate a dataset (oracle columns included) as CSV");
  add_data_options(gen, gen_data, false);
  gen->add_option("--seed", gen_seed, "seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output CSV")->required();

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "train an estimator over replications and write a report");
  add_run_options(run, run_opts);
  run->add_option("--format", run_opts.format, "json | csv")->capture_default_str();

  RunOptions sweep_opts;
  std::vector<long long> sizes{500, 1000, 5000, 10000};
  auto* sweep = app.add_subcommand("sweep", "repeat an experiment over sample sizes (plot-ready CSV)");
  add_run_options(sweep, sweep_opts);
  sweep->add_option("--sizes", sizes, "ascending sample sizes")->delimiter(',')->capture_default_str();

  std::string fixture;
  auto* verify = app.add_subcommand("verify-theorem1", "check the inverse identity on an enumerable toy model");
  verify->add_option("--fixture", fixture, "toy JSON; defaults to the built-in additive and multiplicative toys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen(gen_data, gen_seed, gen_out);
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts, sizes);
    if (*verify) return cmd_verify(fixture);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitConfig;
  } catch (const PreconditionError& e) {
    std::fprintf(stderr, "precondition violated: %s\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
