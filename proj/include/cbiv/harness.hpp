#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbiv/dataset.hpp"
#include "cbiv/outcome.hpp"
#include "cbiv/treatreg.hpp"

namespace cbiv {

enum class DatasetKind { Syn, Demand, Csv };
enum class Scenario { Conventional, Mixed, Latent, NoIvAvailable };
enum class Estimator { Cbiv, CbivL, NoBalance, NoIv, Plain };
enum class ReportFormat { Json, Csv };

std::string to_string(DatasetKind v);
std::string to_string(Scenario v);
std::string to_string(Estimator v);
// Throw ConfigError on unknown names.
DatasetKind parse_dataset(const std::string& s);
Scenario parse_scenario(const std::string& s);
Estimator parse_estimator(const std::string& s);
ReportFormat parse_format(const std::string& s);

struct Hyperparameters {
  // Treatment regression (epochs are full passes).
  int t_epochs = 3;
  int t_batch = 500;
  double t_lr = 0.05;
  std::vector<int> t_hidden = {128, 64};
  // Outcome regression (epochs are minibatch iterations).
  int y_epochs = 3000;
  int y_batch = 256;
  double y_lr = 5e-4;
  std::vector<int> rep_hidden = {256, 256, 256};
  std::vector<int> head_hidden = {256, 256, 256, 256, 256};
  double alpha = 0.01;
  // Latent-variable module (epochs are full passes).
  int l_dim = 5;
  int l_epochs = 10;
  int l_batch = 200;
  double l_lr = 1e-4;
  std::vector<int> l_hidden = {64, 64, 64};

  void validate() const;
};

// Published settings: binary treatment uses the Syn column, continuous the
// Demand column.
Hyperparameters published_hyperparameters(TreatmentKind kind);

// Command-line style overrides applied on top of the published settings.
struct Overrides {
  std::optional<int> epochs;  // outcome iterations
  std::optional<int> batch;   // outcome batch
  std::optional<double> lr;   // outcome learning rate
  std::optional<double> alpha;
  std::optional<int> t_epochs;
  std::optional<int> l_epochs;
  std::optional<std::vector<int>> rep_hidden;
  std::optional<std::vector<int>> head_hidden;
};

Hyperparameters resolve_hyperparameters(TreatmentKind kind, const Overrides& o);

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Syn;
  SynConfig syn;
  DemandConfig demand;
  std::string csv_path;
  Scenario scenario = Scenario::Conventional;
  Estimator estimator = Estimator::Cbiv;
  int replications = 10;
  std::uint64_t base_seed = 0;
  Overrides overrides;

  // Throws ConfigError.
  void validate() const;
};

struct ReplicationResult {
  int index = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::map<std::string, double> metrics;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;  // not written to reports
};

struct SummaryReport {
  ExperimentConfig config;
  TreatmentKind kind = TreatmentKind::Binary;
  Hyperparameters hyper;
  std::vector<ReplicationResult> replications;  // sorted by index
  std::map<std::string, double> metric_means;
  std::map<std::string, double> metric_stds;  // population std over successes
  int n_failed = 0;
  std::vector<std::string> warnings;

  bool majority_failed() const { return 2 * n_failed > static_cast<int>(replications.size()); }
};

// Stage-1 and stage-2 inputs for an estimator under a scenario.
InputMode input_mode(Scenario s, Estimator e);
EstimatorFlags estimator_flags(Estimator e);
// Whether Z columns are visible to estimators.
bool instruments_visible(Scenario s);

// One end-to-end replication on a full (oracle-carrying) dataset: split,
// strip oracle columns, train, score. Numerical failures are caught and
// recorded in the result.
ReplicationResult run_replication(const Dataset& full, Scenario scenario, Estimator estimator,
                                  const Hyperparameters& hp, std::uint64_t seed);

// Replication r uses seed base_seed + r; `jobs` worker threads share the
// replications, results are ordered by index.
SummaryReport run_experiment(const ExperimentConfig& cfg, int jobs = 1);

struct SweepRow {
  Eigen::Index n = 0;
  double mean_bias = 0.0;
  double std_bias = 0.0;
  double mean_abs_bias = 0.0;
  int n_failed = 0;
};

// run_experiment per sample size on a generated binary dataset.
std::vector<SweepRow> sample_size_sweep(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& sizes,
                                        int jobs = 1);

// Pretty-printed JSON with sorted keys.
std::string report_to_json(const SummaryReport& report);
std::string report_to_csv(const SummaryReport& report);
// Throws IoError when the file cannot be written.
void emit_report(const SummaryReport& report, const std::string& path, ReportFormat format);
void emit_sweep(const std::vector<SweepRow>& rows, const std::string& path);

// Enumerable binary-treatment DGP:
//   P(T = 1 | z, x, u) = f1(z, x) + f2(x, u)
//   Y = g1(T, X) + g2(T) g3(U) + g4(X, U),  Z independent of (X, U)
// and a representation C = c_of_x(X).
struct ToyDGP {
  std::string name;
  std::vector<double> p_z;
  std::vector<double> p_x;
  std::vector<std::vector<double>> p_u_given_x;  // [x][u]
  std::vector<int> c_of_x;
  std::vector<std::vector<double>> f1;  // [z][x]
  std::vector<std::vector<double>> f2;  // [x][u]
  std::vector<std::vector<double>> g1;  // [t][x]
  std::vector<double> g2;               // [t]
  std::vector<double> g3;               // [u]
  std::vector<std::vector<double>> g4;  // [x][u]

  // Throws ConfigError on bad shapes, probabilities or > 4 states.
  void validate() const;
};

ToyDGP additive_toy();
ToyDGP multiplicative_toy();
ToyDGP broken_toy();  // C carries information about the estimated treatment

ToyDGP load_toy(const std::string& path);  // IoError / ParseError / ConfigError
void save_toy(const ToyDGP& toy, const std::string& path);

// Max over (z, x) of |E[Y | z, c(x), x] - sum_t h(t, c) P(t | z, x)| with
// h(t, c) = g1^C(t, c) + g2(t) E[g3(U) | c] + E[g4(X, U) | c]. Throws
// PreconditionError unless C is independent of the estimated treatment.
double verify_inverse_identity(const ToyDGP& toy);

}  // namespace cbiv
