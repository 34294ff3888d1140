#include "cbiv/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cbiv/errors.hpp"
#include "cbiv/latent.hpp"
#include "json.hpp"

namespace cbiv {

using nlohmann::json;

namespace {

template <class E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<const char*, E> (&names)[N], const char* what) {
  for (const auto& [name, value] : names)
    if (s == name) return value;
  std::string valid;
  for (const auto& [name, value] : names) valid += (valid.empty() ? "" : "|") + std::string(name);
  throw ConfigError(std::string("unknown ") + what + " \"" + s + "\" (expected " + valid + ")");
}

template <class E, std::size_t N>
std::string enum_name(E v, const std::pair<const char*, E> (&names)[N]) {
  for (const auto& [name, value] : names)
    if (v == value) return name;
  return "?";
}

constexpr std::pair<const char*, DatasetKind> kDatasets[] = {
    {"syn", DatasetKind::Syn}, {"demand", DatasetKind::Demand}, {"csv", DatasetKind::Csv}};
constexpr std::pair<const char*, Scenario> kScenarios[] = {{"conventional", Scenario::Conventional},
                                                           {"mixed", Scenario::Mixed},
                                                           {"latent", Scenario::Latent},
                                                           {"no_iv_available", Scenario::NoIvAvailable}};
constexpr std::pair<const char*, Estimator> kEstimators[] = {{"cbiv", Estimator::Cbiv},
                                                             {"cbiv_l", Estimator::CbivL},
                                                             {"no_balance", Estimator::NoBalance},
                                                             {"no_iv", Estimator::NoIv},
                                                             {"plain", Estimator::Plain}};
constexpr std::pair<const char*, ReportFormat> kFormats[] = {{"json", ReportFormat::Json},
                                                             {"csv", ReportFormat::Csv}};

}  // namespace

std::string to_string(DatasetKind v) { return enum_name(v, kDatasets); }
std::string to_string(Scenario v) { return enum_name(v, kScenarios); }
std::string to_string(Estimator v) { return enum_name(v, kEstimators); }
DatasetKind parse_dataset(const std::string& s) { return parse_enum(s, kDatasets, "dataset"); }
Scenario parse_scenario(const std::string& s) { return parse_enum(s, kScenarios, "scenario"); }
Estimator parse_estimator(const std::string& s) { return parse_enum(s, kEstimators, "estimator"); }
ReportFormat parse_format(const std::string& s) { return parse_enum(s, kFormats, "format"); }

void Hyperparameters::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(t_epochs, "treatment epochs");
  positive(t_batch, "treatment batch size");
  positive(t_lr, "treatment learning rate");
  positive(y_epochs, "outcome epochs");
  if (y_batch < 2) throw ConfigError("outcome batch size must be >= 2");
  positive(y_lr, "outcome learning rate");
  positive(l_dim, "latent width");
  positive(l_epochs, "latent epochs");
  positive(l_batch, "latent batch size");
  positive(l_lr, "latent learning rate");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (rep_hidden.empty()) throw ConfigError("representation needs at least one layer");
  for (const auto* v : {&t_hidden, &rep_hidden, &head_hidden, &l_hidden})
    for (int w : *v)
      if (w < 1) throw ConfigError("layer widths must be >= 1");
}

Hyperparameters published_hyperparameters(TreatmentKind kind) {
  Hyperparameters h;
  if (kind == TreatmentKind::Continuous) {
    h.t_epochs = 20;
    h.t_lr = 0.005;
    h.y_epochs = 6000;
    h.y_batch = 200;
    h.y_lr = 0.005;
    h.alpha = 0.1;
    h.l_epochs = 300;
  }
  return h;
}

Hyperparameters resolve_hyperparameters(TreatmentKind kind, const Overrides& o) {
  Hyperparameters h = published_hyperparameters(kind);
  if (o.epochs) h.y_epochs = *o.epochs;
  if (o.batch) h.y_batch = *o.batch;
  if (o.lr) h.y_lr = *o.lr;
  if (o.alpha) h.alpha = *o.alpha;
  if (o.t_epochs) h.t_epochs = *o.t_epochs;
  if (o.l_epochs) h.l_epochs = *o.l_epochs;
  if (o.rep_hidden) h.rep_hidden = *o.rep_hidden;
  if (o.head_hidden) h.head_hidden = *o.head_hidden;
  h.validate();
  return h;
}

void ExperimentConfig::validate() const {
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (estimator == Estimator::CbivL && scenario != Scenario::Latent && scenario != Scenario::NoIvAvailable) {
    throw ConfigError("cbiv_l needs scenario latent or no_iv_available");
  }
  switch (dataset) {
    case DatasetKind::Syn: syn.validate(); break;
    case DatasetKind::Demand: demand.validate(); break;
    case DatasetKind::Csv:
      if (csv_path.empty()) throw ConfigError("csv dataset needs a path");
      break;
  }
}

bool instruments_visible(Scenario s) { return s == Scenario::Conventional || s == Scenario::Mixed; }

InputMode input_mode(Scenario s, Estimator e) {
  if (e == Estimator::CbivL || s == Scenario::Latent) return {ColumnSet::Latent, ColumnSet::Latent};
  switch (s) {
    case Scenario::Conventional: return {ColumnSet::ZAndX, ColumnSet::XOnly};
    case Scenario::Mixed: return {ColumnSet::ZAndX, ColumnSet::ZAndX};
    default: return {ColumnSet::XOnly, ColumnSet::XOnly};
  }
}

EstimatorFlags estimator_flags(Estimator e) {
  switch (e) {
    case Estimator::Cbiv:
    case Estimator::CbivL: return {true, true};
    case Estimator::NoBalance: return {true, false};
    case Estimator::NoIv: return {false, true};
    case Estimator::Plain: return {false, false};
  }
  return {};
}

namespace {

// splitmix64 finalizer; decorrelates sub-streams derived from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Dataset visible(const Dataset& ds, Scenario s) {
  Dataset v = ds.without_oracle();
  if (!instruments_visible(s)) v.z.resize(v.size(), 0);
  return v;
}

double tail_mean(const std::vector<OutcomeStep>& trace, double OutcomeStep::*field) {
  const std::size_t k = std::min<std::size_t>(100, trace.size());
  double s = 0.0;
  for (std::size_t i = trace.size() - k; i < trace.size(); ++i) s += trace[i].*field;
  return k ? s / static_cast<double>(k) : 0.0;
}

}  // namespace

ReplicationResult run_replication(const Dataset& full, Scenario scenario, Estimator estimator,
                                  const Hyperparameters& hp, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  ReplicationResult res;
  res.seed = seed;
  const InputMode mode = input_mode(scenario, estimator);
  const EstimatorFlags flags = estimator_flags(estimator);
  const TreatmentKind kind = full.kind;

  try {
    const Split sp = split(full, {0.63, 0.27, 0.10}, mix_seed(seed, 1));
    const Dataset within_full = concat(sp.train, sp.valid);
    const Dataset train = visible(sp.train, scenario);
    const Dataset within = visible(within_full, scenario);
    const Dataset test = visible(sp.test, scenario);
    Rng rng(mix_seed(seed, 2));

    std::shared_ptr<const LatentModel> latent;
    if (mode.stage1 == ColumnSet::Latent || mode.stage2 == ColumnSet::Latent) {
      LatentConfig lc;
      lc.m_l = hp.l_dim;
      lc.hidden = hp.l_hidden;
      lc.epochs = hp.l_epochs;
      lc.batch_size = hp.l_batch;
      lc.learning_rate = hp.l_lr;
      auto lm = std::make_shared<LatentModel>(lc, static_cast<int>(train.x.cols()), kind, rng);
      const LatentTrainResult lr = train_latent(train, *lm, rng);
      if (lr.small_sample_warning) {
        res.warnings.push_back("latent module trained on " + std::to_string(train.size()) +
                               " rows; at least " + std::to_string(kLatentRecommendedN) + " are recommended");
      }
      res.metrics["final_elbo"] = lr.elbo_trace.back();
      latent = std::move(lm);
    }

    std::optional<TreatmentModel> tm;
    if (flags.use_iv) {
      TreatmentConfig tc;
      tc.hidden = hp.t_hidden;
      FeatureSource src{mode.stage1, latent};
      tm.emplace(kind == TreatmentKind::Binary ? TreatmentModelKind::BinaryLogistic
                                               : TreatmentModelKind::ContinuousMean,
                 tc, src, src.width(train), rng);
      OptimState opt({OptimKind::SGD, hp.t_lr});
      train_treatment(train, *tm, hp.t_epochs, hp.t_batch, opt, rng);
      res.metrics["final_l_t"] = treatment_loss(*tm, train);
    }

    OutcomeConfig oc;
    oc.rep_hidden = hp.rep_hidden;
    oc.head_hidden = hp.head_hidden;
    oc.alpha = hp.alpha;
    oc.balance.metric = kind == TreatmentKind::Binary ? BalanceMetric::Wasserstein : BalanceMetric::ClubMi;
    oc.balance.club_lr = hp.y_lr;
    FeatureSource src2{mode.stage2, latent};
    OutcomeModel om(kind, oc, src2, src2.width(train), rng);
    const OutcomeTrainResult otr = train_outcome(train, tm ? &*tm : nullptr, om, flags, hp.y_epochs, hp.y_batch,
                                                 {OptimKind::Adam, hp.y_lr}, rng);
    if (otr.skipped_balance > 0) {
      res.warnings.push_back(std::to_string(otr.skipped_balance) +
                             " minibatches had an empty treatment arm and were fitted without balancing");
    }
    res.metrics["final_l_y"] = tail_mean(otr.trace, &OutcomeStep::l_y);
    if (flags.use_balance) res.metrics["final_l_c"] = tail_mean(otr.trace, &OutcomeStep::l_c);

    if (kind == TreatmentKind::Binary) {
      const double ate_in = estimate_ate(om, within);
      const double ate_out = estimate_ate(om, test);
      const double truth_in = true_ate(within_full);
      const double truth_out = true_ate(sp.test);
      res.metrics["ate_within"] = ate_in;
      res.metrics["ate_out"] = ate_out;
      res.metrics["ate_bias_within"] = ate_in - truth_in;
      res.metrics["ate_bias_out"] = ate_out - truth_out;
      res.metrics["abs_ate_bias_within"] = std::abs(ate_in - truth_in);
      res.metrics["abs_ate_bias_out"] = std::abs(ate_out - truth_out);
    } else {
      const Vector grid = treatment_grid(train.t);
      auto mse = [&](const Dataset& vis, const Dataset& oracle) {
        const Matrix truth = structural_truth(oracle, grid);
        double sse = 0.0;
        for (Eigen::Index g = 0; g < grid.size(); ++g) {
          sse += (predict_counterfactual(om, vis, grid(g)) - truth.col(g)).squaredNorm();
        }
        return sse / static_cast<double>(truth.size());
      };
      res.metrics["mse_within"] = mse(within, within_full);
      res.metrics["mse_out"] = mse(test, sp.test);
    }
  } catch (const NumericalError& e) {
    res.failed = true;
    res.metrics.clear();
    res.warnings.push_back(std::string("numerical failure: ") + e.what());
  } catch (const DegenerateArmError& e) {
    res.failed = true;
    res.metrics.clear();
    res.warnings.push_back(std::string("degenerate treatment arm: ") + e.what());
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

namespace {

Dataset make_dataset(const ExperimentConfig& cfg, const Dataset* csv, std::uint64_t seed) {
  switch (cfg.dataset) {
    case DatasetKind::Syn: {
      SynConfig c = cfg.syn;
      c.seed = seed;
      return generate_syn(c);
    }
    case DatasetKind::Demand: {
      DemandConfig c = cfg.demand;
      c.seed = seed;
      return generate_demand(c);
    }
    case DatasetKind::Csv: return *csv;
  }
  return {};
}

void summarize(SummaryReport& rep) {
  std::map<std::string, std::vector<double>> values;
  rep.n_failed = 0;
  for (const auto& r : rep.replications) {
    if (r.failed) {
      ++rep.n_failed;
      continue;
    }
    for (const auto& [k, v] : r.metrics) values[k].push_back(v);
  }
  for (const auto& [k, vs] : values) {
    double mean = 0.0;
    for (double v : vs) mean += v;
    mean /= static_cast<double>(vs.size());
    double var = 0.0;
    for (double v : vs) var += (v - mean) * (v - mean);
    rep.metric_means[k] = mean;
    rep.metric_stds[k] = std::sqrt(var / static_cast<double>(vs.size()));
  }
  if (rep.replications.size() == 1) rep.warnings.push_back("single replication: standard deviations are 0");
  if (rep.n_failed > 0) {
    rep.warnings.push_back(std::to_string(rep.n_failed) + " of " + std::to_string(rep.replications.size()) +
                           " replications failed; summary covers the successes");
  }
}

}  // namespace

SummaryReport run_experiment(const ExperimentConfig& cfg, int jobs) {
  cfg.validate();
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  std::optional<Dataset> csv;
  if (cfg.dataset == DatasetKind::Csv) csv = read_csv(cfg.csv_path);

  SummaryReport rep;
  rep.config = cfg;
  rep.kind = cfg.dataset == DatasetKind::Syn      ? TreatmentKind::Binary
             : cfg.dataset == DatasetKind::Demand ? TreatmentKind::Continuous
                                                  : csv->kind;
  if (cfg.dataset == DatasetKind::Csv && !csv->has_oracle()) {
    throw ConfigError("csv dataset carries no oracle columns; metrics cannot be computed");
  }
  rep.hyper = resolve_hyperparameters(rep.kind, cfg.overrides);
  rep.replications.resize(cfg.replications);

  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (int r = next++; r < cfg.replications; r = next++) {
      try {
        const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(r);
        const Dataset full = make_dataset(cfg, csv ? &*csv : nullptr, seed);
        ReplicationResult res = run_replication(full, cfg.scenario, cfg.estimator, rep.hyper, seed);
        res.index = r;
        rep.replications[r] = std::move(res);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        next = cfg.replications;
      }
    }
  };
  const int n_threads = std::min(jobs, cfg.replications);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  summarize(rep);
  return rep;
}

std::vector<SweepRow> sample_size_sweep(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& sizes,
                                        int jobs) {
  if (sizes.empty()) throw ConfigError("sweep needs at least one sample size");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw ConfigError("sweep sizes must be strictly ascending");
  }
  if (cfg.dataset != DatasetKind::Syn) throw ConfigError("sweep needs a generated binary dataset (syn)");
  std::vector<SweepRow> rows;
  for (Eigen::Index n : sizes) {
    ExperimentConfig c = cfg;
    c.syn.n = n;
    const SummaryReport rep = run_experiment(c, jobs);
    SweepRow row;
    row.n = n;
    row.n_failed = rep.n_failed;
    if (rep.metric_means.count("ate_bias_out")) {
      row.mean_bias = rep.metric_means.at("ate_bias_out");
      row.std_bias = rep.metric_stds.at("ate_bias_out");
      row.mean_abs_bias = rep.metric_means.at("abs_ate_bias_out");
    } else {
      row.mean_bias = row.std_bias = row.mean_abs_bias = std::nan("");
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

json config_json(const SummaryReport& rep) {
  const ExperimentConfig& c = rep.config;
  const Hyperparameters& h = rep.hyper;
  json j;
  j["dataset"] = to_string(c.dataset);
  if (c.dataset == DatasetKind::Syn) j["syn"] = {{"m_z", c.syn.m_z}, {"m_x", c.syn.m_x}, {"m_u", c.syn.m_u}, {"n", c.syn.n}};
  if (c.dataset == DatasetKind::Demand) {
    j["demand"] = {{"gamma", c.demand.gamma}, {"lambda", c.demand.lambda}, {"n", c.demand.n}};
  }
  if (c.dataset == DatasetKind::Csv) j["csv_path"] = c.csv_path;
  j["treatment"] = rep.kind == TreatmentKind::Binary ? "binary" : "continuous";
  j["scenario"] = to_string(c.scenario);
  j["estimator"] = to_string(c.estimator);
  const InputMode m = input_mode(c.scenario, c.estimator);
  j["stage1_inputs"] = estimator_flags(c.estimator).use_iv ? to_string(m.stage1) : "none";
  j["stage2_inputs"] = to_string(m.stage2);
  j["replications"] = c.replications;
  j["base_seed"] = c.base_seed;
  j["split"] = {0.63, 0.27, 0.10};
  j["hyperparameters"] = {
      {"treatment", {{"epochs", h.t_epochs}, {"batch", h.t_batch}, {"lr", h.t_lr}, {"hidden", h.t_hidden},
                     {"activation", "relu"}, {"batchnorm", true}, {"optimizer", "sgd"}}},
      {"outcome", {{"epochs", h.y_epochs}, {"batch", h.y_batch}, {"lr", h.y_lr}, {"rep_hidden", h.rep_hidden},
                   {"head_hidden", h.head_hidden}, {"alpha", h.alpha}, {"activation", "elu"},
                   {"head_l2", 1e-4}, {"optimizer", "adam"}}},
      {"latent", {{"m_l", h.l_dim}, {"m_e", 1}, {"epochs", h.l_epochs}, {"batch", h.l_batch}, {"lr", h.l_lr},
                  {"hidden", h.l_hidden}}}};
  return j;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

}  // namespace

std::string report_to_json(const SummaryReport& rep) {
  json j;
  j["config"] = config_json(rep);
  j["replications"] = json::array();
  for (const auto& r : rep.replications) {
    json m = json::object();
    for (const auto& [k, v] : r.metrics) m[k] = v;
    j["replications"].push_back(
        {{"index", r.index}, {"seed", r.seed}, {"failed", r.failed}, {"metrics", m}, {"warnings", r.warnings}});
  }
  json means = json::object(), stds = json::object();
  for (const auto& [k, v] : rep.metric_means) means[k] = v;
  for (const auto& [k, v] : rep.metric_stds) stds[k] = v;
  j["summary"] = {{"metric_means", means}, {"metric_stds", stds}, {"n_failed", rep.n_failed},
                  {"warnings", rep.warnings}};
  return j.dump(2) + "\n";
}

std::string report_to_csv(const SummaryReport& rep) {
  std::set<std::string> keys;
  for (const auto& r : rep.replications)
    for (const auto& [k, v] : r.metrics) keys.insert(k);
  std::ostringstream os;
  os << "# config: " << config_json(rep).dump() << "\n";
  std::vector<std::string> header{"summary", "replication", "seed", "failed"};
  for (const auto& k : keys) header.push_back(k);
  for (const auto& k : keys) header.push_back(k + "_std");
  header.push_back("n_failed");
  header.push_back("warnings");
  os << join(header, ",") << "\n";
  for (const auto& r : rep.replications) {
    std::vector<std::string> row{"false", std::to_string(r.index), std::to_string(r.seed), r.failed ? "true" : "false"};
    for (const auto& k : keys) row.push_back(r.metrics.count(k) ? fmt(r.metrics.at(k)) : "");
    for (std::size_t i = 0; i < keys.size(); ++i) row.emplace_back();
    row.emplace_back();
    row.push_back(csv_escape(join(r.warnings, "; ")));
    os << join(row, ",") << "\n";
  }
  std::vector<std::string> row{"true", "", "", ""};
  for (const auto& k : keys) row.push_back(rep.metric_means.count(k) ? fmt(rep.metric_means.at(k)) : "");
  for (const auto& k : keys) row.push_back(rep.metric_stds.count(k) ? fmt(rep.metric_stds.at(k)) : "");
  row.push_back(std::to_string(rep.n_failed));
  row.push_back(csv_escape(join(rep.warnings, "; ")));
  os << join(row, ",") << "\n";
  return os.str();
}

void emit_report(const SummaryReport& report, const std::string& path, ReportFormat format) {
  write_file(path, format == ReportFormat::Json ? report_to_json(report) : report_to_csv(report));
}

void emit_sweep(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ostringstream os;
  os << "n,mean_bias,std_bias,mean_abs_bias,n_failed\n";
  for (const auto& r : rows) {
    os << r.n << "," << fmt(r.mean_bias) << "," << fmt(r.std_bias) << "," << fmt(r.mean_abs_bias) << ","
       << r.n_failed << "\n";
  }
  write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// Enumerable toy DGP

void ToyDGP::validate() const {
  const std::size_t nz = p_z.size(), nx = p_x.size();
  if (nz < 1 || nx < 1 || p_u_given_x.size() != nx) throw ConfigError("toy: support tables have inconsistent sizes");
  const std::size_t nu = p_u_given_x.front().size();
  if (nz > 4 || nx > 4 || nu > 4 || nu < 1) throw ConfigError("toy: supports must have 1 to 4 states");
  auto check_dist = [](const std::vector<double>& p, const std::string& what) {
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("toy: " + what + " has an entry outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError("toy: " + what + " does not sum to 1");
  };
  check_dist(p_z, "p_z");
  check_dist(p_x, "p_x");
  for (const auto& row : p_u_given_x) {
    if (row.size() != nu) throw ConfigError("toy: p_u_given_x rows differ in length");
    check_dist(row, "p_u_given_x");
  }
  if (c_of_x.size() != nx) throw ConfigError("toy: c_of_x needs one entry per X state");
  const int nc = *std::max_element(c_of_x.begin(), c_of_x.end()) + 1;
  for (int c = 0; c < nc; ++c) {
    if (std::find(c_of_x.begin(), c_of_x.end(), c) == c_of_x.end()) {
      throw ConfigError("toy: c_of_x must use every level 0..max");
    }
  }
  if (*std::min_element(c_of_x.begin(), c_of_x.end()) < 0) throw ConfigError("toy: negative C level");
  auto check_table = [](const std::vector<std::vector<double>>& t, std::size_t r, std::size_t c,
                        const std::string& what) {
    if (t.size() != r) throw ConfigError("toy: " + what + " has the wrong number of rows");
    for (const auto& row : t)
      if (row.size() != c) throw ConfigError("toy: " + what + " has the wrong number of columns");
  };
  check_table(f1, nz, nx, "f1");
  check_table(f2, nx, nu, "f2");
  check_table(g1, 2, nx, "g1");
  check_table(g4, nx, nu, "g4");
  if (g2.size() != 2) throw ConfigError("toy: g2 needs one value per treatment level");
  if (g3.size() != nu) throw ConfigError("toy: g3 needs one value per U state");
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t u = 0; u < nu; ++u) {
        const double p = f1[z][x] + f2[x][u];
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("toy: f1 + f2 is not a probability");
      }
}

namespace {

ToyDGP base_toy() {
  ToyDGP t;
  t.p_z = {0.5, 0.5};
  t.p_x = {0.4, 0.6};
  t.p_u_given_x = {{0.3, 0.7}, {0.6, 0.4}};
  t.c_of_x = {0, 1};
  // P(T = 1 | x) = 0.59 for both x, so the estimated treatment is balanced
  // across C = X while T still depends on U.
  t.f1 = {{0.2, 0.1}, {0.5, 0.6}};
  t.f2 = {{0.1, 0.3}, {0.3, 0.15}};
  t.g1 = {{1.0, 2.0}, {3.5, 1.5}};
  return t;
}

}  // namespace

ToyDGP additive_toy() {
  ToyDGP t = base_toy();
  t.name = "additive";
  t.g2 = {0.0, 0.0};
  t.g3 = {0.7, -1.2};
  t.g4 = {{2.0, 2.0}, {2.0, 2.0}};
  return t;
}

ToyDGP multiplicative_toy() {
  ToyDGP t = base_toy();
  t.name = "multiplicative";
  // U in {-1, 1}: g2(t) = t, g3(u) = u^2.
  t.g2 = {0.0, 1.0};
  t.g3 = {1.0, 1.0};
  t.g4 = {{-0.8, 1.1}, {0.4, -0.3}};
  return t;
}

ToyDGP broken_toy() {
  ToyDGP t = multiplicative_toy();
  t.name = "broken";
  t.f1 = {{0.2, 0.3}, {0.5, 0.6}};
  return t;
}

ToyDGP load_toy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  ToyDGP t;
  try {
    t.name = j.value("name", std::string());
    j.at("p_z").get_to(t.p_z);
    j.at("p_x").get_to(t.p_x);
    j.at("p_u_given_x").get_to(t.p_u_given_x);
    j.at("c_of_x").get_to(t.c_of_x);
    j.at("f1").get_to(t.f1);
    j.at("f2").get_to(t.f2);
    j.at("g1").get_to(t.g1);
    j.at("g2").get_to(t.g2);
    j.at("g3").get_to(t.g3);
    j.at("g4").get_to(t.g4);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  t.validate();
  return t;
}

void save_toy(const ToyDGP& t, const std::string& path) {
  json j{{"name", t.name}, {"p_z", t.p_z}, {"p_x", t.p_x}, {"p_u_given_x", t.p_u_given_x},
         {"c_of_x", t.c_of_x}, {"f1", t.f1}, {"f2", t.f2}, {"g1", t.g1}, {"g2", t.g2}, {"g3", t.g3}, {"g4", t.g4}};
  write_file(path, j.dump(2) + "\n");
}

double verify_inverse_identity(const ToyDGP& toy) {
  toy.validate();
  const std::size_t nz = toy.p_z.size(), nx = toy.p_x.size(), nu = toy.g3.size();
  const int nc = *std::max_element(toy.c_of_x.begin(), toy.c_of_x.end()) + 1;

  // P(T = 1 | z, x), marginalizing U given x.
  std::vector<std::vector<double>> pt(nz, std::vector<double>(nx));
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t x = 0; x < nx; ++x) {
      double p = 0.0;
      for (std::size_t u = 0; u < nu; ++u) p += toy.p_u_given_x[x][u] * (toy.f1[z][x] + toy.f2[x][u]);
      pt[z][x] = p;
    }

  // P(x | c) and the conditional expectations given c.
  std::vector<double> pc(nc, 0.0);
  for (std::size_t x = 0; x < nx; ++x) pc[toy.c_of_x[x]] += toy.p_x[x];
  std::vector<double> that1(nc, 0.0), g3c(nc, 0.0), g4c(nc, 0.0);
  std::vector<std::array<double, 2>> g1c(nc, {0.0, 0.0});
  for (std::size_t x = 0; x < nx; ++x) {
    const int c = toy.c_of_x[x];
    if (pc[c] == 0.0) continue;
    const double w = toy.p_x[x] / pc[c];
    for (std::size_t z = 0; z < nz; ++z) that1[c] += w * toy.p_z[z] * pt[z][x];
    for (std::size_t u = 0; u < nu; ++u) {
      g3c[c] += w * toy.p_u_given_x[x][u] * toy.g3[u];
      g4c[c] += w * toy.p_u_given_x[x][u] * toy.g4[x][u];
    }
    for (int t = 0; t < 2; ++t) g1c[c][t] += w * toy.g1[t][x];
  }

  // The estimated treatment is binary, so independence from C means equal
  // P(T-hat = 1 | c) across the levels of C that have mass.
  double lo = 1.0, hi = 0.0;
  for (int c = 0; c < nc; ++c) {
    if (pc[c] == 0.0) continue;
    lo = std::min(lo, that1[c]);
    hi = std::max(hi, that1[c]);
  }
  if (hi - lo > 1e-12) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "representation C is not independent of the estimated treatment: "
                  "P(T-hat = 1 | c) ranges over [%.6g, %.6g]",
                  lo, hi);
    throw PreconditionError(buf);
  }

  double worst = 0.0;
  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t x = 0; x < nx; ++x) {
      if (toy.p_z[z] == 0.0 || toy.p_x[x] == 0.0) continue;
      const int c = toy.c_of_x[x];
      double lhs = 0.0;
      for (std::size_t u = 0; u < nu; ++u) {
        const double p1 = toy.f1[z][x] + toy.f2[x][u];
        for (int t = 0; t < 2; ++t) {
          const double pt_u = t == 1 ? p1 : 1.0 - p1;
          const double y = toy.g1[t][x] + toy.g2[t] * toy.g3[u] + toy.g4[x][u];
          lhs += toy.p_u_given_x[x][u] * pt_u * y;
        }
      }
      double rhs = 0.0;
      for (int t = 0; t < 2; ++t) {
        const double h = g1c[c][t] + toy.g2[t] * g3c[c] + g4c[c];
        rhs += (t == 1 ? pt[z][x] : 1.0 - pt[z][x]) * h;
      }
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

}  // namespace cbiv
