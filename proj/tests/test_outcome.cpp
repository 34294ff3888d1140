#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "cbiv/errors.hpp"
#include "cbiv/grad_check.hpp"
#include "cbiv/outcome.hpp"

using namespace cbiv;

namespace {

OutcomeConfig small_cfg(TreatmentKind kind, double alpha = 0.0) {
  OutcomeConfig c;
  c.rep_hidden = {8, 6};
  c.head_hidden = {7, 5};
  c.alpha = alpha;
  c.balance.metric = kind == TreatmentKind::Binary ? BalanceMetric::Wasserstein : BalanceMetric::ClubMi;
  c.balance.club_hidden = 6;
  return c;
}

void set_constant(Mlp& net, double value) {
  net.zero_params();
  net.bias(net.num_layers() - 1).setConstant(value);
}

Dataset binary_ds(Eigen::Index n, int m_x, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.kind = TreatmentKind::Binary;
  ds.z.resize(n, 0);
  ds.x.resize(n, m_x);
  ds.t.resize(n);
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < m_x; ++j) ds.x(i, j) = rng.normal();
    ds.t(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    ds.y(i) = rng.normal();
  }
  return ds;
}

// y = t + x with t independent of x.
Dataset linear_continuous(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.kind = TreatmentKind::Continuous;
  ds.z.resize(n, 0);
  ds.x.resize(n, 1);
  ds.t.resize(n);
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ds.x(i, 0) = rng.normal();
    ds.t(i) = rng.normal();
    ds.y(i) = ds.t(i) + ds.x(i, 0);
  }
  return ds;
}

double total_decay(OutcomeModel& m) {
  double d = m.rep_net().decay_penalty();
  for (int k = 0; k < m.num_heads(); ++k) d += m.head(k).decay_penalty();
  return d;
}

void check_composite_gradient(OutcomeModel& m, const Matrix& f, const Vector& y, const Vector& mix,
                              double alpha, double tol) {
  OutcomeGradients g;
  outcome_objective(m, f, y, mix, alpha, &g);
  auto loss = [&] { return outcome_objective(m, f, y, mix, alpha, nullptr).total + total_decay(m); };
  auto rep = finite_difference_check(m.rep_net().params(), loss, g.rep, tol);
  CHECK(rep.passed);
  for (int k = 0; k < m.num_heads(); ++k) {
    auto hr = finite_difference_check(m.head(k).params(), loss, g.heads[k], tol);
    CAPTURE(k);
    CHECK(hr.passed);
  }
}

}  // namespace

TEST_CASE("configuration contracts") {
  Rng rng(1);
  OutcomeConfig c = small_cfg(TreatmentKind::Binary);
  c.alpha = -1.0;
  CHECK_THROWS_AS(OutcomeModel(TreatmentKind::Binary, c, {ColumnSet::XOnly, nullptr}, 3, rng), ConfigError);
  c = small_cfg(TreatmentKind::Binary);
  c.rep_hidden.clear();
  CHECK_THROWS_AS(OutcomeModel(TreatmentKind::Binary, c, {ColumnSet::XOnly, nullptr}, 3, rng), ConfigError);
  CHECK_THROWS_AS(OutcomeModel(TreatmentKind::Continuous, small_cfg(TreatmentKind::Binary),
                               {ColumnSet::XOnly, nullptr}, 3, rng),
                  ConfigError);

  OutcomeModel b(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary), {ColumnSet::XOnly, nullptr}, 3, rng);
  CHECK(b.num_heads() == 2);
  CHECK(b.head(0).input_width() == b.rep_width());
  CHECK(b.head(1).input_width() == b.rep_width());
  OutcomeModel k(TreatmentKind::Continuous, small_cfg(TreatmentKind::Continuous), {ColumnSet::XOnly, nullptr}, 3,
                 rng);
  CHECK(k.num_heads() == 1);
  CHECK(k.head(0).input_width() == k.rep_width() + 1);
}

TEST_CASE("exact per-arm fit gives zero regression loss") {
  Rng rng(2);
  Dataset ds = binary_ds(40, 3, 3);
  for (Eigen::Index i = 0; i < ds.size(); ++i) ds.y(i) = ds.t(i) == 1.0 ? 2.5 : -0.75;
  OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary), {ColumnSet::XOnly, nullptr}, 3, rng);
  set_constant(m.head(0), -0.75);
  set_constant(m.head(1), 2.5);
  const OutcomeStep s = outcome_objective(m, ds.x, ds.y, ds.t, 0.0, nullptr);
  CHECK(s.l_y == 0.0);
  CHECK(s.total == 0.0);
}

TEST_CASE("constant heads: counterfactuals and ATE") {
  Rng rng(4);
  Dataset ds = binary_ds(30, 2, 5);
  OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary), {ColumnSet::XOnly, nullptr}, 2, rng);
  CHECK_THROWS_AS(predict_counterfactual(m, ds, 1.0), StateError);
  CHECK_THROWS_AS(estimate_ate(m, ds), StateError);
  set_constant(m.head(0), 0.0);
  set_constant(m.head(1), 1.0);
  m.mark_trained();
  CHECK((predict_counterfactual(m, ds, 0.0).array() == 0.0).all());
  CHECK((predict_counterfactual(m, ds, 1.0).array() == 1.0).all());
  CHECK(estimate_ate(m, ds) == 1.0);
  CHECK_THROWS_AS(predict_counterfactual(m, ds, 0.5), ConfigError);
  const Vector own = predict_counterfactual(m, ds, ds.t);
  CHECK(own == ds.t);

  set_constant(m.head(1), 0.0);
  m.head(1) = m.head(0);
  CHECK(estimate_ate(m, ds) == 0.0);

  OutcomeModel k(TreatmentKind::Continuous, small_cfg(TreatmentKind::Continuous), {ColumnSet::XOnly, nullptr}, 2,
                 rng);
  k.mark_trained();
  CHECK_THROWS_AS(estimate_ate(k, ds), ConfigError);
}

TEST_CASE("duplicate rows get identical predictions; ATE is permutation invariant") {
  Rng rng(6);
  Dataset ds = binary_ds(200, 3, 7);
  ds.x.row(5) = ds.x.row(4);
  OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary, 0.1), {ColumnSet::XOnly, nullptr}, 3,
                 rng);
  train_outcome(ds, nullptr, m, {false, true}, 30, 32, {OptimKind::Adam, 1e-2}, rng);
  const Vector p = predict_counterfactual(m, ds, 1.0);
  CHECK(p(4) == p(5));

  std::vector<Eigen::Index> perm(ds.size());
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[100]);
  CHECK(estimate_ate(m, ds.select(perm)) == doctest::Approx(estimate_ate(m, ds)).epsilon(1e-12));
}

TEST_CASE("stage-1 plug-in rules") {
  Rng rng(8);
  Dataset ds = binary_ds(20, 2, 9);
  TreatmentModel tm(TreatmentModelKind::BinaryLogistic, TreatmentConfig{}, {ColumnSet::XOnly, nullptr}, 2, rng);
  CHECK(stage1_mix(ds, nullptr, {false, true}) == ds.t);
  CHECK_THROWS_AS(stage1_mix(ds, nullptr, {true, true}), ConfigError);
  CHECK_THROWS_AS(stage1_mix(ds, &tm, {false, true}), ConfigError);
  CHECK_THROWS_AS(stage1_mix(ds, &tm, {true, true}), StateError);
  tm.net().zero_params();
  tm.mark_trained();
  CHECK((stage1_mix(ds, &tm, {true, true}).array() == 0.5).all());

  OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary), {ColumnSet::XOnly, nullptr}, 2, rng);
  CHECK_THROWS_AS(train_outcome(ds, nullptr, m, {true, true}, 5, 8, {}, rng), ConfigError);
}

TEST_CASE("composite objective gradients") {
  Rng rng(10);
  SUBCASE("binary, propensity mixing with Wasserstein balancing") {
    Dataset ds = binary_ds(14, 3, 11);
    Vector p(ds.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = rng.uniform(0.1, 0.9);
    OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary, 0.5), {ColumnSet::XOnly, nullptr}, 3,
                   rng);
    check_composite_gradient(m, ds.x, ds.y, p, 0.5, 1e-4);
  }
  SUBCASE("binary, no balancing") {
    Dataset ds = binary_ds(16, 3, 12);
    OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary), {ColumnSet::XOnly, nullptr}, 3, rng);
    check_composite_gradient(m, ds.x, ds.y, ds.t, 0.0, 1e-4);
  }
  SUBCASE("continuous with CLUB") {
    Dataset ds = linear_continuous(12, 13);
    OutcomeModel m(TreatmentKind::Continuous, small_cfg(TreatmentKind::Continuous, 0.3),
                   {ColumnSet::XOnly, nullptr}, 1, rng);
    check_composite_gradient(m, ds.x, ds.y, ds.t, 0.3, 1e-4);
  }
}

TEST_CASE("reported total decomposes into L_Y + alpha L_C") {
  Rng rng(14);
  Dataset ds = binary_ds(300, 3, 15);
  const double alpha = 0.37;
  OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary, alpha), {ColumnSet::XOnly, nullptr}, 3,
                 rng);
  auto res = train_outcome(ds, nullptr, m, {false, true}, 40, 50, {OptimKind::Adam, 1e-3}, rng);
  REQUIRE(res.trace.size() == 40);
  for (const auto& s : res.trace) {
    CHECK(std::isfinite(s.total));
    CHECK(std::abs(s.total - (s.l_y + alpha * s.l_c)) <= 1e-9);
    CHECK(s.l_c > 0.0);
  }
  // use_balance off forces alpha to zero.
  OutcomeModel z(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary, alpha), {ColumnSet::XOnly, nullptr}, 3,
                 rng);
  auto r0 = train_outcome(ds, nullptr, z, {false, false}, 5, 50, {OptimKind::Adam, 1e-3}, rng);
  for (const auto& s : r0.trace) CHECK(s.total == s.l_y);
}

TEST_CASE("non-finite outcome loss is reported with its iteration") {
  Rng rng(16);
  Dataset ds = binary_ds(50, 2, 17);
  ds.y(3) = std::numeric_limits<double>::infinity();
  OutcomeModel m(TreatmentKind::Binary, small_cfg(TreatmentKind::Binary), {ColumnSet::XOnly, nullptr}, 2, rng);
  CHECK_THROWS_AS(train_outcome(ds, nullptr, m, {false, false}, 5, 50, {OptimKind::Adam, 1e-3}, rng),
                  NumericalError);
}

TEST_CASE("continuous linear toy: exact oracle y = t + x") {
  const Dataset train = linear_continuous(3000, 18);
  const Dataset test = linear_continuous(1000, 19);
  Rng rng(20);
  OutcomeConfig c = small_cfg(TreatmentKind::Continuous);
  c.rep_hidden = {32, 32};
  c.head_hidden = {32, 32};
  OutcomeModel m(TreatmentKind::Continuous, c, {ColumnSet::XOnly, nullptr}, 1, rng);
  train_outcome(train, nullptr, m, {false, false}, 3000, 100, {OptimKind::Adam, 1e-3}, rng);
  const Vector pred = predict_counterfactual(m, test, test.t);
  const double mse = (pred - test.y).squaredNorm() / static_cast<double>(test.size());
  MESSAGE("held-out MSE " << mse);
  CHECK(mse <= 0.05);
  const double slope = (predict_counterfactual(m, test, 1.0) - predict_counterfactual(m, test, -1.0)).mean() / 2.0;
  MESSAGE("slope " << slope);
  CHECK(std::abs(slope - 1.0) <= 0.1);
}

TEST_CASE("counterfactual MSE against the structural truth") {
  Rng rng(21);
  DemandConfig dc;
  dc.n = 200;
  dc.seed = 22;
  Dataset ds = generate_demand(dc);
  const Vector grid = treatment_grid(ds.t);
  CHECK(grid.size() == 10);

  OutcomeConfig c = small_cfg(TreatmentKind::Continuous);
  c.head_hidden.clear();
  OutcomeModel m(TreatmentKind::Continuous, c, {ColumnSet::XOnly, nullptr}, 2, rng);
  m.head(0).zero_params();
  m.mark_trained();
  const Matrix truth = structural_truth(ds, grid);
  CHECK(counterfactual_mse(m, ds, grid) == doctest::Approx(truth.array().square().mean()).epsilon(1e-12));

  // With x1 = 0 the truth is 100 - 2t, which a linear head reproduces.
  ds.continuous_oracle->x1.setZero();
  m.head(0).weight(0)(0, 0) = -2.0;
  m.head(0).bias(0)(0, 0) = 100.0;
  CHECK(counterfactual_mse(m, ds, grid) == doctest::Approx(0.0).epsilon(1e-20));

  CHECK_THROWS_AS(counterfactual_mse(m, ds.without_oracle(), grid), UnavailableOracleError);
}

TEST_CASE("treatment grid spans the 5th to 95th percentile") {
  Vector t = Vector::LinSpaced(101, 0.0, 100.0);
  const Vector g = treatment_grid(t);
  CHECK(g(0) == doctest::Approx(5.0));
  CHECK(g(9) == doctest::Approx(95.0));
  CHECK(g(1) - g(0) == doctest::Approx(10.0));
  CHECK(treatment_grid(t, 1).size() == 1);
  CHECK_THROWS_AS(treatment_grid(Vector(), 10), ConfigError);
}

TEST_CASE("plain regression is unbiased without confounding") {
  // Syn-style outcome surfaces with X independent of T and no U.
  Rng gen(23);
  const int m_x = 4;
  auto make = [&](Eigen::Index n) {
    Dataset ds;
    ds.kind = TreatmentKind::Binary;
    ds.z.resize(n, 0);
    ds.x.resize(n, m_x);
    ds.t.resize(n);
    ds.y.resize(n);
    BinaryOracle o{Vector(n), Vector(n), Vector::Constant(n, 0.5)};
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < m_x; ++j) ds.x(i, j) = gen.normal();
      o.mu1(i) = ds.x.row(i).squaredNorm() / m_x;
      o.mu0(i) = ds.x.row(i).sum() / m_x;
      ds.t(i) = gen.bernoulli(0.5) ? 1.0 : 0.0;
      ds.y(i) = ds.t(i) == 1.0 ? o.mu1(i) : o.mu0(i);
    }
    ds.binary_oracle = o;
    return ds;
  };
  const Dataset ds = make(10000);
  Rng rng(24);
  OutcomeConfig c = small_cfg(TreatmentKind::Binary);
  c.rep_hidden = {64, 64};
  c.head_hidden = {64, 64};
  OutcomeModel m(TreatmentKind::Binary, c, {ColumnSet::XOnly, nullptr}, m_x, rng);
  train_outcome(ds.without_oracle(), nullptr, m, {false, false}, 1500, 256, {OptimKind::Adam, 1e-3}, rng);
  const double bias = estimate_ate(m, ds) - true_ate(ds);
  MESSAGE("plain-regression ATE bias " << bias);
  CHECK(std::abs(bias) <= 0.1);
}

TEST_CASE("balancing weight shrinks the representation discrepancy") {
  SynConfig sc;
  sc.seed = 25;
  sc.n = 4000;
  const Dataset ds = generate_syn(sc).without_oracle();
  Rng rng(26);
  TreatmentModel tm(TreatmentModelKind::BinaryLogistic, TreatmentConfig{}, {ColumnSet::ZAndX, nullptr}, 6, rng);
  OptimState opt({OptimKind::SGD, 0.05});
  train_treatment(ds, tm, 3, 500, opt, rng);
  const Vector p = predict_propensity(tm, ds);

  std::vector<double> disc;
  for (double alpha : {0.0, 0.01, 1.0}) {
    Rng r(27);
    OutcomeConfig c = small_cfg(TreatmentKind::Binary, alpha);
    c.rep_hidden = {32, 32, 32};
    c.head_hidden = {32, 32};
    OutcomeModel m(TreatmentKind::Binary, c, {ColumnSet::XOnly, nullptr}, 4, r);
    train_outcome(ds, &tm, m, {true, alpha > 0.0}, 600, 256, {OptimKind::Adam, 5e-4}, r);
    // Discrepancy on a fixed evaluation batch.
    const Matrix reps = m.rep_net().predict(ds.x.topRows(500));
    disc.push_back(weighted_wasserstein(reps, p.head(500), c.balance).value);
  }
  MESSAGE("disc(alpha = 0, 0.01, 1) = " << disc[0] << ", " << disc[1] << ", " << disc[2]);
  CHECK(disc[1] <= disc[0]);
  CHECK(disc[2] <= disc[1]);
  CHECK(disc[2] < disc[0]);
}
