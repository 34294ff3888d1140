#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cbiv/balance.hpp"
#include "cbiv/errors.hpp"
#include "cbiv/grad_check.hpp"

using namespace cbiv;

namespace {

Matrix gaussian(Rng& rng, int r, int c, double mean = 0.0, double sd = 1.0) {
  Matrix m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal(mean, sd);
  return m;
}

Vector propensities(Rng& rng, int n) {
  Vector p(n);
  for (int i = 0; i < n; ++i) p(i) = rng.uniform(0.05, 0.95);
  return p;
}

// Gradient of a scalar function of `reps` by central differences.
Matrix numeric_grad(Matrix reps, const std::function<double(const Matrix&)>& f, double h = 1e-5) {
  Matrix g(reps.rows(), reps.cols());
  for (Eigen::Index j = 0; j < reps.cols(); ++j) {
    for (Eigen::Index i = 0; i < reps.rows(); ++i) {
      const double s = reps(i, j);
      reps(i, j) = s + h;
      const double up = f(reps);
      reps(i, j) = s - h;
      const double down = f(reps);
      reps(i, j) = s;
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

double worst_rel(const Matrix& a, const Matrix& b) {
  double w = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) w = std::max(w, relative_error(a.data()[k], b.data()[k]));
  return w;
}

}  // namespace

TEST_CASE("weighted_wasserstein: identical rows") {
  Matrix reps = Matrix::Ones(6, 3);
  Vector p = Vector::Constant(6, 0.5);
  auto r = weighted_wasserstein(reps, p, BalanceConfig{});
  CHECK(r.value <= 1e-6);
}

TEST_CASE("weighted_wasserstein: two point masses at unit distance") {
  Matrix reps(2, 1);
  reps << 0.0, 1.0;
  Vector p(2);
  p << 1.0, 0.0;
  auto r = weighted_wasserstein(reps, p, BalanceConfig{});
  CHECK(r.value == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("weighted_wasserstein: 1-D Gaussian clouds match the closed-form W2^2") {
  Rng rng(21);
  const int n = 500;
  Matrix reps(n, 1);
  Vector p(n);
  for (int i = 0; i < n; ++i) {
    const bool treated = i % 2 == 1;
    reps(i, 0) = rng.normal(treated ? 2.0 : 0.0, 1.0);
    p(i) = treated ? 1.0 : 0.0;
  }
  // W2^2 between N(0,1) and N(2,1) is (2 - 0)^2 + (1 - 1)^2 = 4.
  auto r = weighted_wasserstein(reps, p, BalanceConfig{});
  CHECK(std::abs(r.value - 4.0) <= 0.4);
}

TEST_CASE("weighted_wasserstein: degenerate arm") {
  Rng rng(22);
  Matrix reps = gaussian(rng, 4, 2);
  CHECK_THROWS_AS(weighted_wasserstein(reps, Vector::Ones(4), BalanceConfig{}), DegenerateArmError);
  CHECK_THROWS_AS(weighted_wasserstein(reps, Vector::Zero(4), BalanceConfig{}), DegenerateArmError);
  CHECK_THROWS_AS(weighted_wasserstein(reps.topRows(1), Vector::Constant(1, 0.5), BalanceConfig{}),
                  ConfigError);
}

TEST_CASE("weighted_wasserstein: metric properties on random instances") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + trial % 10;
    Matrix reps = gaussian(rng, n, 1 + trial % 4);
    Vector p = propensities(rng, n);
    const double d = weighted_wasserstein(reps, p, BalanceConfig{}).value;
    CHECK(d >= 0.0);

    const Vector flipped = Vector::Ones(n) - p;
    CHECK(std::abs(weighted_wasserstein(reps, flipped, BalanceConfig{}).value - d) <= 1e-9);

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Matrix rp(n, reps.cols());
    Vector pp(n);
    for (int i = 0; i < n; ++i) {
      rp.row(i) = reps.row(perm[i]);
      pp(i) = p(perm[i]);
    }
    CHECK(std::abs(weighted_wasserstein(rp, pp, BalanceConfig{}).value - d) <= 1e-9 * std::max(1.0, d));
  }
}

TEST_CASE("weighted_wasserstein: gradient matches finite differences") {
  Rng rng(24);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 6 + trial;
    Matrix reps = gaussian(rng, n, 3);
    Vector p = propensities(rng, n);
    BalanceConfig cfg;
    auto r = weighted_wasserstein(reps, p, cfg);
    Matrix num = numeric_grad(reps, [&](const Matrix& m) { return weighted_wasserstein(m, p, cfg).value; });
    CHECK_MESSAGE(worst_rel(r.d_reps, num) <= 1e-3, worst_rel(r.d_reps, num));
  }
  SUBCASE("hard assignment") {
    Matrix reps = gaussian(rng, 8, 2);
    Vector p(8);
    p << 1, 0, 1, 0, 0, 1, 1, 0;
    auto r = weighted_wasserstein(reps, p, BalanceConfig{});
    Matrix num = numeric_grad(reps, [&](const Matrix& m) { return weighted_wasserstein(m, p, BalanceConfig{}).value; });
    CHECK(worst_rel(r.d_reps, num) <= 1e-3);
  }
}

TEST_CASE("club_mi: single sample is zero") {
  Rng rng(31);
  ClubState st(3, BalanceConfig{}, rng);
  auto r = club_mi(gaussian(rng, 1, 3), Vector::Constant(1, 0.7), st);
  CHECK(r.value == doctest::Approx(0.0));
}

TEST_CASE("club_mi: gradient w.r.t. representations matches finite differences") {
  Rng rng(32);
  ClubState st(3, BalanceConfig{}, rng);
  Matrix reps = gaussian(rng, 9, 3);
  Vector t = gaussian(rng, 9, 1).col(0);
  auto r = club_mi(reps, t, st);
  Matrix num = numeric_grad(reps, [&](const Matrix& m) { return club_mi(m, t, st).value; });
  CHECK(worst_rel(r.d_reps, num) <= 1e-3);
}

TEST_CASE("club_mi: width mismatch") {
  Rng rng(33);
  ClubState st(3, BalanceConfig{}, rng);
  CHECK_THROWS_AS(club_mi(gaussian(rng, 4, 2), Vector::Zero(4), st), ConfigError);
}

TEST_CASE("club_mi: near zero on independent inputs") {
  Rng rng(34);
  BalanceConfig cfg;
  cfg.club_lr = 1e-2;
  ClubState st(2, cfg, rng);
  const int n = 1000;
  Matrix reps = gaussian(rng, n, 2);
  Vector t = gaussian(rng, n, 1).col(0);
  for (int k = 0; k < 300; ++k) club_fit_step(st, reps, t);
  Matrix fresh = gaussian(rng, n, 2);
  Vector fresh_t = gaussian(rng, n, 1).col(0);
  CHECK(std::abs(club_mi(fresh, fresh_t, st).value) <= 0.05);
}

TEST_CASE("club_mi: deterministic copy gives a large estimate") {
  Rng rng(35);
  BalanceConfig cfg;
  cfg.club_lr = 1e-2;
  ClubState st(2, cfg, rng);
  const int n = 500;
  Matrix reps = gaussian(rng, n, 2);
  Vector t = reps.col(0);
  for (int k = 0; k < 300; ++k) club_fit_step(st, reps, t);
  CHECK(club_mi(reps, t, st).value > 1.0);
}

TEST_CASE("club_fit_step") {
  Rng rng(36);
  SUBCASE("recovers the noise scale") {
    BalanceConfig cfg;
    cfg.club_lr = 1e-2;
    ClubState st(1, cfg, rng);
    const int n = 400;
    Matrix reps = gaussian(rng, n, 1);
    Vector t = reps.col(0) + 0.1 * gaussian(rng, n, 1).col(0);
    double first = 0.0, last = 0.0;
    for (int k = 0; k < 200; ++k) {
      last = club_fit_step(st, reps, t);
      if (k == 0) first = last;
    }
    CHECK(last < first);
    const Vector sigma = st.evaluate(reps).sigma;
    CHECK(sigma.mean() >= 0.05);
    CHECK(sigma.mean() <= 0.2);
  }
  SUBCASE("zero learning rate leaves the parameters unchanged") {
    BalanceConfig cfg;
    ClubState st(2, cfg, rng);
    st.set_learning_rate(0.0);
    const ParamSet before = st.mu_net().params();
    Matrix reps = gaussian(rng, 10, 2);
    club_fit_step(st, reps, gaussian(rng, 10, 1).col(0));
    CHECK(st.fit_steps() == 1);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == st.mu_net().params()[i]);
  }
  SUBCASE("NLL decreases over 100 steps") {
    BalanceConfig cfg;
    cfg.club_lr = 5e-3;
    ClubState st(2, cfg, rng);
    Matrix reps = gaussian(rng, 200, 2);
    Vector t = 2.0 * reps.col(1) + 0.5 * gaussian(rng, 200, 1).col(0);
    const double first = club_fit_step(st, reps, t);
    double last = first;
    for (int k = 0; k < 99; ++k) last = club_fit_step(st, reps, t);
    CHECK(last < first);
  }
}
