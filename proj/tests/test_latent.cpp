#include "doctest.h"

#include <cmath>
#include <vector>

#include "cbiv/errors.hpp"
#include "cbiv/grad_check.hpp"
#include "cbiv/latent.hpp"

using namespace cbiv;

namespace {

LatentConfig tiny_cfg(int m_l = 2) {
  LatentConfig c;
  c.m_l = m_l;
  c.hidden = {5, 4};
  c.epochs = 1;
  c.batch_size = 4;
  return c;
}

Dataset small_binary(Eigen::Index n, int m_x, std::uint64_t seed) {
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
    ds.y(i) = ds.t(i) + ds.x(i, 0) + rng.normal();
  }
  return ds;
}

Matrix draws(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("diagonal Gaussian KL closed form") {
  CHECK(kl_diag_gaussian(Vector::Zero(3), Vector::Ones(3)) == 0.0);
  CHECK(kl_diag_gaussian(Vector::Ones(4), Vector::Ones(4)) == doctest::Approx(2.0));
  Vector bad = Vector::Ones(2);
  bad(1) = 0.0;
  CHECK_THROWS_AS(kl_diag_gaussian(Vector::Zero(2), bad), DomainError);
  bad(1) = -1.0;
  CHECK_THROWS_AS(kl_diag_gaussian(Vector::Zero(2), bad), DomainError);

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Vector mu(3), sigma(3);
    for (int j = 0; j < 3; ++j) {
      mu(j) = rng.normal();
      sigma(j) = rng.uniform(0.2, 3.0);
    }
    CHECK(kl_diag_gaussian(mu, sigma) >= 0.0);
  }
}

TEST_CASE("KL closed form agrees with a Monte Carlo estimate") {
  Rng rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    Vector mu(2), sigma(2);
    for (int j = 0; j < 2; ++j) {
      mu(j) = rng.uniform(-1.0, 1.0);
      sigma(j) = rng.uniform(0.5, 1.5);
    }
    // E_q[log q(l) - log p(l)] with l ~ q.
    const int draws_n = 100000;
    double acc = 0.0;
    for (int s = 0; s < draws_n; ++s) {
      for (int j = 0; j < 2; ++j) {
        const double l = mu(j) + sigma(j) * rng.normal();
        acc += gaussian_log_density(l, mu(j), sigma(j)) - gaussian_log_density(l, 0.0, 1.0);
      }
    }
    CHECK(std::abs(acc / draws_n - kl_diag_gaussian(mu, sigma)) < 0.01);
  }
}

TEST_CASE("log densities") {
  CHECK(gaussian_log_density(1.7, 1.7, 1.0) == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-14));
  CHECK(gaussian_log_density(1.7, 1.7, 1.0) == doctest::Approx(-0.9189).epsilon(1e-4));
  CHECK_THROWS_AS(gaussian_log_density(0.0, 0.0, 0.0), DomainError);
  Eigen::RowVectorXd logits(3);
  logits << 0.0, 0.0, 0.0;
  CHECK(categorical_log_prob(logits, 1) == doctest::Approx(-std::log(3.0)));
  logits << 1000.0, 0.0, 0.0;
  CHECK(categorical_log_prob(logits, 0) == doctest::Approx(0.0));
  CHECK(std::isfinite(categorical_log_prob(logits, 2)));
  CHECK_THROWS_AS(categorical_log_prob(logits, 3), DomainError);
}

TEST_CASE("config and shape contracts") {
  Rng rng(3);
  LatentConfig c = tiny_cfg();
  c.m_e = 0;
  CHECK_THROWS_AS(LatentModel(c, 2, TreatmentKind::Binary, rng), ConfigError);
  c = tiny_cfg();
  c.m_l = 0;
  CHECK_THROWS_AS(LatentModel(c, 2, TreatmentKind::Binary, rng), ConfigError);
  c = tiny_cfg();
  c.x_categories = {0};
  CHECK_THROWS_AS(LatentModel(c, 2, TreatmentKind::Binary, rng), ConfigError);

  LatentModel m(tiny_cfg(), 3, TreatmentKind::Binary, rng);
  // Decoder heads consume m_L + m_E inputs, the Y head one more.
  const auto nets = m.networks();
  REQUIRE(nets.size() == 2 + 3 + 2);
  CHECK(nets[0]->input_width() == 4);
  for (std::size_t k = 2; k + 1 < nets.size(); ++k) CHECK(nets[k]->input_width() == 3);
  CHECK(nets.back()->input_width() == 4);

  const Dataset ds = small_binary(6, 3, 4);
  CHECK_THROWS_AS(extract_latents(m, ds), StateError);
  CHECK_THROWS_AS(m.prepare(small_binary(6, 2, 4)), ConfigError);
}

TEST_CASE("encoder pinned to the prior has zero KL") {
  Rng rng(5);
  LatentModel m(tiny_cfg(), 2, TreatmentKind::Binary, rng);
  auto nets = m.networks();
  nets[0]->zero_params();
  nets[1]->zero_params();
  // softplus(b) + 1e-6 == 1
  nets[1]->bias(nets[1]->num_layers() - 1).setConstant(std::log(std::expm1(1.0 - 1e-6)));
  const Dataset ds = small_binary(8, 2, 6);
  m.fit_scaling(ds);
  const auto e = m.elbo(m.prepare(ds), draws(rng, 8, 2), draws(rng, 8, 1));
  CHECK(std::abs(e.kl) <= 1e-12);
  CHECK(e.value == doctest::Approx(e.reconstruction).epsilon(1e-12));
}

TEST_CASE("ELBO gradient matches finite differences with frozen noise") {
  for (auto kind : {TreatmentKind::Binary, TreatmentKind::Continuous}) {
    Rng rng(7);
    Dataset ds = small_binary(2, 2, 8);
    if (kind == TreatmentKind::Continuous) {
      ds.kind = kind;
      ds.t << 0.3, -1.2;
    }
    LatentModel m(tiny_cfg(2), 2, kind, rng);
    m.fit_scaling(ds);
    const auto batch = m.prepare(ds);
    const Matrix eps_l = draws(rng, 2, 2);
    const Matrix eps_e = draws(rng, 2, 1);
    const auto base = m.elbo(batch, eps_l, eps_e);
    auto nets = m.networks();
    for (std::size_t k = 0; k < nets.size(); ++k) {
      auto rep = finite_difference_check(
          nets[k]->params(), [&] { return -m.elbo(batch, eps_l, eps_e).value; }, base.grads[k], 1e-3);
      CAPTURE(k);
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("categorical X head") {
  Rng rng(9);
  LatentConfig c = tiny_cfg();
  c.x_categories = {0, 3};
  LatentModel m(c, 2, TreatmentKind::Binary, rng);
  Dataset ds = small_binary(6, 2, 10);
  ds.x.col(1) << 0, 1, 2, 2, 1, 0;
  m.fit_scaling(ds);
  const auto batch = m.prepare(ds);
  // Codes pass through unscaled.
  CHECK(batch.x.col(1) == ds.x.col(1));
  const Matrix eps_l = draws(rng, 6, 2), eps_e = draws(rng, 6, 1);
  const auto base = m.elbo(batch, eps_l, eps_e);
  CHECK(std::isfinite(base.value));
  auto nets = m.networks();
  CHECK(nets[3]->output_width() == 3);
  auto rep = finite_difference_check(
      nets[3]->params(), [&] { return -m.elbo(batch, eps_l, eps_e).value; }, base.grads[3], 1e-3);
  CHECK(rep.passed);

  Dataset bad = ds;
  bad.x(0, 1) = 3.0;
  CHECK_THROWS_AS(m.prepare(bad), DomainError);
  bad.x(0, 1) = 0.5;
  CHECK_THROWS_AS(m.prepare(bad), DomainError);

  // Training drives the categorical likelihood up.
  Dataset big = small_binary(400, 2, 11);
  for (Eigen::Index i = 0; i < big.size(); ++i) big.x(i, 1) = big.x(i, 0) > 0.5 ? 2 : (big.x(i, 0) > -0.5 ? 1 : 0);
  LatentConfig tc = c;
  tc.hidden = {16};
  tc.epochs = 30;
  tc.batch_size = 50;
  tc.learning_rate = 3e-3;
  LatentModel tm(tc, 2, TreatmentKind::Binary, rng);
  const auto res = train_latent(big, tm, rng);
  CHECK(res.elbo_trace.back() > res.elbo_trace.front());
  CHECK(res.small_sample_warning);
}

TEST_CASE("extract_latents is deterministic with zero E block") {
  Rng rng(12);
  Dataset ds = small_binary(300, 3, 13);
  ds.x.row(1) = ds.x.row(0);
  ds.t(1) = ds.t(0);
  LatentConfig c = tiny_cfg(3);
  c.m_e = 2;
  c.batch_size = 50;
  LatentModel m(c, 3, TreatmentKind::Binary, rng);
  train_latent(ds, m, rng);
  const Matrix a = extract_latents(m, ds);
  CHECK(a.rows() == 300);
  CHECK(a.cols() == 5);
  CHECK(a.row(0) == a.row(1));
  CHECK((a.rightCols(2).array() == 0.0).all());
  CHECK(extract_latents(m, ds) == a);
}

TEST_CASE("Syn-2-4-4: latent features track the true treatment logit") {
  SynConfig sc;
  sc.seed = 14;
  SynInternals internals;
  const Dataset ds = generate_syn(sc, &internals);
  Rng rng(15);
  LatentConfig c;  // published Syn settings: m_L 5, 10 epochs, batch 200, Adam 1e-4
  LatentModel m(c, 4, TreatmentKind::Binary, rng);
  const auto res = train_latent(ds.without_oracle(), m, rng);
  CHECK_FALSE(res.small_sample_warning);
  REQUIRE(res.elbo_trace.size() == 10);
  CHECK(res.elbo_trace.back() > res.elbo_trace.front());

  const Matrix f = extract_latents(m, ds.without_oracle());
  const Vector lc = internals.logit.array() - internals.logit.mean();
  double best = 0.0;
  for (int j = 0; j < c.m_l; ++j) {
    const Vector fc = f.col(j).array() - f.col(j).mean();
    best = std::max(best, std::abs(fc.dot(lc)) / std::sqrt(fc.squaredNorm() * lc.squaredNorm()));
  }
  MESSAGE("best |corr| with the logit: " << best);
  CHECK(best > 0.3);
}
