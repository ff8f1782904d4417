#include "doctest.h"

#include <cmath>
#include <memory>

#include "ldp/error.hpp"
#include "ldp/estimate.hpp"
#include "ldp/ratefun.hpp"
#include "support.hpp"

using namespace ldp;
using ldp::testing::s_kernel;
using ldp::testing::symmetric_two_state;

namespace {

ProbVector pv(std::initializer_list<double> w) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(w.size()));
  Eigen::Index i = 0;
  for (double x : w) v(i++) = x;
  return ProbVector::validate(v);
}

double closed_form_two_state(const GeneratorMatrix& q, double rho1) {
  const double a = std::sqrt(q(0, 1) * rho1);
  const double b = std::sqrt(q(1, 0) * (1.0 - rho1));
  return (a - b) * (a - b);
}

// Bernoulli(p_xy) fixtures on every pair.
ConjugateOracle bernoulli_oracle(const Eigen::MatrixXd& p) {
  const auto n = static_cast<std::size_t>(p.rows());
  ConjugateOracle oracle(n, 1);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      oracle.set_law(x, y, std::make_shared<BernoulliLaw>(p(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y))));
    }
  }
  return oracle;
}

}  // namespace

TEST_CASE("rel_entropy") {
  CHECK(rel_entropy(1, 1).value() == 0.0);
  CHECK(rel_entropy(0, 2).value() == 2.0);
  CHECK(rel_entropy(2, 1).value() == doctest::Approx(2 * std::log(2.0) - 1).epsilon(1e-14));
  CHECK(rel_entropy(2, 1).value() == doctest::Approx(0.386294).epsilon(1e-6));
  CHECK(rel_entropy(1, 0).is_infinite());
  CHECK_THROWS_AS(rel_entropy(-1, 1), Error);

  Stream rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double a = 10.0 * rng.uniform();
    const double b = 10.0 * rng.uniform();
    CHECK(rel_entropy(a, b).value() > 0.0);
    CHECK(rel_entropy(a, a).value() == doctest::Approx(0.0));
  }
}

TEST_CASE("dvg_rate closed forms and minimizer") {
  const auto q = symmetric_two_state();
  CHECK(dvg_rate(pv({0.5, 0.5}), q).value == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(dvg_rate(pv({0.9, 0.1}), q).value == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(dvg_rate(pv({0.7, 0.3}), q).value == doctest::Approx(1.0 - 2.0 * std::sqrt(0.21)).epsilon(1e-8));

  Eigen::MatrixXd raw(2, 2);
  raw << -2, 2, 1, -1;
  const auto q2 = validate_generator(raw);
  CHECK(std::abs(dvg_rate(invariant_measure(q2), q2).value) < 1e-8);

  for (int i = 0; i <= 20; ++i) {
    const double r = i / 20.0;
    const auto rho = pv({r, 1.0 - r});
    CHECK(std::abs(dvg_rate(rho, q).value - closed_form_two_state(q, r)) < 1e-6);
    CHECK(std::abs(dvg_rate(rho, q2).value - closed_form_two_state(q2, r)) < 1e-6);
  }
}

TEST_CASE("dvg_rate agrees with a brute-force grid over the potential") {
  Eigen::MatrixXd raw(2, 2);
  raw << -0.7, 0.7, 1.9, -1.9;
  const auto q = validate_generator(raw);
  for (double r : {0.15, 0.4, 0.8}) {
    const auto rho = pv({r, 1.0 - r});
    double best = -HUGE_VAL;
    for (int k = -60000; k <= 60000; ++k) {
      Eigen::VectorXd v(2);
      v << 0.0, k * 1e-4;
      best = std::max(best, dvg_objective(rho, q, v));
    }
    CHECK(dvg_rate(rho, q).value == doctest::Approx(best).epsilon(1e-7));
  }
}

TEST_CASE("dvg_rate gauge invariance and nonconvergence") {
  Stream rng(99);
  const auto q = ldp::testing::random_generator(3, 2.0, rng);
  const auto rho = ProbVector::validate(ldp::testing::random_simplex_point(3, rng));
  const auto result = dvg_rate(rho, q);
  CHECK(result.value >= 0.0);
  for (double c : {-3.0, 0.5, 10.0}) {
    const Eigen::VectorXd shifted = result.potential.array() + c;
    CHECK(dvg_objective(rho, q, shifted) == doctest::Approx(dvg_objective(rho, q, result.potential)).epsilon(1e-12));
  }
  DvgSettings tight;
  tight.max_iterations = 1;
  tight.random_starts = 0;
  CHECK_THROWS_AS(dvg_rate(pv({0.95, 0.05}), symmetric_two_state(), tight), Error);
}

TEST_CASE("divergence") {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2, 2);
  j << 0, 2.5, 2.5, 0;
  CHECK(divergence(j).lpNorm<Eigen::Infinity>() == 0.0);
  j << 0, 1, 0, 0;
  CHECK(divergence(j)(0) == 1.0);
  CHECK(divergence(j)(1) == -1.0);
  Eigen::MatrixXd cyc = Eigen::MatrixXd::Zero(3, 3);
  cyc(0, 1) = cyc(1, 2) = cyc(2, 0) = 1.0;
  CHECK(divergence(cyc).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("bfg_rate") {
  const auto q = symmetric_two_state();
  const auto half = pv({0.5, 0.5});
  Eigen::MatrixXd j(2, 2);
  j << 0, 0.5, 0.5, 0;
  CHECK(bfg_rate(half, FluxMatrix::validate(j), q).value() == doctest::Approx(0.0));
  j << 0, 0.6, 0.5, 0;
  CHECK(bfg_rate(half, FluxMatrix::validate(j), q).is_infinite());
  j << 0, 1, 1, 0;
  CHECK(bfg_rate(half, FluxMatrix::validate(j), q).value() == doctest::Approx(2 * s_kernel(1, 0.5)).epsilon(1e-14));
  CHECK(bfg_rate(half, FluxMatrix::validate(j), q).value() == doctest::Approx(0.386294).epsilon(1e-6));
  // j << rho (x) Q violated
  j << 0, 1, 1, 0;
  CHECK(bfg_rate(pv({1.0, 0.0}), FluxMatrix::validate(j), q).is_infinite());
}

TEST_CASE("bfg_rate at the stationary flux and joint convexity") {
  Stream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = ldp::testing::random_generator(3, 2.0, rng);
    const auto pi = invariant_measure(q);
    const Eigen::MatrixXd flux = pi.weights().asDiagonal() * q.rates();
    Eigen::MatrixXd j0 = flux;
    j0.diagonal().setZero();
    // stationary flux is divergence-free only up to round-off of the solve
    CHECK(divergence(j0).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(bfg_rate(pi, FluxMatrix::validate(j0), q).value() == doctest::Approx(0.0));

    // random feasible pairs: symmetric part plus a cycle
    const auto make = [&](Eigen::VectorXd& rho_out) {
      rho_out = ldp::testing::random_simplex_point(3, rng);
      Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, 3);
      for (int x = 0; x < 3; ++x) {
        for (int y = x + 1; y < 3; ++y) j(x, y) = j(y, x) = rng.uniform();
      }
      const double c = rng.uniform();
      j(0, 1) += c;
      j(1, 2) += c;
      j(2, 0) += c;
      return j;
    };
    Eigen::VectorXd r1, r2;
    const Eigen::MatrixXd j1 = make(r1);
    const Eigen::MatrixXd j2 = make(r2);
    const auto i1 = bfg_rate(ProbVector::validate(r1), FluxMatrix::validate(j1), q);
    const auto i2 = bfg_rate(ProbVector::validate(r2), FluxMatrix::validate(j2), q);
    Eigen::VectorXd rm = 0.5 * (r1 + r2);
    rm /= rm.sum();
    const auto im = bfg_rate(ProbVector::validate(rm), FluxMatrix::validate(0.5 * (j1 + j2)), q);
    REQUIRE(i1.is_finite());
    REQUIRE(i2.is_finite());
    CHECK(im.value() <= 0.5 * i1.value() + 0.5 * i2.value() + 1e-10);
  }
}

TEST_CASE("pair_empirical_rate") {
  const auto q = symmetric_two_state();
  const auto p = transition_at(q, 0.5);
  const Eigen::VectorXd mu = dtmc_invariant(p).weights();
  const Eigen::MatrixXd stationary = mu.asDiagonal() * p.probs();
  CHECK(std::abs(pair_empirical_rate(PairMeasure::validate(stationary), p).value()) < 1e-12);

  Eigen::MatrixXd unbalanced(2, 2);
  unbalanced << 0.4, 0.3, 0.1, 0.2;
  CHECK(pair_empirical_rate(PairMeasure::validate(unbalanced), p).is_infinite());

  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(2, 2, 0.25);
  CHECK(pair_empirical_rate(PairMeasure::validate(uniform), p).value() ==
        doctest::Approx(0.07270672893442956).epsilon(1e-12));
}

TEST_CASE("cond_rate") {
  ConjugateOracle oracle(2, 1);
  oracle.set_law(0, 1, std::make_shared<BernoulliLaw>(0.5));
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(2, 2);
  t(0, 1) = 1.0;
  const auto theta = PairMeasure::validate(t);
  FluxField k(2, 1);
  k.vec(0, 1)(0) = 0.9;
  const double analytic = 0.9 * std::log(0.9) + 0.1 * std::log(0.1) + std::log(2.0);
  CHECK(cond_rate(k, theta, oracle).value() == doctest::Approx(analytic).epsilon(1e-9));
  CHECK(analytic == doctest::Approx(0.368064).epsilon(1e-6));

  k.vec(0, 1)(0) = 0.5;  // mean
  CHECK(std::abs(cond_rate(k, theta, oracle).value()) < 1e-12);

  k.vec(1, 0)(0) = 0.2;  // theta_10 = 0
  CHECK(cond_rate(k, theta, oracle).is_infinite());
}

TEST_CASE("theorem_rate zero at the ergodic point and infinite when unbalanced") {
  const auto q = symmetric_two_state();
  const auto p = transition_at(q, 1.0);
  Eigen::MatrixXd means(2, 2);
  means << 0.2, 0.6, 0.35, 0.8;
  const auto oracle = bernoulli_oracle(means);
  const Eigen::VectorXd mu = dtmc_invariant(p).weights();
  const Eigen::MatrixXd t = mu.asDiagonal() * p.probs();
  FluxField k(2, 1);
  for (std::size_t x = 0; x < 2; ++x) {
    for (std::size_t y = 0; y < 2; ++y) k.vec(x, y)(0) = t(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) * means(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
  }
  CHECK(std::abs(theorem_rate(k, PairMeasure::validate(t), p, oracle).value()) < 1e-10);

  Eigen::MatrixXd unbalanced(2, 2);
  unbalanced << 0.4, 0.3, 0.1, 0.2;
  CHECK(theorem_rate(k, PairMeasure::validate(unbalanced), p, oracle).is_infinite());
}

TEST_CASE("theorem_rate nonnegativity and joint convexity on random feasible pairs") {
  Stream rng(31);
  const auto q = ldp::testing::random_generator(3, 2.0, rng);
  const auto p = transition_at(q, 0.8);
  Eigen::MatrixXd means(3, 3);
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = 0.1 + 0.8 * rng.uniform();
  const auto oracle = bernoulli_oracle(means);

  const auto random_point = [&](Eigen::MatrixXd& theta, FluxField& k) {
    Eigen::MatrixXd raw(3, 3);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = rng.uniform();
    theta = project_balanced_simplex(raw / raw.sum());
    for (std::size_t x = 0; x < 3; ++x) {
      for (std::size_t y = 0; y < 3; ++y) {
        k.vec(x, y)(0) = theta(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) * (0.05 + 0.9 * rng.uniform());
      }
    }
  };
  int violations = 0;
  for (int trial = 0; trial < 40; ++trial) {
    Eigen::MatrixXd t1, t2;
    FluxField k1(3, 1), k2(3, 1);
    random_point(t1, k1);
    random_point(t2, k2);
    const auto th1 = PairMeasure::validate(t1);
    const auto th2 = PairMeasure::validate(t2);
    const auto i1 = theorem_rate(k1, th1, p, oracle);
    const auto i2 = theorem_rate(k2, th2, p, oracle);
    REQUIRE(i1.is_finite());
    REQUIRE(i2.is_finite());
    const double c1 = cond_rate(k1, th1, oracle).value();
    const double e1 = pair_empirical_rate(th1, p).value();
    CHECK(i1.value() >= std::max(c1, e1) - 1e-12);
    CHECK(std::min(c1, e1) >= -1e-12);

    FluxField km(3, 1);
    km.vectors() = 0.5 * (k1.vectors() + k2.vectors());
    const Eigen::MatrixXd tm = 0.5 * (t1 + t2);
    const auto im = theorem_rate(km, PairMeasure::validate(tm / tm.sum()), p, oracle);
    if (!(im.value() <= 0.5 * (i1.value() + i2.value()) + 1e-8)) ++violations;
  }
  CHECK(violations == 0);
}
