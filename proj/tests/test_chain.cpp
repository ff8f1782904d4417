#include "doctest.h"

#include <cmath>

#include "ldp/chain.hpp"
#include "ldp/error.hpp"
#include "support.hpp"

using namespace ldp;
using ldp::testing::symmetric_two_state;

namespace {

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an ldp::Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("validate_generator accepts and rejects") {
  Eigen::MatrixXd ok(2, 2);
  ok << -1, 1, 1, -1;
  CHECK(validate_generator(ok).n_states() == 2);

  Eigen::MatrixXd bad_sum(2, 2);
  bad_sum << -1, 2, 1, -1;
  CHECK(code_of([&] { validate_generator(bad_sum); }) == ErrorCode::NonZeroRowSum);

  Eigen::MatrixXd negative(2, 2);
  negative << -1, 1, -0.5, 0.5;
  CHECK(code_of([&] { validate_generator(negative); }) == ErrorCode::NegativeOffDiagonal);
}

TEST_CASE("transition_at on the symmetric two-state chain") {
  const auto q = symmetric_two_state();
  const auto p0 = transition_at(q, 0.0);
  CHECK((p0.probs() - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);

  const auto p = transition_at(q, 0.5);
  CHECK(p(0, 0) == doctest::Approx((1.0 + std::exp(-1.0)) / 2.0).epsilon(1e-13));
  CHECK(p(0, 0) == doctest::Approx(0.683940).epsilon(1e-6));

  const auto p5 = transition_at(q, 5.0);
  const auto pi = invariant_measure(q);
  for (Eigen::Index x = 0; x < 2; ++x) {
    CHECK((p5.probs().row(x).transpose() - pi.weights()).lpNorm<Eigen::Infinity>() < 1e-3);
  }
  CHECK(code_of([&] { transition_at(q, -1.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("transition_at handles long horizons") {
  Eigen::MatrixXd raw(2, 2);
  raw << -2, 2, 1, -1;
  const auto q = validate_generator(raw);
  const auto p = transition_at(q, 200.0);
  CHECK(p(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-10));
  CHECK(p(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-10));
}

TEST_CASE("invariant_measure") {
  CHECK(invariant_measure(symmetric_two_state())[0] == doctest::Approx(0.5));

  Eigen::MatrixXd raw(2, 2);
  raw << -2, 2, 1, -1;
  const auto q = validate_generator(raw);
  const auto pi = invariant_measure(q);
  CHECK(pi[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(pi[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK((pi.weights().transpose() * q.rates()).lpNorm<Eigen::Infinity>() < 1e-10);

  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(4, 4);
  block << -1, 1, 0, 0, 1, -1, 0, 0, 0, 0, -2, 2, 0, 0, 3, -3;
  CHECK(code_of([&] { invariant_measure(validate_generator(block)); }) == ErrorCode::Reducible);
}

TEST_CASE("dtmc_invariant") {
  Eigen::MatrixXd flip(2, 2);
  flip << 0.3, 0.7, 0.7, 0.3;
  const auto mu = dtmc_invariant(TransitionKernel::validate(flip));
  CHECK(mu[0] == doctest::Approx(0.5));

  Stream rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto q = ldp::testing::random_generator(4, 3.0, rng);
    const auto pi = invariant_measure(q);
    for (double t : {0.1, 0.7, 2.0}) {
      CHECK((dtmc_invariant(transition_at(q, t)).weights() - pi.weights()).lpNorm<Eigen::Infinity>() < 1e-9);
    }
  }

  Eigen::MatrixXd absorbing(2, 2);
  absorbing << 1, 0, 0.5, 0.5;
  CHECK(code_of([&] { dtmc_invariant(TransitionKernel::validate(absorbing)); }) == ErrorCode::Reducible);
}

TEST_CASE("is_irreducible") {
  CHECK(is_irreducible(symmetric_two_state()));
  Eigen::MatrixXd upper(3, 3);
  upper << -2, 1, 1, 0, -1, 1, 0, 0, 0;
  CHECK_FALSE(is_irreducible(validate_generator(upper)));
  Eigen::MatrixXd full(3, 3);
  full << -2, 1, 1, 1, -2, 1, 1, 1, -2;
  CHECK(is_irreducible(validate_generator(full)));
}

TEST_CASE("semigroup, fixed point and Taylor agreement") {
  Stream rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = ldp::testing::random_generator(4, 3.0, rng);
    const auto pi = invariant_measure(q);
    for (double s : {0.1, 0.5, 1.0}) {
      for (double t : {0.1, 0.5, 1.0}) {
        const Eigen::MatrixXd lhs = transition_at(q, s + t).probs();
        const Eigen::MatrixXd rhs = transition_at(q, s).probs() * transition_at(q, t).probs();
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
      }
    }
    const double t = 2.0 * rng.uniform();
    const Eigen::MatrixXd p = transition_at(q, t).probs();
    CHECK((p - ldp::testing::taylor_expm(t * q.rates())).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((pi.weights().transpose() * p - pi.weights().transpose()).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}
