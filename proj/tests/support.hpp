#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "ldp/chain.hpp"
#include "ldp/rng.hpp"

namespace ldp::testing {

inline GeneratorMatrix symmetric_two_state(double rate = 1.0) {
  Eigen::MatrixXd q(2, 2);
  q << -rate, rate, rate, -rate;
  return validate_generator(q);
}

inline GeneratorMatrix random_generator(std::size_t n, double max_rate, Stream& rng, double min_rate = 0.05) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index x = 0; x < q.rows(); ++x) {
    double sum = 0.0;
    for (Eigen::Index y = 0; y < q.cols(); ++y) {
      if (x == y) continue;
      q(x, y) = min_rate + (max_rate - min_rate) * rng.uniform();
      sum += q(x, y);
    }
    q(x, x) = -sum;
  }
  return validate_generator(q);
}

inline Eigen::VectorXd random_simplex_point(std::size_t n, Stream& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = -std::log(rng.uniform());
  return v / v.sum();
}

/// exp(M) by scaling, Taylor series and squaring; independent of uniformization.
inline Eigen::MatrixXd taylor_expm(const Eigen::MatrixXd& m) {
  int squarings = 0;
  double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.25) {
    norm *= 0.5;
    ++squarings;
  }
  const Eigen::MatrixXd scaled = m / std::pow(2.0, squarings);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(m.rows(), m.cols());
  Eigen::MatrixXd sum = term;
  for (int k = 1; k < 30; ++k) {
    term = term * scaled / k;
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

/// s(a|b) written out independently of the library.
inline double s_kernel(double a, double b) {
  if (a == 0.0) return b;
  return a * std::log(a / b) - a + b;
}

}  // namespace ldp::testing
