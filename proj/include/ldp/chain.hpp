#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace ldp {

/// Rate matrix of a continuous-time chain: off-diagonal rates >= 0, rows sum
/// to zero. Only constructible through validation.
class GeneratorMatrix {
 public:
  static GeneratorMatrix validate(const Eigen::MatrixXd& raw);

  std::size_t n_states() const { return static_cast<std::size_t>(rates_.rows()); }
  const Eigen::MatrixXd& rates() const { return rates_; }
  double operator()(std::size_t x, std::size_t y) const { return rates_(x, y); }

  /// Largest exit rate max_x |Q_xx|.
  double max_exit_rate() const;

 private:
  explicit GeneratorMatrix(Eigen::MatrixXd rates) : rates_(std::move(rates)) {}
  Eigen::MatrixXd rates_;
};

/// Row-stochastic matrix.
class TransitionKernel {
 public:
  static TransitionKernel validate(const Eigen::MatrixXd& raw);

  std::size_t n_states() const { return static_cast<std::size_t>(probs_.rows()); }
  const Eigen::MatrixXd& probs() const { return probs_; }
  double operator()(std::size_t x, std::size_t y) const { return probs_(x, y); }

 private:
  explicit TransitionKernel(Eigen::MatrixXd probs) : probs_(std::move(probs)) {}
  Eigen::MatrixXd probs_;
};

/// Probability vector on the state space (invariant measures, occupation
/// measures).
class ProbVector {
 public:
  static ProbVector validate(const Eigen::VectorXd& raw);

  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  double operator[](std::size_t x) const { return weights_(x); }

 private:
  explicit ProbVector(Eigen::VectorXd w) : weights_(std::move(w)) {}
  Eigen::VectorXd weights_;
};

GeneratorMatrix validate_generator(const Eigen::MatrixXd& raw);

/// P(t) = exp(tQ) by uniformization. Large lambda*t is handled by computing a
/// short step and squaring.
TransitionKernel transition_at(const GeneratorMatrix& q, double t);

ProbVector invariant_measure(const GeneratorMatrix& q);
ProbVector dtmc_invariant(const TransitionKernel& p);

bool is_irreducible(const GeneratorMatrix& q);
bool is_irreducible(const TransitionKernel& p);

/// Strong connectivity of the directed graph with an edge x->y wherever
/// x != y and support(x, y) > 0.
bool strongly_connected(const Eigen::MatrixXd& support);

}  // namespace ldp
