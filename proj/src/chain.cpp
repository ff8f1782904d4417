#include "ldp/chain.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "ldp/error.hpp"

namespace ldp {

namespace {

constexpr double kGeneratorRowTol = 1e-12;
constexpr double kKernelRowTol = 1e-10;
constexpr double kProbSumTol = 1e-12;
constexpr double kPoissonTail = 1e-14;
// Beyond this lambda*t the e^{-lambda t} start weight loses too much range.
constexpr double kMaxUniformizationMass = 32.0;

void require_square(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    std::ostringstream os;
    os << what << " must be a non-empty square matrix, got " << m.rows() << "x" << m.cols();
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  if (!m.allFinite()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " has non-finite entries");
}

std::vector<bool> reachable_from_zero(const Eigen::MatrixXd& support, bool reversed) {
  const auto n = support.rows();
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const auto x = stack.back();
    stack.pop_back();
    for (Eigen::Index y = 0; y < n; ++y) {
      const double w = reversed ? support(y, x) : support(x, y);
      if (y != x && w > 0.0 && !seen[static_cast<std::size_t>(y)]) {
        seen[static_cast<std::size_t>(y)] = true;
        stack.push_back(y);
      }
    }
  }
  return seen;
}

Eigen::MatrixXd uniformized(const Eigen::MatrixXd& q, double lambda, double t) {
  const auto n = q.rows();
  const Eigen::MatrixXd step = Eigen::MatrixXd::Identity(n, n) + q / lambda;
  const double mass = lambda * t;
  double weight = std::exp(-mass);
  double cumulative = weight;
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd result = weight * power;
  for (int k = 1; 1.0 - cumulative >= kPoissonTail; ++k) {
    power = power * step;
    weight *= mass / k;
    cumulative += weight;
    result += weight * power;
    if (k > 100000) break;
  }
  return result;
}

Eigen::VectorXd balance_solve(const Eigen::MatrixXd& transposed_operator) {
  const auto n = transposed_operator.rows();
  Eigen::MatrixXd system = transposed_operator;
  system.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  Eigen::VectorXd x = lu.solve(rhs);
  // one step of iterative refinement
  x += lu.solve(rhs - system * x);
  x = x.cwiseMax(0.0);
  return x / x.sum();
}

}  // namespace

double GeneratorMatrix::max_exit_rate() const {
  return (-rates_.diagonal()).maxCoeff();
}

GeneratorMatrix GeneratorMatrix::validate(const Eigen::MatrixXd& raw) {
  require_square(raw, "generator");
  const auto n = raw.rows();
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (x != y && raw(x, y) < 0.0) {
        std::ostringstream os;
        os << "negative off-diagonal rate Q(" << x << "," << y << ") = " << raw(x, y);
        throw Error(ErrorCode::NegativeOffDiagonal, os.str());
      }
    }
    const double sum = raw.row(x).sum();
    const double scale = std::max(1.0, std::abs(raw(x, x)));
    if (std::abs(sum) > kGeneratorRowTol * scale) {
      std::ostringstream os;
      os << "row " << x << " of generator sums to " << sum;
      throw Error(ErrorCode::NonZeroRowSum, os.str());
    }
  }
  return GeneratorMatrix(raw);
}

TransitionKernel TransitionKernel::validate(const Eigen::MatrixXd& raw) {
  require_square(raw, "transition kernel");
  if (raw.minCoeff() < 0.0 || raw.maxCoeff() > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "transition kernel entries must lie in [0,1]");
  }
  for (Eigen::Index x = 0; x < raw.rows(); ++x) {
    if (std::abs(raw.row(x).sum() - 1.0) > kKernelRowTol) {
      std::ostringstream os;
      os << "row " << x << " of transition kernel sums to " << raw.row(x).sum();
      throw Error(ErrorCode::NonZeroRowSum, os.str());
    }
  }
  return TransitionKernel(raw);
}

ProbVector ProbVector::validate(const Eigen::VectorXd& raw) {
  if (raw.size() == 0 || !raw.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "probability vector must be non-empty and finite");
  }
  if (raw.minCoeff() < 0.0) throw Error(ErrorCode::NegativeInput, "probability vector has negative entries");
  if (std::abs(raw.sum() - 1.0) > kProbSumTol) {
    std::ostringstream os;
    os << "probability vector sums to " << raw.sum();
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  return ProbVector(raw);
}

GeneratorMatrix validate_generator(const Eigen::MatrixXd& raw) {
  return GeneratorMatrix::validate(raw);
}

TransitionKernel transition_at(const GeneratorMatrix& q, double t) {
  if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "transition_at requires t >= 0");
  const auto n = static_cast<Eigen::Index>(q.n_states());
  const double lambda = q.max_exit_rate();
  if (t == 0.0 || lambda == 0.0) return TransitionKernel::validate(Eigen::MatrixXd::Identity(n, n));

  int squarings = 0;
  double step = t;
  while (lambda * step > kMaxUniformizationMass) {
    step *= 0.5;
    ++squarings;
  }
  Eigen::MatrixXd p = uniformized(q.rates(), lambda, step);
  for (int i = 0; i < squarings; ++i) p = p * p;
  p = p.cwiseMax(0.0).cwiseMin(1.0);
  for (Eigen::Index x = 0; x < n; ++x) p.row(x) /= p.row(x).sum();
  return TransitionKernel::validate(p);
}

ProbVector invariant_measure(const GeneratorMatrix& q) {
  if (!is_irreducible(q)) throw Error(ErrorCode::Reducible, "generator is reducible; invariant measure not unique");
  return ProbVector::validate(balance_solve(q.rates().transpose()));
}

ProbVector dtmc_invariant(const TransitionKernel& p) {
  if (!is_irreducible(p)) throw Error(ErrorCode::Reducible, "kernel is reducible; invariant measure not unique");
  const auto n = static_cast<Eigen::Index>(p.n_states());
  return ProbVector::validate(balance_solve(p.probs().transpose() - Eigen::MatrixXd::Identity(n, n)));
}

bool strongly_connected(const Eigen::MatrixXd& support) {
  if (support.rows() <= 1) return true;
  for (bool reversed : {false, true}) {
    const auto seen = reachable_from_zero(support, reversed);
    for (bool s : seen) {
      if (!s) return false;
    }
  }
  return true;
}

bool is_irreducible(const GeneratorMatrix& q) { return strongly_connected(q.rates()); }
bool is_irreducible(const TransitionKernel& p) { return strongly_connected(p.probs()); }

}  // namespace ldp
