#include "ldp/ratefun.hpp"

#include <cmath>
#include <sstream>

#include "ldp/error.hpp"
#include "ldp/rng.hpp"

namespace ldp {

namespace {

constexpr double kMassTol = 1e-12;
constexpr double kBalanceTol = 1e-12;
constexpr double kContinuityTol = 1e-12;

// Gradient of dvg_objective: outflow minus inflow of j_xy = rho_x Q_xy e^{v_y - v_x}.
Eigen::VectorXd dvg_gradient(const Eigen::VectorXd& rho, const Eigen::MatrixXd& q,
                             const Eigen::VectorXd& v) {
  const auto n = q.rows();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (x == y) continue;
      const double j = rho(x) * q(x, y) * std::exp(v(y) - v(x));
      grad(x) += j;
      grad(y) -= j;
    }
  }
  grad(0) = 0.0;  // gauge
  return grad;
}

// Negative Hessian of dvg_objective on the gauge-free coordinates 1..n-1: the
// graph Laplacian weighted by the current fluxes.
Eigen::MatrixXd dvg_laplacian(const Eigen::VectorXd& rho, const Eigen::MatrixXd& q,
                              const Eigen::VectorXd& v) {
  const auto n = q.rows();
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (x == y) continue;
      const double j = rho(x) * q(x, y) * std::exp(v(y) - v(x));
      lap(x, x) += j;
      lap(y, y) += j;
      lap(x, y) -= j;
      lap(y, x) -= j;
    }
  }
  return lap.bottomRightCorner(n - 1, n - 1);
}

struct AscentRun {
  Eigen::VectorXd v;
  double value;
  double gradient_norm;
  int iterations;
};

// Damped Newton ascent with Armijo backtracking; falls back to the gradient
// when the Laplacian is numerically singular.
AscentRun ascend(const ProbVector& rho, const GeneratorMatrix& q, Eigen::VectorXd v,
                 const DvgSettings& settings) {
  const auto n = v.size();
  v(0) = 0.0;
  double value = dvg_objective(rho, q, v);
  Eigen::VectorXd grad = dvg_gradient(rho.weights(), q.rates(), v);
  int it = 0;
  for (; it < settings.max_iterations && n > 1; ++it) {
    if (grad.lpNorm<Eigen::Infinity>() < settings.tolerance) break;
    const Eigen::MatrixXd lap = dvg_laplacian(rho.weights(), q.rates(), v);
    const double scale = std::max(lap.diagonal().maxCoeff(), 1e-300);
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(n);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(lap + 1e-12 * scale * Eigen::MatrixXd::Identity(n - 1, n - 1));
    if (ldlt.info() == Eigen::Success) dir.tail(n - 1) = ldlt.solve(grad.tail(n - 1));
    double slope = grad.dot(dir);
    if (!dir.allFinite() || !(slope > 0.0)) {
      dir = grad;
      slope = grad.squaredNorm();
    }
    // Newton steps far along a flat direction are capped to keep exp() finite.
    const double longest = dir.lpNorm<Eigen::Infinity>();
    double step = longest > 5.0 ? 5.0 / longest : 1.0;
    bool accepted = false;
    const double grad_norm = grad.lpNorm<Eigen::Infinity>();
    for (int halvings = 0; halvings < 200; ++halvings) {
      const Eigen::VectorXd trial = v + step * dir;
      const double trial_value = dvg_objective(rho, q, trial);
      if (!std::isfinite(trial_value)) {
        step *= 0.5;
        continue;
      }
      if (trial_value > value && trial_value >= value + 1e-4 * step * slope) {
        v = trial;
        value = trial_value;
        grad = dvg_gradient(rho.weights(), q.rates(), v);
        accepted = true;
        break;
      }
      // Below rounding the value cannot rank steps; a full step must shrink the gradient.
      if (halvings == 0 && trial_value >= value - 1e-14 * std::max(1.0, std::abs(value))) {
        const Eigen::VectorXd trial_grad = dvg_gradient(rho.weights(), q.rates(), trial);
        if (trial_grad.lpNorm<Eigen::Infinity>() < 0.5 * grad_norm) {
          v = trial;
          value = std::max(value, trial_value);
          grad = trial_grad;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;  // at machine precision
  }
  return {v, value, grad.lpNorm<Eigen::Infinity>(), it};
}

}  // namespace

PairMeasure PairMeasure::validate(const Eigen::MatrixXd& raw) {
  if (raw.rows() == 0 || raw.rows() != raw.cols() || !raw.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "pair measure must be a finite square matrix");
  }
  if (raw.minCoeff() < 0.0) throw Error(ErrorCode::NegativeInput, "pair measure has negative entries");
  if (std::abs(raw.sum() - 1.0) > kMassTol) {
    std::ostringstream os;
    os << "pair measure has total mass " << raw.sum();
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  return PairMeasure(raw);
}

FluxMatrix FluxMatrix::validate(const Eigen::MatrixXd& raw) {
  if (raw.rows() == 0 || raw.rows() != raw.cols() || !raw.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "flux matrix must be a finite square matrix");
  }
  if (raw.minCoeff() < 0.0) throw Error(ErrorCode::NegativeInput, "flux matrix has negative entries");
  return FluxMatrix(raw);
}

ConjugateOracle::ConjugateOracle(std::size_t n_states, std::size_t dim, ConjugateSettings settings)
    : n_(n_states), dim_(dim), settings_(settings), laws_(n_states * n_states) {}

void ConjugateOracle::set_law(std::size_t x, std::size_t y, std::shared_ptr<const Law> law) {
  if (x >= n_ || y >= n_) throw Error(ErrorCode::InvalidArgument, "oracle pair out of range");
  if (law && law->dim() != dim_) throw Error(ErrorCode::InvalidArgument, "oracle law has wrong dimension");
  laws_[x * n_ + y] = std::move(law);
}

bool ConjugateOracle::has_law(std::size_t x, std::size_t y) const {
  return x < n_ && y < n_ && laws_[x * n_ + y] != nullptr;
}

const Law& ConjugateOracle::law(std::size_t x, std::size_t y) const {
  if (!has_law(x, y)) {
    std::ostringstream os;
    os << "oracle has no law for pair (" << x << "," << y << ")";
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  return *laws_[x * n_ + y];
}

double ConjugateOracle::log_mgf(std::size_t x, std::size_t y, const Eigen::VectorXd& lambda) const {
  return law(x, y).value(lambda);
}

Extended ConjugateOracle::conjugate(std::size_t x, std::size_t y, const Eigen::VectorXd& a) const {
  return effective_conjugate(law(x, y), a, settings_).value;
}

Extended rel_entropy(double a, double b) {
  if (a < 0.0 || b < 0.0 || std::isnan(a) || std::isnan(b)) {
    throw Error(ErrorCode::NegativeInput, "rel_entropy requires a, b >= 0");
  }
  if (a == 0.0) return Extended(b);
  if (b == 0.0) return Extended::infinity();
  return Extended(a * std::log(a / b) - a + b);
}

double dvg_objective(const ProbVector& rho, const GeneratorMatrix& q, const Eigen::VectorXd& v) {
  const auto n = static_cast<Eigen::Index>(q.n_states());
  double total = 0.0;
  for (Eigen::Index x = 0; x < n; ++x) {
    if (rho[static_cast<std::size_t>(x)] == 0.0) continue;
    double ratio = 0.0;  // (Qu)_x / u_x
    for (Eigen::Index y = 0; y < n; ++y) {
      ratio += q.rates()(x, y) * (x == y ? 1.0 : std::exp(v(y) - v(x)));
    }
    total -= rho[static_cast<std::size_t>(x)] * ratio;
  }
  return total;
}

DvgResult dvg_rate(const ProbVector& rho, const GeneratorMatrix& q, const DvgSettings& settings) {
  if (rho.size() != q.n_states()) throw Error(ErrorCode::InvalidArgument, "dvg_rate: dimension mismatch");
  if (!is_irreducible(q)) throw Error(ErrorCode::Reducible, "dvg_rate requires an irreducible generator");
  const auto n = static_cast<Eigen::Index>(q.n_states());

  // Converged runs first, then the larger objective.
  const auto better = [&](const AscentRun& a, const AscentRun& b) {
    const bool a_ok = a.gradient_norm < settings.tolerance;
    const bool b_ok = b.gradient_norm < settings.tolerance;
    if (a_ok != b_ok) return a_ok;
    return a.value > b.value;
  };
  Stream rng(settings.seed);
  AscentRun best = ascend(rho, q, Eigen::VectorXd::Zero(n), settings);
  for (int s = 0; s < settings.random_starts; ++s) {
    Eigen::VectorXd start(n);
    for (Eigen::Index i = 0; i < n; ++i) start(i) = 4.0 * rng.uniform() - 2.0;
    AscentRun run = ascend(rho, q, start, settings);
    if (better(run, best)) best = std::move(run);
  }
  if (best.gradient_norm >= settings.tolerance) {
    std::ostringstream os;
    os << "dvg_rate: gradient norm " << best.gradient_norm << " above tolerance after "
       << best.iterations << " iterations";
    throw Error(ErrorCode::NonConvergence, os.str());
  }
  return {std::max(0.0, best.value), best.v, best.gradient_norm, best.iterations};
}

Eigen::VectorXd divergence(const Eigen::MatrixXd& j) {
  return j.rowwise().sum() - j.colwise().sum().transpose();
}

Extended bfg_rate(const ProbVector& rho, const FluxMatrix& j, const GeneratorMatrix& q) {
  const std::size_t n = q.n_states();
  if (rho.size() != n || j.n_states() != n) throw Error(ErrorCode::InvalidArgument, "bfg_rate: dimension mismatch");
  if (divergence(j).lpNorm<Eigen::Infinity>() >= kBalanceTol) return Extended::infinity();
  Extended total(0.0);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      if (x == y) continue;
      total += rel_entropy(j(x, y), rho[x] * q(x, y));
      if (total.is_infinite()) return total;
    }
  }
  return total;
}

Extended pair_empirical_rate(const PairMeasure& theta, const TransitionKernel& p) {
  const std::size_t n = p.n_states();
  if (theta.n_states() != n) throw Error(ErrorCode::InvalidArgument, "pair_empirical_rate: dimension mismatch");
  const Eigen::VectorXd first = theta.first_marginal();
  if ((first - theta.second_marginal()).lpNorm<Eigen::Infinity>() >= kBalanceTol) return Extended::infinity();
  Extended total(0.0);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      total += rel_entropy(theta(x, y), first(static_cast<Eigen::Index>(x)) * p(x, y));
      if (total.is_infinite()) return total;
    }
  }
  return total;
}

Extended cond_rate(const FluxField& k, const PairMeasure& theta, const ConjugateOracle& oracle) {
  const std::size_t n = theta.n_states();
  if (k.n_states() != n || oracle.n_states() != n || k.dim() != oracle.dim()) {
    throw Error(ErrorCode::InvalidArgument, "cond_rate: dimension mismatch");
  }
  Extended total(0.0);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      const double weight = theta(x, y);
      const Eigen::VectorXd kxy = k.vec(x, y);
      if (weight == 0.0) {
        if (kxy.lpNorm<1>() > kContinuityTol) return Extended::infinity();
        continue;
      }
      total += weight * oracle.conjugate(x, y, kxy / weight);
      if (total.is_infinite()) return total;
    }
  }
  return total;
}

Extended theorem_rate(const FluxField& k, const PairMeasure& theta, const TransitionKernel& p,
                      const ConjugateOracle& oracle) {
  const Extended pair = pair_empirical_rate(theta, p);
  if (pair.is_infinite()) return pair;
  return cond_rate(k, theta, oracle) + pair;
}

}  // namespace ldp
