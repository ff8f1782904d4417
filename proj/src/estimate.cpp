#include "ldp/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "ldp/bridge.hpp"
#include "ldp/error.hpp"
#include "ldp/parallel.hpp"
#include "ldp/rng.hpp"

namespace ldp {

namespace {

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  // row-major: index x * n + y
  const Eigen::MatrixXd t = m.transpose();
  return Eigen::Map<const Eigen::VectorXd>(t.data(), t.size());
}

Eigen::MatrixXd unflatten(const Eigen::VectorXd& v, Eigen::Index n) {
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) m(x, y) = v(x * n + y);
  }
  return m;
}

/// sum_xy w_xy phi^{xy}(lambda) over pairs with positive weight.
class PairMixture final : public LogMgf {
 public:
  PairMixture(const ConjugateOracle& oracle, const Eigen::MatrixXd& weights)
      : oracle_(oracle), weights_(weights) {}

  std::size_t dim() const override { return oracle_.dim(); }

  double value(const Eigen::VectorXd& lambda) const override {
    double total = 0.0;
    for_each_pair([&](std::size_t x, std::size_t y, double w) { total += w * oracle_.law(x, y).value(lambda); });
    return total;
  }

  double derivatives(const Eigen::VectorXd& lambda, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const override {
    const auto d = static_cast<Eigen::Index>(dim());
    grad = Eigen::VectorXd::Zero(d);
    hess = Eigen::MatrixXd::Zero(d, d);
    double total = 0.0;
    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    for_each_pair([&](std::size_t x, std::size_t y, double w) {
      total += w * oracle_.law(x, y).derivatives(lambda, g, h);
      grad += w * g;
      hess += w * h;
    });
    return total;
  }

 private:
  template <typename F>
  void for_each_pair(F&& f) const {
    const std::size_t n = oracle_.n_states();
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) {
        const double w = weights_(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
        if (w > 0.0) f(x, y, w);
      }
    }
  }

  const ConjugateOracle& oracle_;
  const Eigen::MatrixXd& weights_;
};

/// Dykstra alternation between the (masked) simplex and the balance subspace.
class BalancedProjector {
 public:
  BalancedProjector(Eigen::Index n, Eigen::MatrixXd mask) : n_(n), mask_(flatten(mask)) {
    // Rows: divergence at each state, plus total mass (right-hand side 1).
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n + 1, n * n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        b(x, x * n + y) += 1.0;
        b(y, x * n + y) -= 1.0;
        b(n, x * n + y) = 1.0;
      }
    }
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(b);
    const Eigen::MatrixXd pinv = cod.pseudoInverse();
    affine_ = Eigen::MatrixXd::Identity(n * n, n * n) - pinv * b;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
    rhs(n) = 1.0;
    offset_ = pinv * rhs;
  }

  Eigen::MatrixXd operator()(const Eigen::MatrixXd& theta, double tolerance, int max_iterations) const {
    Eigen::VectorXd x = flatten(theta);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(x.size());
    Eigen::VectorXd q = Eigen::VectorXd::Zero(x.size());
    Eigen::VectorXd y = x;
    for (int it = 0; it < max_iterations; ++it) {
      y = masked_simplex(x + p);
      p = x + p - y;
      const Eigen::VectorXd next = affine_ * (y + q) + offset_;
      q = y + q - next;
      const double change = (next - x).lpNorm<Eigen::Infinity>();
      x = next;
      if (change < tolerance && (y - x).lpNorm<Eigen::Infinity>() < 1e-13) break;
    }
    return unflatten(masked_simplex(x), n_);
  }

 private:
  Eigen::VectorXd masked_simplex(const Eigen::VectorXd& v) const {
    std::vector<Eigen::Index> allowed;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (mask_(i) > 0.0) allowed.push_back(i);
    }
    Eigen::VectorXd sub(static_cast<Eigen::Index>(allowed.size()));
    for (std::size_t i = 0; i < allowed.size(); ++i) sub(static_cast<Eigen::Index>(i)) = v(allowed[i]);
    const Eigen::VectorXd proj = project_simplex(sub);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
    for (std::size_t i = 0; i < allowed.size(); ++i) out(allowed[i]) = proj(static_cast<Eigen::Index>(i));
    return out;
  }

  Eigen::Index n_;
  Eigen::VectorXd mask_;
  Eigen::MatrixXd affine_;
  Eigen::VectorXd offset_;
};

struct InnerSolution {
  double value = 0.0;  // G(theta) + H(theta)
  Eigen::VectorXd lambda;
  Eigen::MatrixXd gradient;
  bool boundary_contact = false;
  bool converged = false;
};

class InfConvProblem {
 public:
  InfConvProblem(const Eigen::VectorXd& target, const ConjugateOracle& oracle, const TransitionKernel& p,
                 const InfConvSettings& settings, double box)
      : target_(target), oracle_(oracle), p_(p), settings_(settings), box_(box) {
    conjugate_settings_ = oracle.settings();
    conjugate_settings_.tolerance = settings.inner_tolerance;
  }

  InnerSolution evaluate(const Eigen::MatrixXd& theta, const Eigen::VectorXd& warm) const {
    InnerSolution out;
    const PairMixture mixture(oracle_, theta);
    const ConjugateEstimate est = conjugate_at(mixture, target_, box_, conjugate_settings_, &warm);
    out.lambda = est.maximizer;
    out.boundary_contact = est.boundary_contact;
    out.converged = est.converged;
    const auto n = theta.rows();
    const Eigen::VectorXd marginal = theta.rowwise().sum();
    double entropy = 0.0;
    out.gradient = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        const double pxy = p_.probs()(x, y);
        if (pxy <= 0.0) continue;
        const double reference = marginal(x) * pxy;
        entropy += rel_entropy(theta(x, y), reference).value();
        const double floored = std::max(theta(x, y), settings_.theta_floor);
        const double ref_floored = std::max(reference, settings_.theta_floor);
        out.gradient(x, y) = std::log(floored / ref_floored) -
                             oracle_.law(static_cast<std::size_t>(x), static_cast<std::size_t>(y)).value(out.lambda);
      }
    }
    out.value = est.value + entropy;
    return out;
  }

 private:
  const Eigen::VectorXd& target_;
  const ConjugateOracle& oracle_;
  const TransitionKernel& p_;
  const InfConvSettings& settings_;
  double box_;
  ConjugateSettings conjugate_settings_;
};

/// KL projection onto balanced pair measures: theta_xy = w_xy e^{u_x - u_y} / Z
/// with u the minimizer of sum_{x != y} w_xy e^{u_x - u_y} (gauge u_0 = 0).
Eigen::MatrixXd kl_balance(const Eigen::MatrixXd& w) {
  const auto n = w.rows();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  const auto scaled = [&](const Eigen::VectorXd& v) {
    Eigen::MatrixXd m = w;
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (x != y) m(x, y) *= std::exp(v(x) - v(y));
      }
    }
    return m;
  };
  const auto objective = [&](const Eigen::VectorXd& v) {
    const Eigen::MatrixXd m = scaled(v);
    return m.sum() - m.diagonal().sum();
  };
  double f = objective(u);
  for (int it = 0; it < 200 && n > 1; ++it) {
    const Eigen::MatrixXd m = scaled(u);
    const Eigen::VectorXd grad = m.rowwise().sum() - m.colwise().sum().transpose();
    const double mass = m.sum();
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-15 * mass) break;
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (x == y) continue;
        hess(x, x) += m(x, y);
        hess(y, y) += m(x, y);
        hess(x, y) -= m(x, y);
        hess(y, x) -= m(x, y);
      }
    }
    Eigen::MatrixXd h = hess.bottomRightCorner(n - 1, n - 1);
    h.diagonal().array() += 1e-14 * std::max(1e-300, h.diagonal().maxCoeff());
    Eigen::VectorXd step = Eigen::VectorXd::Zero(n);
    step.tail(n - 1) = h.ldlt().solve(-grad.tail(n - 1));
    const double longest = step.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(longest)) break;
    if (longest > 5.0) step *= 5.0 / longest;
    const double slope = grad.tail(n - 1).dot(step.tail(n - 1));
    double alpha = 1.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings, alpha *= 0.5) {
      const double trial = objective(u + alpha * step);
      if (trial <= f + 1e-4 * alpha * slope + 1e-15 * mass) {
        u += alpha * step;
        f = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  const Eigen::MatrixXd m = scaled(u);
  return m / m.sum();
}

double kl_divergence(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a.data()[i] > 0.0) total += a.data()[i] * std::log(a.data()[i] / b.data()[i]);
  }
  return total;
}

struct OuterRun {
  Eigen::MatrixXd theta;
  InnerSolution solution;
  int iterations = 0;
  double decrease = 0.0;
  bool converged = false;
};

// Entropic mirror descent over balanced theta on the mask: multiplicative step,
// then KL projection back onto balanced measures.
OuterRun minimize_theta(const InfConvProblem& problem, const Eigen::MatrixXd& mask, Eigen::MatrixXd theta,
                        Eigen::VectorXd lambda, const InfConvSettings& settings) {
  OuterRun run;
  const auto floor_on_mask = [&](const Eigen::MatrixXd& m) {
    return Eigen::MatrixXd((mask.array() > 0.0).select(m.array().max(settings.theta_floor), 0.0));
  };
  theta = kl_balance(floor_on_mask(theta / theta.sum()));
  InnerSolution current = problem.evaluate(theta, lambda);
  std::vector<double> history{current.value};
  double step = 1.0;
  int it = 0;
  for (; it < settings.max_iterations; ++it) {
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      Eigen::MatrixXd shifted = -step * current.gradient;
      double top = -HUGE_VAL;
      for (Eigen::Index i = 0; i < shifted.size(); ++i) {
        if (mask.data()[i] > 0.0) top = std::max(top, shifted.data()[i]);
      }
      const Eigen::MatrixXd tilted = theta.array() * (shifted.array() - top).exp();
      const Eigen::MatrixXd trial_theta = kl_balance(floor_on_mask(tilted / tilted.sum()));
      const Eigen::MatrixXd delta = trial_theta - theta;
      if (delta.lpNorm<Eigen::Infinity>() < 1e-16) break;
      InnerSolution trial = problem.evaluate(trial_theta, current.lambda);
      const double model = current.value + (current.gradient.array() * delta.array()).sum() +
                           kl_divergence(trial_theta, theta) / step;
      if (trial.value <= model + 1e-15 * std::abs(current.value)) {
        theta = trial_theta;
        current = std::move(trial);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      run.converged = true;  // no representable progress left
      break;
    }
    history.push_back(current.value);
    step *= 1.5;
    const auto window = static_cast<std::size_t>(settings.stall_window);
    if (history.size() > window) {
      const double decrease = history[history.size() - 1 - window] - current.value;
      run.decrease = decrease;
      if (decrease < settings.stall_decrease) {
        run.converged = true;
        break;
      }
    }
  }
  run.theta = theta;
  run.solution = std::move(current);
  run.iterations = it;
  return run;
}

Eigen::MatrixXd stationary_pairs(const TransitionKernel& p) {
  const Eigen::VectorXd mu = dtmc_invariant(p).weights();
  return mu.asDiagonal() * p.probs();
}

}  // namespace

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  if (v.size() == 0) return v;
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double threshold = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumulative += sorted[i];
    const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (sorted[i] - t > 0.0) threshold = t;
  }
  return (v.array() - threshold).cwiseMax(0.0).matrix();
}

Eigen::MatrixXd project_balanced_simplex(const Eigen::MatrixXd& theta, double tolerance, int max_iterations) {
  const BalancedProjector project(theta.rows(), Eigen::MatrixXd::Ones(theta.rows(), theta.cols()));
  return project(theta, tolerance, max_iterations);
}

ConjugateOracle build_oracle(const GeneratorMatrix& q, double t0, ObservableMode mode, std::size_t count,
                             std::uint64_t seed, const OracleOptions& options) {
  const std::size_t n = q.n_states();
  if (mode == ObservableMode::OccupationFlux) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        if (a != b && !(q(a, b) > 0.0)) {
          std::ostringstream os;
          os << "flux mode requires all rates positive; Q(" << a << "," << b << ") = " << q(a, b);
          throw Error(ErrorCode::ZeroRate, os.str());
        }
      }
    }
  }
  if (options.cache_dir) std::filesystem::create_directories(*options.cache_dir);
  const TransitionKernel p = transition_at(q, t0);
  ConjugateOracle oracle(n, observable_dim(mode, n), options.conjugate);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      if (!(p(x, y) > 0.0)) continue;  // pair never observed; theta_xy is pinned to 0
      std::optional<std::filesystem::path> dump;
      if (options.cache_dir) dump = *options.cache_dir / sample_dump_name(x, y, mode, t0, seed, count);
      if (dump && std::filesystem::exists(*dump)) {
        auto law = std::make_shared<EmpiricalLaw>(EmpiricalLaw::load(*dump));
        if (law->count() != count || law->dim() != oracle.dim()) {
          throw Error(ErrorCode::IoError, "sample dump does not match request: " + dump->string());
        }
        oracle.set_law(x, y, std::move(law));
        continue;
      }
      const BridgeSpec spec(q, x, y, t0);
      SamplingOptions sampling{seed, x * n + y, options.threads, options.max_attempts};
      auto law = std::make_shared<EmpiricalLaw>(conditional_samples(spec, mode, count, sampling));
      if (dump) law->save(*dump);
      oracle.set_law(x, y, std::move(law));
    }
  }
  return oracle;
}

InfConvResult infconv(const Eigen::VectorXd& target, const ConjugateOracle& oracle, const TransitionKernel& p,
                      double t0, const InfConvSettings& settings, const Eigen::MatrixXd* theta_start) {
  const auto n = static_cast<Eigen::Index>(p.n_states());
  if (oracle.n_states() != p.n_states()) throw Error(ErrorCode::InvalidArgument, "infconv: oracle/kernel mismatch");
  if (static_cast<std::size_t>(target.size()) != oracle.dim()) {
    throw Error(ErrorCode::InvalidArgument, "infconv: target dimension does not match the oracle");
  }
  if (!(t0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "infconv: T0 must be positive");

  Eigen::MatrixXd mask = (p.probs().array() > 0.0).cast<double>();
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (mask(x, y) > 0.0 && !oracle.has_law(static_cast<std::size_t>(x), static_cast<std::size_t>(y))) {
        throw Error(ErrorCode::InvalidArgument, "infconv: oracle lacks a law for an observable pair");
      }
    }
  }
  std::vector<Eigen::MatrixXd> starts;
  if (theta_start) {
    starts.push_back(*theta_start);
  } else {
    starts.push_back(stationary_pairs(p));
    if (settings.starts > 1) starts.push_back(mask / mask.sum());
    for (int s = 2; s < settings.starts; ++s) {
      Stream rng(0x1f0c, static_cast<std::uint64_t>(s));
      Eigen::MatrixXd r(n, n);
      for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform();
      starts.push_back(r.cwiseProduct(mask) / r.cwiseProduct(mask).sum());
    }
  }

  double box = settings.box;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(target.size());
  std::optional<OuterRun> best;
  {
    const InfConvProblem problem(target, oracle, p, settings, box);
    for (const auto& start : starts) {
      OuterRun run = minimize_theta(problem, mask, start, zero, settings);
      if (!best || run.solution.value < best->solution.value) best = std::move(run);
    }
  }

  InfConvResult result;
  result.certificate.iterations = best->iterations;
  bool infeasible = false;
  if (best->solution.boundary_contact) {
    // Box sweep: the dual sup rides the box. Linear growth in the box means the
    // target is unreachable; saturation means a finite value on the boundary.
    result.certificate.box_sweep.emplace_back(box, best->solution.value);
    int growing = 0;
    for (int doubling = 0; doubling < 2; ++doubling) {
      const double previous = best->solution.value;
      const double previous_box = box;
      box *= 2.0;
      const InfConvProblem problem(target, oracle, p, settings, box);
      OuterRun run = minimize_theta(problem, mask, best->theta, best->solution.lambda * 2.0, settings);
      run.iterations += best->iterations;
      result.certificate.box_sweep.emplace_back(box, run.solution.value);
      if (run.solution.value - previous > settings.growth_slope * previous_box) ++growing;
      best = std::move(run);
      if (!best->solution.boundary_contact) break;
    }
    infeasible = growing == 2 && best->solution.boundary_contact;
  }

  Eigen::MatrixXd theta = best->theta;
  theta = (theta.array() < settings.theta_zero).select(0.0, theta);
  theta /= theta.sum();

  const std::size_t un = static_cast<std::size_t>(n);
  FluxField k(un, oracle.dim());
  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  for (std::size_t x = 0; x < un; ++x) {
    for (std::size_t y = 0; y < un; ++y) {
      const double w = theta(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y));
      if (w <= 0.0) continue;
      oracle.law(x, y).derivatives(best->solution.lambda, g, h);
      k.vec(x, y) = w * g;
    }
  }

  result.value_per_window = best->solution.value;
  result.value = infeasible ? Extended::infinity() : Extended(std::max(0.0, best->solution.value) / t0);
  result.theta = theta;
  result.k = std::move(k);
  result.lambda = best->solution.lambda;
  result.converged = best->converged && best->solution.converged;
  result.certificate.balance_residual = (theta.rowwise().sum() - theta.colwise().sum().transpose()).lpNorm<Eigen::Infinity>();
  result.certificate.target_residual = (result.k.total() - target).lpNorm<Eigen::Infinity>();
  result.certificate.objective_decrease = best->decrease;
  result.certificate.boundary_contact = best->solution.boundary_contact;
  if (!infeasible) {
    const Extended primal = theorem_rate(result.k, PairMeasure::validate(theta), p, oracle);
    result.certificate.primal_finite = primal.is_finite();
    result.certificate.primal_value = primal.is_finite() ? primal.value() / t0 : HUGE_VAL;
  } else {
    result.certificate.primal_finite = false;
    result.certificate.primal_value = HUGE_VAL;
  }
  return result;
}

InfConvResult infconv_dvg(const ProbVector& rho, const ConjugateOracle& oracle, const TransitionKernel& p,
                          double t0, const InfConvSettings& settings) {
  if (oracle.dim() != rho.size()) throw Error(ErrorCode::InvalidArgument, "infconv_dvg needs an occupation-mode oracle");
  return infconv(rho.weights(), oracle, p, t0, settings);
}

InfConvResult infconv_bfg(const ProbVector& rho, const FluxMatrix& j, const ConjugateOracle& oracle,
                          const TransitionKernel& p, double t0, const InfConvSettings& settings) {
  const auto n = static_cast<Eigen::Index>(rho.size());
  if (oracle.dim() != static_cast<std::size_t>(n + n * n) || j.n_states() != rho.size()) {
    throw Error(ErrorCode::InvalidArgument, "infconv_bfg needs a flux-mode oracle and matching j");
  }
  Eigen::VectorXd target(n + n * n);
  target << rho.weights(), flatten(j.entries());
  return infconv(target, oracle, p, t0, settings);
}

ContractionResult contract_dvg_from_bfg(const ProbVector& rho, const GeneratorMatrix& q, double gap_tolerance) {
  if (rho.size() != q.n_states()) throw Error(ErrorCode::InvalidArgument, "contract: dimension mismatch");
  if (!is_irreducible(q)) throw Error(ErrorCode::Reducible, "contract requires an irreducible generator");
  const auto n = static_cast<Eigen::Index>(q.n_states());
  const Eigen::VectorXd& r = rho.weights();
  const Eigen::MatrixXd& rates = q.rates();

  // Convex f(v) = sum_{x != y} rho_x Q_xy (e^{v_y - v_x} - 1); the dual value is -f.
  const auto flux_at = [&](const Eigen::VectorXd& v) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (x != y) j(x, y) = r(x) * rates(x, y) * std::exp(v(y) - v(x));
      }
    }
    return j;
  };
  const auto objective = [&](const Eigen::VectorXd& v) {
    double f = 0.0;
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (x != y) f += r(x) * rates(x, y) * std::expm1(v(y) - v(x));
      }
    }
    return f;
  };

  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  ContractionResult out;
  double f = objective(v);
  for (out.iterations = 0; out.iterations < 2000; ++out.iterations) {
    const Eigen::MatrixXd j = flux_at(v);
    // gradient: inflow - outflow; Hessian: Laplacian with edge weights j_xy + j_yx
    Eigen::VectorXd grad = -divergence(j);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      for (Eigen::Index y = 0; y < n; ++y) {
        if (x == y) continue;
        hess(x, x) += j(x, y);
        hess(y, y) += j(x, y);
        hess(x, y) -= j(x, y);
        hess(y, x) -= j(x, y);
      }
    }
    const Eigen::VectorXd g = grad.tail(n - 1);  // gauge v_0 = 0
    if (n == 1 || g.lpNorm<Eigen::Infinity>() < 1e-14) break;
    Eigen::MatrixXd h = hess.bottomRightCorner(n - 1, n - 1);
    h.diagonal().array() += 1e-14 * std::max(1.0, h.diagonal().maxCoeff());
    Eigen::VectorXd step = Eigen::VectorXd::Zero(n);
    step.tail(n - 1) = h.ldlt().solve(-g);
    // cap the step so exponentials stay in range
    const double longest = step.lpNorm<Eigen::Infinity>();
    if (longest > 5.0) step *= 5.0 / longest;
    double alpha = 1.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings, alpha *= 0.5) {
      const Eigen::VectorXd trial = v + alpha * step;
      const double trial_f = objective(trial);
      if (trial_f <= f + 1e-4 * alpha * g.dot(step.tail(n - 1)) + 1e-15 * std::abs(f)) {
        v = trial;
        f = trial_f;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  out.potential = v;
  out.flux = flux_at(v);
  out.dual_value = -f;
  double primal = 0.0;
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (x != y) primal += rel_entropy(out.flux(x, y), r(x) * rates(x, y)).value();
    }
  }
  out.value = primal;
  out.duality_gap = primal - out.dual_value;
  out.divergence_residual = divergence(out.flux).lpNorm<Eigen::Infinity>();
  if (!(std::abs(out.duality_gap) < gap_tolerance)) {
    std::ostringstream os;
    os << "contract: duality gap " << out.duality_gap << " after " << out.iterations << " Newton steps";
    throw Error(ErrorCode::NonConvergence, os.str());
  }
  return out;
}

DecayTarget DecayTarget::occupation(Eigen::VectorXd rho, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "decay target needs epsilon > 0");
  DecayTarget t;
  t.kind = Kind::Occupation;
  t.rho = std::move(rho);
  t.epsilon = epsilon;
  return t;
}

DecayTarget DecayTarget::pair(const FluxField& k, const Eigen::MatrixXd& theta, ObservableMode mode, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "decay target needs epsilon > 0");
  DecayTarget t;
  t.kind = Kind::Pair;
  t.mode = mode;
  const Eigen::VectorXd kv = Eigen::Map<const Eigen::VectorXd>(k.vectors().data(), k.vectors().size());
  const Eigen::VectorXd tv = flatten(theta);
  t.pair_vector.resize(kv.size() + tv.size());
  t.pair_vector << kv, tv;
  t.epsilon = epsilon;
  return t;
}

Eigen::VectorXd pair_observable(const EmpiricalPair& pair) {
  const Eigen::VectorXd kv = Eigen::Map<const Eigen::VectorXd>(pair.k.vectors().data(), pair.k.vectors().size());
  const Eigen::VectorXd tv = flatten(pair.theta);
  Eigen::VectorXd out(kv.size() + tv.size());
  out << kv, tv;
  return out;
}

DecayFit mc_decay_rate(const GeneratorMatrix& q, double t0, const DecayTarget& target,
                       const std::vector<std::size_t>& n_grid, const DecayOptions& options) {
  if (n_grid.size() < 2) throw Error(ErrorCode::InvalidArgument, "mc_decay_rate needs at least two n values");
  if (!(t0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "mc_decay_rate needs T0 > 0");
  if (!(target.epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "mc_decay_rate needs epsilon > 0");
  const std::size_t states = q.n_states();
  const ChainSimulator simulator(q);
  const Eigen::VectorXd pi = invariant_measure(q).weights();
  std::vector<double> pi_cumulative(states);
  std::partial_sum(pi.data(), pi.data() + pi.size(), pi_cumulative.begin());

  DecayFit fit;
  fit.t0 = t0;
  fit.n_grid = n_grid;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    const std::size_t windows = n_grid[g];
    if (windows == 0) throw Error(ErrorCode::InvalidArgument, "mc_decay_rate: n must be positive");
    const double horizon = t0 * static_cast<double>(windows);
    std::vector<unsigned char> hit(options.paths_per_n, 0);
    parallel_for(options.paths_per_n, options.threads, [&](std::size_t i) {
      Stream rng(options.seed, g, i);
      const double u = rng.uniform() * pi_cumulative.back();
      const auto x0 = std::min<std::size_t>(
          static_cast<std::size_t>(std::upper_bound(pi_cumulative.begin(), pi_cumulative.end(), u) -
                                   pi_cumulative.begin()),
          states - 1);
      const PathRecord path = simulator.run(x0, horizon, rng);
      double distance = 0.0;
      if (target.kind == DecayTarget::Kind::Occupation) {
        distance = (occupation(path, horizon, states) - target.rho).lpNorm<1>();
      } else {
        const DiscreteEmbedding emb = discrete_embedding(path, t0, windows, target.mode, states);
        distance = (pair_observable(accumulate(emb, states)) - target.pair_vector).lpNorm<1>();
      }
      hit[i] = distance <= target.epsilon ? 1 : 0;
    });
    const std::size_t hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
    fit.hits.push_back(hits);
    const double prob = static_cast<double>(hits) / static_cast<double>(options.paths_per_n);
    fit.probability.push_back(prob);
    fit.neg_log_rate.push_back(hits > 0 ? -std::log(prob) / static_cast<double>(windows) : HUGE_VAL);
  }

  std::size_t usable = 0;
  for (std::size_t g = 0; g < n_grid.size(); ++g) {
    if (fit.hits[g] >= options.min_hits) usable = std::max(usable, n_grid[g]);
  }
  if (fit.hits.back() < options.min_hits) {
    std::ostringstream os;
    os << "mc_decay_rate: only " << fit.hits.back() << " hits at n = " << n_grid.back()
       << "; largest usable n = " << usable;
    throw Error(ErrorCode::InsufficientHits, os.str());
  }

  // Weighted least squares of -log P against n; var(log P_hat) ~ (1 - p) / hits.
  const auto count = n_grid.size();
  std::vector<double> w(count), xs(count), ys(count);
  std::size_t fitted = 0;
  for (std::size_t g = 0; g < count; ++g) {
    xs[g] = static_cast<double>(n_grid[g]);
    if (fit.hits[g] == 0) {
      w[g] = ys[g] = 0.0;  // no information on log P
      continue;
    }
    const double hits = static_cast<double>(fit.hits[g]);
    const double variance =
        std::max(1.0 - fit.probability[g], 1.0 / static_cast<double>(options.paths_per_n)) / hits;
    w[g] = 1.0 / variance;
    ys[g] = -std::log(fit.probability[g]);
    ++fitted;
  }
  if (fitted < 2) throw Error(ErrorCode::InsufficientHits, "mc_decay_rate: fewer than two n values with hits");
  const double sw = std::accumulate(w.begin(), w.end(), 0.0);
  double mx = 0.0, my = 0.0;
  for (std::size_t g = 0; g < count; ++g) {
    mx += w[g] * xs[g];
    my += w[g] * ys[g];
  }
  mx /= sw;
  my /= sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t g = 0; g < count; ++g) {
    sxx += w[g] * (xs[g] - mx) * (xs[g] - mx);
    sxy += w[g] * (xs[g] - mx) * (ys[g] - my);
  }
  fit.raw_slope = sxy / sxx;
  fit.slope = std::max(0.0, fit.raw_slope);
  fit.intercept = my - fit.raw_slope * mx;
  fit.standard_error = std::sqrt(1.0 / sxx);
  return fit;
}

namespace {

void enumerate_lattice(std::size_t parts, int remaining, Eigen::VectorXd& point, std::size_t index, int resolution,
                       const std::function<void(const Eigen::VectorXd&)>& visit) {
  if (index + 1 == parts) {
    point(static_cast<Eigen::Index>(index)) = static_cast<double>(remaining) / resolution;
    visit(point);
    return;
  }
  for (int k = 0; k <= remaining; ++k) {
    point(static_cast<Eigen::Index>(index)) = static_cast<double>(k) / resolution;
    enumerate_lattice(parts, remaining - k, point, index + 1, resolution, visit);
  }
}

}  // namespace

double inf_dvg_over_ball(const ProbVector& rho, double epsilon, const GeneratorMatrix& q, int resolution) {
  const std::size_t n = rho.size();
  if (resolution <= 0) resolution = n <= 2 ? 4000 : n == 3 ? 300 : n == 4 ? 60 : 20;
  double best = HUGE_VAL;
  Eigen::VectorXd point(static_cast<Eigen::Index>(n));
  enumerate_lattice(n, resolution, point, 0, resolution, [&](const Eigen::VectorXd& candidate) {
    if ((candidate - rho.weights()).lpNorm<1>() > epsilon) return;
    Eigen::VectorXd normalized = candidate / candidate.sum();
    const double value = dvg_rate(ProbVector::validate(normalized), q).value;
    best = std::min(best, value);
  });
  if (!std::isfinite(best)) {
    best = dvg_rate(rho, q).value;  // ball smaller than the lattice spacing
  }
  return best;
}

}  // namespace ldp
