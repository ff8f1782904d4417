#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "ldp/chain.hpp"
#include "ldp/conjugate.hpp"
#include "ldp/extended.hpp"
#include "ldp/ratefun.hpp"
#include "ldp/simulate.hpp"

namespace ldp {

struct OracleOptions {
  unsigned threads = 1;
  std::optional<std::filesystem::path> cache_dir;  // read dumps if present, write otherwise
  std::uint64_t max_attempts = 1'000'000;
  ConjugateSettings conjugate;
};

/// Conditional laws q^{xy} of the window observable for every ordered pair,
/// each an EmpiricalLaw of N bridge samples.
ConjugateOracle build_oracle(const GeneratorMatrix& q, double t0, ObservableMode mode, std::size_t count,
                             std::uint64_t seed, const OracleOptions& options = {});

struct InfConvSettings {
  double box = 40.0;
  double inner_tolerance = 1e-9;
  int max_iterations = 20000;
  int stall_window = 50;
  double stall_decrease = 1e-8;
  double theta_floor = 1e-12;
  double theta_zero = 1e-10;
  int starts = 2;
  double growth_slope = 1e-3;
};

struct InfConvCertificate {
  double balance_residual = 0.0;   // |e1#theta - e2#theta|_inf
  double target_residual = 0.0;    // |sum k - target|_inf
  double objective_decrease = 0.0; // over the last stall window
  double primal_value = 0.0;       // theorem_rate(k, theta) / T0, independent conjugate solves
  bool primal_finite = true;
  int iterations = 0;
  bool boundary_contact = false;
  std::vector<std::pair<double, double>> box_sweep;  // (box, value per window) when the dual hits the box
};

struct InfConvResult {
  Extended value;                 // per unit time: inf I(k, theta) / T0
  double value_per_window = 0.0;  // best finite objective before scaling (last box)
  Eigen::MatrixXd theta;
  FluxField k{1, 1};
  Eigen::VectorXd lambda;
  bool converged = false;
  InfConvCertificate certificate;
};

/// inf over balanced theta and k with sum_xy k^{xy} = target of I(k, theta),
/// scaled to unit time. The k-minimization is carried out through its
/// Fenchel dual sup_lambda [lambda.target - sum theta_xy phi^{xy}(lambda)];
/// theta is optimized by entropic mirror descent over balanced pair measures.
InfConvResult infconv(const Eigen::VectorXd& target, const ConjugateOracle& oracle, const TransitionKernel& p,
                      double t0, const InfConvSettings& settings = {},
                      const Eigen::MatrixXd* theta_start = nullptr);

/// Occupation-mode target rho.
InfConvResult infconv_dvg(const ProbVector& rho, const ConjugateOracle& oracle, const TransitionKernel& p,
                          double t0, const InfConvSettings& settings = {});

/// Flux-mode target (rho, j), j flattened row-major after rho.
InfConvResult infconv_bfg(const ProbVector& rho, const FluxMatrix& j, const ConjugateOracle& oracle,
                          const TransitionKernel& p, double t0, const InfConvSettings& settings = {});

/// Euclidean projection onto {theta >= 0, sum theta = 1, e1#theta = e2#theta}.
Eigen::MatrixXd project_balanced_simplex(const Eigen::MatrixXd& theta, double tolerance = 1e-15,
                                         int max_iterations = 100000);

/// Euclidean projection of a vector onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

struct ContractionResult {
  double value = 0.0;        // primal: bfg_rate at the recovered flux
  double dual_value = 0.0;
  double duality_gap = 0.0;
  double divergence_residual = 0.0;
  Eigen::MatrixXd flux;      // j_xy = rho_x Q_xy e^{v_y - v_x}
  Eigen::VectorXd potential;
  int iterations = 0;
};

/// inf over divergence-free j of bfg_rate(rho, j, Q), solved through the dual
/// over potentials by Newton's method.
ContractionResult contract_dvg_from_bfg(const ProbVector& rho, const GeneratorMatrix& q,
                                        double gap_tolerance = 1e-6);

/// Observable and ball for a decay-rate experiment.
struct DecayTarget {
  enum class Kind { Occupation, Pair };
  Kind kind = Kind::Occupation;
  Eigen::VectorXd rho;          // Occupation
  ObservableMode mode = ObservableMode::Occupation;  // Pair: window observable
  Eigen::VectorXd pair_vector;  // Pair: (vec K, vec Theta) flattened
  double epsilon = 0.0;         // l1 radius

  static DecayTarget occupation(Eigen::VectorXd rho, double epsilon);
  static DecayTarget pair(const FluxField& k, const Eigen::MatrixXd& theta, ObservableMode mode, double epsilon);
};

/// (vec K, vec Theta) in the layout used by DecayTarget::pair.
Eigen::VectorXd pair_observable(const EmpiricalPair& pair);

struct DecayOptions {
  std::size_t paths_per_n = 100000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t min_hits = 30;
};

struct DecayFit {
  std::vector<std::size_t> n_grid;
  std::vector<std::size_t> hits;
  std::vector<double> probability;
  std::vector<double> neg_log_rate;  // -(1/n) log P
  double slope = 0.0;                // per window; >= 0
  double raw_slope = 0.0;
  double intercept = 0.0;
  double standard_error = 0.0;
  double t0 = 1.0;

  double rate_per_time() const { return slope / t0; }
};

/// Whole-horizon simulations from the stationary law; weighted least-squares
/// slope of -log P(observable in ball) against n.
DecayFit mc_decay_rate(const GeneratorMatrix& q, double t0, const DecayTarget& target,
                       const std::vector<std::size_t>& n_grid, const DecayOptions& options);

/// inf of dvg_rate over the simplex points within l1 distance epsilon of rho,
/// on a lattice of the given resolution (0 picks one by dimension).
double inf_dvg_over_ball(const ProbVector& rho, double epsilon, const GeneratorMatrix& q, int resolution = 0);

}  // namespace ldp
