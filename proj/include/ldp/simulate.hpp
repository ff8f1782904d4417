#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ldp/chain.hpp"
#include "ldp/ratefun.hpp"
#include "ldp/rng.hpp"

namespace ldp {

struct Jump {
  double time = 0.0;
  std::size_t to = 0;
};

/// Piecewise-constant path on [0, horizon]: initial state and strictly
/// increasing jump times with destinations differing from their predecessor.
struct PathRecord {
  std::size_t initial = 0;
  std::vector<Jump> jumps;
  double horizon = 0.0;

  std::size_t final_state() const { return jumps.empty() ? initial : jumps.back().to; }
  /// X(t), right-continuous.
  std::size_t state_at(double t) const;
};

/// Observed variable attached to each window: occupation fractions (d = n),
/// or occupation followed by flux counts / T0 for all n^2 ordered pairs.
enum class ObservableMode { Occupation, OccupationFlux };

std::size_t observable_dim(ObservableMode mode, std::size_t n_states);
const char* mode_name(ObservableMode mode);
ObservableMode parse_mode(const std::string& name);

/// Precomputed holding rates and jump distributions for repeated Gillespie runs.
class ChainSimulator {
 public:
  explicit ChainSimulator(const GeneratorMatrix& q);

  std::size_t n_states() const { return exit_rates_.size(); }
  PathRecord run(std::size_t x0, double horizon, Stream& rng) const;
  /// Appends jumps over (start_time, horizon] starting from `state`.
  void extend(PathRecord& path, std::size_t state, double start_time, double horizon, Stream& rng) const;

 private:
  std::vector<double> exit_rates_;
  std::vector<std::vector<double>> cumulative_;  // per state, over destinations
};

PathRecord gillespie(const GeneratorMatrix& q, std::size_t x0, double horizon, Stream& rng);

/// Fraction of [0, T] spent in each state.
Eigen::VectorXd occupation(const PathRecord& path, double horizon, std::size_t n_states);

/// W_xy: number of jumps x -> y.
FluxMatrix cumulative_flux(const PathRecord& path, std::size_t n_states);

struct DiscreteEmbedding {
  double t0 = 0.0;
  ObservableMode mode = ObservableMode::Occupation;
  std::vector<std::size_t> states;  // X_0 .. X_n
  Eigen::MatrixXd blocks;           // d x n, column m-1 holds A_m

  std::size_t windows() const { return static_cast<std::size_t>(blocks.cols()); }
};

/// Cuts a path on [0, n T0] into n windows: X_m = X(m T0) and
/// A_m = (1/T0) int over window m of the observable.
DiscreteEmbedding discrete_embedding(const PathRecord& path, double t0, std::size_t windows,
                                     ObservableMode mode, std::size_t n_states);

/// Observable of a single window path on [0, T0].
Eigen::VectorXd window_observable(const PathRecord& path, double t0, ObservableMode mode,
                                  std::size_t n_states);

struct EmpiricalPair {
  FluxField k;                 // K^n
  Eigen::MatrixXd theta;       // Theta^n
  Eigen::MatrixXi counts;      // n Theta^n
  std::size_t windows = 0;

  PairMeasure pair_measure() const { return PairMeasure::validate(theta); }
};

EmpiricalPair accumulate(const DiscreteEmbedding& embedding, std::size_t n_states);

}  // namespace ldp
