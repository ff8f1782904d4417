#include "ldp/simulate.hpp"

#include <algorithm>
#include <sstream>

#include "ldp/error.hpp"

namespace ldp {

std::size_t PathRecord::state_at(double t) const {
  std::size_t state = initial;
  for (const Jump& j : jumps) {
    if (j.time > t) break;
    state = j.to;
  }
  return state;
}

std::size_t observable_dim(ObservableMode mode, std::size_t n_states) {
  return mode == ObservableMode::Occupation ? n_states : n_states + n_states * n_states;
}

const char* mode_name(ObservableMode mode) {
  return mode == ObservableMode::Occupation ? "occupation" : "flux";
}

ObservableMode parse_mode(const std::string& name) {
  if (name == "occupation") return ObservableMode::Occupation;
  if (name == "flux" || name == "occupation+flux") return ObservableMode::OccupationFlux;
  throw Error(ErrorCode::ConfigError, "unknown mode '" + name + "' (expected occupation | flux)");
}

ChainSimulator::ChainSimulator(const GeneratorMatrix& q) {
  const std::size_t n = q.n_states();
  exit_rates_.resize(n);
  cumulative_.resize(n);
  for (std::size_t x = 0; x < n; ++x) {
    exit_rates_[x] = -q(x, x);
    double acc = 0.0;
    cumulative_[x].resize(n);
    for (std::size_t y = 0; y < n; ++y) {
      if (y != x) acc += q(x, y);
      cumulative_[x][y] = acc;
    }
  }
}

void ChainSimulator::extend(PathRecord& path, std::size_t state, double start_time, double horizon,
                            Stream& rng) const {
  double t = start_time;
  for (;;) {
    const double rate = exit_rates_[state];
    if (rate <= 0.0) {
      std::ostringstream os;
      os << "gillespie reached absorbing state " << state;
      throw Error(ErrorCode::AbsorbingState, os.str());
    }
    t += rng.exponential(rate);
    if (t > horizon) break;
    const auto& cum = cumulative_[state];
    const double u = rng.uniform() * cum.back();
    // upper_bound lands on a slot of positive width, never the diagonal
    std::size_t next = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    while (next >= cum.size() || next == state || (next > 0 && cum[next] == cum[next - 1])) {
      next = next >= cum.size() ? cum.size() - 1 : next - 1;  // round-off at the top end only
    }
    path.jumps.push_back({t, next});
    state = next;
  }
  path.horizon = horizon;
}

PathRecord ChainSimulator::run(std::size_t x0, double horizon, Stream& rng) const {
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "gillespie requires T > 0");
  if (x0 >= n_states()) throw Error(ErrorCode::InvalidArgument, "gillespie: initial state out of range");
  PathRecord path;
  path.initial = x0;
  extend(path, x0, 0.0, horizon, rng);
  return path;
}

PathRecord gillespie(const GeneratorMatrix& q, std::size_t x0, double horizon, Stream& rng) {
  return ChainSimulator(q).run(x0, horizon, rng);
}

Eigen::VectorXd occupation(const PathRecord& path, double horizon, std::size_t n_states) {
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "occupation requires T > 0");
  Eigen::VectorXd time = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_states));
  std::size_t state = path.initial;
  double last = 0.0;
  for (const Jump& j : path.jumps) {
    if (j.time > horizon) break;
    time(static_cast<Eigen::Index>(state)) += j.time - last;
    last = j.time;
    state = j.to;
  }
  time(static_cast<Eigen::Index>(state)) += horizon - last;
  return time / horizon;
}

FluxMatrix cumulative_flux(const PathRecord& path, std::size_t n_states) {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_states),
                                                 static_cast<Eigen::Index>(n_states));
  std::size_t state = path.initial;
  for (const Jump& j : path.jumps) {
    counts(static_cast<Eigen::Index>(state), static_cast<Eigen::Index>(j.to)) += 1.0;
    state = j.to;
  }
  return FluxMatrix::validate(counts);
}

namespace {

// Adds the observable of [begin, end] to `out` (unnormalized: time and
// counts) and advances `cursor`/`state` past jumps up to `end`.
void scan_window(const PathRecord& path, double begin, double end, ObservableMode mode,
                 std::size_t n, std::size_t& cursor, std::size_t& state, Eigen::Ref<Eigen::VectorXd> out) {
  double last = begin;
  while (cursor < path.jumps.size() && path.jumps[cursor].time <= end) {
    const Jump& j = path.jumps[cursor];
    out(static_cast<Eigen::Index>(state)) += j.time - last;
    if (mode == ObservableMode::OccupationFlux) {
      out(static_cast<Eigen::Index>(n + state * n + j.to)) += 1.0;
    }
    last = j.time;
    state = j.to;
    ++cursor;
  }
  out(static_cast<Eigen::Index>(state)) += end - last;
}

}  // namespace

Eigen::VectorXd window_observable(const PathRecord& path, double t0, ObservableMode mode,
                                  std::size_t n_states) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(observable_dim(mode, n_states)));
  std::size_t cursor = 0;
  std::size_t state = path.initial;
  scan_window(path, 0.0, t0, mode, n_states, cursor, state, out);
  return out / t0;
}

DiscreteEmbedding discrete_embedding(const PathRecord& path, double t0, std::size_t windows,
                                     ObservableMode mode, std::size_t n_states) {
  if (!(t0 > 0.0) || windows == 0) throw Error(ErrorCode::InvalidArgument, "discrete_embedding needs T0 > 0, n >= 1");
  const double span = t0 * static_cast<double>(windows);
  if (path.horizon < span * (1.0 - 1e-12)) {
    throw Error(ErrorCode::InvalidArgument, "discrete_embedding: path shorter than n T0");
  }
  DiscreteEmbedding emb;
  emb.t0 = t0;
  emb.mode = mode;
  emb.blocks = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(observable_dim(mode, n_states)),
                                     static_cast<Eigen::Index>(windows));
  emb.states.reserve(windows + 1);
  std::size_t cursor = 0;
  std::size_t state = path.initial;
  emb.states.push_back(state);
  for (std::size_t m = 0; m < windows; ++m) {
    const double begin = t0 * static_cast<double>(m);
    const double end = t0 * static_cast<double>(m + 1);
    scan_window(path, begin, end, mode, n_states, cursor, state, emb.blocks.col(static_cast<Eigen::Index>(m)));
    emb.states.push_back(state);
  }
  emb.blocks /= t0;
  return emb;
}

EmpiricalPair accumulate(const DiscreteEmbedding& embedding, std::size_t n_states) {
  const std::size_t windows = embedding.windows();
  if (windows == 0 || embedding.states.size() != windows + 1) {
    throw Error(ErrorCode::InvalidArgument, "accumulate: malformed embedding");
  }
  const auto n = static_cast<Eigen::Index>(n_states);
  EmpiricalPair out{FluxField(n_states, static_cast<std::size_t>(embedding.blocks.rows())),
                    Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXi::Zero(n, n), windows};
  for (std::size_t m = 0; m < windows; ++m) {
    const std::size_t x = embedding.states[m];
    const std::size_t y = embedding.states[m + 1];
    out.counts(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) += 1;
    out.k.vec(x, y) += embedding.blocks.col(static_cast<Eigen::Index>(m));
  }
  const auto total = static_cast<double>(windows);
  out.k.vectors() /= total;
  out.theta = out.counts.cast<double>() / total;
  return out;
}

}  // namespace ldp
