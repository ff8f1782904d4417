#include "ldp/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ldp/bridge.hpp"
#include "ldp/error.hpp"
#include "ldp/ratefun.hpp"

namespace ldp::cli {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorCode::ConfigError, message); }

double number_at(const json& obj, const char* key, const std::string& where) {
  const auto& v = obj.at(key);
  if (!v.is_number()) config_error(where + "." + key + " must be a number");
  return v.get<double>();
}

std::uint64_t unsigned_at(const json& obj, const char* key, const std::string& where) {
  const auto& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  config_error(where + "." + key + " must be a nonnegative integer");
}

Eigen::VectorXd vector_from(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) config_error(where + " must be a nonempty array of numbers");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) config_error(where + " must contain numbers only");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

Eigen::MatrixXd matrix_from(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) config_error(where + " must be a nonempty array of rows");
  const std::size_t rows = v.size();
  const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
  if (cols == 0) config_error(where + " rows must be nonempty arrays");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!v[r].is_array() || v[r].size() != cols) config_error(where + " must be rectangular");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!v[r][c].is_number()) config_error(where + " must contain numbers only");
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r][c].get<double>();
    }
  }
  return out;
}

json to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

json to_json(const Extended& e) {
  if (e.is_infinite()) return "inf";
  return e.value();
}

std::string csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_number(const Extended& e) { return e.is_infinite() ? "inf" : csv_number(e.value()); }

void check_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

struct Column {
  const char* name;
  const char* type;
  const char* description;
};

class CsvTable {
 public:
  explicit CsvTable(std::vector<Column> columns) : columns_(std::move(columns)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != columns_.size()) throw Error(ErrorCode::InvalidArgument, "csv row has the wrong width");
    rows_.push_back(std::move(row));
  }

  std::string text() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < columns_.size(); ++i) os << (i ? "," : "") << columns_[i].name;
    os << '\n';
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
      os << '\n';
    }
    return os.str();
  }

  json schema() const {
    json cols = json::array();
    for (const auto& c : columns_) cols.push_back({{"name", c.name}, {"type", c.type}, {"description", c.description}});
    return cols;
  }

 private:
  std::vector<Column> columns_;
  std::vector<std::vector<std::string>> rows_;
};

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

struct Artifacts {
  json body = json::object();
  CsvTable table;
  std::string description;
};

json envelope(const std::string& subcommand, const ExperimentConfig& config) {
  return {{"subcommand", subcommand},
          {"config_hash", config.hash},
          {"seed", config.seed},
          {"T0", config.t0},
          {"mode", mode_name(config.mode)}};
}

ProbVector rho_from(const json& point, std::size_t n, const std::string& where) {
  const Eigen::VectorXd rho = vector_from(point.at("rho"), where + ".rho");
  if (static_cast<std::size_t>(rho.size()) != n) config_error(where + ".rho has the wrong length");
  return ProbVector::validate(rho);
}

std::vector<json> points_of(const ExperimentConfig& config, const char* block) {
  std::vector<json> points;
  if (config.raw.contains(block)) {
    const json& b = config.raw.at(block);
    check_keys(b, {"points"}, block);
    if (!b.contains("points") || !b.at("points").is_array()) config_error(std::string(block) + ".points must be an array");
    for (const auto& p : b.at("points")) points.push_back(p);
  }
  return points;
}

OracleOptions oracle_options(const ExperimentConfig& config, const RunOptions& options) {
  OracleOptions o;
  o.threads = options.threads;
  o.cache_dir = options.cache;
  o.max_attempts = config.max_attempts;
  o.conjugate = config.conjugate;
  return o;
}

Artifacts chain_info(const ExperimentConfig& config) {
  const auto& q = config.chain;
  const std::size_t n = q.n_states();
  const bool irreducible = is_irreducible(q);
  const TransitionKernel p = transition_at(q, config.t0);
  Artifacts a{json::object(),
              CsvTable({{"x", "int", "from state (0-based)"},
                        {"y", "int", "to state (0-based)"},
                        {"rate", "float", "generator entry Q_xy"},
                        {"transition", "float", "P_xy(T0)"},
                        {"pi_x", "float", "invariant probability of x (empty if reducible)"}}),
              "generator, transition kernel at T0 and invariant measure"};
  Eigen::VectorXd pi;
  if (irreducible) pi = invariant_measure(q).weights();
  a.body["n_states"] = n;
  a.body["irreducible"] = irreducible;
  a.body["max_exit_rate"] = q.max_exit_rate();
  a.body["generator"] = to_json(q.rates());
  a.body["transition_T0"] = to_json(p.probs());
  a.body["invariant_measure"] = irreducible ? to_json(pi) : json(nullptr);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      a.table.add({std::to_string(x), std::to_string(y), csv_number(q(x, y)), csv_number(p(x, y)),
                   irreducible ? csv_number(pi(static_cast<Eigen::Index>(x))) : ""});
    }
  }
  return a;
}

Artifacts rates(const ExperimentConfig& config) {
  const auto& q = config.chain;
  const std::size_t n = q.n_states();
  const TransitionKernel p = transition_at(q, config.t0);
  Artifacts a{json::object(),
              CsvTable({{"point", "int", "index into rates.points"},
                        {"functional", "string", "dvg | bfg | pair_empirical"},
                        {"value", "float|inf", "rate value; inf when infeasible"}}),
              "rate functionals evaluated at configured points"};
  std::vector<json> points = points_of(config, "rates");
  if (points.empty()) points.push_back({{"rho", to_json(invariant_measure(q).weights())}});
  DvgSettings dvg;
  dvg.seed = config.seed;
  json results = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string where = "rates.points[" + std::to_string(i) + "]";
    check_keys(points[i], {"rho", "j", "theta"}, where);
    json entry = json::object();
    if (points[i].contains("rho")) {
      const ProbVector rho = rho_from(points[i], n, where);
      const DvgResult r = dvg_rate(rho, q, dvg);
      entry["rho"] = to_json(rho.weights());
      entry["dvg"] = {{"value", r.value}, {"potential", to_json(r.potential)}, {"gradient_norm", r.gradient_norm}};
      a.table.add({std::to_string(i), "dvg", csv_number(r.value)});
      if (points[i].contains("j")) {
        const FluxMatrix j = FluxMatrix::validate(matrix_from(points[i].at("j"), where + ".j"));
        const Extended v = bfg_rate(rho, j, q);
        entry["j"] = to_json(j.entries());
        entry["bfg"] = {{"value", to_json(v)}, {"divergence", to_json(divergence(j))}};
        a.table.add({std::to_string(i), "bfg", csv_number(v)});
      }
    } else if (points[i].contains("j")) {
      config_error(where + ".j needs rho");
    }
    if (points[i].contains("theta")) {
      const PairMeasure theta = PairMeasure::validate(matrix_from(points[i].at("theta"), where + ".theta"));
      const Extended v = pair_empirical_rate(theta, p);
      entry["theta"] = to_json(theta.weights());
      entry["pair_empirical"] = {{"value", to_json(v)}};
      a.table.add({std::to_string(i), "pair_empirical", csv_number(v)});
    }
    results.push_back(std::move(entry));
  }
  a.body["results"] = std::move(results);
  return a;
}

Artifacts bridge_sample(const ExperimentConfig& config, const RunOptions& options) {
  OracleOptions o = oracle_options(config, options);
  if (!o.cache_dir) o.cache_dir = options.out / "samples";
  const ConjugateOracle oracle = build_oracle(config.chain, config.t0, config.mode, config.samples, config.seed, o);
  const TransitionKernel p = transition_at(config.chain, config.t0);
  Artifacts a{json::object(),
              CsvTable({{"x", "int", "bridge start state"},
                        {"y", "int", "bridge end state"},
                        {"endpoint_probability", "float", "P_xy(T0), the rejection acceptance rate"},
                        {"count", "int", "samples N"},
                        {"dim", "int", "observable dimension d"},
                        {"file", "string", "sample dump file name (int64 d, int64 N, N*d doubles)"},
                        {"mean_l1", "float", "empirical mean of |a|_1"}}),
              "conditional bridge laws q^{xy} dumped per endpoint pair"};
  const std::size_t n = config.chain.n_states();
  json pairs = json::array();
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) {
      if (!oracle.has_law(x, y)) continue;
      const auto& law = dynamic_cast<const EmpiricalLaw&>(oracle.law(x, y));
      const std::string file = sample_dump_name(x, y, config.mode, config.t0, config.seed, config.samples);
      const double mean_l1 = law.samples().cwiseAbs().colwise().sum().mean();
      pairs.push_back({{"x", x},
                       {"y", y},
                       {"file", file},
                       {"count", law.count()},
                       {"dim", law.dim()},
                       {"endpoint_probability", p(x, y)},
                       {"mean", to_json(law.mean())}});
      a.table.add({std::to_string(x), std::to_string(y), csv_number(p(x, y)), std::to_string(law.count()),
                   std::to_string(law.dim()), file, csv_number(mean_l1)});
    }
  }
  a.body["N"] = config.samples;
  a.body["pairs"] = std::move(pairs);
  return a;
}

Artifacts infconv_task(const ExperimentConfig& config, const RunOptions& options) {
  const auto& q = config.chain;
  const std::size_t n = q.n_states();
  const ConjugateOracle oracle =
      build_oracle(q, config.t0, config.mode, config.samples, config.seed, oracle_options(config, options));
  const TransitionKernel p = transition_at(q, config.t0);
  Artifacts a{json::object(),
              CsvTable({{"point", "int", "index into infconv.points"},
                        {"value", "float|inf", "inf-convolution value per unit time"},
                        {"reference", "float|inf", "closed-form rate (dvg_rate or bfg_rate) at the same point"},
                        {"abs_error", "float", "|value - reference| (empty if either is inf)"},
                        {"primal_value", "float|inf", "theorem rate at the returned (k, theta), per unit time"},
                        {"converged", "bool", "solver stopping rule met"},
                        {"balance_residual", "float", "|e1#theta - e2#theta|_inf"},
                        {"target_residual", "float", "|sum k - target|_inf"},
                        {"iterations", "int", "outer iterations"}}),
              "inf-convolution of the discrete-time rate against closed-form continuous-time rates"};
  std::vector<json> points = points_of(config, "infconv");
  if (points.empty()) config_error("infconv needs infconv.points");
  json results = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string where = "infconv.points[" + std::to_string(i) + "]";
    check_keys(points[i], {"rho", "j"}, where);
    const ProbVector rho = rho_from(points[i], n, where);
    InfConvResult r;
    Extended reference;
    json entry = {{"rho", to_json(rho.weights())}};
    if (config.mode == ObservableMode::Occupation) {
      if (points[i].contains("j")) config_error(where + ".j given but mode is occupation");
      r = infconv_dvg(rho, oracle, p, config.t0, config.infconv);
      reference = Extended(dvg_rate(rho, q).value);
    } else {
      if (!points[i].contains("j")) config_error(where + ".j is required in flux mode");
      const FluxMatrix j = FluxMatrix::validate(matrix_from(points[i].at("j"), where + ".j"));
      r = infconv_bfg(rho, j, oracle, p, config.t0, config.infconv);
      reference = bfg_rate(rho, j, q);
      entry["j"] = to_json(j.entries());
    }
    const auto& c = r.certificate;
    json sweep = json::array();
    for (const auto& [box, value] : c.box_sweep) sweep.push_back({{"box", box}, {"value_per_window", value}});
    entry["value"] = to_json(r.value);
    entry["reference"] = to_json(reference);
    entry["value_per_window"] = r.value_per_window;
    entry["converged"] = r.converged;
    entry["infeasible"] = r.value.is_infinite();
    entry["theta"] = to_json(r.theta);
    entry["lambda"] = to_json(r.lambda);
    entry["k"] = to_json(Eigen::MatrixXd(r.k.vectors()));
    entry["certificate"] = {{"balance_residual", c.balance_residual},
                            {"target_residual", c.target_residual},
                            {"objective_decrease", c.objective_decrease},
                            {"primal_value", c.primal_finite ? json(c.primal_value) : json("inf")},
                            {"iterations", c.iterations},
                            {"boundary_contact", c.boundary_contact},
                            {"box_sweep", std::move(sweep)}};
    const bool both_finite = r.value.is_finite() && reference.is_finite();
    a.table.add({std::to_string(i), csv_number(r.value), csv_number(reference),
                 both_finite ? csv_number(std::abs(r.value.value() - reference.value())) : "",
                 c.primal_finite ? csv_number(c.primal_value) : "inf", r.converged ? "true" : "false",
                 csv_number(c.balance_residual), csv_number(c.target_residual), std::to_string(c.iterations)});
    results.push_back(std::move(entry));
  }
  a.body["N"] = config.samples;
  a.body["results"] = std::move(results);
  return a;
}

Artifacts contract_task(const ExperimentConfig& config) {
  const auto& q = config.chain;
  const std::size_t n = q.n_states();
  Artifacts a{json::object(),
              CsvTable({{"point", "int", "index into contract.points"},
                        {"contract_value", "float", "inf over divergence-free j of the flux rate"},
                        {"dvg_value", "float", "occupation rate from its own variational formula"},
                        {"abs_difference", "float", "|contract_value - dvg_value|"},
                        {"duality_gap", "float", "primal minus dual value"},
                        {"divergence_residual", "float", "|div j|_inf at the recovered flux"},
                        {"iterations", "int", "Newton steps"}}),
              "contraction from the joint occupation/flux rate to the occupation rate"};
  std::vector<json> points = points_of(config, "contract");
  if (points.empty()) points.push_back({{"rho", to_json(invariant_measure(q).weights())}});
  DvgSettings dvg;
  dvg.seed = config.seed;
  json results = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string where = "contract.points[" + std::to_string(i) + "]";
    check_keys(points[i], {"rho"}, where);
    const ProbVector rho = rho_from(points[i], n, where);
    const ContractionResult c = contract_dvg_from_bfg(rho, q, config.gap_tolerance);
    const double direct = dvg_rate(rho, q, dvg).value;
    results.push_back({{"rho", to_json(rho.weights())},
                       {"contract_value", c.value},
                       {"dual_value", c.dual_value},
                       {"dvg_value", direct},
                       {"duality_gap", c.duality_gap},
                       {"divergence_residual", c.divergence_residual},
                       {"flux", to_json(c.flux)},
                       {"potential", to_json(c.potential)}});
    a.table.add({std::to_string(i), csv_number(c.value), csv_number(direct), csv_number(std::abs(c.value - direct)),
                 csv_number(c.duality_gap), csv_number(c.divergence_residual), std::to_string(c.iterations)});
  }
  a.body["results"] = std::move(results);
  return a;
}

Artifacts mc_verify(const ExperimentConfig& config, const RunOptions& options) {
  const auto& q = config.chain;
  if (!config.raw.contains("mc")) config_error("mc-verify needs an mc block");
  const json& mc = config.raw.at("mc");
  check_keys(mc, {"rho", "epsilon", "n_grid", "paths_per_n", "min_hits"}, "mc");
  const ProbVector rho = rho_from(mc, q.n_states(), "mc");
  const double epsilon = number_at(mc, "epsilon", "mc");
  std::vector<std::size_t> grid;
  if (!mc.contains("n_grid") || !mc.at("n_grid").is_array()) config_error("mc.n_grid must be an array");
  for (const auto& v : mc.at("n_grid")) {
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) config_error("mc.n_grid entries must be positive integers");
    grid.push_back(v.get<std::size_t>());
  }
  DecayOptions decay;
  decay.seed = config.seed;
  decay.threads = options.threads;
  if (mc.contains("paths_per_n")) decay.paths_per_n = unsigned_at(mc, "paths_per_n", "mc");
  if (mc.contains("min_hits")) decay.min_hits = unsigned_at(mc, "min_hits", "mc");

  const DecayFit fit = mc_decay_rate(q, config.t0, DecayTarget::occupation(rho.weights(), epsilon), grid, decay);
  const double reference = inf_dvg_over_ball(rho, epsilon, q);
  Artifacts a{json::object(),
              CsvTable({{"n", "int", "number of windows; horizon n*T0"},
                        {"hits", "int", "paths whose occupation measure fell in the ball"},
                        {"probability", "float", "hits / paths_per_n"},
                        {"neg_log_rate", "float|inf", "-(1/n) log probability"}}),
              "Monte Carlo decay of the probability of an occupation ball"};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    a.table.add({std::to_string(grid[i]), std::to_string(fit.hits[i]), csv_number(fit.probability[i]),
                 csv_number(fit.neg_log_rate[i])});
  }
  a.body["ball"] = {{"norm", "l1"}, {"center", to_json(rho.weights())}, {"epsilon", epsilon}};
  a.body["paths_per_n"] = decay.paths_per_n;
  a.body["n_grid"] = grid;
  a.body["hits"] = fit.hits;
  a.body["slope_per_window"] = fit.slope;
  a.body["raw_slope"] = fit.raw_slope;
  a.body["intercept"] = fit.intercept;
  a.body["standard_error"] = fit.standard_error;
  a.body["rate_per_time"] = fit.rate_per_time();
  a.body["reference_inf_over_ball"] = reference;
  a.body["relative_error"] = reference > 0.0 ? json(std::abs(fit.rate_per_time() - reference) / reference) : json(nullptr);
  return a;
}

void write_error(const std::filesystem::path& out, const std::string& subcommand, const std::string& code,
                 const std::string& message, const std::string& hash) {
  json record = {{"subcommand", subcommand}, {"error", code}, {"message", message}};
  if (!hash.empty()) record["config_hash"] = hash;
  std::cerr << "error: " << code << ": " << message << '\n';
  try {
    std::filesystem::create_directories(out);
    write_file(out / "error.json", record.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "could not write error.json: " << e.what() << '\n';
  }
}

}  // namespace

std::string config_hash(const json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : doc.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

ExperimentConfig parse_config(const json& doc, const std::optional<std::string>& seed_override) {
  check_keys(doc, {"chain", "T0", "mode", "seed", "N", "solver", "bridge", "rates", "infconv", "contract", "mc"},
             "config");
  json raw = doc;
  if (seed_override) {
    std::uint64_t seed = 0;
    std::size_t used = 0;
    try {
      seed = std::stoull(*seed_override, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != seed_override->size()) config_error("LDP_SEED must be a nonnegative integer");
    raw["seed"] = seed;
  }
  if (!raw.contains("seed")) config_error("seed is mandatory");
  if (!raw.contains("chain")) config_error("chain is mandatory");
  if (!raw.contains("T0")) config_error("T0 is mandatory");

  const json& chain = raw.at("chain");
  check_keys(chain, {"rates", "n"}, "chain");
  if (!chain.contains("rates")) config_error("chain.rates is mandatory");
  const Eigen::MatrixXd rates = matrix_from(chain.at("rates"), "chain.rates");
  if (chain.contains("n") && unsigned_at(chain, "n", "chain") != static_cast<std::uint64_t>(rates.rows())) {
    config_error("chain.n does not match chain.rates");
  }

  ExperimentConfig config(raw, validate_generator(rates));
  config.t0 = number_at(raw, "T0", "config");
  if (!(config.t0 > 0.0)) config_error("T0 must be positive");
  if (raw.contains("mode")) {
    if (!raw.at("mode").is_string()) config_error("mode must be a string");
    config.mode = parse_mode(raw.at("mode").get<std::string>());
  }
  config.seed = unsigned_at(raw, "seed", "config");
  if (raw.contains("N")) {
    config.samples = unsigned_at(raw, "N", "config");
    if (config.samples == 0) config_error("N must be positive");
  }
  if (raw.contains("bridge")) {
    const json& b = raw.at("bridge");
    check_keys(b, {"max_attempts"}, "bridge");
    if (b.contains("max_attempts")) config.max_attempts = unsigned_at(b, "max_attempts", "bridge");
  }
  if (raw.contains("solver")) {
    const json& s = raw.at("solver");
    check_keys(s,
               {"box", "inner_tolerance", "max_iterations", "stall_window", "stall_decrease", "starts",
                "theta_floor", "theta_zero", "growth_slope", "conjugate_tolerance", "conjugate_max_iterations",
                "gap_tolerance"},
               "solver");
    auto& ic = config.infconv;
    auto& cc = config.conjugate;
    if (s.contains("box")) ic.box = cc.box = number_at(s, "box", "solver");
    if (s.contains("inner_tolerance")) ic.inner_tolerance = number_at(s, "inner_tolerance", "solver");
    if (s.contains("max_iterations")) ic.max_iterations = static_cast<int>(unsigned_at(s, "max_iterations", "solver"));
    if (s.contains("stall_window")) ic.stall_window = static_cast<int>(unsigned_at(s, "stall_window", "solver"));
    if (s.contains("stall_decrease")) ic.stall_decrease = number_at(s, "stall_decrease", "solver");
    if (s.contains("starts")) ic.starts = static_cast<int>(unsigned_at(s, "starts", "solver"));
    if (s.contains("theta_floor")) ic.theta_floor = number_at(s, "theta_floor", "solver");
    if (s.contains("theta_zero")) ic.theta_zero = number_at(s, "theta_zero", "solver");
    if (s.contains("growth_slope")) ic.growth_slope = cc.growth_slope = number_at(s, "growth_slope", "solver");
    if (s.contains("conjugate_tolerance")) cc.tolerance = number_at(s, "conjugate_tolerance", "solver");
    if (s.contains("conjugate_max_iterations")) {
      cc.max_iterations = static_cast<int>(unsigned_at(s, "conjugate_max_iterations", "solver"));
    }
    if (s.contains("gap_tolerance")) config.gap_tolerance = number_at(s, "gap_tolerance", "solver");
    if (!(ic.box > 0.0) || ic.stall_window < 1 || ic.starts < 1) config_error("solver settings out of range");
  }
  config.hash = config_hash(raw);
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& seed_override) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc, seed_override);
}

int run(const RunOptions& options) {
  std::string hash;
  try {
    if (std::find(kSubcommands.begin(), kSubcommands.end(), options.subcommand) == kSubcommands.end()) {
      config_error("unknown subcommand '" + options.subcommand + "'");
    }
    if (options.threads == 0) config_error("--threads must be at least 1");
    const ExperimentConfig config = load_config(options.config, options.seed_override);
    hash = config.hash;

    std::optional<Artifacts> artifacts;
    const std::string& sub = options.subcommand;
    std::filesystem::create_directories(options.out);
    if (sub == "chain-info") artifacts = chain_info(config);
    if (sub == "rates") artifacts = rates(config);
    if (sub == "bridge-sample") artifacts = bridge_sample(config, options);
    if (sub == "infconv") artifacts = infconv_task(config, options);
    if (sub == "contract") artifacts = contract_task(config);
    if (sub == "mc-verify") artifacts = mc_verify(config, options);

    json doc = envelope(sub, config);
    doc.update(artifacts->body);
    json schema = {{"subcommand", sub},
                   {"description", artifacts->description},
                   {"csv", sub + ".csv"},
                   {"columns", artifacts->table.schema()},
                   {"config_hash", config.hash},
                   {"seed", config.seed}};
    write_file(options.out / (sub + ".json"), doc.dump(2) + "\n");
    write_file(options.out / (sub + ".csv"), "# config_hash=" + config.hash + " seed=" + std::to_string(config.seed) +
                                                 "\n" + artifacts->table.text());
    write_file(options.out / (sub + ".schema.json"), schema.dump(2) + "\n");
    return 0;
  } catch (const Error& e) {
    write_error(options.out, options.subcommand, std::string(error_name(e.code())), e.what(), hash);
  } catch (const json::exception& e) {
    write_error(options.out, options.subcommand, "ConfigError", e.what(), hash);
  } catch (const std::filesystem::filesystem_error& e) {
    write_error(options.out, options.subcommand, "IoError", e.what(), hash);
  } catch (const std::exception& e) {
    write_error(options.out, options.subcommand, "InternalError", e.what(), hash);
  }
  return 2;
}

int main(int argc, char** argv) {
  CLI::App app{"Large-deviation rate functionals for finite Markov chains"};
  RunOptions options;
  std::string cache;
  app.add_option("subcommand", options.subcommand, "chain-info | rates | bridge-sample | infconv | contract | mc-verify")
      ->required()
      ->check(CLI::IsMember(kSubcommands));
  app.add_option("--config", options.config, "experiment config (JSON)")->required();
  app.add_option("--out", options.out, "output directory")->required();
  app.add_option("--threads", options.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--cache", cache, "bridge sample cache directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (!cache.empty()) options.cache = cache;
  if (const char* seed = std::getenv("LDP_SEED")) options.seed_override = std::string(seed);
  return run(options);
}

}  // namespace ldp::cli
