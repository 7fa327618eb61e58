#include "nestmc/runner.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <string>
#include <utility>

#include "nestmc/switching.hpp"

namespace nestmc {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& what) {
  throw std::invalid_argument(what);
}

void reject_unknown_keys(const json& j,
                         std::initializer_list<const char*> allowed,
                         const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      config_error(std::string(where) + ": unknown key \"" + it.key() + "\"");
    }
  }
}

double number_field(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) config_error(std::string(key) + " must be a number");
  return v.get<double>();
}

int int_field(const json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) {
    config_error(std::string(key) + " must be an integer");
  }
  return v.get<int>();
}

bool bool_field(const json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_boolean()) config_error(std::string(key) + " must be a boolean");
  return v.get<bool>();
}

std::string string_field(const json& j, const char* key,
                         const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) config_error(std::string(key) + " must be a string");
  return v.get<std::string>();
}

EstimatorKind estimator_kind(const std::string& name) {
  if (name == "value") return EstimatorKind::value;
  if (name == "grad1") return EstimatorKind::gradient_scheme1;
  if (name == "grad2") return EstimatorKind::gradient_scheme2;
  config_error("unknown estimator \"" + name +
               "\" (expected value, grad1, or grad2)");
}

// Replication sub-streams: cell coordinates in the high bits, the
// replication index in the low 20, so a record depends only on its own
// coordinates and never on which other cells the grid contains.
std::uint64_t cell_stream(int depth_p, int ipart, int rep) {
  return (static_cast<std::uint64_t>(depth_p) << 40) |
         (static_cast<std::uint64_t>(ipart) << 20) |
         static_cast<std::uint64_t>(rep);
}

std::vector<int> effective_switches(const RunConfig& config) {
  if (!config.switches.empty()) return config.switches;
  return {static_cast<int>(config.base_counts.size())};
}

NestingPlan scaled_plan(const RunConfig& config, int depth_p, int ipart) {
  std::vector<std::int64_t> counts(
      config.base_counts.begin(), config.base_counts.begin() + depth_p);
  for (std::int64_t& n : counts) n <<= ipart;
  return make_plan(counts);
}

// Peak per-worker scratch memory. The antithetic scheme carries every sign
// variant of one shared tree, so its level-k buffers have 2^k columns; the
// other estimators keep a handful of vectors per level.
std::int64_t workspace_bytes(EstimatorKind kind, int dim, int depth) {
  if (kind != EstimatorKind::gradient_scheme2) {
    return static_cast<std::int64_t>(depth + 1) * dim * 8 * 8;
  }
  if (depth >= 40) return std::numeric_limits<std::int64_t>::max() / 2;
  std::int64_t total = 0;
  for (int k = 1; k <= depth; ++k) {
    total += static_cast<std::int64_t>(3 * dim + 2) * (std::int64_t{1} << k) * 8;
  }
  return total;
}

std::vector<double> json_double_array(const json& v, const char* what) {
  if (!v.is_array()) config_error(std::string(what) + " must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const json& e : v) {
    if (!e.is_number()) {
      config_error(std::string(what) + " entries must be numbers");
    }
    out.push_back(e.get<double>());
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_counts(const std::vector<std::int64_t>& counts) {
  std::string out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(counts[i]);
  }
  return out;
}

std::string join_vector(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += format_double(v[i]);
  }
  return out;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

void estimate_fields_to_json(const EstimateResult& est, json& j) {
  j["value"] = est.value;
  j["std_error"] = est.std_error;
  j["n_outer"] = est.n_outer;
  j["evaluations"] = est.evaluations;
  j["terminal_driver_evals"] = est.terminal_driver_evals;
  j["wall_time"] = est.wall_time;
  if (!est.warnings.empty()) j["warnings"] = est.warnings;
  if (est.gradient.size() > 0) {
    j["gradient"] = vector_to_json(est.gradient);
    j["gradient_std_error"] = vector_to_json(est.gradient_std_error);
  }
  if (est.diagnostics) {
    json d;
    d["max_abs_contribution"] = est.diagnostics->max_abs_contribution;
    d["tau_decile_second_moment"] = est.diagnostics->tau_decile_second_moment;
    d["tau_decile_count"] = est.diagnostics->tau_decile_count;
    j["diagnostics"] = d;
  }
}

}  // namespace

namespace {

Problem catalog_problem(const json& pc, const std::string& name) {
  if (name == "toy-cosine") {
    reject_unknown_keys(
        pc, {"name", "dim", "a", "r", "mu0", "sigma0", "T", "terminal_only"},
        "problem");
    return make_toy_cosine(int_field(pc, "dim", 1), number_field(pc, "a", 0.1),
                           number_field(pc, "r", 0.1),
                           number_field(pc, "mu0", 0.2),
                           number_field(pc, "sigma0", 1.0),
                           number_field(pc, "T", 1.0));
  }
  if (name == "cva") {
    reject_unknown_keys(pc, {"name", "dim", "beta", "sigma0", "T",
                             "terminal_only"},
                        "problem");
    return make_cva(int_field(pc, "dim", 6), number_field(pc, "beta", 0.03),
                    number_field(pc, "sigma0", 0.2), number_field(pc, "T", 1.0));
  }
  if (name == "bs-default") {
    reject_unknown_keys(pc,
                        {"name", "dim", "spot", "mu0", "sigma0", "delta", "v_h",
                         "v_l", "gamma_h", "gamma_l", "rate_R", "T",
                         "terminal_only"},
                        "problem");
    BsDefaultParams bp;
    bp.spot = number_field(pc, "spot", bp.spot);
    bp.mu0 = number_field(pc, "mu0", bp.mu0);
    bp.sigma0 = number_field(pc, "sigma0", bp.sigma0);
    bp.delta = number_field(pc, "delta", bp.delta);
    bp.v_h = number_field(pc, "v_h", bp.v_h);
    bp.v_l = number_field(pc, "v_l", bp.v_l);
    bp.gamma_h = number_field(pc, "gamma_h", bp.gamma_h);
    bp.gamma_l = number_field(pc, "gamma_l", bp.gamma_l);
    bp.rate_R = number_field(pc, "rate_R", bp.rate_R);
    bp.T = number_field(pc, "T", bp.T);
    return make_bs_default(int_field(pc, "dim", 100), bp);
  }
  if (name == "burgers") {
    reject_unknown_keys(pc, {"name", "dim", "T", "sigma_scale", "terminal_only"},
                        "problem");
    return make_burgers(int_field(pc, "dim", 10), number_field(pc, "T", 1.0),
                        number_field(pc, "sigma_scale", 0.0));
  }
  if (name == "hjb") {
    reject_unknown_keys(pc, {"name", "dim", "theta", "T", "terminal_only"},
                        "problem");
    return make_hjb(int_field(pc, "dim", 100), number_field(pc, "theta", 1.0),
                    number_field(pc, "T", 1.0));
  }
  config_error("unknown problem \"" + name + "\" (see list-problems)");
}

}  // namespace

Problem problem_from_config(const json& pc) {
  if (!pc.is_object()) config_error("problem section must be a JSON object");
  const std::string name = string_field(pc, "name", "");
  if (name.empty()) config_error("problem section needs a \"name\"");
  Problem p = catalog_problem(pc, name);
  if (bool_field(pc, "terminal_only", false)) {
    // Sanity variant: zero the driver so the run estimates the plain
    // expectation of the terminal condition. The original equation's
    // references no longer apply, so they are dropped rather than left wrong.
    p.driver.evaluate = [](double, const Eigen::VectorXd&, double,
                           const Eigen::VectorXd&) { return 0.0; };
    p.driver.uses_gradient = false;
    p.driver.lipschitz_u = 0.0;
    p.driver.lipschitz_z = 0.0;
    p.driver.lipschitz_x = 0.0;
    p.analytic_solution = nullptr;
    p.reference_value = std::nullopt;
    p.budget_constants.K = 0.0;
    p.budget_constants.sup_f2 = 0.0;
    p.budget_constants.f_hat4 = 0.0;
  }
  return p;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) config_error("config must be a JSON object");
  reject_unknown_keys(j,
                      {"schema_version", "problem", "estimator", "density",
                       "plan", "replications", "seed", "workers", "x_start",
                       "diagnostics", "time_budget_seconds", "output"},
                      "config");
  RunConfig c;
  c.schema_version = int_field(j, "schema_version", 0);
  if (c.schema_version != 1) config_error("schema_version must be 1");
  if (!j.contains("problem")) config_error("config needs a problem section");
  c.problem = j.at("problem");
  if (!c.problem.is_object()) config_error("problem section must be an object");
  c.estimator = string_field(j, "estimator", c.estimator);
  if (j.contains("density")) {
    const json& d = j.at("density");
    if (!d.is_object()) config_error("density section must be an object");
    reject_unknown_keys(d, {"lambda", "shape_u"}, "density");
    c.lambda = number_field(d, "lambda", c.lambda);
    c.shape_u = number_field(d, "shape_u", c.shape_u);
  }
  if (!j.contains("plan")) config_error("config needs a plan section");
  const json& pl = j.at("plan");
  if (!pl.is_object()) config_error("plan section must be an object");
  reject_unknown_keys(pl, {"base_counts", "switches", "ipart_min", "ipart_max"},
                      "plan");
  if (!pl.contains("base_counts") || !pl.at("base_counts").is_array() ||
      pl.at("base_counts").empty()) {
    config_error("plan.base_counts must be a non-empty array");
  }
  for (const json& e : pl.at("base_counts")) {
    if (!e.is_number_integer()) {
      config_error("plan.base_counts entries must be integers");
    }
    c.base_counts.push_back(e.get<std::int64_t>());
  }
  if (pl.contains("switches")) {
    const json& sw = pl.at("switches");
    if (sw.is_number_integer()) {
      c.switches = {sw.get<int>()};
    } else if (sw.is_array()) {
      for (const json& e : sw) {
        if (!e.is_number_integer()) {
          config_error("plan.switches entries must be integers");
        }
        c.switches.push_back(e.get<int>());
      }
    } else {
      config_error("plan.switches must be an integer or an array of integers");
    }
  }
  c.ipart_min = int_field(pl, "ipart_min", 0);
  c.ipart_max = int_field(pl, "ipart_max", c.ipart_min);
  c.replications = int_field(j, "replications", 1);
  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0)) {
      config_error("seed must be a non-negative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  c.workers = int_field(j, "workers", 0);
  if (j.contains("x_start")) {
    c.x_start = json_double_array(j.at("x_start"), "x_start");
  }
  c.diagnostics = bool_field(j, "diagnostics", false);
  c.time_budget_seconds = number_field(j, "time_budget_seconds", 0.0);
  if (j.contains("output")) {
    const json& o = j.at("output");
    if (!o.is_object()) config_error("output section must be an object");
    reject_unknown_keys(o, {"path", "format"}, "output");
    c.out_path = string_field(o, "path", "");
    c.format = string_field(o, "format", c.format);
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["problem"] = c.problem;
  j["estimator"] = c.estimator;
  j["density"] = {{"lambda", c.lambda}, {"shape_u", c.shape_u}};
  json pl;
  pl["base_counts"] = c.base_counts;
  pl["switches"] = c.switches;
  pl["ipart_min"] = c.ipart_min;
  pl["ipart_max"] = c.ipart_max;
  j["plan"] = pl;
  j["replications"] = c.replications;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  if (!c.x_start.empty()) j["x_start"] = c.x_start;
  j["diagnostics"] = c.diagnostics;
  j["time_budget_seconds"] = c.time_budget_seconds;
  j["output"] = {{"path", c.out_path}, {"format", c.format}};
  return j;
}

void validate(const RunConfig& c) {
  if (c.schema_version != 1) config_error("schema_version must be 1");
  const Problem prob = problem_from_config(c.problem);
  const EstimatorKind kind = estimator_kind(c.estimator);
  const SwitchDensity density(c.lambda, c.shape_u);
  const bool gradient = kind != EstimatorKind::value;
  if (!gradient && prob.driver.uses_gradient) {
    config_error("the value estimator cannot feed a gradient-reading driver; "
                 "use grad1 or grad2 for " + prob.name);
  }
  if (gradient && !prob.driver.uses_gradient) {
    config_error("gradient estimators pair with gradient-reading drivers; use "
                 "the value estimator for " + prob.name);
  }
  if (gradient && !prob.terminal_gradient) {
    config_error("gradient estimators need the problem's terminal gradient");
  }
  if (gradient && c.shape_u > 1.0) {
    config_error("gradient estimators need shape_u <= 1 (the switching "
                 "density must not vanish at the origin)");
  }
  if (c.base_counts.empty()) config_error("plan.base_counts must be non-empty");
  for (std::int64_t n : c.base_counts) {
    if (n < 1) config_error("plan.base_counts entries must be at least 1");
    if (n > (std::int64_t{1} << 50)) config_error("level count too large");
  }
  const std::vector<int> switches = effective_switches(c);
  std::set<int> seen;
  for (int p : switches) {
    if (p < 1 || p > static_cast<int>(c.base_counts.size())) {
      config_error("plan.switches entries must lie in 1.." +
                   std::to_string(c.base_counts.size()));
    }
    if (!seen.insert(p).second) {
      config_error("plan.switches entries must be distinct");
    }
  }
  if (c.ipart_min < 0 || c.ipart_min > c.ipart_max) {
    config_error("need 0 <= ipart_min <= ipart_max");
  }
  if (c.ipart_max > 40) config_error("ipart_max must be at most 40");
  std::int64_t max_count = 0;
  for (std::int64_t n : c.base_counts) max_count = std::max(max_count, n);
  if (max_count > (std::numeric_limits<std::int64_t>::max() >> (c.ipart_max + 1))) {
    config_error("scaled level counts overflow at ipart_max");
  }
  if (c.replications < 1 || c.replications >= (1 << 20)) {
    config_error("replications must lie in 1..1048575");
  }
  if (!c.x_start.empty() && static_cast<int>(c.x_start.size()) != prob.dim) {
    config_error("x_start has " + std::to_string(c.x_start.size()) +
                 " entries for a problem of dimension " +
                 std::to_string(prob.dim));
  }
  if (c.workers < 0) config_error("workers must be non-negative");
  if (c.time_budget_seconds < 0.0) {
    config_error("time_budget_seconds must be non-negative");
  }
  if (c.format != "jsonl" && c.format != "csv") {
    config_error("output format must be jsonl or csv");
  }
  // Resource guards: per-worker scratch of the deepest cell, and the
  // per-outer-sample diagnostic arrays of the widest cell.
  const int workers = c.workers > 0 ? c.workers : omp_get_max_threads();
  int max_p = 0;
  for (int p : switches) max_p = std::max(max_p, p);
  const std::int64_t ws = workspace_bytes(kind, prob.dim, max_p);
  const std::int64_t ws_budget = (std::int64_t{8} << 30) / std::max(workers, 1);
  if (ws > ws_budget) {
    throw InfeasibleError(
        "per-worker workspace of " + std::to_string(ws) +
        " bytes at depth " + std::to_string(max_p) +
        " exceeds the memory guard; reduce switches or workers");
  }
  if (c.diagnostics) {
    const std::int64_t n0 = c.base_counts.front() << c.ipart_max;
    if (n0 > (std::int64_t{8} << 30) / 16) {
      throw InfeasibleError(
          "diagnostics arrays for " + std::to_string(n0) +
          " outer samples exceed the memory guard; disable diagnostics or "
          "shrink N_0");
    }
  }
  (void)density;
}

std::optional<double> resolve_reference(const Problem& problem,
                                        const Eigen::VectorXd& x_start) {
  const Eigen::VectorXd& x = x_start.size() > 0 ? x_start : problem.sde.x0;
  if (problem.analytic_solution) return problem.analytic_solution(0.0, x);
  if (problem.reference_value && x.size() == problem.sde.x0.size() &&
      (x - problem.sde.x0).cwiseAbs().maxCoeff() == 0.0) {
    return *problem.reference_value;
  }
  return std::nullopt;
}

json record_to_json(const RunConfig& config, const RunRecord& r) {
  json j;
  j["record"] = "estimate";
  j["problem"] = config.problem.value("name", "");
  j["estimator"] = config.estimator;
  j["lambda"] = config.lambda;
  j["shape_u"] = config.shape_u;
  j["seed"] = config.seed;
  j["p"] = r.depth_p;
  j["ipart"] = r.ipart;
  j["rep"] = r.rep;
  j["stream"] = r.stream;
  j["counts"] = scaled_plan(config, r.depth_p, r.ipart).counts;
  estimate_fields_to_json(r.estimate, j);
  if (r.reference) {
    j["reference"] = *r.reference;
    j["error_vs_reference"] = *r.error_vs_reference;
  }
  return j;
}

json cell_to_json(const RunConfig& config, const CellSummary& c) {
  json j;
  j["record"] = "aggregate";
  j["problem"] = config.problem.value("name", "");
  j["estimator"] = config.estimator;
  j["lambda"] = config.lambda;
  j["shape_u"] = config.shape_u;
  j["seed"] = config.seed;
  j["p"] = c.depth_p;
  j["ipart"] = c.ipart;
  j["counts"] = c.plan.counts;
  j["replications_done"] = c.replications_done;
  j["partial"] = c.partial;
  estimate_fields_to_json(c.aggregate, j);
  j["ci_low"] = c.ci_low;
  j["ci_high"] = c.ci_high;
  if (c.reference) {
    j["reference"] = *c.reference;
    j["error_vs_reference"] = *c.error_vs_reference;
  }
  return j;
}

RunOutcome run(const RunConfig& config, const RecordSink& sink) {
  RunConfig cfg = config;
  cfg.switches = effective_switches(config);
  validate(cfg);
  const Problem prob = problem_from_config(cfg.problem);
  const EstimatorKind kind = estimator_kind(cfg.estimator);
  const SwitchDensity density(cfg.lambda, cfg.shape_u);
  Eigen::VectorXd xs;
  if (!cfg.x_start.empty()) {
    xs = Eigen::Map<const Eigen::VectorXd>(cfg.x_start.data(),
                                           static_cast<Eigen::Index>(
                                               cfg.x_start.size()));
  }
  const std::optional<double> ref = resolve_reference(prob, xs);

  RunOutcome out;
  out.config = cfg;
  if (sink) sink(json{{"record", "config"}, {"config", to_json(cfg)}});

  const auto t0 = std::chrono::steady_clock::now();
  const auto expired = [&]() {
    if (cfg.time_budget_seconds <= 0.0) return false;
    const std::chrono::duration<double> elapsed =
        std::chrono::steady_clock::now() - t0;
    return elapsed.count() >= cfg.time_budget_seconds;
  };

  for (int p : cfg.switches) {
    for (int ipart = cfg.ipart_min; ipart <= cfg.ipart_max; ++ipart) {
      const NestingPlan plan = scaled_plan(cfg, p, ipart);
      EstimatorConfig ec;
      ec.kind = kind;
      ec.plan = plan;
      ec.density = density;
      ec.options.x_start = xs;
      ec.options.workers = cfg.workers;
      ec.options.diagnostics = cfg.diagnostics;
      std::vector<EstimateResult> reps;
      reps.reserve(static_cast<std::size_t>(cfg.replications));
      for (int r = 0; r < cfg.replications; ++r) {
        if (expired()) {
          out.time_budget_hit = true;
          break;
        }
        ec.options.stream = cell_stream(p, ipart, r);
        RunRecord rec;
        rec.depth_p = p;
        rec.ipart = ipart;
        rec.rep = r;
        rec.stream = ec.options.stream;
        rec.estimate = run_estimator(prob, ec, cfg.seed);
        rec.reference = ref;
        if (ref) rec.error_vs_reference = std::abs(rec.estimate.value - *ref);
        if (sink) sink(record_to_json(cfg, rec));
        reps.push_back(rec.estimate);
        out.records.push_back(std::move(rec));
      }
      if (!reps.empty()) {
        const int done = static_cast<int>(reps.size());
        const ReplicateResult agg = aggregate_replicates(std::move(reps));
        CellSummary cell;
        cell.depth_p = p;
        cell.ipart = ipart;
        cell.plan = plan;
        cell.replications_done = done;
        cell.partial = done < cfg.replications;
        cell.aggregate = agg.aggregate;
        cell.ci_low = agg.ci_low;
        cell.ci_high = agg.ci_high;
        cell.reference = ref;
        if (ref) {
          cell.error_vs_reference = std::abs(cell.aggregate.value - *ref);
        }
        if (sink) sink(cell_to_json(cfg, cell));
        out.cells.push_back(std::move(cell));
      }
      if (out.time_budget_hit) return out;
    }
  }
  return out;
}

std::string summary_csv(const RunOutcome& outcome) {
  const RunConfig& cfg = outcome.config;
  std::string out =
      "problem,estimator,lambda,shape_u,p,ipart,counts,replications,partial,"
      "value,std_error,ci_low,ci_high,n_outer,evaluations,wall_time,"
      "reference,abs_error,gradient,gradient_std_error\n";
  const std::string problem = cfg.problem.value("name", "");
  for (const CellSummary& c : outcome.cells) {
    out += problem;
    out += ',' + cfg.estimator;
    out += ',' + format_double(cfg.lambda);
    out += ',' + format_double(cfg.shape_u);
    out += ',' + std::to_string(c.depth_p);
    out += ',' + std::to_string(c.ipart);
    out += ',' + join_counts(c.plan.counts);
    out += ',' + std::to_string(c.replications_done);
    out += c.partial ? ",1" : ",0";
    out += ',' + format_double(c.aggregate.value);
    out += ',' + format_double(c.aggregate.std_error);
    out += ',' + format_double(c.ci_low);
    out += ',' + format_double(c.ci_high);
    out += ',' + std::to_string(c.aggregate.n_outer);
    out += ',' + std::to_string(c.aggregate.evaluations);
    out += ',' + format_double(c.aggregate.wall_time);
    out += ',';
    if (c.reference) out += format_double(*c.reference);
    out += ',';
    if (c.error_vs_reference) out += format_double(*c.error_vs_reference);
    out += ',';
    if (c.aggregate.gradient.size() > 0) out += join_vector(c.aggregate.gradient);
    out += ',';
    if (c.aggregate.gradient_std_error.size() > 0) {
      out += join_vector(c.aggregate.gradient_std_error);
    }
    out += '\n';
  }
  return out;
}

std::vector<CellPlanInfo> plan_grid(const RunConfig& config) {
  RunConfig cfg = config;
  cfg.switches = effective_switches(config);
  validate(cfg);
  const Problem prob = problem_from_config(cfg.problem);
  const EstimatorKind kind = estimator_kind(cfg.estimator);
  const SwitchDensity density(cfg.lambda, cfg.shape_u);
  const bool pairs = kind == EstimatorKind::gradient_scheme2;
  std::vector<CellPlanInfo> out;
  for (int p : cfg.switches) {
    for (int ipart = cfg.ipart_min; ipart <= cfg.ipart_max; ++ipart) {
      CellPlanInfo info;
      info.depth_p = p;
      info.ipart = ipart;
      info.plan = scaled_plan(cfg, p, ipart);
      info.expected_nodes =
          expected_tree_cost(info.plan, density, prob.horizon_T);
      info.expected_driver_evals = expected_driver_evaluations(
          info.plan, density, prob.horizon_T, pairs);
      info.workspace_bytes = workspace_bytes(kind, prob.dim, p);
      out.push_back(std::move(info));
    }
  }
  return out;
}

BudgetReport report_budget(const Problem& problem,
                           const std::vector<double>& lambdas, int max_depth,
                           std::optional<double> target_accuracy,
                           int target_depth) {
  if (lambdas.empty()) config_error("budget report needs at least one rate");
  if (max_depth < 1) config_error("max_depth must be at least 1");
  if (target_depth < 1) config_error("target depth must be at least 1");
  BudgetReport rep;
  rep.problem_name = problem.name;
  rep.horizon_T = problem.horizon_T;
  rep.max_depth = max_depth;
  const BudgetInputs& base = problem.budget_constants;
  rep.bias_available = base.K_hat > 0.0;
  rep.variance_available = base.g2 > 0.0;
  for (double lam : lambdas) {
    if (lam <= 0.0) config_error("switching rates must be positive");
    BudgetInputs in = base;
    in.lambda = lam;
    BudgetColumn col;
    col.lambda = lam;
    if (rep.bias_available) {
      for (int p = 1; p <= max_depth; ++p) col.bias.push_back(bias_term(in, p));
    }
    if (rep.variance_available) {
      for (int i = 0; i < max_depth; ++i) {
        col.variance.push_back(variance_coeff(in, i));
      }
    }
    rep.columns.push_back(std::move(col));
  }
  if (target_accuracy) {
    if (!rep.bias_available || !rep.variance_available) {
      config_error("allocation needs documented budget constants (K_hat and "
                   "g2) for " + problem.name);
    }
    BudgetInputs in = base;
    in.lambda = lambdas.front();
    rep.allocation = allocate_particles(in, target_depth, *target_accuracy);
    rep.allocation_bound = total_bound(in, *rep.allocation);
    rep.allocation_cost =
        expected_tree_cost(*rep.allocation,
                           SwitchDensity(lambdas.front(), base.shape_u),
                           problem.horizon_T);
  }
  return rep;
}

json budget_to_json(const BudgetReport& rep) {
  json j;
  j["record"] = "budget";
  j["problem"] = rep.problem_name;
  j["horizon_T"] = rep.horizon_T;
  j["max_depth"] = rep.max_depth;
  j["bias_available"] = rep.bias_available;
  j["variance_available"] = rep.variance_available;
  j["columns"] = json::array();
  for (const BudgetColumn& col : rep.columns) {
    json c;
    c["lambda"] = col.lambda;
    if (rep.bias_available) c["bias"] = col.bias;
    if (rep.variance_available) c["variance"] = col.variance;
    j["columns"].push_back(c);
  }
  if (rep.allocation) {
    j["allocation"] = {{"counts", rep.allocation->counts},
                       {"bound", rep.allocation_bound},
                       {"expected_nodes", rep.allocation_cost}};
  }
  return j;
}

std::string budget_table(const BudgetReport& rep) {
  char buf[64];
  std::string out = "problem: " + rep.problem_name + " (T = ";
  std::snprintf(buf, sizeof buf, "%g", rep.horizon_T);
  out += buf;
  out += ")\n";
  out += "quantity";
  for (const BudgetColumn& col : rep.columns) {
    std::snprintf(buf, sizeof buf, "  lambda=%-8g", col.lambda);
    out += buf;
  }
  out += '\n';
  if (rep.bias_available) {
    for (int p = 1; p <= rep.max_depth; ++p) {
      std::snprintf(buf, sizeof buf, "b(%d)    ", p);
      out += buf;
      for (const BudgetColumn& col : rep.columns) {
        std::snprintf(buf, sizeof buf, "  %15.6e", col.bias[p - 1]);
        out += buf;
      }
      out += '\n';
    }
  } else {
    out += "b(p)      n/a (K_hat not documented for this problem)\n";
  }
  if (rep.variance_available) {
    for (int i = 0; i < rep.max_depth; ++i) {
      std::snprintf(buf, sizeof buf, "v(%d)    ", i);
      out += buf;
      for (const BudgetColumn& col : rep.columns) {
        std::snprintf(buf, sizeof buf, "  %15.6e", col.variance[i]);
        out += buf;
      }
      out += '\n';
    }
  } else {
    out += "v(i)      n/a (g2 not documented for this problem)\n";
  }
  if (rep.allocation) {
    out += "allocation: counts " + join_counts(rep.allocation->counts);
    std::snprintf(buf, sizeof buf, ", bound %.6e, expected nodes %.4e\n",
                  rep.allocation_bound, rep.allocation_cost);
    out += buf;
  }
  return out;
}

}  // namespace nestmc
