#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nestmc/error_budget.hpp"
#include "nestmc/estimators.hpp"
#include "nestmc/plan.hpp"
#include "nestmc/problems.hpp"

namespace nestmc {

// A plan or workspace that cannot be executed within bounded resources
// (as opposed to a malformed configuration, which is std::invalid_argument).
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Builds a catalog problem from its JSON description. Required key: "name"
// (one of toy-cosine, cva, bs-default, burgers, hjb). "dim" defaults to the
// standard experiment dimension of each problem; the remaining keys override
// factory defaults and are listed by the list-problems subcommand. Unknown
// keys are rejected, so typos cannot silently fall back to defaults.
Problem problem_from_config(const nlohmann::json& problem_config);

// One experiment: a problem, an estimator, a switching density, and a grid
// of (depth, ipart) cells where cell (p, i) runs the plan whose level counts
// are the first p base counts each scaled by 2^i. Everything a run needs is
// in here, so re-running an emitted config echo reproduces the run.
struct RunConfig {
  int schema_version = 1;
  nlohmann::json problem;  // see problem_from_config
  std::string estimator = "value";  // value | grad1 | grad2
  double lambda = 0.5;
  double shape_u = 1.0;
  std::vector<std::int64_t> base_counts;
  std::vector<int> switches;  // depths p to run; empty = all base counts
  int ipart_min = 0;
  int ipart_max = 0;
  int replications = 1;
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = all available; results do not depend on it
  std::vector<double> x_start;  // empty = the problem's x0
  bool diagnostics = false;
  double time_budget_seconds = 0.0;  // 0 = unlimited
  std::string out_path;  // empty = stdout only
  std::string format = "jsonl";  // jsonl | csv
};

// Strict parse: unknown keys anywhere are a configuration error, and
// schema_version must be 1. to_json emits every field, so
// run_config_from_json(to_json(c)) == c.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

// Throws std::invalid_argument for malformed configs (unknown problem or
// estimator, estimator/driver mismatch, bad grid bounds) and InfeasibleError
// when a cell's workspace would exceed the memory guard. Called by run();
// exposed so the CLI can fail before opening output files.
void validate(const RunConfig& config);

struct RunRecord {
  int depth_p = 0;
  int ipart = 0;
  int rep = 0;
  std::uint64_t stream = 0;
  EstimateResult estimate;
  std::optional<double> reference;
  std::optional<double> error_vs_reference;  // |estimate - reference|
};

// Aggregate over the replications of one grid cell. partial marks a cell
// cut short by the time budget; its statistics cover replications_done.
struct CellSummary {
  int depth_p = 0;
  int ipart = 0;
  NestingPlan plan;  // scaled counts actually run
  int replications_done = 0;
  bool partial = false;
  EstimateResult aggregate;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::optional<double> reference;
  std::optional<double> error_vs_reference;
};

struct RunOutcome {
  RunConfig config;
  std::vector<RunRecord> records;
  std::vector<CellSummary> cells;
  bool time_budget_hit = false;
};

// Called with each emitted record as soon as it exists: first the config
// echo, then one estimate record per replication, then one aggregate record
// as each cell completes. The CLI wires this to a line-flushed JSONL file so
// an aborted run keeps everything finished before the abort.
using RecordSink = std::function<void(const nlohmann::json& record)>;

// Executes the full (p, ipart, replication) grid in row order (p outer,
// ipart inner). Replication r of cell (p, i) runs on the sub-stream
// (p << 40) | (i << 20) | r of the root seed, so a record's values depend
// only on (seed, problem, estimator, density, counts, p, i, r), never on
// which other cells the grid contains. The time budget is checked between
// replications; when it expires the current cell is summarized from the
// replications it completed and the remaining grid is skipped.
RunOutcome run(const RunConfig& config, const RecordSink& sink = {});

// JSON forms of the emitted records ({"record": "config" | "estimate" |
// "aggregate", ...}). Numeric fields round-trip exactly; wall_time is the
// only field expected to differ between repeated runs.
nlohmann::json record_to_json(const RunConfig& config, const RunRecord& r);
nlohmann::json cell_to_json(const RunConfig& config, const CellSummary& c);

// Summary table, one CSV row per cell (header included). Gradient columns
// hold semicolon-joined coordinates, empty for value runs.
std::string summary_csv(const RunOutcome& outcome);

// Reference value for error-vs-reference columns: the problem's published
// value when present, else its analytic solution at (0, x_start). x_start
// empty means the problem's x0.
std::optional<double> resolve_reference(const Problem& problem,
                                        const Eigen::VectorXd& x_start);

// Expected per-cell work, printed by --print-plan before (or instead of) a
// run: node and driver-evaluation counts from the switching law plus the
// peak per-worker workspace of the chosen estimator.
struct CellPlanInfo {
  int depth_p = 0;
  int ipart = 0;
  NestingPlan plan;
  double expected_nodes = 0.0;
  double expected_driver_evals = 0.0;
  std::int64_t workspace_bytes = 0;
};
std::vector<CellPlanInfo> plan_grid(const RunConfig& config);

// A-priori error-budget report: squared-bias coefficients b(p) for
// p = 1..max_depth and variance coefficients v(i) for i = 0..max_depth-1,
// one column per switching rate. Quantities whose inputs the problem does
// not document are marked unavailable instead of being computed from zeros
// (bias needs K_hat, variance needs g2). When a target accuracy is given,
// the cheapest plan meeting it at target_depth is attached (first rate
// only); an unreachable target propagates allocate_particles' domain error.
struct BudgetColumn {
  double lambda = 0.0;
  std::vector<double> bias;  // b(1)..b(max_depth), empty if unavailable
  std::vector<double> variance;  // v(0)..v(max_depth-1), empty if unavailable
};
struct BudgetReport {
  std::string problem_name;
  double horizon_T = 0.0;
  int max_depth = 5;
  bool bias_available = false;
  bool variance_available = false;
  std::vector<BudgetColumn> columns;
  std::optional<NestingPlan> allocation;
  double allocation_bound = 0.0;
  double allocation_cost = 0.0;
};
BudgetReport report_budget(const Problem& problem,
                           const std::vector<double>& lambdas,
                           int max_depth = 5,
                           std::optional<double> target_accuracy = {},
                           int target_depth = 2);
nlohmann::json budget_to_json(const BudgetReport& report);

// Fixed-width text table of the report (rows b(1).., v(0)..; one column per
// rate), with unavailable sections rendered as "n/a (constant not
// documented)" rather than numbers.
std::string budget_table(const BudgetReport& report);

}  // namespace nestmc
