// Experiment CLI: run replicated estimator grids from a JSON config, report
// a-priori error budgets, allocate particle counts for a target accuracy,
// print reference values, and list the problem catalog.
//
// Exit codes: 0 success, 2 configuration error, 3 infeasible request,
// 4 time budget hit with partial output.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nestmc/problems.hpp"
#include "nestmc/runner.hpp"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open config file " + path);
  }
  return json::parse(in);
}

// "A..B" or a single "A".
void parse_ipart_range(const std::string& text, int& lo, int& hi) {
  const std::size_t dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      lo = hi = std::stoi(text);
    } else {
      lo = std::stoi(text.substr(0, dots));
      hi = std::stoi(text.substr(dots + 2));
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse ipart range \"" + text +
                                "\" (expected A..B)");
  }
}

// Problem description from either --config (its problem section) or
// --problem plus repeated --param key=value overrides.
json problem_json(const std::string& config_path, const std::string& name,
                  int dim, const std::vector<std::string>& params) {
  json pj;
  if (!config_path.empty()) {
    pj = load_json_file(config_path).value("problem", json::object());
  }
  if (!name.empty()) pj["name"] = name;
  if (dim > 0) pj["dim"] = dim;
  for (const std::string& kv : params) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--param expects key=value, got \"" + kv +
                                  "\"");
    }
    const std::string key = kv.substr(0, eq);
    try {
      pj[key] = std::stod(kv.substr(eq + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("--param value for " + key +
                                  " is not a number");
    }
  }
  if (!pj.contains("name")) {
    throw std::invalid_argument("no problem selected: pass --config or "
                                "--problem NAME");
  }
  return pj;
}

std::string csv_sibling(const std::string& path) {
  std::filesystem::path p(path);
  p.replace_extension(".csv");
  return p.string();
}

struct RunFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string ipart_range;
  int switches = 0;
  double lambda = 0.0;
  double shape_u = 0.0;
  int replications = 0;
  std::string out_path;
  std::string format;
  double time_budget = -1.0;
  bool diagnostics = false;
  bool print_plan = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* ipart_opt = nullptr;
  CLI::Option* switches_opt = nullptr;
  CLI::Option* lambda_opt = nullptr;
  CLI::Option* shape_opt = nullptr;
  CLI::Option* reps_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* format_opt = nullptr;
  CLI::Option* budget_opt = nullptr;
  CLI::Option* diag_opt = nullptr;
};

int do_run(const RunFlags& f) {
  nestmc::RunConfig cfg =
      nestmc::run_config_from_json(load_json_file(f.config_path));
  if (f.seed_opt->count()) cfg.seed = f.seed;
  if (f.workers_opt->count()) cfg.workers = f.workers;
  if (f.ipart_opt->count()) {
    parse_ipart_range(f.ipart_range, cfg.ipart_min, cfg.ipart_max);
  }
  if (f.switches_opt->count()) cfg.switches = {f.switches};
  if (f.lambda_opt->count()) cfg.lambda = f.lambda;
  if (f.shape_opt->count()) cfg.shape_u = f.shape_u;
  if (f.reps_opt->count()) cfg.replications = f.replications;
  if (f.out_opt->count()) cfg.out_path = f.out_path;
  if (f.format_opt->count()) cfg.format = f.format;
  if (f.budget_opt->count()) cfg.time_budget_seconds = f.time_budget;
  if (f.diag_opt->count()) cfg.diagnostics = true;

  if (f.print_plan) {
    const std::vector<nestmc::CellPlanInfo> grid = nestmc::plan_grid(cfg);
    std::printf("%3s %6s %-24s %16s %16s %14s\n", "p", "ipart", "counts",
                "expected_nodes", "driver_evals", "workspace_B");
    for (const nestmc::CellPlanInfo& cell : grid) {
      std::string counts;
      for (std::size_t i = 0; i < cell.plan.counts.size(); ++i) {
        if (i) counts += 'x';
        counts += std::to_string(cell.plan.counts[i]);
      }
      std::printf("%3d %6d %-24s %16.4e %16.4e %14lld\n", cell.depth_p,
                  cell.ipart, counts.c_str(), cell.expected_nodes,
                  cell.expected_driver_evals,
                  static_cast<long long>(cell.workspace_bytes));
    }
    return 0;
  }

  nestmc::validate(cfg);
  std::ofstream jsonl_file;
  const bool jsonl_mode = cfg.format == "jsonl";
  if (jsonl_mode && !cfg.out_path.empty()) {
    jsonl_file.open(cfg.out_path, std::ios::trunc);
    if (!jsonl_file) {
      throw std::invalid_argument("cannot open output file " + cfg.out_path);
    }
  }
  nestmc::RecordSink sink;
  if (jsonl_mode) {
    sink = [&](const json& record) {
      if (jsonl_file.is_open()) {
        jsonl_file << record.dump() << '\n';
        jsonl_file.flush();
      } else {
        std::cout << record.dump() << '\n';
      }
    };
  }

  const nestmc::RunOutcome outcome = nestmc::run(cfg, sink);

  const std::string csv = nestmc::summary_csv(outcome);
  if (cfg.format == "csv") {
    if (cfg.out_path.empty()) {
      std::cout << csv;
    } else {
      std::ofstream(cfg.out_path, std::ios::trunc) << csv;
    }
  } else if (!cfg.out_path.empty()) {
    std::ofstream(csv_sibling(cfg.out_path), std::ios::trunc) << csv;
  }
  if (outcome.time_budget_hit) {
    std::cerr << "time budget hit: " << outcome.cells.size()
              << " cell(s) summarized, remaining grid skipped\n";
    return 4;
  }
  return 0;
}

int do_budget(const std::string& config_path, const std::string& name, int dim,
              const std::vector<std::string>& params,
              std::vector<double> lambdas, int max_depth,
              std::optional<double> target, int target_depth,
              const std::string& out_path) {
  const json pj = problem_json(config_path, name, dim, params);
  if (lambdas.empty() && !config_path.empty()) {
    const json full = load_json_file(config_path);
    if (full.contains("density")) {
      lambdas.push_back(full.at("density").value("lambda", 0.0));
    }
  }
  if (lambdas.empty()) {
    throw std::invalid_argument("no switching rate: pass --lambda (or a "
                                "config with a density section)");
  }
  const nestmc::Problem prob = nestmc::problem_from_config(pj);
  const nestmc::BudgetReport rep =
      nestmc::report_budget(prob, lambdas, max_depth, target, target_depth);
  std::cout << nestmc::budget_table(rep);
  if (!out_path.empty()) {
    std::ofstream(out_path, std::ios::trunc)
        << nestmc::budget_to_json(rep).dump(2) << '\n';
  }
  return 0;
}

int do_allocate(const std::string& config_path, const std::string& name,
                int dim, const std::vector<std::string>& params, double lambda,
                double target, int target_depth) {
  const json pj = problem_json(config_path, name, dim, params);
  if (lambda <= 0.0 && !config_path.empty()) {
    const json full = load_json_file(config_path);
    if (full.contains("density")) {
      lambda = full.at("density").value("lambda", 0.0);
    }
  }
  if (lambda <= 0.0) {
    throw std::invalid_argument("no switching rate: pass --lambda (or a "
                                "config with a density section)");
  }
  const nestmc::Problem prob = nestmc::problem_from_config(pj);
  const nestmc::BudgetReport rep = nestmc::report_budget(
      prob, {lambda}, std::max(target_depth, 1), target, target_depth);
  std::string counts;
  for (std::size_t i = 0; i < rep.allocation->counts.size(); ++i) {
    if (i) counts += ',';
    counts += std::to_string(rep.allocation->counts[i]);
  }
  std::printf("counts: %s\n", counts.c_str());
  std::printf("predicted mean-squared-error bound: %.6e\n",
              rep.allocation_bound);
  std::printf("expected simulated nodes: %.4e\n", rep.allocation_cost);
  return 0;
}

int do_reference(const std::string& config_path, const std::string& name,
                 int dim, const std::vector<std::string>& params,
                 std::uint64_t seed, std::int64_t mc_samples) {
  const json pj = problem_json(config_path, name, dim, params);
  const nestmc::Problem prob = nestmc::problem_from_config(pj);
  if (prob.analytic_solution) {
    std::printf("reference for %s (d=%d): %.12g (analytic solution at x0)\n",
                prob.name.c_str(), prob.dim,
                prob.analytic_solution(0.0, prob.sde.x0));
    return 0;
  }
  if (prob.reference_value) {
    std::printf("reference for %s (d=%d): %.12g (published value)\n",
                prob.name.c_str(), prob.dim, *prob.reference_value);
    return 0;
  }
  if (pj.value("name", "") == "hjb") {
    const double theta = pj.value("theta", 1.0);
    const double T = pj.value("T", 1.0);
    const nestmc::ReferenceValue ref =
        nestmc::hjb_reference(prob.dim, theta, T, mc_samples, seed);
    std::printf(
        "reference for %s (d=%d): %.6f +- %.6f (log-transform Monte Carlo, "
        "n=%lld)\n",
        prob.name.c_str(), prob.dim, ref.value, ref.std_error,
        static_cast<long long>(ref.n_samples));
    return 0;
  }
  std::cerr << "no reference available for " << prob.name
            << " with these parameters\n";
  return 3;
}

int do_list_problems() {
  struct Row {
    const char* name;
    int dim;
    const char* params;
  };
  const Row rows[] = {
      {"toy-cosine", 1, "dim, a, r, mu0, sigma0, T"},
      {"cva", 6, "dim, beta, sigma0, T"},
      {"bs-default", 100,
       "dim, spot, mu0, sigma0, delta, v_h, v_l, gamma_h, gamma_l, rate_R, T"},
      {"burgers", 10, "dim, T, sigma_scale"},
      {"hjb", 100, "dim, theta, T"},
  };
  std::printf("%-12s %7s %-8s %-10s parameters\n", "name", "default", "driver",
              "reference");
  for (const Row& r : rows) {
    json pj{{"name", r.name}};
    const nestmc::Problem prob = nestmc::problem_from_config(pj);
    const char* slot = prob.driver.uses_gradient ? "y,z" : "y";
    const char* ref = prob.analytic_solution  ? "analytic"
                      : prob.reference_value  ? "published"
                      : std::string(r.name) == "hjb" ? "mc" : "none";
    std::printf("%-12s %7d %-8s %-10s %s\n", r.name, prob.dim, slot, ref,
                r.params);
  }
  std::printf(
      "\nevery problem also accepts terminal_only=true, which zeroes the\n"
      "driver so a run estimates the plain expectation of the terminal\n"
      "condition (references are dropped; pair with the value estimator)\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nested Monte Carlo experiments for semi-linear parabolic PDEs"};
  app.require_subcommand(1);

  RunFlags rf;
  CLI::App* run_cmd =
      app.add_subcommand("run", "execute an experiment grid from a config");
  run_cmd->add_option("--config", rf.config_path, "JSON run config")
      ->required()
      ->check(CLI::ExistingFile);
  rf.seed_opt = run_cmd->add_option("--seed", rf.seed, "root seed override");
  rf.workers_opt =
      run_cmd->add_option("--workers", rf.workers, "worker thread override");
  rf.ipart_opt = run_cmd->add_option("--ipart-range", rf.ipart_range,
                                     "doubling sweep range A..B");
  rf.switches_opt = run_cmd->add_option(
      "--switches", rf.switches, "run a single switching depth p");
  rf.lambda_opt =
      run_cmd->add_option("--lambda", rf.lambda, "switching rate override");
  rf.shape_opt =
      run_cmd->add_option("--shape-u", rf.shape_u, "switching shape override");
  rf.reps_opt = run_cmd->add_option("--replications", rf.replications,
                                    "replication count override");
  rf.out_opt = run_cmd->add_option("--out", rf.out_path, "output path");
  rf.format_opt = run_cmd->add_option("--format", rf.format,
                                      "output format: jsonl or csv");
  rf.budget_opt = run_cmd->add_option("--time-budget", rf.time_budget,
                                      "wall-clock budget in seconds");
  rf.diag_opt = run_cmd->add_flag("--diagnostics", rf.diagnostics,
                                  "record increment-decile diagnostics");
  run_cmd->add_flag("--print-plan", rf.print_plan,
                    "print expected per-cell costs and exit");

  std::string b_config, b_name, b_out;
  int b_dim = 0, b_depths = 5, b_target_depth = 2;
  std::vector<std::string> b_params;
  std::vector<double> b_lambdas;
  double b_target = 0.0;
  CLI::App* budget_cmd = app.add_subcommand(
      "budget", "print bias/variance coefficient tables for a problem");
  budget_cmd->add_option("--config", b_config, "JSON run config")
      ->check(CLI::ExistingFile);
  budget_cmd->add_option("--problem", b_name, "catalog problem name");
  budget_cmd->add_option("--dim", b_dim, "problem dimension");
  budget_cmd->add_option("--param", b_params,
                         "problem parameter override key=value");
  budget_cmd->add_option("--lambda", b_lambdas,
                         "switching rate column (repeatable)");
  budget_cmd->add_option("--depths", b_depths, "table depth (default 5)");
  CLI::Option* b_target_opt = budget_cmd->add_option(
      "--target", b_target, "attach an allocation for this accuracy");
  budget_cmd->add_option("--switches", b_target_depth,
                         "allocation depth (default 2)");
  budget_cmd->add_option("--out", b_out, "also write the report as JSON");

  std::string a_config, a_name;
  int a_dim = 0, a_depth = 2;
  std::vector<std::string> a_params;
  double a_lambda = 0.0, a_target = 0.0;
  CLI::App* alloc_cmd = app.add_subcommand(
      "allocate", "cheapest particle counts meeting a target accuracy");
  alloc_cmd->add_option("--config", a_config, "JSON run config")
      ->check(CLI::ExistingFile);
  alloc_cmd->add_option("--problem", a_name, "catalog problem name");
  alloc_cmd->add_option("--dim", a_dim, "problem dimension");
  alloc_cmd->add_option("--param", a_params,
                        "problem parameter override key=value");
  alloc_cmd->add_option("--lambda", a_lambda, "switching rate");
  alloc_cmd->add_option("--target", a_target, "target mean-squared error")
      ->required();
  alloc_cmd->add_option("--switches", a_depth, "switching depth p (default 2)");

  std::string r_config, r_name;
  int r_dim = 0;
  std::vector<std::string> r_params;
  std::uint64_t r_seed = 0;
  std::int64_t r_mc = 4000000;
  CLI::App* ref_cmd = app.add_subcommand(
      "reference", "print a problem's reference value and its source");
  ref_cmd->add_option("--config", r_config, "JSON run config")
      ->check(CLI::ExistingFile);
  ref_cmd->add_option("--problem", r_name, "catalog problem name");
  ref_cmd->add_option("--dim", r_dim, "problem dimension");
  ref_cmd->add_option("--param", r_params,
                      "problem parameter override key=value");
  ref_cmd->add_option("--seed", r_seed, "Monte Carlo seed");
  ref_cmd->add_option("--mc-samples", r_mc, "Monte Carlo sample count");

  app.add_subcommand("list-problems", "show the problem catalog");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) return do_run(rf);
    if (budget_cmd->parsed()) {
      return do_budget(b_config, b_name, b_dim, b_params, b_lambdas, b_depths,
                       b_target_opt->count()
                           ? std::optional<double>(b_target)
                           : std::nullopt,
                       b_target_depth, b_out);
    }
    if (alloc_cmd->parsed()) {
      return do_allocate(a_config, a_name, a_dim, a_params, a_lambda, a_target,
                         a_depth);
    }
    if (ref_cmd->parsed()) {
      return do_reference(r_config, r_name, r_dim, r_params, r_seed, r_mc);
    }
    return do_list_problems();
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 3;
  } catch (const nestmc::InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
