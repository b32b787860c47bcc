// rlmm command line: simulate datasets, fit a single dataset, or run a full
// benchmark experiment.
//
//   rlmm simulate --scenario random-intercepts --reps 5 --seed 1 --out data/
//   rlmm fit --data data/dataset_0.csv --optimizer rntr
//   rlmm bench --scenario random-slope --optimizers rntr,rcg --reps 20 --seed 42 --out results/
//
// Exit codes: 0 success, 2 configuration error, 3 at least one replication failed.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rlmm/dataset_io.hpp"
#include "rlmm/harness.hpp"

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitReplicationFailed = 3;

rlmm::Scenario resolve_scenario(const std::string& name) {
  if (name == "random-intercepts") return rlmm::scenario_random_intercepts();
  if (name == "random-slope") return rlmm::scenario_random_slope();
  std::ifstream in(name);
  if (!in) throw std::invalid_argument("scenario must be random-intercepts, random-slope or a JSON file path: " + name);
  return rlmm::scenario_from_json(rlmm::Json::parse(in));
}

std::vector<rlmm::OptimizerKind> parse_optimizers(const std::string& csv) {
  std::vector<rlmm::OptimizerKind> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(rlmm::optimizer_from_string(item));
  if (out.empty()) throw std::invalid_argument("no optimizer selected");
  return out;
}

struct CommonTuning {
  rlmm::TrustRegionConfig tr;
  rlmm::StoppingConfig stop;

  void attach(CLI::App& app) {
    app.add_option("--tr-delta0", tr.delta0, "Initial trust-region radius");
    app.add_option("--tr-delta-max", tr.delta_max, "Maximum trust-region radius");
    app.add_option("--tr-rho-prime", tr.rho_prime, "Step acceptance threshold");
    app.add_option("--stop-max-iters", stop.max_iters, "Iteration cap");
    app.add_option("--stop-rel-obj-tol", stop.rel_obj_tol, "Relative objective tolerance");
    app.add_option("--stop-step-tol", stop.step_len_tol, "Step length tolerance");
    app.add_option("--stop-grad-tol", stop.grad_norm_tol, "Gradient norm tolerance");
  }
};

int cmd_simulate(const std::string& scenario_name, int reps, std::uint64_t seed, bool seed_given,
                 const std::string& out_dir) {
  rlmm::Scenario scenario = resolve_scenario(scenario_name);
  if (seed_given) scenario.seed = seed;
  if (reps > 0) scenario.n_datasets = reps;
  std::filesystem::create_directories(out_dir);
  for (int k = 0; k < scenario.n_datasets; ++k) {
    rlmm::SimulatedDataset ds = rlmm::generate_dataset(scenario, k);
    const auto stem = std::filesystem::path(out_dir) / ("dataset_" + std::to_string(k));
    rlmm::write_dataset(stem.string(), ds.problem, &ds.truth);
  }
  std::ofstream sj(std::filesystem::path(out_dir) / "scenario.json");
  sj << rlmm::scenario_to_json(scenario).dump(2) << "\n";
  std::cout << "wrote " << scenario.n_datasets << " datasets to " << out_dir << "\n";
  return 0;
}

int cmd_fit(const std::string& data_path, std::string meta_path, const std::string& optimizer,
            const std::string& trace_path, const CommonTuning& tuning) {
  if (meta_path.empty()) {
    meta_path = data_path;
    const auto pos = meta_path.rfind(".csv");
    if (pos != std::string::npos) meta_path.replace(pos, 4, ".meta.json");
  }
  rlmm::LoadedDataset ds = rlmm::load_dataset(data_path, meta_path);
  const rlmm::ThetaPoint theta0 = rlmm::init_theta(ds.problem);
  rlmm::RunResult<rlmm::ThetaPoint> run = rlmm::run_optimizer(
      rlmm::optimizer_from_string(optimizer), ds.problem, theta0, tuning.tr, tuning.stop, {});

  rlmm::Json report;
  report["optimizer"] = optimizer;
  report["iters"] = run.iters;
  report["termination"] = rlmm::to_string(run.termination);
  report["L_R"] = run.objective_trace.back();
  report["L_R_per_obs"] = run.objective_trace.back() / ds.problem.n();
  report["wall_time_s"] = run.wall_time_seconds;
  rlmm::Json est = rlmm::Json::object();
  for (const auto& [k, v] : rlmm::extract_estimates(run.theta_final)) est[k] = v;
  report["estimates"] = est;
  {
    rlmm::RemlFunction f(ds.problem);
    auto eval = f.evaluate(run.theta_final);
    const rlmm::Vector beta = eval.workspace().gls_beta();
    report["beta_gls"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  }
  if (ds.truth) {
    const double l_truth = rlmm::reml_value(ds.problem, rlmm::truth_theta(*ds.truth));
    report["deviation_L_R"] = rlmm::deviation_LR(run.objective_trace.back(), l_truth);
  }
  if (!trace_path.empty()) rlmm::write_trace_csv(trace_path, run);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_bench(const std::string& scenario_name, const std::string& optimizers, int reps, std::uint64_t seed,
              const std::string& out_dir, int threads, const std::string& emit, const CommonTuning& tuning) {
  rlmm::ExperimentConfig config;
  if (std::filesystem::is_directory(scenario_name))
    config.dataset_dir = scenario_name;
  else
    config.scenario = resolve_scenario(scenario_name);
  config.optimizers = parse_optimizers(optimizers);
  config.tr_cfg = tuning.tr;
  config.stop_cfg = tuning.stop;
  config.output_dir = out_dir;
  config.reps = reps;
  config.seed = seed;
  config.threads = threads;
  if (!emit.empty()) {
    config.emit = rlmm::EmitOptions{false, false, false};
    std::stringstream ss(emit);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "csv_summary") config.emit.csv_summary = true;
      else if (item == "jsonl_runs") config.emit.jsonl_runs = true;
      else if (item == "trace_csv") config.emit.trace_csv = true;
      else throw std::invalid_argument("unknown emit kind: " + item);
    }
  }

  rlmm::MetricsSummary summary = rlmm::run_experiment(config);
  for (const auto& s : summary.per_optimizer) {
    std::cout << s.optimizer << ": n=" << s.n_used << " failed=" << s.n_failed << " av_iters=" << s.av_iters
              << " median_iters=" << s.median_iters << " av_runtime_s=" << s.av_runtime_s
              << " av_L_R=" << s.av_LR;
    for (const auto& [name, v] : s.mse) std::cout << " " << name << "=" << v;
    std::cout << "\n";
  }
  if (!out_dir.empty()) std::cout << "results written to " << out_dir << "\n";
  return summary.n_failed_total > 0 ? kExitReplicationFailed : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Riemannian REML estimation for linear mixed models"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate synthetic datasets");
  std::string sim_scenario = "random-intercepts";
  int sim_reps = 0;
  std::uint64_t sim_seed = 0;
  std::string sim_out = "datasets";
  sim->add_option("--scenario", sim_scenario, "random-intercepts | random-slope | <config.json>");
  sim->add_option("--reps", sim_reps, "Number of datasets (default: scenario preset)");
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "Master seed");
  sim->add_option("--out", sim_out, "Output directory")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a single dataset");
  std::string fit_data, fit_meta, fit_optimizer = "rntr", fit_trace;
  fit->add_option("--data", fit_data, "Dataset CSV")->required();
  fit->add_option("--meta", fit_meta, "Metadata JSON (default: <data>.meta.json)");
  fit->add_option("--optimizer", fit_optimizer, "rntr | rcg");
  fit->add_option("--trace", fit_trace, "Write objective trace CSV here");
  CommonTuning fit_tuning;
  fit_tuning.attach(*fit);

  // bench
  auto* bench = app.add_subcommand("bench", "Run a replicated experiment");
  std::string bench_scenario = "random-intercepts", bench_optimizers = "rntr,rcg", bench_out, bench_emit;
  int bench_reps = 0, bench_threads = 0;
  std::uint64_t bench_seed = 0;
  bench->add_option("--scenario", bench_scenario, "random-intercepts | random-slope | <config.json> | <dataset dir>");
  bench->add_option("--optimizers", bench_optimizers, "Comma list: rntr,rcg");
  bench->add_option("--reps", bench_reps, "Replications (default: scenario preset)");
  bench->add_option("--seed", bench_seed, "Master seed")->required();
  bench->add_option("--out", bench_out, "Output directory")->required();
  bench->add_option("--threads", bench_threads, "Worker threads (default: cores)");
  bench->add_option("--emit", bench_emit, "Comma list: csv_summary,jsonl_runs,trace_csv");
  CommonTuning bench_tuning;
  bench_tuning.attach(*bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfigError;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_scenario, sim_reps, sim_seed, sim_seed_opt->count() > 0, sim_out);
    if (fit->parsed()) return cmd_fit(fit_data, fit_meta, fit_optimizer, fit_trace, fit_tuning);
    if (bench->parsed())
      return cmd_bench(bench_scenario, bench_optimizers, bench_reps, bench_seed, bench_out, bench_threads,
                       bench_emit, bench_tuning);
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}
