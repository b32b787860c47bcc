// Batch experiment driver: generate or load datasets, run the selected
// optimizers, aggregate iteration/runtime/objective/MSE metrics, and emit
// machine-readable results (runs.jsonl + summary.csv + optional traces).
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rlmm/conjugate_gradient.hpp"
#include "rlmm/dataset_io.hpp"
#include "rlmm/objective.hpp"
#include "rlmm/simulate.hpp"
#include "rlmm/trust_region.hpp"

namespace rlmm {

enum class OptimizerKind { Rntr, Rcg };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::Rntr ? "rntr" : "rcg"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "rntr") return OptimizerKind::Rntr;
  if (s == "rcg") return OptimizerKind::Rcg;
  throw std::invalid_argument("unknown optimizer: " + s + " (expected rntr or rcg)");
}

/// Named variance-parameter estimates on the reporting scale:
/// sigma = exp(eta/2); per factor, tau (per-coordinate standard deviations,
/// rescaled by sigma from the optimizer's relative parameterization) and the
/// correlations rho. Order: factor parameters in factor order, sigma last.
inline std::vector<std::pair<std::string, double>> extract_estimates(const ThetaPoint& theta) {
  std::vector<std::pair<std::string, double>> out;
  const double sigma = std::exp(theta.eta / 2.0);
  for (std::size_t j = 0; j < theta.psi.size(); ++j) {
    const Matrix& psi = theta.psi[j].mat();
    const int q = static_cast<int>(psi.rows());
    const std::string fj = std::to_string(j + 1);
    if (q == 1) {
      out.emplace_back("tau" + fj, sigma * std::sqrt(psi(0, 0)));
      continue;
    }
    for (int a = 0; a < q; ++a)
      out.emplace_back("tau" + fj + "_" + std::to_string(a + 1), sigma * std::sqrt(psi(a, a)));
    for (int a = 0; a < q; ++a)
      for (int b = a + 1; b < q; ++b) {
        const std::string name =
            q == 2 ? "rho" + fj : "rho" + fj + "_" + std::to_string(a + 1) + std::to_string(b + 1);
        out.emplace_back(name, psi(a, b) / std::sqrt(psi(a, a) * psi(b, b)));
      }
  }
  out.emplace_back("sigma", sigma);
  return out;
}

/// Mean over replications of (estimate - truth)^2.
inline double mse(const std::vector<double>& estimates, double truth) {
  if (estimates.empty()) throw std::invalid_argument("mse: empty estimate list");
  double acc = 0.0;
  for (double e : estimates) acc += (e - truth) * (e - truth);
  return acc / static_cast<double>(estimates.size());
}

/// |L_R(theta_hat) - L_R(theta_true)|, reported for information only.
inline double deviation_LR(double L_at_thetahat, double L_at_truth) {
  return std::abs(L_at_thetahat - L_at_truth);
}

struct EmitOptions {
  bool csv_summary = true;
  bool jsonl_runs = true;
  bool trace_csv = false;
};

struct ExperimentConfig {
  std::optional<Scenario> scenario;  // generate datasets when set ...
  std::string dataset_dir;           // ... otherwise load dataset_<k>.csv from here
  std::vector<OptimizerKind> optimizers{OptimizerKind::Rntr, OptimizerKind::Rcg};
  TrustRegionConfig tr_cfg;
  StoppingConfig stop_cfg;
  RcgConfig rcg_cfg;
  std::string output_dir;  // empty: no files are written
  EmitOptions emit;
  int reps = 0;            // 0: scenario.n_datasets (or all datasets found)
  std::uint64_t seed = 0;  // master seed; overrides scenario.seed
  int threads = 0;         // 0: hardware concurrency

  void validate() const {
    if (optimizers.empty()) throw std::invalid_argument("ExperimentConfig: select at least one optimizer");
    if (!scenario && dataset_dir.empty())
      throw std::invalid_argument("ExperimentConfig: need a scenario or a dataset directory");
    if (scenario) scenario->validate();
  }
};

/// One replication x optimizer outcome.
struct ReplicationRecord {
  int replication = 0;
  std::string optimizer;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  int iters = 0;
  std::string termination;
  double L_R = 0.0;
  double L_R_per_obs = 0.0;
  double deviation_L_R = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> estimates;
  std::vector<std::pair<std::string, double>> truth;
  double wall_time_s = 0.0;
};

inline Json record_to_json(const ReplicationRecord& r) {
  Json j;
  j["replication"] = r.replication;
  j["optimizer"] = r.optimizer;
  j["seed"] = r.seed;
  j["failed"] = r.failed;
  if (r.failed) {
    j["error"] = r.error;
    return j;
  }
  j["iters"] = r.iters;
  j["termination"] = r.termination;
  j["L_R"] = r.L_R;
  j["L_R_per_obs"] = r.L_R_per_obs;
  if (std::isfinite(r.deviation_L_R)) j["deviation_L_R"] = r.deviation_L_R;
  Json est = Json::object();
  for (const auto& [k, v] : r.estimates) est[k] = v;
  j["estimates"] = est;
  if (!r.truth.empty()) {
    Json tr = Json::object();
    for (const auto& [k, v] : r.truth) tr[k] = v;
    j["truth"] = tr;
  }
  j["wall_time_s"] = r.wall_time_s;
  return j;
}

inline ReplicationRecord record_from_json(const Json& j) {
  ReplicationRecord r;
  r.replication = j.at("replication").get<int>();
  r.optimizer = j.at("optimizer").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.failed = j.at("failed").get<bool>();
  if (r.failed) {
    r.error = j.value("error", "");
    return r;
  }
  r.iters = j.at("iters").get<int>();
  r.termination = j.at("termination").get<std::string>();
  r.L_R = j.at("L_R").get<double>();
  r.L_R_per_obs = j.at("L_R_per_obs").get<double>();
  if (j.contains("deviation_L_R")) r.deviation_L_R = j.at("deviation_L_R").get<double>();
  for (const auto& [k, v] : j.at("estimates").items()) r.estimates.emplace_back(k, v.get<double>());
  if (j.contains("truth"))
    for (const auto& [k, v] : j.at("truth").items()) r.truth.emplace_back(k, v.get<double>());
  r.wall_time_s = j.at("wall_time_s").get<double>();
  return r;
}

struct OptimizerSummary {
  std::string optimizer;
  int n_used = 0;
  int n_failed = 0;
  double av_iters = 0.0;
  double median_iters = 0.0;
  double av_runtime_s = 0.0;
  double av_LR = 0.0;
  double av_deviation_LR = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> mse;  // mse_<param>, estimate order
};

struct MetricsSummary {
  std::vector<OptimizerSummary> per_optimizer;
  std::vector<ReplicationRecord> records;  // rep-major, optimizer order as configured
  int n_failed_total = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace detail

/// Aggregates per-optimizer summaries from replication records. Failed
/// replications are excluded from every average and counted.
inline MetricsSummary aggregate_records(std::vector<ReplicationRecord> records,
                                        const std::vector<OptimizerKind>& optimizers) {
  MetricsSummary summary;
  for (OptimizerKind kind : optimizers) {
    OptimizerSummary s;
    s.optimizer = to_string(kind);
    std::vector<double> iters, runtimes, lrs, devs;
    std::vector<std::pair<std::string, double>> truth_ref;
    std::vector<const ReplicationRecord*> ok;
    for (const auto& r : records) {
      if (r.optimizer != s.optimizer) continue;
      if (r.failed) {
        ++s.n_failed;
        continue;
      }
      ok.push_back(&r);
      iters.push_back(r.iters);
      runtimes.push_back(r.wall_time_s);
      lrs.push_back(r.L_R);
      if (std::isfinite(r.deviation_L_R)) devs.push_back(r.deviation_L_R);
      if (truth_ref.empty() && !r.truth.empty()) truth_ref = r.truth;
    }
    s.n_used = static_cast<int>(ok.size());
    const auto mean = [](const std::vector<double>& v) {
      return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                       : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    s.av_iters = mean(iters);
    s.median_iters = detail::median(iters);
    s.av_runtime_s = mean(runtimes);
    s.av_LR = mean(lrs);
    s.av_deviation_LR = mean(devs);
    if (!truth_ref.empty() && !ok.empty()) {
      for (const auto& [name, tv] : truth_ref) {
        std::vector<double> est;
        for (const auto* r : ok)
          for (const auto& [k, v] : r->estimates)
            if (k == name) est.push_back(v);
        if (!est.empty()) s.mse.emplace_back("mse_" + name, mse(est, tv));
      }
    }
    summary.per_optimizer.push_back(std::move(s));
    summary.n_failed_total += summary.per_optimizer.back().n_failed;
  }
  summary.records = std::move(records);
  return summary;
}

inline void write_runs_jsonl(const std::string& path, const std::vector<ReplicationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << "\n";
}

inline void write_summary_csv(const std::string& path, const MetricsSummary& summary) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> mse_cols;
  for (const auto& s : summary.per_optimizer)
    for (const auto& [name, value] : s.mse)
      if (std::find(mse_cols.begin(), mse_cols.end(), name) == mse_cols.end()) mse_cols.push_back(name);
  out << "optimizer,av_iters,av_runtime_s,av_LR,av_deviation_LR";
  for (const auto& c : mse_cols) out << "," << c;
  out << ",n_failed\n";
  for (const auto& s : summary.per_optimizer) {
    out << s.optimizer << "," << detail::format_double(s.av_iters) << ","
        << detail::format_double(s.av_runtime_s) << "," << detail::format_double(s.av_LR) << ","
        << detail::format_double(s.av_deviation_LR);
    for (const auto& c : mse_cols) {
      const auto it = std::find_if(s.mse.begin(), s.mse.end(), [&](const auto& e) { return e.first == c; });
      out << ",";
      if (it != s.mse.end()) out << detail::format_double(it->second);
    }
    out << "," << s.n_failed << "\n";
  }
}

inline void write_trace_csv(const std::string& path, const RunResult<ThetaPoint>& run) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "iter,objective,grad_norm\n";
  for (std::size_t i = 0; i < run.objective_trace.size(); ++i)
    out << i << "," << detail::format_double(run.objective_trace[i]) << ","
        << detail::format_double(run.grad_norm_trace[i]) << "\n";
}

/// Fits one problem with one optimizer.
inline RunResult<ThetaPoint> run_optimizer(OptimizerKind kind, const LmmProblem& problem,
                                           const ThetaPoint& theta0, const TrustRegionConfig& tr_cfg,
                                           const StoppingConfig& stop_cfg, const RcgConfig& rcg_cfg) {
  RemlFunction f(problem);
  return kind == OptimizerKind::Rntr ? rntr_solve(f, theta0, tr_cfg, stop_cfg)
                                     : rcg_solve(f, theta0, stop_cfg, rcg_cfg);
}

/// Runs the full experiment: one record per replication x optimizer,
/// replications dispatched to a bounded worker pool, deterministic record
/// order, aggregation as a single-threaded reduction. Emits files into
/// config.output_dir when set.
inline MetricsSummary run_experiment(const ExperimentConfig& config) {
  config.validate();

  Scenario scenario;
  bool generate = config.scenario.has_value();
  int reps = config.reps;
  if (generate) {
    scenario = *config.scenario;
    scenario.seed = config.seed;
    if (reps <= 0) reps = scenario.n_datasets;
  } else {
    if (reps <= 0) {
      reps = 0;
      while (std::filesystem::exists(std::filesystem::path(config.dataset_dir) /
                                     ("dataset_" + std::to_string(reps) + ".csv")))
        ++reps;
      if (reps == 0) throw std::invalid_argument("run_experiment: no dataset_<k>.csv found in " + config.dataset_dir);
    }
  }

  const int n_opt = static_cast<int>(config.optimizers.size());
  std::vector<ReplicationRecord> records(static_cast<std::size_t>(reps * n_opt));
  std::vector<std::optional<RunResult<ThetaPoint>>> runs;
  if (config.emit.trace_csv && !config.output_dir.empty())
    runs.resize(static_cast<std::size_t>(reps * n_opt));

  const auto run_one = [&](int rep) {
    try {
      std::optional<LoadedDataset> loaded;
      std::optional<SimulatedDataset> simulated;
      const LmmProblem* problem = nullptr;
      const DatasetTruth* truth = nullptr;
      std::uint64_t rep_seed = 0;
      if (generate) {
        rep_seed = stream_seed(scenario.seed, static_cast<std::uint64_t>(rep));
        simulated.emplace(generate_dataset(scenario, rep));
        problem = &simulated->problem;
        truth = &simulated->truth;
      } else {
        const auto stem = std::filesystem::path(config.dataset_dir) / ("dataset_" + std::to_string(rep));
        loaded.emplace(load_dataset(stem.string() + ".csv", stem.string() + ".meta.json"));
        problem = &loaded->problem;
        if (loaded->truth) truth = &*loaded->truth;
      }

      const ThetaPoint theta0 = init_theta(*problem);
      std::optional<double> l_at_truth;
      if (truth) l_at_truth = reml_value(*problem, truth_theta(*truth));

      for (int o = 0; o < n_opt; ++o) {
        ReplicationRecord& rec = records[static_cast<std::size_t>(rep * n_opt + o)];
        rec.replication = rep;
        rec.optimizer = to_string(config.optimizers[static_cast<std::size_t>(o)]);
        rec.seed = rep_seed;
        try {
          RunResult<ThetaPoint> run = run_optimizer(config.optimizers[static_cast<std::size_t>(o)], *problem,
                                                    theta0, config.tr_cfg, config.stop_cfg, config.rcg_cfg);
          rec.iters = run.iters;
          rec.termination = to_string(run.termination);
          rec.L_R = run.objective_trace.back();
          rec.L_R_per_obs = rec.L_R / problem->n();
          rec.estimates = extract_estimates(run.theta_final);
          if (truth) rec.truth = extract_estimates(truth_theta(*truth));
          if (l_at_truth) rec.deviation_L_R = deviation_LR(rec.L_R, *l_at_truth);
          rec.wall_time_s = run.wall_time_seconds;
          if (!runs.empty()) runs[static_cast<std::size_t>(rep * n_opt + o)] = std::move(run);
        } catch (const std::exception& e) {
          rec.failed = true;
          rec.error = e.what();
        }
      }
    } catch (const std::exception& e) {
      for (int o = 0; o < n_opt; ++o) {
        ReplicationRecord& rec = records[static_cast<std::size_t>(rep * n_opt + o)];
        rec.replication = rep;
        rec.optimizer = to_string(config.optimizers[static_cast<std::size_t>(o)]);
        rec.failed = true;
        rec.error = e.what();
      }
    }
  };

  int n_threads = config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, reps));
  if (n_threads == 1) {
    for (int rep = 0; rep < reps; ++rep) run_one(rep);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t)
      workers.emplace_back([&] {
        for (int rep = next.fetch_add(1); rep < reps; rep = next.fetch_add(1)) run_one(rep);
      });
    for (auto& w : workers) w.join();
  }

  MetricsSummary summary = aggregate_records(std::move(records), config.optimizers);

  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    const auto dir = std::filesystem::path(config.output_dir);
    if (config.emit.jsonl_runs) write_runs_jsonl((dir / "runs.jsonl").string(), summary.records);
    if (config.emit.csv_summary) write_summary_csv((dir / "summary.csv").string(), summary);
    if (config.emit.trace_csv)
      for (std::size_t i = 0; i < runs.size(); ++i)
        if (runs[i]) {
          const auto& rec = summary.records[i];
          write_trace_csv((dir / ("trace_" + rec.optimizer + "_" + std::to_string(rec.replication) + ".csv")).string(),
                          *runs[i]);
        }
  }
  return summary;
}

}  // namespace rlmm
