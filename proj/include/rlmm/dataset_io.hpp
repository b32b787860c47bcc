// Dataset file format: a CSV with header (response `y`, fixed covariates
// `x1..x{p-1}` with the intercept implicit, grouping columns `g1..gK` holding
// integer levels 1..M_j, and named slope-covariate columns for factors with
// q_j > 1) plus a JSON sidecar declaring K, (M_j, q_j) and which column feeds
// each random-effect column ("1" marks an all-ones intercept column).
#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rlmm/design.hpp"
#include "rlmm/simulate.hpp"

namespace rlmm {

using Json = nlohmann::json;

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

struct LoadedDataset {
  LmmProblem problem;
  std::optional<DatasetTruth> truth;  // present when the sidecar records it
};

inline Json scenario_to_json(const Scenario& s) {
  Json j;
  j["n"] = s.n;
  j["beta"] = std::vector<double>(s.beta_true.data(), s.beta_true.data() + s.beta_true.size());
  j["sigma2"] = s.sigma2_true;
  j["n_datasets"] = s.n_datasets;
  j["seed"] = s.seed;
  j["strict_balance"] = s.strict_balance;
  Json factors = Json::array();
  for (const auto& f : s.factors) {
    Json jf;
    jf["levels"] = f.levels;
    jf["q"] = f.q;
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < f.psi_true.rows(); ++r)
      rows.push_back(std::vector<double>(f.psi_true.row(r).begin(), f.psi_true.row(r).end()));
    jf["psi"] = rows;
    factors.push_back(jf);
  }
  j["factors"] = factors;
  return j;
}

inline Scenario scenario_from_json(const Json& j) {
  Scenario s;
  if (j.contains("n")) s.n = j.at("n").get<int>();
  if (j.contains("beta")) {
    const auto beta = j.at("beta").get<std::vector<double>>();
    s.beta_true = Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  }
  if (j.contains("sigma2")) s.sigma2_true = j.at("sigma2").get<double>();
  if (j.contains("n_datasets")) s.n_datasets = j.at("n_datasets").get<int>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("strict_balance")) s.strict_balance = j.at("strict_balance").get<bool>();
  s.factors.clear();
  for (const auto& jf : j.at("factors")) {
    FactorScenario f;
    f.levels = jf.at("levels").get<int>();
    f.q = jf.at("q").get<int>();
    const auto rows = jf.at("psi").get<std::vector<std::vector<double>>>();
    f.psi_true.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        f.psi_true(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    s.factors.push_back(std::move(f));
  }
  s.validate();
  return s;
}

inline Json truth_to_json(const DatasetTruth& truth) {
  Json j;
  j["beta"] = std::vector<double>(truth.beta.data(), truth.beta.data() + truth.beta.size());
  j["sigma2"] = truth.sigma2;
  Json psis = Json::array();
  for (const auto& m : truth.psi) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    psis.push_back(rows);
  }
  j["psi"] = psis;
  return j;
}

inline DatasetTruth truth_from_json(const Json& j) {
  DatasetTruth t;
  std::vector<double> beta = j.at("beta").get<std::vector<double>>();
  t.beta = Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  t.sigma2 = j.at("sigma2").get<double>();
  for (const auto& pm : j.at("psi")) {
    const auto rows = pm.get<std::vector<std::vector<double>>>();
    Matrix m(rows.size(), rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    t.psi.push_back(m);
  }
  return t;
}

/// Writes `<stem>.csv` and `<stem>.meta.json`.
inline void write_dataset(const std::string& stem, const LmmProblem& problem,
                          const DatasetTruth* truth = nullptr) {
  const int n = problem.n();
  const int p = problem.p();
  const GroupedDesign& g = problem.grouped();

  std::vector<std::string> header{"y"};
  for (int c = 1; c < p; ++c) header.push_back("x" + std::to_string(c));
  for (int j = 0; j < g.factor_count(); ++j) header.push_back("g" + std::to_string(j + 1));
  Json factors = Json::array();
  for (int j = 0; j < g.factor_count(); ++j) {
    const GroupFactor& f = g.factor(j);
    Json jf;
    jf["name"] = "g" + std::to_string(j + 1);
    jf["levels"] = f.levels();
    jf["q"] = f.q();
    Json cols = Json::array();
    cols.push_back("1");  // leading random column is the intercept
    for (int c = 1; c < f.q(); ++c) {
      std::string col = "z" + std::to_string(j + 1) + "_" + std::to_string(c + 1);
      header.push_back(col);
      cols.push_back(col);
    }
    jf["columns"] = cols;
    factors.push_back(jf);
  }

  std::ofstream csv(stem + ".csv");
  if (!csv) throw std::runtime_error("write_dataset: cannot open " + stem + ".csv");
  for (std::size_t c = 0; c < header.size(); ++c) csv << (c ? "," : "") << header[c];
  csv << "\n";
  for (int i = 0; i < n; ++i) {
    csv << detail::format_double(problem.y()(i));
    for (int c = 1; c < p; ++c) csv << "," << detail::format_double(problem.fixed().x()(i, c));
    for (int j = 0; j < g.factor_count(); ++j)
      csv << "," << (g.factor(j).level_of_obs()[static_cast<std::size_t>(i)] + 1);
    for (int j = 0; j < g.factor_count(); ++j)
      for (int c = 1; c < g.factor(j).q(); ++c)
        csv << "," << detail::format_double(g.factor(j).z_rows()(i, c));
    csv << "\n";
  }
  csv.close();

  Json meta;
  meta["version"] = 1;
  meta["n"] = n;
  meta["p"] = p;
  meta["K"] = g.factor_count();
  meta["factors"] = factors;
  if (truth) meta["truth"] = truth_to_json(*truth);
  std::ofstream mf(stem + ".meta.json");
  if (!mf) throw std::runtime_error("write_dataset: cannot open " + stem + ".meta.json");
  mf << meta.dump(2) << "\n";
}

/// Loads a dataset written by write_dataset (or assembled by hand in the same
/// format).
inline LoadedDataset load_dataset(const std::string& csv_path, const std::string& meta_path) {
  std::ifstream mf(meta_path);
  if (!mf) throw std::runtime_error("load_dataset: cannot open " + meta_path);
  Json meta = Json::parse(mf);

  std::ifstream csv(csv_path);
  if (!csv) throw std::runtime_error("load_dataset: cannot open " + csv_path);
  std::string line;
  if (!std::getline(csv, line)) throw std::runtime_error("load_dataset: empty CSV");
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::map<std::string, int> col_of;
  for (std::size_t c = 0; c < header.size(); ++c) col_of[header[c]] = static_cast<int>(c);

  std::vector<std::vector<double>> rows;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) throw std::runtime_error("load_dataset: ragged CSV row");
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) row[c] = std::stod(cells[c]);
    rows.push_back(std::move(row));
  }
  const int n = static_cast<int>(rows.size());
  const int p = meta.at("p").get<int>();
  if (meta.at("n").get<int>() != n) throw std::runtime_error("load_dataset: CSV row count differs from metadata");

  const auto column = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end()) throw std::runtime_error("load_dataset: missing column " + name);
    return it->second;
  };

  Vector y(n);
  for (int i = 0; i < n; ++i) y(i) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(column("y"))];
  Matrix x = Matrix::Ones(n, p);
  for (int c = 1; c < p; ++c) {
    const int idx = column("x" + std::to_string(c));
    for (int i = 0; i < n; ++i) x(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(idx)];
  }

  std::vector<GroupFactor> factors;
  for (const auto& jf : meta.at("factors")) {
    const int levels = jf.at("levels").get<int>();
    const int q = jf.at("q").get<int>();
    const int gcol = column(jf.at("name").get<std::string>());
    std::vector<int> lev(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int l = static_cast<int>(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(gcol)]);
      if (l < 1 || l > levels) throw std::runtime_error("load_dataset: level out of range in " + jf.at("name").get<std::string>());
      lev[static_cast<std::size_t>(i)] = l - 1;
    }
    Matrix zr = Matrix::Ones(n, q);
    const auto cols = jf.at("columns").get<std::vector<std::string>>();
    if (static_cast<int>(cols.size()) != q) throw std::runtime_error("load_dataset: columns list must have q entries");
    for (int c = 0; c < q; ++c) {
      if (cols[static_cast<std::size_t>(c)] == "1") continue;
      const int idx = column(cols[static_cast<std::size_t>(c)]);
      for (int i = 0; i < n; ++i) zr(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(idx)];
    }
    factors.emplace_back(levels, q, std::move(lev), std::move(zr));
  }

  std::optional<DatasetTruth> truth;
  if (meta.contains("truth")) truth = truth_from_json(meta.at("truth"));
  return LoadedDataset{LmmProblem(FixedDesign(std::move(x)), GroupedDesign(n, std::move(factors)), std::move(y)),
                       std::move(truth)};
}

}  // namespace rlmm
