#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prosac/prosac.hpp"

#ifndef PROSAC_MOCK_RUNNER
#error "PROSAC_MOCK_RUNNER must name the mock runner executable"
#endif
#ifndef PROSAC_CLI
#define PROSAC_CLI "prosac"
#endif

namespace fixtures {

namespace fs = std::filesystem;
using namespace prosac;

inline const std::string kMockRunner = PROSAC_MOCK_RUNNER;
inline const std::string kCli = PROSAC_CLI;

class TempDir {
 public:
  TempDir() {
    std::string templ = (fs::temp_directory_path() / "prosac-test-XXXXXX").string();
    if (!::mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const fs::path& path() const { return path_; }
  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

/// Runs a command line; stderr goes to `stderr_path` if given. Returns the
/// exit status, or -1 if the process did not exit normally.
inline int run(const std::vector<std::string>& argv, const std::string& stderr_path = "") {
  std::string cmd;
  for (const auto& a : argv) cmd += shell_quote(a) + ' ';
  cmd += stderr_path.empty() ? "2>/dev/null" : "2>" + shell_quote(stderr_path);
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

inline std::vector<double> iota_axis(int count, double first = 1.0) {
  std::vector<double> v;
  for (int i = 0; i < count; ++i) v.push_back(first + i);
  return v;
}

/// Table whose run r at point i counts Bernoulli(risk[i]) hits over n draws.
inline RiskTable bernoulli_table(const HyperGrid& grid, const std::vector<double>& risk, int runs,
                                 std::int64_t n, Seed seed) {
  RiskTable t{grid, {}, n};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::vector<double> row;
    for (int r = 0; r < runs; ++r) {
      const Seed run_seed = derive_seed(seed, "run", static_cast<std::uint64_t>(r));
      std::int64_t hits = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        hits += to_unit_interval(derive_seed(run_seed, "s", i * 100000 + static_cast<std::uint64_t>(j))) < risk[i];
      }
      row.push_back(static_cast<double>(hits) / static_cast<double>(n));
    }
    t.runs.push_back(std::move(row));
  }
  return t;
}

/// 10x10 grid (eps, iters both 1..10); risk is a cone peaking at 0.08 in
/// the (10, 10) corner and falling by 0.1 per unit of normalized distance.
inline HyperGrid cone_grid() { return HyperGrid({{"eps", iota_axis(10)}, {"iters", iota_axis(10)}}); }

inline std::vector<double> cone_risk(const HyperGrid& grid) {
  std::vector<double> risk(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Point x = grid.normalized_point(i);
    risk[i] = std::max(0.0, 0.08 - 0.1 * std::hypot(1.0 - x[0], 1.0 - x[1]));
  }
  return risk;
}

inline RiskTable cone_table(Seed seed) {
  const HyperGrid g = cone_grid();
  return bernoulli_table(g, cone_risk(g), 5, 1000, seed);
}

/// Two Gaussian bumps on a 10x10 grid; centres and width drawn from `seed`.
/// Values are used directly as the objective.
inline std::vector<double> two_bump_surface(const HyperGrid& grid, Seed seed) {
  const double cx = to_unit_interval(derive_seed(seed, "cx"));
  const double cy = to_unit_interval(derive_seed(seed, "cy"));
  const double dx = to_unit_interval(derive_seed(seed, "dx"));
  const double dy = to_unit_interval(derive_seed(seed, "dy"));
  const double w = 0.2 + 0.2 * to_unit_interval(derive_seed(seed, "w"));
  std::vector<double> p(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Point x = grid.normalized_point(i);
    const double r1 = (x[0] - cx) * (x[0] - cx) + (x[1] - cy) * (x[1] - cy);
    const double r2 = (x[0] - dx) * (x[0] - dx) + (x[1] - dy) * (x[1] - dy);
    p[i] = 0.02 + 0.6 * std::exp(-r1 / (2 * w * w)) + 0.3 * std::exp(-r2 / (2 * 0.15 * 0.15));
  }
  return p;
}

inline std::string write_table(const TempDir& dir, const std::string& name, const RiskTable& t) {
  std::ostringstream out;
  write_table_csv(t, out);
  const std::string path = dir.file(name);
  spit(path, out.str());
  return path;
}

}  // namespace fixtures
