#pragma once

// Risk oracles: the black-box map (lambda, seed) -> empirical adversarial risk.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosac/grid.hpp"
#include "prosac/hb_stats.hpp"
#include "prosac/seed.hpp"

namespace prosac {

using json = nlohmann::json;

enum class OracleKind { analytic, table, subprocess };

inline std::string_view to_string(OracleKind kind) {
  switch (kind) {
    case OracleKind::analytic: return "analytic";
    case OracleKind::table: return "table";
    case OracleKind::subprocess: return "subprocess";
  }
  return "unknown";
}

struct OracleDescriptor {
  OracleKind kind = OracleKind::analytic;
  json attack_metadata = json::object();  // attack name, budget, norm, model id
  bool concurrency_safe = false;
  std::int64_t n = 1;
};

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownLambda : public OracleError {
 public:
  explicit UnknownLambda(std::span<const double> lambda)
      : OracleError("lambda " + format_point(lambda) + " is not in the oracle's grid") {}
};

/// Interface every risk oracle implements. evaluate() must be a pure function
/// of (oracle configuration, lambda, seed); the seed carries the attack's
/// residual randomness.
class RiskOracle {
 public:
  virtual ~RiskOracle() = default;

  [[nodiscard]] virtual const OracleDescriptor& descriptor() const = 0;
  virtual RiskEstimate evaluate(std::span<const double> lambda, Seed seed,
                                bool per_sample = false) = 0;
  /// Canonical description of the configuration, hashed into verdicts.
  [[nodiscard]] virtual json fingerprint_source() const = 0;
};

inline std::string fingerprint(const RiskOracle& oracle) {
  const std::string canonical = oracle.fingerprint_source().dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(mix64(tag_hash(canonical))));
  return buf;
}

enum class Coupling {
  shared,      // one calibration set attacked under every lambda
  independent  // fresh Bernoulli draws per lambda
};

inline std::string_view to_string(Coupling c) {
  return c == Coupling::shared ? "shared" : "independent";
}

/// Synthetic oracle over a grid with known true risk per point. A seed stands
/// for one calibration draw: sample i gets uniform u_i and counts as an attack
/// success at lambda when u_i < risk(lambda).
class AnalyticOracle final : public RiskOracle {
 public:
  AnalyticOracle(HyperGrid grid, std::vector<double> true_risk, std::int64_t n,
                 Coupling coupling = Coupling::shared, json metadata = json::object())
      : grid_(std::move(grid)), true_risk_(std::move(true_risk)), coupling_(coupling) {
    if (true_risk_.size() != grid_.size()) {
      throw std::invalid_argument("AnalyticOracle: " + std::to_string(true_risk_.size()) +
                                  " risks for " + std::to_string(grid_.size()) + " grid points");
    }
    for (double r : true_risk_) {
      if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("AnalyticOracle: risk outside [0,1]");
    }
    if (n < 1) throw std::invalid_argument("AnalyticOracle: n must be >= 1");
    desc_ = {OracleKind::analytic, std::move(metadata), true, n};
  }

  [[nodiscard]] const OracleDescriptor& descriptor() const override { return desc_; }
  [[nodiscard]] const HyperGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] const std::vector<double>& true_risk() const noexcept { return true_risk_; }
  [[nodiscard]] Coupling coupling() const noexcept { return coupling_; }

  /// Uniform assigned to calibration sample `sample` for grid point `index`.
  [[nodiscard]] double sample_uniform(Seed seed, std::size_t index, std::int64_t sample) const {
    const Seed stream =
        coupling_ == Coupling::shared ? seed : derive_seed(seed, "calibration-point", index);
    return to_unit_interval(derive_seed(stream, "calibration-sample", static_cast<std::uint64_t>(sample)));
  }

  RiskEstimate evaluate(std::span<const double> lambda, Seed seed, bool per_sample = false) override {
    const auto index = grid_.index_of(lambda);
    if (!index) throw UnknownLambda(lambda);
    const double risk = true_risk_[*index];
    std::int64_t hits = 0;
    std::vector<SampleOutcome> samples;
    if (per_sample) samples.reserve(static_cast<std::size_t>(desc_.n));
    for (std::int64_t i = 0; i < desc_.n; ++i) {
      const bool hit = sample_uniform(seed, *index, i) < risk;
      hits += hit ? 1 : 0;
      if (per_sample) samples.push_back({true, hit});
    }
    RiskEstimate out{static_cast<double>(hits) / static_cast<double>(desc_.n), desc_.n,
                     Point(lambda.begin(), lambda.end()), std::nullopt};
    if (per_sample) out.per_sample = std::move(samples);
    return out;
  }

  [[nodiscard]] json fingerprint_source() const override {
    json axes = json::array();
    for (const auto& a : grid_.axes()) axes.push_back({{"name", a.name}, {"values", a.values}});
    return {{"kind", "analytic"},   {"n", desc_.n},
            {"axes", axes},         {"risk", true_risk_},
            {"coupling", std::string(to_string(coupling_))},
            {"metadata", desc_.attack_metadata}};
  }

 private:
  HyperGrid grid_;
  std::vector<double> true_risk_;
  Coupling coupling_;
  OracleDescriptor desc_;
};

/// Tabulated risks: one row per grid point, one column per independent run.
struct RiskTable {
  HyperGrid grid;
  std::vector<std::vector<double>> runs;  // [point][run]
  std::int64_t n = 1;

  [[nodiscard]] std::size_t run_count() const { return runs.empty() ? 0 : runs.front().size(); }

  [[nodiscard]] double average(std::size_t point) const {
    const auto& row = runs.at(point);
    return std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  }

  void validate() const {
    if (runs.size() != grid.size()) {
      throw std::invalid_argument("RiskTable: " + std::to_string(runs.size()) + " rows for " +
                                  std::to_string(grid.size()) + " grid points");
    }
    if (n < 1) throw std::invalid_argument("RiskTable: n must be >= 1");
    const std::size_t r = run_count();
    if (r == 0) throw std::invalid_argument("RiskTable: at least one run column required");
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (runs[i].size() != r) {
        throw std::invalid_argument("RiskTable: row " + std::to_string(i) + " has " +
                                    std::to_string(runs[i].size()) + " runs, expected " +
                                    std::to_string(r));
      }
      for (std::size_t j = 0; j < r; ++j) {
        const double v = runs[i][j];
        if (!(v >= 0.0 && v <= 1.0)) {
          throw std::invalid_argument("RiskTable: row " + std::to_string(i) + " run_" +
                                      std::to_string(j + 1) + " = " + std::to_string(v) +
                                      " outside [0,1]");
        }
        if (!on_risk_lattice(v, n)) {
          throw std::invalid_argument("RiskTable: row " + std::to_string(i) + " run_" +
                                      std::to_string(j + 1) + " = " + std::to_string(v) +
                                      " is not a multiple of 1/n");
        }
      }
    }
  }
};

class TableFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TableFormat { csv, json };

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
      cell.remove_suffix(1);
    }
    out.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_double(std::string_view text, double& out) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TableFormatError("cannot open table file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RiskTable parse_table_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> TableFormatError {
    return TableFormatError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    for (auto cell : split_csv_line(line)) header.emplace_back(cell);
    break;
  }
  if (header.empty()) throw fail("missing header row");
  if (header.back() != "n") throw fail("last header column must be 'n', got '" + header.back() + "'");

  std::size_t first_run = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].rfind("run_", 0) == 0) {
      first_run = c;
      break;
    }
  }
  const std::size_t axis_count = first_run;
  if (axis_count == 0) throw fail("header names no grid axes before run_1");
  if (first_run >= header.size() - 1) throw fail("header names no run_ columns");
  const std::size_t run_count = header.size() - 1 - first_run;
  for (std::size_t r = 0; r < run_count; ++r) {
    const std::string expected = "run_" + std::to_string(r + 1);
    if (header[first_run + r] != expected) {
      throw fail("header column " + std::to_string(first_run + r + 1) + " must be '" + expected +
                 "', got '" + header[first_run + r] + "'");
    }
  }

  std::vector<Point> coords;
  std::vector<std::vector<double>> runs;
  std::vector<std::size_t> row_lines;
  std::int64_t n = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw fail("expected " + std::to_string(header.size()) + " fields, got " +
                 std::to_string(cells.size()));
    }
    Point p(axis_count);
    std::vector<double> row(run_count);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      if (!parse_double(cells[c], v) || !std::isfinite(v)) {
        throw fail("field '" + header[c] + "' is not a number: '" + std::string(cells[c]) + "'");
      }
      if (c < axis_count) {
        p[c] = v;
      } else if (c < axis_count + run_count) {
        if (!(v >= 0.0 && v <= 1.0)) {
          throw fail("field '" + header[c] + "' = " + std::string(cells[c]) + " outside [0,1]");
        }
        row[c - axis_count] = v;
      } else {
        if (v < 1.0 || v != std::floor(v)) throw fail("field 'n' must be a positive integer");
        const auto row_n = static_cast<std::int64_t>(v);
        if (n >= 0 && row_n != n) throw fail("field 'n' changes from " + std::to_string(n) +
                                             " to " + std::to_string(row_n));
        n = row_n;
      }
    }
    for (std::size_t r = 0; r < run_count; ++r) {
      if (!on_risk_lattice(row[r], n)) {
        throw fail("field 'run_" + std::to_string(r + 1) + "' is not a multiple of 1/n");
      }
    }
    coords.push_back(std::move(p));
    runs.push_back(std::move(row));
    row_lines.push_back(line_no);
  }
  if (coords.empty()) throw fail("table has no data rows");

  std::vector<GridAxis> axes(axis_count);
  for (std::size_t d = 0; d < axis_count; ++d) {
    axes[d].name = header[d];
    for (const auto& p : coords) {
      if (std::find(axes[d].values.begin(), axes[d].values.end(), p[d]) == axes[d].values.end()) {
        axes[d].values.push_back(p[d]);
      }
    }
    std::sort(axes[d].values.begin(), axes[d].values.end());
  }
  RiskTable table{HyperGrid(std::move(axes)), std::move(runs), n};
  if (coords.size() != table.grid.size()) {
    throw TableFormatError(origin + ": dimension error: " + std::to_string(coords.size()) +
                           " rows but the axes span " + std::to_string(table.grid.size()) +
                           " grid points");
  }
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i] != table.grid.point(i)) {
      throw TableFormatError(origin + ":" + std::to_string(row_lines[i]) +
                             ": rows are not in lexicographic grid order");
    }
  }
  return table;
}

inline RiskTable parse_table_json(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw TableFormatError(origin + ": " + e.what());
  }
  try {
    std::vector<GridAxis> axes;
    for (const auto& a : doc.at("axes")) {
      axes.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<double>>()});
    }
    RiskTable table{HyperGrid(std::move(axes)),
                    doc.at("runs").get<std::vector<std::vector<double>>>(),
                    doc.at("n").get<std::int64_t>()};
    if (table.runs.size() != table.grid.size()) {
      throw TableFormatError(origin + ": dimension error: " + std::to_string(table.runs.size()) +
                             " rows but the axes span " + std::to_string(table.grid.size()) +
                             " grid points");
    }
    table.validate();
    return table;
  } catch (const json::exception& e) {
    throw TableFormatError(origin + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw TableFormatError(origin + ": " + e.what());
  }
}

}  // namespace detail

inline RiskTable load_table(const std::string& path, TableFormat format) {
  const std::string text = detail::read_file(path);
  RiskTable table = format == TableFormat::csv ? detail::parse_table_csv(text, path)
                                               : detail::parse_table_json(text, path);
  table.validate();
  return table;
}

/// Shortest round-trip decimal, independent of the C locale.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_table_csv(const RiskTable& table, std::ostream& out) {
  for (const auto& axis : table.grid.axes()) out << axis.name << ',';
  for (std::size_t r = 0; r < table.run_count(); ++r) out << "run_" << (r + 1) << ',';
  out << "n\n";
  for (std::size_t i = 0; i < table.grid.size(); ++i) {
    for (double c : table.grid.point(i)) out << format_double(c) << ',';
    for (double v : table.runs[i]) out << format_double(v) << ',';
    out << table.n << '\n';
  }
}

/// Oracle over a RiskTable: seed selects run (seed mod R); kAverageSeed
/// returns the run average, which is generally off the 1/n lattice.
class TableOracle final : public RiskOracle {
 public:
  explicit TableOracle(RiskTable table, json metadata = json::object())
      : table_(std::move(table)) {
    table_.validate();
    desc_ = {OracleKind::table, std::move(metadata), true, table_.n};
  }

  [[nodiscard]] const OracleDescriptor& descriptor() const override { return desc_; }
  [[nodiscard]] const RiskTable& table() const noexcept { return table_; }

  RiskEstimate evaluate(std::span<const double> lambda, Seed seed, bool /*per_sample*/ = false) override {
    const auto index = table_.grid.index_of(lambda);
    if (!index) throw UnknownLambda(lambda);
    const double risk = seed == kAverageSeed ? table_.average(*index)
                                             : table_.runs[*index][seed % table_.run_count()];
    return {risk, table_.n, Point(lambda.begin(), lambda.end()), std::nullopt};
  }

  [[nodiscard]] json fingerprint_source() const override {
    json axes = json::array();
    for (const auto& a : table_.grid.axes()) axes.push_back({{"name", a.name}, {"values", a.values}});
    return {{"kind", "table"}, {"n", table_.n}, {"axes", axes},
            {"runs", table_.runs}, {"metadata", desc_.attack_metadata}};
  }

 private:
  RiskTable table_;
  OracleDescriptor desc_;
};

/// Memoizes evaluate() on (lambda, seed, per_sample). Concurrent readers,
/// serialized writers.
class CachedOracle final : public RiskOracle {
 public:
  explicit CachedOracle(std::shared_ptr<RiskOracle> inner) : inner_(std::move(inner)) {
    if (!inner_) throw std::invalid_argument("CachedOracle: null oracle");
  }

  [[nodiscard]] const OracleDescriptor& descriptor() const override { return inner_->descriptor(); }

  RiskEstimate evaluate(std::span<const double> lambda, Seed seed, bool per_sample = false) override {
    Key key{Point(lambda.begin(), lambda.end()), seed, per_sample};
    {
      std::shared_lock lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    RiskEstimate fresh = inner_->evaluate(lambda, seed, per_sample);
    std::unique_lock lock(mutex_);
    return cache_.try_emplace(std::move(key), std::move(fresh)).first->second;
  }

  [[nodiscard]] json fingerprint_source() const override { return inner_->fingerprint_source(); }

  [[nodiscard]] std::size_t cache_size() const {
    std::shared_lock lock(mutex_);
    return cache_.size();
  }

 private:
  struct Key {
    Point lambda;
    Seed seed;
    bool per_sample;
    auto operator<=>(const Key&) const = default;
  };

  std::shared_ptr<RiskOracle> inner_;
  mutable std::shared_mutex mutex_;
  std::map<Key, RiskEstimate> cache_;
};

}  // namespace prosac
