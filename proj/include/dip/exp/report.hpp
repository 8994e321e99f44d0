#pragma once

#include <dip/common.hpp>

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace dip::exp {

struct Metric {
  std::string name;
  double value = 0.0;
  std::string estimator;  // how the value was computed
  Index samples = 0;      // draws behind the estimate (1 for exact quantities)
};

struct RunReport {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string config_hash;
  double wall_clock_seconds = 0.0;
  bool passed = true;
  std::vector<Metric> metrics;
  std::vector<std::string> artifacts;
  std::vector<std::string> failures;  // one line per failed property

  void add(std::string name, double value, std::string estimator, Index samples);
  const Metric& metric(const std::string& name) const;
  std::string to_json() const;
};

// Header row, comma separated, reals at 17 significant digits.
class CsvTable {
 public:
  using Cell = std::variant<std::string, long long, double>;

  explicit CsvTable(std::vector<std::string> header);
  void row(std::vector<Cell> cells);
  std::size_t rows() const { return body_.size(); }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<Cell>> body_;
};

}  // namespace dip::exp
