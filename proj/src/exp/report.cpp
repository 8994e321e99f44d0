#include <dip/covariance_io.hpp>
#include <dip/exp/report.hpp>
#include <dip/io.hpp>

#include <json.hpp>

#include <cmath>

namespace dip::exp {

void RunReport::add(std::string name, double value, std::string estimator, Index samples) {
  metrics.push_back({std::move(name), value, std::move(estimator), samples});
}

const Metric& RunReport::metric(const std::string& name) const {
  for (const auto& m : metrics)
    if (m.name == name) return m;
  throw InvalidParameter("report: no metric '" + name + "'");
}

std::string RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["experiment"] = experiment;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["passed"] = passed;
  auto& ms = j["metrics"] = nlohmann::ordered_json::array();
  for (const auto& m : metrics) {
    nlohmann::ordered_json e;
    e["name"] = m.name;
    // Non-finite values have no JSON literal.
    if (std::isfinite(m.value))
      e["value"] = m.value;
    else
      e["value"] = std::isnan(m.value) ? "nan" : (m.value > 0 ? "inf" : "-inf");
    e["estimator"] = m.estimator;
    e["samples"] = m.samples;
    ms.push_back(std::move(e));
  }
  j["artifacts"] = artifacts;
  j["failures"] = failures;
  return j.dump(2) + "\n";
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
  require(!header_.empty(), "csv: empty header");
}

void CsvTable::row(std::vector<Cell> cells) {
  require(cells.size() == header_.size(), "csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                                              std::to_string(header_.size()));
  body_.push_back(std::move(cells));
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&](const auto& cells, auto render) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += render(cells[i]);
    }
    out += '\n';
  };
  line(header_, [](const std::string& s) { return s; });
  for (const auto& r : body_)
    line(r, [](const Cell& c) {
      if (const auto* s = std::get_if<std::string>(&c)) return *s;
      if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
      return format_g17(std::get<double>(c));
    });
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const { atomic_write(path, str()); }

}  // namespace dip::exp
