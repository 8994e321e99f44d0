#pragma once

// Property suite over the closed-form operators: oracle equivalence, the
// single-patch reduction, monotone gain, the spectral-expansion trend and
// high-band attenuation. Each property yields one CSV table.

#include <dip/exp/config.hpp>
#include <dip/exp/report.hpp>

namespace dip::exp {

struct PropertyResult {
  std::string name;
  bool passed = true;
  double worst = 0.0;   // largest residual, or the most adverse trend step
  std::string failure;  // first failing row, empty on success
  CsvTable table;
};

struct TheorySuiteResult {
  std::vector<PropertyResult> properties;
  bool passed() const;
  const PropertyResult& property(const std::string& name) const;
};

TheorySuiteResult run_theory_suite(const TheorySection& config, std::uint64_t seed);

}  // namespace dip::exp
