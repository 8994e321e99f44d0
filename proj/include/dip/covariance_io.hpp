#pragma once

#include <dip/gaussian_lab.hpp>

#include <string>

namespace dip {

/// {dim, mean, eigenvalues, eigenbasis (row-major, flat), decay_exponent?, seed?};
/// numbers are written with 17 significant digits.
std::string covariance_to_json(const CovarianceModel<double>& model);

/// Parses and validates; throws InvalidParameter on malformed input.
CovarianceModel<double> covariance_from_json(const std::string& text);

/// Decimal with 17 significant digits, locale-independent.
std::string format_g17(double value);

}  // namespace dip
