#include <dip/covariance_io.hpp>

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <sstream>

namespace dip {

std::string format_g17(double value) {
  if (!std::isfinite(value)) throw InvalidParameter("format_g17: non-finite value");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

void write_array(std::ostringstream& out, const double* data, Index n) {
  out << '[';
  for (Index i = 0; i < n; ++i) out << (i ? "," : "") << format_g17(data[i]);
  out << ']';
}

std::vector<double> read_numbers(const nlohmann::json& doc, const char* key, std::size_t expected) {
  if (!doc.contains(key) || !doc[key].is_array()) throw InvalidParameter(std::string("covariance json: missing array '") + key + "'");
  std::vector<double> out;
  for (const auto& v : doc[key]) {
    if (!v.is_number()) throw InvalidParameter(std::string("covariance json: non-numeric entry in '") + key + "'");
    out.push_back(v.get<double>());
  }
  if (out.size() != expected) throw InvalidParameter(std::string("covariance json: wrong length for '") + key + "'");
  return out;
}

}  // namespace

std::string covariance_to_json(const CovarianceModel<double>& model) {
  std::ostringstream out;
  const Index d = model.dim();
  out << "{\"dim\":" << d << ",\"mean\":";
  write_array(out, model.mean.data(), d);
  out << ",\"eigenvalues\":";
  write_array(out, model.eigenvalues.data(), d);
  out << ",\"eigenbasis\":";
  const RowMatrixXd rows = model.eigenbasis;
  write_array(out, rows.data(), d * d);
  if (model.decay_exponent) out << ",\"decay_exponent\":" << format_g17(*model.decay_exponent);
  if (model.seed) out << ",\"seed\":" << *model.seed;
  out << "}\n";
  return out.str();
}

CovarianceModel<double> covariance_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidParameter(std::string("covariance json: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("dim") || !doc["dim"].is_number_integer())
    throw InvalidParameter("covariance json: missing integer 'dim'");
  const auto d = doc["dim"].get<Index>();
  require(d >= 1, "covariance json: dim must be >= 1");
  const auto n = static_cast<std::size_t>(d);

  CovarianceModel<double> model;
  const auto mean = read_numbers(doc, "mean", n);
  const auto eig = read_numbers(doc, "eigenvalues", n);
  const auto basis = read_numbers(doc, "eigenbasis", n * n);
  model.mean = Eigen::Map<const VectorXd>(mean.data(), d);
  model.eigenvalues = Eigen::Map<const VectorXd>(eig.data(), d);
  model.eigenbasis = Eigen::Map<const RowMatrixXd>(basis.data(), d, d);
  if (doc.contains("decay_exponent")) model.decay_exponent = doc["decay_exponent"].get<double>();
  if (doc.contains("seed")) model.seed = doc["seed"].get<std::uint64_t>();
  validate(model);
  return model;
}

}  // namespace dip
