#include <dip/exp/config.hpp>
#include <dip/io.hpp>

#include "experiment_schema.hpp"

#include <json.hpp>
#include <rapidjson/document.h>
#include <rapidjson/error/en.h>
#include <rapidjson/schema.h>
#include <rapidjson/stringbuffer.h>

#include <cmath>
#include <cstdio>

namespace dip::exp {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& section, const char* key, T& out) {
  if (section.contains(key)) out = section.at(key).get<T>();
}

void read_index(const json& section, const char* key, Index& out) {
  if (section.contains(key)) out = section.at(key).get<Index>();
}

template <typename E>
E enum_from(const std::string& text, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  for (const auto& [name, value] : table)
    if (text == name) return value;
  throw InvalidParameter(std::string("config: unknown ") + what + " '" + text + "'");
}

template <typename E>
std::string enum_to(E value, std::initializer_list<std::pair<const char*, E>> table) {
  for (const auto& [name, v] : table)
    if (v == value) return name;
  return "?";
}

const std::initializer_list<std::pair<const char*, Experiment>> kExperiments{
    {"theory-check", Experiment::theory_check},
    {"toy-manifold", Experiment::toy_manifold},
    {"overfit-image", Experiment::overfit_image},
    {"train-gaussian", Experiment::train_gaussian},
    {"sample", Experiment::sample}};
const std::initializer_list<std::pair<const char*, Conditioning>> kConditioning{
    {"additive", Conditioning::additive}, {"adaln_zero", Conditioning::adaln_zero}};
const std::initializer_list<std::pair<const char*, DetailerVariant>> kVariants{
    {"conv_unet", DetailerVariant::conv_unet},
    {"standard_mlp", DetailerVariant::standard_mlp},
    {"coordinate_mlp_stub", DetailerVariant::coordinate_mlp_stub},
    {"intra_patch_attention_stub", DetailerVariant::intra_patch_attention_stub},
    {"identity_stub", DetailerVariant::identity_stub},
    {"linear_readout_stub", DetailerVariant::linear_readout_stub}};
const std::initializer_list<std::pair<const char*, Placement>> kPlacements{
    {"post_hoc", Placement::post_hoc}, {"intermediate", Placement::intermediate}, {"hybrid", Placement::hybrid}};
const std::initializer_list<std::pair<const char*, TimeSampling>> kTimeSampling{
    {"uniform", TimeSampling::uniform}, {"logit_normal", TimeSampling::logit_normal}};
const std::initializer_list<std::pair<const char*, BasisKind>> kBasis{
    {"identity", BasisKind::identity}, {"dct", BasisKind::dct}, {"random_orthogonal", BasisKind::random_orthogonal}};

DetailerHeadConfig read_head(const json& j) {
  DetailerHeadConfig h;
  if (j.contains("variant")) h.variant = enum_from(j.at("variant").get<std::string>(), kVariants, "head variant");
  if (j.contains("channels")) h.channels = j.at("channels").get<std::vector<Index>>();
  read_index(j, "mlp_hidden", h.mlp_hidden);
  read_index(j, "stub_width", h.stub_width);
  return h;
}

void read_model(const json& j, DipConfig& m) {
  read_index(j, "height", m.scheme.height);
  read_index(j, "width", m.scheme.width);
  read_index(j, "channels", m.scheme.channels);
  read_index(j, "patch", m.scheme.patch);
  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    read_index(b, "layers", m.backbone.layers);
    read_index(b, "hidden", m.backbone.hidden);
    read_index(b, "heads", m.backbone.heads);
    read_index(b, "num_classes", m.backbone.num_classes);
    read_index(b, "time_frequencies", m.backbone.time_frequencies);
    read_index(b, "mlp_ratio", m.backbone.mlp_ratio);
    if (b.contains("conditioning"))
      m.backbone.conditioning = enum_from(b.at("conditioning").get<std::string>(), kConditioning, "conditioning");
  }
  if (j.contains("head")) {
    if (j.at("head").is_null())
      m.head.reset();
    else
      m.head = read_head(j.at("head"));
  }
  if (j.contains("placement")) {
    const json& p = j.at("placement");
    if (p.contains("mode")) m.placement.mode = enum_from(p.at("mode").get<std::string>(), kPlacements, "placement");
    read_index(p, "insertion_index", m.placement.insertion_index);
  }
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  c.model.head = DetailerHeadConfig{};
  c.experiment = enum_from(j.at("experiment").get<std::string>(), kExperiments, "experiment");
  read(j, "seed", c.seed);
  read(j, "output_dir", c.output_dir);

  if (j.contains("theory")) {
    const json& t = j.at("theory");
    auto& s = c.theory;
    read_index(t, "dim", s.dim);
    read_index(t, "patch_dim", s.patch_dim);
    read(t, "alphas", s.alphas);
    read(t, "times", s.times);
    read_index(t, "cases", s.cases);
    read_index(t, "max_dim", s.max_dim);
    read(t, "low_fraction", s.low_fraction);
    read_index(t, "expansion_dim", s.expansion_dim);
    read(t, "expansion_time", s.expansion_time);
    read_index(t, "gain_grid", s.gain_grid);
    read(t, "tolerance", s.tolerance);
    read(t, "corrupt_m_hat", s.corrupt_m_hat);
  }
  if (j.contains("toy")) {
    const json& t = j.at("toy");
    auto& s = c.toy;
    read_index(t, "length", s.length);
    read_index(t, "train_samples", s.train_samples);
    read_index(t, "test_samples", s.test_samples);
    read(t, "trunk_amplitude", s.trunk_amplitude);
    read(t, "trunk_frequency", s.trunk_frequency);
    read_index(t, "branches", s.branches);
    read(t, "branch_multiplier", s.branch_multiplier);
    read(t, "branch_amplitude", s.branch_amplitude);
    read(t, "branch_width", s.branch_width);
    read(t, "noise", s.noise);
    read_index(t, "window", s.window);
    read_index(t, "patch_hidden", s.patch_hidden);
    read_index(t, "image_hidden", s.image_hidden);
    read(t, "probe_t", s.probe_t);
    read_index(t, "plot_samples", s.plot_samples);
  }
  if (j.contains("model")) read_model(j.at("model"), c.model);
  if (j.contains("training")) {
    const json& t = j.at("training");
    auto& s = c.training;
    read_index(t, "steps", s.steps);
    read_index(t, "batch_size", s.batch_size);
    read(t, "learning_rate", s.learning_rate);
    read(t, "weight_decay", s.weight_decay);
    read(t, "ema_decay", s.ema_decay);
    read(t, "evaluate_ema", s.evaluate_ema);
    if (t.contains("time_sampling"))
      s.time_sampling = enum_from(t.at("time_sampling").get<std::string>(), kTimeSampling, "time sampling");
    read_index(t, "log_every", s.log_every);
  }
  if (j.contains("sampler")) {
    const json& t = j.at("sampler");
    read_index(t, "steps", c.sampler.steps);
    read_index(t, "samples", c.sampler.samples);
    read(t, "use_oracle", c.sampler.use_oracle);
  }
  if (j.contains("guidance")) {
    const json& g = j.at("guidance");
    read(g, "enabled", c.guidance.enabled);
    read(g, "scale", c.guidance.config.scale);
    if (g.contains("interval")) {
      c.guidance.config.interval_lo = g.at("interval")[0].get<double>();
      c.guidance.config.interval_hi = g.at("interval")[1].get<double>();
    }
    read(g, "null_label", c.guidance.config.null_label);
  }
  if (j.contains("overfit")) {
    const json& o = j.at("overfit");
    read(o, "image", c.overfit.image);
    read(o, "pattern", c.overfit.pattern);
    read(o, "solid_value", c.overfit.solid_value);
    read(o, "probe_t", c.overfit.probe_t);
  }
  if (j.contains("gaussian")) {
    const json& g = j.at("gaussian");
    read(g, "decay", c.gaussian.decay);
    read(g, "scale", c.gaussian.scale);
    if (g.contains("basis")) c.gaussian.basis = enum_from(g.at("basis").get<std::string>(), kBasis, "basis");
    read_index(g, "classes", c.gaussian.classes);
    read(g, "class_offset", c.gaussian.class_offset);
  }
  if (j.contains("checkpoint")) read(j.at("checkpoint"), "path", c.checkpoint);
  return c;
}

void check_semantics(const ExperimentConfig& c) {
  require(c.theory.dim % c.theory.patch_dim == 0, "config: theory.patch_dim must divide theory.dim");
  require(c.theory.expansion_dim % 4 == 0, "config: theory.expansion_dim must be a multiple of 4");
  require(c.theory.max_dim <= 64, "config: theory.max_dim above 64 is not supported");
  c.toy.validate();
  c.model.validate();
  c.guidance.config.validate();
  if (c.experiment == Experiment::train_gaussian || c.experiment == Experiment::sample)
    require(c.model.backbone.num_classes >= c.gaussian.classes,
            "config: model.backbone.num_classes must cover gaussian.classes");
}

json head_json(const DetailerHeadConfig& h) {
  return {{"variant", enum_to(h.variant, kVariants)},
          {"channels", h.channels},
          {"mlp_hidden", h.mlp_hidden},
          {"stub_width", h.stub_width}};
}

}  // namespace

void ToyManifoldSpec::validate() const {
  require(length >= 8, "toy: length must be >= 8");
  require(window >= 1 && length % window == 0, "toy: window must divide length");
  require(branch_multiplier > 1.0, "toy: branch frequency multiplier must exceed 1");
  require(branches >= 0, "toy: branch count must be non-negative");
  require(trunk_frequency > 0.0, "toy: trunk frequency must be positive");
  require(high_band_start() < length, "toy: high band is empty for this length");
  require(probe_t > 0.0 && probe_t < 1.0, "toy: probe_t must lie in (0,1)");
}

Index ToyManifoldSpec::high_band_start() const {
  // DCT-II index k carries k/2 cycles; frequencies above 2 f0 are k > 4 f0.
  return static_cast<Index>(std::floor(4.0 * trunk_frequency)) + 1;
}

const std::string& experiment_schema() {
  static const std::string text(kExperimentSchema);
  return text;
}

void validate_against_schema(const std::string& json_text) {
  rapidjson::Document schema_doc;
  schema_doc.Parse(experiment_schema().c_str());
  if (schema_doc.HasParseError()) throw InvalidParameter("config: embedded schema does not parse");
  const rapidjson::SchemaDocument schema(schema_doc);

  rapidjson::Document doc;
  doc.Parse(json_text.c_str());
  if (doc.HasParseError())
    throw InvalidParameter("config: JSON parse error at offset " + std::to_string(doc.GetErrorOffset()) + ": " +
                           rapidjson::GetParseError_En(doc.GetParseError()));
  rapidjson::SchemaValidator validator(schema);
  if (!doc.Accept(validator)) {
    rapidjson::StringBuffer where, rule;
    validator.GetInvalidDocumentPointer().StringifyUriFragment(where);
    validator.GetInvalidSchemaPointer().StringifyUriFragment(rule);
    throw InvalidParameter(std::string("config: schema violation at ") + where.GetString() + " (keyword '" +
                           validator.GetInvalidSchemaKeyword() + "', rule " + rule.GetString() + ")");
  }
}

ExperimentConfig parse_config(const std::string& json_text) {
  validate_against_schema(json_text);
  ExperimentConfig c = from_json(json::parse(json_text));
  check_semantics(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string experiment_name(Experiment e) { return enum_to(e, kExperiments); }

std::string canonical_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = experiment_name(c.experiment);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  const auto& th = c.theory;
  j["theory"] = {{"dim", th.dim},
                 {"patch_dim", th.patch_dim},
                 {"alphas", th.alphas},
                 {"times", th.times},
                 {"cases", th.cases},
                 {"max_dim", th.max_dim},
                 {"low_fraction", th.low_fraction},
                 {"expansion_dim", th.expansion_dim},
                 {"expansion_time", th.expansion_time},
                 {"gain_grid", th.gain_grid},
                 {"tolerance", th.tolerance},
                 {"corrupt_m_hat", th.corrupt_m_hat}};
  const auto& ty = c.toy;
  j["toy"] = {{"length", ty.length},
              {"train_samples", ty.train_samples},
              {"test_samples", ty.test_samples},
              {"trunk_amplitude", ty.trunk_amplitude},
              {"trunk_frequency", ty.trunk_frequency},
              {"branches", ty.branches},
              {"branch_multiplier", ty.branch_multiplier},
              {"branch_amplitude", ty.branch_amplitude},
              {"branch_width", ty.branch_width},
              {"noise", ty.noise},
              {"window", ty.window},
              {"patch_hidden", ty.patch_hidden},
              {"image_hidden", ty.image_hidden},
              {"probe_t", ty.probe_t},
              {"plot_samples", ty.plot_samples}};
  const auto& m = c.model;
  j["model"] = {{"height", m.scheme.height},
                {"width", m.scheme.width},
                {"channels", m.scheme.channels},
                {"patch", m.scheme.patch},
                {"backbone",
                 {{"layers", m.backbone.layers},
                  {"hidden", m.backbone.hidden},
                  {"heads", m.backbone.heads},
                  {"num_classes", m.backbone.num_classes},
                  {"time_frequencies", m.backbone.time_frequencies},
                  {"mlp_ratio", m.backbone.mlp_ratio},
                  {"conditioning", enum_to(m.backbone.conditioning, kConditioning)}}},
                {"head", m.head ? head_json(*m.head) : json(nullptr)},
                {"placement",
                 {{"mode", enum_to(m.placement.mode, kPlacements)},
                  {"insertion_index", m.placement.insertion_index}}}};
  const auto& tr = c.training;
  j["training"] = {{"steps", tr.steps},
                   {"batch_size", tr.batch_size},
                   {"learning_rate", tr.learning_rate},
                   {"weight_decay", tr.weight_decay},
                   {"ema_decay", tr.ema_decay},
                   {"evaluate_ema", tr.evaluate_ema},
                   {"time_sampling", enum_to(tr.time_sampling, kTimeSampling)},
                   {"log_every", tr.log_every}};
  j["sampler"] = {{"steps", c.sampler.steps}, {"samples", c.sampler.samples}, {"use_oracle", c.sampler.use_oracle}};
  j["guidance"] = {{"enabled", c.guidance.enabled},
                   {"scale", c.guidance.config.scale},
                   {"interval", {c.guidance.config.interval_lo, c.guidance.config.interval_hi}},
                   {"null_label", c.guidance.config.null_label}};
  j["overfit"] = {{"image", c.overfit.image},
                  {"pattern", c.overfit.pattern},
                  {"solid_value", c.overfit.solid_value},
                  {"probe_t", c.overfit.probe_t}};
  j["gaussian"] = {{"decay", c.gaussian.decay},
                   {"scale", c.gaussian.scale},
                   {"basis", enum_to(c.gaussian.basis, kBasis)},
                   {"classes", c.gaussian.classes},
                   {"class_offset", c.gaussian.class_offset}};
  j["checkpoint"] = {{"path", c.checkpoint}};
  return j.dump();
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canonical_json(config)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dip::exp
