#include <dip/io.hpp>
#include <dip/nn/checkpoint.hpp>

#include <bit>
#include <cstring>
#include <set>

namespace dip::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'I', 'P', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void put_values(const VectorXd& v) { out_.append(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size()); }
  void put_raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    return std::string(take(n), n);
  }
  VectorXd get_values(std::uint64_t n) {
    if (n > bytes_.size() / sizeof(double)) fail("value block longer than file");
    VectorXd v(static_cast<Index>(n));
    std::memcpy(v.data(), take(n * sizeof(double)), n * sizeof(double));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > bytes_.size() - pos_) fail("truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] static void fail(const std::string& why) { throw InvalidParameter("checkpoint: " + why); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_named_vectors(Writer& w, const std::vector<std::string>& names, const std::vector<const std::vector<VectorXd>*>& blocks) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    w.put_string(names[i]);
    w.put<std::uint64_t>(static_cast<std::uint64_t>((*blocks[0])[i].size()));
    for (const auto* b : blocks) w.put_values((*b)[i]);
  }
}

}  // namespace

Checkpoint capture(const ParameterStore& store, const AdamW* optimizer, const Ema* ema, std::uint64_t seed,
                   std::uint64_t step) {
  Checkpoint c;
  c.seed = seed;
  c.step = step;
  for (const auto& p : store.entries()) c.params.push_back({p.name, p.var.tensor(), p.trainable});
  if (optimizer)
    c.optimizer = OptimizerSnapshot{optimizer->config(), optimizer->steps(), optimizer->names(), optimizer->first_moments(),
                                    optimizer->second_moments()};
  if (ema) c.ema = EmaSnapshot{ema->decay(), ema->names(), ema->shadow()};
  return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.put_raw(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(c.version);
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint64_t>(c.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    w.put_string(p.name);
    w.put<std::uint8_t>(p.trainable ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.shape.size()));
    for (Index d : p.tensor.shape) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.put_values(p.tensor.data);
  }
  w.put<std::uint8_t>(c.optimizer ? 1 : 0);
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    w.put<std::uint64_t>(static_cast<std::uint64_t>(o.step));
    for (double v : {o.config.learning_rate, o.config.weight_decay, o.config.beta1, o.config.beta2, o.config.eps}) w.put(v);
    put_named_vectors(w, o.names, {&o.m, &o.v});
  }
  w.put<std::uint8_t>(c.ema ? 1 : 0);
  if (c.ema) {
    w.put(c.ema->decay);
    put_named_vectors(w, c.ema->names, {&c.ema->shadow});
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) Reader::fail("bad magic");
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) Reader::fail("unsupported version " + std::to_string(c.version));
  c.seed = r.get<std::uint64_t>();
  c.step = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor p;
    p.name = r.get_string();
    p.trainable = r.get<std::uint8_t>() != 0;
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) Reader::fail("implausible rank for '" + p.name + "'");
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>();
      p.tensor.shape.push_back(static_cast<Index>(d));
      count *= d;
    }
    p.tensor.data = r.get_values(count);
    c.params.push_back(std::move(p));
  }
  if (r.get<std::uint8_t>()) {
    OptimizerSnapshot o;
    o.step = static_cast<std::int64_t>(r.get<std::uint64_t>());
    o.config.learning_rate = r.get<double>();
    o.config.weight_decay = r.get<double>();
    o.config.beta1 = r.get<double>();
    o.config.beta2 = r.get<double>();
    o.config.eps = r.get<double>();
    const auto k = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < k; ++i) {
      o.names.push_back(r.get_string());
      const auto len = r.get<std::uint64_t>();
      o.m.push_back(r.get_values(len));
      o.v.push_back(r.get_values(len));
    }
    c.optimizer = std::move(o);
  }
  if (r.get<std::uint8_t>()) {
    EmaSnapshot e;
    e.decay = r.get<double>();
    const auto k = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < k; ++i) {
      e.names.push_back(r.get_string());
      e.shadow.push_back(r.get_values(r.get<std::uint64_t>()));
    }
    c.ema = std::move(e);
  }
  if (!r.done()) Reader::fail("trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) { atomic_write(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void restore_parameters(const Checkpoint& ckpt, ParameterStore& store, LoadMode mode) {
  std::set<std::string> seen;
  for (const auto& p : ckpt.params) {
    if (!store.contains(p.name)) throw InvalidParameter("checkpoint: parameter '" + p.name + "' not present in model");
    Var v = store.get(p.name);
    if (v.shape() != p.tensor.shape)
      throw ShapeMismatch("checkpoint: parameter '" + p.name + "' has shape " + shape_string(p.tensor.shape) +
                          ", model expects " + shape_string(v.shape()));
    seen.insert(p.name);
  }
  if (mode == LoadMode::exact)
    for (const auto& name : store.names())
      if (!seen.count(name)) throw InvalidParameter("checkpoint: missing parameter '" + name + "'");
  for (const auto& p : ckpt.params) {
    Var v = store.get(p.name);
    v.mutable_value() = p.tensor.data;
  }
}

void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer) {
  if (!ckpt.optimizer) throw InvalidParameter("checkpoint: no optimizer state");
  if (ckpt.optimizer->names != optimizer.names()) throw InvalidParameter("checkpoint: optimizer parameter list differs");
  optimizer.restore(ckpt.optimizer->step, ckpt.optimizer->m, ckpt.optimizer->v);
}

void restore_ema(const Checkpoint& ckpt, Ema& ema) {
  if (!ckpt.ema) throw InvalidParameter("checkpoint: no EMA state");
  if (ckpt.ema->names != ema.names()) throw InvalidParameter("checkpoint: EMA parameter list differs");
  for (std::size_t i = 0; i < ema.names().size(); ++i)
    if (ckpt.ema->shadow[i].size() != ema.shadow()[i].size())
      throw ShapeMismatch("checkpoint: EMA shape mismatch for '" + ema.names()[i] + "'");
  ema.shadow() = ckpt.ema->shadow;
}

}  // namespace dip::nn
