#pragma once

// Binary container, all integers and reals little-endian:
//   "DIPCKPT1"  u32 version  u64 seed  u64 step
//   u32 n_params, then per parameter:
//     u32 name_len, name bytes, u8 trainable, u32 rank, u64 dims[rank], f64 values[prod(dims)]
//   u8 has_optimizer; if set:
//     u64 step, f64 lr, f64 weight_decay, f64 beta1, f64 beta2, f64 eps,
//     u32 n, then per entry: u32 name_len, name bytes, u64 len, f64 m[len], f64 v[len]
//   u8 has_ema; if set:
//     f64 decay, u32 n, then per entry: u32 name_len, name bytes, u64 len, f64 shadow[len]

#include <dip/nn/optim.hpp>

#include <filesystem>

namespace dip::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

struct OptimizerSnapshot {
  AdamWConfig config;
  std::int64_t step = 0;
  std::vector<std::string> names;
  std::vector<VectorXd> m, v;
};

struct EmaSnapshot {
  double decay = 0.9999;
  std::vector<std::string> names;
  std::vector<VectorXd> shadow;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<NamedTensor> params;
  std::optional<OptimizerSnapshot> optimizer;
  std::optional<EmaSnapshot> ema;
};

Checkpoint capture(const ParameterStore& store, const AdamW* optimizer, const Ema* ema, std::uint64_t seed,
                   std::uint64_t step);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

enum class LoadMode {
  exact,   // the checkpoint and the store hold the same names
  subset,  // every checkpoint parameter exists in the store; others untouched
};

// Copies parameter values into `store`; shapes must match by name.
void restore_parameters(const Checkpoint& ckpt, ParameterStore& store, LoadMode mode = LoadMode::exact);
void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer);
void restore_ema(const Checkpoint& ckpt, Ema& ema);

}  // namespace dip::nn
