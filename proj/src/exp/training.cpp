#include "training.hpp"

#include <dip/nn/ops.hpp>

#include <chrono>
#include <cmath>
#include <iostream>

namespace dip::exp {

nn::Var rows_constant(const MatrixXd& m) {
  const RowMatrixXd r = m;
  return nn::constant({{m.rows(), m.cols()}, Eigen::Map<const VectorXd>(r.data(), r.size())});
}

nn::AdamWConfig adamw_config(const TrainingSection& cfg) {
  nn::AdamWConfig c;
  c.learning_rate = cfg.learning_rate;
  c.weight_decay = cfg.weight_decay;
  return c;
}

TrainResult train_flow(nn::ParameterStore& store, nn::AdamW& opt, const TrainingSection& cfg, std::uint64_t seed,
                       const BatchSource& source, const FlowForward& forward, nn::Ema* ema) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    const FlowBatch data = source(step);
    const FmBatch batch = draw_fm_batch(data.x0, derive_stream(seed, static_cast<std::uint64_t>(step)), cfg.time_sampling);
    store.zero_grad();
    const nn::Var loss = nn::mse(forward(batch.x_t, batch.t, data.labels), rows_constant(batch.target));
    const double value = loss.value()(0);
    if (!std::isfinite(value)) throw Divergence("training: non-finite loss", step);
    nn::backward(loss);
    opt.step(store);
    if (ema) ema->update(store);
    result.losses.push_back(value);
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      std::cerr << "step " << step + 1 << " loss " << value << "\n";
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace dip::exp
