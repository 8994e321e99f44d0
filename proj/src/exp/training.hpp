#pragma once

#include <dip/exp/config.hpp>
#include <dip/nn/optim.hpp>

#include <functional>

namespace dip::exp {

// Row-major constant from a column-major matrix.
nn::Var rows_constant(const MatrixXd& m);

struct FlowBatch {
  MatrixXd x0;
  std::vector<int> labels;  // empty for unconditional models
};

using BatchSource = std::function<FlowBatch(Index step)>;
// (x_t [B, dim], t, labels) -> prediction [B, dim].
using FlowForward = std::function<nn::Var(const MatrixXd&, std::span<const double>, std::span<const int>)>;

struct TrainResult {
  std::vector<double> losses;
  double seconds = 0.0;
};

nn::AdamWConfig adamw_config(const TrainingSection& cfg);

// AdamW on the flow-matching regression loss, one batch per step. Throws
// Divergence with the step index on a non-finite loss or gradient.
TrainResult train_flow(nn::ParameterStore& store, nn::AdamW& optimizer, const TrainingSection& cfg,
                       std::uint64_t seed, const BatchSource& source, const FlowForward& forward,
                       nn::Ema* ema = nullptr);

}  // namespace dip::exp
