#pragma once

// Branching-curve toy: y(x) = A sin(2 pi f0 x + phi) plus K signed offshoots
// s_k B exp(-u^2 / 2w^2) sin(2 pi m f0 u / L), u = n - c_k, at jittered,
// evenly spaced sites c_k, plus white noise.

#include <dip/exp/config.hpp>

namespace dip::exp {

// Rows are curves sampled at x_n = n / L.
MatrixXd generate_toy_curves(const ToyManifoldSpec& spec, Index count, std::uint64_t seed);

// Per-row energy of DCT-II coefficients [begin, end) of each row.
VectorXd dct_band_energy(const MatrixXd& rows, Index begin, Index end);

}  // namespace dip::exp
