#include "owvis/prompt_encoder.hpp"

#include <cmath>

namespace owvis {

PromptEncoder::PromptEncoder(ParamSet& ps, Rng& rng, int grid, int dim, double fourier_scale)
    : grid_(grid), dim_(dim) {
  if (grid < 1 || dim < 2 || dim % 2 != 0)
    throw Error("bad-config", "prompt grid needs an even channel width");
  freq_ = make_param(ps, rng, "prompt.freq", {dim / 2, 2}, fourier_scale, /*frozen=*/true);
  mlp_ = Mlp2(ps, rng, "prompt.mlp", dim, dim, dim);
  points_.reserve(static_cast<size_t>(count()) * 2);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      points_.push_back((gx + 0.5) / grid);
      points_.push_back((gy + 0.5) / grid);
    }
}

Tensor PromptEncoder::encode() const {
  const int n = count();
  const int half = dim_ / 2;
  const std::vector<double>& f = freq_->values();
  std::vector<double> lifted(static_cast<size_t>(n) * dim_);
  for (int i = 0; i < n; ++i) {
    double x = points_[2 * i], y = points_[2 * i + 1];
    for (int j = 0; j < half; ++j) {
      double angle = 2.0 * M_PI * (f[2 * j] * x + f[2 * j + 1] * y);
      lifted[static_cast<size_t>(i) * dim_ + j] = std::sin(angle);
      lifted[static_cast<size_t>(i) * dim_ + half + j] = std::cos(angle);
    }
  }
  apply_precision(lifted);
  return mlp_(Tensor({n, dim_}, std::move(lifted)));
}

}  // namespace owvis
