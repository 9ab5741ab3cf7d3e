#pragma once

#include "owvis/module.hpp"

namespace owvis {

// Turns a fixed grid of normalized point prompts into open-world query
// vectors. Each grid point is lifted by frozen random Fourier features and
// passed through a trainable two-layer map. Point (gx, gy) of a g x g grid
// sits at ((gx + 0.5) / g, (gy + 0.5) / g); rows are ordered row-major by
// (gy, gx).
class PromptEncoder {
 public:
  PromptEncoder() = default;
  PromptEncoder(ParamSet& ps, Rng& rng, int grid, int dim, double fourier_scale);

  int count() const { return grid_ * grid_; }
  int dim() const { return dim_; }

  // The (count, 2) matrix of prompt coordinates, rows as (x, y).
  const std::vector<double>& points() const { return points_; }

  // (count, dim) query matrix; recorded on the active tape through the
  // trainable map. The Fourier lift itself carries no gradient.
  Tensor encode() const;

 private:
  int grid_ = 0;
  int dim_ = 0;
  ParamPtr freq_;  // frozen (dim/2, 2) Fourier frequency matrix
  Mlp2 mlp_;
  std::vector<double> points_;
};

}  // namespace owvis
