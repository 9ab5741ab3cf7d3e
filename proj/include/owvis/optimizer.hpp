#pragma once

#include <cstdint>
#include <vector>

#include "owvis/tensor.hpp"

namespace owvis {

// Adam with decoupled weight decay. Frozen parameters must not be passed
// in. Moment buffers stay 64-bit regardless of the precision mode; updated
// parameter values are rounded per the active precision.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  AdamW() = default;
  AdamW(const std::vector<Parameter*>& params, double lr, double weight_decay);

  void step();       // applies param.grad() and advances the step counter
  void zero_grad();  // clears every parameter's gradient buffer
  int64_t steps_done() const { return t_; }

 private:
  struct Slot {
    Parameter* p;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double lr_ = 0.0, wd_ = 0.0;
  int64_t t_ = 0;
};

// Scales gradients so their joint L2 norm is at most max_norm; returns the
// norm before clipping. max_norm <= 0 is a no-op.
double clip_global_norm(const std::vector<Parameter*>& params, double max_norm);

}  // namespace owvis
