#include "owvis/optimizer.hpp"

#include <cmath>

namespace owvis {

AdamW::AdamW(const std::vector<Parameter*>& params, double lr, double weight_decay)
    : lr_(lr), wd_(weight_decay) {
  for (Parameter* p : params) {
    if (p->frozen()) throw Error("bad-config", "frozen parameter handed to the optimizer");
    slots_.push_back({p, std::vector<double>(p->size(), 0.0), std::vector<double>(p->size(), 0.0)});
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (Slot& s : slots_) {
    std::vector<double>& w = s.p->values();
    const std::vector<double>& g = s.p->grad();
    for (size_t i = 0; i < w.size(); ++i) {
      s.m[i] = kBeta1 * s.m[i] + (1.0 - kBeta1) * g[i];
      s.v[i] = kBeta2 * s.v[i] + (1.0 - kBeta2) * g[i] * g[i];
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      w[i] -= lr_ * (mhat / (std::sqrt(vhat) + kEps) + wd_ * w[i]);
    }
    apply_precision(w);
  }
}

void AdamW::zero_grad() {
  for (Slot& s : slots_) s.p->zero_grad();
}

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (Parameter* p : params)
    for (double g : p->grad()) sq += g * g;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && norm > 0.0) {
    double f = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad()) g *= f;
  }
  return norm;
}

}  // namespace owvis
