#pragma once

#include <memory>
#include <string>
#include <vector>

#include "owvis/ops.hpp"
#include "owvis/rng.hpp"
#include "owvis/tensor.hpp"

namespace owvis {

using ParamPtr = std::shared_ptr<Parameter>;

// Ordered collection of the parameters a model owns. Order is creation
// order and is the canonical order for optimizers and checkpoints.
struct ParamSet {
  std::vector<ParamPtr> items;

  ParamPtr add(ParamPtr p);
  std::vector<Parameter*> raw() const;
  std::vector<Parameter*> trainable() const;
  ParamPtr find(const std::string& name) const;  // nullptr when absent
  int64_t total_size() const;
};

// Gaussian-initialized parameter; stddev 0 gives an all-zero parameter.
ParamPtr make_param(ParamSet& ps, Rng& rng, const std::string& name, const Shape& shape,
                    double stddev, bool frozen = false);
ParamPtr make_const_param(ParamSet& ps, const std::string& name, const Shape& shape,
                          double value, bool frozen = false);

// Affine map y = x * w^T + b. Weights start Gaussian with stddev
// gain/sqrt(in); gain 0 zeroes the weight (bias always starts at 0).
struct LinearLayer {
  ParamPtr w, b;
  LinearLayer() = default;
  LinearLayer(ParamSet& ps, Rng& rng, const std::string& name, int in, int out,
              double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return linear(x, w->use(), b->use()); }
};

// Row normalization with learned gain (starts 1) and bias (starts 0).
struct LayerNormLayer {
  ParamPtr gamma, beta;
  LayerNormLayer() = default;
  LayerNormLayer(ParamSet& ps, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma->use(), beta->use()); }
};

// Two affine maps around a smooth nonlinearity.
struct Mlp2 {
  LinearLayer l1, l2;
  Mlp2() = default;
  Mlp2(ParamSet& ps, Rng& rng, const std::string& name, int in, int hidden, int out,
       double out_gain = 1.0);
  Tensor operator()(const Tensor& x) const { return l2(gelu(l1(x))); }
};

}  // namespace owvis
