#include "owvis/module.hpp"

#include <cmath>

namespace owvis {

ParamPtr ParamSet::add(ParamPtr p) {
  if (find(p->name())) throw Error("duplicate-param", "parameter exists: " + p->name());
  items.push_back(p);
  return items.back();
}

std::vector<Parameter*> ParamSet::raw() const {
  std::vector<Parameter*> out;
  out.reserve(items.size());
  for (const auto& p : items) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamSet::trainable() const {
  std::vector<Parameter*> out;
  for (const auto& p : items)
    if (!p->frozen()) out.push_back(p.get());
  return out;
}

ParamPtr ParamSet::find(const std::string& name) const {
  for (const auto& p : items)
    if (p->name() == name) return p;
  return nullptr;
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& p : items) n += p->size();
  return n;
}

ParamPtr make_param(ParamSet& ps, Rng& rng, const std::string& name, const Shape& shape,
                    double stddev, bool frozen) {
  auto p = std::make_shared<Parameter>(name, shape, frozen);
  if (stddev != 0.0)
    for (auto& v : p->values()) v = rng.gaussian() * stddev;
  apply_precision(p->values());
  return ps.add(p);
}

ParamPtr make_const_param(ParamSet& ps, const std::string& name, const Shape& shape,
                          double value, bool frozen) {
  auto p = std::make_shared<Parameter>(name, shape, frozen);
  for (auto& v : p->values()) v = value;
  apply_precision(p->values());
  return ps.add(p);
}

LinearLayer::LinearLayer(ParamSet& ps, Rng& rng, const std::string& name, int in, int out,
                         double gain) {
  w = make_param(ps, rng, name + ".w", {out, in}, gain / std::sqrt(static_cast<double>(in)));
  b = make_const_param(ps, name + ".b", {out}, 0.0);
}

LayerNormLayer::LayerNormLayer(ParamSet& ps, const std::string& name, int dim) {
  gamma = make_const_param(ps, name + ".g", {dim}, 1.0);
  beta = make_const_param(ps, name + ".b", {dim}, 0.0);
}

Mlp2::Mlp2(ParamSet& ps, Rng& rng, const std::string& name, int in, int hidden, int out,
           double out_gain) {
  l1 = LinearLayer(ps, rng, name + ".l1", in, hidden);
  l2 = LinearLayer(ps, rng, name + ".l2", hidden, out, out_gain);
}

}  // namespace owvis
