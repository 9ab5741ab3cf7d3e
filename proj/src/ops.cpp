#include "owvis/ops.hpp"

#include <cmath>
#include <limits>

#include "owvis/rng.hpp"

namespace owvis {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tensor finish(Shape shape, std::vector<double> vals, const char* op) {
  apply_precision(vals);
  if (debug_checks_enabled()) {
    for (double v : vals) {
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw Error("non-finite", std::string(op) + " produced NaN or +inf");
      }
    }
  }
  return Tensor(std::move(shape), std::move(vals));
}

// Active tape if any input is recorded on it; validates against tensors
// recorded on a different (stale) tape.
Tape* recording_tape(std::initializer_list<const Tensor*> ins, const char* op) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  bool any = false;
  for (const Tensor* in : ins) {
    if (!in->recorded()) continue;
    if (in->tape_id() != tape->id()) {
      throw Error("stale-tensor", std::string(op) + ": input recorded on another tape");
    }
    any = true;
  }
  return any ? tape : nullptr;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error("shape-mismatch", std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  }
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw Error("shape-mismatch", std::string(op) + ": expected rank 2, got " + shape_str(t.shape()));
  }
}

void axpy(std::vector<double>& dst, const std::vector<double>& src, double c) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += c * src[i];
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  Tensor y = finish(a.shape(), std::move(out), "add");
  if (Tape* tape = recording_tape({&a, &b}, "add")) {
    int an = a.node(), bn = b.node();
    y.bind_node(tape->add_node(y.size(), {an, bn},
                               [an, bn](Tape& t, const std::vector<double>& g) {
                                 if (an >= 0) axpy(t.grad_buffer(an), g, 1.0);
                                 if (bn >= 0) axpy(t.grad_buffer(bn), g, 1.0);
                               }),
                tape->id());
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  Tensor y = finish(a.shape(), std::move(out), "sub");
  if (Tape* tape = recording_tape({&a, &b}, "sub")) {
    int an = a.node(), bn = b.node();
    y.bind_node(tape->add_node(y.size(), {an, bn},
                               [an, bn](Tape& t, const std::vector<double>& g) {
                                 if (an >= 0) axpy(t.grad_buffer(an), g, 1.0);
                                 if (bn >= 0) axpy(t.grad_buffer(bn), g, -1.0);
                               }),
                tape->id());
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  Tensor y = finish(a.shape(), std::move(out), "mul");
  if (Tape* tape = recording_tape({&a, &b}, "mul")) {
    int an = a.node(), bn = b.node();
    auto as = a.storage(), bs = b.storage();
    y.bind_node(tape->add_node(y.size(), {an, bn},
                               [an, bn, as, bs](Tape& t, const std::vector<double>& g) {
                                 if (an >= 0) {
                                   auto& ga = t.grad_buffer(an);
                                   for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bs)[i];
                                 }
                                 if (bn >= 0) {
                                   auto& gb = t.grad_buffer(bn);
                                   for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*as)[i];
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
  Tensor y = finish(a.shape(), std::move(out), "div");
  if (Tape* tape = recording_tape({&a, &b}, "div")) {
    int an = a.node(), bn = b.node();
    auto as = a.storage(), bs = b.storage();
    y.bind_node(tape->add_node(y.size(), {an, bn},
                               [an, bn, as, bs](Tape& t, const std::vector<double>& g) {
                                 if (an >= 0) {
                                   auto& ga = t.grad_buffer(an);
                                   for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*bs)[i];
                                 }
                                 if (bn >= 0) {
                                   auto& gb = t.grad_buffer(bn);
                                   for (size_t i = 0; i < g.size(); ++i) {
                                     gb[i] -= g[i] * (*as)[i] / ((*bs)[i] * (*bs)[i]);
                                   }
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor scale(const Tensor& a, double c) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
  Tensor y = finish(a.shape(), std::move(out), "scale");
  if (Tape* tape = recording_tape({&a}, "scale")) {
    int an = a.node();
    y.bind_node(tape->add_node(y.size(), {an},
                               [an, c](Tape& t, const std::vector<double>& g) {
                                 axpy(t.grad_buffer(an), g, c);
                               }),
                tape->id());
  }
  return y;
}

Tensor add_scalar(const Tensor& a, double c) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
  Tensor y = finish(a.shape(), std::move(out), "add_scalar");
  if (Tape* tape = recording_tape({&a}, "add_scalar")) {
    int an = a.node();
    y.bind_node(tape->add_node(y.size(), {an},
                               [an](Tape& t, const std::vector<double>& g) {
                                 axpy(t.grad_buffer(an), g, 1.0);
                               }),
                tape->id());
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  int n = a.dim(0), k = a.dim(1), k2 = b.dim(0), m = b.dim(1);
  if (k != k2) {
    throw Error("shape-mismatch",
                "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* arow = av.data() + static_cast<size_t>(i) * k;
    double* orow = out.data() + static_cast<size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + static_cast<size_t>(kk) * m;
      for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  Tensor y = finish({n, m}, std::move(out), "matmul");
  if (Tape* tape = recording_tape({&a, &b}, "matmul")) {
    int an = a.node(), bn = b.node();
    auto as = a.storage(), bs = b.storage();
    y.bind_node(
        tape->add_node(y.size(), {an, bn},
                       [an, bn, as, bs, n, k, m](Tape& t, const std::vector<double>& g) {
                         if (an >= 0) {
                           auto& ga = t.grad_buffer(an);  // g (n,m) * b^T (m,k)
                           for (int i = 0; i < n; ++i) {
                             for (int j = 0; j < m; ++j) {
                               double gij = g[static_cast<size_t>(i) * m + j];
                               if (gij == 0.0) continue;
                               const double* brow = bs->data();
                               for (int kk = 0; kk < k; ++kk) {
                                 ga[static_cast<size_t>(i) * k + kk] +=
                                     gij * brow[static_cast<size_t>(kk) * m + j];
                               }
                             }
                           }
                         }
                         if (bn >= 0) {
                           auto& gb = t.grad_buffer(bn);  // a^T (k,n) * g (n,m)
                           for (int i = 0; i < n; ++i) {
                             for (int kk = 0; kk < k; ++kk) {
                               double aik = (*as)[static_cast<size_t>(i) * k + kk];
                               if (aik == 0.0) continue;
                               for (int j = 0; j < m; ++j) {
                                 gb[static_cast<size_t>(kk) * m + j] +=
                                     aik * g[static_cast<size_t>(i) * m + j];
                               }
                             }
                           }
                         }
                       }),
        tape->id());
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose");
  int n = a.dim(0), m = a.dim(1);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      out[static_cast<size_t>(j) * n + i] = av[static_cast<size_t>(i) * m + j];
    }
  }
  Tensor y = finish({m, n}, std::move(out), "transpose");
  if (Tape* tape = recording_tape({&a}, "transpose")) {
    int an = a.node();
    y.bind_node(tape->add_node(y.size(), {an},
                               [an, n, m](Tape& t, const std::vector<double>& g) {
                                 auto& ga = t.grad_buffer(an);
                                 for (int j = 0; j < m; ++j) {
                                   for (int i = 0; i < n; ++i) {
                                     ga[static_cast<size_t>(i) * m + j] +=
                                         g[static_cast<size_t>(j) * n + i];
                                   }
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank2(x, "linear");
  check_rank2(w, "linear");
  if (b.rank() != 1) throw Error("shape-mismatch", "linear: bias must be rank 1");
  int n = x.dim(0), k = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != k || b.dim(0) != out_dim) {
    throw Error("shape-mismatch", "linear: x " + shape_str(x.shape()) + ", w " +
                                      shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  }
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<size_t>(n) * out_dim);
  for (int i = 0; i < n; ++i) {
    const double* xrow = xv.data() + static_cast<size_t>(i) * k;
    double* orow = out.data() + static_cast<size_t>(i) * out_dim;
    for (int o = 0; o < out_dim; ++o) {
      const double* wrow = wv.data() + static_cast<size_t>(o) * k;
      double acc = bv[static_cast<size_t>(o)];
      for (int kk = 0; kk < k; ++kk) acc += xrow[kk] * wrow[kk];
      orow[o] = acc;
    }
  }
  Tensor y = finish({n, out_dim}, std::move(out), "linear");
  if (Tape* tape = recording_tape({&x, &w, &b}, "linear")) {
    int xn = x.node(), wn = w.node(), bn = b.node();
    auto xs = x.storage(), ws = w.storage();
    y.bind_node(
        tape->add_node(y.size(), {xn, wn, bn},
                       [xn, wn, bn, xs, ws, n, k, out_dim](Tape& t, const std::vector<double>& g) {
                         if (xn >= 0) {
                           auto& gx = t.grad_buffer(xn);  // g (n,out) * w (out,k)
                           for (int i = 0; i < n; ++i) {
                             for (int o = 0; o < out_dim; ++o) {
                               double gio = g[static_cast<size_t>(i) * out_dim + o];
                               if (gio == 0.0) continue;
                               const double* wrow = ws->data() + static_cast<size_t>(o) * k;
                               double* gxrow = gx.data() + static_cast<size_t>(i) * k;
                               for (int kk = 0; kk < k; ++kk) gxrow[kk] += gio * wrow[kk];
                             }
                           }
                         }
                         if (wn >= 0) {
                           auto& gw = t.grad_buffer(wn);  // g^T (out,n) * x (n,k)
                           for (int i = 0; i < n; ++i) {
                             const double* xrow = xs->data() + static_cast<size_t>(i) * k;
                             for (int o = 0; o < out_dim; ++o) {
                               double gio = g[static_cast<size_t>(i) * out_dim + o];
                               if (gio == 0.0) continue;
                               double* gwrow = gw.data() + static_cast<size_t>(o) * k;
                               for (int kk = 0; kk < k; ++kk) gwrow[kk] += gio * xrow[kk];
                             }
                           }
                         }
                         if (bn >= 0) {
                           auto& gb = t.grad_buffer(bn);
                           for (int i = 0; i < n; ++i) {
                             for (int o = 0; o < out_dim; ++o) {
                               gb[static_cast<size_t>(o)] += g[static_cast<size_t>(i) * out_dim + o];
                             }
                           }
                         }
                       }),
        tape->id());
  }
  return y;
}

namespace {

// Shared row-softmax forward. Rows of width `w`; all--inf row index is
// reported through `bad_row`.
std::vector<double> softmax_rows(const std::vector<double>& x, int64_t rows, int w) {
  std::vector<double> out(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * w;
    double* orow = out.data() + r * w;
    double m = kNegInf;
    for (int j = 0; j < w; ++j) m = std::max(m, row[j]);
    if (m == kNegInf) throw Error("empty-attention-row", "softmax row " + std::to_string(r) + " is all -inf");
    double sum = 0.0;
    for (int j = 0; j < w; ++j) {
      double e = std::exp(row[j] - m);
      orow[j] = e;
      sum += e;
    }
    for (int j = 0; j < w; ++j) orow[j] /= sum;
  }
  return out;
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw Error("shape-mismatch", "softmax_lastdim: rank 0");
  int w = x.dim(x.rank() - 1);
  int64_t rows = x.size() / w;
  Tensor y = finish(x.shape(), softmax_rows(x.values(), rows, w), "softmax_lastdim");
  if (Tape* tape = recording_tape({&x}, "softmax_lastdim")) {
    int xn = x.node();
    auto ys = y.storage();
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, ys, rows, w](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (int64_t r = 0; r < rows; ++r) {
                                   const double* s = ys->data() + r * w;
                                   const double* gr = g.data() + r * w;
                                   double dot = 0.0;
                                   for (int j = 0; j < w; ++j) dot += gr[j] * s[j];
                                   double* gxr = gx.data() + r * w;
                                   for (int j = 0; j < w; ++j) gxr[j] += s[j] * (gr[j] - dot);
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor log_softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw Error("shape-mismatch", "log_softmax_lastdim: rank 0");
  int w = x.dim(x.rank() - 1);
  int64_t rows = x.size() / w;
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> soft(xv.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * w;
    double m = kNegInf;
    for (int j = 0; j < w; ++j) m = std::max(m, row[j]);
    if (m == kNegInf) throw Error("empty-attention-row", "log_softmax row is all -inf");
    double sum = 0.0;
    for (int j = 0; j < w; ++j) sum += std::exp(row[j] - m);
    double lse = m + std::log(sum);
    for (int j = 0; j < w; ++j) {
      out[r * w + j] = row[j] - lse;
      soft[r * w + j] = std::exp(row[j] - lse);
    }
  }
  Tensor y = finish(x.shape(), std::move(out), "log_softmax_lastdim");
  if (Tape* tape = recording_tape({&x}, "log_softmax_lastdim")) {
    int xn = x.node();
    auto sm = std::make_shared<std::vector<double>>(std::move(soft));
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, sm, rows, w](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (int64_t r = 0; r < rows; ++r) {
                                   const double* gr = g.data() + r * w;
                                   const double* s = sm->data() + r * w;
                                   double gsum = 0.0;
                                   for (int j = 0; j < w; ++j) gsum += gr[j];
                                   double* gxr = gx.data() + r * w;
                                   for (int j = 0; j < w; ++j) gxr[j] += gr[j] - s[j] * gsum;
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& add_mask) {
  check_rank2(q, "attention");
  check_rank2(k, "attention");
  check_rank2(v, "attention");
  check_rank2(add_mask, "attention");
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw Error("shape-mismatch", "attention: q " + shape_str(q.shape()) + ", k " +
                                      shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (add_mask.dim(0) != q.dim(0) || add_mask.dim(1) != k.dim(0)) {
    throw Error("shape-mismatch", "attention: mask " + shape_str(add_mask.shape()));
  }
  Tensor logits = add(matmul(q, transpose(k)), add_mask);
  return matmul(softmax_lastdim(logits), v);
}

Tensor gelu(const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  }
  Tensor y = finish(x.shape(), std::move(out), "gelu");
  if (Tape* tape = recording_tape({&x}, "gelu")) {
    int xn = x.node();
    auto xs = x.storage();
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, xs](Tape& t, const std::vector<double>& g) {
                                 constexpr double inv_sqrt2pi = 0.3989422804014326779;
                                 constexpr double is2 = 0.7071067811865475244;
                                 auto& gx = t.grad_buffer(xn);
                                 for (size_t i = 0; i < g.size(); ++i) {
                                   double z = (*xs)[i];
                                   double d = 0.5 * (1.0 + std::erf(z * is2)) +
                                              z * inv_sqrt2pi * std::exp(-0.5 * z * z);
                                   gx[i] += g[i] * d;
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor sigmoid(const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  Tensor y = finish(x.shape(), std::move(out), "sigmoid");
  if (Tape* tape = recording_tape({&x}, "sigmoid")) {
    int xn = x.node();
    auto ys = y.storage();
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, ys](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (size_t i = 0; i < g.size(); ++i) {
                                   double s = (*ys)[i];
                                   gx[i] += g[i] * s * (1.0 - s);
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor softplus(const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    double z = xv[i];
    out[i] = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor y = finish(x.shape(), std::move(out), "softplus");
  if (Tape* tape = recording_tape({&x}, "softplus")) {
    int xn = x.node();
    auto xs = x.storage();
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, xs](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (size_t i = 0; i < g.size(); ++i) {
                                   gx[i] += g[i] * stable_sigmoid((*xs)[i]);
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  const auto& xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  Tensor y = finish({1}, {acc}, "sum_all");
  if (Tape* tape = recording_tape({&x}, "sum_all")) {
    int xn = x.node();
    y.bind_node(tape->add_node(1, {xn},
                               [xn](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (double& v : gx) v += g[0];
                               }),
                tape->id());
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  const auto& xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  double n = static_cast<double>(xv.size());
  Tensor y = finish({1}, {acc / n}, "mean_all");
  if (Tape* tape = recording_tape({&x}, "mean_all")) {
    int xn = x.node();
    y.bind_node(tape->add_node(1, {xn},
                               [xn, n](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 double gi = g[0] / n;
                                 for (double& v : gx) v += gi;
                               }),
                tape->id());
  }
  return y;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_rank2(a, "concat_rows");
  check_rank2(b, "concat_rows");
  if (a.dim(1) != b.dim(1)) {
    throw Error("shape-mismatch", "concat_rows: " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  }
  int n1 = a.dim(0), n2 = b.dim(0), c = a.dim(1);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n1 + n2) * c);
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  Tensor y = finish({n1 + n2, c}, std::move(out), "concat_rows");
  if (Tape* tape = recording_tape({&a, &b}, "concat_rows")) {
    int an = a.node(), bn = b.node();
    size_t asz = a.values().size();
    y.bind_node(tape->add_node(y.size(), {an, bn},
                               [an, bn, asz](Tape& t, const std::vector<double>& g) {
                                 if (an >= 0) {
                                   auto& ga = t.grad_buffer(an);
                                   for (size_t i = 0; i < asz; ++i) ga[i] += g[i];
                                 }
                                 if (bn >= 0) {
                                   auto& gb = t.grad_buffer(bn);
                                   for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[asz + i];
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  check_rank2(x, "slice_rows");
  int n = x.dim(0), c = x.dim(1);
  if (start < 0 || count <= 0 || start + count > n) {
    throw Error("index-out-of-range", "slice_rows: [" + std::to_string(start) + ", " +
                                          std::to_string(start + count) + ") of " +
                                          std::to_string(n) + " rows");
  }
  const auto& xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<size_t>(start) * c,
                          xv.begin() + static_cast<size_t>(start + count) * c);
  Tensor y = finish({count, c}, std::move(out), "slice_rows");
  if (Tape* tape = recording_tape({&x}, "slice_rows")) {
    int xn = x.node();
    size_t off = static_cast<size_t>(start) * c;
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, off](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
                               }),
                tape->id());
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape s) {
  if (shape_numel(s) != x.size()) {
    throw Error("shape-mismatch", "reshape: " + shape_str(x.shape()) + " to " + shape_str(s));
  }
  Tensor y(std::move(s), x.values());
  if (Tape* tape = recording_tape({&x}, "reshape")) {
    int xn = x.node();
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn](Tape& t, const std::vector<double>& g) {
                                 axpy(t.grad_buffer(xn), g, 1.0);
                               }),
                tape->id());
  }
  return y;
}

Tensor select_lastdim(const Tensor& x, const std::vector<int>& idx) {
  check_rank2(x, "select_lastdim");
  int n = x.dim(0), v = x.dim(1);
  if (static_cast<int>(idx.size()) != n) {
    throw Error("shape-mismatch", "select_lastdim: need one index per row");
  }
  const auto& xv = x.values();
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (idx[static_cast<size_t>(i)] < 0 || idx[static_cast<size_t>(i)] >= v) {
      throw Error("index-out-of-range", "select_lastdim: index " +
                                            std::to_string(idx[static_cast<size_t>(i)]));
    }
    out[static_cast<size_t>(i)] = xv[static_cast<size_t>(i) * v + idx[static_cast<size_t>(i)]];
  }
  Tensor y = finish({n}, std::move(out), "select_lastdim");
  if (Tape* tape = recording_tape({&x}, "select_lastdim")) {
    int xn = x.node();
    auto ids = idx;
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, ids, v](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (size_t i = 0; i < g.size(); ++i) {
                                   gx[i * v + static_cast<size_t>(ids[i])] += g[i];
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  check_rank2(x, "layer_norm");
  int n = x.dim(0), c = x.dim(1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c || beta.dim(0) != c) {
    throw Error("shape-mismatch", "layer_norm: gain/bias must be rank 1 of width " +
                                      std::to_string(c));
  }
  constexpr double eps = 1e-5;
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < c; ++j) {
      double xh = (row[j] - mean) * is;
      xhat[static_cast<size_t>(i) * c + j] = xh;
      out[static_cast<size_t>(i) * c + j] = gv[static_cast<size_t>(j)] * xh + bv[static_cast<size_t>(j)];
    }
  }
  Tensor y = finish(x.shape(), std::move(out), "layer_norm");
  if (Tape* tape = recording_tape({&x, &gamma, &beta}, "layer_norm")) {
    int xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    auto gs = gamma.storage();
    y.bind_node(
        tape->add_node(y.size(), {xn, gn, bn},
                       [xn, gn, bn, xh, is, gs, n, c](Tape& t, const std::vector<double>& g) {
                         for (int i = 0; i < n; ++i) {
                           const double* gr = g.data() + static_cast<size_t>(i) * c;
                           const double* xr = xh->data() + static_cast<size_t>(i) * c;
                           if (gn >= 0) {
                             auto& gg = t.grad_buffer(gn);
                             for (int j = 0; j < c; ++j) gg[static_cast<size_t>(j)] += gr[j] * xr[j];
                           }
                           if (bn >= 0) {
                             auto& gb = t.grad_buffer(bn);
                             for (int j = 0; j < c; ++j) gb[static_cast<size_t>(j)] += gr[j];
                           }
                           if (xn >= 0) {
                             auto& gx = t.grad_buffer(xn);
                             double m1 = 0.0, m2 = 0.0;
                             for (int j = 0; j < c; ++j) {
                               double gh = gr[j] * (*gs)[static_cast<size_t>(j)];
                               m1 += gh;
                               m2 += gh * xr[j];
                             }
                             m1 /= c;
                             m2 /= c;
                             double s = (*is)[static_cast<size_t>(i)];
                             double* gxr = gx.data() + static_cast<size_t>(i) * c;
                             for (int j = 0; j < c; ++j) {
                               double gh = gr[j] * (*gs)[static_cast<size_t>(j)];
                               gxr[j] += s * (gh - m1 - xr[j] * m2);
                             }
                           }
                         }
                       }),
        tape->id());
  }
  return y;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  check_rank2(table, "embedding_rows");
  int v = table.dim(0), c = table.dim(1);
  const auto& tv = table.values();
  std::vector<double> out;
  out.reserve(ids.size() * static_cast<size_t>(c));
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw Error("index-out-of-range", "embedding_rows: id " + std::to_string(id));
    }
    out.insert(out.end(), tv.begin() + static_cast<size_t>(id) * c,
               tv.begin() + static_cast<size_t>(id + 1) * c);
  }
  Tensor y = finish({static_cast<int>(ids.size()), c}, std::move(out), "embedding_rows");
  if (Tape* tape = recording_tape({&table}, "embedding_rows")) {
    int tn = table.node();
    auto local_ids = ids;
    y.bind_node(tape->add_node(y.size(), {tn},
                               [tn, local_ids, c](Tape& t, const std::vector<double>& g) {
                                 auto& gt = t.grad_buffer(tn);
                                 for (size_t i = 0; i < local_ids.size(); ++i) {
                                   double* dst = gt.data() + static_cast<size_t>(local_ids[i]) * c;
                                   const double* src = g.data() + i * c;
                                   for (int j = 0; j < c; ++j) dst[j] += src[j];
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad) {
  if (x.rank() != 4) throw Error("shape-mismatch", "im2col: expected (t,h,w,c)");
  int tt = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (w + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw Error("shape-mismatch", "im2col: kernel larger than input");
  const auto& xv = x.values();
  int patch = kh * kw * c;
  std::vector<double> out(static_cast<size_t>(tt) * ho * wo * patch, 0.0);
  for (int t = 0; t < tt; ++t) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        size_t row = ((static_cast<size_t>(t) * ho + oy) * wo + ox) * patch;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            size_t src = ((static_cast<size_t>(t) * h + iy) * w + ix) * c;
            size_t dst = row + (static_cast<size_t>(ky) * kw + kx) * c;
            for (int ch = 0; ch < c; ++ch) out[dst + ch] = xv[src + ch];
          }
        }
      }
    }
  }
  Tensor y = finish({tt * ho * wo, patch}, std::move(out), "im2col");
  if (Tape* tape = recording_tape({&x}, "im2col")) {
    int xn = x.node();
    y.bind_node(
        tape->add_node(y.size(), {xn},
                       [xn, tt, h, w, c, kh, kw, stride, pad, ho, wo](Tape& t2,
                                                                      const std::vector<double>& g) {
                         auto& gx = t2.grad_buffer(xn);
                         int patch = kh * kw * c;
                         for (int t = 0; t < tt; ++t) {
                           for (int oy = 0; oy < ho; ++oy) {
                             for (int ox = 0; ox < wo; ++ox) {
                               size_t row = ((static_cast<size_t>(t) * ho + oy) * wo + ox) *
                                            static_cast<size_t>(patch);
                               for (int ky = 0; ky < kh; ++ky) {
                                 int iy = oy * stride - pad + ky;
                                 if (iy < 0 || iy >= h) continue;
                                 for (int kx = 0; kx < kw; ++kx) {
                                   int ix = ox * stride - pad + kx;
                                   if (ix < 0 || ix >= w) continue;
                                   size_t dst = ((static_cast<size_t>(t) * h + iy) * w + ix) *
                                                static_cast<size_t>(c);
                                   size_t src = row + (static_cast<size_t>(ky) * kw + kx) *
                                                          static_cast<size_t>(c);
                                   for (int ch = 0; ch < c; ++ch) gx[dst + ch] += g[src + ch];
                                 }
                               }
                             }
                           }
                         }
                       }),
        tape->id());
  }
  return y;
}

Tensor l2_normalize_rows(const Tensor& x) {
  check_rank2(x, "l2_normalize_rows");
  int n = x.dim(0), c = x.dim(1);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * c;
    double sq = 0.0;
    for (int j = 0; j < c; ++j) sq += row[j] * row[j];
    double r = std::max(std::sqrt(sq), 1e-30);
    norms[static_cast<size_t>(i)] = r;
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] = row[j] / r;
  }
  Tensor y = finish(x.shape(), std::move(out), "l2_normalize_rows");
  if (Tape* tape = recording_tape({&x}, "l2_normalize_rows")) {
    int xn = x.node();
    auto xs = x.storage();
    auto ns = std::make_shared<std::vector<double>>(std::move(norms));
    y.bind_node(tape->add_node(y.size(), {xn},
                               [xn, xs, ns, n, c](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 for (int i = 0; i < n; ++i) {
                                   const double* row = xs->data() + static_cast<size_t>(i) * c;
                                   const double* gr = g.data() + static_cast<size_t>(i) * c;
                                   double r = (*ns)[static_cast<size_t>(i)];
                                   double dot = 0.0;
                                   for (int j = 0; j < c; ++j) dot += gr[j] * row[j];
                                   double r3 = r * r * r;
                                   double* gxr = gx.data() + static_cast<size_t>(i) * c;
                                   for (int j = 0; j < c; ++j) {
                                     gxr[j] += gr[j] / r - row[j] * dot / r3;
                                   }
                                 }
                               }),
                tape->id());
  }
  return y;
}

Tensor neg_mean_pairwise_l1(const Tensor& x, const std::vector<int>& rows) {
  check_rank2(x, "neg_mean_pairwise_l1");
  int n = x.dim(0), c = x.dim(1);
  for (int r : rows) {
    if (r < 0 || r >= n) throw Error("index-out-of-range", "neg_mean_pairwise_l1: row " + std::to_string(r));
  }
  int64_t m = static_cast<int64_t>(rows.size());
  int64_t pairs = m * (m - 1) / 2;
  if (pairs == 0) return Tensor::scalar(0.0);
  const auto& xv = x.values();
  double acc = 0.0;
  for (size_t a = 0; a < rows.size(); ++a) {
    for (size_t b = a + 1; b < rows.size(); ++b) {
      const double* ra = xv.data() + static_cast<size_t>(rows[a]) * c;
      const double* rb = xv.data() + static_cast<size_t>(rows[b]) * c;
      for (int j = 0; j < c; ++j) acc += std::abs(ra[j] - rb[j]);
    }
  }
  Tensor y = finish({1}, {-acc / static_cast<double>(pairs)}, "neg_mean_pairwise_l1");
  if (Tape* tape = recording_tape({&x}, "neg_mean_pairwise_l1")) {
    int xn = x.node();
    auto xs = x.storage();
    auto ids = rows;
    double inv_p = 1.0 / static_cast<double>(pairs);
    y.bind_node(tape->add_node(1, {xn},
                               [xn, xs, ids, c, inv_p](Tape& t, const std::vector<double>& g) {
                                 auto& gx = t.grad_buffer(xn);
                                 double go = g[0] * inv_p;
                                 for (size_t a = 0; a < ids.size(); ++a) {
                                   for (size_t b = a + 1; b < ids.size(); ++b) {
                                     const double* ra = xs->data() + static_cast<size_t>(ids[a]) * c;
                                     const double* rb = xs->data() + static_cast<size_t>(ids[b]) * c;
                                     double* ga = gx.data() + static_cast<size_t>(ids[a]) * c;
                                     double* gb = gx.data() + static_cast<size_t>(ids[b]) * c;
                                     for (int j = 0; j < c; ++j) {
                                       double d = ra[j] - rb[j];
                                       double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                                       ga[j] -= go * s;
                                       gb[j] += go * s;
                                     }
                                   }
                                 }
                               }),
                tape->id());
  }
  return y;
}

GradCheckResult finite_diff_check(const std::function<Tensor()>& f,
                                  const std::vector<Parameter*>& params, double eps,
                                  int64_t coord_budget, uint64_t sample_seed) {
  if (get_precision() != Precision::f64) {
    throw Error("finite-diff-precision", "gradient checks require the 64-bit mode");
  }
  if (eps < 1e-7 || eps > 1e-3) {
    throw Error("finite-diff-eps", "eps must lie in [1e-7, 1e-3]");
  }
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Tensor loss = f();
    if (std::isnan(loss.value())) throw Error("finite-diff-nan", "f evaluated to NaN");
    tape.backward(loss);
    collect_gradients(tape, params);
  }

  struct Coord {
    size_t param;
    size_t index;
  };
  std::vector<Coord> coords;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t i = 0; i < params[pi]->values().size(); ++i) coords.push_back({pi, i});
  }
  if (coord_budget > 0 && static_cast<int64_t>(coords.size()) > coord_budget) {
    Rng rng(sample_seed);
    for (int64_t i = 0; i < coord_budget; ++i) {
      int j = rng.uniform_int(static_cast<int>(i), static_cast<int>(coords.size()) - 1);
      std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
    }
    coords.resize(static_cast<size_t>(coord_budget));
  }

  auto eval = [&]() {
    double v = f().value();
    if (std::isnan(v)) throw Error("finite-diff-nan", "f evaluated to NaN");
    return v;
  };

  GradCheckResult result;
  for (const Coord& c : coords) {
    auto& vals = params[c.param]->values();
    double saved = vals[c.index];
    vals[c.index] = saved + eps;
    double fp = eval();
    vals[c.index] = saved - eps;
    double fm = eval();
    vals[c.index] = saved;
    double fd = (fp - fm) / (2.0 * eps);
    double ad = params[c.param]->grad()[c.index];
    double rel = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.coords_checked;
  }
  return result;
}

}  // namespace owvis
