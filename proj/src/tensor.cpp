#include "owvis/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace owvis {

namespace {
Precision g_precision = Precision::f64;
bool g_debug_checks = false;
thread_local Tape* t_active_tape = nullptr;
std::atomic<uint64_t> g_next_tape_id{1};
}  // namespace

Precision get_precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

bool debug_checks_enabled() { return g_debug_checks; }
void set_debug_checks(bool on) { g_debug_checks = on; }

void apply_precision(std::vector<double>& values) {
  if (g_precision == Precision::f32) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (int d : shape_) {
    if (d <= 0) throw Error("bad-shape", "non-positive extent in " + shape_str(shape_));
  }
  if (shape_numel(shape_) != static_cast<int64_t>(values.size())) {
    throw Error("bad-shape", "shape " + shape_str(shape_) + " does not match " +
                                 std::to_string(values.size()) + " values");
  }
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(const Shape& s) {
  return Tensor(s, std::vector<double>(static_cast<size_t>(shape_numel(s)), 0.0));
}

Tensor Tensor::full(const Shape& s, double v) {
  return Tensor(s, std::vector<double>(static_cast<size_t>(shape_numel(s)), v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw Error("bad-shape", "dim index out of range");
  return shape_[static_cast<size_t>(i)];
}

const std::vector<double>& Tensor::values() const {
  if (!values_) throw Error("undefined-tensor", "access to default-constructed tensor");
  return *values_;
}

double Tensor::value() const {
  if (size() != 1) throw Error("bad-shape", "value() requires a scalar, got " + shape_str(shape_));
  return (*values_)[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw Error("bad-shape", "index rank mismatch");
  }
  int64_t flat = 0;
  int i = 0;
  for (int v : idx) {
    if (v < 0 || v >= shape_[static_cast<size_t>(i)]) throw Error("index-out-of-range", "at()");
    flat = flat * shape_[static_cast<size_t>(i)] + v;
    ++i;
  }
  return values()[static_cast<size_t>(flat)];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  t.tape_id_ = 0;
  return t;
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)), prev_active_(t_active_tape) {
  t_active_tape = this;
}

Tape::~Tape() { t_active_tape = prev_active_; }

Tape* Tape::active() { return t_active_tape; }

int Tape::add_node(int64_t out_numel, std::vector<int> parents, BackwardFn backward) {
  nodes_.push_back(Node{out_numel, std::move(parents), std::move(backward)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buffer(int node) {
  if (node < 0 || node >= node_count()) throw Error("bad-node", "grad_buffer out of range");
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].numel), 0.0);
  return g;
}

const std::vector<double>* Tape::gradient(int node) const {
  if (node < 0 || node >= static_cast<int>(grads_.size())) return nullptr;
  const auto& g = grads_[static_cast<size_t>(node)];
  return g.empty() ? nullptr : &g;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw Error("backward-non-scalar", "loss must be a single element");
  if (!loss.recorded() || loss.tape_id() != id_) {
    throw Error("backward-detached", "loss is not recorded on this tape");
  }
  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.node())[0] = 1.0;
  for (int i = loss.node(); i >= 0; --i) {
    const auto& g = grads_[static_cast<size_t>(i)];
    if (g.empty()) continue;
    const auto& node = nodes_[static_cast<size_t>(i)];
    if (node.backward) node.backward(*this, g);
  }
}

Parameter::Parameter(std::string name, Shape shape, bool frozen)
    : name_(std::move(name)), shape_(std::move(shape)), frozen_(frozen) {
  auto n = static_cast<size_t>(shape_numel(shape_));
  values_ = std::make_shared<std::vector<double>>(n, 0.0);
  grad_.assign(n, 0.0);
}

void Parameter::zero_grad() { grad_.assign(grad_.size(), 0.0); }

Tensor Parameter::use() const {
  if (!values_) throw Error("undefined-tensor", "use() on default-constructed parameter");
  Tensor t(shape_, *values_);
  Tape* tape = Tape::active();
  if (!tape || frozen_) return t;
  if (cached_tape_ != tape->id()) {
    cached_node_ = tape->add_node(size(), {}, nullptr);
    cached_tape_ = tape->id();
  }
  t.bind_node(cached_node_, cached_tape_);
  return t;
}

void Parameter::accumulate_grad(const Tape& tape) {
  if (frozen_ || cached_tape_ != tape.id() || cached_node_ < 0) return;
  const std::vector<double>* g = tape.gradient(cached_node_);
  if (!g) return;
  for (size_t i = 0; i < grad_.size(); ++i) grad_[i] += (*g)[i];
}

void collect_gradients(const Tape& tape, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    if (p) p->accumulate_grad(tape);
  }
}

}  // namespace owvis
