#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "owvis/common.hpp"

namespace owvis {

// Numeric mode for op results. f64 is required by verification suites
// (finite differences are unreliable in 32-bit); f32 emulates training
// precision by rounding every op result through IEEE binary32. The mode
// is process-wide and read once per op.
enum class Precision { f32, f64 };

Precision get_precision();
void set_precision(Precision p);

// When enabled, every op result is scanned after the forward computation.
// NaN and +inf raise Error("non-finite"); -inf is the legal additive
// attention-mask sentinel and passes.
bool debug_checks_enabled();
void set_debug_checks(bool on);

// Rounds values through binary32 when the precision mode is f32.
void apply_precision(std::vector<double>& values);

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Immutable dense row-major tensor of real values. A tensor optionally
// carries a node id on the active tape; node -1 means constant.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(values_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  int64_t size() const { return values_ ? static_cast<int64_t>(values_->size()) : 0; }
  const std::vector<double>& values() const;
  std::shared_ptr<const std::vector<double>> storage() const { return values_; }

  // Scalar convenience accessor; requires size() == 1.
  double value() const;
  double at(std::initializer_list<int> idx) const;

  bool recorded() const { return node_ >= 0; }
  int node() const { return node_; }
  uint64_t tape_id() const { return tape_id_; }
  Tensor detached() const;

  // Internal: binds this tensor to a tape node. Used by op implementations.
  void bind_node(int node, uint64_t tape_id) {
    node_ = node;
    tape_id_ = tape_id;
  }

 private:
  std::shared_ptr<const std::vector<double>> values_;
  Shape shape_;
  int node_ = -1;
  uint64_t tape_id_ = 0;
};

// Reverse-mode gradient callback: receives the tape (to accumulate into
// parent gradient buffers) and the gradient of the loss w.r.t. this
// node's output.
using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

// Records one training step's computation. Single-threaded by contract:
// exactly one tape is active per thread at a time, ops append nodes in
// program order, and backward() replays them in reverse, which yields a
// fixed deterministic accumulation order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  uint64_t id() const { return id_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  int add_node(int64_t out_numel, std::vector<int> parents, BackwardFn backward);

  // Gradient buffer for a node, allocated and zeroed on first access.
  std::vector<double>& grad_buffer(int node);
  // Gradient of the last backward() w.r.t. a node, or nullptr if no
  // gradient flowed there.
  const std::vector<double>* gradient(int node) const;

  // Reverse accumulation from a recorded scalar loss.
  // Errors: "backward-non-scalar" if loss is not a single element,
  // "backward-detached" if loss is not recorded on this tape.
  void backward(const Tensor& loss);

 private:
  struct Node {
    int64_t numel;
    std::vector<int> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  uint64_t id_;
  Tape* prev_active_;
};

// Named trainable (or frozen) value. Parameters own their storage; ops see
// them through use(), which registers a leaf on the active tape (memoized
// per tape) or yields a plain constant when frozen or when no tape is
// active. Frozen parameters therefore never receive gradient.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Shape shape, bool frozen = false);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(values_ ? values_->size() : 0); }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  std::vector<double>& values() { return *values_; }
  const std::vector<double>& values() const { return *values_; }
  std::vector<double>& grad() { return grad_; }
  const std::vector<double>& grad() const { return grad_; }
  void zero_grad();

  Tensor use() const;

  // Adds this parameter's gradient from the tape's last backward() into
  // grad(). No-op for frozen or unused parameters.
  void accumulate_grad(const Tape& tape);

 private:
  std::string name_;
  Shape shape_;
  std::shared_ptr<std::vector<double>> values_;
  std::vector<double> grad_;
  bool frozen_ = false;
  mutable uint64_t cached_tape_ = 0;
  mutable int cached_node_ = -1;
};

// Adds each parameter's tape gradient into its grad() buffer. Call after
// Tape::backward. Parameters that were frozen or unused are untouched.
void collect_gradients(const Tape& tape, const std::vector<Parameter*>& params);

}  // namespace owvis
