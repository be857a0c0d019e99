#pragma once

// Reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tensor is a shared handle to a Node. Nodes created while grad mode is
// enabled and with at least one differentiable parent remember their parents
// and a backward function; together they form the tape. Every node carries a
// per-thread sequence number, and parents are always created before their
// children, so sorting reachable nodes by descending sequence number gives a
// valid reverse topological order.
//
// Backward functions are written in terms of Tensor operations. Running them
// with grad mode enabled (create_graph) records the gradient computation itself,
// which is what the gradient penalty needs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace specgen::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;
struct Node;

/// Returns one gradient per parent (undefined where needs[i] is false).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& self, const Tensor& grad,
                                                     const std::vector<bool>& needs)>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Non-differentiable value.
  static Tensor constant(Shape shape, std::vector<double> values);
  /// Graph leaf; gradients accumulate into grad() during backward().
  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = true);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access; intended for leaves (optimizers, initialisation).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  void set_requires_grad(bool on);
  /// Accumulated gradient of a leaf (empty until a backward pass reaches it).
  std::span<const double> grad() const;
  std::vector<double>& grad_storage();
  void zero_grad();

  /// Same values, cut from the tape.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<Tensor> parents;
  BackwardFn backward;
  std::vector<double> grad;
};

/// True while operations record onto the tape (default). Thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. Parents and backward are kept only when grad mode is on
/// and some parent requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, BackwardFn backward);

/// Reverse pass from a scalar loss; accumulates into the grad() of every
/// reachable requires_grad leaf. Consumes the traversed part of the tape: a
/// second backward over the same nodes throws InvalidInput.
void backward(const Tensor& loss);

/// Gradients of `output` (seeded with `grad_output`, default ones for scalars)
/// with respect to `inputs`. With create_graph the returned tensors are
/// themselves differentiable and the tape is retained.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         bool create_graph = false, const Tensor& grad_output = {});

/// Keeps large tensor buffers on the heap instead of fresh mmap pages, which
/// otherwise dominate system time in training. glibc only; no-op elsewhere.
void tune_allocator();

/// Runs `fn` without recording intermediates; the backward pass recomputes it.
/// `fn` must be deterministic.
Tensor checkpoint(const char* op, const std::function<Tensor(std::span<const Tensor>)>& fn,
                  std::vector<Tensor> inputs);

/// Like checkpoint, but with a precomputed forward value and a numeric backward
/// kernel used for first-order passes. `fn` (the same map as composite ops) is
/// only replayed when the backward pass itself is recorded.
/// fast_backward(parents, output value, upstream grad) returns one gradient per
/// parent, empty where not needed.
using FastBackward = std::function<std::vector<std::vector<double>>(
    std::span<const Tensor> parents, std::span<const double> out, std::span<const double> g,
    const std::vector<bool>& needs)>;
Tensor fused(const char* op, const std::function<Tensor(std::span<const Tensor>)>& fn, std::vector<Tensor> inputs,
             std::vector<double> value, FastBackward fast_backward);

}  // namespace specgen::ad
