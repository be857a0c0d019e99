#include "specgen/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "specgen/errors.hpp"
#include "specgen/ops.hpp"

namespace specgen::ad {

namespace {
thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_seq = 0;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values, const char* op) {
  if (numel(shape) != values.size()) {
    throw InvalidInput(std::string("tensor: ") + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->seq = ++t_seq;
  n->op = op;
  return n;
}
}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values), "const"));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  auto n = new_node(std::move(shape), std::move(values), "leaf");
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = ad::numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  const std::size_t n = ad::numel(shape);
  return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw InvalidInput("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->backward; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw InvalidInput("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = on;
}

std::span<const double> Tensor::grad() const { return node_->grad; }
std::vector<double>& Tensor::grad_storage() { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) {
  t_grad_enabled = enabled;
}
GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, BackwardFn backward) {
  auto n = new_node(std::move(shape), std::move(value), op);
  if (t_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

namespace {

struct Traversal {
  std::vector<std::shared_ptr<Node>> order;  // descending seq
  std::unordered_set<const Node*> relevant;
};

// Collects requires_grad nodes reachable from `root` (not crossing `stops`)
// and marks those lying on a path to a target. With no explicit targets every
// requires_grad leaf is a target.
Traversal collect(const std::shared_ptr<Node>& root,
                  const std::unordered_set<const Node*>* targets) {
  Traversal t;
  std::unordered_set<const Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (n->consumed) {
      throw InvalidInput(std::string("backward: tape already consumed at op '") + n->op + "'");
    }
    const bool stop = targets && targets->count(n.get());
    if (!stop) {
      for (const auto& p : n->parents) {
        if (!p.requires_grad()) continue;
        if (seen.insert(p.node()).second) stack.push_back(p.node_ptr());
      }
    }
    t.order.push_back(std::move(n));
  }
  std::sort(t.order.begin(), t.order.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });
  for (auto it = t.order.rbegin(); it != t.order.rend(); ++it) {
    const Node* n = it->get();
    bool rel = targets ? targets->count(n) > 0 : !n->backward;
    if (!rel && !(targets && targets->count(n))) {
      for (const auto& p : n->parents) {
        if (t.relevant.count(p.node())) {
          rel = true;
          break;
        }
      }
    }
    if (rel) t.relevant.insert(n);
  }
  return t;
}

std::unordered_map<const Node*, Tensor> run(const Tensor& output, Tensor seed,
                                            const std::unordered_set<const Node*>* targets,
                                            bool create_graph, bool consume) {
  std::unordered_map<const Node*, Tensor> grads;
  if (!output.requires_grad()) return grads;
  Traversal t = collect(output.node_ptr(), targets);
  grads[output.node()] = std::move(seed);

  GradModeGuard mode(create_graph);
  for (const auto& n : t.order) {
    auto it = grads.find(n.get());
    if (it == grads.end()) continue;
    const bool is_target = targets ? targets->count(n.get()) > 0 : !n->backward;
    if (is_target || !n->backward) continue;
    Tensor g = it->second;
    if (!t.relevant.count(n.get())) {
      grads.erase(it);
      continue;
    }
    std::vector<bool> needs(n->parents.size());
    for (std::size_t i = 0; i < needs.size(); ++i)
      needs[i] = n->parents[i].requires_grad() && t.relevant.count(n->parents[i].node()) > 0;
    const Tensor self(n);
    std::vector<Tensor> gs = n->backward(self, g, needs);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      if (!needs[i] || i >= gs.size() || !gs[i].defined()) continue;
      const Node* p = n->parents[i].node();
      if (gs[i].shape() != p->shape) {
        throw InvalidInput(std::string("backward: op '") + n->op + "' produced gradient " +
                           shape_str(gs[i].shape()) + " for parent " + shape_str(p->shape));
      }
      auto pit = grads.find(p);
      if (pit == grads.end()) {
        grads.emplace(p, std::move(gs[i]));
      } else {
        pit->second = add(pit->second, gs[i]);
      }
    }
    grads.erase(n.get());
    if (consume) {
      n->backward = nullptr;
      n->parents.clear();
      n->consumed = true;
    }
  }
  if (consume) {
    // Accumulate here: once parents are cleared, the traversal may hold the last
    // reference to some leaves.
    for (auto& [node, g] : grads) {
      auto* n = const_cast<Node*>(node);
      if (n->backward) continue;
      if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
      const auto gv = g.values();
      for (std::size_t i = 0; i < gv.size(); ++i) n->grad[i] += gv[i];
    }
    grads.clear();
  }
  return grads;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw InvalidInput("backward: loss must be a scalar tensor");
  if (loss.node()->consumed) throw InvalidInput("backward: tape already consumed");
  if (!loss.requires_grad()) return;
  if (!loss.node()->backward) {
    auto& g = loss.node()->grad;
    if (g.empty()) g.assign(1, 0.0);
    g[0] += 1.0;
    return;
  }
  run(loss, Tensor::full(loss.shape(), 1.0), nullptr, false, true);
}

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs, bool create_graph,
                         const Tensor& grad_output) {
  Tensor seed = grad_output;
  if (!seed.defined()) {
    if (output.numel() != 1)
      throw InvalidInput("grad: non-scalar output needs an explicit grad_output");
    seed = Tensor::full(output.shape(), 1.0);
  } else if (seed.shape() != output.shape()) {
    throw InvalidInput("grad: grad_output shape mismatch");
  }
  std::unordered_set<const Node*> targets;
  for (const auto& x : inputs) targets.insert(x.node());
  std::unordered_map<const Node*, Tensor> grads;
  if (targets.count(output.node())) {
    grads[output.node()] = seed;
  } else {
    grads = run(output, seed, &targets, create_graph, false);
  }
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) {
    auto it = grads.find(x.node());
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(x.shape()));
  }
  return out;
}

Tensor checkpoint(const char* op, const std::function<Tensor(std::span<const Tensor>)>& fn,
                  std::vector<Tensor> inputs) {
  Tensor out;
  {
    NoGradGuard ng;
    out = fn(inputs);
  }
  Shape shape = out.shape();
  std::vector<double> value(out.values().begin(), out.values().end());
  auto backward_fn = [fn](const Tensor& self, const Tensor& g, const std::vector<bool>& needs) {
    const auto& parents = self.node()->parents;
    std::vector<Tensor> wrt;
    std::vector<std::size_t> slot;
    std::vector<Tensor> result(parents.size());
    if (grad_enabled()) {
      Tensor y = fn(parents);
      for (std::size_t i = 0; i < parents.size(); ++i) {
        if (needs[i]) {
          wrt.push_back(parents[i]);
          slot.push_back(i);
        }
      }
      auto gs = grad(y, wrt, true, g);
      for (std::size_t j = 0; j < slot.size(); ++j) result[slot[j]] = std::move(gs[j]);
      return result;
    }
    std::vector<Tensor> local;
    local.reserve(parents.size());
    for (std::size_t i = 0; i < parents.size(); ++i) {
      const auto& p = parents[i];
      if (needs[i]) {
        local.push_back(Tensor::leaf(p.shape(), p.node()->value, true));
        wrt.push_back(local.back());
        slot.push_back(i);
      } else {
        local.push_back(p.detach());
      }
    }
    Tensor y;
    {
      GradModeGuard on(true);
      y = fn(local);
    }
    auto gs = grad(y, wrt, false, g);
    for (std::size_t j = 0; j < slot.size(); ++j) result[slot[j]] = std::move(gs[j]);
    return result;
  };
  return make_result(op, std::move(shape), std::move(value), std::move(inputs),
                     std::move(backward_fn));
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

Tensor fused(const char* op, const std::function<Tensor(std::span<const Tensor>)>& fn, std::vector<Tensor> inputs,
             std::vector<double> value, FastBackward fast_backward) {
  if (inputs.empty()) throw InvalidInput(std::string(op) + ": no inputs");
  Shape shape = inputs[0].shape();
  if (value.size() != numel(shape)) throw InvalidInput(std::string(op) + ": value size mismatch");
  auto backward_fn = [fn, fb = std::move(fast_backward)](const Tensor& self, const Tensor& g,
                                                        const std::vector<bool>& needs) {
    const auto& parents = self.node()->parents;
    std::vector<Tensor> result(parents.size());
    if (grad_enabled()) {
      std::vector<Tensor> wrt;
      std::vector<std::size_t> slot;
      const Tensor y = fn(parents);
      for (std::size_t i = 0; i < parents.size(); ++i)
        if (needs[i]) {
          wrt.push_back(parents[i]);
          slot.push_back(i);
        }
      auto gs = grad(y, wrt, true, g);
      for (std::size_t j = 0; j < slot.size(); ++j) result[slot[j]] = std::move(gs[j]);
      return result;
    }
    auto gs = fb(parents, self.values(), g.values(), needs);
    for (std::size_t i = 0; i < parents.size(); ++i)
      if (needs[i]) result[i] = Tensor::constant(parents[i].shape(), std::move(gs[i]));
    return result;
  };
  return make_result(op, std::move(shape), std::move(value), std::move(inputs), std::move(backward_fn));
}

}  // namespace specgen::ad
