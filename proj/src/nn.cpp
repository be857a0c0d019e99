#include "specgen/nn.hpp"

#include <cmath>

#include "specgen/errors.hpp"

namespace specgen::nn {

using namespace specgen::ad;

namespace {

Tensor uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::leaf(std::move(shape), std::move(v));
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool zero_init)
    : in_(in), out_(out) {
  if (in == 0 || out == 0) throw InvalidInput("Linear: widths must be positive");
  if (zero_init) {
    weight_ = Tensor::leaf({in, out}, std::vector<double>(in * out, 0.0));
    bias_ = Tensor::leaf({out}, std::vector<double>(out, 0.0));
  } else {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = uniform_param({in, out}, bound, rng);
    bias_ = uniform_param({out}, bound, rng);
  }
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.dim() == 0 || x.shape().back() != in_)
    throw InvalidInput("Linear: expected last axis " + std::to_string(in_) + ", got " +
                       shape_str(x.shape()));
  return add(matmul(x, weight_), bias_);
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({join(prefix, "weight"), weight_});
  out.push_back({join(prefix, "bias"), bias_});
}

MLP::MLP(std::vector<std::size_t> widths, std::mt19937_64& rng, bool zero_last)
    : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw InvalidInput("MLP: need at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const bool last = i + 2 == widths_.size();
    linears_.emplace_back(widths_[i], widths_[i + 1], rng, last && zero_last);
    if (!last) {
      gains_.push_back(Tensor::leaf({widths_[i + 1]}, std::vector<double>(widths_[i + 1], 1.0)));
      biases_.push_back(Tensor::leaf({widths_[i + 1]}, std::vector<double>(widths_[i + 1], 0.0)));
    }
  }
}

Tensor MLP::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    h = linears_[i].forward(h);
    if (i < gains_.size()) h = gelu(layer_norm(h, gains_[i], biases_[i]));
  }
  return h;
}

void MLP::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    linears_[i].collect(out, join(prefix, std::to_string(i)));
    if (i < gains_.size()) {
      out.push_back({join(prefix, std::to_string(i) + ".ln_gain"), gains_[i]});
      out.push_back({join(prefix, std::to_string(i) + ".ln_bias"), biases_[i]});
    }
  }
}

PointNetST::PointNetST(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
                       bool zero_last)
    : feat_({in, hidden, hidden, hidden}, rng),
      agg_({in, hidden, 2 * hidden, 4 * hidden}, rng),
      cat_({5 * hidden, 4 * hidden, 2 * hidden, out}, rng, zero_last) {}

Tensor PointNetST::forward(const Tensor& x, const Tensor& mask) const {
  if (x.dim() != 3) throw InvalidInput("PointNetST: expected [B, N, C], got " + shape_str(x.shape()));
  const Tensor y = feat_.forward(x);
  const Tensor pooled = masked_mean(agg_.forward(x), mask, 1, true);
  Shape s = pooled.shape();
  s[1] = x.size(1);
  return mul(cat_.forward(concat({y, broadcast_to(pooled, s)}, 2)), mask);
}

void PointNetST::collect(ParamList& out, const std::string& prefix) const {
  feat_.collect(out, join(prefix, "feat"));
  agg_.collect(out, join(prefix, "agg"));
  cat_.collect(out, join(prefix, "cat"));
}

PPGNLayer::PPGNLayer(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : m1_({in, out, out}, rng), m2_({in, out, out}, rng), m3_({in + out, out, out}, rng) {}

Tensor PPGNLayer::forward(const Tensor& x, const Tensor& mask, const Tensor& inv_sqrt_n) const {
  if (x.dim() != 4 || x.size(1) != x.size(2))
    throw InvalidInput("PPGNLayer: expected [B, N, N, C], got " + shape_str(x.shape()));
  const Tensor a = permute(mul(m1_.forward(x), mask), {0, 3, 1, 2});
  const Tensor b = permute(mul(m2_.forward(x), mask), {0, 3, 1, 2});
  const Tensor prod = mul(permute(matmul(a, b), {0, 2, 3, 1}), inv_sqrt_n);
  const Tensor y = m3_.forward(concat({x, prod}, 3));
  return mul(instance_norm(y, mask), mask);
}

void PPGNLayer::collect(ParamList& out, const std::string& prefix) const {
  m1_.collect(out, join(prefix, "m1"));
  m2_.collect(out, join(prefix, "m2"));
  m3_.collect(out, join(prefix, "m3"));
}

PPGNStack::PPGNStack(std::size_t in, std::size_t width, std::size_t layers, std::size_t out,
                     std::mt19937_64& rng, double dropout)
    : embed_(in, width, rng), dropout_(dropout) {
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidInput("PPGNStack: dropout must lie in [0, 1)");
  for (std::size_t l = 0; l < layers; ++l) layers_.emplace_back(width, width, rng);
  readout_ = Linear(width * (layers + 1), out, rng);
}

Tensor PPGNStack::forward(const Tensor& x, const Tensor& mask, const Tensor& inv_sqrt_n,
                          const Context& ctx) const {
  std::vector<Tensor> skips{mul(embed_.forward(x), mask)};
  for (const auto& layer : layers_) skips.push_back(layer.forward(skips.back(), mask, inv_sqrt_n));
  Tensor h = concat(skips, 3);
  if (ctx.training && dropout_ > 0.0) {
    if (!ctx.rng) throw InvalidInput("PPGNStack: training forward needs an RNG");
    h = ad::dropout(h, dropout_, true, *ctx.rng);
  }
  return mul(readout_.forward(h), mask);
}

void PPGNStack::collect(ParamList& out, const std::string& prefix) const {
  embed_.collect(out, join(prefix, "embed"));
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, join(prefix, "layer" + std::to_string(l)));
  readout_.collect(out, join(prefix, "readout"));
}

Tensor gumbel_softmax(const Tensor& logits, double tau, std::mt19937_64& rng, bool hard) {
  if (!(tau > 0.0)) throw InvalidInput("gumbel_softmax: tau must be positive");
  if (logits.dim() == 0) throw InvalidInput("gumbel_softmax: logits need at least one axis");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> g(logits.numel());
  for (double& v : g) {
    double r = u(rng);
    while (r <= 0.0) r = u(rng);
    v = -std::log(-std::log(r));
  }
  const std::size_t axis = logits.dim() - 1;
  const Tensor soft = softmax(scale(add(logits, Tensor::constant(logits.shape(), std::move(g))), 1.0 / tau), axis);
  if (!hard) return soft;
  const std::size_t m = logits.shape().back();
  const auto& sv = soft.values();
  std::vector<double> onehot(sv.size(), 0.0);
  for (std::size_t row = 0; row < sv.size() / m; ++row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (sv[row * m + j] > sv[row * m + best]) best = j;
    onehot[row * m + best] = 1.0;
  }
  return straight_through(Tensor::constant(logits.shape(), std::move(onehot)), soft);
}

GatedConv1d::GatedConv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                         bool gated, std::mt19937_64& rng)
    : kernel_(kernel), stride_(stride), gated_(gated) {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0)
    throw InvalidInput("GatedConv1d: sizes must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel * in));
  w_ = uniform_param({kernel * in, out}, bound, rng);
  b_ = uniform_param({out}, bound, rng);
  if (gated) {
    gate_w_ = uniform_param({kernel * in, out}, bound, rng);
    gate_b_ = uniform_param({out}, bound, rng);
  }
}

Tensor GatedConv1d::forward(const Tensor& x) const {
  const Tensor a = conv1d(x, w_, b_, kernel_, stride_);
  if (!gated_) return a;
  return mul(tanh(a), sigmoid(conv1d(x, gate_w_, gate_b_, kernel_, stride_)));
}

void GatedConv1d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({join(prefix, "weight"), w_});
  out.push_back({join(prefix, "bias"), b_});
  if (gated_) {
    out.push_back({join(prefix, "gate_weight"), gate_w_});
    out.push_back({join(prefix, "gate_bias"), gate_b_});
  }
}

Tensor node_mask(const std::vector<std::size_t>& ns, std::size_t n_max) {
  std::vector<double> m(ns.size() * n_max, 0.0);
  for (std::size_t b = 0; b < ns.size(); ++b) {
    if (ns[b] > n_max) throw InvalidInput("node_mask: node count exceeds n_max");
    for (std::size_t i = 0; i < ns[b]; ++i) m[b * n_max + i] = 1.0;
  }
  return Tensor::constant({ns.size(), n_max, 1}, std::move(m));
}

Tensor pair_mask(const std::vector<std::size_t>& ns, std::size_t n_max) {
  std::vector<double> m(ns.size() * n_max * n_max, 0.0);
  for (std::size_t b = 0; b < ns.size(); ++b) {
    if (ns[b] > n_max) throw InvalidInput("pair_mask: node count exceeds n_max");
    for (std::size_t i = 0; i < ns[b]; ++i)
      for (std::size_t j = 0; j < ns[b]; ++j) m[(b * n_max + i) * n_max + j] = 1.0;
  }
  return Tensor::constant({ns.size(), n_max, n_max, 1}, std::move(m));
}

Tensor inv_sqrt_counts(const std::vector<std::size_t>& ns) {
  std::vector<double> v(ns.size());
  for (std::size_t b = 0; b < ns.size(); ++b) {
    if (ns[b] == 0) throw InvalidInput("inv_sqrt_counts: empty graph");
    v[b] = 1.0 / std::sqrt(static_cast<double>(ns[b]));
  }
  return Tensor::constant({ns.size(), 1, 1, 1}, std::move(v));
}

}  // namespace specgen::nn
