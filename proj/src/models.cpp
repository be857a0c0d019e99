#include "specgen/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "specgen/errors.hpp"
#include "specgen/linalg.hpp"
#include "specgen/manifold.hpp"

namespace specgen::models {

using namespace specgen::ad;

namespace {

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// Per-sample [B, 1] -> [B, N, 1] times the node mask.
Tensor node_broadcast(const Tensor& per_sample, const Conditioning& c) {
  const std::size_t b = c.batch(), f = per_sample.size(1);
  return mul(broadcast_to(reshape(per_sample, {b, 1, f}), {b, c.n_max, f}), c.node_mask);
}

// Rotation-layer node features: [U, w_U, lambda, n / n_max].
Tensor set_features(const Tensor& u, const Tensor& extra, const Tensor& lambda, const Conditioning& c) {
  std::vector<Tensor> parts{u};
  if (extra.defined()) parts.push_back(extra);
  parts.push_back(node_broadcast(lambda, c));
  parts.push_back(node_broadcast(c.n_frac, c));
  return concat(parts, 2);
}

Tensor pair_scalar(const Tensor& per_sample, const Conditioning& c) {
  const std::size_t b = c.batch(), n = c.n_max;
  return mul(broadcast_to(reshape(per_sample, {b, 1, 1, 1}), {b, n, n, 1}), c.pair_mask);
}

Tensor identity_channel(const Conditioning& c) {
  const std::size_t n = c.n_max;
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) e[i * n + i] = 1.0;
  return mul(broadcast_to(Tensor::constant({1, n, n, 1}, std::move(e)), {c.batch(), n, n, 1}), c.pair_mask);
}

Tensor unit_rows(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  const std::size_t k = shape.back();
  std::vector<double> v(numel(shape));
  for (std::size_t r = 0; r < v.size() / k; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      v[r * k + j] = nd(rng);
      s += v[r * k + j] * v[r * k + j];
    }
    s = std::sqrt(s);
    for (std::size_t j = 0; j < k; ++j) v[r * k + j] /= s;
  }
  return Tensor::constant(std::move(shape), std::move(v));
}

std::vector<std::size_t> mlp_widths(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out) {
  std::vector<std::size_t> w{in};
  for (std::size_t l = 0; l + 1 < layers; ++l) w.push_back(hidden);
  w.push_back(out);
  return w;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_max == 0 || k == 0 || noise_width == 0 || noise_layers == 0 || bank_size == 0 || set_hidden == 0 ||
      head_hidden == 0 || gen_ppgn_width == 0 || disc_ppgn_width == 0)
    throw InvalidInput("model config: sizes must be positive");
  if (k >= n_max) throw InvalidInput("model config: k must be below n_max");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidInput("model config: dropout must lie in [0, 1)");
  if (!(gumbel_tau > 0.0)) throw InvalidInput("model config: gumbel_tau must be positive");
}

Conditioning make_conditioning(const std::vector<std::size_t>& ns, std::size_t n_max, std::size_t n_ref) {
  if (n_ref == 0) n_ref = n_max;
  if (ns.empty()) throw InvalidInput("conditioning: empty batch");
  Conditioning c;
  c.ns = ns;
  c.n_max = n_max;
  c.node_mask = nn::node_mask(ns, n_max);
  c.pair_mask = nn::pair_mask(ns, n_max);
  std::vector<double> off(c.pair_mask.values().begin(), c.pair_mask.values().end());
  for (std::size_t b = 0; b < ns.size(); ++b)
    for (std::size_t i = 0; i < n_max; ++i) off[(b * n_max + i) * n_max + i] = 0.0;
  c.offdiag = Tensor::constant({ns.size(), n_max, n_max}, std::move(off));
  c.inv_sqrt_n = nn::inv_sqrt_counts(ns);
  std::vector<double> frac(ns.size());
  for (std::size_t b = 0; b < ns.size(); ++b) frac[b] = static_cast<double>(ns[b]) / static_cast<double>(n_ref);
  c.n_frac = Tensor::constant({ns.size(), 1}, std::move(frac));
  return c;
}

NoiseBundle sample_noise(const Conditioning& c, std::size_t k, std::mt19937_64& rng) {
  NoiseBundle z;
  z.z_lambda = unit_rows({c.batch(), k}, rng);
  z.z_u = mul(unit_rows({c.batch(), c.n_max, k}, rng), c.node_mask);
  z.z_a = mul(unit_rows({c.batch(), c.n_max, k}, rng), c.node_mask);
  return z;
}

// --- noise -------------------------------------------------------------------------

NoiseProcessor::NoiseProcessor(const ModelConfig& cfg, std::mt19937_64& rng)
    : lambda_(mlp_widths(cfg.k, cfg.noise_width, cfg.noise_layers, cfg.k), rng),
      u_(mlp_widths(cfg.k, cfg.noise_width, cfg.noise_layers, cfg.k), rng),
      a_(mlp_widths(cfg.k, cfg.noise_width, cfg.noise_layers, cfg.k), rng) {}

NoiseProcessor::Processed NoiseProcessor::forward(const NoiseBundle& z, const Conditioning& c) const {
  return {lambda_.forward(z.z_lambda), mul(u_.forward(z.z_u), c.node_mask), mul(a_.forward(z.z_a), c.node_mask)};
}

void NoiseProcessor::collect(nn::ParamList& out, const std::string& prefix) const {
  lambda_.collect(out, join(prefix, "lambda"));
  u_.collect(out, join(prefix, "u"));
  a_.collect(out, join(prefix, "a"));
}

// --- eigenvalues -------------------------------------------------------------------

Tensor sort_rows(const Tensor& x) {
  if (x.dim() != 2) throw InvalidInput("sort_rows: expected [B, k]");
  const std::size_t b = x.size(0), k = x.size(1);
  const auto v = x.values();
  std::vector<std::size_t> idx(b * k);
  for (std::size_t r = 0; r < b; ++r) {
    auto first = idx.begin() + static_cast<std::ptrdiff_t>(r * k);
    std::iota(first, first + static_cast<std::ptrdiff_t>(k), r * k);
    std::stable_sort(first, first + static_cast<std::ptrdiff_t>(k),
                     [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  }
  return reshape(index_select(reshape(x, {b * k}), 0, std::move(idx)), {b, k});
}

namespace {
constexpr std::size_t kGenKernels[] = {5, 9, 17, 25};
constexpr std::size_t kGenChannels[] = {32, 16, 8, 1};
constexpr std::size_t kDiscKernels[] = {25, 17, 9, 5};
constexpr std::size_t kDiscChannels[] = {8, 16, 32, 32};
constexpr std::size_t kSeedChannels = 32;
constexpr std::size_t kUpsampleTotal = 16;  // four x2 stages
}  // namespace

EigenvalueGenerator::EigenvalueGenerator(const ModelConfig& cfg, std::mt19937_64& rng)
    : k_(cfg.k), seed_len_((cfg.k + kUpsampleTotal - 1) / kUpsampleTotal) {
  seed_ = nn::Linear(cfg.k + 1, seed_len_ * kSeedChannels, rng);
  std::size_t in = kSeedChannels;
  for (std::size_t l = 0; l < 4; ++l) {
    convs_.emplace_back(in, kGenChannels[l], kGenKernels[l], 1, l < 3, rng);
    in = kGenChannels[l];
  }
}

Tensor EigenvalueGenerator::forward(const Tensor& w_lambda, const Conditioning& c) const {
  const std::size_t b = c.batch();
  Tensor h = reshape(seed_.forward(concat({w_lambda, c.n_frac}, 1)), {b, seed_len_, kSeedChannels});
  for (const auto& conv : convs_) h = conv.forward(upsample(h, 2));
  const Tensor raw = slice(reshape(h, {b, seed_len_ * kUpsampleTotal}), 1, 0, k_);
  return sort_rows(scale(sigmoid(raw), 2.0));
}

void EigenvalueGenerator::collect(nn::ParamList& out, const std::string& prefix) const {
  seed_.collect(out, join(prefix, "seed"));
  for (std::size_t l = 0; l < convs_.size(); ++l) convs_[l].collect(out, join(prefix, "conv" + std::to_string(l)));
}

EigenvalueDiscriminator::EigenvalueDiscriminator(const ModelConfig& cfg, std::mt19937_64& rng)
    : k_(cfg.k), padded_(((cfg.k + kUpsampleTotal - 1) / kUpsampleTotal) * kUpsampleTotal) {
  std::size_t in = 1;
  for (std::size_t l = 0; l < 4; ++l) {
    convs_.emplace_back(in, kDiscChannels[l], kDiscKernels[l], 2, true, rng);
    in = kDiscChannels[l];
  }
  readout_ = nn::Linear((padded_ / kUpsampleTotal) * kDiscChannels[3] + 1, 1, rng);
}

Tensor EigenvalueDiscriminator::forward(const Tensor& lambda, const Conditioning& c) const {
  const std::size_t b = c.batch();
  if (lambda.dim() != 2 || lambda.size(1) != k_) throw InvalidInput("eigenvalue discriminator: expected [B, k]");
  Tensor h = reshape(pad(lambda, 1, 0, padded_ - k_), {b, padded_, 1});
  for (const auto& conv : convs_) h = conv.forward(h);
  h = reshape(h, {b, h.numel() / b});
  return reshape(readout_.forward(concat({h, c.n_frac}, 1)), {b});
}

void EigenvalueDiscriminator::collect(nn::ParamList& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < convs_.size(); ++l) convs_[l].collect(out, join(prefix, "conv" + std::to_string(l)));
  readout_.collect(out, join(prefix, "readout"));
}

// --- rotations ---------------------------------------------------------------------

LeftRotation::LeftRotation(std::size_t features, std::size_t hidden, std::size_t k, std::mt19937_64& rng)
    : net_(features, hidden, k, rng, true) {}

Tensor LeftRotation::forward(const Tensor& features, const Tensor& u, const Conditioning& c) const {
  const Tensor p = net_.forward(features, c.node_mask);
  const Tensor s = matmul(p, transpose(u));
  return matrix_exp(sub(s, transpose(s)));
}

void LeftRotation::collect(nn::ParamList& out, const std::string& prefix) const { net_.collect(out, prefix); }

RightRotation::RightRotation(std::size_t features, std::size_t hidden, std::size_t k, std::mt19937_64& rng)
    : k_(k), net_(features, hidden, hidden, rng), head_({hidden, hidden, k * k}, rng, true) {}

Tensor RightRotation::forward(const Tensor& features, const Conditioning& c) const {
  const Tensor pooled = masked_mean(net_.forward(features, c.node_mask), c.node_mask, 1);
  return manifold::tensor::proj_to_rotation(reshape(head_.forward(pooled), {c.batch(), k_, k_}));
}

void RightRotation::collect(nn::ParamList& out, const std::string& prefix) const {
  net_.collect(out, join(prefix, "set"));
  head_.collect(out, join(prefix, "head"));
}

// --- eigenvectors ------------------------------------------------------------------

EigenvectorGenerator::EigenvectorGenerator(const ModelConfig& cfg, std::mt19937_64& rng)
    : n_max_(cfg.n_max), k_(cfg.k), m_(cfg.bank_size), tau_(cfg.gumbel_tau),
      query_({cfg.k + 1, cfg.head_hidden, cfg.head_hidden, cfg.k}, rng) {
  std::vector<double> bank;
  bank.reserve(m_ * n_max_ * k_);
  for (std::size_t e = 0; e < m_; ++e) {
    const auto u = manifold::random_stiefel(n_max_, k_, rng);
    bank.insert(bank.end(), u.data().begin(), u.data().end());
  }
  bank_ = Tensor::leaf({m_, n_max_, k_}, std::move(bank));
  const std::size_t f = 3 * k_ + 1;
  for (std::size_t l = 0; l < cfg.rotation_layers; ++l) {
    left_.emplace_back(f, cfg.set_hidden, k_, rng);
    right_.emplace_back(f, cfg.set_hidden, k_, rng);
  }
}

Tensor EigenvectorGenerator::refine(const Tensor& u0, const Tensor& lambda, const Tensor& w_u,
                                    const Conditioning& c) const {
  Tensor u = u0;
  for (std::size_t l = 0; l < left_.size(); ++l) {
    const Tensor f = set_features(u, w_u, lambda, c);
    const Tensor rl = left_[l].forward(f, u, c);
    const Tensor rr = right_[l].forward(f, c);
    u = matmul(matmul(rl, u), rr);
  }
  return u;
}

EigenvectorGenerator::Output EigenvectorGenerator::forward(const Tensor& lambda, const Tensor& w_u,
                                                           const Conditioning& c, std::mt19937_64& rng,
                                                           bool hard) const {
  const std::size_t b = c.batch(), n = n_max_, k = k_, m = m_;
  if (c.n_max != n) throw InvalidInput("eigenvector generator: n_max mismatch");
  // Bank entries truncated to each sample's nodes and re-orthonormalised.
  const Tensor entries = manifold::tensor::gram_schmidt(
      mul(broadcast_to(reshape(bank_, {1, m, n, k}), {b, m, n, k}), reshape(c.node_mask, {b, 1, n, 1})));
  const Tensor q = node_broadcast(query_.forward(concat({lambda, c.n_frac}, 1)), c);
  const Tensor qm = reshape(broadcast_to(reshape(q, {b, 1, n, k}), {b, m, n, k}), {b * m, n, k});
  const Tensor flat = reshape(entries, {b * m, n, k});
  const Tensor scores = div(manifold::tensor::canonical_metric_raw(qm, flat),
                            manifold::tensor::canonical_metric_raw(flat, flat));
  const Tensor weights = nn::gumbel_softmax(reshape(scores, {b, m}), tau_, rng, hard);
  const Tensor start = sum(mul(reshape(weights, {b, m, 1, 1}), entries), 1);
  return {refine(start, lambda, w_u, c), weights, start};
}

void EigenvectorGenerator::project_bank() {
  auto v = bank_.mutable_values();
  const std::size_t stride = n_max_ * k_;
  for (std::size_t e = 0; e < m_; ++e) {
    linalg::Matrix b(n_max_, k_, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(e * stride),
                                                     v.begin() + static_cast<std::ptrdiff_t>((e + 1) * stride)));
    const auto q = linalg::qr(b).q;
    std::copy(q.data().begin(), q.data().end(), v.begin() + static_cast<std::ptrdiff_t>(e * stride));
  }
}

double EigenvectorGenerator::bank_drift() const {
  const auto v = bank_.values();
  const std::size_t stride = n_max_ * k_;
  double worst = 0.0;
  for (std::size_t e = 0; e < m_; ++e) {
    linalg::Matrix b(n_max_, k_, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(e * stride),
                                                     v.begin() + static_cast<std::ptrdiff_t>((e + 1) * stride)));
    worst = std::max(worst, linalg::orthonormality_error(b));
  }
  return worst;
}

void EigenvectorGenerator::collect(nn::ParamList& out, const std::string& prefix) const {
  query_.collect(out, join(prefix, "query"));
  out.push_back({join(prefix, "bank"), bank_});
  for (std::size_t l = 0; l < left_.size(); ++l) {
    left_[l].collect(out, join(prefix, "left" + std::to_string(l)));
    right_[l].collect(out, join(prefix, "right" + std::to_string(l)));
  }
}

EigenvectorDiscriminator::EigenvectorDiscriminator(const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t k = cfg.k, h = cfg.set_hidden, f = 2 * k + 1;
  rot1_ = RightRotation(f, h, k, rng);
  pointwise_ = nn::MLP({f, cfg.head_hidden, k}, rng);
  rot2_ = RightRotation(f, h, k, rng);
  set_ = nn::PointNetST(f, h, h, rng);
  head_ = nn::MLP({h + 1, cfg.head_hidden, 1}, rng);
}

Tensor EigenvectorDiscriminator::forward(const Tensor& u, const Tensor& lambda, const Conditioning& c) const {
  const Tensor none;
  Tensor x = matmul(u, rot1_.forward(set_features(u, none, lambda, c), c));
  x = mul(pointwise_.forward(set_features(x, none, lambda, c)), c.node_mask);
  x = matmul(x, rot2_.forward(set_features(x, none, lambda, c), c));
  const Tensor pooled = masked_mean(set_.forward(set_features(x, none, lambda, c), c.node_mask), c.node_mask, 1);
  return reshape(head_.forward(concat({pooled, c.n_frac}, 1)), {c.batch()});
}

void EigenvectorDiscriminator::collect(nn::ParamList& out, const std::string& prefix) const {
  rot1_.collect(out, join(prefix, "rot1"));
  pointwise_.collect(out, join(prefix, "pointwise"));
  rot2_.collect(out, join(prefix, "rot2"));
  set_.collect(out, join(prefix, "set"));
  head_.collect(out, join(prefix, "head"));
}

// --- graphs --------------------------------------------------------------------------

Tensor spectral_channels(const Tensor& lambda, const Tensor& u) {
  const std::size_t b = u.size(0), n = u.size(1), k = u.size(2);
  const Tensor outer_cols = mul(reshape(u, {b, n, 1, k}), reshape(u, {b, 1, n, k}));
  const Tensor l0 = sum(mul(outer_cols, reshape(lambda, {b, 1, 1, k})), 3, true);
  return concat({outer_cols, l0}, 3);
}

GraphGenerator::GraphGenerator(const ModelConfig& cfg, std::mt19937_64& rng)
    : stack_(cfg.k + 4, cfg.gen_ppgn_width, cfg.gen_ppgn_layers, 1, rng, cfg.dropout) {}

Tensor GraphGenerator::forward(const Tensor& lambda, const Tensor& u, const Tensor& w_a, const Conditioning& c,
                               const nn::Context& ctx) const {
  const std::size_t b = c.batch(), n = c.n_max;
  const Tensor wa = reshape(matmul(w_a, transpose(w_a)), {b, n, n, 1});
  const Tensor x = concat({spectral_channels(lambda, u), wa, identity_channel(c), pair_scalar(c.n_frac, c)}, 3);
  const Tensor logits = reshape(stack_.forward(x, c.pair_mask, c.inv_sqrt_n, ctx), {b, n, n});
  const Tensor sym = scale(add(logits, transpose(logits)), 0.5);
  return mul(sigmoid(sym), c.offdiag);
}

void GraphGenerator::collect(nn::ParamList& out, const std::string& prefix) const {
  stack_.collect(out, join(prefix, "ppgn"));
}

GraphDiscriminator::GraphDiscriminator(const ModelConfig& cfg, std::mt19937_64& rng)
    : stack_(cfg.k + 4, cfg.disc_ppgn_width, cfg.disc_ppgn_layers, cfg.disc_ppgn_width, rng, cfg.dropout),
      diag_head_({cfg.disc_ppgn_width + 1, cfg.head_hidden, 1}, rng),
      offdiag_head_({cfg.disc_ppgn_width + 1, cfg.head_hidden, 1}, rng) {}

Tensor GraphDiscriminator::forward(const Tensor& adj, const Tensor& lambda, const Tensor& u, const Conditioning& c,
                                   const nn::Context& ctx) const {
  const std::size_t b = c.batch(), n = c.n_max;
  // Symmetrised so the input gradient is symmetric.
  const Tensor a = reshape(mul(scale(add(adj, transpose(adj)), 0.5), c.offdiag), {b, n, n, 1});
  const Tensor x = concat({a, spectral_channels(lambda, u), identity_channel(c), pair_scalar(c.n_frac, c)}, 3);
  const Tensor h = stack_.forward(x, c.pair_mask, c.inv_sqrt_n, ctx);
  const std::size_t w = h.size(3);
  const Tensor flat = reshape(h, {b, n * n, w});
  const Tensor off = reshape(c.offdiag, {b, n * n, 1});
  const Tensor diag = sub(reshape(c.pair_mask, {b, n * n, 1}), off);
  const Tensor d = diag_head_.forward(concat({masked_mean(flat, diag, 1), c.n_frac}, 1));
  const Tensor o = offdiag_head_.forward(concat({masked_mean(flat, off, 1), c.n_frac}, 1));
  return reshape(add(d, o), {b});
}

void GraphDiscriminator::collect(nn::ParamList& out, const std::string& prefix) const {
  stack_.collect(out, join(prefix, "ppgn"));
  diag_head_.collect(out, join(prefix, "diag_head"));
  offdiag_head_.collect(out, join(prefix, "offdiag_head"));
}

// --- assembly ------------------------------------------------------------------------

void Generators::collect(nn::ParamList& out, const std::string& prefix) const {
  noise.collect(out, join(prefix, "noise"));
  eigenvalues.collect(out, join(prefix, "eigenvalues"));
  eigenvectors.collect(out, join(prefix, "eigenvectors"));
  graph.collect(out, join(prefix, "graph"));
}

void Discriminators::collect(nn::ParamList& out, const std::string& prefix) const {
  eigenvalues.collect(out, join(prefix, "eigenvalues"));
  eigenvectors.collect(out, join(prefix, "eigenvectors"));
  graph.collect(out, join(prefix, "graph"));
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  gen.noise = NoiseProcessor(cfg, rng);
  gen.eigenvalues = EigenvalueGenerator(cfg, rng);
  gen.eigenvectors = EigenvectorGenerator(cfg, rng);
  gen.graph = GraphGenerator(cfg, rng);
  disc.eigenvalues = EigenvalueDiscriminator(cfg, rng);
  disc.eigenvectors = EigenvectorDiscriminator(cfg, rng);
  disc.graph = GraphDiscriminator(cfg, rng);
}

nn::ParamList Model::parameters() const {
  nn::ParamList out;
  gen.collect(out, "gen");
  disc.collect(out, "disc");
  return out;
}

Tensor select_rows(const Tensor& a, const Tensor& b, const std::vector<bool>& take_a) {
  if (a.shape() != b.shape() || a.dim() == 0 || take_a.size() != a.size(0))
    throw InvalidInput("select_rows: shape mismatch");
  Shape ms(a.dim(), 1);
  ms[0] = a.size(0);
  std::vector<double> m(a.size(0)), inv(a.size(0));
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = take_a[i] ? 1.0 : 0.0;
    inv[i] = 1.0 - m[i];
  }
  return add(mul(a, Tensor::constant(ms, std::move(m))), mul(b, Tensor::constant(ms, std::move(inv))));
}

GeneratedSample generate(const Model& m, const Conditioning& c, std::mt19937_64& rng, const nn::Context& ctx,
                         const SpectralOverride* real) {
  const auto z = sample_noise(c, m.cfg.k, rng);
  const auto w = m.gen.noise.forward(z, c);
  GeneratedSample s;
  s.lambda = m.gen.eigenvalues.forward(w.w_lambda, c);
  const bool any_real = real && !real->use_real.empty();
  s.lambda_cond = any_real ? select_rows(real->lambda, s.lambda, real->use_real) : s.lambda;
  s.u = m.gen.eigenvectors.forward(s.lambda_cond, w.w_u, c, rng, true).u;
  s.u_cond = any_real ? select_rows(real->u, s.u, real->use_real) : s.u;
  s.adj = m.gen.graph.forward(s.lambda_cond, s.u_cond, w.w_a, c, ctx);
  return s;
}

}  // namespace specgen::models
