#include "specgen/training.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "config_json.hpp"
#include "specgen/errors.hpp"
#include "specgen/linalg.hpp"
#include "specgen/manifold.hpp"
#include "specgen/metrics.hpp"

namespace specgen::training {

using namespace specgen::ad;
using models::Conditioning;
using json = nlohmann::json;
using detail::model_config_from;
using detail::model_config_json;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(lambda_lp >= 0.0) || !(gamma >= 0.0) || batch_size == 0 || total_steps == 0)
    throw InvalidInput("train config: rates, batch size and step count must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidInput("train config: Adam betas must lie in [0, 1)");
  if (tau_start < 0.0 || tau_start > 1.0 || tau_end < 0.0 || tau_end > 1.0)
    throw InvalidInput("train config: tau range must lie in [0, 1]");
  if (!(ema >= 0.0 && ema < 1.0)) throw InvalidInput("train config: EMA retention must lie in [0, 1)");
  if (rewire_p < 0.0 || rewire_p > 1.0 || noise_var < 0.0)
    throw InvalidInput("train config: rewire probability must lie in [0, 1] and noise variance be >= 0");
}

// --- losses -----------------------------------------------------------------------

WganLosses wgan_lp_losses(const Tensor& d_real, const Tensor& d_fake, const Tensor& gp, double lambda_lp) {
  const Tensor fake = mean_all(d_fake);
  return {add(sub(fake, mean_all(d_real)), scale(gp, lambda_lp)), neg(fake)};
}

Tensor gradient_penalty(const std::function<Tensor(const Tensor&)>& d, const Tensor& x_hat, double gamma) {
  const auto v = x_hat.values();
  const Tensor x = Tensor::leaf(x_hat.shape(), std::vector<double>(v.begin(), v.end()));
  const Tensor out = d(x);
  const Tensor g = grad(sum_all(out), std::vector<Tensor>{x}, true)[0];
  const std::size_t b = x.size(0);
  const Tensor norm = sqrt(add_scalar(sum(square(reshape(g, {b, g.numel() / b})), 1), 1e-12));
  return scale(mean_all(square(relu(add_scalar(norm, -1.0)))), gamma);
}

// --- penalty inputs ----------------------------------------------------------------

Tensor interpolate_eigenvalues(const Tensor& real, const Tensor& fake, std::mt19937_64& rng) {
  if (real.shape() != fake.shape() || real.dim() != 2) throw InvalidInput("interpolate_eigenvalues: shape mismatch");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t b = real.size(0), k = real.size(1);
  std::vector<double> out(b * k);
  const auto r = real.values(), f = fake.values();
  for (std::size_t i = 0; i < b; ++i) {
    const double t = u(rng);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = r[i * k + j] + t * (f[i * k + j] - r[i * k + j]);
  }
  return Tensor::constant(real.shape(), std::move(out));
}

namespace {

linalg::Matrix block(std::span<const double> v, std::size_t b, std::size_t n_max, std::size_t n, std::size_t k) {
  linalg::Matrix m(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) m(i, j) = v[(b * n_max + i) * k + j];
  return m;
}

}  // namespace

Tensor interpolate_eigenvectors(const Tensor& real, const Tensor& fake, const Conditioning& c, std::mt19937_64& rng) {
  if (real.shape() != fake.shape() || real.dim() != 3) throw InvalidInput("interpolate_eigenvectors: shape mismatch");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t b = real.size(0), n_max = real.size(1), k = real.size(2);
  std::vector<double> out(real.numel(), 0.0);
  for (std::size_t s = 0; s < b; ++s) {
    const std::size_t n = c.ns[s];
    const auto r = block(real.values(), s, n_max, n, k);
    const auto f = block(fake.values(), s, n_max, n, k);
    const double t = u(rng);
    linalg::Matrix m;
    try {
      m = manifold::interpolate(r, f, t);
    } catch (const RankDeficient&) {
      m = r;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) out[(s * n_max + i) * k + j] = m(i, j);
  }
  return Tensor::constant(real.shape(), std::move(out));
}

Tensor perturb_graphs(const Tensor& adj, const Conditioning& c, double p, double var, std::mt19937_64& rng) {
  if (adj.dim() != 3) throw InvalidInput("perturb_graphs: expected [B, N, N]");
  const std::size_t b = adj.size(0), n_max = adj.size(1);
  std::bernoulli_distribution flip(p);
  std::normal_distribution<double> noise(0.0, std::sqrt(var));
  const auto a = adj.values();
  std::vector<double> out(adj.numel(), 0.0);
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < c.ns[s]; ++i)
      for (std::size_t j = i + 1; j < c.ns[s]; ++j) {
        const std::size_t ij = (s * n_max + i) * n_max + j, ji = (s * n_max + j) * n_max + i;
        double v = a[ij];
        if (p > 0.0 && flip(rng)) v = 1.0 - v;
        if (var > 0.0) v += noise(rng);
        out[ij] = out[ji] = std::clamp(v, 0.0, 1.0);
      }
  return Tensor::constant(adj.shape(), std::move(out));
}

// --- schedule --------------------------------------------------------------------------

double teacher_tau(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) return 1.0;
  const std::size_t into = step - cfg.warmup_steps;
  if (into >= cfg.anneal_steps) return cfg.tau_end;
  const double frac = static_cast<double>(into) / static_cast<double>(cfg.anneal_steps);
  return cfg.tau_end + (cfg.tau_start - cfg.tau_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

std::vector<bool> teacher_forcing_mix(std::size_t step, std::size_t batch, const TrainConfig& cfg,
                                      std::mt19937_64& rng) {
  std::vector<bool> real(batch, true);
  if (step < cfg.warmup_steps) return real;
  std::bernoulli_distribution coin(teacher_tau(step, cfg));
  for (std::size_t i = 0; i < batch; ++i) real[i] = coin(rng);
  return real;
}

// --- optimiser ---------------------------------------------------------------------------

Adam::Adam(const nn::ParamList& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    const auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
    p.zero_grad();
  }
}

void ema_update(std::vector<std::vector<double>>& shadow, const nn::ParamList& params, double retention) {
  if (shadow.size() != params.size()) throw InvalidInput("ema_update: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto v = params[i].tensor.values();
    if (shadow[i].size() != v.size()) throw InvalidInput("ema_update: shape mismatch for " + params[i].name);
    for (std::size_t j = 0; j < v.size(); ++j) shadow[i][j] = retention * shadow[i][j] + (1.0 - retention) * v[j];
  }
}

// --- real data -----------------------------------------------------------------------------

std::vector<SpectralGraph> prepare(const std::vector<Graph>& gs, std::size_t k, std::size_t n_max,
                                   std::size_t* skipped) {
  std::vector<SpectralGraph> out;
  std::size_t skip = 0;
  for (const auto& g : gs) {
    if (g.n() <= k + 1 || g.n() > n_max || !graphs::is_connected(g)) {
      ++skip;
      continue;
    }
    out.push_back({g, graphs::top_k_spectrum(g, k)});
  }
  if (skipped) *skipped = skip;
  return out;
}

RealBatch make_real_batch(const std::vector<const SpectralGraph*>& items, std::size_t n_max, std::size_t k) {
  if (items.empty()) throw InvalidInput("make_real_batch: empty batch");
  const std::size_t b = items.size();
  std::vector<std::size_t> ns;
  std::vector<double> adj(b * n_max * n_max, 0.0), lam(b * k, 0.0), u(b * n_max * k, 0.0);
  for (std::size_t s = 0; s < b; ++s) {
    const auto& g = items[s]->graph;
    const auto& sp = items[s]->spectrum;
    if (sp.k != k) throw InvalidInput("make_real_batch: spectrum k mismatch");
    ns.push_back(g.n());
    for (const auto& [i, j] : g.edges()) adj[(s * n_max + i) * n_max + j] = adj[(s * n_max + j) * n_max + i] = 1.0;
    for (std::size_t j = 0; j < k; ++j) lam[s * k + j] = sp.eigenvalues[j];
    for (std::size_t i = 0; i < g.n(); ++i)
      for (std::size_t j = 0; j < k; ++j) u[(s * n_max + i) * k + j] = sp.eigenvectors(i, j);
  }
  RealBatch r;
  r.cond = models::make_conditioning(ns, n_max);
  r.adj = Tensor::constant({b, n_max, n_max}, std::move(adj));
  r.lambda = Tensor::constant({b, k}, std::move(lam));
  r.u = Tensor::constant({b, n_max, k}, std::move(u));
  return r;
}

Tensor canonical_signs(const Tensor& u) {
  if (u.dim() != 3) throw InvalidInput("canonical_signs: expected [B, N, k]");
  const std::size_t b = u.size(0), n = u.size(1), k = u.size(2);
  const auto v = u.values();
  std::vector<double> sign(b * k, 1.0);
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (std::abs(v[(s * n + i) * k + j]) > std::abs(v[(s * n + best) * k + j])) best = i;
      if (v[(s * n + best) * k + j] < 0.0) sign[s * k + j] = -1.0;
    }
  return mul(u, Tensor::constant({b, 1, k}, std::move(sign)));
}

// --- trainer ---------------------------------------------------------------------------------

std::string StepLog::to_json() const {
  json j{{"step", step},         {"tau", tau},         {"d_lambda", d_lambda},   {"d_u", d_u},
         {"d_a", d_a},           {"g_lambda", g_lambda}, {"g_u", g_u},           {"g_a", g_a},
         {"gp_lambda", gp_lambda}, {"gp_u", gp_u},     {"gp_a", gp_a},           {"bank_drift", bank_drift}};
  return j.dump();
}

models::Model clone(const models::Model& m) {
  models::Model out(m.cfg, 0);
  std::vector<std::vector<double>> values;
  for (const auto& p : m.parameters()) values.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  assign_parameters(out.parameters(), values);
  return out;
}

void assign_parameters(const nn::ParamList& params, const std::vector<std::vector<double>>& values) {
  if (params.size() != values.size()) throw InvalidInput("assign_parameters: count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto w = t.mutable_values();
    if (w.size() != values[i].size()) throw InvalidInput("assign_parameters: size mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), w.begin());
  }
}

Trainer::Trainer(const models::ModelConfig& mcfg, const TrainConfig& tcfg, const std::vector<Graph>& train_graphs)
    : mcfg_(mcfg), tcfg_(tcfg), model_(mcfg, tcfg.seed), rng_(tcfg.seed ^ 0x5eedULL) {
  tcfg_.validate();
  data_ = prepare(train_graphs, mcfg.k, mcfg.n_max, &skipped_);
  if (skipped_)
    std::cerr << "warning: skipped " << skipped_ << " training graphs (n <= k + 1, n > n_max, or disconnected)\n";
  if (data_.empty()) throw InvalidInput("trainer: no usable training graphs");
  model_.gen.collect(gen_params_, "gen");
  model_.disc.collect(disc_params_, "disc");
  gen_opt_ = Adam(gen_params_, tcfg_.lr, tcfg_.beta1, tcfg_.beta2, tcfg_.adam_eps);
  disc_opt_ = Adam(disc_params_, tcfg_.lr, tcfg_.beta1, tcfg_.beta2, tcfg_.adam_eps);
  for (const auto& p : gen_params_) ema_.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
}

StepLog Trainer::step() {
  const std::size_t b = std::min(tcfg_.batch_size, data_.size());
  std::vector<std::size_t> idx(data_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng_)]);
  }
  idx.resize(b);
  return train_step(idx);
}

namespace {

Conditioning repeat_conditioning(const Conditioning& c, std::size_t times) {
  std::vector<std::size_t> ns;
  for (std::size_t t = 0; t < times; ++t) ns.insert(ns.end(), c.ns.begin(), c.ns.end());
  return models::make_conditioning(ns, c.n_max);
}

// Real conditioning with eigenvalue noise and a small random right rotation.
void perturb_real(Tensor& lambda, Tensor& u, double var, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, std::sqrt(var));
  const std::size_t b = lambda.size(0), k = lambda.size(1);
  std::vector<double> lam(lambda.values().begin(), lambda.values().end());
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t j = 0; j < k; ++j) lam[s * k + j] = std::clamp(lam[s * k + j] + nd(rng), 1e-6, 2.0);
    std::sort(lam.begin() + static_cast<std::ptrdiff_t>(s * k), lam.begin() + static_cast<std::ptrdiff_t>((s + 1) * k));
  }
  lambda = Tensor::constant({b, k}, std::move(lam));
  std::vector<double> rot(b * k * k);
  for (std::size_t s = 0; s < b; ++s) {
    std::vector<double> params(k * (k - 1) / 2);
    for (double& p : params) p = nd(rng) * 0.1;
    const auto r = linalg::matrix_exp(manifold::stiefel_skew(k, k, params));
    std::copy(r.data().begin(), r.data().end(), rot.begin() + static_cast<std::ptrdiff_t>(s * k * k));
  }
  NoGradGuard guard;
  u = matmul(u, Tensor::constant({b, k, k}, std::move(rot)));
}

bool finite(const std::initializer_list<double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

StepLog Trainer::train_step(const std::vector<std::size_t>& indices) {
  std::vector<const SpectralGraph*> items;
  for (std::size_t i : indices) {
    if (i >= data_.size()) throw InvalidInput("train_step: index out of range");
    items.push_back(&data_[i]);
  }
  const std::size_t k = mcfg_.k;
  const RealBatch real = make_real_batch(items, mcfg_.n_max, k);
  const Conditioning& c = real.cond;
  const std::size_t b = c.batch();
  const nn::Context ctx{true, &rng_};
  const auto& gen = model_.gen;
  const auto& disc = model_.disc;

  StepLog log;
  log.step = step_;
  log.tau = teacher_tau(step_, tcfg_);
  const auto use_real = teacher_forcing_mix(step_, b, tcfg_, rng_);
  Tensor lam_real_cond = real.lambda, u_real_cond = real.u;
  if (step_ >= tcfg_.warmup_steps && tcfg_.noise_var > 0.0) perturb_real(lam_real_cond, u_real_cond, tcfg_.noise_var, rng_);

  // Generators, once; the discriminator step sees detached copies.
  const auto z = models::sample_noise(c, k, rng_);
  const auto w = gen.noise.forward(z, c);
  const Tensor lam_g = gen.eigenvalues.forward(w.w_lambda, c);
  const Tensor lam_c = models::select_rows(lam_real_cond, lam_g, use_real);
  const Tensor u_g = canonical_signs(gen.eigenvectors.forward(lam_c, w.w_u, c, rng_, true).u);
  const Tensor u_c = models::select_rows(u_real_cond, u_g, use_real);
  const Tensor a_g = gen.graph.forward(lam_c, u_c, w.w_a, c, ctx);

  {
    const Tensor lam_gd = lam_g.detach(), lam_cd = lam_c.detach(), u_gd = u_g.detach(), u_cd = u_c.detach(),
                 a_gd = a_g.detach();
    const Conditioning c3 = repeat_conditioning(c, 3), c4 = repeat_conditioning(c, 4);

    const Tensor lam_hat = concat({interpolate_eigenvalues(real.lambda, lam_gd, rng_), real.lambda, lam_gd}, 0);
    const Tensor gp_l =
        gradient_penalty([&](const Tensor& x) { return disc.eigenvalues.forward(x, c3); }, lam_hat, tcfg_.gamma);
    const auto ll = wgan_lp_losses(disc.eigenvalues.forward(real.lambda, c), disc.eigenvalues.forward(lam_gd, c), gp_l,
                                   tcfg_.lambda_lp);

    const Tensor u_hat = concat({interpolate_eigenvectors(real.u, u_gd, c, rng_), real.u, u_gd}, 0);
    const Tensor u_hat_lam = concat({real.lambda, real.lambda, lam_cd}, 0);
    const Tensor gp_u = gradient_penalty(
        [&](const Tensor& x) { return disc.eigenvectors.forward(x, u_hat_lam, c3); }, u_hat, tcfg_.gamma);
    const auto lu = wgan_lp_losses(disc.eigenvectors.forward(real.u, real.lambda, c),
                                   disc.eigenvectors.forward(u_gd, lam_cd, c), gp_u, tcfg_.lambda_lp);

    const Tensor a_hat = concat({perturb_graphs(real.adj, c, tcfg_.rewire_p, tcfg_.noise_var, rng_),
                                 perturb_graphs(a_gd, c, tcfg_.rewire_p, tcfg_.noise_var, rng_), real.adj, a_gd},
                                0);
    const Tensor a_hat_lam = concat({real.lambda, lam_cd, real.lambda, lam_cd}, 0);
    const Tensor a_hat_u = concat({real.u, u_cd, real.u, u_cd}, 0);
    const Tensor gp_a = gradient_penalty(
        [&](const Tensor& x) { return disc.graph.forward(x, a_hat_lam, a_hat_u, c4, ctx); }, a_hat, tcfg_.gamma);
    const auto la = wgan_lp_losses(disc.graph.forward(real.adj, real.lambda, real.u, c, ctx),
                                   disc.graph.forward(a_gd, lam_cd, u_cd, c, ctx), gp_a, tcfg_.lambda_lp);

    log.d_lambda = ll.d.item();
    log.d_u = lu.d.item();
    log.d_a = la.d.item();
    log.gp_lambda = gp_l.item();
    log.gp_u = gp_u.item();
    log.gp_a = gp_a.item();
    if (!finite({log.d_lambda, log.d_u, log.d_a})) {
      const auto path = dump_dir_ / ("nonfinite_step_" + std::to_string(step_) + ".json");
      std::ofstream(path) << log.to_json() << "\n";
      throw NumericalFailure("non-finite discriminator loss at step " + std::to_string(step_) + "; dump written to " +
                             path.string());
    }
    backward(add(add(ll.d, lu.d), la.d));
    disc_opt_.step();
    for (auto& p : gen_params_) p.tensor.zero_grad();
  }

  const Tensor gl = neg(mean_all(disc.eigenvalues.forward(lam_g, c)));
  const Tensor gu = neg(mean_all(disc.eigenvectors.forward(u_g, lam_c, c)));
  const Tensor ga = neg(mean_all(disc.graph.forward(a_g, lam_c, u_c, c, ctx)));
  log.g_lambda = gl.item();
  log.g_u = gu.item();
  log.g_a = ga.item();
  if (!finite({log.g_lambda, log.g_u, log.g_a})) {
    const auto path = dump_dir_ / ("nonfinite_step_" + std::to_string(step_) + ".json");
    std::ofstream(path) << log.to_json() << "\n";
    throw NumericalFailure("non-finite generator loss at step " + std::to_string(step_) + "; dump written to " +
                           path.string());
  }
  backward(add(add(gl, gu), ga));
  for (auto& p : disc_params_) p.tensor.zero_grad();
  gen_opt_.step();
  model_.gen.eigenvectors.project_bank();
  ema_update(ema_, gen_params_, tcfg_.ema);
  log.bank_drift = model_.gen.eigenvectors.bank_drift();
  ++step_;
  return log;
}

models::Model Trainer::ema_model() const {
  models::Model m = clone(model_);
  nn::ParamList gp;
  m.gen.collect(gp, "gen");
  assign_parameters(gp, ema_);
  return m;
}

// --- checkpoints -------------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'P', 'E', 'C', 'G', 'E', 'N', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(const std::vector<std::vector<double>>& vs) {
    u64(vs.size());
    for (const auto& v : vs) {
      u64(v.size());
      bytes(v.data(), v.size() * sizeof(double));
    }
  }
  std::vector<unsigned char>& buf() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  void bytes(void* out, std::size_t n) {
    if (pos_ + n > n_) throw IoError("checkpoint: truncated file");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > n_ - pos_) throw IoError("checkpoint: truncated string");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<std::vector<double>> doubles() {
    const std::uint64_t count = u64();
    std::vector<std::vector<double>> out;
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint64_t n = u64();
      if (n * sizeof(double) > n_ - pos_) throw IoError("checkpoint: truncated array");
      std::vector<double> v(n);
      bytes(v.data(), n * sizeof(double));
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  const unsigned char* p_;
  std::size_t n_, pos_ = 0;
};

std::vector<std::vector<double>> values_of(const nn::ParamList& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& p : ps) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

struct CheckpointData {
  json header;
  std::vector<std::vector<double>> params, gen_m, gen_v, disc_m, disc_v, ema;
  std::string rng;
};

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError("checkpoint: " + path.string() + " is not a checkpoint file");
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  const auto crc = static_cast<std::uint32_t>(::crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (crc != stored) throw IoError("checkpoint: integrity check failed for " + path.string() + " (crc mismatch)");
  Reader r(buf.data() + sizeof(kMagic), buf.size() - sizeof(kMagic) - 4);
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointData d;
  try {
    d.header = json::parse(r.str());
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  d.params = r.doubles();
  d.gen_m = r.doubles();
  d.gen_v = r.doubles();
  d.disc_m = r.doubles();
  d.disc_v = r.doubles();
  d.ema = r.doubles();
  d.rng = r.str();
  return d;
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  json header{{"model", model_config_json(mcfg_)}, {"step", step_}, {"seed", tcfg_.seed}};
  json names = json::array();
  for (const auto& p : model_.parameters()) names.push_back(p.name);
  header["parameters"] = names;
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.str(header.dump());
  w.doubles(values_of(model_.parameters()));
  auto& self = const_cast<Trainer&>(*this);
  w.doubles(self.gen_opt_.first_moments());
  w.doubles(self.gen_opt_.second_moments());
  w.doubles(self.disc_opt_.first_moments());
  w.doubles(self.disc_opt_.second_moments());
  w.doubles(ema_);
  std::ostringstream rs;
  rs << rng_;
  w.str(rs.str());
  const auto crc = static_cast<std::uint32_t>(::crc32(0L, w.buf().data(), static_cast<uInt>(w.buf().size())));
  w.u32(crc);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(w.buf().data()), static_cast<std::streamsize>(w.buf().size()));
    if (!out) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const auto d = read_checkpoint(path);
  const auto cfg = model_config_from(d.header.at("model"));
  if (model_config_json(cfg) != model_config_json(mcfg_))
    throw IoError("checkpoint: model configuration differs from the current run");
  const auto params = model_.parameters();
  const auto& names = d.header.at("parameters");
  if (names.size() != params.size()) throw IoError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (names[i].get<std::string>() != params[i].name) throw IoError("checkpoint: parameter name mismatch");
  try {
    assign_parameters(params, d.params);
    if (d.gen_m.size() != gen_params_.size() || d.disc_m.size() != disc_params_.size() ||
        d.ema.size() != gen_params_.size())
      throw InvalidInput("optimiser state size mismatch");
  } catch (const InvalidInput& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  step_ = d.header.at("step");
  gen_opt_.first_moments() = d.gen_m;
  gen_opt_.second_moments() = d.gen_v;
  gen_opt_.set_steps(step_);
  disc_opt_.first_moments() = d.disc_m;
  disc_opt_.second_moments() = d.disc_v;
  disc_opt_.set_steps(step_);
  ema_ = d.ema;
  std::istringstream rs(d.rng);
  rs >> rng_;
}

models::ModelConfig checkpoint_model_config(const std::filesystem::path& checkpoint) {
  return model_config_from(read_checkpoint(checkpoint).header.at("model"));
}

models::Model load_ema_model(const std::filesystem::path& checkpoint) {
  const auto d = read_checkpoint(checkpoint);
  models::Model m(model_config_from(d.header.at("model")), 0);
  try {
    assign_parameters(m.parameters(), d.params);
    nn::ParamList gp;
    m.gen.collect(gp, "gen");
    assign_parameters(gp, d.ema);
  } catch (const InvalidInput& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  return m;
}

// --- sampling ------------------------------------------------------------------------------------

std::vector<Graph> sample_graphs(const models::Model& m, const std::vector<std::size_t>& ns, std::mt19937_64& rng,
                                 std::size_t batch, const std::vector<SpectralGraph>* real_spectra) {
  if (batch == 0) throw InvalidInput("sample_graphs: batch must be positive");
  if (real_spectra && real_spectra->size() != ns.size())
    throw InvalidInput("sample_graphs: real spectra count differs from node counts");
  NoGradGuard guard;
  std::vector<Graph> out;
  const std::size_t n_max = m.cfg.n_max;
  for (std::size_t start = 0; start < ns.size(); start += batch) {
    const std::size_t end = std::min(ns.size(), start + batch);
    std::vector<std::size_t> chunk(ns.begin() + static_cast<std::ptrdiff_t>(start),
                                   ns.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t n : chunk)
      if (n > n_max || n <= m.cfg.k) throw InvalidInput("sample_graphs: node count " + std::to_string(n) + " unsupported");
    const auto c = models::make_conditioning(chunk, n_max);
    models::GeneratedSample s;
    if (real_spectra) {
      std::vector<const SpectralGraph*> items;
      for (std::size_t i = start; i < end; ++i) items.push_back(&(*real_spectra)[i]);
      const auto rb = make_real_batch(items, n_max, m.cfg.k);
      models::SpectralOverride o{rb.lambda, rb.u, std::vector<bool>(chunk.size(), true)};
      s = models::generate(m, c, rng, {}, &o);
    } else {
      s = models::generate(m, c, rng, {});
    }
    const auto a = s.adj.values();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      Graph g(chunk[b]);
      for (std::size_t i = 0; i < chunk[b]; ++i)
        for (std::size_t j = i + 1; j < chunk[b]; ++j)
          if (a[(b * n_max + i) * n_max + j] > 0.5) g.add_edge(i, j);
      out.push_back(std::move(g));
    }
  }
  return out;
}

// --- model selection -------------------------------------------------------------------

Selection select_samples(const std::vector<std::vector<Graph>>& candidates, const std::vector<Graph>& train,
                         const std::vector<Graph>& val, bool emd) {
  if (candidates.empty()) throw InvalidInput("select_model: no candidates");
  if (val.empty() || train.empty()) throw InvalidInput("select_model: empty train or validation set");
  auto baseline = metrics::mmd_all(train, val, emd);
  Selection sel;
  for (const auto& samples : candidates) {
    double score = std::numeric_limits<double>::infinity();
    if (!samples.empty()) score = metrics::ratio(metrics::mmd_all(samples, val, emd), baseline);
    sel.scores.push_back(score);
  }
  sel.best = static_cast<std::size_t>(std::min_element(sel.scores.begin(), sel.scores.end()) - sel.scores.begin());
  return sel;
}

Selection select_model(const std::vector<std::filesystem::path>& checkpoints, const std::vector<Graph>& train,
                       const std::vector<Graph>& val, std::uint64_t seed, bool emd) {
  if (checkpoints.empty()) throw InvalidInput("select_model: empty checkpoint list");
  std::vector<std::vector<Graph>> candidates;
  for (const auto& path : checkpoints) {
    auto model = load_ema_model(path);
    std::vector<std::size_t> ns;
    for (const auto& g : val)
      if (g.n() > model.cfg.k && g.n() <= model.cfg.n_max) ns.push_back(g.n());
    if (ns.size() < val.size())
      std::cerr << "warning: " << val.size() - ns.size() << " validation sizes outside the model's range\n";
    std::mt19937_64 rng(seed);
    candidates.push_back(sample_graphs(model, ns, rng));
  }
  return select_samples(candidates, train, val, emd);
}

}  // namespace specgen::training
