#pragma once

// Neural building blocks. Layouts are channel-last:
//   sets   [B, N, C] with node mask [B, N, 1]
//   pairs  [B, N, N, C] with pair mask [B, N, N, 1]
//   series [B, L, C]

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "specgen/ops.hpp"

namespace specgen::nn {

using ad::Tensor;

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

/// Per-call state: dropout needs to know whether we train and which stream to draw from.
struct Context {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(ParamList& out, const std::string& prefix) const = 0;
  ParamList parameters(const std::string& prefix = "") const {
    ParamList out;
    collect(out, prefix);
    return out;
  }
};

class Linear : public Module {
 public:
  Linear() = default;
  /// Uniform fan-in init in [-1/sqrt(in), 1/sqrt(in)]; zero_init gives all zeros.
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng, bool zero_init = false);
  /// Applies to the last axis of x.
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const override;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor weight_, bias_;
};

/// widths = {in, h1, ..., out}. Hidden blocks are linear -> layer norm -> GELU;
/// the final block is linear only.
class MLP : public Module {
 public:
  MLP() = default;
  MLP(std::vector<std::size_t> widths, std::mt19937_64& rng, bool zero_last = false);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const override;
  std::size_t in() const { return widths_.front(); }
  std::size_t out() const { return widths_.back(); }

 private:
  std::vector<std::size_t> widths_;
  std::vector<Linear> linears_;
  std::vector<Tensor> gains_, biases_;
};

/// Permutation-equivariant set layer: per-node features, a masked mean of an
/// aggregate embedding broadcast back to every node, and a joint MLP.
class PointNetST : public Module {
 public:
  PointNetST() = default;
  PointNetST(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
             bool zero_last = false);
  /// x [B, N, in], mask [B, N, 1] -> [B, N, out]. Padded rows of the output are zero.
  Tensor forward(const Tensor& x, const Tensor& mask) const;
  void collect(ParamList& out, const std::string& prefix) const override;

 private:
  MLP feat_, agg_, cat_;
};

/// One PPGN block: per-channel products of two pointwise MLP embeddings scaled
/// by 1/sqrt(n), fused with the input by a third MLP and instance-normalised.
class PPGNLayer : public Module {
 public:
  PPGNLayer() = default;
  PPGNLayer(std::size_t in, std::size_t out, std::mt19937_64& rng);
  /// x [B, N, N, in]; pair mask [B, N, N, 1]; inv_sqrt_n [B, 1, 1, 1].
  Tensor forward(const Tensor& x, const Tensor& mask, const Tensor& inv_sqrt_n) const;
  void collect(ParamList& out, const std::string& prefix) const override;

 private:
  MLP m1_, m2_, m3_;
};

/// Input embedding, a chain of PPGN layers, and a linear readout over the
/// concatenation of the embedding and every layer output.
class PPGNStack : public Module {
 public:
  PPGNStack() = default;
  PPGNStack(std::size_t in, std::size_t width, std::size_t layers, std::size_t out,
            std::mt19937_64& rng, double dropout = 0.1);
  /// Returns [B, N, N, out], zero outside the mask.
  Tensor forward(const Tensor& x, const Tensor& mask, const Tensor& inv_sqrt_n,
                 const Context& ctx) const;
  void collect(ParamList& out, const std::string& prefix) const override;

 private:
  Linear embed_;
  std::vector<PPGNLayer> layers_;
  Linear readout_;
  double dropout_ = 0.1;
};

/// softmax((logits + Gumbel noise) / tau) along the last axis. With `hard`, the
/// forward value is the one-hot argmax and the gradient is that of the soft sample.
Tensor gumbel_softmax(const Tensor& logits, double tau, std::mt19937_64& rng, bool hard);

/// tanh(conv_a(x)) * sigmoid(conv_b(x)), or a plain convolution when !gated.
class GatedConv1d : public Module {
 public:
  GatedConv1d() = default;
  GatedConv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
              bool gated, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const override;
  /// Exposed so tests can saturate the gate.
  Tensor& gate_bias() { return gate_b_; }

 private:
  std::size_t kernel_ = 1, stride_ = 1;
  bool gated_ = true;
  Tensor w_, b_, gate_w_, gate_b_;
};

/// [B, n_max, 1] with ones in the first ns[b] rows.
Tensor node_mask(const std::vector<std::size_t>& ns, std::size_t n_max);
/// [B, n_max, n_max, 1] outer product of the node mask.
Tensor pair_mask(const std::vector<std::size_t>& ns, std::size_t n_max);
/// [B, 1, 1, 1] holding 1/sqrt(ns[b]).
Tensor inv_sqrt_counts(const std::vector<std::size_t>& ns);

}  // namespace specgen::nn
