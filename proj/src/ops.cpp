#include "specgen/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "specgen/errors.hpp"
#include "specgen/linalg.hpp"

namespace specgen::ad {

namespace {

using Vec = std::vector<double>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void shape_error(const char* op, const std::string& what) {
  throw InvalidInput(std::string(op) + ": " + what);
}

const Tensor& parent(const Tensor& self, std::size_t i) { return self.node()->parents[i]; }

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      shape_error(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `in` viewed at rank of `out`, zero on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  const auto own = strides_of(in);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t j = i + (r - in.size());
    st[j] = in[i] == 1 ? 0 : own[i];
  }
  return st;
}

// Calls f(out_index, a_offset, b_offset) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t ia = sa[r - 1], ib = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t t = 0; t < inner; ++t) f(o + t, oa + t * ia, ob + t * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      if (++idx[d] < out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      oa -= sa[d] * (out[d] - 1);
      ob -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

template <class F>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F&& f, BackwardFn bw) {
  const auto av = a.values();
  const auto bv = b.values();
  if (a.shape() == b.shape()) {
    Vec out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result(op, a.shape(), std::move(out), {a, b}, std::move(bw));
  }
  Shape s = broadcast_shape(op, a.shape(), b.shape());
  Vec out(numel(s));
  for_each_broadcast(s, broadcast_strides(a.shape(), s), broadcast_strides(b.shape(), s),
                     [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = f(av[i], bv[j]); });
  return make_result(op, std::move(s), std::move(out), {a, b}, std::move(bw));
}

template <class F>
Tensor unary(const char* op, const Tensor& x, F&& f, BackwardFn bw) {
  const auto xv = x.values();
  Vec out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(op, x.shape(), std::move(out), {x}, std::move(bw));
}

// [pre, n, post] view of an axis.
struct AxisView {
  std::size_t pre = 1, n = 1, post = 1;
};

AxisView axis_view(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) shape_error(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.pre *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.post *= s[i];
  return v;
}

// Sum over `axis` divided by `divisor`.
Tensor reduce_axis(const char* op, const Tensor& x, std::size_t axis, bool keepdim, double divisor) {
  const AxisView v = axis_view(op, x.shape(), axis);
  const auto xv = x.values();
  Vec out(v.pre * v.post, 0.0);
  for (std::size_t p = 0; p < v.pre; ++p)
    for (std::size_t i = 0; i < v.n; ++i) {
      const double* src = xv.data() + (p * v.n + i) * v.post;
      double* dst = out.data() + p * v.post;
      for (std::size_t q = 0; q < v.post; ++q) dst[q] += src[q];
    }
  if (divisor != 1.0)
    for (double& o : out) o /= divisor;
  Shape s = x.shape();
  Shape keep = s;
  keep[axis] = 1;
  if (keepdim) {
    s[axis] = 1;
  } else {
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  const Shape in_shape = x.shape();
  return make_result(op, std::move(s), std::move(out), {x},
                     [keep, in_shape, divisor](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       Tensor gg = broadcast_to(reshape(g, keep), in_shape);
                       return std::vector<Tensor>{divisor != 1.0 ? scale(gg, 1.0 / divisor) : gg};
                     });
}

}  // namespace

// --- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    shape_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  if (shape == x.shape()) return x;
  const Shape in = x.shape();
  return make_result("reshape", std::move(shape), Vec(x.values().begin(), x.values().end()), {x},
                     [in](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{reshape(g, in)};
                     });
}

Tensor permute(const Tensor& x, std::vector<std::size_t> axes) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) shape_error("permute", "axes rank mismatch");
  std::vector<std::size_t> inv(r, r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || inv[axes[i]] != r) shape_error("permute", "invalid axes");
    inv[axes[i]] = i;
  }
  bool identity = true;
  for (std::size_t i = 0; i < r; ++i) identity = identity && axes[i] == i;
  if (identity) return x;
  Shape out(r);
  const auto st = strides_of(s);
  std::vector<std::size_t> src(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = s[axes[i]];
    src[i] = st[axes[i]];
  }
  Vec v(x.numel());
  const auto xv = x.values();
  const std::vector<std::size_t> zero(r, 0);
  for_each_broadcast(out, src, zero, [&](std::size_t o, std::size_t i, std::size_t) { v[o] = xv[i]; });
  return make_result("permute", std::move(out), std::move(v), {x},
                     [inv](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{permute(g, inv)};
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.dim() < 2) shape_error("transpose", "need at least 2 axes");
  std::vector<std::size_t> axes(x.dim());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.dim() - 1], axes[x.dim() - 2]);
  return permute(x, axes);
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shape("broadcast_to", x.shape(), shape) != shape)
    shape_error("broadcast_to", shape_str(x.shape()) + " -> " + shape_str(shape));
  Vec v(numel(shape));
  const auto xv = x.values();
  for_each_broadcast(shape, broadcast_strides(x.shape(), shape), std::vector<std::size_t>(shape.size(), 0),
                     [&](std::size_t o, std::size_t i, std::size_t) { v[o] = xv[i]; });
  const Shape in = x.shape();
  return make_result("broadcast_to", shape, std::move(v), {x},
                     [in](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{sum_to(g, in)};
                     });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shape("sum_to", shape, x.shape()) != x.shape())
    shape_error("sum_to", shape_str(x.shape()) + " -> " + shape_str(shape));
  Vec v(numel(shape), 0.0);
  const auto xv = x.values();
  for_each_broadcast(x.shape(), broadcast_strides(shape, x.shape()),
                     std::vector<std::size_t>(x.dim(), 0),
                     [&](std::size_t o, std::size_t i, std::size_t) { v[i] += xv[o]; });
  const Shape in = x.shape();
  return make_result("sum_to", shape, std::move(v), {x},
                     [in](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{broadcast_to(g, in)};
                     });
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  if (xs.empty()) shape_error("concat", "no inputs");
  if (xs.size() == 1) return xs[0];
  Shape s = xs[0].shape();
  if (axis >= s.size()) shape_error("concat", "axis out of range");
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const auto& x : xs) {
    Shape t = x.shape();
    if (t.size() != s.size()) shape_error("concat", "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && t[i] != s[i])
        shape_error("concat", shape_str(t) + " vs " + shape_str(s) + " on axis " + std::to_string(axis));
    sizes.push_back(t[axis]);
    total += t[axis];
  }
  s[axis] = total;
  const AxisView v = axis_view("concat", s, axis);
  Vec out(numel(s));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto xv = xs[k].values();
    const std::size_t chunk = sizes[k] * v.post;
    for (std::size_t p = 0; p < v.pre; ++p)
      std::copy_n(xv.data() + p * chunk, chunk, out.data() + p * total * v.post + offset * v.post);
    offset += sizes[k];
  }
  return make_result("concat", std::move(s), std::move(out), std::vector<Tensor>(xs.begin(), xs.end()),
                     [sizes, axis](const Tensor&, const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> gs(sizes.size());
                       std::size_t start = 0;
                       for (std::size_t k = 0; k < sizes.size(); ++k) {
                         if (needs[k]) gs[k] = slice(g, axis, start, sizes[k]);
                         start += sizes[k];
                       }
                       return gs;
                     });
}

Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisView v = axis_view("slice", x.shape(), axis);
  if (start + length > v.n) shape_error("slice", "range exceeds axis of " + shape_str(x.shape()));
  if (start == 0 && length == v.n) return x;
  Shape s = x.shape();
  s[axis] = length;
  Vec out(v.pre * length * v.post);
  const auto xv = x.values();
  for (std::size_t p = 0; p < v.pre; ++p)
    std::copy_n(xv.data() + (p * v.n + start) * v.post, length * v.post,
                out.data() + p * length * v.post);
  const std::size_t n = v.n;
  return make_result("slice", std::move(s), std::move(out), {x},
                     [axis, start, length, n](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{pad(g, axis, start, n - start - length)};
                     });
}

Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after) {
  const AxisView v = axis_view("pad", x.shape(), axis);
  if (before == 0 && after == 0) return x;
  const std::size_t m = v.n + before + after;
  Shape s = x.shape();
  s[axis] = m;
  Vec out(v.pre * m * v.post, 0.0);
  const auto xv = x.values();
  for (std::size_t p = 0; p < v.pre; ++p)
    std::copy_n(xv.data() + p * v.n * v.post, v.n * v.post, out.data() + (p * m + before) * v.post);
  const std::size_t n = v.n;
  return make_result("pad", std::move(s), std::move(out), {x},
                     [axis, before, n](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{slice(g, axis, before, n)};
                     });
}

Tensor index_select(const Tensor& x, std::size_t axis, std::vector<std::size_t> index) {
  const AxisView v = axis_view("index_select", x.shape(), axis);
  for (std::size_t i : index)
    if (i >= v.n) shape_error("index_select", "index " + std::to_string(i) + " out of range");
  Shape s = x.shape();
  s[axis] = index.size();
  const std::size_t m = index.size();
  Vec out(v.pre * m * v.post);
  const auto xv = x.values();
  for (std::size_t p = 0; p < v.pre; ++p)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(xv.data() + (p * v.n + index[j]) * v.post, v.post, out.data() + (p * m + j) * v.post);
  const std::size_t n = v.n;
  return make_result("index_select", std::move(s), std::move(out), {x},
                     [axis, index = std::move(index), n](const Tensor&, const Tensor& g,
                                                         const std::vector<bool>&) {
                       return std::vector<Tensor>{index_add(g, axis, index, n)};
                     });
}

Tensor index_add(const Tensor& x, std::size_t axis, std::vector<std::size_t> index, std::size_t size) {
  const AxisView v = axis_view("index_add", x.shape(), axis);
  if (index.size() != v.n) shape_error("index_add", "index length mismatch");
  for (std::size_t i : index)
    if (i >= size) shape_error("index_add", "index " + std::to_string(i) + " out of range");
  Shape s = x.shape();
  s[axis] = size;
  Vec out(v.pre * size * v.post, 0.0);
  const auto xv = x.values();
  for (std::size_t p = 0; p < v.pre; ++p)
    for (std::size_t j = 0; j < v.n; ++j) {
      const double* src = xv.data() + (p * v.n + j) * v.post;
      double* dst = out.data() + (p * size + index[j]) * v.post;
      for (std::size_t q = 0; q < v.post; ++q) dst[q] += src[q];
    }
  return make_result("index_add", std::move(s), std::move(out), {x},
                     [axis, index = std::move(index)](const Tensor&, const Tensor& g,
                                                      const std::vector<bool>&) {
                       return std::vector<Tensor>{index_select(g, axis, index)};
                     });
}

// --- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](const Tensor& self, const Tensor& g, const std::vector<bool>& needs) {
                  std::vector<Tensor> gs(2);
                  if (needs[0]) gs[0] = sum_to(g, parent(self, 0).shape());
                  if (needs[1]) gs[1] = sum_to(g, parent(self, 1).shape());
                  return gs;
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](const Tensor& self, const Tensor& g, const std::vector<bool>& needs) {
                  std::vector<Tensor> gs(2);
                  if (needs[0]) gs[0] = sum_to(g, parent(self, 0).shape());
                  if (needs[1]) gs[1] = sum_to(neg(g), parent(self, 1).shape());
                  return gs;
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](const Tensor& self, const Tensor& g, const std::vector<bool>& needs) {
                  const Tensor& x = parent(self, 0);
                  const Tensor& y = parent(self, 1);
                  std::vector<Tensor> gs(2);
                  if (needs[0]) gs[0] = sum_to(mul(g, y), x.shape());
                  if (needs[1]) gs[1] = sum_to(mul(g, x), y.shape());
                  return gs;
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](const Tensor& self, const Tensor& g, const std::vector<bool>& needs) {
                  const Tensor& x = parent(self, 0);
                  const Tensor& y = parent(self, 1);
                  std::vector<Tensor> gs(2);
                  const Tensor gy = div(g, y);
                  if (needs[0]) gs[0] = sum_to(gy, x.shape());
                  if (needs[1]) gs[1] = sum_to(neg(mul(gy, div(x, y))), y.shape());
                  return gs;
                });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double s) {
  return unary("scale", x, [s](double v) { return v * s; },
               [s](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{scale(g, s)};
               });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary("add_scalar", x, [s](double v) { return v + s; },
               [](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{g};
               });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{mul(g, self)};
               });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); },
               [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{div(g, parent(self, 0))};
               });
}

Tensor sqrt(const Tensor& x) {
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{scale(div(g, self), 0.5)};
               });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{mul(g, add_scalar(neg(square(self)), 1.0))};
               });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x,
               [](double v) {
                 if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{mul(g, mul(self, add_scalar(neg(self), 1.0)))};
               });
}

Tensor erf(const Tensor& x) {
  return unary("erf", x, [](double v) { return std::erf(v); },
               [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                 const Tensor& x = parent(self, 0);
                 const double c = 2.0 / std::sqrt(M_PI);
                 return std::vector<Tensor>{mul(g, scale(exp(neg(square(x))), c))};
               });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; },
               [](const Tensor& self, const Tensor& g, const std::vector<bool>&) {
                 return std::vector<Tensor>{mul(g, scale(parent(self, 0), 2.0))};
               });
}

Tensor relu(const Tensor& x) {
  Vec m(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = xv[i] > 0 ? 1.0 : 0.0;
  return mul(x, Tensor::constant(x.shape(), std::move(m)));
}

Tensor gelu(const Tensor& x) {
  const auto xv = x.values();
  Vec y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * M_SQRT1_2));
  return fused(
      "gelu",
      [](std::span<const Tensor> in) {
        const Tensor& v = in[0];
        return scale(mul(v, add_scalar(erf(scale(v, M_SQRT1_2)), 1.0)), 0.5);
      },
      {x}, std::move(y),
      [](std::span<const Tensor> in, std::span<const double>, std::span<const double> g, const std::vector<bool>&) {
        const auto v = in[0].values();
        Vec d(v.size());
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double cdf = 0.5 * (1.0 + std::erf(v[i] * M_SQRT1_2));
          d[i] = g[i] * (cdf + v[i] * inv_sqrt_2pi * std::exp(-0.5 * v[i] * v[i]));
        }
        return std::vector<Vec>{std::move(d)};
      });
}

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce_axis("sum", x, axis, keepdim, 1.0);
}

Tensor sum_all(const Tensor& x) {
  const auto xv = x.values();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  const Shape in = x.shape();
  return make_result("sum_all", {}, {s}, {x},
                     [in](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{broadcast_to(reshape(g, Shape(in.size(), 1)), in)};
                     });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  if (axis >= x.dim()) shape_error("mean", "axis out of range");
  const std::size_t n = x.size(axis);
  if (n == 0) shape_error("mean", "empty axis");
  return reduce_axis("mean", x, axis, keepdim, static_cast<double>(n));
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) shape_error("mean_all", "empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor masked_mean(const Tensor& x, const Tensor& mask, std::size_t axis, bool keepdim) {
  Tensor m = mask.detach();
  Tensor num = sum(mul(x, m), axis, keepdim);
  Tensor cnt = sum(broadcast_to(m, broadcast_shape("masked_mean", x.shape(), m.shape())), axis, keepdim);
  auto cv = cnt.mutable_values();
  for (double& c : cv) c = std::max(c, 1.0);
  return div(num, cnt);
}

// --- linear algebra -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) shape_error("matmul", "operands need at least 2 axes");
  if (b.dim() == 2 && a.dim() > 2) {
    Shape s = a.shape();
    const std::size_t k = s.back();
    Tensor a2 = reshape(a, {a.numel() / k, k});
    Tensor y = matmul(a2, b);
    s.back() = b.size(1);
    return reshape(y, s);
  }
  if (a.dim() != b.dim()) shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t r = a.dim();
  for (std::size_t i = 0; i + 2 < r; ++i)
    if (a.size(i) != b.size(i))
      shape_error("matmul", "batch mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.size(r - 2), k = a.size(r - 1), n = b.size(r - 1);
  if (b.size(r - 2) != k) shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t batch = a.numel() / std::max<std::size_t>(m * k, 1);
  Shape s = a.shape();
  s[r - 1] = n;
  Vec out(batch * m * n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t t = 0; t < batch; ++t) {
    Eigen::Map<const RowMat> A(av.data() + t * m * k, static_cast<Eigen::Index>(m),
                               static_cast<Eigen::Index>(k));
    Eigen::Map<const RowMat> B(bv.data() + t * k * n, static_cast<Eigen::Index>(k),
                               static_cast<Eigen::Index>(n));
    Eigen::Map<RowMat> C(out.data() + t * m * n, static_cast<Eigen::Index>(m),
                         static_cast<Eigen::Index>(n));
    C.noalias() = A * B;
  }
  return make_result("matmul", std::move(s), std::move(out), {a, b},
                     [](const Tensor& self, const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> gs(2);
                       if (needs[0]) gs[0] = matmul(g, transpose(parent(self, 1)));
                       if (needs[1]) gs[1] = matmul(transpose(parent(self, 0)), g);
                       return gs;
                     });
}

Tensor outer(const Tensor& x) { return matmul(x, transpose(x)); }

Tensor tril_strict(const Tensor& x) {
  if (x.dim() < 2) shape_error("tril_strict", "need at least 2 axes");
  const std::size_t r = x.size(x.dim() - 2), c = x.size(x.dim() - 1);
  Vec m(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < std::min(i, c); ++j) m[i * c + j] = 1.0;
  return mul(x, Tensor::constant({r, c}, std::move(m)));
}

Tensor matrix_exp(const Tensor& x) {
  if (x.dim() < 2 || x.size(x.dim() - 1) != x.size(x.dim() - 2))
    shape_error("matrix_exp", "expects square matrices, got " + shape_str(x.shape()));
  const std::size_t n = x.size(x.dim() - 1);
  const std::size_t batch = x.numel() / std::max<std::size_t>(n * n, 1);
  const auto xv = x.values();
  double norm = 0.0;
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < n; ++i) col += std::abs(xv[t * n * n + i * n + j]);
      norm = std::max(norm, col);
    }
  const int j = linalg::exp_scaling_exponent(norm);
  const Tensor y = scale(x, std::ldexp(1.0, -j));
  Vec eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  const Tensor id = Tensor::constant({n, n}, std::move(eye));
  Tensor e = broadcast_to(id, x.shape());
  for (int t = linalg::tol::kExpTaylorTerms; t >= 1; --t)
    e = add(id, scale(matmul(y, e), 1.0 / t));
  for (int s = 0; s < j; ++s) e = matmul(e, e);
  return e;
}

// --- normalisation / nn primitives --------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view("softmax", x.shape(), axis);
  Shape ks = x.shape();
  ks[axis] = 1;
  Vec mx(v.pre * v.post, -INFINITY);
  const auto xv = x.values();
  for (std::size_t p = 0; p < v.pre; ++p)
    for (std::size_t i = 0; i < v.n; ++i)
      for (std::size_t q = 0; q < v.post; ++q)
        mx[p * v.post + q] = std::max(mx[p * v.post + q], xv[(p * v.n + i) * v.post + q]);
  Tensor e = exp(sub(x, Tensor::constant(ks, std::move(mx))));
  return div(e, sum(e, axis, true));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.dim() == 0) shape_error("layer_norm", "scalar input");
  const std::size_t ax = x.dim() - 1;
  const std::size_t c = x.size(ax), rows = x.numel() / std::max<std::size_t>(c, 1);
  const auto xv = x.values();
  Vec y(xv.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    rstd[r] = 1.0 / std::sqrt(var / static_cast<double>(c) + eps);
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] = (in[j] - mu) * rstd[r];
  }
  Tensor normed = fused(
      "layer_norm",
      [ax, eps](std::span<const Tensor> in) {
        const Tensor xc = sub(in[0], mean(in[0], ax, true));
        const Tensor var = mean(square(xc), ax, true);
        return div(xc, sqrt(add_scalar(var, eps)));
      },
      {x}, std::move(y),
      [c, rows, rstd = std::move(rstd)](std::span<const Tensor>, std::span<const double> y, std::span<const double> g,
                                        const std::vector<bool>&) {
        Vec d(y.size());
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double gs = 0.0, gy = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            gs += g[r * c + j];
            gy += g[r * c + j] * y[r * c + j];
          }
          gs *= inv_c;
          gy *= inv_c;
          for (std::size_t j = 0; j < c; ++j) d[r * c + j] = rstd[r] * (g[r * c + j] - gs - y[r * c + j] * gy);
        }
        return std::vector<Vec>{std::move(d)};
      });
  return add(mul(normed, gain), bias);
}

Tensor instance_norm(const Tensor& x, const Tensor& mask, double eps) {
  if (x.dim() < 3) shape_error("instance_norm", "expects [B, ..., C]");
  const std::size_t b = x.size(0), c = x.size(x.dim() - 1);
  const std::size_t m = x.numel() / (b * c);
  if (mask.numel() != b * m) shape_error("instance_norm", "mask shape " + shape_str(mask.shape()));
  const Tensor mk = reshape(mask.detach(), {b, m, 1});
  const auto mv = mk.values();
  Vec cnt(b, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < m; ++j) cnt[i] += mv[i * m + j];
  for (double& v : cnt) v = std::max(v, 1.0);
  const Tensor inv_cnt = Tensor::constant({b, 1, 1}, [&] {
    Vec r(b);
    for (std::size_t i = 0; i < b; ++i) r[i] = 1.0 / cnt[i];
    return r;
  }());
  const Shape shape = x.shape();

  const auto xv = x.values();
  Vec y(xv.size(), 0.0), rstd(b * c);
  Vec mask_v(mv.begin(), mv.end());
  for (std::size_t i = 0; i < b; ++i) {
    Vec mu(c, 0.0), var(c, 0.0);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t q = 0; q < c; ++q) mu[q] += xv[(i * m + j) * c + q] * mask_v[i * m + j];
    for (double& v : mu) v /= cnt[i];
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t q = 0; q < c; ++q) {
        const double d = (xv[(i * m + j) * c + q] - mu[q]) * mask_v[i * m + j];
        var[q] += d * d;
      }
    for (std::size_t q = 0; q < c; ++q) rstd[i * c + q] = 1.0 / std::sqrt(var[q] / cnt[i] + eps);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t q = 0; q < c; ++q)
        y[(i * m + j) * c + q] = (xv[(i * m + j) * c + q] - mu[q]) * mask_v[i * m + j] * rstd[i * c + q];
  }
  return fused(
      "instance_norm",
      [b, m, c, mk, inv_cnt, eps, shape](std::span<const Tensor> in) {
        const Tensor v = reshape(in[0], {b, m, c});
        const Tensor mu = mul(sum(mul(v, mk), 1, true), inv_cnt);
        const Tensor xc = mul(sub(v, mu), mk);
        const Tensor var = mul(sum(square(xc), 1, true), inv_cnt);
        return reshape(div(xc, sqrt(add_scalar(var, eps))), shape);
      },
      {x}, std::move(y),
      [b, m, c, cnt = std::move(cnt), rstd = std::move(rstd), mask_v = std::move(mask_v)](
          std::span<const Tensor>, std::span<const double> y, std::span<const double> g, const std::vector<bool>&) {
        Vec d(y.size(), 0.0);
        for (std::size_t i = 0; i < b; ++i) {
          Vec gs(c, 0.0), gy(c, 0.0);
          for (std::size_t j = 0; j < m; ++j)
            for (std::size_t q = 0; q < c; ++q) {
              const std::size_t o = (i * m + j) * c + q;
              gs[q] += g[o] * mask_v[i * m + j];
              gy[q] += g[o] * y[o];
            }
          for (std::size_t j = 0; j < m; ++j) {
            if (mask_v[i * m + j] == 0.0) continue;
            for (std::size_t q = 0; q < c; ++q) {
              const std::size_t o = (i * m + j) * c + q;
              d[o] = mask_v[i * m + j] * rstd[i * c + q] * (g[o] - gs[q] / cnt[i] - y[o] * gy[q] / cnt[i]);
            }
          }
        }
        return std::vector<Vec>{std::move(d)};
      });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) shape_error("dropout", "rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Vec m(x.numel());
  const double s = 1.0 / (1.0 - rate);
  for (double& v : m) v = keep(rng) ? s : 0.0;
  return mul(x, Tensor::constant(x.shape(), std::move(m)));
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel,
              std::size_t stride, Padding padding) {
  if (x.dim() != 3) shape_error("conv1d", "input must be [B, L, C], got " + shape_str(x.shape()));
  if (kernel == 0 || stride == 0) shape_error("conv1d", "kernel and stride must be positive");
  const std::size_t cin = x.size(2);
  if (weight.dim() != 2 || weight.size(0) != kernel * cin)
    shape_error("conv1d", "weight " + shape_str(weight.shape()) + " for kernel " +
                              std::to_string(kernel) + " and " + std::to_string(cin) + " channels");
  Tensor xp = x;
  if (padding == Padding::Same) {
    const std::size_t before = (kernel - 1) / 2;
    xp = pad(x, 1, before, kernel - 1 - before);
  }
  const std::size_t len = xp.size(1);
  if (kernel > len) shape_error("conv1d", "kernel longer than padded input");
  const std::size_t out_len = (len - kernel) / stride + 1;
  std::vector<std::size_t> idx;
  idx.reserve(out_len * kernel);
  for (std::size_t o = 0; o < out_len; ++o)
    for (std::size_t t = 0; t < kernel; ++t) idx.push_back(o * stride + t);
  const Tensor cols = reshape(index_select(xp, 1, std::move(idx)), {x.size(0), out_len, kernel * cin});
  return add(matmul(cols, weight), bias);
}

Tensor upsample(const Tensor& x, std::size_t factor) {
  if (x.dim() < 2) shape_error("upsample", "need at least 2 axes");
  std::vector<std::size_t> idx(x.size(1) * factor);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i / factor;
  return index_select(x, 1, std::move(idx));
}

Tensor straight_through(const Tensor& hard, const Tensor& soft) {
  if (hard.shape() != soft.shape()) shape_error("straight_through", "shape mismatch");
  return make_result("straight_through", hard.shape(), Vec(hard.values().begin(), hard.values().end()),
                     {soft}, [](const Tensor&, const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{g};
                     });
}

}  // namespace specgen::ad
