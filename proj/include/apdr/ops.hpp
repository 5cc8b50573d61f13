#pragma once

// Differentiable layer operations recorded on a Graph.
//
// Every op validates shapes eagerly and throws ConfigError with the offending
// dimensions. Backward callbacks only touch inputs that need a gradient.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apdr/errors.hpp"
#include "apdr/graph.hpp"
#include "apdr/tensor.hpp"

namespace apdr {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

template <class T>
T stable_sigmoid(T x) {
  T y = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  // keep the open-interval contract even where the float rounds to 0 or 1
  constexpr T lo = std::numeric_limits<T>::denorm_min();
  const T hi = std::nextafter(T(1), T(0));
  return std::clamp(y, lo, hi);
}

}  // namespace detail

enum class Activation { relu, tanh, sigmoid };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

enum class NormMode { train, eval };

template <class T>
struct BatchNormState {
  Buffer<T> running_mean;
  Buffer<T> running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels) : running_mean(channels, T(0)), running_var(channels, T(1)) {}

  template <class U>
  BatchNormState<U> cast() const {
    BatchNormState<U> s;
    s.running_mean.assign(running_mean.begin(), running_mean.end());
    s.running_var.assign(running_var.begin(), running_var.end());
    return s;
  }
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

// ---------------------------------------------------------------------------
// conv2d: NCHW input, OIKhKw kernel, optional per-output-channel bias.

template <class T>
Var conv2d(Graph<T>& g, Var input, Var kernel, int stride, int pad, std::optional<Var> bias = std::nullopt) {
  using namespace detail;
  const auto& x = g.value(input);
  const auto& w = g.value(kernel);
  require(x.ndim() == 4, "conv2d input must be NCHW, got " + shape_str(x.shape));
  require(w.ndim() == 4, "conv2d kernel must be OIKhKw, got " + shape_str(w.shape));
  require(x.dim(1) == w.dim(1), "conv2d channel mismatch: input " + shape_str(x.shape) + " kernel " + shape_str(w.shape));
  require(stride >= 1 && pad >= 0, "conv2d needs stride >= 1 and pad >= 0");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(h + 2 * pad >= kh && wd + 2 * pad >= kw,
          "conv2d kernel " + shape_str(w.shape) + " larger than padded input " + shape_str(x.shape));
  if (bias) {
    const auto& b = g.value(*bias);
    require(b.numel() == o, "conv2d bias length " + std::to_string(b.numel()) + " != output channels " + std::to_string(o));
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t rows = c * kh * kw, cols = ho * wo;

  auto col = std::make_shared<Buffer<T>>(n * rows * cols);
  for (std::size_t s = 0; s < n; ++s) {
    const T* xs = x.ptr() + s * c * h * wd;
    T* cs = col->data() + s * rows * cols;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          T* row = cs + ((ci * kh + ki) * kw + kj) * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = long(oy * stride + ki) - pad;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = long(ox * stride + kj) - pad;
              row[oy * wo + ox] = (iy >= 0 && iy < long(h) && ix >= 0 && ix < long(wd))
                                      ? xs[(ci * h + iy) * wd + ix]
                                      : T(0);
            }
          }
        }
  }

  Tensor<T> out({n, o, ho, wo});
  ConstMatMap<T> wm(w.ptr(), o, rows);
  for (std::size_t s = 0; s < n; ++s) {
    MatMap<T> ym(out.ptr() + s * o * cols, o, cols);
    ym.noalias() = wm * ConstMatMap<T>(col->data() + s * rows * cols, rows, cols);
    if (bias) {
      const auto& b = g.value(*bias);
      for (std::size_t oc = 0; oc < o; ++oc) ym.row(oc).array() += b[oc];
    }
  }

  std::vector<Var> ins{input, kernel};
  if (bias) ins.push_back(*bias);
  return g.record("conv2d", ins, std::move(out),
                  [=](Graph<T>& gr, std::size_t self) {
                    const auto& dy = gr.upstream(self);
                    const auto& wv = gr.value_of(kernel.id);
                    T* dx = gr.sink(input.id);
                    T* dw = gr.sink(kernel.id);
                    T* db = bias ? gr.sink(bias->id) : nullptr;
                    ConstMatMap<T> wmat(wv.ptr(), o, rows);
                    RowMat<T> dcol(rows, cols);
                    for (std::size_t s = 0; s < n; ++s) {
                      ConstMatMap<T> dym(dy.data() + s * o * cols, o, cols);
                      ConstMatMap<T> cm(col->data() + s * rows * cols, rows, cols);
                      if (dw) MatMap<T>(dw, o, rows).noalias() += dym * cm.transpose();
                      if (db)
                        for (std::size_t oc = 0; oc < o; ++oc) db[oc] += dym.row(oc).sum();
                      if (!dx) continue;
                      dcol.noalias() = wmat.transpose() * dym;
                      T* dxs = dx + s * c * h * wd;
                      for (std::size_t ci = 0; ci < c; ++ci)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                          for (std::size_t kj = 0; kj < kw; ++kj) {
                            const T* row = dcol.data() + ((ci * kh + ki) * kw + kj) * cols;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                              const long iy = long(oy * stride + ki) - pad;
                              if (iy < 0 || iy >= long(h)) continue;
                              for (std::size_t ox = 0; ox < wo; ++ox) {
                                const long ix = long(ox * stride + kj) - pad;
                                if (ix < 0 || ix >= long(wd)) continue;
                                dxs[(ci * h + iy) * wd + ix] += row[oy * wo + ox];
                              }
                            }
                          }
                    }
                  });
}

// ---------------------------------------------------------------------------
// linear: (N x D) * (D x E) + bias(E)

template <class T>
Var linear(Graph<T>& g, Var input, Var weight, std::optional<Var> bias = std::nullopt) {
  using namespace detail;
  const auto& x = g.value(input);
  const auto& w = g.value(weight);
  require(x.ndim() == 2 && w.ndim() == 2, "linear expects 2-d input and weight, got " + shape_str(x.shape) + " and " + shape_str(w.shape));
  require(x.dim(1) == w.dim(0), "linear inner dimension mismatch: " + shape_str(x.shape) + " * " + shape_str(w.shape));
  const std::size_t n = x.dim(0), d = x.dim(1), e = w.dim(1);
  if (bias) require(g.value(*bias).numel() == e, "linear bias length mismatch: expected " + std::to_string(e));

  Tensor<T> out({n, e});
  MatMap<T> ym(out.ptr(), n, e);
  // Row by row so a sample's output never depends on where it sits in the
  // batch (a blocked GEMM treats tail rows differently).
  ConstMatMap<T> wm(w.ptr(), d, e);
  for (std::size_t i = 0; i < n; ++i) ym.row(long(i)).noalias() = ConstMatMap<T>(x.ptr() + i * d, 1, d) * wm;
  if (bias) {
    const auto& b = g.value(*bias);
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.ptr(), e);
  }
  std::vector<Var> ins{input, weight};
  if (bias) ins.push_back(*bias);
  return g.record("linear", ins, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    ConstMatMap<T> dy(gr.upstream(self).data(), n, e);
    if (T* dx = gr.sink(input.id))
      MatMap<T>(dx, n, d).noalias() += dy * ConstMatMap<T>(gr.value_of(weight.id).ptr(), d, e).transpose();
    if (T* dw = gr.sink(weight.id))
      MatMap<T>(dw, d, e).noalias() += ConstMatMap<T>(gr.value_of(input.id).ptr(), n, d).transpose() * dy;
    if (bias)
      if (T* db = gr.sink(bias->id))
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db, e) += dy.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Batch normalization over N x D (per feature) or NCHW (per channel).

template <class T>
Var batch_norm(Graph<T>& g, Var input, Var gamma, Var beta, BatchNormState<T>& state, NormMode mode,
               BatchNormOptions opt = {}) {
  using detail::require;
  const auto& x = g.value(input);
  require(x.ndim() == 2 || x.ndim() == 4, "batch_norm expects N x D or NCHW input, got " + shape_str(x.shape));
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t sp = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
  require(g.value(gamma).numel() == c && g.value(beta).numel() == c,
          "batch_norm affine parameters must have " + std::to_string(c) + " entries");
  if (state.running_mean.size() != c) state = BatchNormState<T>(c);
  const std::size_t m = n * sp;
  if (mode == NormMode::train && (n < 2 && sp == 1)) {
    throw InputError("batch_norm in train mode needs at least 2 samples, got " + std::to_string(n));
  }
  if (mode == NormMode::train && m < 2) {
    throw InputError("batch_norm in train mode needs at least 2 values per channel");
  }

  const auto& gm = g.value(gamma);
  const auto& bt = g.value(beta);
  auto xhat = std::make_shared<Buffer<T>>(x.numel());
  auto inv_std = std::make_shared<Buffer<T>>(c);
  Tensor<T> out(x.shape);
  const T eps = T(opt.eps);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (mode == NormMode::train) {
      double s = 0, s2 = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < sp; ++k) s += x[(i * c + ch) * sp + k];
      mean = T(s / double(m));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < sp; ++k) {
          const double dlt = double(x[(i * c + ch) * sp + k]) - double(mean);
          s2 += dlt * dlt;
        }
      var = T(s2 / double(m));
      const T mom = T(opt.momentum);
      state.running_mean[ch] = mom * state.running_mean[ch] + (T(1) - mom) * mean;
      state.running_var[ch] = mom * state.running_var[ch] + (T(1) - mom) * T(s2 / double(m - 1));
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < sp; ++k) {
        const std::size_t idx = (i * c + ch) * sp + k;
        const T xh = (x[idx] - mean) * is;
        (*xhat)[idx] = xh;
        out[idx] = gm[ch] * xh + bt[ch];
      }
  }

  return g.record(mode == NormMode::train ? "batch_norm" : "batch_norm_eval", {input, gamma, beta}, std::move(out),
                  [=](Graph<T>& gr, std::size_t self) {
                    const auto& dy = gr.upstream(self);
                    const auto& gmv = gr.value_of(gamma.id);
                    T* dx = gr.sink(input.id);
                    T* dg = gr.sink(gamma.id);
                    T* db = gr.sink(beta.id);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      T sum_dy = 0, sum_dy_xh = 0;
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t k = 0; k < sp; ++k) {
                          const std::size_t idx = (i * c + ch) * sp + k;
                          sum_dy += dy[idx];
                          sum_dy_xh += dy[idx] * (*xhat)[idx];
                        }
                      if (dg) dg[ch] += sum_dy_xh;
                      if (db) db[ch] += sum_dy;
                      if (!dx) continue;
                      const T is = (*inv_std)[ch];
                      const T gs = gmv[ch] * is;
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t k = 0; k < sp; ++k) {
                          const std::size_t idx = (i * c + ch) * sp + k;
                          if (mode == NormMode::train) {
                            dx[idx] += gs * (dy[idx] - sum_dy / T(m) - (*xhat)[idx] * sum_dy_xh / T(m));
                          } else {
                            dx[idx] += gs * dy[idx];
                          }
                        }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Elementwise activations.

template <class T>
Var activation(Graph<T>& g, Var input, Activation kind) {
  const auto& x = g.value(input);
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    switch (kind) {
      case Activation::relu: out[i] = x[i] > T(0) || std::isnan(x[i]) ? x[i] : T(0); break;  // NaN passes through
      case Activation::tanh: out[i] = std::tanh(x[i]); break;
      case Activation::sigmoid: out[i] = detail::stable_sigmoid(x[i]); break;
    }
  }
  auto saved = std::make_shared<Buffer<T>>(out.data);
  return g.record(activation_name(kind), {input}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    T* dx = gr.sink(input.id);
    if (!dx) return;
    const auto& dy = gr.upstream(self);
    const auto& y = *saved;
    for (std::size_t i = 0; i < y.size(); ++i) {
      switch (kind) {
        case Activation::relu: dx[i] += y[i] > T(0) ? dy[i] : T(0); break;
        case Activation::tanh: dx[i] += dy[i] * (T(1) - y[i] * y[i]); break;
        case Activation::sigmoid: dx[i] += dy[i] * y[i] * (T(1) - y[i]); break;
      }
    }
  });
}

template <class T> Var relu(Graph<T>& g, Var x) { return activation(g, x, Activation::relu); }
template <class T> Var tanh(Graph<T>& g, Var x) { return activation(g, x, Activation::tanh); }
template <class T> Var sigmoid(Graph<T>& g, Var x) { return activation(g, x, Activation::sigmoid); }

// ---------------------------------------------------------------------------
// Pooling.

template <class T>
Var global_average_pool(Graph<T>& g, Var input) {
  const auto& x = g.value(input);
  detail::require(x.ndim() == 4, "global_average_pool expects NCHW, got " + shape_str(x.shape));
  const std::size_t n = x.dim(0), c = x.dim(1), sp = x.dim(2) * x.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    T s = 0;
    for (std::size_t k = 0; k < sp; ++k) s += x[i * sp + k];
    out[i] = s / T(sp);
  }
  return g.record("global_average_pool", {input}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    T* dx = gr.sink(input.id);
    if (!dx) return;
    const auto& dy = gr.upstream(self);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t k = 0; k < sp; ++k) dx[i * sp + k] += dy[i] / T(sp);
  });
}

// Mask-weighted sum over all locations divided by H*W (not by the mask mass).
template <class T>
Var weighted_average_pool(Graph<T>& g, Var featmap, Var mask) {
  const auto& f = g.value(featmap);
  const auto& m = g.value(mask);
  detail::require(f.ndim() == 4 && m.ndim() == 4 && m.dim(1) == 1,
                  "weighted_average_pool expects NCHW features and N1HW mask, got " + shape_str(f.shape) + " and " + shape_str(m.shape));
  detail::require(f.dim(0) == m.dim(0) && f.dim(2) == m.dim(2) && f.dim(3) == m.dim(3),
                  "weighted_average_pool spatial mismatch: features " + shape_str(f.shape) + " mask " + shape_str(m.shape));
  const std::size_t n = f.dim(0), c = f.dim(1), sp = f.dim(2) * f.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s = 0;
      const T* fr = f.ptr() + (i * c + ch) * sp;
      const T* mr = m.ptr() + i * sp;
      for (std::size_t k = 0; k < sp; ++k) s += fr[k] * mr[k];
      out[i * c + ch] = s / T(sp);
    }
  return g.record("weighted_average_pool", {featmap, mask}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.upstream(self);
    const auto& fv = gr.value_of(featmap.id);
    const auto& mv = gr.value_of(mask.id);
    T* df = gr.sink(featmap.id);
    T* dm = gr.sink(mask.id);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T gsc = dy[i * c + ch] / T(sp);
        for (std::size_t k = 0; k < sp; ++k) {
          if (df) df[(i * c + ch) * sp + k] += gsc * mv[i * sp + k];
          if (dm) dm[i * sp + k] += gsc * fv[(i * c + ch) * sp + k];
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Mean softmax cross-entropy over the batch.

template <class T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, const std::vector<std::size_t>& targets) {
  const auto& z = g.value(logits);
  detail::require(z.ndim() == 2, "softmax_cross_entropy expects N x C logits, got " + shape_str(z.shape));
  const std::size_t n = z.dim(0), c = z.dim(1);
  if (targets.size() != n) {
    throw InputError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<Buffer<T>>(n * c);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) {
      throw InputError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    const T* row = z.ptr() + i * c;
    const T mx = *std::max_element(row, row + c);
    T se = 0;
    for (std::size_t k = 0; k < c; ++k) se += std::exp(row[k] - mx);
    const T lse = mx + std::log(se);
    for (std::size_t k = 0; k < c; ++k) (*probs)[i * c + k] = std::exp(row[k] - lse);
    loss += lse - row[targets[i]];
  }
  Tensor<T> out({1}, Buffer<T>{loss / T(n)});
  auto tg = targets;
  return g.record("softmax_cross_entropy", {logits}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    T* dz = gr.sink(logits.id);
    if (!dz) return;
    const T up = gr.upstream(self)[0] / T(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k)
        dz[i * c + k] += up * ((*probs)[i * c + k] - (k == tg[i] ? T(1) : T(0)));
  });
}

// ---------------------------------------------------------------------------
// Feature-axis concatenation of N x D_i blocks.

template <class T>
Var concat(Graph<T>& g, const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat needs at least one part");
  const std::size_t n = g.value(parts[0]).dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (auto p : parts) {
    const auto& v = g.value(p);
    detail::require(v.ndim() == 2, "concat parts must be 2-d, got " + shape_str(v.shape));
    detail::require(v.dim(0) == n, "concat leading-dim mismatch: " + std::to_string(v.dim(0)) + " vs " + std::to_string(n));
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor<T> out({n, total});
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = g.value(parts[p]);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.ptr() + i * widths[p], widths[p], out.ptr() + i * total + off);
    off += widths[p];
  }
  return g.record("concat", parts, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.upstream(self);
    std::size_t o = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (T* dx = gr.sink(parts[p].id)) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < widths[p]; ++k) dx[i * widths[p] + k] += dy[i * total + o + k];
      }
      o += widths[p];
    }
  });
}

// ---------------------------------------------------------------------------
// Small elementwise / reduction helpers used to compose losses and gates.

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& x = g.value(a);
  const auto& y = g.value(b);
  detail::require(x.shape == y.shape, "add shape mismatch: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
  return g.record("add", {a, b}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.upstream(self);
    if (T* da = gr.sink(a.id)) for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    if (T* db = gr.sink(b.id)) for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  const auto& x = g.value(a);
  const auto& y = g.value(b);
  detail::require(x.shape == y.shape, "sub shape mismatch: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] - y[i];
  return g.record("sub", {a, b}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.upstream(self);
    if (T* da = gr.sink(a.id)) for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    if (T* db = gr.sink(b.id)) for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& x = g.value(a);
  const auto& y = g.value(b);
  detail::require(x.shape == y.shape, "mul shape mismatch: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i];
  return g.record("mul", {a, b}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.upstream(self);
    const auto& xv = gr.value_of(a.id);
    const auto& yv = gr.value_of(b.id);
    if (T* da = gr.sink(a.id)) for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * yv[i];
    if (T* db = gr.sink(b.id)) for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * xv[i];
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T factor) {
  const auto& x = g.value(a);
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;
  return g.record("scale", {a}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.upstream(self);
    if (T* da = gr.sink(a.id)) for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
  });
}

template <class T>
Var add_scalar(Graph<T>& g, Var a, T c) {
  const auto& x = g.value(a);
  Tensor<T> out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + c;
  return g.record("add_scalar", {a}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    const auto& dy = gr.upstream(self);
    if (T* da = gr.sink(a.id)) for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
  });
}

template <class T>
Var sum(Graph<T>& g, Var a) {
  const auto& x = g.value(a);
  T s = 0;
  for (T v : x.data) s += v;
  return g.record("sum", {a}, Tensor<T>({1}, Buffer<T>{s}), [=](Graph<T>& gr, std::size_t self) {
    const T up = gr.upstream(self)[0];
    if (T* da = gr.sink(a.id))
      for (std::size_t i = 0; i < gr.value_of(a.id).numel(); ++i) da[i] += up;
  });
}

template <class T>
Var mean(Graph<T>& g, Var a) {
  const std::size_t n = g.value(a).numel();
  return scale(g, sum(g, a), T(1) / T(n));
}

// Squared L2 distance between rows: out[m] = |x[a[m]] - x[b[m]]|^2.
template <class T>
Var row_sq_dist(Graph<T>& g, Var input, const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const auto& x = g.value(input);
  detail::require(x.ndim() == 2, "row_sq_dist expects N x D, got " + shape_str(x.shape));
  detail::require(a.size() == b.size() && !a.empty(), "row_sq_dist needs equal, non-empty index lists");
  const std::size_t n = x.dim(0), d = x.dim(1), m = a.size();
  for (std::size_t k = 0; k < m; ++k) {
    if (a[k] >= n || b[k] >= n) throw InputError("row_sq_dist index out of range");
  }
  Tensor<T> out({m});
  for (std::size_t k = 0; k < m; ++k) {
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T diff = x[a[k] * d + j] - x[b[k] * d + j];
      s += diff * diff;
    }
    out[k] = s;
  }
  return g.record("row_sq_dist", {input}, std::move(out), [=](Graph<T>& gr, std::size_t self) {
    T* dx = gr.sink(input.id);
    if (!dx) return;
    const auto& dy = gr.upstream(self);
    const auto& xv = gr.value_of(input.id);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        const T gd = T(2) * (xv[a[k] * d + j] - xv[b[k] * d + j]) * dy[k];
        dx[a[k] * d + j] += gd;
        dx[b[k] * d + j] -= gd;
      }
  });
}

}  // namespace apdr
