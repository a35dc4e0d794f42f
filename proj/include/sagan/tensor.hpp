// ============================================================================
// tensor.hpp - dense double-precision tensors with tape-based reverse-mode
// differentiation, the parameter registry and the two optimizers.
//
// Storage is row-major throughout. Graphs are built dynamically: every op
// records a backward closure on its result while autograd is enabled and at
// least one input participates in differentiation. Whether a gradient is
// deposited into an input is decided at recording time, so freezing a
// parameter set during the forward pass keeps its gradients untouched even
// if backward() runs after the freeze is lifted.
// ============================================================================

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sagan/common.hpp"

namespace sagan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty means "no gradient accumulated yet"
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  bool needs_grad = false;  // participates in some recorded graph
  bool backward_done = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool& autograd_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording for the lifetime of the guard (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::autograd_enabled()) {
    detail::autograd_enabled() = false;
  }
  ~NoGradGuard() { detail::autograd_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : node_(std::make_shared<detail::TensorNode>()) {
    validate_shape(shape);
    node_->shape = std::move(shape);
    node_->data.assign(shape_numel(node_->shape), fill);
  }

  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<double> values) {
    validate_shape(shape);
    require<TensorError>(shape_numel(shape) == values.size(),
                         "tensor: data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  double item() const {
    require<TensorError>(numel() == 1, "item(): tensor has " +
                                           std::to_string(numel()) +
                                           " elements, expected 1");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Leaf copy sharing no graph history.
  Tensor detach() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
  }

  bool all_finite() const {
    for (double v : node_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Reverse pass from a scalar loss; accumulates into .grad of every
  // reachable tensor recorded as gradient-needing. A graph can be walked
  // once only: rebuild the forward pass (or reset) before calling again.
  void backward() {
    require<TensorError>(numel() == 1,
                         "backward(): loss must be scalar, got shape " +
                             shape_str(node_->shape));
    require<TensorError>(!node_->backward_done,
                         "backward(): already called on this graph; rebuild "
                         "the forward pass or reset gradients first");
    node_->backward_done = true;

    // Iterative postorder DFS: topo has every node after all of its parents.
    std::vector<detail::TensorNode*> topo;
    std::unordered_set<detail::TensorNode*> visited;
    struct Frame {
      detail::TensorNode* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (node_->needs_grad || node_->requires_grad) {
      stack.push_back({node_.get(), 0});
      visited.insert(node_.get());
    }
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        detail::TensorNode* p = f.node->parents[f.next_parent++].get();
        if ((p->needs_grad || p->requires_grad) && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        topo.push_back(f.node);
        stack.pop_back();
      }
    }

    node_->grad_buffer()[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      if ((*it)->backward_fn && !(*it)->grad.empty()) (*it)->backward_fn(**it);
    }
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  static void validate_shape(const Shape& shape) {
    require<TensorError>(!shape.empty(), "tensor: shape must be non-empty");
    for (std::size_t d : shape)
      require<TensorError>(d > 0, "tensor: zero extent in shape " + shape_str(shape));
  }

  std::shared_ptr<detail::TensorNode> node_;
};

inline Tensor randn_tensor(Shape shape, Rng& rng, double stddev = 1.0,
                           double mean = 0.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

namespace detail {

inline bool grad_flows(const Tensor& t) {
  return t.node()->requires_grad || t.node()->needs_grad;
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return;
  if (sa.size() != sb.size())
    throw TensorError(std::string(op) + ": rank mismatch, " + shape_str(sa) +
                      " vs " + shape_str(sb));
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (sa[i] != sb[i])
      throw TensorError(std::string(op) + ": shape mismatch on axis " +
                        std::to_string(i) + ", " + shape_str(sa) + " vs " +
                        shape_str(sb));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  const bool na = detail::grad_flows(a), nb = detail::grad_flows(b);
  if (detail::autograd_enabled() && (na || nb)) {
    auto an = a.node();
    auto bn = b.node();
    r.node()->needs_grad = true;
    r.node()->parents = {an, bn};
    r.node()->backward_fn = [an, bn, na, nb](detail::TensorNode& self) {
      if (na) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (nb) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  const bool na = detail::grad_flows(a), nb = detail::grad_flows(b);
  if (detail::autograd_enabled() && (na || nb)) {
    auto an = a.node();
    auto bn = b.node();
    r.node()->needs_grad = true;
    r.node()->parents = {an, bn};
    r.node()->backward_fn = [an, bn, na, nb](detail::TensorNode& self) {
      if (na) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (nb) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  }
  return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  const bool na = detail::grad_flows(a), nb = detail::grad_flows(b);
  if (detail::autograd_enabled() && (na || nb)) {
    auto an = a.node();
    auto bn = b.node();
    const std::vector<double> av = a.data(), bv = b.data();
    r.node()->needs_grad = true;
    r.node()->parents = {an, bn};
    r.node()->backward_fn = [an, bn, na, nb, av, bv](detail::TensorNode& self) {
      if (na) {
        auto& g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
      }
      if (nb) {
        auto& g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
      }
    };
  }
  return r;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (detail::autograd_enabled() && detail::grad_flows(a)) {
    auto an = a.node();
    r.node()->needs_grad = true;
    r.node()->parents = {an};
    r.node()->backward_fn = [an, c](detail::TensorNode& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
    };
  }
  return r;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor r = Tensor::scalar(s);
  if (detail::autograd_enabled() && detail::grad_flows(a)) {
    auto an = a.node();
    r.node()->needs_grad = true;
    r.node()->parents = {an};
    r.node()->backward_fn = [an](detail::TensorNode& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    };
  }
  return r;
}

inline Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor r = Tensor::scalar(s / n);
  if (detail::autograd_enabled() && detail::grad_flows(a)) {
    auto an = a.node();
    r.node()->needs_grad = true;
    r.node()->parents = {an};
    r.node()->backward_fn = [an, n](detail::TensorNode& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] / n;
    };
  }
  return r;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  require<TensorError>(shape_numel(shape) == a.numel(),
                       "reshape: cannot view " + shape_str(a.shape()) + " as " +
                           shape_str(shape));
  Tensor r = Tensor::from_data(std::move(shape), a.data());
  if (detail::autograd_enabled() && detail::grad_flows(a)) {
    auto an = a.node();
    r.node()->needs_grad = true;
    r.node()->parents = {an};
    r.node()->backward_fn = [an](detail::TensorNode& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return r;
}

inline Tensor leaky_relu(const Tensor& a, double alpha = 0.2) {
  require<TensorError>(alpha > 0.0 && alpha < 1.0,
                       "leaky_relu: alpha must lie in (0,1), got " +
                           format_double(alpha));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = x >= 0.0 ? x : alpha * x;
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (detail::autograd_enabled() && detail::grad_flows(a)) {
    auto an = a.node();
    const std::vector<double> xs = a.data();
    r.node()->needs_grad = true;
    r.node()->parents = {an};
    r.node()->backward_fn = [an, xs, alpha](detail::TensorNode& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * (xs[i] >= 0.0 ? 1.0 : alpha);
    };
  }
  return r;
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (detail::autograd_enabled() && detail::grad_flows(a)) {
    auto an = a.node();
    const std::vector<double> ys = r.data();
    r.node()->needs_grad = true;
    r.node()->parents = {an};
    r.node()->backward_fn = [an, ys](detail::TensorNode& self) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * (1.0 - ys[i] * ys[i]);
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// conv1d: cross-correlation over [batch, channels, length].
// same padding keeps ceil(length/stride) output positions, valid uses none.
// ---------------------------------------------------------------------------

enum class Padding { Same, Valid };

inline Tensor conv1d(const Tensor& input, const Tensor& kernel,
                     const Tensor& bias, Padding padding,
                     std::size_t stride = 1) {
  require<TensorError>(input.shape().size() == 3,
                       "conv1d: input must be rank 3 [batch, channels, length], "
                       "got " + shape_str(input.shape()));
  require<TensorError>(kernel.shape().size() == 3,
                       "conv1d: kernel must be rank 3 [out, in, k], got " +
                           shape_str(kernel.shape()));
  require<TensorError>(bias.shape().size() == 1,
                       "conv1d: bias must be rank 1, got " +
                           shape_str(bias.shape()));
  require<TensorError>(stride >= 1, "conv1d: stride must be >= 1");
  const std::size_t B = input.dim(0), Ci = input.dim(1), L = input.dim(2);
  const std::size_t Co = kernel.dim(0), K = kernel.dim(2);
  require<TensorError>(
      kernel.dim(1) == Ci,
      "conv1d: kernel input-channel axis is " + std::to_string(kernel.dim(1)) +
          " but input channel axis is " + std::to_string(Ci));
  require<TensorError>(bias.dim(0) == Co,
                       "conv1d: bias axis is " + std::to_string(bias.dim(0)) +
                           " but kernel output-channel axis is " +
                           std::to_string(Co));

  std::size_t out_len = 0, pad_left = 0;
  if (padding == Padding::Same) {
    out_len = (L + stride - 1) / stride;
    const std::size_t span = (out_len - 1) * stride + K;
    const std::size_t total_pad = span > L ? span - L : 0;
    pad_left = total_pad / 2;
  } else {
    require<TensorError>(K <= L, "conv1d: kernel length " + std::to_string(K) +
                                     " exceeds input length " +
                                     std::to_string(L) + " with valid padding");
    out_len = (L - K) / stride + 1;
  }

  std::vector<double> out(B * Co * out_len);
  const auto& x = input.data();
  const auto& w = kernel.data();
  const auto& bv = bias.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      for (std::size_t o = 0; o < out_len; ++o) {
        double acc = bv[co];
        const std::ptrdiff_t base =
            static_cast<std::ptrdiff_t>(o * stride) -
            static_cast<std::ptrdiff_t>(pad_left);
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          const double* xrow = &x[(b * Ci + ci) * L];
          const double* wrow = &w[(co * Ci + ci) * K];
          for (std::size_t j = 0; j < K; ++j) {
            const std::ptrdiff_t i = base + static_cast<std::ptrdiff_t>(j);
            if (i >= 0 && i < static_cast<std::ptrdiff_t>(L))
              acc += wrow[j] * xrow[i];
          }
        }
        out[(b * Co + co) * out_len + o] = acc;
      }
    }
  }
  Tensor r = Tensor::from_data({B, Co, out_len}, std::move(out));

  const bool nx = detail::grad_flows(input);
  const bool nw = detail::grad_flows(kernel);
  const bool nb = detail::grad_flows(bias);
  if (detail::autograd_enabled() && (nx || nw || nb)) {
    auto xn = input.node();
    auto wn = kernel.node();
    auto bn = bias.node();
    const std::vector<double> xv = input.data();
    const std::vector<double> wv = kernel.data();
    r.node()->needs_grad = true;
    r.node()->parents = {xn, wn, bn};
    r.node()->backward_fn = [=](detail::TensorNode& self) {
      std::vector<double>* gx = nx ? &xn->grad_buffer() : nullptr;
      std::vector<double>* gw = nw ? &wn->grad_buffer() : nullptr;
      std::vector<double>* gb = nb ? &bn->grad_buffer() : nullptr;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < Co; ++co) {
          for (std::size_t o = 0; o < out_len; ++o) {
            const double g = self.grad[(b * Co + co) * out_len + o];
            if (g == 0.0) continue;
            if (gb) (*gb)[co] += g;
            if (!gx && !gw) continue;
            const std::ptrdiff_t base =
                static_cast<std::ptrdiff_t>(o * stride) -
                static_cast<std::ptrdiff_t>(pad_left);
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              for (std::size_t j = 0; j < K; ++j) {
                const std::ptrdiff_t i = base + static_cast<std::ptrdiff_t>(j);
                if (i < 0 || i >= static_cast<std::ptrdiff_t>(L)) continue;
                if (gx)
                  (*gx)[(b * Ci + ci) * L + i] += g * wv[(co * Ci + ci) * K + j];
                if (gw)
                  (*gw)[(co * Ci + ci) * K + j] += g * xv[(b * Ci + ci) * L + i];
              }
            }
          }
        }
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// batchnorm1d over [batch, channels, length], normalizing each channel across
// batch x length. Train mode uses biased batch statistics (epsilon 1e-5) and
// refreshes running stats as 0.9*running + 0.1*batch; eval mode reads the
// running stats.
// ---------------------------------------------------------------------------

enum class BatchNormMode { Train, Eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

inline Tensor batchnorm1d_ex(const Tensor& input, const Tensor& gamma,
                             const Tensor& beta, Tensor& running_mean,
                             Tensor& running_var, bool use_batch_stats,
                             bool update_running) {
  require<TensorError>(input.shape().size() == 3,
                       "batchnorm1d: input must be rank 3, got " +
                           shape_str(input.shape()));
  const std::size_t B = input.dim(0), C = input.dim(1), L = input.dim(2);
  for (const Tensor* t : {&gamma, &beta})
    require<TensorError>(t->shape() == Shape{C},
                         "batchnorm1d: affine parameter shape " +
                             shape_str(t->shape()) + " does not match channel "
                             "axis " + std::to_string(C));
  for (const Tensor* t : {&running_mean, &running_var})
    require<TensorError>(t->shape() == Shape{C},
                         "batchnorm1d: running stat shape " +
                             shape_str(t->shape()) + " does not match channel "
                             "axis " + std::to_string(C));
  if (use_batch_stats)
    require<TensorError>(B >= 2,
                         "batchnorm1d: train mode needs batch >= 2, got " +
                             std::to_string(B) + " (variance undefined)");

  const double n = static_cast<double>(B * L);
  std::vector<double> mu(C), invstd(C), var(C);
  const auto& x = input.data();
  if (use_batch_stats) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) s += x[(b * C + c) * L + l];
      mu[c] = s / n;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
          const double d = x[(b * C + c) * L + l] - mu[c];
          v += d * d;
        }
      var[c] = v / n;
      invstd[c] = 1.0 / std::sqrt(var[c] + kBatchNormEpsilon);
    }
    if (update_running) {
      for (std::size_t c = 0; c < C; ++c) {
        running_mean.data()[c] =
            kBatchNormMomentum * running_mean.data()[c] +
            (1.0 - kBatchNormMomentum) * mu[c];
        running_var.data()[c] = kBatchNormMomentum * running_var.data()[c] +
                                (1.0 - kBatchNormMomentum) * var[c];
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean.data()[c];
      invstd[c] = 1.0 / std::sqrt(running_var.data()[c] + kBatchNormEpsilon);
    }
  }

  std::vector<double> xhat(B * C * L), out(B * C * L);
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t i = (b * C + c) * L + l;
        xhat[i] = (x[i] - mu[c]) * invstd[c];
        out[i] = gv[c] * xhat[i] + bv[c];
      }
  Tensor r = Tensor::from_data(input.shape(), std::move(out));

  const bool ni = detail::grad_flows(input);
  const bool ng = detail::grad_flows(gamma);
  const bool nb = detail::grad_flows(beta);
  if (detail::autograd_enabled() && (ni || ng || nb)) {
    auto in_n = input.node();
    auto g_n = gamma.node();
    auto b_n = beta.node();
    r.node()->needs_grad = true;
    r.node()->parents = {in_n, g_n, b_n};
    const std::vector<double> gamma_v = gamma.data();
    r.node()->backward_fn = [=, xh = std::move(xhat),
                             inv = std::move(invstd)](detail::TensorNode& self) {
      for (std::size_t c = 0; c < C; ++c) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t i = (b * C + c) * L + l;
            s1 += self.grad[i];
            s2 += self.grad[i] * xh[i];
          }
        if (nb) b_n->grad_buffer()[c] += s1;
        if (ng) g_n->grad_buffer()[c] += s2;
        if (ni) {
          auto& gx = in_n->grad_buffer();
          if (use_batch_stats) {
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t l = 0; l < L; ++l) {
                const std::size_t i = (b * C + c) * L + l;
                gx[i] += gamma_v[c] * inv[c] *
                         (self.grad[i] - s1 / n - xh[i] * s2 / n);
              }
          } else {
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t l = 0; l < L; ++l) {
                const std::size_t i = (b * C + c) * L + l;
                gx[i] += gamma_v[c] * inv[c] * self.grad[i];
              }
          }
        }
      }
    };
  }
  return r;
}

inline Tensor batchnorm1d(const Tensor& input, const Tensor& gamma,
                          const Tensor& beta, Tensor& running_mean,
                          Tensor& running_var, BatchNormMode mode) {
  const bool train = mode == BatchNormMode::Train;
  return batchnorm1d_ex(input, gamma, beta, running_mean, running_var, train,
                        train);
}

// ---------------------------------------------------------------------------
// Pooling and dense layers
// ---------------------------------------------------------------------------

inline Tensor global_avg_pool1d(const Tensor& input) {
  require<TensorError>(input.shape().size() == 3,
                       "global_avg_pool1d: input must be rank 3, got " +
                           shape_str(input.shape()));
  const std::size_t B = input.dim(0), C = input.dim(1), L = input.dim(2);
  std::vector<double> out(B * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t l = 0; l < L; ++l) s += input.data()[(b * C + c) * L + l];
      out[b * C + c] = s / static_cast<double>(L);
    }
  Tensor r = Tensor::from_data({B, C}, std::move(out));
  if (detail::autograd_enabled() && detail::grad_flows(input)) {
    auto in_n = input.node();
    r.node()->needs_grad = true;
    r.node()->parents = {in_n};
    r.node()->backward_fn = [in_n, B, C, L](detail::TensorNode& self) {
      auto& g = in_n->grad_buffer();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const double gv = self.grad[b * C + c] / static_cast<double>(L);
          for (std::size_t l = 0; l < L; ++l) g[(b * C + c) * L + l] += gv;
        }
    };
  }
  return r;
}

// x [batch, in] * weight [out, in]^T + bias [out]
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require<TensorError>(x.shape().size() == 2,
                       "linear: input must be rank 2, got " +
                           shape_str(x.shape()));
  require<TensorError>(weight.shape().size() == 2,
                       "linear: weight must be rank 2, got " +
                           shape_str(weight.shape()));
  const std::size_t B = x.dim(0), I = x.dim(1), O = weight.dim(0);
  require<TensorError>(weight.dim(1) == I,
                       "linear: weight input axis is " +
                           std::to_string(weight.dim(1)) +
                           " but input feature axis is " + std::to_string(I));
  require<TensorError>(bias.shape() == Shape{O},
                       "linear: bias shape " + shape_str(bias.shape()) +
                           " does not match output axis " + std::to_string(O));
  std::vector<double> out(B * O);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      double acc = bias.data()[o];
      for (std::size_t i = 0; i < I; ++i)
        acc += x.data()[b * I + i] * weight.data()[o * I + i];
      out[b * O + o] = acc;
    }
  Tensor r = Tensor::from_data({B, O}, std::move(out));
  const bool nx = detail::grad_flows(x);
  const bool nw = detail::grad_flows(weight);
  const bool nb = detail::grad_flows(bias);
  if (detail::autograd_enabled() && (nx || nw || nb)) {
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    const std::vector<double> xv = x.data(), wv = weight.data();
    r.node()->needs_grad = true;
    r.node()->parents = {xn, wn, bn};
    r.node()->backward_fn = [=](detail::TensorNode& self) {
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
          const double g = self.grad[b * O + o];
          if (g == 0.0) continue;
          if (nb) bn->grad_buffer()[o] += g;
          if (nx) {
            auto& gx = xn->grad_buffer();
            for (std::size_t i = 0; i < I; ++i) gx[b * I + i] += g * wv[o * I + i];
          }
          if (nw) {
            auto& gw = wn->grad_buffer();
            for (std::size_t i = 0; i < I; ++i) gw[o * I + i] += g * xv[b * I + i];
          }
        }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Row-wise softmax (max-subtraction stabilized).
inline Tensor softmax(const Tensor& logits) {
  require<TensorError>(logits.shape().size() == 2,
                       "softmax: logits must be rank 2, got " +
                           shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<double> out(B * K);
  for (std::size_t b = 0; b < B; ++b) {
    double m = logits.data()[b * K];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, logits.data()[b * K + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      out[b * K + k] = std::exp(logits.data()[b * K + k] - m);
      z += out[b * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) out[b * K + k] /= z;
  }
  Tensor r = Tensor::from_data(logits.shape(), std::move(out));
  if (detail::autograd_enabled() && detail::grad_flows(logits)) {
    auto ln = logits.node();
    const std::vector<double> ys = r.data();
    r.node()->needs_grad = true;
    r.node()->parents = {ln};
    r.node()->backward_fn = [ln, ys, B, K](detail::TensorNode& self) {
      auto& g = ln->grad_buffer();
      for (std::size_t b = 0; b < B; ++b) {
        double dot = 0.0;
        for (std::size_t k = 0; k < K; ++k)
          dot += self.grad[b * K + k] * ys[b * K + k];
        for (std::size_t k = 0; k < K; ++k)
          g[b * K + k] += ys[b * K + k] * (self.grad[b * K + k] - dot);
      }
    };
  }
  return r;
}

// Mean over the batch of -sum(onehot * log softmax(logits)). Labels are
// treated as constants; rows must be distributions over [0,1] summing to 1.
inline Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& onehot) {
  detail::check_same_shape(logits, onehot, "softmax_cross_entropy");
  require<TensorError>(logits.shape().size() == 2,
                       "softmax_cross_entropy: inputs must be rank 2, got " +
                           shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    double rowsum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double y = onehot.data()[b * K + k];
      require<TensorError>(y >= -1e-12 && y <= 1.0 + 1e-12,
                           "softmax_cross_entropy: row " + std::to_string(b) +
                               " has entry " + format_double(y) +
                               " outside [0,1]");
      rowsum += y;
    }
    require<TensorError>(std::abs(rowsum - 1.0) <= 1e-6,
                         "softmax_cross_entropy: row " + std::to_string(b) +
                             " sums to " + format_double(rowsum) +
                             ", expected 1");
  }

  std::vector<double> probs(B * K);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double m = logits.data()[b * K];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, logits.data()[b * K + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      probs[b * K + k] = std::exp(logits.data()[b * K + k] - m);
      z += probs[b * K + k];
    }
    const double lse = m + std::log(z);
    for (std::size_t k = 0; k < K; ++k) {
      probs[b * K + k] /= z;
      loss += onehot.data()[b * K + k] * (lse - logits.data()[b * K + k]);
    }
  }
  loss /= static_cast<double>(B);
  Tensor r = Tensor::scalar(loss);
  if (detail::autograd_enabled() && detail::grad_flows(logits)) {
    auto ln = logits.node();
    const std::vector<double> yv = onehot.data();
    r.node()->needs_grad = true;
    r.node()->parents = {ln};
    r.node()->backward_fn = [ln, probs = std::move(probs), yv, B,
                             K](detail::TensorNode& self) {
      auto& g = ln->grad_buffer();
      const double up = self.grad[0] / static_cast<double>(B);
      for (std::size_t i = 0; i < B * K; ++i) g[i] += up * (probs[i] - yv[i]);
    };
  }
  return r;
}

inline Tensor mse(const Tensor& pred, const Tensor& target) {
  detail::check_same_shape(pred, target, "mse");
  const double n = static_cast<double>(pred.numel());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    loss += d * d;
  }
  Tensor r = Tensor::scalar(loss / n);
  const bool np = detail::grad_flows(pred);
  const bool nt = detail::grad_flows(target);
  if (detail::autograd_enabled() && (np || nt)) {
    auto pn = pred.node();
    auto tn = target.node();
    const std::vector<double> pv = pred.data(), tv = target.data();
    r.node()->needs_grad = true;
    r.node()->parents = {pn, tn};
    r.node()->backward_fn = [=](detail::TensorNode& self) {
      const double up = self.grad[0];
      if (np) {
        auto& g = pn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += up * 2.0 * (pv[i] - tv[i]) / n;
      }
      if (nt) {
        auto& g = tn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] -= up * 2.0 * (pv[i] - tv[i]) / n;
      }
    };
  }
  return r;
}

// ---------------------------------------------------------------------------
// ParamSet: named registry of parameters and non-trainable buffers.
// Names are unique and shapes immutable after registration; iteration order
// is registration order, which makes initialization and digests reproducible.
// ---------------------------------------------------------------------------

class ParamSet {
 public:
  Tensor& register_parameter(const std::string& name, Tensor t) {
    return register_entry(name, std::move(t), /*buffer=*/false);
  }

  // Buffers (running statistics) are persisted but never stepped.
  Tensor& register_buffer(const std::string& name, Tensor t) {
    return register_entry(name, std::move(t), /*buffer=*/true);
  }

  bool contains(const std::string& name) const {
    return entries_.count(name) > 0;
  }

  Tensor& at(const std::string& name) {
    auto it = entries_.find(name);
    require<TensorError>(it != entries_.end(),
                         "paramset: no entry named '" + name + "'");
    return it->second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    require<TensorError>(it != entries_.end(),
                         "paramset: no entry named '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  bool is_buffer(const std::string& name) const {
    return buffers_.count(name) > 0;
  }

  void zero_grad() {
    for (const auto& name : order_)
      if (!is_buffer(name)) entries_.at(name).zero_grad();
  }

  std::uint64_t step_count() const { return step_; }
  void increment_step() { ++step_; }

  std::size_t parameter_elements() const {
    std::size_t n = 0;
    for (const auto& name : order_)
      if (!is_buffer(name)) n += entries_.at(name).numel();
    return n;
  }

  // Hash of names plus the raw bytes of every entry (buffers included);
  // detects any mutation of the stored values.
  std::uint64_t byte_digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& name : order_) {
      h = fnv1a64(name, h);
      const auto& d = entries_.at(name).data();
      h = fnv1a64(d.data(), d.size() * sizeof(double), h);
    }
    return h;
  }

  ParamSet clone() const {
    ParamSet out;
    for (const auto& name : order_) {
      Tensor copy = entries_.at(name).detach();
      if (is_buffer(name))
        out.register_buffer(name, std::move(copy));
      else
        out.register_parameter(name, std::move(copy));
    }
    out.step_ = step_;
    return out;
  }

  // Overwrites values in place from a same-structured set.
  void copy_from(const ParamSet& other) {
    for (const auto& name : order_) {
      require<TensorError>(other.contains(name),
                           "paramset: copy_from is missing entry '" + name + "'");
      const Tensor& src = other.at(name);
      Tensor& dst = entries_.at(name);
      require<TensorError>(src.shape() == dst.shape(),
                           "paramset: shape of '" + name + "' changed from " +
                               shape_str(dst.shape()) + " to " +
                               shape_str(src.shape()));
      dst.data() = src.data();
    }
    step_ = other.step_;
  }

 private:
  Tensor& register_entry(const std::string& name, Tensor t, bool buffer) {
    require<TensorError>(!contains(name),
                         "paramset: duplicate entry name '" + name + "'");
    t.set_requires_grad(!buffer);
    auto [it, ok] = entries_.emplace(name, std::move(t));
    (void)ok;
    order_.push_back(name);
    if (buffer) buffers_.insert(name);
    return it->second;
  }

  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> entries_;
  std::unordered_set<std::string> buffers_;
  std::uint64_t step_ = 0;
};

// RAII: marks every parameter of the given sets as constant while in scope.
// Ops recorded during that window never deposit gradients into them, even if
// backward() runs after the guard is gone.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::initializer_list<ParamSet*> sets) {
    for (ParamSet* ps : sets)
      for (const auto& name : ps->names())
        if (!ps->is_buffer(name)) {
          Tensor& t = ps->at(name);
          frozen_.emplace_back(t.node(), t.requires_grad());
          t.set_requires_grad(false);
        }
  }
  ~FreezeGuard() {
    for (auto& [node, prev] : frozen_) node->requires_grad = prev;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<std::shared_ptr<detail::TensorNode>, bool>> frozen_;
};

// ---------------------------------------------------------------------------
// Optimizers: SGD with momentum and Adam-style adaptive moments.
// step() consumes and clears the gradients of every parameter.
// ---------------------------------------------------------------------------

enum class OptimizerKind { SgdMomentum, AdaptiveMoments };

inline const char* optimizer_kind_name(OptimizerKind k) {
  return k == OptimizerKind::SgdMomentum ? "sgd-momentum" : "adaptive-moments";
}

inline OptimizerKind optimizer_kind_from_name(const std::string& s) {
  if (s == "sgd-momentum") return OptimizerKind::SgdMomentum;
  if (s == "adaptive-moments") return OptimizerKind::AdaptiveMoments;
  throw ConfigError("unknown optimizer kind '" + s +
                    "' (expected sgd-momentum or adaptive-moments)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double learning_rate = 1e-2;
  double momentum = 0.9;  // sgd-momentum only
  double beta1 = 0.9;     // adaptive-moments only
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerConfig sgd_momentum(double lr = 1e-2, double mu = 0.9) {
    OptimizerConfig c;
    c.kind = OptimizerKind::SgdMomentum;
    c.learning_rate = lr;
    c.momentum = mu;
    return c;
  }

  static OptimizerConfig adaptive_moments(double lr = 1e-3, double b1 = 0.9,
                                          double b2 = 0.999,
                                          double eps = 1e-8) {
    OptimizerConfig c;
    c.kind = OptimizerKind::AdaptiveMoments;
    c.learning_rate = lr;
    c.beta1 = b1;
    c.beta2 = b2;
    c.epsilon = eps;
    return c;
  }

  void validate() const {
    require<TensorError>(learning_rate >= 0.0,
                         "optimizer: learning rate must be non-negative");
    require<TensorError>(momentum >= 0.0 && momentum < 1.0,
                         "optimizer: momentum must lie in [0,1)");
    require<TensorError>(beta1 >= 0.0 && beta1 < 1.0,
                         "optimizer: beta1 must lie in [0,1)");
    require<TensorError>(beta2 >= 0.0 && beta2 < 1.0,
                         "optimizer: beta2 must lie in [0,1)");
    require<TensorError>(epsilon > 0.0, "optimizer: epsilon must be positive");
  }
};

class OptimizerState {
 public:
  explicit OptimizerState(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const OptimizerConfig& config() const { return cfg_; }

  void step(ParamSet& params) {
    ++t_;
    for (const auto& name : params.names()) {
      if (params.is_buffer(name)) continue;
      Tensor& p = params.at(name);
      require<TensorError>(p.has_grad(),
                           "optimizer: parameter '" + name +
                               "' has no gradient; run backward() first");
      const auto& g = p.grad();
      auto& v = p.data();
      if (cfg_.kind == OptimizerKind::SgdMomentum) {
        auto& vel = buffer(name + "/velocity", p.numel());
        for (std::size_t i = 0; i < v.size(); ++i) {
          vel[i] = cfg_.momentum * vel[i] + g[i];
          v[i] -= cfg_.learning_rate * vel[i];
        }
      } else {
        auto& m = buffer(name + "/m", p.numel());
        auto& s = buffer(name + "/v", p.numel());
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < v.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          s[i] = cfg_.beta2 * s[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double shat = s[i] / bc2;
          v[i] -= cfg_.learning_rate * mhat / (std::sqrt(shat) + cfg_.epsilon);
        }
      }
    }
    params.zero_grad();
    params.increment_step();
  }

  std::uint64_t step_count() const { return t_; }

 private:
  std::vector<double>& buffer(const std::string& key, std::size_t size) {
    auto it = buffers_.find(key);
    if (it == buffers_.end())
      it = buffers_.emplace(key, std::vector<double>(size, 0.0)).first;
    require<TensorError>(it->second.size() == size,
                         "optimizer: auxiliary buffer for '" + key +
                             "' has stale shape");
    return it->second;
  }

  OptimizerConfig cfg_;
  std::unordered_map<std::string, std::vector<double>> buffers_;
  std::uint64_t t_ = 0;
};

}  // namespace sagan
