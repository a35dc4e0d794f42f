// ============================================================================
// networks.hpp - Generator, Discriminator and Classifier over length-k
// feature vectors treated as single-channel sequences, plus the three
// training losses (least-squares adversarial with smoothed labels, paired
// cross entropy, and the weighted generator objective).
// ============================================================================

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sagan/common.hpp"
#include "sagan/tensor.hpp"

namespace sagan {

// Smoothed adversarial targets: real windows score 0.9 (one-sided label
// smoothing), generated windows -1, both inside tanh range.
inline constexpr double kRealTarget = 0.9;
inline constexpr double kFakeTarget = -1.0;

// How a forward pass treats batch normalization:
//   Train  - batch statistics, running buffers refreshed (the component
//            currently being optimized)
//   Frozen - batch statistics, buffers untouched (a component whose
//            parameters must stay bitwise identical this step)
//   Eval   - running statistics, buffers untouched (inference)
enum class ForwardMode { Train, Frozen, Eval };

struct SaganConfig {
  std::size_t feature_dim = 88;
  int n_classes = 6;
  double lambda_adv = 1.0;
  double lambda_cls = 10.0;
  std::size_t batch_m = 64;
  double noise_sigma = 0.1;
  std::size_t d_f = 3;       // discriminator conv layers
  std::size_t n_blocks = 2;  // residual blocks in G and C
  std::size_t g_f = 32;      // generator filters
  std::size_t c_f = 32;      // classifier filters
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  OptimizerConfig d_opt = OptimizerConfig::sgd_momentum(1e-2, 0.9);
  OptimizerConfig c_opt = OptimizerConfig::adaptive_moments(1e-3);
  OptimizerConfig g_opt = OptimizerConfig::adaptive_moments(1e-3);

  void validate() const {
    require<ModelError>(feature_dim >= 1, "config: feature_dim must be >= 1");
    require<ModelError>(n_classes >= 2, "config: need at least 2 classes");
    require<ModelError>(lambda_adv >= 0 && lambda_cls >= 0,
                        "config: loss weights must be non-negative");
    require<ModelError>(lambda_adv + lambda_cls > 0,
                        "config: lambda_adv + lambda_cls must be positive");
    require<ModelError>(batch_m >= 2,
                        "config: batch size must be >= 2 (batch statistics)");
    require<ModelError>(noise_sigma >= 0, "config: noise_sigma must be >= 0");
    require<ModelError>(d_f >= 1 && n_blocks >= 1 && g_f >= 1 && c_f >= 1,
                        "config: layer counts and widths must be positive");
    d_opt.validate();
    c_opt.validate();
    g_opt.validate();
  }
};

// ---------------------------------------------------------------------------
// Layers. Each layer registers its tensors into the owning network's
// ParamSet and keeps handles to the same storage.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor conv_init(std::size_t co, std::size_t ci, std::size_t k,
                        Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(ci * k));
  Tensor t(Shape{co, ci, k});
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

struct Conv1dLayer {
  Tensor weight, bias;
  Padding padding = Padding::Same;
  std::size_t stride = 1;

  Conv1dLayer() = default;
  Conv1dLayer(ParamSet& ps, const std::string& name, std::size_t co,
              std::size_t ci, std::size_t k, Padding pad, std::size_t str,
              Rng& rng)
      : weight(ps.register_parameter(name + "/weight", conv_init(co, ci, k, rng))),
        bias(ps.register_parameter(name + "/bias", Tensor(Shape{co}, 0.0))),
        padding(pad),
        stride(str) {}

  Tensor forward(const Tensor& x) const {
    return conv1d(x, weight, bias, padding, stride);
  }
};

struct BatchNorm1dLayer {
  Tensor gamma, beta, running_mean, running_var;

  BatchNorm1dLayer() = default;
  BatchNorm1dLayer(ParamSet& ps, const std::string& name, std::size_t channels)
      : gamma(ps.register_parameter(name + "/gamma", Tensor(Shape{channels}, 1.0))),
        beta(ps.register_parameter(name + "/beta", Tensor(Shape{channels}, 0.0))),
        running_mean(ps.register_buffer(name + "/running_mean",
                                        Tensor(Shape{channels}, 0.0))),
        running_var(ps.register_buffer(name + "/running_var",
                                       Tensor(Shape{channels}, 1.0))) {}

  Tensor forward(const Tensor& x, ForwardMode mode) {
    const bool batch_stats = mode != ForwardMode::Eval;
    const bool update = mode == ForwardMode::Train;
    return batchnorm1d_ex(x, gamma, beta, running_mean, running_var,
                          batch_stats, update);
  }
};

struct LinearLayer {
  Tensor weight, bias;

  LinearLayer() = default;
  LinearLayer(ParamSet& ps, const std::string& name, std::size_t out,
              std::size_t in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    Tensor w(Shape{out, in});
    for (double& v : w.data()) v = rng.normal(0.0, stddev);
    weight = ps.register_parameter(name + "/weight", std::move(w));
    bias = ps.register_parameter(name + "/bias", Tensor(Shape{out}, 0.0));
  }

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

// conv -> bn -> leaky-relu -> conv -> bn, additive skip. Channel-preserving.
struct ResidualBlock {
  Conv1dLayer conv1, conv2;
  BatchNorm1dLayer bn1, bn2;

  ResidualBlock() = default;
  ResidualBlock(ParamSet& ps, const std::string& name, std::size_t channels,
                Rng& rng)
      : conv1(ps, name + "/conv1", channels, channels, 3, Padding::Same, 1, rng),
        conv2(ps, name + "/conv2", channels, channels, 3, Padding::Same, 1, rng),
        bn1(ps, name + "/bn1", channels),
        bn2(ps, name + "/bn2", channels) {}

  Tensor forward(const Tensor& x, ForwardMode mode) {
    Tensor h = leaky_relu(bn1.forward(conv1.forward(x), mode));
    h = bn2.forward(conv2.forward(h), mode);
    return add(h, x);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Generator: k -> k residual map with a tanh output, so generated windows
// stay on the normalized data scale. The whole stack is a correction added
// to the input, and the projection head starts at zero, so an untrained
// generator is tanh of the identity and a pure translation is reachable
// through the projection bias alone.
// ---------------------------------------------------------------------------

class GeneratorNet {
 public:
  GeneratorNet(std::size_t feature_dim, std::size_t n_blocks, std::size_t g_f,
               double noise_sigma, std::uint64_t seed)
      : feature_dim_(feature_dim), noise_sigma_(noise_sigma) {
    require<ModelError>(feature_dim >= 1, "generator: feature_dim must be >= 1");
    require<ModelError>(n_blocks >= 1 && g_f >= 1,
                        "generator: n_blocks and g_f must be positive");
    Rng rng(derive_seed(seed, "generator-init"));
    lift_ = detail::Conv1dLayer(params_, "lift", g_f, 1, 3, Padding::Same, 1, rng);
    for (std::size_t b = 0; b < n_blocks; ++b)
      blocks_.emplace_back(params_, "block" + std::to_string(b), g_f, rng);
    proj_ = detail::Conv1dLayer(params_, "proj", 1, g_f, 1, Padding::Same, 1, rng);
    for (double& v : proj_.weight.data()) v = 0.0;
  }

  static GeneratorNet from_config(const SaganConfig& cfg) {
    return GeneratorNet(cfg.feature_dim, cfg.n_blocks, cfg.g_f, cfg.noise_sigma,
                        derive_seed(cfg.seed, "G"));
  }

  GeneratorNet(const GeneratorNet&) = delete;
  GeneratorNet& operator=(const GeneratorNet&) = delete;
  GeneratorNet(GeneratorNet&&) = default;

  Tensor forward(const Tensor& x, ForwardMode mode) {
    require<ModelError>(x.shape().size() == 2 && x.dim(1) == feature_dim_,
                        "generator: input must be [m, " +
                            std::to_string(feature_dim_) + "], got " +
                            shape_str(x.shape()));
    Tensor seq = reshape(x, {x.dim(0), 1, feature_dim_});
    Tensor h = lift_.forward(seq);
    for (auto& block : blocks_) h = block.forward(h, mode);
    h = add(seq, proj_.forward(h));
    return tanh(reshape(h, {x.dim(0), feature_dim_}));
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t feature_dim() const { return feature_dim_; }
  double noise_sigma() const { return noise_sigma_; }

 private:
  std::size_t feature_dim_;
  double noise_sigma_;
  ParamSet params_;
  detail::Conv1dLayer lift_, proj_;
  std::vector<detail::ResidualBlock> blocks_;
};

// ---------------------------------------------------------------------------
// Discriminator: d_f strided conv layers (widths doubling from 16, batch
// norm after the first only), a 1-channel head, global average, tanh.
// One score per example in (-1, 1).
// ---------------------------------------------------------------------------

class DiscriminatorNet {
 public:
  DiscriminatorNet(std::size_t feature_dim, std::size_t d_f, std::uint64_t seed)
      : feature_dim_(feature_dim) {
    require<ModelError>(d_f >= 1, "discriminator: d_f must be >= 1");
    Rng rng(derive_seed(seed, "discriminator-init"));
    std::size_t in_ch = 1;
    for (std::size_t i = 0; i < d_f; ++i) {
      const std::size_t out_ch = 16u << std::min<std::size_t>(i, 6);
      convs_.emplace_back(params_, "conv" + std::to_string(i), out_ch, in_ch, 4,
                          Padding::Same, 2, rng);
      in_ch = out_ch;
    }
    bn0_ = detail::BatchNorm1dLayer(params_, "bn0", 16);
    head_ = detail::Conv1dLayer(params_, "head", 1, in_ch, 3, Padding::Same, 1,
                                rng);
  }

  static DiscriminatorNet from_config(const SaganConfig& cfg) {
    return DiscriminatorNet(cfg.feature_dim, cfg.d_f, derive_seed(cfg.seed, "D"));
  }

  DiscriminatorNet(const DiscriminatorNet&) = delete;
  DiscriminatorNet& operator=(const DiscriminatorNet&) = delete;
  DiscriminatorNet(DiscriminatorNet&&) = default;

  // [m, k] -> [m, 1] scores in (-1, 1)
  Tensor forward(const Tensor& x, ForwardMode mode) {
    require<ModelError>(x.shape().size() == 2 && x.dim(1) == feature_dim_,
                        "discriminator: input must be [m, " +
                            std::to_string(feature_dim_) + "], got " +
                            shape_str(x.shape()));
    Tensor h = reshape(x, {x.dim(0), 1, feature_dim_});
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i].forward(h);
      if (i == 0) h = bn0_.forward(h, mode);
      h = leaky_relu(h);
    }
    h = head_.forward(h);
    return tanh(global_avg_pool1d(h));
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t feature_dim() const { return feature_dim_; }

 private:
  std::size_t feature_dim_;
  ParamSet params_;
  std::vector<detail::Conv1dLayer> convs_;
  detail::BatchNorm1dLayer bn0_;
  detail::Conv1dLayer head_;
};

// ---------------------------------------------------------------------------
// Classifier: the generator's residual stack at c_f filters, then global
// average pooling and a dense layer to n_classes logits.
// ---------------------------------------------------------------------------

class ClassifierNet {
 public:
  ClassifierNet(std::size_t feature_dim, std::size_t n_blocks, std::size_t c_f,
                int n_classes, std::uint64_t seed)
      : feature_dim_(feature_dim), n_classes_(n_classes) {
    require<ModelError>(n_classes >= 2, "classifier: need at least 2 classes");
    require<ModelError>(n_blocks >= 1 && c_f >= 1,
                        "classifier: n_blocks and c_f must be positive");
    Rng rng(derive_seed(seed, "classifier-init"));
    lift_ = detail::Conv1dLayer(params_, "lift", c_f, 1, 3, Padding::Same, 1, rng);
    for (std::size_t b = 0; b < n_blocks; ++b)
      blocks_.emplace_back(params_, "block" + std::to_string(b), c_f, rng);
    fc_ = detail::LinearLayer(params_, "fc", static_cast<std::size_t>(n_classes),
                              c_f, rng);
  }

  static ClassifierNet from_config(const SaganConfig& cfg) {
    return ClassifierNet(cfg.feature_dim, cfg.n_blocks, cfg.c_f, cfg.n_classes,
                         derive_seed(cfg.seed, "C"));
  }

  ClassifierNet(const ClassifierNet&) = delete;
  ClassifierNet& operator=(const ClassifierNet&) = delete;
  ClassifierNet(ClassifierNet&&) = default;

  // [m, k] -> [m, n_classes] logits
  Tensor forward(const Tensor& x, ForwardMode mode) {
    require<ModelError>(x.shape().size() == 2 && x.dim(1) == feature_dim_,
                        "classifier: input must be [m, " +
                            std::to_string(feature_dim_) + "], got " +
                            shape_str(x.shape()));
    Tensor h = reshape(x, {x.dim(0), 1, feature_dim_});
    h = lift_.forward(h);
    for (auto& block : blocks_) h = block.forward(h, mode);
    return fc_.forward(global_avg_pool1d(h));
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t feature_dim() const { return feature_dim_; }
  int n_classes() const { return n_classes_; }

 private:
  std::size_t feature_dim_;
  int n_classes_;
  ParamSet params_;
  detail::Conv1dLayer lift_;
  std::vector<detail::ResidualBlock> blocks_;
  detail::LinearLayer fc_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline Tensor one_hot(const std::vector<int>& labels, int n_classes) {
  require<ModelError>(!labels.empty(), "one_hot: empty label vector");
  Tensor out(Shape{labels.size(), static_cast<std::size_t>(n_classes)}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require<ModelError>(labels[i] >= 0 && labels[i] < n_classes,
                        "one_hot: label " + std::to_string(labels[i]) +
                            " at row " + std::to_string(i) +
                            " outside vocabulary 0.." +
                            std::to_string(n_classes - 1));
    out.data()[i * n_classes + labels[i]] = 1.0;
  }
  return out;
}

// Gaussian noise batch at the generator's configured scale.
inline Tensor sample_noise(const GeneratorNet& g, std::size_t m, Rng& rng) {
  Tensor z(Shape{m, g.feature_dim()});
  for (double& v : z.data()) v = rng.normal(0.0, g.noise_sigma());
  return z;
}

// x_fake = G(x_s + z)
inline Tensor generate(GeneratorNet& g, const Tensor& x_s, const Tensor& z,
                       ForwardMode mode = ForwardMode::Train) {
  require<ModelError>(x_s.shape() == z.shape(),
                      "generate: noise shape " + shape_str(z.shape()) +
                          " does not match input shape " +
                          shape_str(x_s.shape()));
  return g.forward(add(x_s, z), mode);
}

// MSE(D(x_t), 0.9) + MSE(D(x_fake), -1). x_fake enters detached: this loss
// trains D only, never reaches back into G.
inline Tensor discriminator_loss(DiscriminatorNet& d, const Tensor& x_t,
                                 const Tensor& x_fake,
                                 ForwardMode mode = ForwardMode::Train) {
  require<ModelError>(x_t.shape() == x_fake.shape(),
                      "discriminator_loss: real batch " +
                          shape_str(x_t.shape()) + " vs fake batch " +
                          shape_str(x_fake.shape()));
  Tensor real_scores = d.forward(x_t, mode);
  Tensor fake_scores = d.forward(x_fake.detach(), mode);
  Tensor real_target = Tensor::full(real_scores.shape(), kRealTarget);
  Tensor fake_target = Tensor::full(fake_scores.shape(), kFakeTarget);
  return add(mse(real_scores, real_target), mse(fake_scores, fake_target));
}

// CE(C(x_s), y) + CE(C(x_fake), y): source windows and their generated
// counterparts share the source labels. x_fake enters detached.
inline Tensor classifier_loss(ClassifierNet& c, const Tensor& x_s,
                              const Tensor& y_onehot, const Tensor& x_fake,
                              ForwardMode mode = ForwardMode::Train) {
  require<ModelError>(x_s.shape() == x_fake.shape(),
                      "classifier_loss: source batch " +
                          shape_str(x_s.shape()) + " vs fake batch " +
                          shape_str(x_fake.shape()));
  require<ModelError>(
      y_onehot.shape().size() == 2 && y_onehot.dim(0) == x_s.dim(0) &&
          y_onehot.dim(1) == static_cast<std::size_t>(c.n_classes()),
      "classifier_loss: labels must be [m, " + std::to_string(c.n_classes()) +
          "], got " + shape_str(y_onehot.shape()));
  Tensor source_ce = softmax_cross_entropy(c.forward(x_s, mode), y_onehot);
  Tensor fake_ce =
      softmax_cross_entropy(c.forward(x_fake.detach(), mode), y_onehot);
  return add(source_ce, fake_ce);
}

struct GeneratorLossParts {
  Tensor total;
  double adversarial = 0.0;  // MSE(D(G(x_s+z)), 0.9), before weighting
  double classification = 0.0;  // CE(C(G(x_s+z)), y), before weighting
};

// lambda_adv * MSE(D(G(x_s+z)), 0.9) + lambda_cls * CE(C(G(x_s+z)), y).
// G pushes D's verdict toward the real label (non-saturating direction).
// D and C are frozen for the whole evaluation, so backward() on the result
// reaches theta_G only; their batch-norm buffers are also left untouched.
inline GeneratorLossParts generator_loss_parts(GeneratorNet& g,
                                               DiscriminatorNet& d,
                                               ClassifierNet& c,
                                               const Tensor& x_s,
                                               const Tensor& y_onehot,
                                               const Tensor& z,
                                               double lambda_adv,
                                               double lambda_cls) {
  require<ModelError>(lambda_adv >= 0 && lambda_cls >= 0,
                      "generator_loss: loss weights must be non-negative");
  FreezeGuard freeze({&d.params(), &c.params()});
  Tensor x_fake = generate(g, x_s, z, ForwardMode::Train);
  Tensor d_scores = d.forward(x_fake, ForwardMode::Frozen);
  Tensor adv = mse(d_scores, Tensor::full(d_scores.shape(), kRealTarget));
  Tensor cls =
      softmax_cross_entropy(c.forward(x_fake, ForwardMode::Frozen), y_onehot);
  GeneratorLossParts parts;
  parts.adversarial = adv.item();
  parts.classification = cls.item();
  parts.total = add(scale(adv, lambda_adv), scale(cls, lambda_cls));
  return parts;
}

inline Tensor generator_loss(GeneratorNet& g, DiscriminatorNet& d,
                             ClassifierNet& c, const Tensor& x_s,
                             const Tensor& y_onehot, const Tensor& z,
                             double lambda_adv, double lambda_cls) {
  return generator_loss_parts(g, d, c, x_s, y_onehot, z, lambda_adv, lambda_cls)
      .total;
}

}  // namespace sagan
