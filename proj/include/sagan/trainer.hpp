// ============================================================================
// trainer.hpp - three-step mini-batch adversarial training. Each iteration
// updates the discriminator, then the classifier, then the generator, with
// the other two components frozen; epochs are scored by an unsupervised
// transport distance between mapped source and raw target, and the classifier
// from the best-scoring epoch is the returned artifact.
// ============================================================================

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sagan/checkpoint.hpp"
#include "sagan/common.hpp"
#include "sagan/domain.hpp"
#include "sagan/networks.hpp"
#include "sagan/tensor.hpp"
#include "sagan/transport.hpp"

namespace sagan {

// ---------------------------------------------------------------------------
// Matrix <-> Tensor bridging
// ---------------------------------------------------------------------------

inline Tensor features_tensor(const Matrix& m) {
  require<TrainerError>(!m.empty(), "features_tensor: empty matrix");
  Tensor t(Shape{m.rows, m.cols});
  t.data() = m.values;
  return t;
}

inline Matrix matrix_from_tensor(const Tensor& t) {
  require<TrainerError>(t.shape().size() == 2,
                        "matrix_from_tensor: need a rank-2 tensor, got " +
                            shape_str(t.shape()));
  Matrix m;
  m.rows = t.dim(0);
  m.cols = t.dim(1);
  m.values = t.data();
  return m;
}

// Applies the generator in inference mode, in bounded chunks so activations
// for large domains never live all at once.
inline Matrix generator_map(GeneratorNet& g, const Matrix& features,
                            std::size_t chunk = 256) {
  require<TrainerError>(chunk >= 1, "generator_map: chunk must be positive");
  NoGradGuard ng;
  Matrix out;
  for (std::size_t start = 0; start < features.rows; start += chunk) {
    const std::size_t rows = std::min(chunk, features.rows - start);
    Tensor x(Shape{rows, features.cols});
    std::copy(features.values.begin() + start * features.cols,
              features.values.begin() + (start + rows) * features.cols,
              x.data().begin());
    Tensor mapped = g.forward(x, ForwardMode::Eval);
    for (std::size_t r = 0; r < rows; ++r) out.append_row(
        std::span<const double>(mapped.data().data() + r * features.cols,
                                features.cols));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mini-batches
// ---------------------------------------------------------------------------

struct MiniBatch {
  Tensor x_s;             // [m, k] source features
  std::vector<int> y_s;   // m source labels
  Tensor x_t;             // [m, k] target features
};

// One epoch of paired batches. Both domains are shuffled independently; the
// shorter one is cycled (fresh shuffle on each wrap) so every batch carries
// exactly m rows from each side, and every row of the longer domain appears
// at least once per epoch.
inline std::vector<MiniBatch> make_batches(const Domain& source,
                                           const Domain& target, std::size_t m,
                                           std::uint64_t seed) {
  const std::size_t ns = source.size(), nt = target.size();
  require<TrainerError>(ns > 0 && nt > 0, "batches: empty domain");
  require<TrainerError>(m >= 1, "batches: batch size must be positive");
  require<TrainerError>(
      m <= std::max(ns, nt),
      "batches: batch size " + std::to_string(m) +
          " exceeds both domains (source " + std::to_string(ns) + ", target " +
          std::to_string(nt) + ")");
  require<TrainerError>(source.labeled(), "batches: source must be labeled");
  require<TrainerError>(source.dim() == target.dim(),
                        "batches: source is " + std::to_string(source.dim()) +
                            "-dimensional but target is " +
                            std::to_string(target.dim()));

  const std::size_t n_batches = (std::max(ns, nt) + m - 1) / m;
  const std::size_t slots = n_batches * m;
  auto order_stream = [slots](std::size_t n, Rng rng) {
    std::vector<std::size_t> order;
    order.reserve(slots);
    while (order.size() < slots)
      for (std::size_t i : rng.permutation(n)) {
        if (order.size() == slots) break;
        order.push_back(i);
      }
    return order;
  };
  const auto source_order = order_stream(ns, Rng(derive_seed(seed, "source")));
  const auto target_order = order_stream(nt, Rng(derive_seed(seed, "target")));

  const std::size_t k = source.dim();
  std::vector<MiniBatch> batches;
  batches.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    MiniBatch mb;
    mb.x_s = Tensor(Shape{m, k});
    mb.x_t = Tensor(Shape{m, k});
    mb.y_s.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t si = source_order[b * m + i];
      const std::size_t ti = target_order[b * m + i];
      auto srow = source.features.row(si);
      auto trow = target.features.row(ti);
      std::copy(srow.begin(), srow.end(), mb.x_s.data().begin() + i * k);
      std::copy(trow.begin(), trow.end(), mb.x_t.data().begin() + i * k);
      mb.y_s[i] = source.labels[si];
    }
    batches.push_back(std::move(mb));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// One training iteration: D step, C step, G step
// ---------------------------------------------------------------------------

enum class SubStep { Discriminator, Classifier, Generator };

// Called after each completed sub-step; tests use this to verify that the
// two non-updated components stayed bitwise identical.
using StepObserver = std::function<void(SubStep)>;

struct StepRecord {
  double d_loss = 0.0;
  double c_loss = 0.0;
  double g_loss = 0.0;
  double g_adv = 0.0;  // unweighted adversarial part of the G objective
  double g_cls = 0.0;  // unweighted classification part
};

struct SaganModel {
  SaganConfig config;
  GeneratorNet g;
  DiscriminatorNet d;
  ClassifierNet c;
  OptimizerState g_opt, d_opt, c_opt;

  explicit SaganModel(const SaganConfig& cfg)
      : config(cfg),
        g(GeneratorNet::from_config(cfg)),
        d(DiscriminatorNet::from_config(cfg)),
        c(ClassifierNet::from_config(cfg)),
        g_opt(cfg.g_opt),
        d_opt(cfg.d_opt),
        c_opt(cfg.c_opt) {}
};

inline StepRecord train_step(SaganModel& model, const MiniBatch& batch,
                             Rng& noise_rng, std::size_t batch_index = 0,
                             const StepObserver& observer = {}) {
  const SaganConfig& cfg = model.config;
  const std::size_t m = batch.x_s.dim(0);
  Tensor y = one_hot(batch.y_s, cfg.n_classes);
  Tensor z = sample_noise(model.g, m, noise_rng);
  auto check_finite = [&](double v, const char* step) {
    require<TrainerError>(std::isfinite(v),
                          std::string("train: non-finite ") + step +
                              " loss at batch " + std::to_string(batch_index));
  };
  StepRecord rec;

  // The generated batch used by the D and C steps. G is frozen for both, so
  // it is evaluated once, graph-free, with its buffers untouched.
  Tensor x_fake;
  {
    NoGradGuard ng;
    x_fake = generate(model.g, batch.x_s, z, ForwardMode::Frozen);
  }

  model.d.params().zero_grad();
  {
    Tensor loss = discriminator_loss(model.d, batch.x_t, x_fake,
                                     ForwardMode::Train);
    rec.d_loss = loss.item();
    check_finite(rec.d_loss, "discriminator");
    loss.backward();
    model.d_opt.step(model.d.params());
  }
  if (observer) observer(SubStep::Discriminator);

  model.c.params().zero_grad();
  {
    Tensor loss =
        classifier_loss(model.c, batch.x_s, y, x_fake, ForwardMode::Train);
    rec.c_loss = loss.item();
    check_finite(rec.c_loss, "classifier");
    loss.backward();
    model.c_opt.step(model.c.params());
  }
  if (observer) observer(SubStep::Classifier);

  model.g.params().zero_grad();
  {
    GeneratorLossParts parts =
        generator_loss_parts(model.g, model.d, model.c, batch.x_s, y, z,
                             cfg.lambda_adv, cfg.lambda_cls);
    rec.g_loss = parts.total.item();
    rec.g_adv = parts.adversarial;
    rec.g_cls = parts.classification;
    check_finite(rec.g_loss, "generator");
    parts.total.backward();
    model.g_opt.step(model.g.params());
  }
  if (observer) observer(SubStep::Generator);

  return rec;
}

// ---------------------------------------------------------------------------
// Epoch scoring and the fit loop
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSelectionSubsample = 256;
inline constexpr std::size_t kSelectionRepeats = 8;
inline constexpr double kDivergenceThreshold = 1e6;

// Unsupervised model-selection score: transport distance between the mapped
// source set and the raw target set. No target labels involved. Lower is
// better; the same seed is reused every epoch so scores are comparable.
inline double selection_score(GeneratorNet& g, const Domain& source,
                              const Domain& target, std::uint64_t seed) {
  Matrix mapped = generator_map(g, source.features);
  const std::size_t n_sub =
      std::min({kSelectionSubsample, source.size(), target.size()});
  return w1_estimate(mapped, target.features, n_sub, kSelectionRepeats, seed);
}

struct TrainState {
  std::uint64_t seed = 0;
  std::size_t epochs_run = 0;
  std::size_t batches_run = 0;
  std::vector<StepRecord> history;       // one record per batch
  double initial_score = 0.0;            // untrained generator
  std::vector<double> selection_scores;  // one score per completed epoch
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;  // 0 = initial state, e = after epoch e
  bool degraded = false;       // training aborted on divergence
};

struct FitResult {
  ClassifierNet classifier;
  TrainState state;
};

inline FitResult fit(const Domain& source, const Domain& target,
                     const SaganConfig& config,
                     const StepObserver& observer = {}) {
  SaganConfig cfg = config;
  cfg.validate();
  source.validate();
  require<TrainerError>(source.size() > 0 && target.size() > 0,
                        "fit: empty domain");
  require<TrainerError>(source.labeled(), "fit: source domain must be labeled");
  require<TrainerError>(
      target.labels.empty(),
      "fit: target domain must be unlabeled; strip its labels first");
  require<TrainerError>(
      source.dim() == cfg.feature_dim && target.dim() == cfg.feature_dim,
      "fit: domains are " + std::to_string(source.dim()) + "/" +
          std::to_string(target.dim()) + "-dimensional but config expects " +
          std::to_string(cfg.feature_dim));

  SaganModel model(cfg);
  TrainState state;
  state.seed = cfg.seed;

  const std::uint64_t sel_seed = derive_seed(cfg.seed, "selection");
  state.initial_score = selection_score(model.g, source, target, sel_seed);
  state.best_score = state.initial_score;
  state.best_epoch = 0;
  CheckpointContents best;
  checkpoint_insert(best, "C", model.c.params());

  Rng noise_rng(derive_seed(cfg.seed, "noise"));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto batches = make_batches(
        source, target, cfg.batch_m,
        derive_seed(cfg.seed, "epoch-" + std::to_string(e)));
    bool aborted = false;
    for (const MiniBatch& batch : batches) {
      StepRecord rec;
      try {
        rec = train_step(model, batch, noise_rng, state.batches_run, observer);
      } catch (const TrainerError&) {
        state.degraded = true;
        aborted = true;
        break;
      }
      state.history.push_back(rec);
      ++state.batches_run;
      if (std::max({std::abs(rec.d_loss), std::abs(rec.c_loss),
                    std::abs(rec.g_loss)}) > kDivergenceThreshold) {
        state.degraded = true;
        aborted = true;
        break;
      }
    }
    if (aborted) break;
    state.epochs_run = e + 1;
    const double score = selection_score(model.g, source, target, sel_seed);
    state.selection_scores.push_back(score);
    if (score < state.best_score) {
      state.best_score = score;
      state.best_epoch = e + 1;
      best.clear();
      checkpoint_insert(best, "C", model.c.params());
    }
  }

  checkpoint_extract(best, "C", model.c.params());
  return FitResult{std::move(model.c), std::move(state)};
}

// Label-supervised reference: the same classifier architecture trained with
// plain cross entropy on one labeled domain, no adversarial components.
inline ClassifierNet train_classifier_supervised(const Domain& train,
                                                 const SaganConfig& config) {
  SaganConfig cfg = config;
  cfg.validate();
  train.validate();
  require<TrainerError>(train.size() > 0, "supervised: empty domain");
  require<TrainerError>(train.labeled(), "supervised: domain must be labeled");
  require<TrainerError>(train.dim() == cfg.feature_dim,
                        "supervised: domain is " + std::to_string(train.dim()) +
                            "-dimensional but config expects " +
                            std::to_string(cfg.feature_dim));
  const std::size_t n = train.size();
  const std::size_t m = std::min(cfg.batch_m, n);
  require<TrainerError>(m >= 2, "supervised: need at least 2 examples");

  ClassifierNet c = ClassifierNet::from_config(cfg);
  OptimizerState opt(cfg.c_opt);
  const std::size_t n_batches = (n + m - 1) / m;
  const std::size_t k = train.dim();
  std::size_t batch_index = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    Rng rng(derive_seed(cfg.seed, "supervised-epoch-" + std::to_string(e)));
    std::vector<std::size_t> order;
    order.reserve(n_batches * m);
    while (order.size() < n_batches * m)
      for (std::size_t i : rng.permutation(n)) {
        if (order.size() == n_batches * m) break;
        order.push_back(i);
      }
    for (std::size_t b = 0; b < n_batches; ++b, ++batch_index) {
      Tensor x(Shape{m, k});
      std::vector<int> labels(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t row = order[b * m + i];
        auto r = train.features.row(row);
        std::copy(r.begin(), r.end(), x.data().begin() + i * k);
        labels[i] = train.labels[row];
      }
      c.params().zero_grad();
      Tensor loss = softmax_cross_entropy(c.forward(x, ForwardMode::Train),
                                          one_hot(labels, cfg.n_classes));
      require<TrainerError>(std::isfinite(loss.item()),
                            "supervised: non-finite loss at batch " +
                                std::to_string(batch_index));
      loss.backward();
      opt.step(c.params());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Trace files (plain-text tables, one row per batch / epoch)
// ---------------------------------------------------------------------------

inline void write_loss_trace(const std::string& path, const TrainState& state,
                             const std::string& preamble = "") {
  std::string out = preamble;
  out += "# batch d_loss c_loss g_loss g_adv g_cls\n";
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const StepRecord& r = state.history[i];
    out += std::to_string(i) + " " + format_double(r.d_loss) + " " +
           format_double(r.c_loss) + " " + format_double(r.g_loss) + " " +
           format_double(r.g_adv) + " " + format_double(r.g_cls) + "\n";
  }
  atomic_write_file(path, out);
}

inline void write_selection_trace(const std::string& path,
                                  const TrainState& state,
                                  const std::string& preamble = "") {
  std::string out = preamble;
  out += "# epoch w1_score   (epoch 0 = untrained generator)\n";
  out += "0 " + format_double(state.initial_score) + "\n";
  for (std::size_t e = 0; e < state.selection_scores.size(); ++e)
    out += std::to_string(e + 1) + " " +
           format_double(state.selection_scores[e]) + "\n";
  atomic_write_file(path, out);
}

// ---------------------------------------------------------------------------
// Config manifest and classifier checkpointing
// ---------------------------------------------------------------------------

inline nlohmann::json optimizer_to_json(const OptimizerConfig& c) {
  return {{"kind", optimizer_kind_name(c.kind)},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

inline OptimizerConfig optimizer_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.kind = optimizer_kind_from_name(j.at("kind").get<std::string>());
  c.learning_rate = j.at("learning_rate").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  return c;
}

inline nlohmann::json config_to_json(const SaganConfig& cfg) {
  return {{"feature_dim", cfg.feature_dim},
          {"n_classes", cfg.n_classes},
          {"lambda_adv", cfg.lambda_adv},
          {"lambda_cls", cfg.lambda_cls},
          {"batch_m", cfg.batch_m},
          {"noise_sigma", cfg.noise_sigma},
          {"d_f", cfg.d_f},
          {"n_blocks", cfg.n_blocks},
          {"g_f", cfg.g_f},
          {"c_f", cfg.c_f},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"d_opt", optimizer_to_json(cfg.d_opt)},
          {"c_opt", optimizer_to_json(cfg.c_opt)},
          {"g_opt", optimizer_to_json(cfg.g_opt)}};
}

inline SaganConfig config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "feature_dim", "n_classes", "lambda_adv", "lambda_cls", "batch_m",
      "noise_sigma", "d_f",       "n_blocks",   "g_f",        "c_f",
      "epochs",      "seed",      "d_opt",      "c_opt",      "g_opt"};
  for (const auto& item : j.items())
    require<ConfigError>(
        std::find(known.begin(), known.end(), item.key()) != known.end(),
        "config: unknown key \"" + item.key() + "\"");
  SaganConfig cfg;
  try {
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    cfg.n_classes = j.at("n_classes").get<int>();
    cfg.lambda_adv = j.at("lambda_adv").get<double>();
    cfg.lambda_cls = j.at("lambda_cls").get<double>();
    cfg.batch_m = j.at("batch_m").get<std::size_t>();
    cfg.noise_sigma = j.at("noise_sigma").get<double>();
    cfg.d_f = j.at("d_f").get<std::size_t>();
    cfg.n_blocks = j.at("n_blocks").get<std::size_t>();
    cfg.g_f = j.at("g_f").get<std::size_t>();
    cfg.c_f = j.at("c_f").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.d_opt = optimizer_from_json(j.at("d_opt"));
    cfg.c_opt = optimizer_from_json(j.at("c_opt"));
    cfg.g_opt = optimizer_from_json(j.at("g_opt"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: malformed manifest: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// Binary parameter container at `path`, config manifest at `path`.json.
inline void save_classifier_checkpoint(const std::string& path,
                                       const ClassifierNet& classifier,
                                       const SaganConfig& cfg) {
  CheckpointContents contents;
  checkpoint_insert(contents, "C", classifier.params());
  atomic_write_file(path, serialize_checkpoint(contents));
  atomic_write_file(path + ".json", config_to_json(cfg).dump(2) + "\n");
}

struct ClassifierCheckpoint {
  SaganConfig config;
  ClassifierNet classifier;
};

inline ClassifierCheckpoint load_classifier_checkpoint(const std::string& path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: unreadable manifest " + path + ".json: " +
                  e.what());
  }
  SaganConfig cfg = config_from_json(manifest);
  ClassifierNet c = ClassifierNet::from_config(cfg);
  CheckpointContents contents = load_checkpoint(path);
  checkpoint_extract(contents, "C", c.params());
  return ClassifierCheckpoint{cfg, std::move(c)};
}

}  // namespace sagan
