// Evaluation and benchmarking: confusion matrices, weighted F1, classifier
// evaluation, the KNN+PCA baseline, the ordered source->target experiment
// matrix with no-transfer and supervised bounds, recovery ratios, report
// serialization, and comparison-table rendering.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sagan/common.hpp"
#include "sagan/domain.hpp"
#include "sagan/pipeline.hpp"
#include "sagan/trainer.hpp"
#include "sagan/transport.hpp"

namespace sagan {

// ===========================================================================
// Confusion matrices
// ===========================================================================

// Rows index the true class, columns the predicted class.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<long long> counts;  // row-major [true][predicted]

  static ConfusionMatrix zeros(std::size_t k) {
    require<EvalError>(k >= 1, "confusion: need at least 1 class");
    ConfusionMatrix cm;
    cm.n_classes = k;
    cm.counts.assign(k * k, 0);
    return cm;
  }

  long long at(std::size_t true_c, std::size_t pred_c) const {
    require<EvalError>(true_c < n_classes && pred_c < n_classes,
                       "confusion: class index out of range");
    return counts[true_c * n_classes + pred_c];
  }

  void add(std::size_t true_c, std::size_t pred_c, long long n = 1) {
    require<EvalError>(true_c < n_classes && pred_c < n_classes,
                       "confusion: class index out of range");
    require<EvalError>(n >= 0, "confusion: negative count");
    counts[true_c * n_classes + pred_c] += n;
  }

  long long total() const {
    long long t = 0;
    for (long long v : counts) t += v;
    return t;
  }

  long long support(std::size_t true_c) const {
    long long s = 0;
    for (std::size_t p = 0; p < n_classes; ++p) s += at(true_c, p);
    return s;
  }

  long long predicted(std::size_t pred_c) const {
    long long s = 0;
    for (std::size_t t = 0; t < n_classes; ++t) s += at(t, pred_c);
    return s;
  }

  void validate() const {
    require<EvalError>(n_classes >= 1 && counts.size() == n_classes * n_classes,
                       "confusion: counts do not form a square matrix");
    for (long long v : counts)
      require<EvalError>(v >= 0, "confusion: negative count");
  }
};

inline ConfusionMatrix confusion_from_predictions(
    const std::vector<int>& truth, const std::vector<int>& predictions,
    std::size_t n_classes) {
  require<EvalError>(truth.size() == predictions.size(),
                     "confusion: " + std::to_string(truth.size()) +
                         " labels vs " + std::to_string(predictions.size()) +
                         " predictions");
  require<EvalError>(!truth.empty(), "confusion: no predictions");
  ConfusionMatrix cm = ConfusionMatrix::zeros(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require<EvalError>(truth[i] >= 0 && static_cast<std::size_t>(truth[i]) <
                                            n_classes,
                       "confusion: label " + std::to_string(truth[i]) +
                           " outside 0.." + std::to_string(n_classes - 1));
    require<EvalError>(predictions[i] >= 0 &&
                           static_cast<std::size_t>(predictions[i]) < n_classes,
                       "confusion: prediction " + std::to_string(predictions[i]) +
                           " outside 0.." + std::to_string(n_classes - 1));
    cm.add(static_cast<std::size_t>(truth[i]),
           static_cast<std::size_t>(predictions[i]));
  }
  return cm;
}

// Whitespace-separated integer table, one row per true class. '#' comments.
inline ConfusionMatrix parse_confusion(const std::string& text) {
  std::vector<std::vector<long long>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<long long> row;
    long long v;
    while (ls >> v) row.push_back(v);
    require<EvalError>(ls.eof(), "confusion: non-numeric token in '" + line + "'");
    if (!row.empty()) rows.push_back(std::move(row));
  }
  require<EvalError>(!rows.empty(), "confusion: no rows");
  ConfusionMatrix cm = ConfusionMatrix::zeros(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    require<EvalError>(rows[t].size() == rows.size(),
                       "confusion: row " + std::to_string(t) + " has " +
                           std::to_string(rows[t].size()) + " entries, want " +
                           std::to_string(rows.size()));
    for (std::size_t p = 0; p < rows.size(); ++p)
      cm.add(t, p, rows[t][p]);
  }
  return cm;
}

inline std::string format_confusion(const ConfusionMatrix& cm) {
  cm.validate();
  std::ostringstream out;
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    for (std::size_t p = 0; p < cm.n_classes; ++p) {
      if (p) out << ' ';
      out << cm.at(t, p);
    }
    out << '\n';
  }
  return out.str();
}

// ===========================================================================
// Weighted F1
// ===========================================================================

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;
};

inline std::vector<ClassMetrics> class_metrics(const ConfusionMatrix& cm) {
  cm.validate();
  require<EvalError>(cm.total() > 0, "metrics: all-zero confusion matrix");
  std::vector<ClassMetrics> out(cm.n_classes);
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    const long long tp = cm.at(c, c);
    const long long sup = cm.support(c);
    const long long pred = cm.predicted(c);
    out[c].support = sup;
    out[c].precision = pred > 0 ? static_cast<double>(tp) / pred : 0.0;
    out[c].recall = sup > 0 ? static_cast<double>(tp) / sup : 0.0;
    const double pr = out[c].precision + out[c].recall;
    out[c].f1 = pr > 0 ? 2.0 * out[c].precision * out[c].recall / pr : 0.0;
  }
  return out;
}

// Support-weighted mean of per-class F1. Classes with zero support carry
// zero weight and drop out; a class that is never predicted scores 0.
inline double weighted_f1(const ConfusionMatrix& cm) {
  const std::vector<ClassMetrics> metrics = class_metrics(cm);
  const double total = static_cast<double>(cm.total());
  double wf1 = 0.0;
  for (const ClassMetrics& m : metrics)
    if (m.support > 0) wf1 += (m.support / total) * m.f1;
  return wf1;
}

// ===========================================================================
// Evaluation reports
// ===========================================================================

enum class EvalMode { NoTransfer, KnnPca, Sagan, Supervised };

inline std::string eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::NoTransfer: return "no-transfer";
    case EvalMode::KnnPca: return "knn-pca";
    case EvalMode::Sagan: return "sagan";
    case EvalMode::Supervised: return "supervised";
  }
  throw EvalError("unknown evaluation mode");
}

inline EvalMode eval_mode_from_name(const std::string& name) {
  if (name == "no-transfer") return EvalMode::NoTransfer;
  if (name == "knn-pca") return EvalMode::KnnPca;
  if (name == "sagan") return EvalMode::Sagan;
  if (name == "supervised") return EvalMode::Supervised;
  throw EvalError("unknown evaluation mode '" + name + "'");
}

struct EvalReport {
  std::string source_id;
  std::string target_id;
  EvalMode mode = EvalMode::NoTransfer;
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double weighted_f1 = 0.0;
  double wasserstein = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
};

// Argmax class per row, ties to the lower class id. Eval mode, no gradients.
inline std::vector<int> classify(ClassifierNet& classifier,
                                 const Matrix& features,
                                 std::size_t chunk = 256) {
  require<EvalError>(chunk >= 1, "classify: chunk must be positive");
  require<EvalError>(!features.empty(), "classify: empty feature matrix");
  require<EvalError>(features.cols == classifier.feature_dim(),
                     "classify: features have " + std::to_string(features.cols) +
                         " columns but the classifier expects " +
                         std::to_string(classifier.feature_dim()));
  NoGradGuard ng;
  const int K = classifier.n_classes();
  std::vector<int> out;
  out.reserve(features.rows);
  for (std::size_t start = 0; start < features.rows; start += chunk) {
    const std::size_t rows = std::min(chunk, features.rows - start);
    Tensor x(Shape{rows, features.cols});
    std::copy(features.values.begin() + start * features.cols,
              features.values.begin() + (start + rows) * features.cols,
              x.data().begin());
    Tensor logits = classifier.forward(x, ForwardMode::Eval);
    for (std::size_t i = 0; i < rows; ++i) {
      int best = 0;
      double best_v = logits.data()[i * K];
      for (int c = 1; c < K; ++c) {
        const double v = logits.data()[i * K + c];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.push_back(best);
    }
  }
  return out;
}

inline EvalReport evaluate(ClassifierNet& classifier, const Domain& test) {
  test.validate();
  require<EvalError>(test.size() > 0, "evaluate: empty test domain");
  require<EvalError>(test.labeled(), "evaluate: test domain must be labeled");
  require<EvalError>(test.dim() == classifier.feature_dim(),
                     "evaluate: test domain is " + std::to_string(test.dim()) +
                         "-dimensional but the classifier expects " +
                         std::to_string(classifier.feature_dim()));
  const std::vector<int> predictions = classify(classifier, test.features);
  EvalReport report;
  report.target_id = test.subject_id;
  report.confusion = confusion_from_predictions(
      test.labels, predictions,
      static_cast<std::size_t>(classifier.n_classes()));
  report.per_class = class_metrics(report.confusion);
  report.weighted_f1 = sagan::weighted_f1(report.confusion);
  return report;
}

// ===========================================================================
// KNN+PCA baseline
// ===========================================================================

struct KnnPcaConfig {
  int k_neighbors = 5;
  double variance_fraction = 0.95;  // kept components explain at least this

  void validate() const {
    require<EvalError>(k_neighbors >= 1, "knn-pca: k_neighbors must be >= 1");
    require<EvalError>(variance_fraction > 0.0 && variance_fraction <= 1.0,
                       "knn-pca: variance_fraction must be in (0, 1]");
  }
};

namespace detail {

// Smallest prefix of components whose explained variance reaches `fraction`
// of the total. Keeps at least one component.
inline FeatureSpace truncate_space(FeatureSpace space, double fraction) {
  double total = 0.0;
  for (double v : space.explained_variance) total += v;
  std::size_t keep = space.k();
  if (total > 0.0) {
    double cum = 0.0;
    for (std::size_t i = 0; i < space.k(); ++i) {
      cum += space.explained_variance[i];
      if (cum / total >= fraction) {
        keep = i + 1;
        break;
      }
    }
  }
  if (keep == space.k()) return space;
  Matrix comps(keep, space.components.cols);
  std::copy(space.components.values.begin(),
            space.components.values.begin() + keep * space.components.cols,
            comps.values.begin());
  space.components = std::move(comps);
  space.explained_variance.resize(keep);
  return space;
}

}  // namespace detail

// Refits a PCA on the union of source and unlabeled target-train features,
// projects source and target-test into it, and labels each test point by
// majority vote among its k nearest source points (Euclidean). Vote ties
// break toward the class with the smaller summed neighbor distance, then
// toward the lower class id.
inline EvalReport knn_pca_baseline(const Domain& source,
                                   const Domain& target_train,
                                   const Domain& target_test,
                                   const KnnPcaConfig& cfg = {}) {
  cfg.validate();
  source.validate();
  target_train.validate();
  target_test.validate();
  require<EvalError>(source.labeled(), "knn-pca: source must be labeled");
  require<EvalError>(target_test.labeled(),
                     "knn-pca: target test split must be labeled");
  require<EvalError>(source.dim() == target_train.dim() &&
                         source.dim() == target_test.dim(),
                     "knn-pca: domains do not share a feature space");
  require<EvalError>(static_cast<std::size_t>(cfg.k_neighbors) <= source.size(),
                     "knn-pca: k_neighbors=" + std::to_string(cfg.k_neighbors) +
                         " exceeds the " + std::to_string(source.size()) +
                         " source points");

  Matrix joint(0, source.dim());
  joint.values.reserve((source.size() + target_train.size()) * source.dim());
  for (std::size_t i = 0; i < source.size(); ++i)
    joint.append_row(source.features.row(i));
  for (std::size_t i = 0; i < target_train.size(); ++i)
    joint.append_row(target_train.features.row(i));
  const std::size_t full = std::min(joint.rows - 1, joint.cols);
  require<EvalError>(full >= 1, "knn-pca: too few points to refit a basis");
  FeatureSpace space = detail::truncate_space(
      fit_pca(joint, full), cfg.variance_fraction);

  const Matrix src_proj = project(space, source.features);
  const Matrix test_proj = project(space, target_test.features);

  int n_classes = 0;
  for (int label : source.labels) n_classes = std::max(n_classes, label + 1);
  for (int label : target_test.labels) n_classes = std::max(n_classes, label + 1);

  const std::size_t k = static_cast<std::size_t>(cfg.k_neighbors);
  std::vector<int> predictions(target_test.size());
  std::vector<std::pair<double, std::size_t>> dist(source.size());
  for (std::size_t i = 0; i < target_test.size(); ++i) {
    auto q = test_proj.row(i);
    for (std::size_t j = 0; j < source.size(); ++j) {
      auto p = src_proj.row(j);
      double d2 = 0.0;
      for (std::size_t c = 0; c < q.size(); ++c) {
        const double diff = q[c] - p[c];
        d2 += diff * diff;
      }
      dist[j] = {d2, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::vector<int> votes(n_classes, 0);
    std::vector<double> vote_dist(n_classes, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const int label = source.labels[dist[j].second];
      ++votes[label];
      vote_dist[label] += std::sqrt(dist[j].first);
    }
    int best = 0;
    for (int c = 1; c < n_classes; ++c) {
      if (votes[c] > votes[best] ||
          (votes[c] == votes[best] && vote_dist[c] < vote_dist[best]))
        best = c;
    }
    predictions[i] = best;
  }

  EvalReport report;
  report.source_id = source.subject_id;
  report.target_id = target_test.subject_id;
  report.mode = EvalMode::KnnPca;
  report.confusion = confusion_from_predictions(
      target_test.labels, predictions, static_cast<std::size_t>(n_classes));
  report.per_class = class_metrics(report.confusion);
  report.weighted_f1 = sagan::weighted_f1(report.confusion);
  return report;
}

// ===========================================================================
// Experiment matrix
// ===========================================================================

struct MatrixConfig {
  SaganConfig sagan;  // feature_dim and n_classes are taken from the data
  KnnPcaConfig knn;
  std::size_t w1_subsample = 256;
  std::size_t w1_repeats = 8;
  std::uint64_t seed = 0;
};

struct MatrixCell {
  EvalReport report;
  TrainState train_state;  // filled for adversarial cells only
  bool failed = false;
  std::string error;
};

namespace detail {

inline std::string sagan_config_digest(const SaganConfig& cfg) {
  return hex64(fnv1a64(config_to_json(cfg).dump()));
}

inline std::string knn_config_digest(const KnnPcaConfig& cfg) {
  return hex64(fnv1a64("knn k=" + std::to_string(cfg.k_neighbors) +
                       " var=" + format_double(cfg.variance_fraction)));
}

}  // namespace detail

// Runs every ordered (source, target) pair under every requested mode.
// Supervised cells depend only on the target, so they are seeded by the
// target alone and repeat identically across sources; every other cell is
// seeded by its (source, target, mode) triple, which makes the matrix
// independent of cell execution order. A cell that throws is recorded as
// failed and the run continues.
inline std::vector<MatrixCell> run_matrix(
    const std::vector<SubjectDomains>& subjects,
    const std::vector<EvalMode>& modes, const MatrixConfig& cfg) {
  require<EvalError>(subjects.size() >= 2, "matrix: need at least 2 subjects");
  require<EvalError>(!modes.empty(), "matrix: no modes requested");
  require<EvalError>(cfg.w1_subsample >= 1 && cfg.w1_repeats >= 1,
                     "matrix: transport estimate needs positive sizes");

  std::size_t dim = 0;
  int n_classes = 0;
  for (const SubjectDomains& s : subjects) {
    for (const Domain* d : {&s.train, &s.validation, &s.test}) {
      require<EvalError>(!d->features.empty(),
                         "matrix: subject " + s.subject_id + " has an empty split");
      if (dim == 0) dim = d->dim();
      require<EvalError>(d->dim() == dim,
                         "matrix: subject " + s.subject_id +
                             " does not share the common feature space");
      for (int label : d->labels) n_classes = std::max(n_classes, label + 1);
    }
  }
  require<EvalError>(n_classes >= 2, "matrix: need at least 2 classes");

  SaganConfig base = cfg.sagan;
  base.feature_dim = dim;
  base.n_classes = n_classes;
  base.seed = cfg.seed;
  // One digest per run, not per cell: per-cell derived seeds live in
  // report.seed, so the digest can identify the shared configuration.
  const std::string run_digest = detail::sagan_config_digest(base);
  const std::string knn_digest = detail::knn_config_digest(cfg.knn);

  std::vector<MatrixCell> cells;
  for (const SubjectDomains& src : subjects) {
    for (const SubjectDomains& tgt : subjects) {
      if (src.subject_id == tgt.subject_id) continue;
      const std::uint64_t pair_seed =
          derive_seed(cfg.seed, "w1:" + src.subject_id + "->" + tgt.subject_id);
      const std::size_t n_sub = std::min(
          {cfg.w1_subsample, src.train.size(), tgt.train.size()});
      const double pair_w1 =
          w1_estimate(src.train.features, tgt.train.features, n_sub,
                      cfg.w1_repeats, pair_seed);
      for (EvalMode mode : modes) {
        MatrixCell cell;
        cell.report.source_id = src.subject_id;
        cell.report.target_id = tgt.subject_id;
        cell.report.mode = mode;
        cell.report.wasserstein = pair_w1;
        SaganConfig run = base;
        run.seed = mode == EvalMode::Supervised
                       ? derive_seed(cfg.seed, tgt.subject_id + ":supervised")
                       : derive_seed(cfg.seed, src.subject_id + "->" +
                                                   tgt.subject_id + ":" +
                                                   eval_mode_name(mode));
        cell.report.seed = run.seed;
        cell.report.config_digest =
            mode == EvalMode::KnnPca ? knn_digest : run_digest;
        try {
          switch (mode) {
            case EvalMode::NoTransfer: {
              ClassifierNet c = train_classifier_supervised(src.train, run);
              EvalReport r = evaluate(c, tgt.test);
              cell.report.confusion = std::move(r.confusion);
              cell.report.per_class = std::move(r.per_class);
              cell.report.weighted_f1 = r.weighted_f1;
              break;
            }
            case EvalMode::Supervised: {
              ClassifierNet c = train_classifier_supervised(tgt.train, run);
              EvalReport r = evaluate(c, tgt.test);
              cell.report.confusion = std::move(r.confusion);
              cell.report.per_class = std::move(r.per_class);
              cell.report.weighted_f1 = r.weighted_f1;
              break;
            }
            case EvalMode::KnnPca: {
              EvalReport r = knn_pca_baseline(
                  src.train, as_unlabeled_target(tgt.train), tgt.test, cfg.knn);
              cell.report.confusion = std::move(r.confusion);
              cell.report.per_class = std::move(r.per_class);
              cell.report.weighted_f1 = r.weighted_f1;
              break;
            }
            case EvalMode::Sagan: {
              FitResult fr =
                  fit(src.train, as_unlabeled_target(tgt.train), run);
              cell.train_state = std::move(fr.state);
              EvalReport r = evaluate(fr.classifier, tgt.test);
              cell.report.confusion = std::move(r.confusion);
              cell.report.per_class = std::move(r.per_class);
              cell.report.weighted_f1 = r.weighted_f1;
              break;
            }
          }
        } catch (const SaganError& e) {
          cell.failed = true;
          cell.error = e.what();
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

// ===========================================================================
// Recovery ratios
// ===========================================================================

struct Recovery {
  double ratio = 0.0;  // adversarial F1 over supervised F1
  bool has_gap = false;
  double recovered_gap = 0.0;  // (adversarial - none) / (supervised - none)
};

inline Recovery relative_recovery(const EvalReport& sagan_report,
                                  const EvalReport& supervised_report,
                                  const EvalReport& no_transfer_report) {
  for (const EvalReport* r : {&supervised_report, &no_transfer_report})
    require<EvalError>(r->source_id == sagan_report.source_id &&
                           r->target_id == sagan_report.target_id,
                       "recovery: reports describe different transfer pairs");
  require<EvalError>(supervised_report.weighted_f1 > 0.0,
                     "recovery: supervised weighted F1 must be positive");
  Recovery out;
  out.ratio = sagan_report.weighted_f1 / supervised_report.weighted_f1;
  const double gap =
      supervised_report.weighted_f1 - no_transfer_report.weighted_f1;
  if (gap > 0.0) {
    out.has_gap = true;
    out.recovered_gap =
        (sagan_report.weighted_f1 - no_transfer_report.weighted_f1) / gap;
  }
  return out;
}

// ===========================================================================
// Report serialization
// ===========================================================================

inline nlohmann::json report_to_json(const EvalReport& report) {
  report.confusion.validate();
  nlohmann::json j;
  j["source"] = report.source_id;
  j["target"] = report.target_id;
  j["mode"] = eval_mode_name(report.mode);
  j["n_classes"] = report.confusion.n_classes;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < report.confusion.n_classes; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < report.confusion.n_classes; ++p)
      row.push_back(report.confusion.at(t, p));
    rows.push_back(std::move(row));
  }
  j["confusion"] = std::move(rows);
  nlohmann::json precision = nlohmann::json::array(),
                 recall = nlohmann::json::array(),
                 f1 = nlohmann::json::array(),
                 support = nlohmann::json::array();
  for (const ClassMetrics& m : report.per_class) {
    precision.push_back(m.precision);
    recall.push_back(m.recall);
    f1.push_back(m.f1);
    support.push_back(m.support);
  }
  j["precision"] = std::move(precision);
  j["recall"] = std::move(recall);
  j["f1"] = std::move(f1);
  j["support"] = std::move(support);
  j["weighted_f1"] = report.weighted_f1;
  j["wasserstein"] = report.wasserstein;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "source", "target", "mode", "n_classes", "confusion", "precision",
      "recall", "f1", "support", "weighted_f1", "wasserstein", "seed",
      "config_digest"};
  try {
    require<ConfigError>(j.is_object(), "report: expected an object");
    for (const auto& [key, value] : j.items()) {
      (void)value;
      require<ConfigError>(
          std::find(known.begin(), known.end(), key) != known.end(),
          "report: unknown key '" + key + "'");
    }
    EvalReport report;
    report.source_id = j.at("source").get<std::string>();
    report.target_id = j.at("target").get<std::string>();
    report.mode = eval_mode_from_name(j.at("mode").get<std::string>());
    const std::size_t K = j.at("n_classes").get<std::size_t>();
    report.confusion = ConfusionMatrix::zeros(K);
    const auto& rows = j.at("confusion");
    require<ConfigError>(rows.is_array() && rows.size() == K,
                         "report: confusion must have n_classes rows");
    for (std::size_t t = 0; t < K; ++t) {
      require<ConfigError>(rows[t].is_array() && rows[t].size() == K,
                           "report: confusion must be square");
      for (std::size_t p = 0; p < K; ++p)
        report.confusion.add(t, p, rows[t][p].get<long long>());
    }
    const auto& precision = j.at("precision");
    const auto& recall = j.at("recall");
    const auto& f1 = j.at("f1");
    const auto& support = j.at("support");
    require<ConfigError>(precision.size() == K && recall.size() == K &&
                             f1.size() == K && support.size() == K,
                         "report: per-class arrays must have n_classes entries");
    report.per_class.resize(K);
    for (std::size_t c = 0; c < K; ++c) {
      report.per_class[c].precision = precision[c].get<double>();
      report.per_class[c].recall = recall[c].get<double>();
      report.per_class[c].f1 = f1[c].get<double>();
      report.per_class[c].support = support[c].get<long long>();
    }
    report.weighted_f1 = j.at("weighted_f1").get<double>();
    report.wasserstein = j.at("wasserstein").get<double>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.config_digest = j.at("config_digest").get<std::string>();
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report: malformed document: ") + e.what());
  }
}

inline void save_report(const std::string& path, const EvalReport& report) {
  atomic_write_file(path, report_to_json(report).dump(2) + "\n");
}

inline EvalReport load_report(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report " + path + ": malformed document: " + e.what());
  }
  return report_from_json(j);
}

// ===========================================================================
// Comparison tables
// ===========================================================================

// External baseline scores merged into rendered tables, never recomputed.
// Format: optional '#' comments, then a header line "source target <method>..."
// followed by one row per transfer pair.
struct ReferenceScores {
  std::vector<std::string> methods;
  std::map<std::pair<std::string, std::string>, std::vector<double>> rows;
};

inline ReferenceScores parse_reference_scores(const std::string& text) {
  ReferenceScores ref;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;
    if (!header_seen) {
      require<ConfigError>(tokens.size() >= 3 && tokens[0] == "source" &&
                               tokens[1] == "target",
                           "reference scores: header must start with "
                           "'source target'");
      ref.methods.assign(tokens.begin() + 2, tokens.end());
      header_seen = true;
      continue;
    }
    require<ConfigError>(tokens.size() == 2 + ref.methods.size(),
                         "reference scores: row '" + line + "' has " +
                             std::to_string(tokens.size()) + " fields, want " +
                             std::to_string(2 + ref.methods.size()));
    std::vector<double> values;
    for (std::size_t i = 2; i < tokens.size(); ++i) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tokens[i], &used));
        require<ConfigError>(used == tokens[i].size(), "trailing characters");
      } catch (const std::exception&) {
        throw ConfigError("reference scores: bad value '" + tokens[i] + "'");
      }
    }
    const auto key = std::make_pair(tokens[0], tokens[1]);
    require<ConfigError>(!ref.rows.count(key),
                         "reference scores: duplicate pair " + tokens[0] +
                             " -> " + tokens[1]);
    ref.rows[key] = std::move(values);
  }
  require<ConfigError>(header_seen, "reference scores: empty document");
  return ref;
}

// Fixed-width text table, one row per transfer pair in first-seen order,
// one column per mode present plus any reference-score columns. Reference
// columns sit between the baseline modes and the adversarial result.
inline std::string render_comparison_table(
    const std::vector<EvalReport>& reports,
    const ReferenceScores& reference = {}) {
  require<EvalError>(!reports.empty(), "table: no reports");

  std::vector<std::pair<std::string, std::string>> pairs;
  std::map<std::pair<std::string, std::string>,
           std::map<EvalMode, const EvalReport*>> by_pair;
  std::map<std::pair<std::string, std::string>, double> pair_w1;
  for (const EvalReport& r : reports) {
    const auto key = std::make_pair(r.source_id, r.target_id);
    if (!by_pair.count(key)) pairs.push_back(key);
    by_pair[key][r.mode] = &r;
    pair_w1[key] = r.wasserstein;
  }

  auto mode_present = [&](EvalMode m) {
    for (const EvalReport& r : reports)
      if (r.mode == m) return true;
    return false;
  };

  // One entry per value column: a mode, or a reference-method index.
  struct Column {
    std::string name;
    bool is_reference;
    EvalMode mode;
    std::size_t ref_index;
  };
  std::vector<Column> columns;
  for (EvalMode m : {EvalMode::NoTransfer, EvalMode::KnnPca})
    if (mode_present(m)) columns.push_back({eval_mode_name(m), false, m, 0});
  for (std::size_t i = 0; i < reference.methods.size(); ++i)
    columns.push_back({reference.methods[i], true, EvalMode::NoTransfer, i});
  for (EvalMode m : {EvalMode::Sagan, EvalMode::Supervised})
    if (mode_present(m)) columns.push_back({eval_mode_name(m), false, m, 0});

  std::vector<std::string> header = {"source", "target", "w1"};
  for (const Column& c : columns) header.push_back(c.name);

  std::vector<std::vector<std::string>> body;
  for (const auto& key : pairs) {
    std::vector<std::string> row = {key.first, key.second,
                                    format_fixed(pair_w1[key], 3)};
    const auto& cell_map = by_pair[key];
    const auto ref_it = reference.rows.find(key);
    for (const Column& c : columns) {
      if (c.is_reference) {
        row.push_back(ref_it == reference.rows.end()
                          ? "-"
                          : format_fixed(ref_it->second[c.ref_index], 3));
      } else {
        auto it = cell_map.find(c.mode);
        row.push_back(it == cell_map.end()
                          ? "-"
                          : format_fixed(it->second->weighted_f1, 3));
      }
    }
    body.push_back(std::move(row));
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : body)
    for (std::size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());

  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      out << row[c];
      if (c + 1 < row.size())
        for (std::size_t pad = row[c].size(); pad < width[c]; ++pad) out << ' ';
    }
    out << '\n';
  };
  emit(header);
  std::size_t dashes = 2 * (width.size() - 1);
  for (std::size_t w : width) dashes += w;
  out << std::string(dashes, '-') << '\n';
  for (const auto& row : body) emit(row);
  return out.str();
}

}  // namespace sagan
