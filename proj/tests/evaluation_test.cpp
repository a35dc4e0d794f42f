// Tests for evaluation: weighted F1 against hand-computed oracles, classifier
// evaluation, the KNN+PCA baseline against a linear-scan oracle, the
// experiment matrix, recovery ratios, and report round trips.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sagan/evaluation.hpp"
#include "sagan/synthetic.hpp"
#include "testutil.hpp"

#ifndef SAGAN_SOURCE_DIR
#error "SAGAN_SOURCE_DIR must point at the repository root"
#endif

namespace {

using namespace sagan;
namespace fs = std::filesystem;

ConfusionMatrix fixture_confusion() {
  const fs::path p =
      fs::path(SAGAN_SOURCE_DIR) / "tests" / "fixtures" / "confusion_s1_s2.txt";
  return parse_confusion(read_file(p.string()));
}

Domain cluster_domain(std::size_t n, std::size_t k, double shift,
                      std::uint64_t seed, const std::string& subject) {
  Rng rng(seed);
  Domain d;
  d.subject_id = subject;
  d.role = DomainRole::Source;
  d.features = Matrix(n, k);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    d.labels[i] = cls;
    for (std::size_t j = 0; j < k; ++j) {
      const double base = (j % 2 == static_cast<std::size_t>(cls)) ? -0.4 : 0.4;
      d.features.values[i * k + j] = base + shift + rng.normal(0.0, 0.05);
    }
  }
  return d;
}

SaganConfig quick_config(std::size_t k) {
  SaganConfig cfg;
  cfg.feature_dim = k;
  cfg.n_classes = 2;
  cfg.n_blocks = 1;
  cfg.g_f = 8;
  cfg.c_f = 8;
  cfg.d_f = 2;
  cfg.batch_m = 16;
  cfg.epochs = 4;
  cfg.noise_sigma = 0.05;
  cfg.lambda_cls = 1.0;
  cfg.seed = 909;
  return cfg;
}

fs::path temp_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "sagan_evaluation_test" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// Weighted F1
// ---------------------------------------------------------------------------

TEST(WeightedF1Test, PerfectDiagonalIsOne) {
  ConfusionMatrix cm = ConfusionMatrix::zeros(4);
  for (std::size_t c = 0; c < 4; ++c) cm.add(c, c, 10 + c);
  EXPECT_DOUBLE_EQ(weighted_f1(cm), 1.0);
}

TEST(WeightedF1Test, SymmetricHalfAndHalfIsHalf) {
  ConfusionMatrix cm = ConfusionMatrix::zeros(2);
  cm.add(0, 0, 5);
  cm.add(0, 1, 5);
  cm.add(1, 0, 5);
  cm.add(1, 1, 5);
  EXPECT_DOUBLE_EQ(weighted_f1(cm), 0.5);
}

TEST(WeightedF1Test, SixClassFixtureMatchesHandComputation) {
  ConfusionMatrix cm = fixture_confusion();
  ASSERT_EQ(cm.n_classes, 6u);
  EXPECT_EQ(cm.total(), 1982);
  // Exact rational computation, carried out separately and frozen here.
  EXPECT_NEAR(weighted_f1(cm), 0.7177106749970867, 1e-12);
  EXPECT_NEAR(weighted_f1(cm), 0.718, 0.005);
}

TEST(WeightedF1Test, MatchesSupportWeightedMeanOfPerClassF1) {
  ConfusionMatrix cm = fixture_confusion();
  const std::vector<ClassMetrics> metrics = class_metrics(cm);
  double manual = 0.0;
  long long total = 0;
  for (const ClassMetrics& m : metrics) total += m.support;
  for (const ClassMetrics& m : metrics)
    manual += static_cast<double>(m.support) / total * m.f1;
  EXPECT_NEAR(weighted_f1(cm), manual, 1e-9);
}

TEST(WeightedF1Test, ZeroSupportClassIsExcluded) {
  // Class 1 never occurs in truth; the other two classes are perfect.
  ConfusionMatrix cm = ConfusionMatrix::zeros(3);
  cm.add(0, 0, 10);
  cm.add(2, 2, 30);
  EXPECT_DOUBLE_EQ(weighted_f1(cm), 1.0);
}

TEST(WeightedF1Test, NeverPredictedClassScoresZero) {
  ConfusionMatrix cm = ConfusionMatrix::zeros(2);
  cm.add(0, 0, 10);  // class 1 exists in truth but is always missed
  cm.add(1, 0, 10);
  const std::vector<ClassMetrics> metrics = class_metrics(cm);
  EXPECT_DOUBLE_EQ(metrics[1].f1, 0.0);
  // Class 0: precision 0.5, recall 1.0 -> F1 = 2/3; half the weight.
  EXPECT_NEAR(weighted_f1(cm), 0.5 * (2.0 / 3.0), 1e-12);
}

TEST(WeightedF1Test, UniformRandomPredictionsScoreOneSixth) {
  Rng rng(424242);
  std::vector<int> truth(6000), pred(6000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<int>(rng.integer(6));
    pred[i] = static_cast<int>(rng.integer(6));
  }
  ConfusionMatrix cm = confusion_from_predictions(truth, pred, 6);
  EXPECT_NEAR(weighted_f1(cm), 1.0 / 6.0, 0.02);
}

TEST(WeightedF1Test, RejectsDegenerateMatrices) {
  ConfusionMatrix cm = ConfusionMatrix::zeros(3);
  EXPECT_THROW(weighted_f1(cm), EvalError);
  EXPECT_THROW(ConfusionMatrix::zeros(0), EvalError);
  cm.counts[1] = -2;
  EXPECT_THROW(weighted_f1(cm), EvalError);
}

TEST(ConfusionParseTest, RoundTripsAndRejectsRaggedRows) {
  ConfusionMatrix cm = fixture_confusion();
  ConfusionMatrix again = parse_confusion(format_confusion(cm));
  EXPECT_EQ(cm.counts, again.counts);
  EXPECT_THROW(parse_confusion("1 2\n3\n"), EvalError);
  EXPECT_THROW(parse_confusion("1 two\n3 4\n"), EvalError);
  EXPECT_THROW(parse_confusion("# only comments\n"), EvalError);
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

TEST(EvaluateTest, ConstantClassZeroOnPureClassZeroIsPerfect) {
  SaganConfig cfg = quick_config(4);
  ClassifierNet c = ClassifierNet::from_config(cfg);
  for (const std::string& name : c.params().names())
    if (!c.params().is_buffer(name))
      for (double& v : c.params().at(name).data()) v = 0.0;
  c.params().at("fc/bias").data()[0] = 1.0;  // constant argmax = class 0

  Domain test = cluster_domain(40, 4, 0.0, 5, "t");
  for (int& label : test.labels) label = 0;
  EvalReport report = evaluate(c, test);
  EXPECT_DOUBLE_EQ(report.weighted_f1, 1.0);
  EXPECT_EQ(report.confusion.total(), 40);
  EXPECT_EQ(report.confusion.at(0, 0), 40);
}

TEST(EvaluateTest, TrainedClassifierSeparatesClusters) {
  SaganConfig cfg = quick_config(4);
  cfg.epochs = 40;
  Domain train = cluster_domain(128, 4, 0.0, 21, "s");
  Domain test = cluster_domain(64, 4, 0.0, 22, "s");
  ClassifierNet c = train_classifier_supervised(train, cfg);
  EvalReport report = evaluate(c, test);
  EXPECT_GT(report.weighted_f1, 0.9);
  EXPECT_EQ(report.confusion.total(), 64);
}

TEST(EvaluateTest, ReportIsInternallyConsistentAndDeterministic) {
  SaganConfig cfg = quick_config(4);
  ClassifierNet c = ClassifierNet::from_config(cfg);
  Rng prng(77);
  testutil::randomize_parameters(c.params(), prng, 0.3);
  Domain test = cluster_domain(50, 4, 0.1, 9, "t");

  EvalReport a = evaluate(c, test);
  EvalReport b = evaluate(c, test);
  EXPECT_EQ(a.confusion.counts, b.confusion.counts);
  EXPECT_DOUBLE_EQ(a.weighted_f1, b.weighted_f1);
  EXPECT_NEAR(a.weighted_f1, weighted_f1(a.confusion), 1e-12);
}

TEST(EvaluateTest, RejectsBadInputs) {
  SaganConfig cfg = quick_config(4);
  ClassifierNet c = ClassifierNet::from_config(cfg);
  Domain wrong = cluster_domain(10, 6, 0.0, 3, "t");
  EXPECT_THROW(evaluate(c, wrong), EvalError);
  Domain unl = as_unlabeled_target(cluster_domain(10, 4, 0.0, 3, "t"));
  EXPECT_THROW(evaluate(c, unl), EvalError);
}

// ---------------------------------------------------------------------------
// KNN+PCA baseline
// ---------------------------------------------------------------------------

TEST(KnnPcaTest, MemorizesSeenPointsAtKOne) {
  Domain source = cluster_domain(80, 6, 0.0, 31, "s");
  Domain target_train = as_unlabeled_target(cluster_domain(40, 6, 0.0, 32, "t"));
  Domain target_test = source;  // identical points, labels kept
  target_test.subject_id = "t";
  KnnPcaConfig cfg;
  cfg.k_neighbors = 1;
  EvalReport report = knn_pca_baseline(source, target_train, target_test, cfg);
  EXPECT_DOUBLE_EQ(report.weighted_f1, 1.0);
  EXPECT_EQ(report.source_id, "s");
  EXPECT_EQ(report.target_id, "t");
  EXPECT_EQ(report.mode, EvalMode::KnnPca);
}

TEST(KnnPcaTest, SmallTranslationShiftStaysAccurate) {
  Domain source = cluster_domain(160, 6, 0.0, 41, "s");
  Domain target_train =
      as_unlabeled_target(cluster_domain(80, 6, 0.08, 42, "t"));
  Domain target_test = cluster_domain(80, 6, 0.08, 43, "t");
  EvalReport report = knn_pca_baseline(source, target_train, target_test, {});
  EXPECT_GT(report.weighted_f1, 0.9);
}

TEST(KnnPcaTest, FullRankKOneMatchesLinearScanInRawSpace) {
  // With every component kept, the refit basis is a rigid map of the raw
  // space, so nearest neighbors are preserved exactly.
  Domain source = cluster_domain(60, 5, 0.0, 51, "s");
  Domain target_train = as_unlabeled_target(cluster_domain(30, 5, 0.1, 52, "t"));
  Domain target_test = cluster_domain(25, 5, 0.1, 53, "t");
  KnnPcaConfig cfg;
  cfg.k_neighbors = 1;
  cfg.variance_fraction = 1.0;
  EvalReport report = knn_pca_baseline(source, target_train, target_test, cfg);

  ConfusionMatrix oracle = ConfusionMatrix::zeros(2);
  for (std::size_t i = 0; i < target_test.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_label = -1;
    for (std::size_t j = 0; j < source.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        const double diff =
            target_test.features.at(i, c) - source.features.at(j, c);
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        best_label = source.labels[j];
      }
    }
    oracle.add(target_test.labels[i], best_label);
  }
  EXPECT_EQ(report.confusion.counts, oracle.counts);
}

TEST(KnnPcaTest, RejectsOversizedNeighborhoodAndBadDomains) {
  Domain source = cluster_domain(10, 4, 0.0, 61, "s");
  Domain tt = as_unlabeled_target(cluster_domain(10, 4, 0.0, 62, "t"));
  Domain test = cluster_domain(10, 4, 0.0, 63, "t");
  KnnPcaConfig cfg;
  cfg.k_neighbors = 11;
  EXPECT_THROW(knn_pca_baseline(source, tt, test, cfg), EvalError);
  cfg.k_neighbors = 0;
  EXPECT_THROW(knn_pca_baseline(source, tt, test, cfg), EvalError);
  Domain wrong = cluster_domain(10, 6, 0.0, 64, "t");
  EXPECT_THROW(knn_pca_baseline(source, tt, wrong, {}), EvalError);
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

SubjectDomains make_subject(const std::string& id, double shift,
                            std::uint64_t seed) {
  SubjectDomains s;
  s.subject_id = id;
  s.train = cluster_domain(96, 4, shift, derive_seed(seed, "train"), id);
  s.validation = cluster_domain(32, 4, shift, derive_seed(seed, "val"), id);
  s.test = cluster_domain(48, 4, shift, derive_seed(seed, "test"), id);
  s.train.role = DomainRole::Source;
  s.validation.role = DomainRole::Validation;
  s.test.role = DomainRole::Test;
  return s;
}

TEST(RunMatrixTest, PairCountsMatchSubjectCounts) {
  MatrixConfig cfg;
  cfg.sagan = quick_config(4);
  cfg.sagan.epochs = 1;
  cfg.w1_subsample = 32;
  cfg.w1_repeats = 2;

  std::vector<SubjectDomains> two = {make_subject("a", 0.0, 1),
                                     make_subject("b", 0.2, 2)};
  auto cells = run_matrix(two, {EvalMode::NoTransfer}, cfg);
  EXPECT_EQ(cells.size(), 2u);

  std::vector<SubjectDomains> four = {
      make_subject("a", 0.0, 1), make_subject("b", 0.2, 2),
      make_subject("c", -0.2, 3), make_subject("d", 0.4, 4)};
  cells = run_matrix(four, {EvalMode::NoTransfer}, cfg);
  EXPECT_EQ(cells.size(), 12u);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& cell : cells) {
    EXPECT_FALSE(cell.failed) << cell.error;
    EXPECT_NE(cell.report.source_id, cell.report.target_id);
    pairs.insert({cell.report.source_id, cell.report.target_id});
  }
  EXPECT_EQ(pairs.size(), 12u);
}

TEST(RunMatrixTest, SupervisedDominatesNoTransferOnShiftedSubjects) {
  MatrixConfig cfg;
  cfg.sagan = quick_config(4);
  cfg.sagan.epochs = 30;
  cfg.w1_subsample = 48;
  cfg.w1_repeats = 2;
  // A large shift relative to cluster spread makes naive reuse fail.
  std::vector<SubjectDomains> subjects = {make_subject("a", 0.0, 11),
                                          make_subject("b", 0.8, 12)};
  auto cells = run_matrix(
      subjects, {EvalMode::NoTransfer, EvalMode::Supervised}, cfg);
  ASSERT_EQ(cells.size(), 4u);
  std::map<std::pair<std::string, std::string>, std::map<EvalMode, double>> f1;
  for (const auto& cell : cells) {
    ASSERT_FALSE(cell.failed) << cell.error;
    f1[{cell.report.source_id, cell.report.target_id}][cell.report.mode] =
        cell.report.weighted_f1;
    EXPECT_GT(cell.report.wasserstein, 0.0);
  }
  for (const auto& [pair, modes] : f1)
    EXPECT_GE(modes.at(EvalMode::Supervised), modes.at(EvalMode::NoTransfer))
        << pair.first << " -> " << pair.second;
}

TEST(RunMatrixTest, SupervisedCellsDependOnlyOnTheTarget) {
  MatrixConfig cfg;
  cfg.sagan = quick_config(4);
  cfg.sagan.epochs = 3;
  cfg.w1_subsample = 32;
  cfg.w1_repeats = 2;
  std::vector<SubjectDomains> subjects = {make_subject("a", 0.0, 21),
                                          make_subject("b", 0.3, 22),
                                          make_subject("c", -0.3, 23)};
  auto cells = run_matrix(subjects, {EvalMode::Supervised}, cfg);
  ASSERT_EQ(cells.size(), 6u);
  std::map<std::string, std::vector<const MatrixCell*>> by_target;
  for (const auto& cell : cells)
    by_target[cell.report.target_id].push_back(&cell);
  for (const auto& [target, group] : by_target) {
    ASSERT_EQ(group.size(), 2u) << target;
    EXPECT_EQ(group[0]->report.confusion.counts,
              group[1]->report.confusion.counts)
        << "supervised result for target " << target
        << " must not depend on the pair's source";
  }
}

TEST(RunMatrixTest, ModeOrderDoesNotChangeReports) {
  MatrixConfig cfg;
  cfg.sagan = quick_config(4);
  cfg.sagan.epochs = 2;
  cfg.w1_subsample = 32;
  cfg.w1_repeats = 2;
  std::vector<SubjectDomains> subjects = {make_subject("a", 0.0, 31),
                                          make_subject("b", 0.25, 32)};
  auto forward = run_matrix(
      subjects, {EvalMode::NoTransfer, EvalMode::KnnPca, EvalMode::Sagan}, cfg);
  auto backward = run_matrix(
      subjects, {EvalMode::Sagan, EvalMode::KnnPca, EvalMode::NoTransfer}, cfg);
  ASSERT_EQ(forward.size(), backward.size());
  auto key = [](const MatrixCell& c) {
    return c.report.source_id + "|" + c.report.target_id + "|" +
           eval_mode_name(c.report.mode);
  };
  std::map<std::string, const MatrixCell*> lookup;
  for (const auto& cell : backward) lookup[key(cell)] = &cell;
  for (const auto& cell : forward) {
    ASSERT_TRUE(lookup.count(key(cell))) << key(cell);
    const MatrixCell& other = *lookup[key(cell)];
    EXPECT_FALSE(cell.failed) << cell.error;
    EXPECT_EQ(cell.report.confusion.counts, other.report.confusion.counts)
        << key(cell);
    EXPECT_DOUBLE_EQ(cell.report.weighted_f1, other.report.weighted_f1);
    EXPECT_DOUBLE_EQ(cell.report.wasserstein, other.report.wasserstein);
    EXPECT_EQ(cell.report.seed, other.report.seed);
  }
}

TEST(RunMatrixTest, FailedCellIsRecordedAndRunContinues) {
  MatrixConfig cfg;
  cfg.sagan = quick_config(4);
  cfg.sagan.epochs = 1;
  cfg.w1_subsample = 4;
  cfg.w1_repeats = 2;
  std::vector<SubjectDomains> subjects = {make_subject("a", 0.0, 41),
                                          make_subject("b", 0.2, 42)};
  // One training split collapses to a single window: every cell that
  // trains on it fails (no-transfer from b, supervised on b) while the
  // cells training on subject a still complete.
  Domain tiny = cluster_domain(1, 4, 0.2, 43, "b");
  subjects[1].train = tiny;
  auto cells = run_matrix(
      subjects, {EvalMode::NoTransfer, EvalMode::Supervised}, cfg);
  ASSERT_EQ(cells.size(), 4u);
  std::size_t failed = 0, passed = 0;
  for (const auto& cell : cells) {
    if (cell.failed) {
      ++failed;
      EXPECT_FALSE(cell.error.empty());
      const bool trains_on_b =
          (cell.report.mode == EvalMode::NoTransfer &&
           cell.report.source_id == "b") ||
          (cell.report.mode == EvalMode::Supervised &&
           cell.report.target_id == "b");
      EXPECT_TRUE(trains_on_b)
          << eval_mode_name(cell.report.mode) << " " << cell.report.source_id
          << " -> " << cell.report.target_id;
    } else {
      ++passed;
      EXPECT_GT(cell.report.confusion.total(), 0);
    }
  }
  EXPECT_EQ(failed, 2u);
  EXPECT_EQ(passed, 2u);
}

TEST(RunMatrixTest, AdversarialCellsCarryTrainingState) {
  MatrixConfig cfg;
  cfg.sagan = quick_config(4);
  cfg.sagan.epochs = 2;
  cfg.w1_subsample = 32;
  cfg.w1_repeats = 2;
  std::vector<SubjectDomains> subjects = {make_subject("a", 0.0, 51),
                                          make_subject("b", 0.2, 52)};
  auto cells = run_matrix(subjects, {EvalMode::Sagan}, cfg);
  ASSERT_EQ(cells.size(), 2u);
  for (const auto& cell : cells) {
    ASSERT_FALSE(cell.failed) << cell.error;
    EXPECT_EQ(cell.train_state.epochs_run, 2u);
    EXPECT_FALSE(cell.train_state.history.empty());
    EXPECT_EQ(cell.train_state.selection_scores.size(), 2u);
  }
}

// ---------------------------------------------------------------------------
// Recovery ratios
// ---------------------------------------------------------------------------

EvalReport stub_report(const std::string& s, const std::string& t,
                       EvalMode mode, double f1) {
  EvalReport r;
  r.source_id = s;
  r.target_id = t;
  r.mode = mode;
  r.confusion = ConfusionMatrix::zeros(2);
  r.confusion.add(0, 0, 1);
  r.per_class = class_metrics(r.confusion);
  r.weighted_f1 = f1;
  return r;
}

TEST(RecoveryTest, MatchesHandComputedRatios) {
  EvalReport sg = stub_report("s1", "s2", EvalMode::Sagan, 0.73);
  EvalReport sup = stub_report("s1", "s2", EvalMode::Supervised, 0.75);
  EvalReport none = stub_report("s1", "s2", EvalMode::NoTransfer, 0.45);
  Recovery r = relative_recovery(sg, sup, none);
  EXPECT_NEAR(r.ratio, 0.73 / 0.75, 1e-12);
  ASSERT_TRUE(r.has_gap);
  EXPECT_NEAR(r.recovered_gap, (0.73 - 0.45) / (0.75 - 0.45), 1e-12);
}

TEST(RecoveryTest, EqualToSupervisedIsOne) {
  EvalReport sg = stub_report("a", "b", EvalMode::Sagan, 0.6);
  EvalReport sup = stub_report("a", "b", EvalMode::Supervised, 0.6);
  EvalReport none = stub_report("a", "b", EvalMode::NoTransfer, 0.4);
  Recovery r = relative_recovery(sg, sup, none);
  EXPECT_DOUBLE_EQ(r.ratio, 1.0);
  EXPECT_DOUBLE_EQ(r.recovered_gap, 1.0);
}

TEST(RecoveryTest, EqualToNoTransferRecoversNothing) {
  EvalReport sg = stub_report("a", "b", EvalMode::Sagan, 0.4);
  EvalReport sup = stub_report("a", "b", EvalMode::Supervised, 0.6);
  EvalReport none = stub_report("a", "b", EvalMode::NoTransfer, 0.4);
  Recovery r = relative_recovery(sg, sup, none);
  ASSERT_TRUE(r.has_gap);
  EXPECT_DOUBLE_EQ(r.recovered_gap, 0.0);
}

TEST(RecoveryTest, RejectsZeroSupervisedAndMismatchedPairs) {
  EvalReport sg = stub_report("a", "b", EvalMode::Sagan, 0.4);
  EvalReport sup = stub_report("a", "b", EvalMode::Supervised, 0.0);
  EvalReport none = stub_report("a", "b", EvalMode::NoTransfer, 0.2);
  EXPECT_THROW(relative_recovery(sg, sup, none), EvalError);
  sup.weighted_f1 = 0.5;
  sup.target_id = "c";
  EXPECT_THROW(relative_recovery(sg, sup, none), EvalError);
}

// ---------------------------------------------------------------------------
// Report files and tables
// ---------------------------------------------------------------------------

TEST(ReportIoTest, RoundTripsThroughDisk) {
  SaganConfig cfg = quick_config(4);
  ClassifierNet c = ClassifierNet::from_config(cfg);
  Rng prng(31);
  testutil::randomize_parameters(c.params(), prng, 0.3);
  Domain test = cluster_domain(40, 4, 0.0, 7, "tgt");
  EvalReport report = evaluate(c, test);
  report.source_id = "src";
  report.mode = EvalMode::Sagan;
  report.wasserstein = 1.25;
  report.seed = 99;
  report.config_digest = "deadbeefdeadbeef";

  const fs::path path = temp_dir("io") / "report.json";
  save_report(path.string(), report);
  EvalReport back = load_report(path.string());
  EXPECT_EQ(back.source_id, "src");
  EXPECT_EQ(back.target_id, "tgt");
  EXPECT_EQ(back.mode, EvalMode::Sagan);
  EXPECT_EQ(back.confusion.counts, report.confusion.counts);
  EXPECT_DOUBLE_EQ(back.weighted_f1, report.weighted_f1);
  EXPECT_DOUBLE_EQ(back.wasserstein, 1.25);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.config_digest, "deadbeefdeadbeef");
  ASSERT_EQ(back.per_class.size(), report.per_class.size());
  for (std::size_t i = 0; i < back.per_class.size(); ++i) {
    EXPECT_DOUBLE_EQ(back.per_class[i].f1, report.per_class[i].f1);
    EXPECT_EQ(back.per_class[i].support, report.per_class[i].support);
  }
}

TEST(ReportIoTest, RejectsUnknownKeysAndMalformedDocuments) {
  nlohmann::json j = report_to_json(
      stub_report("a", "b", EvalMode::Sagan, 0.5));
  j["surprise"] = 1;
  EXPECT_THROW(report_from_json(j), ConfigError);
  j.erase("surprise");
  j.erase("weighted_f1");
  EXPECT_THROW(report_from_json(j), ConfigError);

  const fs::path path = temp_dir("bad") / "report.json";
  atomic_write_file(path.string(), "{not json");
  EXPECT_THROW(load_report(path.string()), ConfigError);
  EXPECT_THROW(load_report((path.parent_path() / "absent.json").string()),
               IoError);
}

TEST(ReferenceScoresTest, ParsesHeaderAndRows) {
  const std::string text =
      "# external baselines\n"
      "source target GFK STL\n"
      "s1 s2 0.59 0.65\n"
      "s1 s3 0.43 0.37\n";
  ReferenceScores ref = parse_reference_scores(text);
  ASSERT_EQ(ref.methods.size(), 2u);
  EXPECT_EQ(ref.methods[0], "GFK");
  EXPECT_EQ(ref.methods[1], "STL");
  ASSERT_EQ(ref.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(ref.rows.at({"s1", "s2"})[0], 0.59);
  EXPECT_DOUBLE_EQ(ref.rows.at({"s1", "s3"})[1], 0.37);

  EXPECT_THROW(parse_reference_scores("bad header\ns1 s2 0.5\n"), ConfigError);
  EXPECT_THROW(parse_reference_scores("source target X\ns1 s2 oops\n"),
               ConfigError);
  EXPECT_THROW(
      parse_reference_scores("source target X\ns1 s2 0.5\ns1 s2 0.6\n"),
      ConfigError);
}

TEST(ComparisonTableTest, MergesModesAndReferenceColumns) {
  std::vector<EvalReport> reports;
  for (auto [mode, f1] :
       std::vector<std::pair<EvalMode, double>>{{EvalMode::NoTransfer, 0.45},
                                                {EvalMode::KnnPca, 0.60},
                                                {EvalMode::Sagan, 0.73},
                                                {EvalMode::Supervised, 0.75}}) {
    EvalReport r = stub_report("s1", "s2", mode, f1);
    r.wasserstein = 46.69;
    reports.push_back(r);
  }
  EvalReport other = stub_report("s1", "s3", EvalMode::Sagan, 0.45);
  other.wasserstein = 45.10;
  reports.push_back(other);

  ReferenceScores ref = parse_reference_scores(
      "source target GFK STL\ns1 s2 0.59 0.65\n");
  const std::string table = render_comparison_table(reports, ref);

  EXPECT_NE(table.find("source"), std::string::npos);
  EXPECT_NE(table.find("no-transfer"), std::string::npos);
  EXPECT_NE(table.find("GFK"), std::string::npos);
  EXPECT_NE(table.find("0.730"), std::string::npos);
  EXPECT_NE(table.find("46.690"), std::string::npos);
  EXPECT_NE(table.find("0.590"), std::string::npos);
  // The pair with no reference row renders placeholders.
  EXPECT_NE(table.find("-"), std::string::npos);
  // Header order mirrors the published layout.
  const std::size_t knn = table.find("knn-pca");
  const std::size_t gfk = table.find("GFK");
  const std::size_t sg = table.find("sagan");
  ASSERT_NE(knn, std::string::npos);
  EXPECT_LT(knn, gfk);
  EXPECT_LT(gfk, sg);
}

TEST(ComparisonTableTest, WorksWithoutReferenceScores) {
  std::vector<EvalReport> reports = {
      stub_report("a", "b", EvalMode::NoTransfer, 0.4),
      stub_report("a", "b", EvalMode::Supervised, 0.8)};
  const std::string table = render_comparison_table(reports);
  EXPECT_NE(table.find("no-transfer"), std::string::npos);
  EXPECT_NE(table.find("supervised"), std::string::npos);
  EXPECT_NE(table.find("0.400"), std::string::npos);
  EXPECT_THROW(render_comparison_table({}), EvalError);
}

}  // namespace
