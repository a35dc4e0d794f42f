// ============================================================================
// synthetic.hpp - deterministic multi-subject activity data with controlled
// cross-subject shift. Subjects are class-conditional Gaussians around
// prototypes pushed through a well-conditioned affine map (plus an optional
// smooth warp), so transfer difficulty is a dial rather than an accident.
// Also writes complete raw datasets in the ingestion text format, so the
// whole preprocessing pipeline can be exercised without real recordings.
// ============================================================================

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "sagan/common.hpp"
#include "sagan/domain.hpp"
#include "sagan/pipeline.hpp"

namespace sagan {

// ---------------------------------------------------------------------------
// Subject specification
// ---------------------------------------------------------------------------

struct SubjectSpec {
  std::string subject_id;
  std::vector<std::vector<double>> prototypes;  // one point in R^k per class
  std::vector<double> transform_a;              // k*k row-major
  std::vector<double> transform_b;              // k
  double nonlinearity = 0.0;  // amplitude of the smooth warp, in [0, 0.3]
  double sample_stddev = 0.05;
  double label_noise = 0.0;  // in [0, 0.5)
  std::size_t samples_per_class = 64;
  std::uint64_t seed = 0;

  std::size_t k() const { return prototypes.empty() ? 0 : prototypes[0].size(); }
  std::size_t n_classes() const { return prototypes.size(); }

  void validate() const {
    require<PipelineError>(n_classes() >= 2, "subject: need at least 2 classes");
    require<PipelineError>(k() >= 2, "subject: need dimension >= 2");
    for (const auto& p : prototypes)
      require<PipelineError>(p.size() == k(),
                             "subject: prototypes must share one dimension");
    require<PipelineError>(transform_a.size() == k() * k(),
                           "subject: transform matrix must be " +
                               std::to_string(k()) + "x" + std::to_string(k()));
    require<PipelineError>(transform_b.size() == k(),
                           "subject: transform offset must have dimension " +
                               std::to_string(k()));
    require<PipelineError>(sample_stddev > 0,
                           "subject: sample spread must be positive");
    require<PipelineError>(label_noise >= 0 && label_noise < 0.5,
                           "subject: label-noise rate must lie in [0, 0.5)");
    require<PipelineError>(nonlinearity >= 0 && nonlinearity <= 0.3,
                           "subject: warp amplitude must lie in [0, 0.3]");
    require<PipelineError>(samples_per_class >= 1,
                           "subject: need at least one sample per class");

    // Condition number of A via the eigenvalues of A^T A.
    const std::size_t n = k();
    std::vector<double> gram(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t r = 0; r < n; ++r)
          s += transform_a[r * n + i] * transform_a[r * n + j];
        gram[i * n + j] = s;
      }
    std::vector<double> evecs;
    detail::jacobi_eigen(gram, evecs, n);
    double lo = gram[0], hi = gram[0];
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, gram[i * n + i]);
      hi = std::max(hi, gram[i * n + i]);
    }
    require<PipelineError>(lo > 0, "subject: transform matrix is singular");
    require<PipelineError>(hi <= lo * 100.0 * 100.0,
                           "subject: transform condition number exceeds 100");
  }
};

// Deterministic well-separated class prototypes inside (-scale-ish, +scale-ish).
inline std::vector<std::vector<double>> make_prototypes(
    std::size_t n_classes, std::size_t k, double scale = 0.5,
    std::uint64_t seed = 0x5EEDC1A55ull) {
  require<PipelineError>(n_classes >= 2 && k >= 2,
                         "prototypes: need >= 2 classes and dimension >= 2");
  Rng rng(derive_seed(seed, "prototypes"));
  std::vector<std::vector<double>> protos;
  const double min_sep = scale * 0.8;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      std::vector<double> p(k);
      double norm = 0;
      for (double& v : p) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : p) v *= scale / norm;
      bool separated = true;
      for (const auto& q : protos) {
        double sq = 0;
        for (std::size_t j = 0; j < k; ++j) sq += (p[j] - q[j]) * (p[j] - q[j]);
        if (std::sqrt(sq) < min_sep) separated = false;
      }
      if (separated || attempt == 199) {
        protos.push_back(std::move(p));
        break;
      }
    }
  }
  return protos;
}

// Identity-transform subject with default prototypes.
inline SubjectSpec base_subject(const std::string& subject_id, std::size_t k,
                                std::size_t n_classes, std::uint64_t seed) {
  SubjectSpec spec;
  spec.subject_id = subject_id;
  spec.prototypes = make_prototypes(n_classes, k);
  spec.transform_a.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) spec.transform_a[i * k + i] = 1.0;
  spec.transform_b.assign(k, 0.0);
  spec.seed = seed;
  return spec;
}

// y = A x + b, then an elementwise smooth warp y + amp * sin(pi * y). The
// amplitude cap keeps the warp strictly monotone per coordinate.
inline void apply_subject_transform(const SubjectSpec& spec,
                                    std::vector<double>& x) {
  const std::size_t k = spec.k();
  std::vector<double> y(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double s = spec.transform_b[i];
    for (std::size_t j = 0; j < k; ++j)
      s += spec.transform_a[i * k + j] * x[j];
    y[i] = s;
  }
  if (spec.nonlinearity > 0)
    for (double& v : y) v += spec.nonlinearity * std::sin(std::numbers::pi * v);
  x = std::move(y);
}

// ---------------------------------------------------------------------------
// Feature-space sampling
// ---------------------------------------------------------------------------

inline Domain synth_domain(const SubjectSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "samples"));
  Rng label_rng(derive_seed(spec.seed, "label-noise"));
  Domain d;
  d.subject_id = spec.subject_id;
  d.role = DomainRole::Source;
  const std::size_t k = spec.k();
  const int n_classes = static_cast<int>(spec.n_classes());
  std::vector<double> x(k);
  for (int c = 0; c < n_classes; ++c)
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      for (std::size_t j = 0; j < k; ++j)
        x[j] = spec.prototypes[c][j] + rng.normal(0.0, spec.sample_stddev);
      apply_subject_transform(spec, x);
      d.features.append_row(x);
      int label = c;
      if (spec.label_noise > 0 && label_rng.uniform() < spec.label_noise) {
        const int other =
            static_cast<int>(label_rng.integer(n_classes - 1));
        label = other >= c ? other + 1 : other;
      }
      d.labels.push_back(label);
    }
  return d;
}

// ---------------------------------------------------------------------------
// Shift families: subjects at increasing transport distance from a base
// ---------------------------------------------------------------------------

// Members translate the base subject along the normalized all-ones direction
// by each magnitude, so the expected transport distance to the base equals
// the magnitude itself.
inline std::vector<SubjectSpec> shift_family(
    const SubjectSpec& base, const std::vector<double>& magnitudes) {
  base.validate();
  require<PipelineError>(!magnitudes.empty(), "shift_family: no magnitudes");
  for (std::size_t i = 0; i < magnitudes.size(); ++i) {
    require<PipelineError>(magnitudes[i] >= 0,
                           "shift_family: magnitudes must be non-negative");
    require<PipelineError>(i == 0 || magnitudes[i - 1] <= magnitudes[i],
                           "shift_family: magnitudes must be ascending");
  }
  const std::size_t k = base.k();
  const double unit = 1.0 / std::sqrt(static_cast<double>(k));
  std::vector<SubjectSpec> family;
  for (std::size_t i = 0; i < magnitudes.size(); ++i) {
    SubjectSpec member = base;
    member.subject_id =
        base.subject_id + "-m" + format_double(magnitudes[i]);
    member.seed = derive_seed(base.seed, "family-" + std::to_string(i));
    for (std::size_t j = 0; j < k; ++j)
      member.transform_b[j] += magnitudes[i] * unit;
    family.push_back(std::move(member));
  }
  return family;
}

// ---------------------------------------------------------------------------
// Raw dataset writer: full ingestion format (column text + channel spec +
// label map + a small JSON sidecar with the sample rate)
// ---------------------------------------------------------------------------

struct RawSynthConfig {
  double sample_rate_hz = 30.0;
  double bout_seconds = 4.0;  // one continuous labeled activity stretch
  double gap_seconds = 0.5;   // unlabeled stretch between bouts
  std::size_t bouts_per_class_per_file = 2;
  double missing_rate = 0.01;  // probability of a NaN sensor reading
  std::size_t files_per_subject = 5;  // runs 1-3 train, 4 validation, 5 test

  void validate() const {
    require<PipelineError>(sample_rate_hz > 0, "synth: sample rate must be positive");
    require<PipelineError>(bout_seconds * sample_rate_hz >= 1,
                           "synth: bouts must span at least one sample");
    require<PipelineError>(gap_seconds >= 0, "synth: gap must be non-negative");
    require<PipelineError>(bouts_per_class_per_file >= 1,
                           "synth: need at least one bout per class");
    require<PipelineError>(missing_rate >= 0 && missing_rate < 0.5,
                           "synth: missing rate must lie in [0, 0.5)");
    require<PipelineError>(files_per_subject >= 1 && files_per_subject <= 5,
                           "synth: runs are numbered 1..5");
  }
};

struct WrittenDataset {
  std::string directory;
  std::vector<std::string> data_files;
  std::string channel_spec_path;
  std::string label_map_path;
  std::string meta_path;
};

// Per-channel sensor ranges wide enough for every subject's transformed
// prototypes plus sampling spread and warp.
inline std::vector<std::pair<double, double>> dataset_channel_ranges(
    const std::vector<SubjectSpec>& subjects) {
  const std::size_t k = subjects.front().k();
  std::vector<std::pair<double, double>> ranges(
      k, {std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()});
  for (const SubjectSpec& spec : subjects) {
    double row_norm = 0;
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < k; ++j)
        s += std::abs(spec.transform_a[i * k + j]);
      row_norm = std::max(row_norm, s);
    }
    const double pad =
        4.0 * spec.sample_stddev * row_norm + spec.nonlinearity + 0.1;
    for (const auto& proto : spec.prototypes) {
      std::vector<double> y = proto;
      apply_subject_transform(spec, y);
      for (std::size_t j = 0; j < k; ++j) {
        ranges[j].first = std::min(ranges[j].first, y[j] - pad);
        ranges[j].second = std::max(ranges[j].second, y[j] + pad);
      }
    }
  }
  return ranges;
}

inline WrittenDataset write_raw_dataset(const std::string& dir,
                                        const std::vector<SubjectSpec>& subjects,
                                        const RawSynthConfig& cfg) {
  cfg.validate();
  require<PipelineError>(!subjects.empty(), "synth: no subjects");
  const std::size_t k = subjects.front().k();
  const std::size_t n_classes = subjects.front().n_classes();
  for (const SubjectSpec& s : subjects) {
    s.validate();
    require<PipelineError>(s.k() == k && s.n_classes() == n_classes,
                           "synth: subjects must share dimension and classes");
  }

  WrittenDataset out;
  out.directory = dir;
  std::filesystem::create_directories(dir);

  const auto ranges = dataset_channel_ranges(subjects);
  {
    std::string spec_text = "# synthetic activity dataset channel layout\n";
    spec_text += "label_column " + std::to_string(k + 1) + "\n";
    for (const auto& [lo, hi] : ranges)
      spec_text += format_double(lo) + " " + format_double(hi) + "\n";
    out.channel_spec_path = dir + "/channel.spec";
    atomic_write_file(out.channel_spec_path, spec_text);
  }
  {
    std::string map_text = "# label code -> class id (0 = unannotated)\n0 -1\n";
    for (std::size_t c = 0; c < n_classes; ++c)
      map_text += std::to_string(c + 1) + " " + std::to_string(c) + "\n";
    out.label_map_path = dir + "/labels.map";
    atomic_write_file(out.label_map_path, map_text);
  }
  {
    nlohmann::json meta;
    meta["sample_rate_hz"] = cfg.sample_rate_hz;
    meta["channels"] = k;
    meta["n_classes"] = n_classes;
    std::vector<std::string> ids;
    for (const SubjectSpec& s : subjects) ids.push_back(s.subject_id);
    meta["subjects"] = ids;
    meta["files_per_subject"] = cfg.files_per_subject;
    out.meta_path = dir + "/dataset.json";
    atomic_write_file(out.meta_path, meta.dump(2) + "\n");
  }

  const auto bout_len = static_cast<std::size_t>(
      std::llround(cfg.bout_seconds * cfg.sample_rate_hz));
  const auto gap_len = static_cast<std::size_t>(
      std::llround(cfg.gap_seconds * cfg.sample_rate_hz));

  for (const SubjectSpec& spec : subjects) {
    for (std::size_t run = 1; run <= cfg.files_per_subject; ++run) {
      Rng rng(derive_seed(spec.seed, spec.subject_id + "-run-" +
                                          std::to_string(run)));
      // Bout order: every class appears the same number of times, shuffled.
      std::vector<int> bout_classes;
      for (std::size_t b = 0; b < cfg.bouts_per_class_per_file; ++b)
        for (std::size_t c = 0; c < n_classes; ++c)
          bout_classes.push_back(static_cast<int>(c));
      rng.shuffle(bout_classes);

      std::string text;
      std::vector<double> x(k);
      auto emit_row = [&](int label_code, int cls) {
        for (std::size_t j = 0; j < k; ++j) {
          const double proto = cls >= 0 ? spec.prototypes[cls][j] : 0.0;
          x[j] = proto + rng.normal(0.0, spec.sample_stddev);
        }
        apply_subject_transform(spec, x);
        for (std::size_t j = 0; j < k; ++j) {
          if (cfg.missing_rate > 0 && rng.uniform() < cfg.missing_rate)
            text += "NaN ";
          else
            text += format_double(x[j]) + " ";
        }
        text += std::to_string(label_code) + "\n";
      };

      for (std::size_t b = 0; b < bout_classes.size(); ++b) {
        if (b > 0)
          for (std::size_t i = 0; i < gap_len; ++i) emit_row(0, -1);
        const int cls = bout_classes[b];
        for (std::size_t i = 0; i < bout_len; ++i) emit_row(cls + 1, cls);
      }

      const std::string path =
          dir + "/" + spec.subject_id + "-adl" + std::to_string(run) + ".txt";
      atomic_write_file(path, text);
      out.data_files.push_back(path);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw dataset reader (inverse of the writer's layout)
// ---------------------------------------------------------------------------

struct RawDataset {
  double sample_rate_hz = 0.0;
  ChannelSpec channel_spec;
  LabelMap label_map;
  std::vector<SubjectFiles> subjects;
};

inline RawDataset read_raw_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  require<IoError>(fs::is_directory(dir), "dataset: no such directory " + dir);
  RawDataset ds;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir + "/dataset.json"));
    ds.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset: malformed dataset.json in " + dir + ": " +
                  e.what());
  }
  ds.channel_spec = parse_channel_spec(read_file(dir + "/channel.spec"));
  ds.label_map = parse_label_map(read_file(dir + "/labels.map"));

  std::vector<std::string> subject_ids;
  try {
    subject_ids = meta.at("subjects").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset: malformed subject list in " + dir + ": " +
                  e.what());
  }
  for (const std::string& id : subject_ids) {
    SubjectFiles sf;
    sf.subject_id = id;
    for (std::size_t run = 1;; ++run) {
      const fs::path path =
          fs::path(dir) / (id + "-adl" + std::to_string(run) + ".txt");
      if (!fs::exists(path)) break;
      sf.recordings.push_back(parse_recording(
          read_file(path.string()), ds.channel_spec, ds.label_map, id,
          id + "-adl" + std::to_string(run), ds.sample_rate_hz));
    }
    require<IoError>(!sf.recordings.empty(),
                     "dataset: no data files for subject " + id);
    ds.subjects.push_back(std::move(sf));
  }
  return ds;
}

}  // namespace sagan
