// ============================================================================
// pipeline.hpp - raw recordings to windowed PCA feature domains:
// imputation, range normalization, sliding-window segmentation, PCA fit and
// projection, text ingestion, and per-subject split assembly.
// ============================================================================

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sagan/common.hpp"
#include "sagan/domain.hpp"

namespace sagan {

inline constexpr int kNullLabel = -1;

// ===========================================================================
// Raw recordings
// ===========================================================================

struct RawRecording {
  Matrix samples;  // [time, channels]; NaN marks a missing cell
  std::vector<int> labels;  // per sample; kNullLabel where unannotated
  std::vector<std::pair<double, double>> channel_ranges;
  double sample_rate_hz = 30.0;
  std::string subject_id;
  std::string file_id;

  std::size_t time() const { return samples.rows; }
  std::size_t channels() const { return samples.cols; }

  void validate() const {
    require<PipelineError>(labels.size() == samples.rows,
                           "recording " + subject_id + "/" + file_id + ": " +
                               std::to_string(labels.size()) + " labels for " +
                               std::to_string(samples.rows) + " samples");
    require<PipelineError>(channel_ranges.size() == samples.cols,
                           "recording " + subject_id + "/" + file_id + ": " +
                               std::to_string(channel_ranges.size()) +
                               " channel ranges for " +
                               std::to_string(samples.cols) + " channels");
    require<PipelineError>(sample_rate_hz > 0,
                           "recording: sample rate must be positive");
  }
};

// Replaces every missing cell by its channel's mean over observed cells.
inline RawRecording impute_missing(const RawRecording& rec) {
  rec.validate();
  RawRecording out = rec;
  for (std::size_t c = 0; c < rec.channels(); ++c) {
    double sum = 0.0;
    std::size_t observed = 0;
    for (std::size_t t = 0; t < rec.time(); ++t) {
      const double v = rec.samples.at(t, c);
      if (!std::isnan(v)) {
        sum += v;
        ++observed;
      }
    }
    require<PipelineError>(observed > 0,
                           "impute: channel " + std::to_string(c) +
                               " of recording " + rec.subject_id + "/" +
                               rec.file_id + " has no observed values");
    if (observed == rec.time()) continue;
    const double mean = sum / static_cast<double>(observed);
    for (std::size_t t = 0; t < rec.time(); ++t)
      if (std::isnan(out.samples.at(t, c))) out.samples.at(t, c) = mean;
  }
  return out;
}

// Clips each channel to its declared range, then maps [min, max] to [-1, 1].
inline RawRecording normalize(const RawRecording& rec) {
  rec.validate();
  RawRecording out = rec;
  for (std::size_t c = 0; c < rec.channels(); ++c) {
    const auto [lo, hi] = rec.channel_ranges[c];
    require<PipelineError>(lo < hi, "normalize: channel " + std::to_string(c) +
                                        " has min " + format_double(lo) +
                                        " >= max " + format_double(hi));
    for (std::size_t t = 0; t < rec.time(); ++t) {
      const double v = rec.samples.at(t, c);
      require<PipelineError>(!std::isnan(v),
                             "normalize: missing value at sample " +
                                 std::to_string(t) + ", channel " +
                                 std::to_string(c) + "; impute first");
      const double clipped = std::clamp(v, lo, hi);
      out.samples.at(t, c) = 2.0 * (clipped - lo) / (hi - lo) - 1.0;
    }
  }
  return out;
}

// ===========================================================================
// Segmentation
// ===========================================================================

struct WindowSet {
  Matrix windows;  // [n_windows, window_len * channels], sample-major
  std::vector<int> labels;
  std::size_t window_len = 0;
  std::size_t stride = 0;
  bool too_short = false;  // recording shorter than one window
};

inline std::size_t segment_window_len(double window_seconds,
                                      double sample_rate_hz) {
  return static_cast<std::size_t>(std::llround(window_seconds * sample_rate_hz));
}

inline std::size_t segment_stride(std::size_t window_len, double overlap) {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(window_len) * (1.0 - overlap)));
}

inline std::size_t segment_count(std::size_t time, std::size_t window_len,
                                 std::size_t stride) {
  if (time < window_len) return 0;
  return (time - window_len) / stride + 1;
}

// Majority label among annotated samples; ties break toward the lower class
// id; returns kNullLabel when every sample is unannotated.
inline int majority_label(const std::vector<int>& labels, std::size_t begin,
                          std::size_t len) {
  std::map<int, std::size_t> counts;
  for (std::size_t i = begin; i < begin + len; ++i)
    if (labels[i] != kNullLabel) ++counts[labels[i]];
  if (counts.empty()) return kNullLabel;
  int best = kNullLabel;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts)
    if (count > best_count) {  // map iterates ascending, so ties keep the
      best = label;            // lower id
      best_count = count;
    }
  return best;
}

inline WindowSet segment(const RawRecording& rec, double window_seconds,
                         double overlap) {
  rec.validate();
  require<PipelineError>(overlap >= 0.0 && overlap < 1.0,
                         "segment: overlap must lie in [0,1), got " +
                             format_double(overlap));
  require<PipelineError>(window_seconds > 0,
                         "segment: window length must be positive");
  WindowSet out;
  out.window_len = segment_window_len(window_seconds, rec.sample_rate_hz);
  require<PipelineError>(out.window_len >= 1,
                         "segment: window of " + format_double(window_seconds) +
                             " s at " + format_double(rec.sample_rate_hz) +
                             " Hz rounds to zero samples");
  out.stride = segment_stride(out.window_len, overlap);
  require<PipelineError>(out.stride >= 1,
                         "segment: stride rounds to zero (overlap " +
                             format_double(overlap) + " too high for window of " +
                             std::to_string(out.window_len) + " samples)");
  const std::size_t C = rec.channels();
  out.windows.cols = out.window_len * C;
  if (rec.time() < out.window_len) {
    out.too_short = true;
    return out;
  }
  const std::size_t n = segment_count(rec.time(), out.window_len, out.stride);
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t start = w * out.stride;
    const int label = majority_label(rec.labels, start, out.window_len);
    if (label == kNullLabel) continue;  // fully unannotated window
    out.labels.push_back(label);
    out.windows.values.insert(
        out.windows.values.end(), rec.samples.values.begin() + start * C,
        rec.samples.values.begin() + (start + out.window_len) * C);
    ++out.windows.rows;
  }
  return out;
}

// ===========================================================================
// PCA
// ===========================================================================

struct FeatureSpace {
  std::vector<double> mean;  // [d_raw]
  Matrix components;         // [k, d_raw], orthonormal rows
  std::vector<double> explained_variance;  // [k], non-increasing

  std::size_t d_raw() const { return mean.size(); }
  std::size_t k() const { return components.rows; }
};

namespace detail {

// Cyclic Jacobi eigensolver for a symmetric matrix (row-major, size m).
// On return `a` holds the eigenvalues on its diagonal and `v` the
// eigenvectors as columns (v[i*m+j] = component i of eigenvector j).
inline void jacobi_eigen(std::vector<double>& a, std::vector<double>& v,
                         std::size_t m) {
  v.assign(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) v[i * m + i] = 1.0;
  if (m < 2) return;
  double frob = 0.0;
  for (double x : a) frob += x * x;
  const double tol = std::max(1e-300, 1e-26 * frob);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t q = p + 1; q < m; ++q) off += 2 * a[p * m + q] * a[p * m + q];
    if (off <= tol) break;
    for (std::size_t p = 0; p < m - 1; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        const double apq = a[p * m + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * m + q] - a[p * m + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = a[i * m + p], aiq = a[i * m + q];
          a[i * m + p] = c * aip - s * aiq;
          a[i * m + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < m; ++i) {
          const double api = a[p * m + i], aqi = a[q * m + i];
          a[p * m + i] = c * api - s * aqi;
          a[q * m + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < m; ++i) {
          const double vip = v[i * m + p], viq = v[i * m + q];
          v[i * m + p] = c * vip - s * viq;
          v[i * m + q] = s * vip + c * viq;
        }
      }
    }
  }
}

// Flips each component row so its largest-magnitude coordinate is positive
// (first such coordinate on magnitude ties).
inline void apply_sign_convention(Matrix& components) {
  for (std::size_t r = 0; r < components.rows; ++r) {
    auto row = components.row(r);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
      if (std::abs(row[i]) > std::abs(row[arg])) arg = i;
    if (row[arg] < 0.0)
      for (double& x : row) x = -x;
  }
}

inline void modified_gram_schmidt(Matrix& basis) {
  // rows of `basis` orthonormalized in place
  for (std::size_t r = 0; r < basis.rows; ++r) {
    auto row = basis.row(r);
    for (std::size_t p = 0; p < r; ++p) {
      auto prev = basis.row(p);
      double dot = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) dot += row[i] * prev[i];
      for (std::size_t i = 0; i < row.size(); ++i) row[i] -= dot * prev[i];
    }
    double norm = 0.0;
    for (double x : row) norm += x * x;
    norm = std::sqrt(norm);
    require<PipelineError>(norm > 1e-12,
                           "pca: basis became rank deficient during "
                           "orthogonalization");
    for (double& x : row) x /= norm;
  }
}

}  // namespace detail

enum class PcaMethod { Auto, Dense, Subspace };

inline FeatureSpace fit_pca_with_method(const Matrix& windows, std::size_t k,
                                        PcaMethod method) {
  const std::size_t n = windows.rows, d = windows.cols;
  require<PipelineError>(k >= 1, "pca: k must be at least 1");
  require<PipelineError>(n > k, "pca: need more than k=" + std::to_string(k) +
                                    " rows, got " + std::to_string(n));
  require<PipelineError>(k <= std::min(n - 1, d),
                         "pca: k=" + std::to_string(k) + " exceeds min(n-1, d) = " +
                             std::to_string(std::min(n - 1, d)));

  FeatureSpace space;
  space.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = windows.row(i);
    for (std::size_t j = 0; j < d; ++j) space.mean[j] += row[j];
  }
  for (double& m : space.mean) m /= static_cast<double>(n);

  Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centered.at(i, j) = windows.at(i, j) - space.mean[j];
  const double denom = static_cast<double>(n - 1);

  if (method == PcaMethod::Auto)
    method = std::min(n, d) <= 512 ? PcaMethod::Dense : PcaMethod::Subspace;

  space.components = Matrix(k, d);
  space.explained_variance.assign(k, 0.0);

  if (method == PcaMethod::Dense) {
    if (d <= n) {
      // covariance route: d x d eigenproblem
      std::vector<double> cov(d * d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        auto row = centered.row(i);
        for (std::size_t a = 0; a < d; ++a)
          for (std::size_t b = a; b < d; ++b) cov[a * d + b] += row[a] * row[b];
      }
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
          cov[a * d + b] /= denom;
          cov[b * d + a] = cov[a * d + b];
        }
      std::vector<double> vecs;
      detail::jacobi_eigen(cov, vecs, d);
      std::vector<std::size_t> order(d);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return cov[x * d + x] > cov[y * d + y];
      });
      for (std::size_t r = 0; r < k; ++r) {
        const std::size_t j = order[r];
        space.explained_variance[r] = std::max(0.0, cov[j * d + j]);
        for (std::size_t i = 0; i < d; ++i)
          space.components.at(r, i) = vecs[i * d + j];
      }
    } else {
      // Gram route: n x n eigenproblem, components recovered through X^T u
      std::vector<double> gram(n * n, 0.0);
      for (std::size_t a = 0; a < n; ++a) {
        auto ra = centered.row(a);
        for (std::size_t b = a; b < n; ++b) {
          auto rb = centered.row(b);
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += ra[j] * rb[j];
          gram[a * n + b] = dot / denom;
          gram[b * n + a] = gram[a * n + b];
        }
      }
      std::vector<double> vecs;
      detail::jacobi_eigen(gram, vecs, n);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return gram[x * n + x] > gram[y * n + y];
      });
      for (std::size_t r = 0; r < k; ++r) {
        const std::size_t j = order[r];
        space.explained_variance[r] = std::max(0.0, gram[j * n + j]);
        auto comp = space.components.row(r);
        for (std::size_t i = 0; i < n; ++i) {
          auto row = centered.row(i);
          const double u = vecs[i * n + j];
          for (std::size_t col = 0; col < d; ++col) comp[col] += u * row[col];
        }
        double norm = 0.0;
        for (double x : comp) norm += x * x;
        norm = std::sqrt(norm);
        require<PipelineError>(norm > 1e-12,
                               "pca: data rank below requested k=" +
                                   std::to_string(k));
        for (double& x : comp) x /= norm;
      }
    }
  } else {
    // Block orthogonal iteration on the implicit covariance operator
    // v -> X^T (X v) / (n-1); never materializes the d x d matrix.
    const std::size_t block = std::min(d, k + 8);
    Matrix basis(block, d);
    Rng init_rng(derive_seed(0x70CA5EEDull, (n << 20) ^ (d << 4) ^ k));
    for (double& x : basis.values) x = init_rng.normal();
    detail::modified_gram_schmidt(basis);
    std::vector<double> prev_ritz(block, 0.0);
    Matrix applied(block, d);
    std::vector<double> xw(n);
    for (int iter = 0; iter < 2000; ++iter) {
      for (std::size_t r = 0; r < block; ++r) {
        auto vrow = basis.row(r);
        for (std::size_t i = 0; i < n; ++i) {
          auto xrow = centered.row(i);
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += xrow[j] * vrow[j];
          xw[i] = dot;
        }
        auto arow = applied.row(r);
        std::fill(arow.begin(), arow.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          auto xrow = centered.row(i);
          const double wgt = xw[i] / denom;
          for (std::size_t j = 0; j < d; ++j) arow[j] += wgt * xrow[j];
        }
      }
      std::vector<double> ritz(block);
      for (std::size_t r = 0; r < block; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          dot += basis.at(r, j) * applied.at(r, j);
        ritz[r] = dot;
      }
      basis = applied;
      detail::modified_gram_schmidt(basis);
      double shift = 0.0, scale = 0.0;
      for (std::size_t r = 0; r < block; ++r) {
        shift = std::max(shift, std::abs(ritz[r] - prev_ritz[r]));
        scale = std::max(scale, std::abs(ritz[r]));
      }
      prev_ritz = ritz;
      if (iter > 4 && shift <= 1e-12 * std::max(1.0, scale)) break;
    }
    // Rayleigh-Ritz: diagonalize the projected operator and rotate
    Matrix xv(n, block);
    for (std::size_t i = 0; i < n; ++i) {
      auto xrow = centered.row(i);
      for (std::size_t r = 0; r < block; ++r) {
        double dot = 0.0;
        auto vrow = basis.row(r);
        for (std::size_t j = 0; j < d; ++j) dot += xrow[j] * vrow[j];
        xv.at(i, r) = dot;
      }
    }
    std::vector<double> small(block * block, 0.0);
    for (std::size_t a = 0; a < block; ++a)
      for (std::size_t b = a; b < block; ++b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += xv.at(i, a) * xv.at(i, b);
        small[a * block + b] = dot / denom;
        small[b * block + a] = small[a * block + b];
      }
    std::vector<double> q;
    detail::jacobi_eigen(small, q, block);
    std::vector<std::size_t> order(block);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return small[x * block + x] > small[y * block + y];
    });
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = order[r];
      space.explained_variance[r] = std::max(0.0, small[j * block + j]);
      auto comp = space.components.row(r);
      for (std::size_t b = 0; b < block; ++b) {
        const double w = q[b * block + j];
        auto vrow = basis.row(b);
        for (std::size_t col = 0; col < d; ++col) comp[col] += w * vrow[col];
      }
      double norm = 0.0;
      for (double x : comp) norm += x * x;
      norm = std::sqrt(norm);
      require<PipelineError>(norm > 1e-12, "pca: subspace iteration collapsed");
      for (double& x : comp) x /= norm;
    }
  }

  detail::apply_sign_convention(space.components);
  for (std::size_t r = 0; r + 1 < k; ++r)
    require<PipelineError>(
        space.explained_variance[r] >= space.explained_variance[r + 1] - 1e-9,
        "pca: explained variance not sorted");
  return space;
}

inline FeatureSpace fit_pca(const Matrix& windows, std::size_t k) {
  return fit_pca_with_method(windows, k, PcaMethod::Auto);
}

inline Matrix project(const FeatureSpace& space, const Matrix& windows) {
  require<PipelineError>(windows.cols == space.d_raw(),
                         "project: windows have " +
                             std::to_string(windows.cols) +
                             " columns but the feature space expects " +
                             std::to_string(space.d_raw()));
  Matrix out(windows.rows, space.k());
  for (std::size_t i = 0; i < windows.rows; ++i) {
    auto row = windows.row(i);
    for (std::size_t r = 0; r < space.k(); ++r) {
      auto comp = space.components.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < windows.cols; ++j)
        dot += (row[j] - space.mean[j]) * comp[j];
      out.at(i, r) = dot;
    }
  }
  return out;
}

// Inverse map back to raw window coordinates (exact when k = d_raw).
inline Matrix reconstruct(const FeatureSpace& space, const Matrix& features) {
  require<PipelineError>(features.cols == space.k(),
                         "reconstruct: features have " +
                             std::to_string(features.cols) +
                             " columns but the space has k=" +
                             std::to_string(space.k()));
  Matrix out(features.rows, space.d_raw());
  for (std::size_t i = 0; i < features.rows; ++i) {
    auto orow = out.row(i);
    for (std::size_t j = 0; j < space.d_raw(); ++j) orow[j] = space.mean[j];
    for (std::size_t r = 0; r < space.k(); ++r) {
      const double f = features.at(i, r);
      auto comp = space.components.row(r);
      for (std::size_t j = 0; j < space.d_raw(); ++j) orow[j] += f * comp[j];
    }
  }
  return out;
}

// ===========================================================================
// Text ingestion
// ===========================================================================
// Data files: whitespace-separated numeric columns, one sample per line,
// "NaN" marks a missing cell. A channel-spec sidecar gives the label column
// and per-channel ranges; a label map translates raw activity codes to
// contiguous class ids.

struct ChannelSpec {
  std::size_t label_column = 0;  // 1-based column in the data file
  // Either positional (data_columns empty: every non-label column in file
  // order) or explicit 1-based column selection, one per range entry.
  std::vector<std::size_t> data_columns;
  std::vector<std::pair<double, double>> ranges;
};

struct LabelMap {
  std::unordered_map<long long, int> code_to_class;  // kNullLabel allowed
  int n_classes = 0;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' ||
                               line[i] == '\r'))
      ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' &&
           line[j] != '\r')
      ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool is_nan_token(std::string_view tok) {
  if (tok.size() != 3) return false;
  auto lower = [](char c) { return static_cast<char>(std::tolower(c)); };
  return lower(tok[0]) == 'n' && lower(tok[1]) == 'a' && lower(tok[2]) == 'n';
}

inline double parse_number(std::string_view tok, std::size_t line_no,
                           std::size_t col_no) {
  if (is_nan_token(tok)) return std::numeric_limits<double>::quiet_NaN();
  double value = 0.0;
  const auto [ptr, ec] =
      std::from_chars(tok.data(), tok.data() + tok.size(), value);
  require<PipelineError>(ec == std::errc{} && ptr == tok.data() + tok.size(),
                         "parse: line " + std::to_string(line_no) + " column " +
                             std::to_string(col_no) + ": '" + std::string(tok) +
                             "' is not a number");
  return value;
}

}  // namespace detail

// Channel-spec format, one directive per line ('#' comments):
//   label_column <1-based index>
//   <min> <max>                 positional channel range, or
//   <column> <min> <max>        explicit 1-based data column with its range
inline ChannelSpec parse_channel_spec(const std::string& text) {
  ChannelSpec spec;
  bool saw_label = false;
  bool positional = false, explicit_cols = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "label_column") {
      require<PipelineError>(toks.size() == 2,
                             "channel spec line " + std::to_string(line_no) +
                                 ": label_column needs one value");
      spec.label_column = static_cast<std::size_t>(
          detail::parse_number(toks[1], line_no, 2));
      require<PipelineError>(spec.label_column >= 1,
                             "channel spec: label column index is 1-based");
      saw_label = true;
      continue;
    }
    if (toks.size() == 2) {
      positional = true;
      spec.ranges.emplace_back(detail::parse_number(toks[0], line_no, 1),
                               detail::parse_number(toks[1], line_no, 2));
    } else if (toks.size() == 3) {
      explicit_cols = true;
      spec.data_columns.push_back(static_cast<std::size_t>(
          detail::parse_number(toks[0], line_no, 1)));
      spec.ranges.emplace_back(detail::parse_number(toks[1], line_no, 2),
                               detail::parse_number(toks[2], line_no, 3));
    } else {
      throw PipelineError("channel spec line " + std::to_string(line_no) +
                          ": expected 'min max' or 'column min max'");
    }
  }
  require<PipelineError>(saw_label, "channel spec: missing label_column");
  require<PipelineError>(!(positional && explicit_cols),
                         "channel spec: cannot mix positional and explicit "
                         "column entries");
  require<PipelineError>(!spec.ranges.empty(),
                         "channel spec: no channel ranges given");
  for (std::size_t c = 0; c < spec.ranges.size(); ++c)
    require<PipelineError>(spec.ranges[c].first < spec.ranges[c].second,
                           "channel spec: channel " + std::to_string(c) +
                               " has min >= max");
  return spec;
}

// Label-map format: '<raw code> <class id>' per line; class ids must cover
// 0..K-1; a class id of -1 maps the code to the null (dropped) label.
inline LabelMap parse_label_map(const std::string& text) {
  LabelMap map;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<int> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    require<PipelineError>(toks.size() == 2,
                           "label map line " + std::to_string(line_no) +
                               ": expected '<code> <class>'");
    const long long code = static_cast<long long>(
        detail::parse_number(toks[0], line_no, 1));
    const int cls =
        static_cast<int>(detail::parse_number(toks[1], line_no, 2));
    require<PipelineError>(!map.code_to_class.count(code),
                           "label map: duplicate code " + std::to_string(code));
    require<PipelineError>(cls >= kNullLabel,
                           "label map: class id " + std::to_string(cls) +
                               " below -1");
    map.code_to_class[code] = cls;
    if (cls != kNullLabel) seen.push_back(cls);
  }
  require<PipelineError>(!seen.empty(), "label map: no classes defined");
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  require<PipelineError>(
      seen.front() == 0 && seen.back() == static_cast<int>(seen.size()) - 1,
      "label map: class ids must be contiguous 0..K-1");
  map.n_classes = static_cast<int>(seen.size());
  return map;
}

inline RawRecording parse_recording(const std::string& text,
                                    const ChannelSpec& spec,
                                    const LabelMap& labels,
                                    const std::string& subject_id,
                                    const std::string& file_id,
                                    double sample_rate_hz) {
  RawRecording rec;
  rec.subject_id = subject_id;
  rec.file_id = file_id;
  rec.sample_rate_hz = sample_rate_hz;
  rec.channel_ranges = spec.ranges;
  const std::size_t n_channels = spec.ranges.size();
  rec.samples.cols = n_channels;

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> row(n_channels);
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    require<PipelineError>(spec.label_column <= toks.size(),
                           "parse: line " + std::to_string(line_no) + " has " +
                               std::to_string(toks.size()) +
                               " columns but the label column is " +
                               std::to_string(spec.label_column));
    if (spec.data_columns.empty()) {
      require<PipelineError>(toks.size() == n_channels + 1,
                             "parse: line " + std::to_string(line_no) + " has " +
                                 std::to_string(toks.size()) +
                                 " columns, expected " +
                                 std::to_string(n_channels + 1));
      std::size_t c = 0;
      for (std::size_t col = 1; col <= toks.size(); ++col) {
        if (col == spec.label_column) continue;
        row[c++] = detail::parse_number(toks[col - 1], line_no, col);
      }
    } else {
      for (std::size_t c = 0; c < n_channels; ++c) {
        const std::size_t col = spec.data_columns[c];
        require<PipelineError>(col >= 1 && col <= toks.size(),
                               "parse: line " + std::to_string(line_no) +
                                   ": data column " + std::to_string(col) +
                                   " out of range");
        row[c] = detail::parse_number(toks[col - 1], line_no, col);
      }
    }
    const std::string_view label_tok = toks[spec.label_column - 1];
    const long long code = static_cast<long long>(
        detail::parse_number(label_tok, line_no, spec.label_column));
    const auto it = labels.code_to_class.find(code);
    require<PipelineError>(it != labels.code_to_class.end(),
                           "parse: row " + std::to_string(line_no) +
                               ": unknown label code " + std::to_string(code));
    rec.labels.push_back(it->second);
    rec.samples.append_row(row);
  }
  rec.validate();
  return rec;
}

// ===========================================================================
// Split assembly
// ===========================================================================

struct SubjectFiles {
  std::string subject_id;
  std::vector<RawRecording> recordings;  // file_id ends in the ADL number
};

struct SubjectDomains {
  std::string subject_id;
  Domain train, validation, test;
};

struct AssembleConfig {
  double window_seconds = 3.0;
  double overlap = 0.7;
  std::size_t pca_dim = 88;
  PcaMethod pca_method = PcaMethod::Auto;
};

struct AssembledDataset {
  FeatureSpace space;
  std::vector<SubjectDomains> subjects;
  int n_classes = 0;
};

namespace detail {

inline int adl_index(const std::string& file_id) {
  std::size_t end = file_id.size();
  while (end > 0 && std::isdigit(static_cast<unsigned char>(file_id[end - 1])))
    --end;
  require<PipelineError>(end < file_id.size(),
                         "assemble: file id '" + file_id +
                             "' does not end in a run number");
  const int idx = std::stoi(file_id.substr(end));
  require<PipelineError>(idx >= 1 && idx <= 5,
                         "assemble: file id '" + file_id +
                             "' has run number outside 1..5");
  return idx;
}

}  // namespace detail

// Builds per-subject {train, validation, test} feature domains: runs 1-3
// train, run 4 validation, run 5 test. One shared FeatureSpace is fitted on
// the union of every subject's train windows and projects all splits.
inline AssembledDataset assemble_domains(const std::vector<SubjectFiles>& subjects,
                                         const AssembleConfig& cfg = {}) {
  require<PipelineError>(!subjects.empty(), "assemble: empty file list");

  struct SubjectWindows {
    std::string subject_id;
    Matrix train, validation, test;
    std::vector<int> train_labels, validation_labels, test_labels;
  };
  std::vector<SubjectWindows> prepared;
  Matrix pca_pool;
  int max_label = -1;

  for (const SubjectFiles& subject : subjects) {
    require<PipelineError>(!subject.recordings.empty(),
                           "assemble: subject '" + subject.subject_id +
                               "' has no recordings");
    SubjectWindows sw;
    sw.subject_id = subject.subject_id;
    for (const RawRecording& raw : subject.recordings) {
      const int run = detail::adl_index(raw.file_id);
      const WindowSet ws =
          segment(normalize(impute_missing(raw)), cfg.window_seconds,
                  cfg.overlap);
      Matrix* dst = nullptr;
      std::vector<int>* dst_labels = nullptr;
      if (run <= 3) {
        dst = &sw.train;
        dst_labels = &sw.train_labels;
      } else if (run == 4) {
        dst = &sw.validation;
        dst_labels = &sw.validation_labels;
      } else {
        dst = &sw.test;
        dst_labels = &sw.test_labels;
      }
      for (std::size_t i = 0; i < ws.windows.rows; ++i) {
        dst->append_row(ws.windows.row(i));
        dst_labels->push_back(ws.labels[i]);
        max_label = std::max(max_label, ws.labels[i]);
      }
    }
    require<PipelineError>(!sw.train.empty(),
                           "assemble: subject '" + subject.subject_id +
                               "' has no labeled training windows");
    for (std::size_t i = 0; i < sw.train.rows; ++i)
      pca_pool.append_row(sw.train.row(i));
    prepared.push_back(std::move(sw));
  }

  AssembledDataset out;
  out.n_classes = max_label + 1;
  out.space = fit_pca_with_method(pca_pool, cfg.pca_dim, cfg.pca_method);

  for (SubjectWindows& sw : prepared) {
    SubjectDomains sd;
    sd.subject_id = sw.subject_id;
    auto make_domain = [&](Matrix& windows, std::vector<int>& labels,
                           DomainRole role) {
      Domain d;
      d.subject_id = sw.subject_id;
      d.role = role;
      if (!windows.empty()) {
        d.features = project(out.space, windows);
      } else {
        d.features.cols = cfg.pca_dim;
      }
      d.labels = std::move(labels);
      d.validate();
      return d;
    };
    sd.train = make_domain(sw.train, sw.train_labels, DomainRole::Source);
    sd.validation = make_domain(sw.validation, sw.validation_labels,
                                DomainRole::Validation);
    sd.test = make_domain(sw.test, sw.test_labels, DomainRole::Test);
    out.subjects.push_back(std::move(sd));
  }
  return out;
}

// Copy with labels removed, as handed to the trainer for the target side.
inline Domain as_unlabeled_target(const Domain& d) {
  Domain out = d;
  out.labels.clear();
  out.role = DomainRole::Target;
  return out;
}

}  // namespace sagan
