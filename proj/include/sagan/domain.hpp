// ============================================================================
// domain.hpp - the row-major Matrix used for window/feature tables and the
// Domain record (one subject's feature table plus labels and split role).
// ============================================================================

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sagan/common.hpp"

namespace sagan {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows_in) {
    Matrix m;
    m.rows = rows_in.size();
    m.cols = rows_in.empty() ? 0 : rows_in.front().size();
    m.values.reserve(m.rows * m.cols);
    for (const auto& r : rows_in) {
      require<PipelineError>(r.size() == m.cols,
                            "matrix: ragged rows (" + std::to_string(r.size()) +
                                " vs " + std::to_string(m.cols) + " columns)");
      m.values.insert(m.values.end(), r.begin(), r.end());
    }
    return m;
  }

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) {
    return {values.data() + r * cols, cols};
  }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }

  void append_row(std::span<const double> v) {
    if (rows == 0 && cols == 0) cols = v.size();
    require<PipelineError>(v.size() == cols,
                          "matrix: appended row has " +
                              std::to_string(v.size()) + " columns, expected " +
                              std::to_string(cols));
    values.insert(values.end(), v.begin(), v.end());
    ++rows;
  }

  bool empty() const { return rows == 0; }
};

enum class DomainRole { Source, Target, Validation, Test };

inline const char* domain_role_name(DomainRole r) {
  switch (r) {
    case DomainRole::Source: return "source";
    case DomainRole::Target: return "target";
    case DomainRole::Validation: return "validation";
    default: return "test";
  }
}

// One subject-and-split worth of projected feature vectors. labels is empty
// for unlabeled roles (a target train split).
struct Domain {
  Matrix features;
  std::vector<int> labels;
  std::string subject_id;
  DomainRole role = DomainRole::Source;

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  bool labeled() const { return !labels.empty(); }

  void validate() const {
    require<PipelineError>(
        labels.empty() || labels.size() == features.rows,
        "domain '" + subject_id + "': " + std::to_string(labels.size()) +
            " labels for " + std::to_string(features.rows) + " rows");
    if (role == DomainRole::Source || role == DomainRole::Validation ||
        role == DomainRole::Test)
      require<PipelineError>(labeled() || features.rows == 0,
                            "domain '" + subject_id + "': role " +
                                domain_role_name(role) + " requires labels");
  }
};

}  // namespace sagan
