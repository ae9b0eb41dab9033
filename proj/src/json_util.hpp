#pragma once

#include "backtrack/errors.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace backtrack::detail {

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  if (j.is_number()) return Eigen::VectorXd::Constant(1, j.get<double>());
  if (!j.is_array()) throw FormatError("expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

// Row-major nested arrays.
inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

/// `rows` or `cols` of -1 means "take it from the data". An empty array with
/// known dimensions yields a rows x cols matrix (cols may be zero).
inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index rows,
                                        Eigen::Index cols) {
  if (!j.is_array()) throw FormatError("expected a nested numeric array");
  const auto r = static_cast<Eigen::Index>(j.size());
  if (rows >= 0 && r != rows) throw DimensionMismatch("matrix has the wrong number of rows");
  Eigen::Index c = cols;
  if (r > 0) {
    const auto first = static_cast<Eigen::Index>(j[0].size());
    if (c >= 0 && first != c) throw DimensionMismatch("matrix has the wrong number of columns");
    c = first;
  }
  Eigen::MatrixXd m(r, c < 0 ? 0 : c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
      throw DimensionMismatch("ragged matrix rows");
    }
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

}  // namespace backtrack::detail
