#pragma once

#include "backtrack/graph.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace backtrack {

/// Column-named numeric table. A node `name` of dimension 1 occupies the
/// column `name`; a vector node occupies `name[0]`, `name[1]`, ...
struct Dataset {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;  // rows x columns

  Eigen::Index rows() const { return values.rows(); }
  /// Throws FormatError if the column is absent.
  Eigen::Index column(const std::string& name) const;
  /// Column indices holding `node`.
  std::vector<Eigen::Index> node_columns(const NodeSpec& node) const;
  /// rows x dim block of a node.
  Eigen::MatrixXd node_values(const NodeSpec& node) const;
  /// Concatenation of node blocks, in the order given.
  Eigen::MatrixXd nodes_values(const CausalGraph& graph, std::span<const NodeId> nodes) const;
  /// Subset of rows.
  Dataset take(std::span<const Eigen::Index> rows) const;
};

std::vector<std::string> column_names(const NodeSpec& node);

/// Writes a header row and full-precision values.
void write_csv(const Dataset& data, const std::filesystem::path& path);
/// Throws IoFailure, FormatError, EmptyDataset.
Dataset read_csv(const std::filesystem::path& path);

/// Shortest decimal that round-trips the double.
std::string format_double(double value);

}  // namespace backtrack
