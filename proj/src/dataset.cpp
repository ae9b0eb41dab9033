#include "backtrack/dataset.hpp"

#include "backtrack/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace backtrack {

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw FormatError("cannot format number");
  return std::string(buf, end);
}

std::vector<std::string> column_names(const NodeSpec& node) {
  if (node.dim == 1) return {node.name};
  std::vector<std::string> out;
  for (Eigen::Index k = 0; k < node.dim; ++k) out.push_back(node.name + "[" + std::to_string(k) + "]");
  return out;
}

Eigen::Index Dataset::column(const std::string& name) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] == name) return static_cast<Eigen::Index>(c);
  }
  throw FormatError("dataset has no column '" + name + "'");
}

std::vector<Eigen::Index> Dataset::node_columns(const NodeSpec& node) const {
  std::vector<Eigen::Index> out;
  if (node.dim == 1) {
    // Scalars may also be written as name[0].
    for (const auto& name : {node.name, node.name + "[0]"}) {
      for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c] == name) return {static_cast<Eigen::Index>(c)};
      }
    }
  }
  for (const auto& name : column_names(node)) out.push_back(column(name));
  return out;
}

Eigen::MatrixXd Dataset::node_values(const NodeSpec& node) const {
  const auto cols = node_columns(node);
  Eigen::MatrixXd out(values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = values.col(cols[k]);
  return out;
}

Eigen::MatrixXd Dataset::nodes_values(const CausalGraph& graph, std::span<const NodeId> nodes) const {
  Eigen::Index width = 0;
  for (const auto& id : nodes) width += graph.node(id).dim;
  Eigen::MatrixXd out(values.rows(), width);
  Eigen::Index c = 0;
  for (const auto& id : nodes) {
    const auto& spec = graph.node(id);
    out.middleCols(c, spec.dim) = node_values(spec);
    c += spec.dim;
  }
  return out;
}

Dataset Dataset::take(std::span<const Eigen::Index> rows) const {
  Dataset out;
  out.columns = columns;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.values.row(static_cast<Eigen::Index>(r)) = values.row(rows[r]);
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open '" + path.string() + "' for writing");
  for (std::size_t c = 0; c < data.columns.size(); ++c) out << (c ? "," : "") << data.columns[c];
  out << '\n';
  for (Eigen::Index r = 0; r < data.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.values.cols(); ++c) out << (c ? "," : "") << format_double(data.values(r, c));
    out << '\n';
  }
  if (!out) throw IoFailure("failed writing '" + path.string() + "'");
}

Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open '" + path.string() + "'");
  Dataset data;
  std::string line;
  if (!std::getline(in, line)) throw EmptyDataset("'" + path.string() + "' is empty");
  {
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) data.columns.push_back(cell);
  }
  std::vector<double> flat;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(row, cell, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw FormatError("'" + path.string() + "' row " + std::to_string(rows + 1) + ": bad number '" + cell + "'");
      }
      flat.push_back(v);
      ++count;
    }
    if (count != data.columns.size()) {
      throw FormatError("'" + path.string() + "' row " + std::to_string(rows + 1) + " has " +
                        std::to_string(count) + " fields, expected " + std::to_string(data.columns.size()));
    }
    ++rows;
  }
  if (rows == 0) throw EmptyDataset("'" + path.string() + "' has no data rows");
  const auto cols = static_cast<Eigen::Index>(data.columns.size());
  data.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), static_cast<Eigen::Index>(rows), cols);
  return data;
}

}  // namespace backtrack
