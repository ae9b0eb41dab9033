#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace backtrack {

struct NodeId {
  int value = 0;
  auto operator<=>(const NodeId&) const = default;
};

struct NodeSpec {
  NodeId id;
  std::string name;
  Eigen::Index dim = 1;
  std::vector<NodeId> parents;
};

/// Directed graph over named, vector-valued nodes.
///
/// Construction checks that ids are unique and that parents refer to existing
/// nodes. Acyclicity is checked lazily by topological_order() so that
/// validate_scm() can report a cyclic wiring instead of throwing.
class CausalGraph {
 public:
  CausalGraph() = default;
  explicit CausalGraph(std::vector<NodeSpec> nodes);

  std::span<const NodeSpec> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  bool contains(NodeId id) const { return index_.count(id.value) != 0; }
  std::size_t index_of(NodeId id) const;
  const NodeSpec& node(NodeId id) const { return nodes_[index_of(id)]; }
  NodeId id_of(const std::string& name) const;
  std::optional<NodeId> find(const std::string& name) const;

  /// Nodes whose parent list contains `id`.
  std::vector<NodeId> children(NodeId id) const;
  /// `targets` plus every node with a directed path into one of them.
  std::vector<NodeId> ancestors_inclusive(std::span<const NodeId> targets) const;
  /// `sources` plus every node reachable from one of them.
  std::vector<NodeId> descendants_inclusive(std::span<const NodeId> sources) const;

  /// Copy of the graph with the edge `from -> to` replaced by `to -> from`.
  CausalGraph with_reversed_edge(NodeId from, NodeId to) const;

 private:
  std::vector<NodeSpec> nodes_;
  std::unordered_map<int, std::size_t> index_;
};

/// Kahn's algorithm; ready nodes are released in increasing id order.
/// Throws CyclicGraph if no order exists.
std::vector<NodeId> topological_order(const CausalGraph& graph);

/// Offsets of per-node blocks inside a flat vector.
class BlockLayout {
 public:
  struct Block {
    NodeId node;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
  };

  BlockLayout() = default;
  /// Blocks are laid out contiguously in the order given.
  BlockLayout(std::span<const NodeId> nodes, std::span<const Eigen::Index> sizes);

  Eigen::Index total_size() const { return total_; }
  std::span<const Block> blocks() const { return blocks_; }
  const Block& block(NodeId id) const;
  bool contains(NodeId id) const { return index_.count(id.value) != 0; }
  /// Dimension of the concatenation of the given blocks.
  Eigen::Index size_of(std::span<const NodeId> ids) const;

  bool operator==(const BlockLayout& other) const;

 private:
  std::vector<Block> blocks_;
  std::unordered_map<int, std::size_t> index_;
  Eigen::Index total_ = 0;
};

using LayoutPtr = std::shared_ptr<const BlockLayout>;

/// A flat real vector partitioned into per-node blocks.
class StructuredVector {
 public:
  StructuredVector() = default;
  StructuredVector(LayoutPtr layout, Eigen::VectorXd values);
  static StructuredVector zeros(LayoutPtr layout);

  const BlockLayout& layout() const { return *layout_; }
  const LayoutPtr& layout_ptr() const { return layout_; }

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  Eigen::Index size() const { return values_.size(); }

  Eigen::VectorBlock<const Eigen::VectorXd> block(NodeId id) const;
  Eigen::VectorBlock<Eigen::VectorXd> block(NodeId id);

  /// Concatenation of the blocks of `ids`, in the order given.
  Eigen::VectorXd extract(std::span<const NodeId> ids) const;
  /// Inverse of extract(): writes `packed` into the blocks of `ids`.
  void assign(std::span<const NodeId> ids, const Eigen::Ref<const Eigen::VectorXd>& packed);

 private:
  LayoutPtr layout_;
  Eigen::VectorXd values_;
};

}  // namespace backtrack
