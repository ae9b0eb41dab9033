#include "backtrack/graph.hpp"

#include "backtrack/errors.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>

namespace backtrack {

CausalGraph::CausalGraph(std::vector<NodeSpec> nodes) : nodes_(std::move(nodes)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].dim < 1) {
      throw InvalidGraph("node '" + nodes_[i].name + "' has dimension < 1");
    }
    if (!index_.emplace(nodes_[i].id.value, i).second) {
      throw InvalidGraph("duplicate node id " + std::to_string(nodes_[i].id.value));
    }
  }
  for (const auto& node : nodes_) {
    std::set<int> seen;
    for (const auto& parent : node.parents) {
      if (!contains(parent)) {
        throw InvalidGraph("node '" + node.name + "' refers to unknown parent id " +
                           std::to_string(parent.value));
      }
      if (!seen.insert(parent.value).second) {
        throw InvalidGraph("node '" + node.name + "' lists a parent twice");
      }
    }
  }
}

std::size_t CausalGraph::index_of(NodeId id) const {
  auto it = index_.find(id.value);
  if (it == index_.end()) {
    throw InvalidGraph("unknown node id " + std::to_string(id.value));
  }
  return it->second;
}

std::optional<NodeId> CausalGraph::find(const std::string& name) const {
  for (const auto& node : nodes_) {
    if (node.name == name) return node.id;
  }
  return std::nullopt;
}

NodeId CausalGraph::id_of(const std::string& name) const {
  if (auto id = find(name)) return *id;
  throw InvalidGraph("unknown node name '" + name + "'");
}

std::vector<NodeId> CausalGraph::children(NodeId id) const {
  std::vector<NodeId> out;
  for (const auto& node : nodes_) {
    if (std::find(node.parents.begin(), node.parents.end(), id) != node.parents.end()) {
      out.push_back(node.id);
    }
  }
  return out;
}

std::vector<NodeId> CausalGraph::ancestors_inclusive(std::span<const NodeId> targets) const {
  std::vector<bool> marked(nodes_.size(), false);
  std::vector<NodeId> stack(targets.begin(), targets.end());
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    std::size_t i = index_of(id);
    if (marked[i]) continue;
    marked[i] = true;
    for (const auto& parent : nodes_[i].parents) stack.push_back(parent);
  }
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (marked[i]) out.push_back(nodes_[i].id);
  }
  return out;
}

std::vector<NodeId> CausalGraph::descendants_inclusive(std::span<const NodeId> sources) const {
  std::vector<bool> marked(nodes_.size(), false);
  std::vector<NodeId> stack(sources.begin(), sources.end());
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    std::size_t i = index_of(id);
    if (marked[i]) continue;
    marked[i] = true;
    for (const auto& child : children(id)) stack.push_back(child);
  }
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (marked[i]) out.push_back(nodes_[i].id);
  }
  return out;
}

CausalGraph CausalGraph::with_reversed_edge(NodeId from, NodeId to) const {
  std::vector<NodeSpec> nodes = nodes_;
  auto& child = nodes[index_of(to)];
  auto it = std::find(child.parents.begin(), child.parents.end(), from);
  if (it == child.parents.end()) {
    std::ostringstream msg;
    msg << "no edge " << node(from).name << " -> " << node(to).name << " to reverse";
    throw InvalidGraph(msg.str());
  }
  child.parents.erase(it);
  nodes[index_of(from)].parents.push_back(to);
  return CausalGraph(std::move(nodes));
}

std::vector<NodeId> topological_order(const CausalGraph& graph) {
  const auto nodes = graph.nodes();
  std::vector<std::size_t> pending(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) pending[i] = nodes[i].parents.size();

  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (pending[i] == 0) ready.push(nodes[i].id);
  }

  std::vector<NodeId> order;
  order.reserve(nodes.size());
  while (!ready.empty()) {
    NodeId id = ready.top();
    ready.pop();
    order.push_back(id);
    for (const auto& child : graph.children(id)) {
      if (--pending[graph.index_of(child)] == 0) ready.push(child);
    }
  }
  if (order.size() != nodes.size()) {
    throw CyclicGraph("causal graph contains a directed cycle");
  }
  return order;
}

BlockLayout::BlockLayout(std::span<const NodeId> nodes, std::span<const Eigen::Index> sizes) {
  if (nodes.size() != sizes.size()) {
    throw DimensionMismatch("layout: node and size lists differ in length");
  }
  blocks_.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (sizes[i] < 0) throw DimensionMismatch("layout: negative block size");
    blocks_.push_back({nodes[i], total_, sizes[i]});
    if (!index_.emplace(nodes[i].value, i).second) {
      throw DimensionMismatch("layout: duplicate node id");
    }
    total_ += sizes[i];
  }
}

const BlockLayout::Block& BlockLayout::block(NodeId id) const {
  auto it = index_.find(id.value);
  if (it == index_.end()) {
    throw DimensionMismatch("layout has no block for node id " + std::to_string(id.value));
  }
  return blocks_[it->second];
}

Eigen::Index BlockLayout::size_of(std::span<const NodeId> ids) const {
  Eigen::Index total = 0;
  for (const auto& id : ids) total += block(id).size;
  return total;
}

bool BlockLayout::operator==(const BlockLayout& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].node != other.blocks_[i].node || blocks_[i].size != other.blocks_[i].size) {
      return false;
    }
  }
  return true;
}

StructuredVector::StructuredVector(LayoutPtr layout, Eigen::VectorXd values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw DimensionMismatch("structured vector without layout");
  if (values_.size() != layout_->total_size()) {
    throw DimensionMismatch("structured vector has " + std::to_string(values_.size()) +
                            " values, layout expects " + std::to_string(layout_->total_size()));
  }
}

StructuredVector StructuredVector::zeros(LayoutPtr layout) {
  const auto n = layout->total_size();
  return StructuredVector(std::move(layout), Eigen::VectorXd::Zero(n));
}

Eigen::VectorBlock<const Eigen::VectorXd> StructuredVector::block(NodeId id) const {
  const auto& b = layout_->block(id);
  return values_.segment(b.offset, b.size);
}

Eigen::VectorBlock<Eigen::VectorXd> StructuredVector::block(NodeId id) {
  const auto& b = layout_->block(id);
  return values_.segment(b.offset, b.size);
}

Eigen::VectorXd StructuredVector::extract(std::span<const NodeId> ids) const {
  Eigen::VectorXd out(layout_->size_of(ids));
  Eigen::Index pos = 0;
  for (const auto& id : ids) {
    const auto& b = layout_->block(id);
    out.segment(pos, b.size) = values_.segment(b.offset, b.size);
    pos += b.size;
  }
  return out;
}

void StructuredVector::assign(std::span<const NodeId> ids,
                              const Eigen::Ref<const Eigen::VectorXd>& packed) {
  if (packed.size() != layout_->size_of(ids)) {
    throw DimensionMismatch("assign: packed size does not match selected blocks");
  }
  Eigen::Index pos = 0;
  for (const auto& id : ids) {
    const auto& b = layout_->block(id);
    values_.segment(b.offset, b.size) = packed.segment(pos, b.size);
    pos += b.size;
  }
}

}  // namespace backtrack
