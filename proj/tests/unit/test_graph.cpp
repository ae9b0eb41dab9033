#include "backtrack/errors.hpp"
#include "backtrack/graph.hpp"

#include <gtest/gtest.h>

using namespace backtrack;

namespace {

std::vector<int> ids(const std::vector<NodeId>& v) {
  std::vector<int> out;
  for (const auto& id : v) out.push_back(id.value);
  return out;
}

}  // namespace

TEST(TopologicalOrder, ChainIsForced) {
  CausalGraph g({{NodeId{3}, "c", 1, {NodeId{2}}}, {NodeId{1}, "a", 1, {}}, {NodeId{2}, "b", 1, {NodeId{1}}}});
  EXPECT_EQ(ids(topological_order(g)), (std::vector<int>{1, 2, 3}));
}

TEST(TopologicalOrder, MorphoShape) {
  CausalGraph g({{NodeId{2}, "Img", 4, {NodeId{0}, NodeId{1}}},
                 {NodeId{1}, "I", 1, {NodeId{0}}},
                 {NodeId{0}, "T", 1, {}}});
  EXPECT_EQ(ids(topological_order(g)), (std::vector<int>{0, 1, 2}));
}

TEST(TopologicalOrder, TiesBrokenByNodeId) {
  CausalGraph g({{NodeId{5}, "e", 1, {}}, {NodeId{2}, "b", 1, {}}, {NodeId{9}, "z", 1, {NodeId{5}}},
                 {NodeId{4}, "d", 1, {}}});
  EXPECT_EQ(ids(topological_order(g)), (std::vector<int>{2, 4, 5, 9}));
  EXPECT_EQ(topological_order(g), topological_order(g));
}

TEST(TopologicalOrder, TwoCycleThrows) {
  CausalGraph g({{NodeId{1}, "a", 1, {NodeId{2}}}, {NodeId{2}, "b", 1, {NodeId{1}}}});
  EXPECT_THROW(topological_order(g), CyclicGraph);
}

TEST(CausalGraph, RejectsMalformedNodes) {
  EXPECT_THROW(CausalGraph({{NodeId{1}, "a", 1, {}}, {NodeId{1}, "b", 1, {}}}), InvalidGraph);
  EXPECT_THROW(CausalGraph({{NodeId{1}, "a", 1, {NodeId{7}}}}), InvalidGraph);
  EXPECT_THROW(CausalGraph({{NodeId{1}, "a", 0, {}}}), InvalidGraph);
}

TEST(CausalGraph, AncestorsAndDescendants) {
  CausalGraph g({{NodeId{1}, "a", 1, {}}, {NodeId{2}, "b", 1, {NodeId{1}}}, {NodeId{3}, "c", 1, {NodeId{2}}},
                 {NodeId{4}, "d", 1, {}}});
  const std::vector<NodeId> mid{NodeId{2}};
  EXPECT_EQ(ids(g.ancestors_inclusive(mid)), (std::vector<int>{1, 2}));
  EXPECT_EQ(ids(g.descendants_inclusive(mid)), (std::vector<int>{2, 3}));
  EXPECT_EQ(ids(g.children(NodeId{1})), (std::vector<int>{2}));
  EXPECT_EQ(g.id_of("c"), NodeId{3});
  EXPECT_FALSE(g.find("zz").has_value());
}

TEST(CausalGraph, ReversedEdge) {
  CausalGraph g({{NodeId{0}, "T", 1, {}}, {NodeId{1}, "I", 1, {NodeId{0}}},
                 {NodeId{2}, "Img", 2, {NodeId{0}, NodeId{1}}}});
  const auto r = g.with_reversed_edge(NodeId{0}, NodeId{1});
  EXPECT_TRUE(r.node(NodeId{1}).parents.empty());
  EXPECT_EQ(ids(r.node(NodeId{0}).parents), (std::vector<int>{1}));
  EXPECT_EQ(ids(r.node(NodeId{2}).parents), (std::vector<int>{0, 1}));
  EXPECT_EQ(ids(topological_order(r)), (std::vector<int>{1, 0, 2}));
  EXPECT_THROW(g.with_reversed_edge(NodeId{1}, NodeId{0}), InvalidGraph);
}

TEST(StructuredVector, BlockExtractionAndAssignment) {
  const std::vector<NodeId> nodes{NodeId{1}, NodeId{2}, NodeId{3}};
  const std::vector<Eigen::Index> sizes{1, 3, 2};
  auto layout = std::make_shared<const BlockLayout>(nodes, sizes);
  EXPECT_EQ(layout->total_size(), 6);
  Eigen::VectorXd v(6);
  v << 0, 1, 2, 3, 4, 5;
  StructuredVector x(layout, v);
  EXPECT_EQ(x.block(NodeId{2}), Eigen::Vector3d(1, 2, 3));
  const std::vector<NodeId> pick{NodeId{3}, NodeId{1}};
  EXPECT_EQ(x.extract(pick), Eigen::Vector3d(4, 5, 0));
  x.assign(pick, Eigen::Vector3d(9, 8, 7));
  EXPECT_EQ(x.values()[0], 7);
  EXPECT_EQ(x.values()[4], 9);
  EXPECT_THROW(StructuredVector(layout, Eigen::VectorXd(5)), DimensionMismatch);
}
