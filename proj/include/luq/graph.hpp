#pragma once

#include <string>
#include <utility>
#include <vector>

#include "luq/tensor.hpp"

namespace luq {

struct StructureSpec {
  std::string name;
  int node_count = 0;
  bool closed = true;
};

// Fixed node set and shared adjacency. Structures occupy consecutive global
// node ranges in declaration order.
struct AnatomyTopology {
  std::vector<StructureSpec> structures;
  int node_count = 0;
  std::vector<std::pair<int, int>> edges;

  int offset(std::size_t structure) const;
};

// Contours are cycles i -> (i+1) mod n; open structures are chains.
AnatomyTopology build_topology(const std::vector<StructureSpec>& spec);

// Lungs 24 + 24, heart 16.
std::vector<StructureSpec> default_structures();

// Dense D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
struct NormalizedAdjacency {
  Tensor matrix;  // [M x M]
  int size() const { return matrix.shape()[0]; }
};

NormalizedAdjacency normalize_adjacency(const AnatomyTopology& topology);
NormalizedAdjacency normalize_adjacency(int node_count, const std::vector<std::pair<int, int>>& edges);

}  // namespace luq
