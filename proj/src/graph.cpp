#include "luq/graph.hpp"

#include <cmath>

#include "luq/errors.hpp"

namespace luq {

int AnatomyTopology::offset(std::size_t structure) const {
  int off = 0;
  for (std::size_t i = 0; i < structure; ++i) off += structures[i].node_count;
  return off;
}

AnatomyTopology build_topology(const std::vector<StructureSpec>& spec) {
  if (spec.empty()) throw ConfigError("topology has no structures");
  AnatomyTopology topo;
  topo.structures = spec;
  for (const auto& s : spec) {
    if (s.closed && s.node_count < 3)
      throw ConfigError("closed structure '" + s.name + "' needs at least 3 nodes");
    if (s.node_count < 2) throw ConfigError("structure '" + s.name + "' needs at least 2 nodes");
    const int base = topo.node_count;
    const int links = s.closed ? s.node_count : s.node_count - 1;
    for (int i = 0; i < links; ++i) topo.edges.emplace_back(base + i, base + (i + 1) % s.node_count);
    topo.node_count += s.node_count;
  }
  return topo;
}

std::vector<StructureSpec> default_structures() {
  return {{"right_lung", 24, true}, {"left_lung", 24, true}, {"heart", 16, true}};
}

NormalizedAdjacency normalize_adjacency(int node_count, const std::vector<std::pair<int, int>>& edges) {
  const auto m = static_cast<std::size_t>(node_count);
  std::vector<float> a(m * m, 0.0f);
  for (std::size_t i = 0; i < m; ++i) a[i * m + i] = 1.0f;
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || u >= node_count || v >= node_count) throw ConfigError("edge index out of range");
    a[static_cast<std::size_t>(u) * m + static_cast<std::size_t>(v)] = 1.0f;
    a[static_cast<std::size_t>(v) * m + static_cast<std::size_t>(u)] = 1.0f;
  }
  std::vector<double> inv_sqrt_deg(m);
  for (std::size_t i = 0; i < m; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < m; ++j) d += a[i * m + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      a[i * m + j] = static_cast<float>(a[i * m + j] * inv_sqrt_deg[i] * inv_sqrt_deg[j]);
  return {Tensor(Shape{node_count, node_count}, std::move(a))};
}

NormalizedAdjacency normalize_adjacency(const AnatomyTopology& topology) {
  return normalize_adjacency(topology.node_count, topology.edges);
}

}  // namespace luq
