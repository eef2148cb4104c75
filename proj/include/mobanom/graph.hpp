#pragma once

// Physical transit topology and the renormalized propagation operator used
// by graph convolution layers.

#include "mobanom/ingest.hpp"

#include <set>

namespace mobanom {

struct PhysicalGraph {
  std::vector<std::string> node_ids;
  std::set<std::pair<std::size_t, std::size_t>> edges;  // (lo, hi) node indices

  std::size_t size() const { return node_ids.size(); }

  std::vector<int> degrees() const {
    std::vector<int> deg(node_ids.size(), 0);
    for (auto [a, b] : edges) {
      ++deg[a];
      ++deg[b];
    }
    return deg;
  }
};

inline PhysicalGraph build_physical_graph(
    const std::vector<std::pair<std::string, std::string>>& links, const NodeRegistry& registry) {
  PhysicalGraph g{registry.ids(), {}};
  for (const auto& [a, b] : links) {
    auto ia = registry.find(a);
    if (!ia) throw DataError("physical edge: unknown node '" + a + "'");
    auto ib = registry.find(b);
    if (!ib) throw DataError("physical edge: unknown node '" + b + "'");
    if (*ia == *ib) throw DataError("physical edge: self-loop on '" + a + "'");
    g.edges.emplace(std::min(*ia, *ib), std::max(*ia, *ib));
  }
  return g;
}

inline std::vector<std::pair<std::string, std::string>> read_physical_edges(std::istream& in) {
  expect_header(in, {"node_a", "node_b"}, "physical edge csv");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 2)
      throw DataError("physical edge csv line " + std::to_string(lineno) + ": expected 2 fields");
    out.emplace_back(f[0], f[1]);
  }
  return out;
}

inline std::string physical_edges_to_csv(
    const std::vector<std::pair<std::string, std::string>>& links) {
  std::string s = "node_a,node_b\n";
  for (const auto& [a, b] : links) s += a + ',' + b + '\n';
  return s;
}

/// Symmetric N x N operator D^-1/2 (A + I) D^-1/2, D the degree matrix of A + I.
struct NormalizedAdjacency {
  Matrix matrix;

  Eigen::Index size() const { return matrix.rows(); }
};

inline NormalizedAdjacency normalize_adjacency(const PhysicalGraph& g) {
  const auto n = Eigen::Index(g.size());
  Matrix a = Matrix::Identity(n, n);
  for (auto [i, j] : g.edges) {
    a(Eigen::Index(i), Eigen::Index(j)) = 1.0;
    a(Eigen::Index(j), Eigen::Index(i)) = 1.0;
  }
  Vector inv_sqrt = a.rowwise().sum().array().rsqrt();
  return {inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal()};
}

inline NormalizedAdjacency identity_adjacency(Eigen::Index n) {
  return {Matrix::Identity(n, n)};
}

}  // namespace mobanom
