#pragma once

// Modularity-based community detection (Combo-style recombination search)
// and topological aggregation of OD tensors onto communities.

#include "mobanom/ingest.hpp"

#include <limits>
#include <numeric>

namespace mobanom {

struct WeightedDigraph {
  std::vector<std::string> node_ids;
  Matrix weights;  // N x N, self-flows allowed

  std::size_t size() const { return node_ids.size(); }
};

/// Node-to-community map. Communities are numbered 0..count-1 contiguously.
struct Partition {
  std::vector<std::string> node_ids;
  std::vector<int> assignment;
  int count = 0;

  /// Renumbers communities by first appearance and drops empty ones.
  static Partition from_labels(std::vector<std::string> ids, const std::vector<int>& labels) {
    Partition p{std::move(ids), {}, 0};
    std::map<int, int> remap;
    p.assignment.reserve(labels.size());
    for (int l : labels) {
      auto [it, inserted] = remap.try_emplace(l, p.count);
      if (inserted) ++p.count;
      p.assignment.push_back(it->second);
    }
    return p;
  }

  static Partition all_in_one(std::vector<std::string> ids) {
    std::vector<int> labels(ids.size(), 0);
    return from_labels(std::move(ids), labels);
  }

  static Partition singletons(std::vector<std::string> ids) {
    std::vector<int> labels(ids.size());
    std::iota(labels.begin(), labels.end(), 0);
    return from_labels(std::move(ids), labels);
  }
};

inline WeightedDigraph mean_graph(const ODTensor& t) {
  if (t.days() == 0) throw DataError("mean_graph: empty tensor");
  auto normalized = normalize_spatial(t);
  Matrix acc = Matrix::Zero(Eigen::Index(t.nodes()), Eigen::Index(t.nodes()));
  for (const auto& m : normalized.flows) acc += m;
  acc /= double(t.days());
  return {t.node_ids, std::move(acc)};
}

/// Directed weighted modularity:
///   Q = sum_ij [w_ij / W - out_i in_j / W^2] [c_i == c_j]
inline double modularity(const WeightedDigraph& g, const Partition& p) {
  const auto n = g.weights.rows();
  if (Eigen::Index(p.assignment.size()) != n)
    throw DataError("modularity: partition size does not match graph");
  const double total = g.weights.sum();
  if (!(total > 0.0)) throw DataError("modularity: graph has zero total weight");
  std::vector<double> intra(std::size_t(p.count), 0.0), out(std::size_t(p.count), 0.0),
      in(std::size_t(p.count), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ci = std::size_t(p.assignment[std::size_t(i)]);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = g.weights(i, j);
      out[ci] += w;
      in[std::size_t(p.assignment[std::size_t(j)])] += w;
      if (std::size_t(p.assignment[std::size_t(j)]) == ci) intra[ci] += w;
    }
  }
  double q = 0.0;
  for (std::size_t c = 0; c < std::size_t(p.count); ++c)
    q += intra[c] / total - out[c] * in[c] / (total * total);
  return q;
}

namespace detail {

/// Mutable search state for the recombination optimizer.
class ComboState {
 public:
  ComboState(const Matrix& w, std::vector<int> labels, int count)
      : w_(w), n_(w.rows()), total_(w.sum()), labels_(std::move(labels)), count_(count) {
    out_v_ = w_.rowwise().sum();
    in_v_ = w_.colwise().sum().transpose();
    rebuild();
  }

  int count() const { return count_; }
  const std::vector<int>& labels() const { return labels_; }

  struct Move {
    double gain = 0.0;
    std::vector<Eigen::Index> moved;  // vertices flipped between the pair
  };

  /// Kernighan-Lin series between communities a and b (b == count() means
  /// a new empty community). Each step flips the unmoved vertex of the pair
  /// with the largest gain; the best prefix of the series is returned.
  Move best_recombination(int a, int b) const {
    std::vector<Eigen::Index> members;
    for (Eigen::Index v = 0; v < n_; ++v)
      if (labels_[std::size_t(v)] == a || labels_[std::size_t(v)] == b) members.push_back(v);

    // Local copies of the pair-restricted sums.
    const std::size_t m = members.size();
    std::vector<int> side(m);
    std::vector<double> to_a(m), to_b(m), from_a(m), from_b(m);
    double out_a = 0, in_a = 0, out_b = 0, in_b = 0;
    for (std::size_t k = 0; k < m; ++k) {
      const auto v = members[k];
      side[k] = labels_[std::size_t(v)] == a ? 0 : 1;
      to_a[k] = to_c_(v, a);
      from_a[k] = from_c_(v, a);
      to_b[k] = b < count_ ? to_c_(v, b) : 0.0;
      from_b[k] = b < count_ ? from_c_(v, b) : 0.0;
      (side[k] == 0 ? out_a : out_b) += out_v_(v);
      (side[k] == 0 ? in_a : in_b) += in_v_(v);
    }

    std::vector<bool> moved(m, false);
    std::vector<Eigen::Index> order;
    double cumulative = 0.0;
    Move best;
    const double w2 = total_ * total_;
    for (std::size_t step = 0; step < m; ++step) {
      double best_gain = -std::numeric_limits<double>::infinity();
      std::size_t pick = m;
      for (std::size_t k = 0; k < m; ++k) {
        if (moved[k]) continue;
        const auto v = members[k];
        const double self = w_(v, v);
        const double ov = out_v_(v), iv = in_v_(v);
        double gain;
        if (side[k] == 0) {
          gain = (to_b[k] + from_b[k] - to_a[k] - from_a[k] + 2 * self) / total_ -
                 (ov * in_b + iv * out_b - ov * in_a - iv * out_a + 2 * ov * iv) / w2;
        } else {
          gain = (to_a[k] + from_a[k] - to_b[k] - from_b[k] + 2 * self) / total_ -
                 (ov * in_a + iv * out_a - ov * in_b - iv * out_b + 2 * ov * iv) / w2;
        }
        if (gain > best_gain) {
          best_gain = gain;
          pick = k;
        }
      }
      const auto v = members[pick];
      moved[pick] = true;
      order.push_back(v);
      cumulative += best_gain;
      const bool to_second = side[pick] == 0;
      side[pick] = to_second ? 1 : 0;
      const double ov = out_v_(v), iv = in_v_(v);
      if (to_second) {
        out_a -= ov, in_a -= iv, out_b += ov, in_b += iv;
      } else {
        out_b -= ov, in_b -= iv, out_a += ov, in_a += iv;
      }
      for (std::size_t k = 0; k < m; ++k) {
        const auto u = members[k];
        const double uv = w_(u, v), vu = w_(v, u);
        if (to_second) {
          to_a[k] -= uv, from_a[k] -= vu, to_b[k] += uv, from_b[k] += vu;
        } else {
          to_b[k] -= uv, from_b[k] -= vu, to_a[k] += uv, from_a[k] += vu;
        }
      }
      if (cumulative > best.gain) {
        best.gain = cumulative;
        best.moved = order;
      }
    }
    return best;
  }

  void apply(int a, int b, const Move& mv) {
    for (auto v : mv.moved) {
      auto& l = labels_[std::size_t(v)];
      l = l == a ? b : a;
    }
    auto p = Partition::from_labels({}, labels_);
    labels_ = std::move(p.assignment);
    count_ = p.count;
    rebuild();
  }

 private:
  void rebuild() {
    to_c_ = Matrix::Zero(n_, count_);
    from_c_ = Matrix::Zero(n_, count_);
    for (Eigen::Index v = 0; v < n_; ++v)
      for (Eigen::Index u = 0; u < n_; ++u) {
        const auto cu = labels_[std::size_t(u)];
        to_c_(v, cu) += w_(v, u);
        from_c_(v, cu) += w_(u, v);
      }
  }

  const Matrix& w_;
  Eigen::Index n_;
  double total_;
  Vector out_v_, in_v_;
  std::vector<int> labels_;
  int count_;
  Matrix to_c_, from_c_;  // weight from v into community c, and from c into v
};

inline std::vector<int> combo_search(const Matrix& w, std::vector<int> start, int start_count,
                                     int max_communities) {
  ComboState state(w, std::move(start), start_count);
  constexpr double kMinGain = 1e-9;
  while (true) {
    double best_gain = kMinGain;
    int best_a = -1, best_b = -1;
    ComboState::Move best_move;
    const int c = state.count();
    for (int a = 0; a < c; ++a) {
      const int last = c < max_communities ? c : c - 1;
      for (int b = a + 1; b <= last; ++b) {
        auto mv = state.best_recombination(a, b);
        if (mv.gain > best_gain) {
          best_gain = mv.gain;
          best_a = a;
          best_b = b;
          best_move = std::move(mv);
        }
      }
    }
    if (best_a < 0) break;
    state.apply(best_a, best_b, best_move);
  }
  return state.labels();
}

}  // namespace detail

/// Modularity maximization with at most max_communities communities. The
/// first search starts from the all-in-one partition; `restarts` further
/// searches start from seeded random partitions. The best result wins, ties
/// going to the earliest search.
inline Partition combo_partition(const WeightedDigraph& g, int max_communities,
                                 std::uint64_t seed, int restarts = 4) {
  const auto n = int(g.size());
  if (n < 1) throw DataError("combo_partition: empty graph");
  if (max_communities < 1) throw ConfigError("combo_partition: max_communities must be >= 1");
  if (!(g.weights.sum() > 0.0)) throw DataError("combo_partition: graph has zero total weight");

  auto best = Partition::all_in_one(g.node_ids);
  double best_q = modularity(g, best);
  auto consider = [&](const std::vector<int>& labels) {
    auto p = Partition::from_labels(g.node_ids, labels);
    if (p.count > max_communities) return;
    double q = modularity(g, p);
    if (q > best_q + 1e-12) {
      best_q = q;
      best = std::move(p);
    }
  };

  consider(detail::combo_search(g.weights, std::vector<int>(std::size_t(n), 0), 1,
                                max_communities));
  std::mt19937_64 rng(seed);
  const int k = std::min(n, max_communities);
  for (int r = 0; r < restarts && k > 1; ++r) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = pick(rng);
    auto p = Partition::from_labels({}, labels);
    consider(detail::combo_search(g.weights, p.assignment, p.count, max_communities));
  }
  if (n <= max_communities) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::iota(labels.begin(), labels.end(), 0);
    consider(labels);
  }
  return best;
}

/// flows'[a][b] = sum over i in a, j in b of flows[i][j].
inline ODTensor aggregate_by_partition(const ODTensor& t, const Partition& p) {
  std::unordered_map<std::string, int> lookup;
  for (std::size_t i = 0; i < p.node_ids.size(); ++i) lookup.emplace(p.node_ids[i], p.assignment[i]);
  const auto c = Eigen::Index(p.count);
  Matrix membership = Matrix::Zero(Eigen::Index(t.nodes()), c);
  for (std::size_t i = 0; i < t.nodes(); ++i) {
    auto it = lookup.find(t.node_ids[i]);
    if (it == lookup.end())
      throw DataError("aggregate: node '" + t.node_ids[i] + "' missing from partition");
    membership(Eigen::Index(i), it->second) = 1.0;
  }
  ODTensor out;
  out.dates = t.dates;
  for (int k = 0; k < p.count; ++k) out.node_ids.push_back("C" + std::to_string(k));
  out.flows.reserve(t.days());
  for (const auto& f : t.flows) out.flows.push_back(membership.transpose() * f * membership);
  return out;
}

inline std::string partition_to_csv(const Partition& p) {
  std::string s = "node_id,community\n";
  for (std::size_t i = 0; i < p.node_ids.size(); ++i)
    s += p.node_ids[i] + ',' + std::to_string(p.assignment[i]) + '\n';
  return s;
}

inline Partition read_partition(std::istream& in) {
  expect_header(in, {"node_id", "community"}, "partition csv");
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 2)
      throw DataError("partition csv line " + std::to_string(lineno) + ": expected 2 fields");
    int c = 0;
    auto [ptr, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), c);
    if (ec != std::errc{} || ptr != f[1].data() + f[1].size() || c < 0)
      throw DataError("partition csv line " + std::to_string(lineno) + ": bad community");
    ids.push_back(f[0]);
    labels.push_back(c);
  }
  auto p = Partition::from_labels(std::move(ids), labels);
  // Keep stored numbering when it is already contiguous.
  int max_label = labels.empty() ? -1 : *std::max_element(labels.begin(), labels.end());
  if (max_label + 1 == p.count) p.assignment = labels;
  return p;
}

}  // namespace mobanom
