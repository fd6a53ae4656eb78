#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mobiseg/common.hpp"
#include "mobiseg/ingest.hpp"

namespace mobiseg {

struct HWEdge {
  std::size_t a = 0;  // a <= b; a == b is a self-loop
  std::size_t b = 0;
  std::uint64_t weight = 0;

  friend bool operator==(const HWEdge&, const HWEdge&) = default;
};

// Weighted undirected tower graph. Nodes are sorted tower ids; edges are
// sorted by (a, b) and unique.
struct HWNetwork {
  std::vector<TowerId> nodes;
  std::vector<HWEdge> edges;

  std::optional<std::size_t> index_of(const TowerId& id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), id);
    if (it == nodes.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - nodes.begin());
  }

  // m: total edge weight
  double total_weight() const {
    double m = 0.0;
    for (const auto& e : edges) m += static_cast<double>(e.weight);
    return m;
  }

  // k_i; a self-loop counts twice
  std::vector<double> strengths() const {
    std::vector<double> k(nodes.size(), 0.0);
    for (const auto& e : edges) {
      k[e.a] += static_cast<double>(e.weight);
      k[e.b] += static_cast<double>(e.weight);
    }
    return k;
  }
};

// Builds a network from (tower, tower, weight) triples; repeated pairs in
// either orientation are merged. `extra_nodes` adds isolated nodes.
inline HWNetwork network_from_edges(std::span<const std::tuple<TowerId, TowerId, std::uint64_t>> edges,
                                    std::span<const TowerId> extra_nodes = {}) {
  HWNetwork net;
  for (const auto& [a, b, w] : edges) {
    net.nodes.push_back(a);
    net.nodes.push_back(b);
  }
  net.nodes.insert(net.nodes.end(), extra_nodes.begin(), extra_nodes.end());
  std::sort(net.nodes.begin(), net.nodes.end());
  net.nodes.erase(std::unique(net.nodes.begin(), net.nodes.end()), net.nodes.end());

  std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> merged;
  for (const auto& [a, b, w] : edges) {
    if (w == 0) throw DataError("network: edge weights must be positive");
    std::size_t ia = *net.index_of(a), ib = *net.index_of(b);
    if (ia > ib) std::swap(ia, ib);
    merged[{ia, ib}] += w;
  }
  for (const auto& [key, w] : merged) net.edges.push_back({key.first, key.second, w});
  return net;
}

// Edge (a, b) weighs the number of users whose {home, work} equals {a, b}.
// With `day_filter`, only users with an anchor ping on that weekday count.
inline HWNetwork build_hw_network(std::span<const UserAnchor> anchors, std::optional<Weekday> day_filter = {}) {
  std::vector<std::tuple<TowerId, TowerId, std::uint64_t>> trips;
  trips.reserve(anchors.size());
  for (const auto& a : anchors) {
    if (day_filter && !(a.active_weekdays & (1u << (*day_filter - 1)))) continue;
    trips.emplace_back(a.home_tower, a.work_tower, 1);
  }
  return network_from_edges(trips);
}

// Community assignment aligned with a sorted node list. Labels are
// contiguous, numbered by descending community size, ties by lowest tower id.
struct Partition {
  std::vector<TowerId> nodes;
  std::vector<int> labels;

  int community_count() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(static_cast<std::size_t>(community_count()), 0);
    for (int l : labels) ++s[static_cast<std::size_t>(l)];
    return s;
  }

  std::optional<int> label_of(const TowerId& id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), id);
    if (it == nodes.end() || *it != id) return std::nullopt;
    return labels[static_cast<std::size_t>(it - nodes.begin())];
  }

  std::vector<TowerId> members(int label) const {
    std::vector<TowerId> out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (labels[i] == label) out.push_back(nodes[i]);
    }
    return out;
  }

  friend bool operator==(const Partition&, const Partition&) = default;
};

// Canonical renumbering of arbitrary integer labels.
inline Partition make_partition(std::vector<TowerId> nodes, std::vector<int> raw) {
  if (nodes.size() != raw.size()) throw std::invalid_argument("make_partition: size mismatch");
  std::vector<std::size_t> order(nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return nodes[a] < nodes[b]; });
  Partition p;
  p.nodes.reserve(nodes.size());
  std::vector<int> sorted_raw;
  sorted_raw.reserve(nodes.size());
  for (std::size_t i : order) {
    if (!p.nodes.empty() && p.nodes.back() == nodes[i]) {
      throw std::invalid_argument("make_partition: duplicate node '" + nodes[i] + "'");
    }
    p.nodes.push_back(std::move(nodes[i]));
    sorted_raw.push_back(raw[i]);
  }

  struct Group {
    std::size_t size = 0;
    std::size_t first = 0;  // index of lowest tower id
  };
  std::map<int, Group> groups;
  for (std::size_t i = 0; i < sorted_raw.size(); ++i) {
    auto [it, fresh] = groups.try_emplace(sorted_raw[i], Group{0, i});
    ++it->second.size;
  }
  std::vector<std::pair<int, Group>> ranked(groups.begin(), groups.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    return x.second.size != y.second.size ? x.second.size > y.second.size : x.second.first < y.second.first;
  });
  std::map<int, int> relabel;
  for (std::size_t r = 0; r < ranked.size(); ++r) relabel[ranked[r].first] = static_cast<int>(r);
  p.labels.reserve(sorted_raw.size());
  for (int l : sorted_raw) p.labels.push_back(relabel[l]);
  return p;
}

// Q = Σ_c [in_c / 2m − γ (tot_c / 2m)²], with in_c the within-community sum of
// A_ij over ordered pairs (A_ii = twice the loop weight).
inline double modularity(const HWNetwork& net, const Partition& p, double resolution = 1.0) {
  if (p.nodes != net.nodes) throw std::invalid_argument("modularity: partition must cover exactly the network nodes");
  const double m = net.total_weight();
  if (m <= 0) throw DataError("modularity: network has no edges");
  const std::size_t nc = static_cast<std::size_t>(p.community_count());
  std::vector<double> in(nc, 0.0), tot(nc, 0.0);
  const auto k = net.strengths();
  for (std::size_t i = 0; i < k.size(); ++i) tot[static_cast<std::size_t>(p.labels[i])] += k[i];
  for (const auto& e : net.edges) {
    if (p.labels[e.a] == p.labels[e.b]) in[static_cast<std::size_t>(p.labels[e.a])] += 2.0 * static_cast<double>(e.weight);
  }
  const double m2 = 2.0 * m;
  double q = 0.0;
  for (std::size_t c = 0; c < nc; ++c) q += in[c] / m2 - resolution * (tot[c] / m2) * (tot[c] / m2);
  return q;
}

struct LouvainResult {
  Partition partition;
  double modularity = 0.0;
  // Q after each aggregation level, starting with the singleton partition
  std::vector<double> level_modularity;
};

namespace detail {

struct WeightedGraph {
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;  // no self entries
  std::vector<double> loop;
  std::vector<double> k;
  double m2 = 0.0;

  std::size_t size() const { return adj.size(); }
};

inline WeightedGraph to_weighted_graph(const HWNetwork& net) {
  WeightedGraph g;
  const std::size_t n = net.nodes.size();
  g.adj.assign(n, {});
  g.loop.assign(n, 0.0);
  g.k = net.strengths();
  for (const auto& e : net.edges) {
    const double w = static_cast<double>(e.weight);
    if (e.a == e.b) {
      g.loop[e.a] += w;
    } else {
      g.adj[e.a].emplace_back(e.b, w);
      g.adj[e.b].emplace_back(e.a, w);
    }
  }
  g.m2 = 2.0 * net.total_weight();
  return g;
}

// One local-moving phase. Returns true if any node changed community.
inline bool local_moving(const WeightedGraph& g, Rng& rng, double resolution, std::vector<std::size_t>& comm) {
  const std::size_t n = g.size();
  comm.resize(n);
  std::iota(comm.begin(), comm.end(), 0);
  std::vector<double> tot = g.k;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);

  std::vector<double> w_to(n, 0.0);
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> touched;
  bool any_move = false;
  constexpr int max_passes = 10000;
  for (int pass = 0; pass < max_passes; ++pass) {
    std::size_t moves = 0;
    for (std::size_t i : order) {
      const std::size_t ci = comm[i];
      const double ki = g.k[i];
      touched.clear();
      seen[ci] = 1;
      touched.push_back(ci);
      for (const auto& [j, w] : g.adj[i]) {
        const std::size_t c = comm[j];
        if (!seen[c]) {
          seen[c] = 1;
          touched.push_back(c);
        }
        w_to[c] += w;
      }
      tot[ci] -= ki;
      std::size_t best = ci;
      double best_gain = w_to[ci] - resolution * tot[ci] * ki / g.m2;
      const double eps = 1e-12 * std::max(1.0, ki);
      for (std::size_t c : touched) {
        const double gain = w_to[c] - resolution * tot[c] * ki / g.m2;
        if (gain > best_gain + eps) {
          best = c;
          best_gain = gain;
        }
      }
      tot[best] += ki;
      if (best != ci) {
        comm[i] = best;
        ++moves;
      }
      for (std::size_t c : touched) {
        w_to[c] = 0.0;
        seen[c] = 0;
      }
    }
    if (moves == 0) break;
    any_move = true;
  }
  return any_move;
}

// Renumbers `comm` to 0..nc-1 in order of first appearance; returns nc.
inline std::size_t compact_labels(std::vector<std::size_t>& comm) {
  std::vector<std::size_t> map(comm.size(), std::numeric_limits<std::size_t>::max());
  std::size_t next = 0;
  for (auto& c : comm) {
    if (map[c] == std::numeric_limits<std::size_t>::max()) map[c] = next++;
    c = map[c];
  }
  return next;
}

inline WeightedGraph aggregate(const WeightedGraph& g, const std::vector<std::size_t>& comm, std::size_t nc) {
  WeightedGraph h;
  h.adj.assign(nc, {});
  h.loop.assign(nc, 0.0);
  h.k.assign(nc, 0.0);
  h.m2 = g.m2;
  std::vector<std::map<std::size_t, double>> links(nc);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const std::size_t ci = comm[i];
    h.k[ci] += g.k[i];
    h.loop[ci] += g.loop[i];
    for (const auto& [j, w] : g.adj[i]) {
      const std::size_t cj = comm[j];
      if (cj == ci) {
        h.loop[ci] += 0.5 * w;  // each internal edge is seen from both ends
      } else {
        links[ci][cj] += w;
      }
    }
  }
  for (std::size_t c = 0; c < nc; ++c) {
    h.adj[c].assign(links[c].begin(), links[c].end());
  }
  return h;
}

inline double membership_modularity(const HWNetwork& net, const std::vector<std::size_t>& membership,
                                    double resolution) {
  std::vector<int> labels(membership.begin(), membership.end());
  return modularity(net, Partition{net.nodes, std::move(labels)}, resolution);
}

}  // namespace detail

// Multi-level greedy modularity maximization (local moving + aggregation).
// Node sweep order is shuffled from `seed`. Throws std::logic_error if Q ever
// decreases between levels.
inline LouvainResult louvain(const HWNetwork& net, std::uint64_t seed = 42, double resolution = 1.0) {
  if (net.total_weight() <= 0) throw DataError("louvain: network has no edges");
  Rng rng(seed);
  detail::WeightedGraph g = detail::to_weighted_graph(net);
  std::vector<std::size_t> membership(net.nodes.size());
  std::iota(membership.begin(), membership.end(), 0);

  LouvainResult result;
  result.level_modularity.push_back(detail::membership_modularity(net, membership, resolution));
  std::vector<std::size_t> comm;
  while (true) {
    if (!detail::local_moving(g, rng, resolution, comm)) break;
    const std::size_t nc = detail::compact_labels(comm);
    for (auto& m : membership) m = comm[m];
    const double q = detail::membership_modularity(net, membership, resolution);
    if (q < result.level_modularity.back() - 1e-10) {
      throw std::logic_error("louvain: modularity decreased between levels");
    }
    result.level_modularity.push_back(q);
    if (nc == g.size()) break;
    g = detail::aggregate(g, comm, nc);
  }
  std::vector<int> labels(membership.begin(), membership.end());
  result.partition = make_partition(net.nodes, std::move(labels));
  result.modularity = modularity(net, result.partition, resolution);
  return result;
}

struct PruneResult {
  Partition kept;
  std::vector<TowerId> discarded;  // sorted
};

// Drops communities with fewer than `min_size` nodes.
inline PruneResult prune_small(const Partition& p, std::size_t min_size = 2) {
  const auto sizes = p.sizes();
  PruneResult r;
  std::vector<TowerId> nodes;
  std::vector<int> labels;
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    if (sizes[static_cast<std::size_t>(p.labels[i])] >= min_size) {
      nodes.push_back(p.nodes[i]);
      labels.push_back(p.labels[i]);
    } else {
      r.discarded.push_back(p.nodes[i]);
    }
  }
  r.kept = make_partition(std::move(nodes), std::move(labels));
  return r;
}

enum class Matching { greedy, optimal };

namespace detail {

// Maximum-weight assignment on a rectangular matrix (Hungarian method on the
// padded square cost matrix). Returns row -> column or -1.
inline std::vector<long> max_weight_assignment(const std::vector<std::vector<double>>& w) {
  const std::size_t rows = w.size(), cols = rows ? w[0].size() : 0;
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  double wmax = 0.0;
  for (const auto& r : w) for (double v : r) wmax = std::max(wmax, v);
  auto cost = [&](std::size_t i, std::size_t j) {
    const double v = (i < rows && j < cols) ? w[i][j] : 0.0;
    return wmax - v;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<long> assign(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] >= 1 && p[j] - 1 < rows && j - 1 < cols) assign[p[j] - 1] = static_cast<long>(j - 1);
  }
  return assign;
}

}  // namespace detail

// Fraction of shared nodes whose daily community maps onto their aggregate
// community, after matching daily to aggregate labels (greedy by largest
// overlap, or optimal assignment).
inline double retention(const Partition& daily, const Partition& aggregate, Matching matching = Matching::greedy) {
  const std::size_t nd = static_cast<std::size_t>(daily.community_count());
  const std::size_t na = static_cast<std::size_t>(aggregate.community_count());
  std::vector<std::vector<double>> overlap(nd, std::vector<double>(na, 0.0));
  std::size_t shared = 0;
  for (std::size_t i = 0; i < daily.nodes.size(); ++i) {
    const auto a = aggregate.label_of(daily.nodes[i]);
    if (!a) continue;
    ++shared;
    overlap[static_cast<std::size_t>(daily.labels[i])][static_cast<std::size_t>(*a)] += 1.0;
  }
  if (shared == 0) throw DataError("retention: partitions share no nodes");

  double retained = 0.0;
  if (matching == Matching::greedy) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t d = 0; d < nd; ++d) {
      for (std::size_t a = 0; a < na; ++a) {
        if (overlap[d][a] > 0) pairs.emplace_back(overlap[d][a], d, a);
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
      if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
      return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
    });
    std::vector<char> used_d(nd, 0), used_a(na, 0);
    for (const auto& [count, d, a] : pairs) {
      if (used_d[d] || used_a[a]) continue;
      used_d[d] = used_a[a] = 1;
      retained += count;
    }
  } else {
    const auto assign = detail::max_weight_assignment(overlap);
    for (std::size_t d = 0; d < nd; ++d) {
      if (assign[d] >= 0) retained += overlap[d][static_cast<std::size_t>(assign[d])];
    }
  }
  return retained / static_cast<double>(shared);
}

}  // namespace mobiseg
