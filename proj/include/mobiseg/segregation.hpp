#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobiseg/common.hpp"
#include "mobiseg/geometry.hpp"
#include "mobiseg/graph.hpp"
#include "mobiseg/ingest.hpp"

namespace mobiseg {

// c[community][unit]: users of a home community working in a unit.
struct CountsMatrix {
  std::vector<std::string> units;  // sorted
  std::vector<std::vector<std::uint64_t>> c;
  std::vector<std::uint64_t> row_totals;  // C per community
  std::vector<std::uint64_t> col_totals;  // T per unit
  std::uint64_t total = 0;                // N

  std::size_t community_count() const { return c.size(); }
  std::size_t unit_count() const { return units.size(); }
};

using UnitOf = std::function<std::string(const UserAnchor&)>;

inline std::string work_tower_unit(const UserAnchor& a) { return a.work_tower; }

// Every anchor must carry a community label >= 0. `n_communities` widens the
// matrix to include empty trailing communities.
inline CountsMatrix counts_matrix(std::span<const UserAnchor> anchors, const UnitOf& unit_of = work_tower_unit,
                                  std::size_t n_communities = 0) {
  CountsMatrix m;
  std::vector<std::string> unit_of_anchor;
  unit_of_anchor.reserve(anchors.size());
  std::size_t nc = n_communities;
  for (const auto& a : anchors) {
    if (!a.community || *a.community < 0) {
      throw DataError("counts_matrix: user '" + a.user_id + "' has no community");
    }
    nc = std::max(nc, static_cast<std::size_t>(*a.community) + 1);
    unit_of_anchor.push_back(unit_of(a));
  }
  m.units = unit_of_anchor;
  std::sort(m.units.begin(), m.units.end());
  m.units.erase(std::unique(m.units.begin(), m.units.end()), m.units.end());
  m.c.assign(nc, std::vector<std::uint64_t>(m.units.size(), 0));
  m.row_totals.assign(nc, 0);
  m.col_totals.assign(m.units.size(), 0);
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    const auto row = static_cast<std::size_t>(*anchors[k].community);
    const auto col = static_cast<std::size_t>(
        std::lower_bound(m.units.begin(), m.units.end(), unit_of_anchor[k]) - m.units.begin());
    ++m.c[row][col];
    ++m.row_totals[row];
    ++m.col_totals[col];
  }
  m.total = anchors.size();
  return m;
}

// P = Σ_i (c_i / C)(c_i / T_i), evaluated as (Σ_i c_i² / T_i) / C.
inline double isolation_index(const CountsMatrix& m, std::size_t community) {
  if (community >= m.community_count() || m.row_totals[community] == 0) {
    throw DataError("isolation_index: community " + std::to_string(community) + " is empty");
  }
  double sum = 0.0;
  const auto& row = m.c[community];
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] == 0) continue;
    const double ci = static_cast<double>(row[i]);
    sum += ci * ci / static_cast<double>(m.col_totals[i]);
  }
  return sum / static_cast<double>(m.row_totals[community]);
}

// Well-mixed limit: the community's population share k = C / N.
inline double well_mixed_index(const CountsMatrix& m, std::size_t community) {
  if (m.total == 0) throw DataError("well_mixed_index: no users");
  if (community >= m.community_count()) throw DataError("well_mixed_index: unknown community");
  return static_cast<double>(m.row_totals[community]) / static_cast<double>(m.total);
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std = 0.0;  // population-style, divisor R
  std::vector<double> values;
};

// Well-mixed index by simulation: every user works in a unit drawn uniformly
// from the matrix's units; the isolation index per replication. Returns one
// estimate per community.
inline std::vector<MonteCarloEstimate> well_mixed_monte_carlo(const CountsMatrix& m, std::size_t reps,
                                                              std::uint64_t seed) {
  const std::size_t nc = m.community_count(), nu = m.unit_count();
  if (nu == 0) throw DataError("well_mixed_monte_carlo: no units");
  std::vector<MonteCarloEstimate> est(nc);
  CountsMatrix sim;
  sim.units = m.units;
  for (std::size_t r = 0; r < reps; ++r) {
    Rng rng(derive_seed(seed, r));
    sim.c.assign(nc, std::vector<std::uint64_t>(nu, 0));
    sim.row_totals = m.row_totals;
    sim.col_totals.assign(nu, 0);
    sim.total = m.total;
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::uint64_t u = 0; u < m.row_totals[c]; ++u) {
        const std::size_t i = uniform_index(rng, nu);
        ++sim.c[c][i];
        ++sim.col_totals[i];
      }
    }
    for (std::size_t c = 0; c < nc; ++c) {
      if (m.row_totals[c] > 0) est[c].values.push_back(isolation_index(sim, c));
    }
  }
  for (auto& e : est) {
    if (e.values.empty()) continue;
    double s = 0.0;
    for (double v : e.values) s += v;
    e.mean = s / static_cast<double>(e.values.size());
    double ss = 0.0;
    for (double v : e.values) ss += (v - e.mean) * (v - e.mean);
    e.std = std::sqrt(ss / static_cast<double>(e.values.size()));
  }
  return est;
}

enum class SelWeighting { area, users };

// Weighted mean of member-cell SEL profiles per community. Cells without a
// profile are skipped; a community with no profiled cell gets none.
// SelWeighting::users weighs by `user_weights` (tower -> users), else by cell
// area.
inline std::vector<std::optional<SelProfile>> community_sel(
    const Partition& p, std::span<const TowerCell> cells, SelWeighting weighting = SelWeighting::area,
    const std::map<TowerId, double>* user_weights = nullptr) {
  if (weighting == SelWeighting::users && !user_weights) {
    throw std::invalid_argument("community_sel: user weighting needs user_weights");
  }
  const std::size_t nc = static_cast<std::size_t>(p.community_count());
  std::vector<SelProfile> acc(nc, SelProfile{});
  std::vector<double> wsum(nc, 0.0);
  for (const auto& cell : cells) {
    if (!cell.sel) continue;
    const auto label = p.label_of(cell.tower_id);
    if (!label) continue;
    double w;
    if (weighting == SelWeighting::area) {
      w = area(cell.cell);
    } else {
      auto it = user_weights->find(cell.tower_id);
      w = it == user_weights->end() ? 0.0 : it->second;
    }
    if (!(w > 0)) continue;
    const auto c = static_cast<std::size_t>(*label);
    for (std::size_t g = 0; g < sel_group_count; ++g) acc[c][g] += w * (*cell.sel)[g];
    wsum[c] += w;
  }
  std::vector<std::optional<SelProfile>> out(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    if (wsum[c] <= 0) continue;
    SelProfile prof = acc[c];
    double s = 0.0;
    for (double f : prof) s += f;
    for (auto& f : prof) f /= s;
    out[c] = prof;
  }
  return out;
}

// Labels anchors with the community of their home tower. Users whose home or
// work tower is outside the partition (pruned or unknown) are dropped.
inline std::vector<UserAnchor> label_anchors(std::span<const UserAnchor> anchors, const Partition& p) {
  std::vector<UserAnchor> out;
  out.reserve(anchors.size());
  for (const auto& a : anchors) {
    const auto home = p.label_of(a.home_tower);
    if (!home || !p.label_of(a.work_tower)) continue;
    UserAnchor labeled = a;
    labeled.community = *home;
    out.push_back(std::move(labeled));
  }
  return out;
}

struct IsolationRow {
  int community = 0;
  std::uint64_t users = 0;
  double rii = 0.0;
  double wii = 0.0;
  double sii_mean = 0.0;
  double sii_std = 0.0;
  double z = 0.0;
  bool segregated = false;
  std::optional<SelProfile> sel;
};

struct IsolationReport {
  std::vector<IsolationRow> rows;
};

}  // namespace mobiseg
