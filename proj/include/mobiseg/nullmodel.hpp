#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mobiseg/common.hpp"
#include "mobiseg/geometry.hpp"
#include "mobiseg/ingest.hpp"
#include "mobiseg/segregation.hpp"

namespace mobiseg {

using SiteMap = std::unordered_map<TowerId, Point>;

inline SiteMap sites_of(std::span<const TowerCell> cells) {
  SiteMap m;
  for (const auto& c : cells) m.emplace(c.tower_id, c.site);
  return m;
}

// Fixed-width bins starting at zero: bin i covers [i·w, (i+1)·w).
struct Histogram {
  double bin_width = 1.0;
  std::vector<double> mass;

  double low(std::size_t i) const { return static_cast<double>(i) * bin_width; }
  double high(std::size_t i) const { return static_cast<double>(i + 1) * bin_width; }
  double total() const {
    double s = 0.0;
    for (double m : mass) s += m;
    return s;
  }
  // Mean under uniform-within-bin density (bin midpoints).
  double mean() const {
    double s = 0.0, t = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      s += mass[i] * (low(i) + 0.5 * bin_width);
      t += mass[i];
    }
    return t > 0 ? s / t : 0.0;
  }
};

struct CommunityTrajectories {
  std::size_t samples = 0;
  std::size_t self_loops = 0;
  // Point mass at D = 0 (home tower == work tower), kept apart from bin 0.
  double zero_mass = 0.0;
  // D > 0 part; zero_mass + distance.total() == 1.
  Histogram distance;
  // Direction, degrees counterclockwise from East in [0, 360); D > 0 users only.
  Histogram angle;
  // distance-bin x angle-bin masses of the D > 0 users, row-major;
  // sums to 1 - zero_mass.
  std::vector<double> joint;
  double mean_distance = 0.0;  // sample statistics over all users, meters
  double std_distance = 0.0;

  double histogram_mean_distance() const { return distance.mean() * distance.total(); }
};

struct TrajectoryStats {
  double bin_width_distance = 500.0;
  double bin_width_angle = 10.0;
  std::vector<CommunityTrajectories> communities;
};

inline double direction_degrees(Point from, Point to) {
  double theta = std::atan2(to.y - from.y, to.x - from.x) * 180.0 / std::numbers::pi;
  if (theta < 0) theta += 360.0;
  if (theta >= 360.0) theta = 0.0;
  return theta;
}

inline const Point& site_at(const SiteMap& sites, const TowerId& id) {
  auto it = sites.find(id);
  if (it == sites.end()) throw DataError("no coordinates for tower '" + id + "'");
  return it->second;
}

// Empirical H-W distance and direction distributions per community.
inline TrajectoryStats fit_distributions(std::span<const UserAnchor> anchors, const SiteMap& sites,
                                         double bin_width_distance = 500.0, double bin_width_angle = 10.0,
                                         std::size_t n_communities = 0) {
  if (!(bin_width_distance > 0) || !(bin_width_angle > 0) || bin_width_angle > 360.0) {
    throw ConfigError("fit_distributions: bin widths must be positive (angle <= 360)");
  }
  std::size_t nc = n_communities;
  for (const auto& a : anchors) {
    if (!a.community || *a.community < 0) throw DataError("fit_distributions: user '" + a.user_id + "' unlabeled");
    nc = std::max(nc, static_cast<std::size_t>(*a.community) + 1);
  }
  const std::size_t n_angle = static_cast<std::size_t>(std::ceil(360.0 / bin_width_angle - 1e-9));

  struct Sample {
    double d;
    double theta;
  };
  std::vector<std::vector<Sample>> per(nc);
  for (const auto& a : anchors) {
    const Point h = site_at(sites, a.home_tower), w = site_at(sites, a.work_tower);
    const double d = a.home_tower == a.work_tower ? 0.0 : distance(h, w);
    per[static_cast<std::size_t>(*a.community)].push_back({d, d > 0 ? direction_degrees(h, w) : 0.0});
  }

  TrajectoryStats stats;
  stats.bin_width_distance = bin_width_distance;
  stats.bin_width_angle = bin_width_angle;
  stats.communities.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& s = per[c];
    if (s.empty()) throw DataError("fit_distributions: community " + std::to_string(c) + " has no users");
    auto& t = stats.communities[c];
    t.samples = s.size();
    t.distance.bin_width = bin_width_distance;
    t.angle.bin_width = bin_width_angle;
    t.angle.mass.assign(n_angle, 0.0);

    std::size_t n_dist = 0;
    double sum = 0.0;
    for (const auto& x : s) {
      sum += x.d;
      if (x.d > 0) n_dist = std::max(n_dist, static_cast<std::size_t>(x.d / bin_width_distance) + 1);
    }
    t.mean_distance = sum / static_cast<double>(s.size());
    double ss = 0.0;
    for (const auto& x : s) ss += (x.d - t.mean_distance) * (x.d - t.mean_distance);
    t.std_distance = std::sqrt(ss / static_cast<double>(s.size()));

    t.distance.mass.assign(n_dist, 0.0);
    t.joint.assign(n_dist * n_angle, 0.0);
    const double unit = 1.0 / static_cast<double>(s.size());
    std::size_t moving = 0;
    for (const auto& x : s) {
      if (x.d == 0.0) {
        ++t.self_loops;
        t.zero_mass += unit;
        continue;
      }
      ++moving;
      const auto db = static_cast<std::size_t>(x.d / bin_width_distance);
      const auto ab = std::min(static_cast<std::size_t>(x.theta / bin_width_angle), n_angle - 1);
      t.distance.mass[db] += unit;
      t.joint[db * n_angle + ab] += unit;
      t.angle.mass[ab] += 1.0;
    }
    if (moving > 0) {
      for (auto& m : t.angle.mass) m /= static_cast<double>(moving);
    } else {
      for (auto& m : t.angle.mass) m = 1.0 / static_cast<double>(n_angle);
    }
  }
  return stats;
}

enum class RelocationMode {
  // D and θ drawn independently from their marginals
  marginal,
  // (D, θ) drawn from the joint 2-D histogram
  joint,
};

namespace detail {

struct Sampler {
  double zero_mass = 0.0;
  double dist_width = 1.0;
  double angle_width = 1.0;
  std::size_t n_angle = 1;
  std::vector<double> dist_cdf;   // conditional on D > 0
  std::vector<double> angle_cdf;
  std::vector<double> joint_cdf;  // conditional on D > 0

  static std::vector<double> cdf(std::span<const double> mass) {
    std::vector<double> out(mass.size());
    double run = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      run += mass[i];
      out[i] = run;
    }
    if (run > 0) {
      for (auto& v : out) v /= run;
    }
    return out;
  }

  static std::size_t pick(const std::vector<double>& cdf, double u) {
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    // first bin whose cdf exceeds u; empty bins never qualify
    if (it == cdf.end()) --it;
    return static_cast<std::size_t>(it - cdf.begin());
  }

  explicit Sampler(const CommunityTrajectories& t)
      : zero_mass(t.zero_mass),
        dist_width(t.distance.bin_width),
        angle_width(t.angle.bin_width),
        n_angle(t.angle.mass.size()),
        dist_cdf(cdf(t.distance.mass)),
        angle_cdf(cdf(t.angle.mass)),
        joint_cdf(cdf(t.joint)) {}

  // Returns (D, θ degrees).
  std::pair<double, double> draw(Rng& rng, RelocationMode mode) const {
    if (dist_cdf.empty() || uniform01(rng) < zero_mass) return {0.0, 0.0};
    std::size_t db, ab;
    if (mode == RelocationMode::joint) {
      const std::size_t cell = pick(joint_cdf, uniform01(rng));
      db = cell / n_angle;
      ab = cell % n_angle;
    } else {
      db = pick(dist_cdf, uniform01(rng));
      ab = pick(angle_cdf, uniform01(rng));
    }
    const double d = (static_cast<double>(db) + uniform01(rng)) * dist_width;
    const double theta = std::min((static_cast<double>(ab) + uniform01(rng)) * angle_width, 360.0);
    return {d, theta};
  }
};

inline Point displace(Point home, double d, double theta_deg) {
  const double rad = theta_deg * std::numbers::pi / 180.0;
  return {home.x + d * std::cos(rad), home.y + d * std::sin(rad)};
}

// Index of each simulated work tower within locator.towers().
inline std::vector<std::size_t> relocate_indices(std::span<const UserAnchor> anchors,
                                                 const std::vector<Sampler>& samplers, const SiteMap& sites,
                                                 const TowerLocator& locator, Rng& rng, RelocationMode mode,
                                                 const std::unordered_map<TowerId, std::size_t>& tower_index) {
  std::vector<std::size_t> out;
  out.reserve(anchors.size());
  for (const auto& a : anchors) {
    const auto c = static_cast<std::size_t>(*a.community);
    const auto [d, theta] = samplers[c].draw(rng, mode);
    if (d == 0.0) {
      auto it = tower_index.find(a.home_tower);
      if (it != tower_index.end()) {
        out.push_back(it->second);
        continue;
      }
    }
    const Tower& t = locator.nearest(displace(site_at(sites, a.home_tower), d, theta));
    out.push_back(tower_index.at(t.id));
  }
  return out;
}

inline std::vector<Sampler> make_samplers(const TrajectoryStats& stats) {
  std::vector<Sampler> s;
  s.reserve(stats.communities.size());
  for (const auto& t : stats.communities) s.emplace_back(t);
  return s;
}

inline std::unordered_map<TowerId, std::size_t> index_towers(const TowerLocator& locator) {
  std::unordered_map<TowerId, std::size_t> m;
  for (std::size_t i = 0; i < locator.towers().size(); ++i) m.emplace(locator.towers()[i].id, i);
  return m;
}

inline void check_labels(std::span<const UserAnchor> anchors, const TrajectoryStats& stats) {
  for (const auto& a : anchors) {
    if (!a.community || *a.community < 0 || static_cast<std::size_t>(*a.community) >= stats.communities.size()) {
      throw DataError("relocation: user '" + a.user_id + "' has no fitted community");
    }
  }
}

}  // namespace detail

// Keeps each user's home and redraws the work location as home + D·(cos θ,
// sin θ) with (D, θ) from the user's community distributions; the work tower
// is the nearest site in `locator`. D = 0 keeps the home tower.
inline std::vector<UserAnchor> simulate_relocation(std::span<const UserAnchor> anchors, const TrajectoryStats& stats,
                                                   const SiteMap& sites, const TowerLocator& locator,
                                                   std::uint64_t seed,
                                                   RelocationMode mode = RelocationMode::marginal) {
  detail::check_labels(anchors, stats);
  Rng rng(seed);
  const auto samplers = detail::make_samplers(stats);
  const auto index = detail::index_towers(locator);
  const auto idx = detail::relocate_indices(anchors, samplers, sites, locator, rng, mode, index);
  std::vector<UserAnchor> out(anchors.begin(), anchors.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k].work_tower = locator.towers()[idx[k]].id;
  return out;
}

struct SIIResult {
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  RelocationMode mode = RelocationMode::marginal;
  std::vector<std::vector<double>> values;  // [community][replication]
  std::vector<double> mean;
  std::vector<double> std;  // population-style, divisor R
};

// Replication r relocates with sub-seed derive_seed(seed, r) and evaluates
// the isolation index per community over tower workplaces.
inline SIIResult sii_experiment(std::span<const UserAnchor> anchors, const TrajectoryStats& stats,
                                const SiteMap& sites, const TowerLocator& locator, std::size_t reps,
                                std::uint64_t seed, RelocationMode mode = RelocationMode::marginal) {
  if (reps < 2) throw ConfigError("sii_experiment: need at least 2 replications");
  detail::check_labels(anchors, stats);
  const std::size_t nc = stats.communities.size();
  const auto samplers = detail::make_samplers(stats);
  const auto index = detail::index_towers(locator);

  // units are the locator's towers, in id order
  std::vector<std::size_t> order(locator.towers().size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return locator.towers()[a].id < locator.towers()[b].id; });
  std::vector<std::size_t> column(order.size());
  CountsMatrix m;
  for (std::size_t r = 0; r < order.size(); ++r) {
    column[order[r]] = r;
    m.units.push_back(locator.towers()[order[r]].id);
  }

  SIIResult res;
  res.reps = reps;
  res.seed = seed;
  res.mode = mode;
  res.values.assign(nc, {});
  for (std::size_t r = 0; r < reps; ++r) {
    Rng rng(derive_seed(seed, r));
    const auto idx = detail::relocate_indices(anchors, samplers, sites, locator, rng, mode, index);
    m.c.assign(nc, std::vector<std::uint64_t>(m.units.size(), 0));
    m.row_totals.assign(nc, 0);
    m.col_totals.assign(m.units.size(), 0);
    m.total = anchors.size();
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      const auto c = static_cast<std::size_t>(*anchors[k].community);
      const std::size_t col = column[idx[k]];
      ++m.c[c][col];
      ++m.row_totals[c];
      ++m.col_totals[col];
    }
    for (std::size_t c = 0; c < nc; ++c) res.values[c].push_back(isolation_index(m, c));
  }
  res.mean.assign(nc, 0.0);
  res.std.assign(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    double s = 0.0;
    for (double v : res.values[c]) s += v;
    res.mean[c] = s / static_cast<double>(reps);
    double ss = 0.0;
    for (double v : res.values[c]) ss += (v - res.mean[c]) * (v - res.mean[c]);
    res.std[c] = std::sqrt(ss / static_cast<double>(reps));
  }
  return res;
}

struct ZDistance {
  double z = 0.0;
  bool infinite = false;
  bool segregated = false;
};

// |RII − ⟨SII⟩| / σ_SII. Segregated means RII above the null mean by more
// than `threshold` standard deviations. σ = 0 gives an infinite separation
// unless RII equals the mean exactly.
inline ZDistance z_distance(double rii, double sii_mean, double sii_std, double threshold = 3.0) {
  ZDistance z;
  const double gap = std::abs(rii - sii_mean);
  if (sii_std > 0) {
    z.z = gap / sii_std;
  } else if (gap > 0) {
    z.z = std::numeric_limits<double>::infinity();
    z.infinite = true;
  }
  z.segregated = rii > sii_mean && z.z > threshold;
  return z;
}

}  // namespace mobiseg
