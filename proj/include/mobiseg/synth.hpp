#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "mobiseg/common.hpp"
#include "mobiseg/geometry.hpp"
#include "mobiseg/ingest.hpp"

namespace mobiseg {

struct SynthConfig {
  std::size_t n_towers = 200;
  std::size_t n_users = 5000;
  std::size_t n_communities = 4;
  // probability a user works outside their community's cluster
  double mu = 0.1;
  // radius of the regular polygon carrying the cluster centroids, meters
  double distance_scale = 7500.0;
  // Gaussian tower scatter per cluster; 0 means 0.4 * distance_scale, which
  // makes neighbouring clusters touch
  double cluster_spread = 0.0;
  // work towers uniform over the whole city, ignoring mu
  bool uniform_work = false;
  // per user and weekday, probability of working elsewhere that weekday
  // (at most two such weekdays per user)
  double daily_variation = 0.0;
  // probability a census block carries its community's dominant SEL group
  double sel_purity = 0.8;
  std::size_t n_weeks = 2;
  std::size_t pings_per_window = 3;
  std::size_t noise_pings_per_day = 1;
  std::uint64_t seed = 1;
};

struct PlantedUser {
  UserId user_id;
  TowerId home_tower;
  TowerId work_tower;
  int community = 0;
};

struct SynthCity {
  std::vector<Tower> towers;
  Polygon urban;
  std::vector<CensusBlock> blocks;
  std::vector<PingRecord> pings;
  std::map<TowerId, int> tower_community;
  std::vector<PlantedUser> users;  // sorted by user_id
  std::vector<Point> centroids;
};

inline SelGroup dominant_sel(int community) { return static_cast<SelGroup>(community % 5); }

namespace detail {

inline std::string padded_id(char prefix, std::size_t i, std::size_t n) {
  const int width = static_cast<int>(std::to_string(std::max<std::size_t>(n, 1)).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

inline double gaussian(Rng& rng) {
  // Box-Muller on the portable uniform stream
  double u1;
  do {
    u1 = uniform01(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline CivilTime at_minute(std::chrono::sys_days day, unsigned minute) {
  const std::chrono::year_month_day ymd{day};
  return CivilTime{static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                   minute / 60, minute % 60};
}

}  // namespace detail

// Synthetic city with planted communities: one Gaussian tower cluster per
// community on a regular polygon, users with homes in their cluster, and
// pings that reproduce the planted (home, work) anchors exactly under the
// default inference rules. Ping times keep a 30-minute margin from every
// window boundary.
inline SynthCity generate_city(const SynthConfig& cfg) {
  if (cfg.n_communities == 0 || cfg.n_towers < cfg.n_communities || cfg.n_users == 0) {
    throw ConfigError("synth: need n_communities >= 1, n_towers >= n_communities, n_users >= 1");
  }
  if (!(cfg.mu >= 0.0 && cfg.mu <= 1.0)) throw ConfigError("synth: mu must lie in [0, 1]");
  if (!(cfg.daily_variation >= 0.0 && cfg.daily_variation <= 1.0)) {
    throw ConfigError("synth: daily_variation must lie in [0, 1]");
  }
  if (!(cfg.sel_purity >= 0.0 && cfg.sel_purity <= 1.0)) throw ConfigError("synth: sel_purity must lie in [0, 1]");
  if (!(cfg.distance_scale > 0)) throw ConfigError("synth: distance_scale must be positive");
  if (cfg.n_weeks == 0 || cfg.pings_per_window == 0) throw ConfigError("synth: need pings");
  const std::size_t K = cfg.n_communities;
  const double spread = cfg.cluster_spread > 0 ? cfg.cluster_spread : 0.4 * cfg.distance_scale;
  if (K > 1) {
    const double separation = 2.0 * cfg.distance_scale * std::sin(std::numbers::pi / static_cast<double>(K));
    if (separation < 2.0 * spread) {
      throw GeometryError("synth: clusters overlap (centroid separation " + std::to_string(separation) +
                          " m < 2 x spread " + std::to_string(spread) + " m)");
    }
  }

  Rng rng(cfg.seed);
  SynthCity city;
  for (std::size_t c = 0; c < K; ++c) {
    if (K == 1) {
      city.centroids.push_back({0.0, 0.0});
    } else {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(K) + std::numbers::pi / 4;
      city.centroids.push_back({cfg.distance_scale * std::cos(a), cfg.distance_scale * std::sin(a)});
    }
  }

  std::vector<std::vector<std::size_t>> members(K);
  for (std::size_t i = 0; i < cfg.n_towers; ++i) {
    const std::size_t c = i * K / cfg.n_towers;
    Point p;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      p = {city.centroids[c].x + spread * detail::gaussian(rng), city.centroids[c].y + spread * detail::gaussian(rng)};
      ok = std::none_of(city.towers.begin(), city.towers.end(),
                        [&](const Tower& t) { return squared_distance(t.site, p) < 1.0; });
    }
    if (!ok) throw GeometryError("synth: could not place distinct towers");
    const TowerId id = detail::padded_id('t', i + 1, cfg.n_towers);
    city.towers.push_back({id, p});
    city.tower_community[id] = static_cast<int>(c);
    members[c].push_back(i);
  }

  // urban area: tower bounding box padded by half its larger extent
  Box box = bounding_box(std::vector<Point>([&] {
    std::vector<Point> pts;
    for (const auto& t : city.towers) pts.push_back(t.site);
    return pts;
  }()));
  const double pad = 0.5 * std::max({box.width(), box.height(), spread});
  box = Box{box.min_x - pad, box.min_y - pad, box.max_x + pad, box.max_y + pad};
  city.urban = rectangle(box);

  // census blocks on a 16 x 16 grid, labeled after the nearest cluster
  constexpr std::size_t grid = 16;
  const double bw = box.width() / grid, bh = box.height() / grid;
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const double x0 = box.min_x + static_cast<double>(gx) * bw, y0 = box.min_y + static_cast<double>(gy) * bh;
      const Point center{x0 + 0.5 * bw, y0 + 0.5 * bh};
      std::size_t nearest = 0;
      for (std::size_t c = 1; c < K; ++c) {
        if (squared_distance(center, city.centroids[c]) < squared_distance(center, city.centroids[nearest])) {
          nearest = c;
        }
      }
      SelGroup g = dominant_sel(static_cast<int>(nearest));
      if (uniform01(rng) >= cfg.sel_purity) {
        const std::size_t shift = 1 + uniform_index(rng, sel_group_count - 1);
        g = static_cast<SelGroup>((static_cast<std::size_t>(g) + shift) % sel_group_count);
      }
      city.blocks.push_back({rectangle(x0, y0, x0 + bw, y0 + bh), g});
    }
  }

  auto draw_work = [&](std::size_t c, std::size_t exclude) -> std::size_t {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::size_t w;
      if (cfg.uniform_work || K == 1) {
        w = uniform_index(rng, cfg.n_towers);
      } else if (uniform01(rng) < cfg.mu) {
        const std::size_t others = cfg.n_towers - members[c].size();
        std::size_t k = uniform_index(rng, others);
        std::size_t oc = 0;
        while (oc == c || k >= members[oc].size()) {
          if (oc != c) k -= members[oc].size();
          ++oc;
        }
        w = members[oc][k];
      } else {
        w = members[c][uniform_index(rng, members[c].size())];
      }
      if (w != exclude) return w;
    }
    return exclude == 0 ? 1 : 0;
  };

  const std::chrono::sys_days start{std::chrono::year{2015} / std::chrono::March / 2};  // a Monday
  const std::size_t n_days = cfg.n_weeks * 7;
  auto night_minute = [&]() -> unsigned {
    // [00:30, 06:30) or [22:30, 23:30), proportional to length
    const auto u = static_cast<unsigned>(uniform_index(rng, 420));
    return u < 360 ? 30 + u : 22 * 60 + 30 + (u - 360);
  };
  auto work_minute = [&]() -> unsigned { return 9 * 60 + 30 + static_cast<unsigned>(uniform_index(rng, 420)); };
  auto evening_minute = [&]() -> unsigned { return 18 * 60 + static_cast<unsigned>(uniform_index(rng, 180)); };

  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    const std::size_t c = u % K;
    const std::size_t home = members[c][uniform_index(rng, members[c].size())];
    const std::size_t work = draw_work(c, cfg.n_towers);
    PlantedUser pu{detail::padded_id('u', u + 1, cfg.n_users), city.towers[home].id, city.towers[work].id,
                   static_cast<int>(c)};

    std::array<std::size_t, 5> day_work;
    day_work.fill(work);
    std::size_t varied = 0;
    for (auto& dw : day_work) {
      if (varied < 2 && cfg.daily_variation > 0 && uniform01(rng) < cfg.daily_variation) {
        dw = draw_work(c, work);
        ++varied;
      }
    }

    for (std::size_t d = 0; d < n_days; ++d) {
      const std::chrono::sys_days day = start + std::chrono::days{static_cast<int>(d)};
      const unsigned wd = std::chrono::weekday{day}.iso_encoding();
      if (wd > 5) continue;
      for (std::size_t k = 0; k < cfg.pings_per_window; ++k) {
        city.pings.push_back({pu.user_id, city.towers[home].id, detail::at_minute(day, night_minute())});
      }
      for (std::size_t k = 0; k < cfg.pings_per_window; ++k) {
        city.pings.push_back({pu.user_id, city.towers[day_work[wd - 1]].id, detail::at_minute(day, work_minute())});
      }
      for (std::size_t k = 0; k < cfg.noise_pings_per_day; ++k) {
        const std::size_t t = uniform_index(rng, cfg.n_towers);
        city.pings.push_back({pu.user_id, city.towers[t].id, detail::at_minute(day, evening_minute())});
      }
    }
    city.users.push_back(std::move(pu));
  }
  return city;
}

}  // namespace mobiseg
