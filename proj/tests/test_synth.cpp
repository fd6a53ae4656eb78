#include <gtest/gtest.h>

#include <sstream>

#include "mobiseg/io.hpp"
#include "mobiseg/segregation.hpp"
#include "mobiseg/synth.hpp"

using namespace mobiseg;

namespace {

std::vector<UserAnchor> planted_anchors(const SynthCity& city) {
  std::vector<UserAnchor> out;
  for (const auto& u : city.users) out.push_back({u.user_id, u.home_tower, u.work_tower, 0, 0, 0, 0, u.community});
  return out;
}

std::vector<double> planted_rii(const SynthCity& city, std::size_t k) {
  const auto m = counts_matrix(planted_anchors(city), work_tower_unit, k);
  std::vector<double> r;
  for (std::size_t c = 0; c < k; ++c) r.push_back(isolation_index(m, c));
  return r;
}

}  // namespace

TEST(Synth, PingsRoundTripToPlantedAnchors) {
  SynthConfig cfg;
  cfg.n_users = 800;
  cfg.n_towers = 60;
  cfg.noise_pings_per_day = 2;
  cfg.daily_variation = 0.3;
  const auto city = generate_city(cfg);
  std::stringstream buf;
  io::write_pings(buf, city.pings);
  const auto parsed = parse_pings(buf);
  EXPECT_EQ(parsed.malformed, 0u);
  ASSERT_EQ(parsed.records.size(), city.pings.size());
  std::unordered_set<TowerId> kept;
  for (const auto& t : city.towers) kept.insert(t.id);
  const auto r = infer_home_work(parsed.records, kept);
  EXPECT_EQ(r.log.rejected(), 0u);
  ASSERT_EQ(r.anchors.size(), city.users.size());
  for (std::size_t i = 0; i < r.anchors.size(); ++i) {
    EXPECT_EQ(r.anchors[i].user_id, city.users[i].user_id);
    EXPECT_EQ(r.anchors[i].home_tower, city.users[i].home_tower);
    EXPECT_EQ(r.anchors[i].work_tower, city.users[i].work_tower);
  }
}

TEST(Synth, DeterministicFromSeed) {
  SynthConfig cfg;
  cfg.n_users = 200;
  cfg.n_towers = 40;
  const auto a = generate_city(cfg), b = generate_city(cfg);
  ASSERT_EQ(a.pings.size(), b.pings.size());
  for (std::size_t i = 0; i < a.pings.size(); ++i) {
    EXPECT_EQ(a.pings[i].tower_id, b.pings[i].tower_id);
    EXPECT_EQ(a.pings[i].time, b.pings[i].time);
  }
  cfg.seed = 2;
  const auto c = generate_city(cfg);
  std::size_t same = 0;
  for (std::size_t i = 0; i < c.users.size(); ++i) same += c.users[i].home_tower == a.users[i].home_tower ? 1 : 0;
  EXPECT_LT(same, c.users.size() / 2);
}

TEST(Synth, NoMixingIsFullySegregated) {
  SynthConfig cfg;
  cfg.mu = 0.0;
  cfg.n_users = 1000;
  cfg.n_towers = 80;
  const auto city = generate_city(cfg);
  for (double r : planted_rii(city, cfg.n_communities)) EXPECT_EQ(r, 1.0);
  for (const auto& u : city.users) {
    EXPECT_EQ(city.tower_community.at(u.home_tower), u.community);
    EXPECT_EQ(city.tower_community.at(u.work_tower), u.community);
  }
}

TEST(Synth, UniformWorkApproachesShare) {
  SynthConfig cfg;
  cfg.uniform_work = true;
  cfg.n_users = 8000;
  cfg.n_towers = 100;
  const auto city = generate_city(cfg);
  const double k = 0.25;
  const double bias = 100.0 * (1 - k) / 8000.0;
  for (double r : planted_rii(city, 4)) EXPECT_NEAR(r, k + bias, 0.02);
}

TEST(Synth, IsolationNonIncreasingInMixing) {
  // with four clusters mixing is complete at mu = 3/4; beyond that users
  // avoid their own cluster and isolation rises again
  const std::vector<double> mus{0.0, 0.25, 0.5, 0.75};
  std::vector<double> mean(mus.size(), 0.0);
  int violations = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::vector<double> per_mu;
    for (double mu : mus) {
      SynthConfig cfg;
      cfg.mu = mu;
      cfg.seed = seed;
      cfg.n_users = 600;
      cfg.n_towers = 60;
      cfg.n_weeks = 1;
      const auto r = planted_rii(generate_city(cfg), 4);
      per_mu.push_back((r[0] + r[1] + r[2] + r[3]) / 4.0);
    }
    for (std::size_t i = 1; i < per_mu.size(); ++i) violations += per_mu[i] > per_mu[i - 1] ? 1 : 0;
    for (std::size_t i = 0; i < mus.size(); ++i) mean[i] += per_mu[i] / 10.0;
  }
  EXPECT_LE(violations, 1);
  for (std::size_t i = 1; i < mean.size(); ++i) EXPECT_LE(mean[i], mean[i - 1]);
}

TEST(Synth, SelBlocksFollowClusters) {
  SynthConfig cfg;
  cfg.sel_purity = 1.0;
  cfg.n_users = 100;
  const auto city = generate_city(cfg);
  ASSERT_EQ(city.blocks.size(), 256u);
  double covered = 0.0;
  for (const auto& b : city.blocks) {
    EXPECT_NE(b.sel, SelGroup::S5);  // four clusters use S1..S4
    covered += area(b.shape);
  }
  EXPECT_NEAR(covered, area(city.urban), 1e-6 * area(city.urban));
  for (const auto& t : city.towers) EXPECT_TRUE(contains(city.urban, t.site));
  // a block at a centroid carries that cluster's dominant group
  for (std::size_t c = 0; c < city.centroids.size(); ++c) {
    for (const auto& b : city.blocks) {
      if (contains(b.shape, city.centroids[c])) {
        EXPECT_EQ(b.sel, dominant_sel(static_cast<int>(c)));
      }
    }
  }
}

TEST(Synth, InvalidConfigs) {
  SynthConfig cfg;
  cfg.mu = 1.5;
  EXPECT_THROW(generate_city(cfg), ConfigError);
  cfg = {};
  cfg.n_towers = 2;
  EXPECT_THROW(generate_city(cfg), ConfigError);
  cfg = {};
  cfg.cluster_spread = cfg.distance_scale;  // clusters pile on top of each other
  EXPECT_THROW(generate_city(cfg), GeometryError);
}
