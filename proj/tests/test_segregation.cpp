#include <gtest/gtest.h>

#include <random>

#include "mobiseg/segregation.hpp"
#include "oracles.hpp"

using namespace mobiseg;

namespace {

CountsMatrix from_dense(const std::vector<std::vector<std::uint64_t>>& c) {
  CountsMatrix m;
  for (std::size_t i = 0; i < c[0].size(); ++i) m.units.push_back("w" + std::to_string(i));
  m.c = c;
  m.row_totals.assign(c.size(), 0);
  m.col_totals.assign(c[0].size(), 0);
  for (std::size_t r = 0; r < c.size(); ++r) {
    for (std::size_t i = 0; i < c[r].size(); ++i) {
      m.row_totals[r] += c[r][i];
      m.col_totals[i] += c[r][i];
      m.total += c[r][i];
    }
  }
  return m;
}

UserAnchor anchor(const std::string& u, const std::string& h, const std::string& w, std::optional<int> c = {}) {
  return UserAnchor{u, h, w, 0, 0, 0, 0, c};
}

}  // namespace

TEST(Isolation, SegregatedLimitIsOne) {
  const auto m = from_dense({{5, 7, 0, 0}, {0, 0, 3, 9}});
  EXPECT_EQ(isolation_index(m, 0), 1.0);
  EXPECT_EQ(isolation_index(m, 1), 1.0);
}

TEST(Isolation, ProportionalLimitIsShare) {
  // every unit holds the two communities in ratio 1:3, so k = 1/4 and 3/4
  const auto m = from_dense({{1, 2, 5, 10}, {3, 6, 15, 30}});
  EXPECT_NEAR(isolation_index(m, 0), 0.25, 1e-15);
  EXPECT_NEAR(isolation_index(m, 1), 0.75, 1e-15);
  EXPECT_NEAR(well_mixed_index(m, 0), 0.25, 1e-15);
}

TEST(Isolation, MatchesDefinitionOnRandomMatrices) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t r = 1 + rng() % 5, u = 1 + rng() % 12;
    std::vector<std::vector<std::uint64_t>> c(r, std::vector<std::uint64_t>(u));
    std::vector<std::vector<double>> d(r, std::vector<double>(u));
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < u; ++j) d[i][j] = static_cast<double>(c[i][j] = rng() % 6);
      c[i][0] += 1;
      d[i][0] += 1;
    }
    const auto m = from_dense(c);
    for (std::size_t i = 0; i < r; ++i) {
      const double p = isolation_index(m, i);
      EXPECT_NEAR(p, oracle::isolation(d, i), 1e-12);
      EXPECT_GT(p, 0.0);
      EXPECT_LE(p, 1.0 + 1e-15);
      EXPECT_GE(p, well_mixed_index(m, i) - 1e-12);  // Cauchy-Schwarz lower bound
    }
  }
}

TEST(Isolation, EmptyCommunityThrows) {
  const auto m = from_dense({{1, 2}, {0, 0}});
  EXPECT_THROW(isolation_index(m, 1), DataError);
  EXPECT_THROW(isolation_index(m, 5), DataError);
}

TEST(Counts, FromAnchors) {
  std::vector<UserAnchor> a{anchor("u1", "h1", "w2", 0), anchor("u2", "h1", "w1", 0), anchor("u3", "h2", "w2", 1),
                            anchor("u4", "h2", "w2", 1)};
  const auto m = counts_matrix(a, work_tower_unit, 3);
  EXPECT_EQ(m.units, (std::vector<std::string>{"w1", "w2"}));
  EXPECT_EQ(m.community_count(), 3u);
  EXPECT_EQ(m.c[0], (std::vector<std::uint64_t>{1, 1}));
  EXPECT_EQ(m.c[1], (std::vector<std::uint64_t>{0, 2}));
  EXPECT_EQ(m.col_totals, (std::vector<std::uint64_t>{1, 3}));
  EXPECT_EQ(m.total, 4u);
  // community 0: (1/2)(1/1) + (1/2)(1/3)
  EXPECT_NEAR(isolation_index(m, 0), 0.5 + 1.0 / 6.0, 1e-15);
  a.push_back(anchor("u5", "h1", "w1"));
  EXPECT_THROW(counts_matrix(a), DataError);
}

TEST(WellMixed, MonteCarloApproachesShare) {
  // 3 communities of 3000/2000/1000 users over 20 units
  std::vector<std::vector<std::uint64_t>> c(3, std::vector<std::uint64_t>(20, 0));
  for (std::size_t i = 0; i < 20; ++i) {
    c[0][i] = 150;
    c[1][i] = 100;
    c[2][i] = 50;
  }
  const auto m = from_dense(c);
  const auto est = well_mixed_monte_carlo(m, 200, 9);
  for (std::size_t r = 0; r < 3; ++r) {
    const double k = well_mixed_index(m, r);
    // finite-sample excess is about units * (1 - k) / N
    const double bias = 20.0 * (1.0 - k) / 6000.0;
    EXPECT_NEAR(est[r].mean, k + bias, 5.0 * est[r].std / std::sqrt(200.0) + 1e-3);
    EXPECT_EQ(est[r].values.size(), 200u);
  }
  const auto again = well_mixed_monte_carlo(m, 200, 9);
  EXPECT_EQ(again[0].values, est[0].values);
}

TEST(Sel, CommunityProfilesByAreaAndUsers) {
  const auto p = make_partition({"a", "b", "c"}, {0, 0, 1});
  std::vector<TowerCell> cells{
      {"a", {0, 0}, rectangle(0, 0, 1, 1), 1.0, SelProfile{1, 0, 0, 0, 0}},
      {"b", {2, 0}, rectangle(1, 0, 4, 1), 1.0, SelProfile{0, 1, 0, 0, 0}},
      {"c", {5, 0}, rectangle(4, 0, 5, 1), 1.0, std::nullopt},
      {"z", {9, 0}, rectangle(8, 0, 9, 1), 1.0, SelProfile{0, 0, 1, 0, 0}},
  };
  const auto by_area = community_sel(p, cells);
  ASSERT_TRUE(by_area[0]);
  EXPECT_NEAR((*by_area[0])[0], 0.25, 1e-15);
  EXPECT_NEAR((*by_area[0])[1], 0.75, 1e-15);
  EXPECT_FALSE(by_area[1]);
  const std::map<TowerId, double> users{{"a", 3}, {"b", 1}};
  const auto by_users = community_sel(p, cells, SelWeighting::users, &users);
  EXPECT_NEAR((*by_users[0])[0], 0.75, 1e-15);
  EXPECT_THROW(community_sel(p, cells, SelWeighting::users), std::invalid_argument);
}

TEST(Labels, DropUsersOutsidePartition) {
  const auto p = make_partition({"a", "b", "c"}, {0, 0, 1});
  std::vector<UserAnchor> a{anchor("u1", "a", "c"), anchor("u2", "c", "b"), anchor("u3", "x", "a"),
                            anchor("u4", "a", "x")};
  const auto l = label_anchors(a, p);
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0].community, 0);
  EXPECT_EQ(l[1].community, 1);
}
