#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mobiseg/geometry.hpp"
#include "oracles.hpp"

using namespace mobiseg;

namespace {

std::vector<oracle::P> to_oracle(const Ring& r) {
  std::vector<oracle::P> out;
  for (auto p : r) out.push_back({p.x, p.y});
  return out;
}

bool oracle_inside(const Polygon& poly, oracle::P q) {
  if (!oracle::inside(to_oracle(poly.outer), q)) return false;
  for (const auto& h : poly.holes) {
    if (oracle::inside(to_oracle(h), q)) return false;
  }
  return true;
}

// Random star-shaped ring around c (simple, generally non-convex).
Ring star(std::mt19937_64& rng, Point c, double r0, double r1, int n) {
  std::uniform_real_distribution<double> rad(r0, r1);
  Ring ring;
  for (int i = 0; i < n; ++i) {
    const double a = 2 * std::numbers::pi * i / n;
    const double r = rad(rng);
    ring.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
  }
  return ring;
}

}  // namespace

TEST(Polygon, AreaAndOrientation) {
  Polygon p = make_polygon({{0, 0}, {0, 2}, {3, 2}, {3, 0}, {0, 0}});
  EXPECT_DOUBLE_EQ(area(p), 6.0);
  EXPECT_GT(signed_area(p.outer), 0.0);
  EXPECT_EQ(p.outer.size(), 4u);
  Polygon h = make_polygon({{0, 0}, {4, 0}, {4, 4}, {0, 4}}, {{{1, 1}, {2, 1}, {2, 2}, {1, 2}}});
  EXPECT_LT(signed_area(h.holes[0]), 0.0);
  EXPECT_DOUBLE_EQ(area(h), 15.0);
}

TEST(Polygon, RejectsBadRings) {
  EXPECT_THROW(make_polygon({{0, 0}, {1, 1}}), GeometryError);
  EXPECT_THROW(make_polygon({{0, 0}, {2, 2}, {2, 0}, {0, 2}}), GeometryError);  // bow tie
  EXPECT_THROW(make_polygon({{0, 0}, {1, 0}, {2, 0}}), GeometryError);          // zero area
}

TEST(Polygon, ContainsCountsBoundaryAndRespectsHoles) {
  Polygon h = make_polygon({{0, 0}, {4, 0}, {4, 4}, {0, 4}}, {{{1, 1}, {2, 1}, {2, 2}, {1, 2}}});
  EXPECT_TRUE(contains(h, {0, 2}));
  EXPECT_TRUE(contains(h, {4, 4}));
  EXPECT_TRUE(contains(h, {3, 3}));
  EXPECT_FALSE(contains(h, {1.5, 1.5}));
  EXPECT_TRUE(contains(h, {1, 1.5}));  // hole boundary
  EXPECT_FALSE(contains(h, {5, 1}));
}

TEST(Intersection, OverlappingSquaresExact) {
  auto a = rectangle(0, 0, 2, 2), b = rectangle(1, 1, 3, 3);
  EXPECT_NEAR(polygon_intersection_area(a, b), 1.0, 1e-12);
  EXPECT_NEAR(polygon_intersection_area(a, rectangle(5, 5, 6, 6)), 0.0, 1e-12);
  EXPECT_NEAR(polygon_intersection_area(a, a), 4.0, 1e-12);
}

TEST(Intersection, NonConvexWithHolesMatchesGridSampling) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    Polygon a = make_polygon(star(rng, {0, 0}, 2, 5, 11), {star(rng, {0.3, 0.2}, 0.4, 1.0, 7)});
    Polygon b = make_polygon(star(rng, {1.5, 0.5}, 1.5, 4.5, 9));
    const double got = polygon_intersection_area(a, b);
    const double ref = oracle::grid_area(-6, -6, 7, 7, 900, [&](oracle::P q) {
      return oracle_inside(a, q) && oracle_inside(b, q);
    });
    EXPECT_NEAR(got, ref, 0.02 * std::max(ref, 1.0)) << "trial " << trial;
    EXPECT_NEAR(polygon_intersection_area(b, a), got, 1e-9);
    EXPECT_LE(got, std::min(area(a), area(b)) + 1e-9);
  }
}

TEST(Voronoi, CellsTileTheBoundsAndMatchNearestSite) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<Tower> towers;
  for (int i = 0; i < 60; ++i) towers.push_back({"t" + std::to_string(100 + i), {u(rng), u(rng)}});
  const Polygon bounds = rectangle(-5, -5, 105, 105);
  const auto cells = compute_voronoi(towers, bounds);
  ASSERT_EQ(cells.size(), towers.size());
  double total = 0.0;
  for (const auto& c : cells) {
    total += area(c.cell);
    EXPECT_TRUE(contains(c.cell, c.site));
  }
  EXPECT_NEAR(total, area(bounds), 1e-6 * area(bounds));

  std::vector<oracle::P> sites;
  std::vector<std::string> ids;
  for (const auto& t : towers) {
    sites.push_back({t.site.x, t.site.y});
    ids.push_back(t.id);
  }
  std::uniform_real_distribution<double> q(-5, 105);
  for (int k = 0; k < 2000; ++k) {
    const Point p{q(rng), q(rng)};
    const std::size_t n = oracle::nearest(sites, ids, {p.x, p.y});
    EXPECT_TRUE(contains(cells[n].cell, p));
  }
}

TEST(Voronoi, Errors) {
  const Polygon bounds = rectangle(0, 0, 10, 10);
  std::vector<Tower> dup{{"a", {1, 1}}, {"b", {5, 5}}, {"c", {1, 1}}};
  try {
    compute_voronoi(dup, bounds);
    FAIL() << "expected GeometryError";
  } catch (const GeometryError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'a'"), std::string::npos);
    EXPECT_NE(msg.find("'c'"), std::string::npos);
  }
  std::vector<Tower> outside{{"a", {1, 1}}, {"b", {11, 5}}};
  EXPECT_THROW(compute_voronoi(outside, bounds), GeometryError);
  std::vector<Tower> none;
  EXPECT_THROW(compute_voronoi(none, bounds), GeometryError);
  Polygon concave = make_polygon({{0, 0}, {10, 0}, {10, 10}, {5, 2}, {0, 10}});
  std::vector<Tower> one{{"a", {5, 1}}};
  EXPECT_THROW(compute_voronoi(one, concave), GeometryError);
}

TEST(UrbanFilter, ThresholdIsInclusive) {
  std::vector<Tower> towers{{"a", {2.5, 0.5}}, {"b", {7.5, 0.5}}};
  const auto cells = compute_voronoi(towers, rectangle(0, 0, 10, 1));
  auto kept = urban_overlap_filter(cells, rectangle(0, 0, 8.5, 1), 0.70);  // b: 3.5 / 5 = 0.70
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_NEAR(kept[1].urban_overlap, 0.70, 1e-12);
  EXPECT_DOUBLE_EQ(kept[0].urban_overlap, 1.0);
  kept = urban_overlap_filter(cells, rectangle(0, 0, 8.4, 1), 0.70);  // b: 0.68
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].tower_id, "a");
  EXPECT_THROW(urban_overlap_filter(cells, rectangle(0, 0, 1, 1), 1.5), ConfigError);
}

TEST(UrbanFilter, OverlapMonotoneInThreshold) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 50);
  std::vector<Tower> towers;
  for (int i = 0; i < 40; ++i) towers.push_back({"t" + std::to_string(i), {u(rng), u(rng)}});
  const auto cells = compute_voronoi(towers, rectangle(-10, -10, 60, 60));
  const Polygon urban = make_polygon(star(rng, {25, 25}, 15, 30, 13));
  std::size_t prev = cells.size() + 1;
  for (double t : {0.0, 0.2, 0.5, 0.7, 0.9, 1.0}) {
    const auto kept = urban_overlap_filter(cells, urban, t);
    EXPECT_LE(kept.size(), prev);
    prev = kept.size();
    for (const auto& c : kept) {
      EXPECT_GE(c.urban_overlap, t - 1e-9);
      EXPECT_LE(c.urban_overlap, 1.0);
    }
  }
}

TEST(Sel, AreaWeightedProfile) {
  std::vector<Tower> towers{{"a", {1, 1}}};
  const auto cells = compute_voronoi(towers, rectangle(0, 0, 2, 2));
  std::vector<CensusBlock> blocks{{rectangle(0, 0, 1, 2), SelGroup::S1},
                                  {rectangle(1, 0, 2, 1), SelGroup::S3},
                                  {rectangle(1, 1, 3, 3), SelGroup::S5}};
  const auto out = assign_sel(cells, blocks);
  ASSERT_TRUE(out[0].sel.has_value());
  const auto& s = *out[0].sel;
  EXPECT_NEAR(s[0], 0.5, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
  EXPECT_NEAR(s[2], 0.25, 1e-12);
  EXPECT_NEAR(s[4], 0.25, 1e-12);
  EXPECT_FALSE(assign_sel(cells, std::vector<CensusBlock>{{rectangle(5, 5, 6, 6), SelGroup::S2}})[0].sel);
}

TEST(Sel, ParseLabels) {
  EXPECT_EQ(parse_sel_group("S4"), SelGroup::S4);
  EXPECT_EQ(to_string(SelGroup::S2), "S2");
  EXPECT_THROW(parse_sel_group("S6"), DataError);
}

TEST(Locator, MatchesLinearScanIncludingOutsideQueries) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_real_distribution<double> u(0, 1000);
    std::vector<Tower> towers;
    std::vector<oracle::P> sites;
    std::vector<std::string> ids;
    const int n = 20 + 80 * trial;
    for (int i = 0; i < n; ++i) {
      Point p{u(rng), trial % 2 ? u(rng) * 0.1 : u(rng)};
      towers.push_back({"t" + std::to_string(i), p});
      sites.push_back({p.x, p.y});
      ids.push_back(towers.back().id);
    }
    const TowerLocator loc(towers);
    std::uniform_real_distribution<double> q(-800, 1800);
    for (int k = 0; k < 3000; ++k) {
      const Point p{q(rng), q(rng)};
      EXPECT_EQ(loc.nearest(p).id, ids[oracle::nearest(sites, ids, {p.x, p.y})]);
    }
  }
}

TEST(Locator, TiesGoToLowestId) {
  std::vector<Tower> towers{{"b", {0, 0}}, {"a", {2, 0}}, {"c", {1, 5}}};
  const TowerLocator loc(towers);
  EXPECT_EQ(loc.nearest({1, 0}).id, "a");
  std::vector<TowerCell> cells;
  for (const auto& t : towers) cells.push_back({t.id, t.site, rectangle(0, 0, 1, 1), 1.0, {}});
  EXPECT_EQ(locate_tower({1, 0}, cells), "a");
  EXPECT_EQ(locate_tower({0.2, 0}, cells), "b");
}

TEST(Bounds, PaddingGrowsEachDimensionByFraction) {
  const Box b = bounding_box(padded_bounds(rectangle(0, 0, 100, 50), 0.10));
  EXPECT_DOUBLE_EQ(b.min_x, -5.0);
  EXPECT_DOUBLE_EQ(b.max_x, 105.0);
  EXPECT_DOUBLE_EQ(b.min_y, -2.5);
  EXPECT_DOUBLE_EQ(b.max_y, 52.5);
}

TEST(Projection, OneDegreeOfLatitude) {
  const Point p = project_equirectangular(-70.6, -32.5, -70.6, -33.5);
  EXPECT_NEAR(p.y, 111195.0, 10.0);
  EXPECT_NEAR(p.x, 0.0, 1e-9);
  const Point e = project_equirectangular(-69.6, -33.5, -70.6, -33.5);
  EXPECT_NEAR(e.x, 111195.0 * std::cos(33.5 * std::numbers::pi / 180), 10.0);
}
