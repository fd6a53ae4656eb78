#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mobiseg/common.hpp"
#include "mobiseg/csv.hpp"
#include "mobiseg/geometry.hpp"
#include "mobiseg/graph.hpp"
#include "mobiseg/ingest.hpp"

// File formats: towers/anchors/network/partition CSV, GeoJSON polygons and
// cells.
namespace mobiseg::io {

using json = nlohmann::json;
using PointTransform = std::function<Point(Point)>;

inline Point identity_transform(Point p) { return p; }

// ---- towers ---------------------------------------------------------------

struct RawTowers {
  std::vector<Tower> towers;
  bool geographic = false;  // header was tower_id,lon,lat
};

inline RawTowers read_towers(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("towers: empty file");
  const auto header = csv::split(csv::trim_line(line));
  RawTowers raw;
  if (header == std::vector<std::string_view>{"tower_id", "x", "y"}) {
    raw.geographic = false;
  } else if (header == std::vector<std::string_view>{"tower_id", "lon", "lat"}) {
    raw.geographic = true;
  } else {
    throw DataError("towers: expected header 'tower_id,x,y' or 'tower_id,lon,lat'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = csv::trim_line(line);
    if (t.empty()) continue;
    const auto f = csv::split(t);
    Point p;
    if (f.size() != 3 || f[0].empty() || !csv::to_double(f[1], p.x) || !csv::to_double(f[2], p.y)) {
      throw DataError("towers: malformed line " + std::to_string(line_no));
    }
    raw.towers.push_back({std::string(f[0]), p});
  }
  std::vector<TowerId> ids;
  for (const auto& tw : raw.towers) ids.push_back(tw.id);
  std::sort(ids.begin(), ids.end());
  if (auto it = std::adjacent_find(ids.begin(), ids.end()); it != ids.end()) {
    throw DataError("towers: duplicate tower_id '" + *it + "'");
  }
  return raw;
}

inline void write_towers(std::ostream& out, std::span<const Tower> towers) {
  out << "tower_id,x,y\n";
  for (const auto& t : towers) out << t.id << ',' << csv::format_double(t.site.x) << ',' << csv::format_double(t.site.y) << '\n';
}

// ---- GeoJSON ----------------------------------------------------------------

inline Ring ring_from_json(const json& coords, const PointTransform& tf) {
  Ring r;
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2) throw DataError("geojson: bad coordinate");
    r.push_back(tf({c[0].get<double>(), c[1].get<double>()}));
  }
  return r;
}

inline Polygon polygon_from_json(const json& rings, const PointTransform& tf) {
  if (!rings.is_array() || rings.empty()) throw DataError("geojson: polygon without rings");
  Ring outer = ring_from_json(rings[0], tf);
  std::vector<Ring> holes;
  for (std::size_t i = 1; i < rings.size(); ++i) holes.push_back(ring_from_json(rings[i], tf));
  return make_polygon(std::move(outer), std::move(holes));
}

inline json ring_to_json(const Ring& r) {
  json a = json::array();
  for (const auto& p : r) a.push_back({p.x, p.y});
  if (!r.empty()) a.push_back({r.front().x, r.front().y});
  return a;
}

inline json polygon_to_json(const Polygon& p) {
  json rings = json::array();
  rings.push_back(ring_to_json(p.outer));
  for (const auto& h : p.holes) rings.push_back(ring_to_json(h));
  return json{{"type", "Polygon"}, {"coordinates", rings}};
}

// Polygon parts of a geometry (Polygon or MultiPolygon).
inline std::vector<Polygon> polygons_from_geometry(const json& geom, const PointTransform& tf) {
  const std::string type = geom.value("type", "");
  std::vector<Polygon> out;
  if (type == "Polygon") {
    out.push_back(polygon_from_json(geom.at("coordinates"), tf));
  } else if (type == "MultiPolygon") {
    for (const auto& part : geom.at("coordinates")) out.push_back(polygon_from_json(part, tf));
  } else {
    throw DataError("geojson: unsupported geometry type '" + type + "'");
  }
  return out;
}

inline std::vector<json> features_of(const json& doc) {
  const std::string type = doc.value("type", "");
  if (type == "FeatureCollection") return doc.at("features").get<std::vector<json>>();
  if (type == "Feature") return {doc};
  return {json{{"type", "Feature"}, {"properties", json::object()}, {"geometry", doc}}};
}

inline json parse_json(std::istream& in, const char* what) {
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(std::string(what) + ": invalid JSON (" + e.what() + ")");
  }
}

// All raw coordinates of a GeoJSON document, for picking a projection origin.
inline Box geojson_extent(const json& doc) {
  Box b;
  std::function<void(const json&)> walk = [&](const json& j) {
    if (j.is_array() && j.size() >= 2 && j[0].is_number() && j[1].is_number()) {
      b.extend({j[0].get<double>(), j[1].get<double>()});
      return;
    }
    if (j.is_array() || j.is_object()) {
      for (const auto& v : j) walk(v);
    }
  };
  for (const auto& f : features_of(doc)) walk(f.at("geometry").at("coordinates"));
  return b;
}

// Single polygon (urban boundary).
inline Polygon read_polygon(const json& doc, const PointTransform& tf = identity_transform) {
  std::vector<Polygon> parts;
  for (const auto& f : features_of(doc)) {
    auto p = polygons_from_geometry(f.at("geometry"), tf);
    parts.insert(parts.end(), p.begin(), p.end());
  }
  if (parts.size() != 1) throw DataError("urban boundary: expected exactly one polygon, got " + std::to_string(parts.size()));
  return parts[0];
}

inline std::vector<CensusBlock> read_blocks(const json& doc, const PointTransform& tf = identity_transform) {
  std::vector<CensusBlock> out;
  for (const auto& f : features_of(doc)) {
    const auto& props = f.contains("properties") && f["properties"].is_object() ? f["properties"] : json::object();
    if (!props.contains("sel") || !props["sel"].is_string()) throw DataError("census blocks: feature without 'sel'");
    const SelGroup g = parse_sel_group(props["sel"].get<std::string>());
    for (auto& p : polygons_from_geometry(f.at("geometry"), tf)) out.push_back({std::move(p), g});
  }
  return out;
}

inline json polygon_feature_collection(const Polygon& p) {
  return json{{"type", "FeatureCollection"},
              {"features", json::array({json{{"type", "Feature"}, {"properties", json::object()},
                                             {"geometry", polygon_to_json(p)}}})}};
}

inline json blocks_to_json(std::span<const CensusBlock> blocks) {
  json features = json::array();
  for (const auto& b : blocks) {
    features.push_back(json{{"type", "Feature"}, {"properties", {{"sel", to_string(b.sel)}}},
                            {"geometry", polygon_to_json(b.shape)}});
  }
  return json{{"type", "FeatureCollection"}, {"features", features}};
}

// Kept cells with tower_id, urban_overlap, sel_s1..sel_s5 (null when no
// profile) and the site coordinates.
inline json cells_to_json(std::span<const TowerCell> cells) {
  json features = json::array();
  for (const auto& c : cells) {
    json props{{"tower_id", c.tower_id}, {"site_x", c.site.x}, {"site_y", c.site.y},
               {"urban_overlap", c.urban_overlap}};
    for (std::size_t g = 0; g < sel_group_count; ++g) {
      const std::string key = "sel_s" + std::to_string(g + 1);
      props[key] = c.sel ? json((*c.sel)[g]) : json(nullptr);
    }
    features.push_back(json{{"type", "Feature"}, {"properties", props}, {"geometry", polygon_to_json(c.cell)}});
  }
  return json{{"type", "FeatureCollection"}, {"features", features}};
}

inline std::vector<TowerCell> cells_from_json(const json& doc) {
  std::vector<TowerCell> cells;
  for (const auto& f : features_of(doc)) {
    const auto& p = f.at("properties");
    TowerCell c;
    c.tower_id = p.at("tower_id").get<std::string>();
    c.site = {p.at("site_x").get<double>(), p.at("site_y").get<double>()};
    c.urban_overlap = p.at("urban_overlap").get<double>();
    const auto& rings = f.at("geometry").at("coordinates");
    Ring outer = ring_from_json(rings.at(0), identity_transform);
    if (outer.size() > 1 && outer.front() == outer.back()) outer.pop_back();
    c.cell = Polygon{std::move(outer), {}};
    if (!p.at("sel_s1").is_null()) {
      SelProfile prof{};
      for (std::size_t g = 0; g < sel_group_count; ++g) prof[g] = p.at("sel_s" + std::to_string(g + 1)).get<double>();
      c.sel = prof;
    }
    cells.push_back(std::move(c));
  }
  return cells;
}

// ---- anchors, networks, partitions -----------------------------------------

inline void write_anchors(std::ostream& out, std::span<const UserAnchor> anchors) {
  out << "user_id,home_tower,work_tower\n";
  for (const auto& a : anchors) out << a.user_id << ',' << a.home_tower << ',' << a.work_tower << '\n';
}

inline std::vector<UserAnchor> read_anchors(std::istream& in) {
  std::vector<UserAnchor> out;
  csv::read_table(in, "anchors", {"user_id", "home_tower", "work_tower"}, [&](const auto& f, std::size_t) {
    UserAnchor a;
    a.user_id = std::string(f[0]);
    a.home_tower = std::string(f[1]);
    a.work_tower = std::string(f[2]);
    out.push_back(std::move(a));
  });
  return out;
}

inline void write_labeled_anchors(std::ostream& out, std::span<const UserAnchor> anchors) {
  out << "user_id,home_tower,work_tower,community\n";
  for (const auto& a : anchors) {
    out << a.user_id << ',' << a.home_tower << ',' << a.work_tower << ',' << a.community.value_or(-1) << '\n';
  }
}

inline std::vector<UserAnchor> read_labeled_anchors(std::istream& in) {
  std::vector<UserAnchor> out;
  csv::read_table(in, "labeled anchors", {"user_id", "home_tower", "work_tower", "community"},
                  [&](const auto& f, std::size_t line) {
                    UserAnchor a;
                    a.user_id = std::string(f[0]);
                    a.home_tower = std::string(f[1]);
                    a.work_tower = std::string(f[2]);
                    int c;
                    if (!csv::to_int(f[3], c)) throw DataError("labeled anchors: bad community on line " + std::to_string(line));
                    if (c >= 0) a.community = c;
                    out.push_back(std::move(a));
                  });
  return out;
}

inline void write_network(std::ostream& out, const HWNetwork& net) {
  out << "tower_a,tower_b,weight\n";
  for (const auto& e : net.edges) out << net.nodes[e.a] << ',' << net.nodes[e.b] << ',' << e.weight << '\n';
}

inline HWNetwork read_network(std::istream& in) {
  std::vector<std::tuple<TowerId, TowerId, std::uint64_t>> edges;
  csv::read_table(in, "network", {"tower_a", "tower_b", "weight"}, [&](const auto& f, std::size_t line) {
    std::uint64_t w;
    if (!csv::to_int(f[2], w) || w == 0) throw DataError("network: bad weight on line " + std::to_string(line));
    edges.emplace_back(std::string(f[0]), std::string(f[1]), w);
  });
  return network_from_edges(edges);
}

inline void write_partition(std::ostream& out, const Partition& p) {
  out << "tower_id,community\n";
  for (std::size_t i = 0; i < p.nodes.size(); ++i) out << p.nodes[i] << ',' << p.labels[i] << '\n';
}

// Labels are canonicalized on read.
inline Partition read_partition(std::istream& in) {
  std::vector<TowerId> nodes;
  std::vector<int> labels;
  csv::read_table(in, "partition", {"tower_id", "community"}, [&](const auto& f, std::size_t line) {
    int c;
    if (!csv::to_int(f[1], c)) throw DataError("partition: bad community on line " + std::to_string(line));
    nodes.emplace_back(f[0]);
    labels.push_back(c);
  });
  return make_partition(std::move(nodes), std::move(labels));
}

inline void write_pings(std::ostream& out, std::span<const PingRecord> pings) {
  out << "user_id,tower_id,timestamp\n";
  for (const auto& p : pings) out << p.user_id << ',' << p.tower_id << ',' << format_civil_time(p.time) << '\n';
}

inline json rejection_log_to_json(const RejectionLog& log) {
  return json{{"users_observed", log.users_observed},
              {"accepted", log.accepted},
              {"rejected",
               {{"too_few_home", log.too_few_home},
                {"too_few_work", log.too_few_work},
                {"low_anchor_share", log.low_anchor_share},
                {"no_pings_in_windows", log.no_pings_in_windows},
                {"dropped_tower", log.dropped_tower}}},
              {"dropped_pings", log.dropped_pings}};
}

// Writes with a trailing newline; output is deterministic for equal input.
inline void write_json(const std::string& path, const json& j) {
  auto out = csv::open_output(path);
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path, const char* what) {
  auto in = csv::open_input(path, what);
  return parse_json(in, what);
}

}  // namespace mobiseg::io
