#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mobiseg/common.hpp"
#include "mobiseg/csv.hpp"
#include "mobiseg/geometry.hpp"
#include "mobiseg/graph.hpp"
#include "mobiseg/ingest.hpp"
#include "mobiseg/io.hpp"
#include "mobiseg/nullmodel.hpp"
#include "mobiseg/segregation.hpp"
#include "mobiseg/synth.hpp"

namespace mobiseg {

using KeyValues = std::map<std::string, std::string>;

struct KeySpec {
  const char* name;
  const char* help;
  bool is_flag = false;  // boolean switch on the command line
};

// ---- configuration ------------------------------------------------------------

// Reads `key = value` lines; '#' starts a comment.
inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "config") {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = csv::trim_line(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(csv::trim_line(t.substr(0, eq)));
    std::string value(csv::trim_line(t.substr(eq + 1)));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    std::replace(key.begin(), key.end(), '-', '_');
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline KeyValues read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_key_values(in, path);
}

namespace detail {

inline double kv_double(const std::string& key, const std::string& v) {
  double d;
  if (!csv::to_double(v, d)) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return d;
}

template <typename Int>
inline Int kv_int(const std::string& key, const std::string& v) {
  Int i;
  if (!csv::to_int(v, i)) throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return i;
}

inline bool kv_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline void require_range(const std::string& key, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    throw ConfigError("config key '" + key + "' = " + csv::format_double(v) + " outside [" + csv::format_double(lo) +
                      ", " + csv::format_double(hi) + "]");
  }
}

}  // namespace detail

enum class WorkUnit { tower, community };
enum class WiiMode { analytic, monte_carlo };

struct PipelineConfig {
  // inputs
  std::string towers;
  std::string urban;
  std::string blocks;
  std::string pings;
  std::string planted;  // optional tower_id,community truth
  bool project = false;
  std::string out = "mobiseg_out";
  // geometry
  double overlap_threshold = 0.70;
  double bounds_padding = 0.10;
  // ingest
  InferConfig infer;
  // graph
  std::uint64_t seed = 42;
  double resolution = 1.0;
  std::size_t min_size = 2;
  bool daily = true;
  std::optional<Weekday> weekday;
  Matching matching = Matching::greedy;
  // segregation
  WorkUnit work_unit = WorkUnit::tower;
  SelWeighting sel_weighting = SelWeighting::area;
  WiiMode wii_mode = WiiMode::analytic;
  std::size_t wii_reps = 100;
  // null model
  std::size_t reps = 100;
  double bin_dist = 500.0;
  double bin_angle = 10.0;
  bool joint = false;
  double z_threshold = 3.0;

  static const std::vector<KeySpec>& keys() {
    static const std::vector<KeySpec> k{
        {"towers", "towers CSV (tower_id,x,y or tower_id,lon,lat)"},
        {"urban", "urban boundary GeoJSON"},
        {"blocks", "census blocks GeoJSON with property sel = S1..S5"},
        {"pings", "pings CSV (user_id,tower_id,timestamp)"},
        {"planted", "optional planted tower communities CSV (tower_id,community)"},
        {"project", "inputs are lon/lat; project about the centre of the urban extent", true},
        {"out", "output directory"},
        {"overlap_threshold", "minimum urban overlap of a Voronoi cell"},
        {"bounds_padding", "tessellation bounds padding (fraction of extent)"},
        {"home_window", "home window HH:MM-HH:MM"},
        {"work_window", "work window HH:MM-HH:MM"},
        {"min_anchor_pings", "minimum pings at home and at work"},
        {"anchor_share", "required share of pings at the anchors"},
        {"share_rule", "combined | per_anchor"},
        {"seed", "top-level random seed"},
        {"resolution", "modularity resolution"},
        {"min_size", "smallest community kept after pruning"},
        {"daily", "also build per-weekday networks", true},
        {"weekday", "communities: restrict to one weekday (mon..fri)"},
        {"matching", "retention label matching: greedy | optimal"},
        {"work_unit", "isolation workplace unit: tower | community"},
        {"sel_weighting", "community SEL weighting: area | users"},
        {"wii_mode", "well-mixed index: analytic | monte_carlo"},
        {"wii_reps", "Monte Carlo replications for the well-mixed index"},
        {"reps", "null-model replications R"},
        {"bin_dist", "distance histogram bin width (m)"},
        {"bin_angle", "angle histogram bin width (degrees)"},
        {"joint", "draw (D, theta) from the joint histogram", true},
        {"z_threshold", "z above which a community is flagged segregated"},
    };
    return k;
  }

  void apply(const KeyValues& kv) {
    using namespace detail;
    for (const auto& [key, v] : kv) {
      if (key == "towers") towers = v;
      else if (key == "urban") urban = v;
      else if (key == "blocks") blocks = v;
      else if (key == "pings") pings = v;
      else if (key == "planted") planted = v;
      else if (key == "project") project = kv_bool(key, v);
      else if (key == "out") out = v;
      else if (key == "overlap_threshold") overlap_threshold = kv_double(key, v);
      else if (key == "bounds_padding") bounds_padding = kv_double(key, v);
      else if (key == "home_window") infer.home_window = parse_time_window(v);
      else if (key == "work_window") infer.work_window = parse_time_window(v);
      else if (key == "min_anchor_pings") infer.min_anchor_pings = kv_int<unsigned>(key, v);
      else if (key == "anchor_share") infer.anchor_share = kv_double(key, v);
      else if (key == "share_rule") infer.share_rule = parse_share_rule(v);
      else if (key == "seed") seed = kv_int<std::uint64_t>(key, v);
      else if (key == "resolution") resolution = kv_double(key, v);
      else if (key == "min_size") min_size = kv_int<std::size_t>(key, v);
      else if (key == "daily") daily = kv_bool(key, v);
      else if (key == "weekday") weekday = v.empty() ? std::nullopt : std::optional<Weekday>(parse_weekday(v));
      else if (key == "matching") {
        if (v == "greedy") matching = Matching::greedy;
        else if (v == "optimal") matching = Matching::optimal;
        else throw ConfigError("config key 'matching': expected greedy|optimal");
      } else if (key == "work_unit") {
        if (v == "tower") work_unit = WorkUnit::tower;
        else if (v == "community") work_unit = WorkUnit::community;
        else throw ConfigError("config key 'work_unit': expected tower|community");
      } else if (key == "sel_weighting") {
        if (v == "area") sel_weighting = SelWeighting::area;
        else if (v == "users") sel_weighting = SelWeighting::users;
        else throw ConfigError("config key 'sel_weighting': expected area|users");
      } else if (key == "wii_mode") {
        if (v == "analytic") wii_mode = WiiMode::analytic;
        else if (v == "monte_carlo") wii_mode = WiiMode::monte_carlo;
        else throw ConfigError("config key 'wii_mode': expected analytic|monte_carlo");
      } else if (key == "wii_reps") wii_reps = kv_int<std::size_t>(key, v);
      else if (key == "reps") reps = kv_int<std::size_t>(key, v);
      else if (key == "bin_dist") bin_dist = kv_double(key, v);
      else if (key == "bin_angle") bin_angle = kv_double(key, v);
      else if (key == "joint") joint = kv_bool(key, v);
      else if (key == "z_threshold") z_threshold = kv_double(key, v);
      else throw ConfigError("unknown config key '" + key + "'");
    }
    validate();
  }

  void validate() const {
    detail::require_range("overlap_threshold", overlap_threshold, 0.0, 1.0);
    detail::require_range("bounds_padding", bounds_padding, 0.0, 10.0);
    detail::require_range("anchor_share", infer.anchor_share, 0.0, 1.0);
    detail::require_range("resolution", resolution, 1e-9, 1e9);
    detail::require_range("bin_dist", bin_dist, 1e-9, 1e12);
    detail::require_range("bin_angle", bin_angle, 1e-9, 360.0);
    detail::require_range("z_threshold", z_threshold, 0.0, 1e12);
    if (min_size < 1) throw ConfigError("config key 'min_size' must be >= 1");
    if (reps < 2) throw ConfigError("config key 'reps' must be >= 2");
    if (wii_reps < 2) throw ConfigError("config key 'wii_reps' must be >= 2");
  }

  // Every parameter except the output directory, for the manifest.
  nlohmann::json to_json() const {
    return nlohmann::json{
        {"towers", towers},
        {"urban", urban},
        {"blocks", blocks},
        {"pings", pings},
        {"planted", planted},
        {"project", project},
        {"overlap_threshold", overlap_threshold},
        {"bounds_padding", bounds_padding},
        {"home_window", format_time_window(infer.home_window)},
        {"work_window", format_time_window(infer.work_window)},
        {"min_anchor_pings", infer.min_anchor_pings},
        {"anchor_share", infer.anchor_share},
        {"share_rule", std::string(to_string(infer.share_rule))},
        {"seed", seed},
        {"resolution", resolution},
        {"min_size", min_size},
        {"daily", daily},
        {"weekday", weekday ? std::string(weekday_name(*weekday)) : std::string()},
        {"matching", matching == Matching::greedy ? "greedy" : "optimal"},
        {"work_unit", work_unit == WorkUnit::tower ? "tower" : "community"},
        {"sel_weighting", sel_weighting == SelWeighting::area ? "area" : "users"},
        {"wii_mode", wii_mode == WiiMode::analytic ? "analytic" : "monte_carlo"},
        {"wii_reps", wii_reps},
        {"reps", reps},
        {"bin_dist", bin_dist},
        {"bin_angle", bin_angle},
        {"joint", joint},
        {"z_threshold", z_threshold},
    };
  }
};

inline const std::vector<KeySpec>& synth_keys() {
  static const std::vector<KeySpec> k{
      {"n_towers", "synth: number of towers"},
      {"n_users", "synth: number of users"},
      {"n_communities", "synth: planted communities"},
      {"mu", "synth: probability of working outside the home cluster"},
      {"distance_scale", "synth: cluster ring radius (m)"},
      {"cluster_spread", "synth: tower scatter per cluster (m); 0 = 0.4 x distance_scale"},
      {"uniform_work", "synth: work towers uniform over the city", true},
      {"daily_variation", "synth: per-weekday probability of working elsewhere"},
      {"sel_purity", "synth: share of blocks with the dominant SEL group"},
      {"n_weeks", "synth: weeks of pings"},
      {"pings_per_window", "synth: pings per home/work window per day"},
      {"noise_pings_per_day", "synth: evening pings at random towers per day"},
  };
  return k;
}

// Applies synth keys; `seed` and `out` are shared with the pipeline.
inline void apply_synth_keys(SynthConfig& cfg, std::string& out, const KeyValues& kv) {
  using namespace detail;
  for (const auto& [key, v] : kv) {
    if (key == "n_towers") cfg.n_towers = kv_int<std::size_t>(key, v);
    else if (key == "n_users") cfg.n_users = kv_int<std::size_t>(key, v);
    else if (key == "n_communities") cfg.n_communities = kv_int<std::size_t>(key, v);
    else if (key == "mu") cfg.mu = kv_double(key, v);
    else if (key == "distance_scale") cfg.distance_scale = kv_double(key, v);
    else if (key == "cluster_spread") cfg.cluster_spread = kv_double(key, v);
    else if (key == "uniform_work") cfg.uniform_work = kv_bool(key, v);
    else if (key == "daily_variation") cfg.daily_variation = kv_double(key, v);
    else if (key == "sel_purity") cfg.sel_purity = kv_double(key, v);
    else if (key == "n_weeks") cfg.n_weeks = kv_int<std::size_t>(key, v);
    else if (key == "pings_per_window") cfg.pings_per_window = kv_int<std::size_t>(key, v);
    else if (key == "noise_pings_per_day") cfg.noise_pings_per_day = kv_int<std::size_t>(key, v);
    else if (key == "seed") cfg.seed = kv_int<std::uint64_t>(key, v);
    else if (key == "out") out = v;
    else throw ConfigError("unknown synth config key '" + key + "'");
  }
}

// ---- stages ---------------------------------------------------------------------

namespace detail {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string in_dir(const PipelineConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out) / name).string();
}

inline void ensure_out(const PipelineConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw DataError("cannot create output directory '" + cfg.out + "': " + ec.message());
}

inline void require_input(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing input: '") + what + "' path not configured");
  if (!fs::exists(path)) throw ConfigError(std::string("cannot open ") + what + " file '" + path + "'");
}

// Reruns fn, prefixing errors with the stage name (type preserved).
template <typename F>
auto run_stage(const char* name, F&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("stage ") + name + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(std::string("stage ") + name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(std::string("stage ") + name + ": " + e.what());
  }
}

inline std::vector<TowerCell> load_cells(const PipelineConfig& cfg) {
  return io::cells_from_json(io::read_json_file(in_dir(cfg, "cells.geojson"), "cells"));
}

inline std::vector<UserAnchor> load_anchors(const std::string& path) {
  auto in = csv::open_input(path, "anchors");
  return io::read_anchors(in);
}

inline Partition load_partition(const std::string& path) {
  auto in = csv::open_input(path, "partition");
  return io::read_partition(in);
}

template <typename F>
void write_file(const std::string& path, F&& body) {
  auto out = csv::open_output(path);
  body(out);
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline std::string suffix_of(std::optional<Weekday> day) {
  return day ? "_" + std::string(weekday_name(*day)) : std::string();
}

inline json sel_json(const std::optional<SelProfile>& p) {
  if (!p) return nullptr;
  return json(std::vector<double>(p->begin(), p->end()));
}

}  // namespace detail

// tessellate: Voronoi cells, urban-overlap filter, SEL composition.
inline void stage_tessellate(const PipelineConfig& cfg) {
  using namespace detail;
  require_input(cfg.towers, "towers");
  require_input(cfg.urban, "urban boundary");
  require_input(cfg.blocks, "census blocks");
  ensure_out(cfg);

  auto tin = csv::open_input(cfg.towers, "towers");
  auto raw = io::read_towers(tin);
  const auto urban_doc = io::read_json_file(cfg.urban, "urban boundary");
  const auto blocks_doc = io::read_json_file(cfg.blocks, "census blocks");

  io::PointTransform tf = io::identity_transform;
  if (raw.geographic && !cfg.project) throw ConfigError("towers are lon/lat; set 'project' to use them");
  if (cfg.project) {
    const Box ext = io::geojson_extent(urban_doc);
    const double lon0 = 0.5 * (ext.min_x + ext.max_x), lat0 = 0.5 * (ext.min_y + ext.max_y);
    tf = [lon0, lat0](Point p) { return project_equirectangular(p.x, p.y, lon0, lat0); };
    if (raw.geographic) {
      for (auto& t : raw.towers) t.site = tf(t.site);
    }
  }
  const Polygon urban = io::read_polygon(urban_doc, tf);
  const auto blocks = io::read_blocks(blocks_doc, tf);

  Polygon region = urban;
  for (const auto& t : raw.towers) region.outer.push_back(t.site);
  const Polygon bounds = padded_bounds(region, cfg.bounds_padding);

  const auto cells = compute_voronoi(raw.towers, bounds);
  const auto kept = assign_sel(urban_overlap_filter(cells, urban, cfg.overlap_threshold), blocks);

  std::set<TowerId> kept_ids;
  for (const auto& c : kept) kept_ids.insert(c.tower_id);
  json dropped = json::array();
  for (const auto& t : raw.towers) {
    if (!kept_ids.contains(t.id)) dropped.push_back(t.id);
  }
  std::size_t without_sel = 0;
  for (const auto& c : kept) without_sel += c.sel ? 0 : 1;
  io::write_json(in_dir(cfg, "cells.geojson"), io::cells_to_json(kept));
  const Box bb = bounding_box(bounds);
  io::write_json(in_dir(cfg, "tessellation.json"),
                 json{{"n_towers", raw.towers.size()},
                      {"n_kept", kept.size()},
                      {"n_without_sel", without_sel},
                      {"dropped", dropped},
                      {"bounds", {bb.min_x, bb.min_y, bb.max_x, bb.max_y}}});
}

// infer: home/work anchors for the whole period and per weekday.
inline void stage_infer(const PipelineConfig& cfg) {
  using namespace detail;
  require_input(cfg.pings, "pings");
  ensure_out(cfg);
  const auto cells = load_cells(cfg);
  std::unordered_set<TowerId> kept;
  for (const auto& c : cells) kept.insert(c.tower_id);
  auto pin = csv::open_input(cfg.pings, "pings");
  const auto parsed = parse_pings(pin);

  json summary{{"pings", parsed.records.size()}, {"malformed_lines", parsed.malformed}};
  auto run = [&](std::optional<Weekday> day) {
    InferConfig ic = cfg.infer;
    ic.weekday = day;
    const auto res = infer_home_work(parsed.records, kept, ic);
    write_file(in_dir(cfg, "anchors" + suffix_of(day) + ".csv"),
               [&](std::ostream& o) { io::write_anchors(o, res.anchors); });
    return io::rejection_log_to_json(res.log);
  };
  summary["aggregate"] = run(std::nullopt);
  if (cfg.daily) {
    for (Weekday d = 1; d <= 5; ++d) summary["daily"][std::string(weekday_name(d))] = run(d);
  }
  io::write_json(in_dir(cfg, "rejections.json"), summary);
}

// network: H-W networks from the anchor files.
inline void stage_network(const PipelineConfig& cfg) {
  using namespace detail;
  ensure_out(cfg);
  json summary;
  auto run = [&](std::optional<Weekday> day) {
    const auto anchors = load_anchors(in_dir(cfg, "anchors" + suffix_of(day) + ".csv"));
    const auto net = build_hw_network(anchors);
    write_file(in_dir(cfg, "network" + suffix_of(day) + ".csv"), [&](std::ostream& o) { io::write_network(o, net); });
    return json{{"nodes", net.nodes.size()}, {"edges", net.edges.size()}, {"total_weight", net.total_weight()}};
  };
  summary["aggregate"] = run(std::nullopt);
  if (cfg.daily) {
    for (Weekday d = 1; d <= 5; ++d) summary["daily"][std::string(weekday_name(d))] = run(d);
  }
  io::write_json(in_dir(cfg, "network.json"), summary);
}

inline std::uint64_t louvain_seed(const PipelineConfig& cfg, std::optional<Weekday> day) {
  return derive_seed(cfg.seed, "louvain" + detail::suffix_of(day));
}

// communities: Louvain + pruning on the aggregate network and each weekday
// network (or one weekday when cfg.weekday is set).
inline void stage_communities(const PipelineConfig& cfg) {
  using namespace detail;
  ensure_out(cfg);
  auto run = [&](std::optional<Weekday> day) {
    auto nin = csv::open_input(in_dir(cfg, "network" + suffix_of(day) + ".csv"), "network");
    const auto net = io::read_network(nin);
    const std::uint64_t seed = louvain_seed(cfg, day);
    const auto lv = louvain(net, seed, cfg.resolution);
    const auto pruned = prune_small(lv.partition, cfg.min_size);
    write_file(in_dir(cfg, "partition" + suffix_of(day) + ".csv"),
               [&](std::ostream& o) { io::write_partition(o, pruned.kept); });
    json sizes = json::array();
    for (auto s : pruned.kept.sizes()) sizes.push_back(s);
    return json{{"Q", lv.modularity},
                {"Q_levels", lv.level_modularity},
                {"n_communities", pruned.kept.community_count()},
                {"n_communities_before_pruning", lv.partition.community_count()},
                {"sizes", sizes},
                {"discarded", pruned.discarded},
                {"seed", seed},
                {"resolution", cfg.resolution},
                {"min_size", cfg.min_size}};
  };
  if (cfg.weekday) {
    io::write_json(in_dir(cfg, "communities" + suffix_of(cfg.weekday) + ".json"), run(cfg.weekday));
    return;
  }
  json summary = run(std::nullopt);
  if (cfg.daily) {
    for (Weekday d = 1; d <= 5; ++d) summary["daily"][std::string(weekday_name(d))] = run(d);
  }
  io::write_json(in_dir(cfg, "communities.json"), summary);
}

// retention: share of nodes per weekday keeping their aggregate community.
inline void stage_retention(const PipelineConfig& cfg) {
  using namespace detail;
  ensure_out(cfg);
  const auto aggregate = load_partition(in_dir(cfg, "partition.csv"));
  json rows = json::object();
  write_file(in_dir(cfg, "retention.csv"), [&](std::ostream& o) {
    o << "weekday,retained,shared_nodes\n";
    for (Weekday d = 1; d <= 5; ++d) {
      const std::string path = in_dir(cfg, "partition" + suffix_of(d) + ".csv");
      if (!fs::exists(path)) continue;
      const auto daily = load_partition(path);
      std::size_t shared = 0;
      for (const auto& n : daily.nodes) shared += aggregate.label_of(n) ? 1 : 0;
      const double r = retention(daily, aggregate, cfg.matching);
      rows[std::string(weekday_name(d))] = {{"retained", r}, {"shared_nodes", shared}};
      o << weekday_name(d) << ',' << csv::format_double(r) << ',' << shared << '\n';
    }
  });
  io::write_json(in_dir(cfg, "retention.json"),
                 json{{"matching", cfg.matching == Matching::greedy ? "greedy" : "optimal"}, {"weekdays", rows}});
}

// isolation: labeled anchors, RII, WII and SEL composition per community.
inline void stage_isolation(const PipelineConfig& cfg) {
  using namespace detail;
  ensure_out(cfg);
  const auto partition = load_partition(in_dir(cfg, "partition.csv"));
  const auto all_anchors = load_anchors(in_dir(cfg, "anchors.csv"));
  const auto anchors = label_anchors(all_anchors, partition);
  if (anchors.empty()) throw DataError("no users remain after community labeling");
  const auto cells = load_cells(cfg);
  write_file(in_dir(cfg, "anchors_labeled.csv"), [&](std::ostream& o) { io::write_labeled_anchors(o, anchors); });

  UnitOf unit_of = work_tower_unit;
  if (cfg.work_unit == WorkUnit::community) {
    unit_of = [&partition](const UserAnchor& a) { return "c" + std::to_string(*partition.label_of(a.work_tower)); };
  }
  const std::size_t nc = static_cast<std::size_t>(partition.community_count());
  const auto m = counts_matrix(anchors, unit_of, nc);

  std::map<TowerId, double> users_at;
  for (const auto& a : anchors) users_at[a.home_tower] += 1.0;
  const auto sel = community_sel(partition, cells, cfg.sel_weighting, &users_at);

  std::vector<MonteCarloEstimate> mc;
  if (cfg.wii_mode == WiiMode::monte_carlo) mc = well_mixed_monte_carlo(m, cfg.wii_reps, derive_seed(cfg.seed, "wii"));

  json rows = json::array();
  for (std::size_t c = 0; c < nc; ++c) {
    json row{{"community", c}, {"users", m.row_totals[c]}, {"sel", sel_json(sel[c])}};
    if (m.row_totals[c] > 0) {
      row["RII"] = isolation_index(m, c);
      row["WII"] = cfg.wii_mode == WiiMode::analytic ? well_mixed_index(m, c) : mc[c].mean;
      row["k"] = well_mixed_index(m, c);
    } else {
      row["RII"] = nullptr;
      row["WII"] = nullptr;
      row["k"] = 0.0;
    }
    rows.push_back(row);
  }
  io::write_json(in_dir(cfg, "isolation.json"),
                 json{{"users", m.total},
                      {"unlabeled_users", all_anchors.size() - anchors.size()},
                      {"units", m.unit_count()},
                      {"work_unit", cfg.work_unit == WorkUnit::tower ? "tower" : "community"},
                      {"wii_mode", cfg.wii_mode == WiiMode::analytic ? "analytic" : "monte_carlo"},
                      {"communities", rows}});
}

// simulate: distance/angle distributions and the SII experiment.
inline void stage_simulate(const PipelineConfig& cfg) {
  using namespace detail;
  ensure_out(cfg);
  std::vector<UserAnchor> anchors;
  {
    auto in = csv::open_input(in_dir(cfg, "anchors_labeled.csv"), "labeled anchors");
    anchors = io::read_labeled_anchors(in);
  }
  const auto cells = load_cells(cfg);
  const auto partition = load_partition(in_dir(cfg, "partition.csv"));
  const json communities = io::read_json_file(in_dir(cfg, "communities.json"), "communities summary");
  std::set<TowerId> discarded;
  for (const auto& d : communities.at("discarded")) discarded.insert(d.get<std::string>());

  const SiteMap sites = sites_of(cells);
  std::vector<Tower> candidates;
  for (const auto& c : cells) {
    if (!discarded.contains(c.tower_id)) candidates.push_back({c.tower_id, c.site});
  }
  const TowerLocator locator(std::move(candidates));
  const std::size_t nc = static_cast<std::size_t>(partition.community_count());
  const auto stats = fit_distributions(anchors, sites, cfg.bin_dist, cfg.bin_angle, nc);

  write_file(in_dir(cfg, "distance_stats.csv"), [&](std::ostream& o) {
    o << "community,users,mean_km,std_km,histogram_mean_km,self_loops\n";
    for (std::size_t c = 0; c < nc; ++c) {
      const auto& t = stats.communities[c];
      o << c << ',' << t.samples << ',' << csv::format_double(t.mean_distance / 1000.0) << ','
        << csv::format_double(t.std_distance / 1000.0) << ','
        << csv::format_double(t.histogram_mean_distance() / 1000.0) << ',' << t.self_loops << '\n';
    }
  });
  for (std::size_t c = 0; c < nc; ++c) {
    const auto& t = stats.communities[c];
    write_file(in_dir(cfg, "hist_distance_c" + std::to_string(c) + ".csv"), [&](std::ostream& o) {
      o << "bin_low,bin_high,mass\n";
      o << "0,0," << csv::format_double(t.zero_mass) << '\n';
      for (std::size_t i = 0; i < t.distance.mass.size(); ++i) {
        o << csv::format_double(t.distance.low(i)) << ',' << csv::format_double(t.distance.high(i)) << ','
          << csv::format_double(t.distance.mass[i]) << '\n';
      }
    });
    write_file(in_dir(cfg, "hist_angle_c" + std::to_string(c) + ".csv"), [&](std::ostream& o) {
      o << "bin_low,bin_high,mass\n";
      for (std::size_t i = 0; i < t.angle.mass.size(); ++i) {
        o << csv::format_double(t.angle.low(i)) << ',' << csv::format_double(std::min(t.angle.high(i), 360.0)) << ','
          << csv::format_double(t.angle.mass[i]) << '\n';
      }
    });
  }

  const std::uint64_t seed = derive_seed(cfg.seed, "simulate");
  const auto mode = cfg.joint ? RelocationMode::joint : RelocationMode::marginal;
  const auto sii = sii_experiment(anchors, stats, sites, locator, cfg.reps, seed, mode);
  write_file(in_dir(cfg, "sii.csv"), [&](std::ostream& o) {
    o << "community,replication,sii\n";
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t r = 0; r < sii.reps; ++r) o << c << ',' << r << ',' << csv::format_double(sii.values[c][r]) << '\n';
    }
  });
  write_file(in_dir(cfg, "sii_summary.csv"), [&](std::ostream& o) {
    o << "community,SII_mean,SII_std,reps,seed\n";
    for (std::size_t c = 0; c < nc; ++c) {
      o << c << ',' << csv::format_double(sii.mean[c]) << ',' << csv::format_double(sii.std[c]) << ',' << sii.reps << ','
        << sii.seed << '\n';
    }
  });
  io::write_json(in_dir(cfg, "simulate.json"), json{{"reps", sii.reps},
                                                     {"seed", sii.seed},
                                                     {"mode", cfg.joint ? "joint" : "marginal"},
                                                     {"bin_dist", cfg.bin_dist},
                                                     {"bin_angle", cfg.bin_angle},
                                                     {"candidate_towers", locator.towers().size()},
                                                     {"SII_mean", sii.mean},
                                                     {"SII_std", sii.std}});
}

// report: RII vs SII table, planted-truth comparison, manifest.
inline void stage_report(const PipelineConfig& cfg) {
  using namespace detail;
  ensure_out(cfg);
  const json iso = io::read_json_file(in_dir(cfg, "isolation.json"), "isolation summary");
  const json sim = io::read_json_file(in_dir(cfg, "simulate.json"), "simulation summary");
  const auto& rows_in = iso.at("communities");
  const auto means = sim.at("SII_mean").get<std::vector<double>>();
  const auto stds = sim.at("SII_std").get<std::vector<double>>();

  json rows = json::array();
  write_file(in_dir(cfg, "report.csv"), [&](std::ostream& o) {
    o << "community,RII,WII,SII_mean,SII_std,z,segregated,sel_s1,sel_s2,sel_s3,sel_s4,sel_s5\n";
    for (std::size_t c = 0; c < rows_in.size(); ++c) {
      const auto& r = rows_in[c];
      if (r.at("RII").is_null()) continue;
      const double rii = r.at("RII").get<double>(), wii = r.at("WII").get<double>();
      const auto z = z_distance(rii, means.at(c), stds.at(c), cfg.z_threshold);
      json row{{"community", c},     {"users", r.at("users")}, {"RII", rii},        {"WII", wii},
               {"SII_mean", means[c]}, {"SII_std", stds[c]},   {"segregated", z.segregated},
               {"sel", r.at("sel")}};
      row["z"] = z.infinite ? json("inf") : json(z.z);
      rows.push_back(row);
      o << c << ',' << csv::format_double(rii) << ',' << csv::format_double(wii) << ',' << csv::format_double(means[c])
        << ',' << csv::format_double(stds[c]) << ',' << (z.infinite ? std::string("inf") : csv::format_double(z.z))
        << ',' << (z.segregated ? "true" : "false");
      for (std::size_t g = 0; g < sel_group_count; ++g) {
        o << ',' << (r.at("sel").is_null() ? std::string() : csv::format_double(r.at("sel")[g].get<double>()));
      }
      o << '\n';
    }
  });
  io::write_json(in_dir(cfg, "report.json"), json{{"communities", rows},
                                                   {"reps", sim.at("reps")},
                                                   {"z_threshold", cfg.z_threshold}});

  json manifest{{"tool", "mobiseg"}, {"version", std::string(version)}, {"parameters", cfg.to_json()}};
  manifest["seeds"] = {{"top_level", cfg.seed},
                       {"louvain", louvain_seed(cfg, std::nullopt)},
                       {"simulate", derive_seed(cfg.seed, "simulate")},
                       {"wii", derive_seed(cfg.seed, "wii")}};
  for (Weekday d = 1; d <= 5; ++d) manifest["seeds"]["louvain" + suffix_of(d)] = louvain_seed(cfg, d);
  json counts;
  for (const char* name : {"tessellation", "rejections", "network", "communities", "retention", "isolation", "simulate"}) {
    const std::string path = in_dir(cfg, std::string(name) + ".json");
    if (fs::exists(path)) counts[name] = io::read_json_file(path, name);
  }
  if (counts.contains("tessellation")) counts["tessellation"].erase("dropped");
  manifest["stages"] = counts;

  if (!cfg.planted.empty()) {
    require_input(cfg.planted, "planted communities");
    const auto planted = load_partition(cfg.planted);
    const auto detected = load_partition(in_dir(cfg, "partition.csv"));
    const double agreement = retention(detected, planted, Matching::greedy);
    const json cmp{{"matched_node_agreement", agreement},
                   {"planted_communities", planted.community_count()},
                   {"detected_communities", detected.community_count()}};
    io::write_json(in_dir(cfg, "planted_comparison.json"), cmp);
    manifest["planted_comparison"] = cmp;
  }
  io::write_json(in_dir(cfg, "manifest.json"), manifest);
}

// Full chain: tessellate → infer → network → communities → retention →
// isolation → simulate → report. Every intermediate artifact lands in cfg.out.
inline void run_all(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineConfig c = cfg;
  c.weekday.reset();
  detail::run_stage("tessellate", [&] { stage_tessellate(c); });
  detail::run_stage("infer", [&] { stage_infer(c); });
  detail::run_stage("network", [&] { stage_network(c); });
  detail::run_stage("communities", [&] { stage_communities(c); });
  if (c.daily) detail::run_stage("retention", [&] { stage_retention(c); });
  detail::run_stage("isolation", [&] { stage_isolation(c); });
  detail::run_stage("simulate", [&] { stage_simulate(c); });
  detail::run_stage("report", [&] { stage_report(c); });
}

// Writes a synthetic city's input files plus `city.cfg` pointing at them.
inline void write_synth_city(const SynthCity& city, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create '" + dir + "': " + ec.message());
  auto path = [&](const char* n) { return (fs::path(dir) / n).string(); };
  detail::write_file(path("towers.csv"), [&](std::ostream& o) { io::write_towers(o, city.towers); });
  io::write_json(path("urban.geojson"), io::polygon_feature_collection(city.urban));
  io::write_json(path("blocks.geojson"), io::blocks_to_json(city.blocks));
  detail::write_file(path("pings.csv"), [&](std::ostream& o) { io::write_pings(o, city.pings); });
  detail::write_file(path("planted_towers.csv"), [&](std::ostream& o) {
    o << "tower_id,community\n";
    for (const auto& [id, c] : city.tower_community) o << id << ',' << c << '\n';
  });
  detail::write_file(path("planted_users.csv"), [&](std::ostream& o) {
    o << "user_id,home_tower,work_tower,community\n";
    for (const auto& u : city.users) o << u.user_id << ',' << u.home_tower << ',' << u.work_tower << ',' << u.community << '\n';
  });
  detail::write_file(path("city.cfg"), [&](std::ostream& o) {
    o << "# synthetic city inputs\n";
    o << "towers = " << path("towers.csv") << '\n';
    o << "urban = " << path("urban.geojson") << '\n';
    o << "blocks = " << path("blocks.geojson") << '\n';
    o << "pings = " << path("pings.csv") << '\n';
    o << "planted = " << path("planted_towers.csv") << '\n';
  });
}

}  // namespace mobiseg
