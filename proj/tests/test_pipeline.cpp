#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "mobiseg/pipeline.hpp"

using namespace mobiseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mobiseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> bundle(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files[e.path().filename().string()] = slurp(e.path());
  return files;
}

// Small synthetic city written to `dir`, with a config pointing at it.
PipelineConfig small_city(const fs::path& dir) {
  SynthConfig sc;
  sc.n_towers = 60;
  sc.n_users = 900;
  sc.daily_variation = 0.2;
  write_synth_city(generate_city(sc), (dir / "city").string());
  PipelineConfig cfg;
  cfg.apply(read_key_value_file((dir / "city" / "city.cfg").string()));
  cfg.reps = 10;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MOBISEG_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(KeyValues, Parsing) {
  std::istringstream in(
      "# comment\n"
      "seed = 7\n"
      "bin-dist=250   # trailing\n"
      "out = \"my dir\"\n"
      "\n");
  const auto kv = parse_key_values(in);
  EXPECT_EQ(kv.at("seed"), "7");
  EXPECT_EQ(kv.at("bin_dist"), "250");
  EXPECT_EQ(kv.at("out"), "my dir");
  std::istringstream bad("seed 7\n");
  EXPECT_THROW(parse_key_values(bad), ConfigError);
}

TEST(Config, ApplyAndValidate) {
  PipelineConfig cfg;
  cfg.apply({{"seed", "9"}, {"joint", "true"}, {"home_window", "21:00-06:00"}, {"weekday", "tue"},
             {"share_rule", "per_anchor"}, {"matching", "optimal"}});
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_TRUE(cfg.joint);
  EXPECT_EQ(cfg.infer.home_window.start, 21u * 60);
  EXPECT_EQ(cfg.weekday, 2u);
  EXPECT_EQ(cfg.matching, Matching::optimal);
  EXPECT_THROW(PipelineConfig{}.apply({{"nonsense", "1"}}), ConfigError);
  EXPECT_THROW(PipelineConfig{}.apply({{"reps", "1"}}), ConfigError);
  EXPECT_THROW(PipelineConfig{}.apply({{"anchor_share", "1.5"}}), ConfigError);
  EXPECT_THROW(PipelineConfig{}.apply({{"seed", "x"}}), ConfigError);
  EXPECT_THROW(PipelineConfig{}.apply({{"joint", "maybe"}}), ConfigError);
  // every documented key is accepted by apply()
  for (const auto& k : PipelineConfig::keys()) EXPECT_NE(std::string(k.help), "");
  EXPECT_FALSE(PipelineConfig{}.to_json().contains("out"));
}

TEST(Io, RoundTrips) {
  std::vector<TowerCell> cells{{"a", {1, 2}, rectangle(0, 0, 2, 3), 0.75, SelProfile{0.5, 0.5, 0, 0, 0}},
                               {"b", {5, 1}, rectangle(2, 0, 6, 3), 1.0, std::nullopt}};
  const auto back = io::cells_from_json(nlohmann::json::parse(io::cells_to_json(cells).dump()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].tower_id, "a");
  EXPECT_EQ(back[0].site, cells[0].site);
  EXPECT_EQ(back[0].cell.outer, cells[0].cell.outer);
  EXPECT_EQ(back[0].urban_overlap, 0.75);
  EXPECT_EQ(back[0].sel, cells[0].sel);
  EXPECT_FALSE(back[1].sel);

  const auto p = make_partition({"x", "y", "z"}, {1, 0, 1});
  std::stringstream ps;
  io::write_partition(ps, p);
  EXPECT_EQ(io::read_partition(ps), p);

  std::vector<UserAnchor> a{{"u1", "x", "y", 0, 0, 0, 0, 1}, {"u2", "z", "z", 0, 0, 0, 0, 0}};
  std::stringstream as;
  io::write_labeled_anchors(as, a);
  const auto ab = io::read_labeled_anchors(as);
  ASSERT_EQ(ab.size(), 2u);
  EXPECT_EQ(ab[0].work_tower, "y");
  EXPECT_EQ(ab[0].community, 1);

  const auto net = network_from_edges(std::vector<std::tuple<TowerId, TowerId, std::uint64_t>>{{"x", "y", 3}, {"z", "z", 1}});
  std::stringstream ns;
  io::write_network(ns, net);
  const auto nb = io::read_network(ns);
  EXPECT_EQ(nb.nodes, net.nodes);
  EXPECT_EQ(nb.edges, net.edges);
}

TEST(Io, TowersCsv) {
  std::istringstream xy("tower_id,x,y\nt1,1.5,2\nt2,3,4\n");
  const auto r = io::read_towers(xy);
  EXPECT_FALSE(r.geographic);
  ASSERT_EQ(r.towers.size(), 2u);
  EXPECT_EQ(r.towers[0].site, (Point{1.5, 2}));
  std::istringstream ll("tower_id,lon,lat\nt1,-70.6,-33.4\n");
  EXPECT_TRUE(io::read_towers(ll).geographic);
  std::istringstream dup("tower_id,x,y\nt1,1,2\nt1,3,4\n");
  EXPECT_THROW(io::read_towers(dup), DataError);
}

TEST(Pipeline, MissingPingsNamesThePath) {
  const auto dir = scratch("missing");
  auto cfg = small_city(dir);
  cfg.pings = (dir / "nope.csv").string();
  cfg.out = (dir / "out").string();
  try {
    run_all(cfg);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("nope.csv"), std::string::npos);
    EXPECT_NE(msg.find("stage infer"), std::string::npos);
  }
  // the tessellation stage's outputs are retained
  EXPECT_TRUE(fs::exists(dir / "out" / "cells.geojson"));
}

TEST(Pipeline, StagesComposeToRunAllAndRerunsAreIdentical) {
  const auto dir = scratch("compose");
  auto cfg = small_city(dir);
  cfg.out = (dir / "all").string();
  run_all(cfg);
  auto again = cfg;
  again.out = (dir / "again").string();
  run_all(again);
  auto manual = cfg;
  manual.out = (dir / "manual").string();
  stage_tessellate(manual);
  stage_infer(manual);
  stage_network(manual);
  stage_communities(manual);
  stage_retention(manual);
  stage_isolation(manual);
  stage_simulate(manual);
  stage_report(manual);

  const auto a = bundle(dir / "all");
  EXPECT_EQ(a, bundle(dir / "again"));
  EXPECT_EQ(a, bundle(dir / "manual"));
  for (const char* f : {"cells.geojson", "anchors.csv", "anchors_wed.csv", "network.csv", "partition.csv",
                        "partition_fri.csv", "retention.csv", "isolation.json", "sii.csv", "hist_distance_c0.csv",
                        "hist_angle_c0.csv", "report.csv", "report.json", "manifest.json", "planted_comparison.json"}) {
    EXPECT_TRUE(a.contains(f)) << f;
  }
  const auto manifest = nlohmann::json::parse(a.at("manifest.json"));
  EXPECT_EQ(manifest.at("parameters").at("seed"), cfg.seed);
  EXPECT_EQ(manifest.at("seeds").at("simulate"), derive_seed(cfg.seed, "simulate"));
  EXPECT_GE(manifest.at("planted_comparison").at("matched_node_agreement").get<double>(), 0.9);
}

TEST(Pipeline, ManifestReproducesReport) {
  const auto dir = scratch("manifest");
  auto cfg = small_city(dir);
  cfg.out = (dir / "a").string();
  cfg.seed = 5;
  run_all(cfg);
  const auto manifest = io::read_json_file((dir / "a" / "manifest.json").string(), "manifest");
  PipelineConfig rebuilt;
  KeyValues kv;
  for (const auto& [k, v] : manifest.at("parameters").items()) {
    kv[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  kv["out"] = (dir / "b").string();
  rebuilt.apply(kv);
  run_all(rebuilt);
  EXPECT_EQ(slurp(dir / "a" / "report.csv"), slurp(dir / "b" / "report.csv"));
  EXPECT_EQ(slurp(dir / "a" / "report.json"), slurp(dir / "b" / "report.json"));
}

TEST(Pipeline, SingleWeekdayCommunities) {
  const auto dir = scratch("weekday");
  auto cfg = small_city(dir);
  cfg.out = (dir / "o").string();
  stage_tessellate(cfg);
  stage_infer(cfg);
  stage_network(cfg);
  cfg.weekday = 3;
  stage_communities(cfg);
  EXPECT_TRUE(fs::exists(dir / "o" / "partition_wed.csv"));
  EXPECT_TRUE(fs::exists(dir / "o" / "communities_wed.json"));
  EXPECT_FALSE(fs::exists(dir / "o" / "partition.csv"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  EXPECT_EQ(run_cli("--version"), 0);
  EXPECT_EQ(run_cli("bogus-command"), 2);
  EXPECT_EQ(run_cli("synth --out " + (dir / "c").string() + " --n-users 300 --n-towers 40"), 0);
  const std::string cfg = "--config " + (dir / "c" / "city.cfg").string();
  EXPECT_EQ(run_cli("run-all " + cfg + " --reps 5 --out " + (dir / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "manifest.json"));
  EXPECT_EQ(run_cli("simulate " + cfg + " --reps 1 --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run_cli("infer " + cfg + " --pings /nonexistent/p.csv --out " + (dir / "o").string()), 2);
  EXPECT_EQ(run_cli("run-all --config /nonexistent.cfg"), 2);
  {
    std::ofstream bad(dir / "bad_pings.csv");
    bad << "who,what,when\n";
  }
  EXPECT_EQ(run_cli("infer " + cfg + " --pings " + (dir / "bad_pings.csv").string() + " --out " + (dir / "o").string()),
            3);
  EXPECT_EQ(run_cli("communities " + cfg + " --seed 3 --resolution 1.0 --min-size 2 --weekday mon --out " +
                    (dir / "o").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "o" / "communities_mon.json"));
}
