// mobiseg command-line driver.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mobiseg/pipeline.hpp"

namespace {

using mobiseg::KeySpec;
using mobiseg::KeyValues;

std::string flag_name(const char* key) {
  std::string s(key);
  for (auto& ch : s) {
    if (ch == '_') ch = '-';
  }
  return "--" + s;
}

// Registers --config plus one option per key. Values given on the command
// line land in `overrides` and win over the config file.
void add_keys(CLI::App* cmd, const std::vector<KeySpec>& keys, KeyValues& overrides, std::string& config_path) {
  cmd->add_option("--config", config_path, "key = value config file");
  for (const auto& k : keys) {
    const std::string key = k.name;
    if (k.is_flag) {
      cmd->add_flag_callback(flag_name(k.name), [&overrides, key] { overrides[key] = "true"; }, k.help);
    } else {
      cmd->add_option_function<std::string>(
          flag_name(k.name), [&overrides, key](const std::string& v) { overrides[key] = v; }, k.help);
    }
  }
}

KeyValues merged(const std::string& config_path, const KeyValues& overrides) {
  KeyValues kv;
  if (!config_path.empty()) kv = mobiseg::read_key_value_file(config_path);
  for (const auto& [k, v] : overrides) kv[k] = v;
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mobility-based segregation analysis of call detail records"};
  app.set_version_flag("--version", std::string(mobiseg::version));
  app.require_subcommand(1);

  KeyValues overrides;
  std::string config_path;

  using Stage = void (*)(const mobiseg::PipelineConfig&);
  const std::vector<std::tuple<const char*, const char*, Stage>> stages{
      {"tessellate", "Voronoi cells, urban filter and SEL composition", mobiseg::stage_tessellate},
      {"infer", "home/work anchors from pings", mobiseg::stage_infer},
      {"network", "home-work networks", mobiseg::stage_network},
      {"communities", "Louvain communities and pruning", mobiseg::stage_communities},
      {"retention", "per-weekday community retention", mobiseg::stage_retention},
      {"isolation", "residential isolation index per community", mobiseg::stage_isolation},
      {"simulate", "distance/angle fits and the simulated isolation experiment", mobiseg::stage_simulate},
      {"report", "final tables and manifest", mobiseg::stage_report},
  };
  Stage chosen = nullptr;
  for (const auto& [name, help, fn] : stages) {
    auto* cmd = app.add_subcommand(name, help);
    add_keys(cmd, mobiseg::PipelineConfig::keys(), overrides, config_path);
    cmd->callback([&chosen, f = fn] { chosen = f; });
  }
  auto* run_all = app.add_subcommand("run-all", "run every stage in order");
  add_keys(run_all, mobiseg::PipelineConfig::keys(), overrides, config_path);

  auto* synth = app.add_subcommand("synth", "generate a synthetic city with planted communities");
  std::vector<KeySpec> synth_keys = mobiseg::synth_keys();
  synth_keys.push_back({"seed", "random seed"});
  synth_keys.push_back({"out", "output directory"});
  add_keys(synth, synth_keys, overrides, config_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const KeyValues kv = merged(config_path, overrides);
    if (synth->parsed()) {
      mobiseg::SynthConfig sc;
      std::string out = "synth_city";
      mobiseg::apply_synth_keys(sc, out, kv);
      mobiseg::write_synth_city(mobiseg::generate_city(sc), out);
      std::cout << "wrote synthetic city to " << out << '\n';
      return 0;
    }
    mobiseg::PipelineConfig cfg;
    cfg.apply(kv);
    if (run_all->parsed()) {
      mobiseg::run_all(cfg);
    } else {
      const char* name = app.get_subcommands().front()->get_name().c_str();
      mobiseg::detail::run_stage(name, [&] { chosen(cfg); });
    }
    std::cout << "outputs in " << cfg.out << '\n';
    return 0;
  } catch (const mobiseg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const mobiseg::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
}
