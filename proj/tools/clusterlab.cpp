#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "clusterlab/runner.hpp"

using namespace clusterlab;

namespace {

struct CommonOptions {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string out;
  std::string format;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "root seed (overrides the config and CLUSTERLAB_SEED)");
  sub->add_option("--workers", o.workers, "worker threads (default: machine parallelism)")->check(CLI::PositiveNumber);
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--format", o.format, "detail file format")->check(CLI::IsMember({"csv", "json"}));
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

int run_subcommand(const std::string& name, const CLI::App& sub, const CommonOptions& o) {
  Overrides ov;
  ov.subcommand = name;
  if (sub.count("--seed")) ov.seed = o.seed;
  if (sub.count("--workers")) ov.workers = o.workers;
  if (sub.count("--out")) ov.out_dir = o.out;
  if (sub.count("--format")) ov.format = o.format;
  try {
    const auto rc = resolve_config(load_config(o.config), ov);
    const auto outcome = execute(rc);
    const auto& s = outcome.summary;
    std::cout << rc.def->name << " (seed " << rc.ctx.seed << ") -> " << rc.out_dir << "\n";
    if (s.contains("checks"))
      for (const auto& c : s.at("checks"))
        std::cout << "  " << (c.at("pass").get<bool>() ? "PASS " : "FAIL ") << c.at("name").get<std::string>() << ": value "
                  << format_double(c.at("value").get<double>()) << ", target " << format_double(c.at("target").get<double>())
                  << ", tol " << format_double(c.at("tolerance").get<double>()) << " (" << c.at("rule").get<std::string>()
                  << ")\n";
    if (s.contains("warnings"))
      for (const auto& w : s.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
    if (!outcome.error.empty()) std::cerr << "error: " << outcome.error << "\n";
    for (const auto& f : outcome.failures) std::cerr << "failed: " << json(f).dump() << "\n";
    return outcome.exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"clusterlab: cluster functionals of regularly varying series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "clusterlab 1.0");

  const std::vector<std::pair<std::string, std::string>> subs{
      {"oracle", "exact iid tables (oracle_table, moment_rate)"},
      {"simulate", "generate and dump a series"},
      {"estimate", "blocks estimators on a series (estimate, consistency)"},
      {"jump-law", "conditional law of the first/last jump times"},
      {"clt", "replicate distribution of the normalized block processes"},
      {"theta", "extremal index from tail paths and block maxima"},
      {"diag", "anticlustering diagnostic"},
      {"sweep", "rate table across block sizes with regime tags"},
  };
  std::map<std::string, CommonOptions> opts;
  std::map<std::string, CLI::App*> apps;
  for (const auto& [name, help] : subs) {
    apps[name] = app.add_subcommand(name, help);
    add_common(apps[name], opts[name]);
  }
  auto* schema_cmd = app.add_subcommand("schema", "print the config schema as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (schema_cmd->parsed()) {
    std::cout << published_schema().dump(2) << "\n";
    return 0;
  }
  for (const auto& [name, sub] : apps)
    if (sub->parsed()) return run_subcommand(name, *sub, opts[name]);
  return 2;
}
