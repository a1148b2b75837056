#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "clusterlab/runner.hpp"

using namespace clusterlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("clusterlab_runner_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every output file except the runtime sidecar.
std::map<std::string, std::string> outputs(const fs::path& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != "run_info.json") m[e.path().filename().string()] = slurp(e.path());
  return m;
}

json small_jump_law() {
  return json{{"experiment", "jump_law"}, {"seed", 5}, {"params", {{"r", 1000}, {"n_samples", 20000}, {"w", 1e-5}}}};
}

struct EnvGuard {
  explicit EnvGuard(const char* v) {
    if (v) setenv("CLUSTERLAB_SEED", v, 1);
    else unsetenv("CLUSTERLAB_SEED");
  }
  ~EnvGuard() { unsetenv("CLUSTERLAB_SEED"); }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CLUSTERLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path write_config(const std::string& name, const json& cfg) {
  const auto p = fs::temp_directory_path() / ("clusterlab_cfg_" + name + ".json");
  CsvTable::write_text(p, cfg.dump());
  return p;
}

} // namespace

TEST(Schema, RejectsUnknownKeys) {
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"sede", 1}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"params", {{"rr", 10}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"tolerances", {{"kss", 0.1}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"output", {{"fmt", "csv"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "nope"}}), ConfigError);
  EXPECT_THROW(resolve_config(json::array()), ConfigError);
}

TEST(Schema, RejectsInvalidValues) {
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"params", {{"r", -5}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"params", {{"r", "ten"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"params", {{"u", 10.0}, {"w", 0.1}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"seed", -1}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "oracle_table"}, {"model", {{"model", "iid"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "theta_hat"}, {"model", {{"model", "garch"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"experiment", "jump_law"}, {"output", {{"format", "xml"}}}}), ConfigError);
}

TEST(Schema, SubcommandSelectsDefaultAndRejectsMismatch) {
  Overrides ov;
  ov.subcommand = "oracle";
  EXPECT_EQ(resolve_config(json::object(), ov).def->name, "oracle_table");
  ov.subcommand = "clt";
  EXPECT_THROW(resolve_config(small_jump_law(), ov), ConfigError);
  EXPECT_THROW(resolve_config(json::object()), ConfigError);
}

TEST(Schema, PublishedSchemaListsEveryExperiment) {
  const auto s = published_schema();
  for (const auto& def : experiment_defs()) EXPECT_TRUE(s.dump().find(def.name) != std::string::npos) << def.name;
}

TEST(Seed, Precedence) {
  {
    EnvGuard env(nullptr);
    json cfg = small_jump_law();
    cfg.erase("seed");
    EXPECT_EQ(resolve_config(cfg).ctx.seed, 1u);
  }
  {
    EnvGuard env("77");
    json cfg = small_jump_law();
    cfg.erase("seed");
    EXPECT_EQ(resolve_config(cfg).ctx.seed, 77u);
    EXPECT_EQ(resolve_config(small_jump_law()).ctx.seed, 5u);
    Overrides ov;
    ov.seed = 9;
    EXPECT_EQ(resolve_config(small_jump_law(), ov).ctx.seed, 9u);
    EXPECT_EQ(resolve_config(small_jump_law(), ov).config["seed"], 9);
  }
  {
    EnvGuard env("12x");
    json cfg = small_jump_law();
    cfg.erase("seed");
    EXPECT_THROW(resolve_config(cfg), ConfigError);
  }
}

TEST(Execute, SummaryEmbedsResolvedConfig) {
  Overrides ov;
  ov.out_dir = scratch("summary").string();
  ov.workers = 1;
  const auto rc = resolve_config(small_jump_law(), ov);
  const auto out = execute(rc);
  EXPECT_EQ(out.exit_code, 0) << out.summary.dump(1);
  const auto summary = json::parse(slurp(fs::path(*ov.out_dir) / "summary.json"));
  EXPECT_EQ(summary["inputs"], rc.config);
  EXPECT_EQ(summary["inputs"]["params"]["max_blocks"], std::uint64_t{1} << 40); // default filled in
  EXPECT_EQ(summary["inputs"]["tolerances"]["ks"], 0.02);
  for (const char* k : {"inputs", "outputs", "targets", "checks", "pass", "files"}) EXPECT_TRUE(summary.contains(k)) << k;
  EXPECT_TRUE(summary["pass"].get<bool>());
  const auto info = json::parse(slurp(fs::path(*ov.out_dir) / "run_info.json"));
  EXPECT_TRUE(info.contains("runtime_seconds"));
  EXPECT_EQ(info["workers"], 1);
  for (const auto& f : summary["files"]) EXPECT_TRUE(fs::exists(fs::path(*ov.out_dir) / f.get<std::string>()));
}

TEST(Execute, ByteIdenticalReruns) {
  for (const auto& cfg : {small_jump_law(), json{{"experiment", "oracle_table"}, {"params", {{"r_max", 8}}}},
                          json{{"experiment", "sweep"}, {"params", {{"r_list", {10, 100, 1000}}, {"w_scale", 1e-3}}}}}) {
    Overrides a, b;
    a.out_dir = scratch("rerun_a").string();
    b.out_dir = scratch("rerun_b").string();
    a.workers = 1;
    b.workers = 3;
    execute(resolve_config(cfg, a));
    execute(resolve_config(cfg, b));
    const auto oa = outputs(*a.out_dir), ob = outputs(*b.out_dir);
    EXPECT_GE(oa.size(), 2u);
    EXPECT_EQ(oa, ob) << cfg.dump();
  }
}

TEST(Execute, JsonFormat) {
  Overrides ov;
  ov.out_dir = scratch("json").string();
  ov.format = "json";
  const auto out = execute(resolve_config(small_jump_law(), ov));
  ASSERT_FALSE(out.files.empty());
  for (const auto& f : out.files) {
    EXPECT_EQ(fs::path(f).extension(), ".json") << f;
    EXPECT_NO_THROW(json::parse(slurp(fs::path(*ov.out_dir) / f)));
  }
}

TEST(Execute, FailedToleranceGivesExitOne) {
  json cfg = small_jump_law();
  cfg["tolerances"] = {{"ks", 1e-9}};
  Overrides ov;
  ov.out_dir = scratch("fail").string();
  const auto out = execute(resolve_config(cfg, ov));
  EXPECT_EQ(out.exit_code, 1);
  EXPECT_FALSE(out.failures.empty());
  EXPECT_FALSE(out.summary["pass"].get<bool>());
}

TEST(Execute, RuntimeErrorGivesExitOne) {
  // a level no block can exceed
  json cfg{{"experiment", "jump_law"}, {"model", {{"model", "ar1"}, {"phi", 0.5}}},
           {"params", {{"r", 10}, {"n_samples", 10}, {"max_blocks", 1000}, {"u", 1e300}}}};
  Overrides ov;
  ov.out_dir = scratch("error").string();
  const auto out = execute(resolve_config(cfg, ov));
  EXPECT_EQ(out.exit_code, 1);
  EXPECT_FALSE(out.error.empty());
  EXPECT_TRUE(fs::exists(fs::path(*ov.out_dir) / "summary.json"));
}

TEST(TableToJson, NumbersAndStrings) {
  CsvTable t({"name", "x"});
  t.add({std::string("a,b"), 0.25});
  const auto j = table_to_json(t);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["name"], "a,b");
  EXPECT_EQ(j[0]["x"], 0.25);
}

TEST(Cli, ExitCodes) {
  const auto ok = write_config("ok", json{{"experiment", "oracle_table"}, {"params", {{"r_max", 6}}}});
  const auto bad = write_config("bad", json{{"experiment", "jump_law"}, {"params", {{"r", -5}}}});
  const auto junk = fs::temp_directory_path() / "clusterlab_cfg_junk.json";
  CsvTable::write_text(junk, "{not json");
  const auto out = scratch("cli").string();
  EXPECT_EQ(run_cli("oracle --config " + ok.string() + " --out " + out), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "summary.json"));
  EXPECT_EQ(run_cli("jump-law --config " + bad.string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("oracle --config " + junk.string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("oracle --bogus-flag"), 2);
  EXPECT_EQ(run_cli("oracle --config /nonexistent/cfg.json"), 2);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("clt --config " + ok.string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("schema"), 0);
  EXPECT_EQ(run_cli("--version"), 0);
}

TEST(Cli, SeedFlagOverridesConfigAndEnv) {
  const auto cfg = write_config("seed", small_jump_law());
  const auto out = scratch("cli_seed");
  EnvGuard env("123");
  ASSERT_EQ(run_cli("jump-law --config " + cfg.string() + " --seed 42 --workers 2 --out " + out.string()), 0);
  const auto summary = json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(summary["inputs"]["seed"], 42);
  EXPECT_EQ(json::parse(slurp(out / "run_info.json"))["workers"], 2);
  json no_seed = small_jump_law();
  no_seed.erase("seed");
  const auto cfg2 = write_config("seed_env", no_seed);
  ASSERT_EQ(run_cli("jump-law --config " + cfg2.string() + " --out " + out.string()), 0);
  EXPECT_EQ(json::parse(slurp(out / "summary.json"))["inputs"]["seed"], 123);
}

TEST(Cli, RerunIsByteIdentical) {
  const auto cfg = write_config("rerun", small_jump_law());
  const auto a = scratch("cli_a"), b = scratch("cli_b");
  ASSERT_EQ(run_cli("jump-law --config " + cfg.string() + " --workers 1 --out " + a.string()), 0);
  ASSERT_EQ(run_cli("jump-law --config " + cfg.string() + " --workers 4 --out " + b.string()), 0);
  EXPECT_EQ(outputs(a), outputs(b));
}
