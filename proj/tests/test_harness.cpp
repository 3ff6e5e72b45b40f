#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "scalota/scenario.hpp"

using namespace scalota;

namespace {

ScenarioConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small enough to run in a few milliseconds, large enough to need several buckets.
ScenarioConfig quick(double coverage) {
  ScenarioConfig c = evaluation_config();
  c.total_bytes = 8 * kMiB;
  c.coverage = coverage;
  return c;
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  ScenarioConfig c = parse("");
  ScenarioConfig d;
  EXPECT_EQ(c.vehicles, d.vehicles);
  EXPECT_EQ(c.total_bytes, d.total_bytes);
  EXPECT_EQ(c.timers.bucket_size, d.timers.bucket_size);
  EXPECT_DOUBLE_EQ(c.cellular.bandwidth_bps, d.cellular.bandwidth_bps);
  EXPECT_TRUE(c.attacks.empty());
}

TEST(Config, AllSectionsRead) {
  ScenarioConfig c = parse(R"(
[scenario]
seed = 42
horizon_ms = 5000
signatures = ed25519
[topology]
vehicles = 3
stations = 2
producers = 2
ecus = 4
[links]
cellular_mbps = 2.5
station_latency_ms = 7
[bundle]
total_mb = 10
images = 5
dependencies = chain
releases = 2
release_gap_ms = 1234
[cache]
capacity_mb = 3
[mix]
coverage = 60
hit = 50
miss = 30
unknown = 20
[vehicles]
mode = mixed
ignitions = 3
station_delay_ms = 250
[timers]
download_stall_ms = 111
status_retries = 9
bucket_kb = 64
[sweep]
coverage = 0, 50,100
clients = 1,2
[attack.a]
kind = delay
link = cellular
messages = Status, StatusReply
src = vehicle/
start_ms = 10
end_ms = 20
probability = 0.5
delay_ms = 99
)");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_DOUBLE_EQ(c.horizon_ms, 5000);
  EXPECT_FALSE(c.fast_signatures);
  EXPECT_EQ(c.vehicles, 3u);
  EXPECT_EQ(c.ecus, 4u);
  EXPECT_DOUBLE_EQ(c.cellular.bandwidth_bps, 2.5e6);
  EXPECT_DOUBLE_EQ(c.station_wire.latency_ms, 7);
  EXPECT_EQ(c.total_bytes, 10 * kMiB);
  EXPECT_TRUE(c.chain_deps);
  EXPECT_EQ(c.releases, 2u);
  EXPECT_EQ(c.cache_bytes, 3 * kMiB);
  EXPECT_EQ(c.station_images(), 3u);  // 60% of 5
  EXPECT_EQ(c.mode, VehicleModeMix::Mixed);
  EXPECT_DOUBLE_EQ(c.station_delay_ms, 250);
  EXPECT_DOUBLE_EQ(c.timers.download_stall, 111);
  EXPECT_EQ(c.timers.status_retry_budget, 9);
  EXPECT_EQ(c.timers.bucket_size, 64u * 1024);
  EXPECT_EQ(c.sweep_coverage, (std::vector<double>{0, 50, 100}));
  EXPECT_EQ(c.sweep_clients, (std::vector<std::size_t>{1, 2}));
  ASSERT_EQ(c.attacks.size(), 1u);
  const AttackRule& r = c.attacks[0];
  EXPECT_EQ(r.kind, AttackKind::Delay);
  EXPECT_EQ(r.match.link, simnet::LinkClass::Cellular);
  EXPECT_EQ(r.match.kinds, (std::set<std::string>{"Status", "StatusReply"}));
  EXPECT_EQ(r.match.src, "vehicle/");
  EXPECT_DOUBLE_EQ(r.end, 20);
  EXPECT_DOUBLE_EQ(r.probability, 0.5);
  EXPECT_DOUBLE_EQ(r.delay_ms, 99);
}

TEST(Config, Rejections) {
  const char* bad[] = {
      "[nonsense]\nx = 1\n",
      "[topology]\nvehicels = 2\n",
      "[mix]\nhit = 50\nmiss = 20\nunknown = 20\n",
      "[mix]\ncoverage = 120\n",
      "[scenario]\nsignatures = rsa\n",
      "[vehicles]\nmode = sometimes\n",
      "[bundle]\nimages = 100\n",
      "[bundle]\nimages = 0\n",
      "[bundle]\ndependencies = tree\n",
      "[topology]\nvehicles = many\n",
      "[topology]\nvehicles = 0\n",
      "[links]\ncellular_mbps = 0\n",
      "[timers]\nbucket_kb = 0\n",
      "[sweep]\nclients = 0, 1\n",
      "[attack.1]\nkind = teleport\n",
      "[attack.1]\nkind = drop\nlink = carrier_pigeon\n",
      "[attack.1]\nkind = drop\nprobability = 2\n",
      "[attack.1]\nkind = compromise-key\nrole = station\nactor = station/s5\n",
      "[attack.1]\nkind = compromise-key\nrole = sud\nactor = sud\n[attack.2]\nkind = compromise-key\nrole = ir\nactor = ir/main\n",
      "[scenario\nseed = 1\n",
  };
  for (const char* text : bad) EXPECT_THROW(parse(text), ConfigurationError) << text;
}

TEST(Config, MissingFile) { EXPECT_THROW(load_config("/nonexistent/x.ini"), ConfigurationError); }

TEST(Config, ShippedConfigsParse) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(SCALOTA_CONFIG_DIR)) {
    if (e.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_config(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 3u);
}

TEST(Config, BaselineFileMatchesEvaluationSetup) {
  ScenarioConfig f = load_config(std::filesystem::path(SCALOTA_CONFIG_DIR) / "baseline.ini");
  ScenarioConfig e = evaluation_config();
  EXPECT_EQ(f.total_bytes, e.total_bytes);
  EXPECT_EQ(f.images, e.images);
  EXPECT_EQ(f.timers.bucket_size, e.timers.bucket_size);
  EXPECT_DOUBLE_EQ(f.timers.download_stall, e.timers.download_stall);
  EXPECT_DOUBLE_EQ(f.horizon_ms, e.horizon_ms);
  EXPECT_DOUBLE_EQ(run_scenario(f).mean_completion(), run_scenario(e).mean_completion());
}

TEST(Metrics, RunIsDeterministic) {
  auto a = run_scenario(quick(50)), b = run_scenario(quick(50));
  EXPECT_EQ(a.cellular_bytes, b.cellular_bytes);
  EXPECT_DOUBLE_EQ(a.mean_completion(), b.mean_completion());
}

TEST(Metrics, SameSeedSameCsvBytes) {
  auto csv = [](const ScenarioConfig& c) {
    std::ostringstream os;
    write_metrics_csv(os, run_scenario(c));
    return os.str();
  };
  for (uint64_t seed : {3u, 17u}) {
    ScenarioConfig c = random_attack_config(CatalogAttack::Tamper, seed);
    EXPECT_EQ(csv(c), csv(c)) << "seed " << seed;
  }
}

TEST(Metrics, LinksConserveMessages) {
  auto r = run_scenario(quick(50));
  EXPECT_TRUE(r.conserved());
  EXPECT_EQ(r.alerts, 0u);
  EXPECT_EQ(r.installs, 4u);
}

TEST(Metrics, CsvShape) {
  auto r = run_scenario(quick(100));
  std::ostringstream os;
  write_metrics_csv(os, r);
  auto ls = lines(os.str());
  ASSERT_FALSE(ls.empty());
  EXPECT_EQ(ls[0], "section,key,field,value");
  for (std::size_t i = 1; i < ls.size(); ++i) EXPECT_EQ(std::count(ls[i].begin(), ls[i].end(), ','), 3) << ls[i];
  EXPECT_NE(os.str().find("cache,hit,count,4"), std::string::npos);
  EXPECT_EQ(fmt(std::nan("")), "nan");
  EXPECT_EQ(fmt(1.0 / 3), "0.333");
}

TEST(Cost, RateMustBePositive) {
  MetricsReport r;
  EXPECT_THROW(bandwidth_cost(r, 0), std::invalid_argument);
  EXPECT_THROW(bandwidth_cost(r, -1), std::invalid_argument);
}

TEST(Cost, HandComputed) {
  MetricsReport r;
  r.image_bytes = 900;
  r.manifest_bytes = 100;
  r.cellular_bytes = 250;
  auto c = bandwidth_cost(r, 0.01);
  EXPECT_DOUBLE_EQ(c.c_bwdth, 2.5);
  EXPECT_DOUBLE_EQ(c.relative, 0.25);
}

TEST(Cost, AllCellularIsExactlyOne) {
  auto c = bandwidth_cost(run_scenario(quick(0)), 1e-6);
  EXPECT_DOUBLE_EQ(c.relative, 1.0);
}

TEST(Cost, FullCoverageLeavesOnlyManifestsOnCellular) {
  auto r = run_scenario(quick(100));
  EXPECT_EQ(r.cellular_bytes, r.manifest_bytes);
  EXPECT_LT(bandwidth_cost(r, 1).relative, 0.01);
}

TEST(Sweep, CoverageShortensDownloads) {
  auto rows = coverage_sweep(quick(0), {0, 50, 100});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_GT(rows[0].report.mean_completion(), rows[1].report.mean_completion());
  EXPECT_GT(rows[1].report.mean_completion(), rows[2].report.mean_completion());
  EXPECT_GT(rows[0].report.cellular_bytes, rows[2].report.cellular_bytes);
  std::ostringstream os;
  write_sweep_csv(os, rows);
  auto ls = lines(os.str());
  ASSERT_EQ(ls.size(), 4u);
  EXPECT_EQ(ls[1].rfind("coverage,0.000,", 0), 0u);
}

TEST(Sweep, ClientsShareCellular) {
  auto rows = client_sweep(quick(0), {1, 4});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].report.vehicles.size(), 4u);
  double ratio = rows[1].report.mean_completion() / rows[0].report.mean_completion();
  EXPECT_NEAR(ratio, 4.0, 0.6);
}

TEST(Suite, ParseNames) {
  EXPECT_EQ(parse_suite("safety"), SuiteKind::Safety);
  EXPECT_EQ(parse_suite("liveness"), SuiteKind::Liveness);
  EXPECT_EQ(parse_suite("attacks"), SuiteKind::Attacks);
  EXPECT_THROW(parse_suite("fuzz"), ConfigurationError);
}

TEST(Suite, SafetyRunsAreClean) {
  auto cases = run_property_suite(SuiteKind::Safety, 10);
  ASSERT_EQ(cases.size(), 10u);
  for (const auto& c : cases) {
    EXPECT_TRUE(c.passed()) << "seed " << c.seed;
    EXPECT_EQ(c.alerts, 0u) << "seed " << c.seed;
    EXPECT_GT(c.installs, 0u) << "seed " << c.seed;
  }
}

TEST(Suite, LivenessRunsRecover) {
  for (const auto& c : run_property_suite(SuiteKind::Liveness, 10, 100)) EXPECT_TRUE(c.passed()) << "seed " << c.seed;
}

TEST(Suite, AttackMatrixCoversEveryFamily) {
  auto cases = run_property_suite(SuiteKind::Attacks, 2, 500);
  EXPECT_EQ(cases.size(), 2 * std::size(kCatalog));
  std::ostringstream os;
  write_suite_table(os, cases);
  auto ls = lines(os.str());
  EXPECT_EQ(ls[0], "family,passed,total");
  EXPECT_EQ(ls.size(), 1 + std::size(kCatalog));  // no violation lines
  for (std::size_t i = 1; i < ls.size(); ++i) EXPECT_EQ(ls[i].substr(ls[i].size() - 4), ",2,2") << ls[i];
}

TEST(Suite, ViolationsAreListed) {
  SuiteCase bad;
  bad.family = "tamper";
  bad.seed = 3;
  bad.safety = {"installed forged bytes"};
  std::ostringstream os;
  write_suite_table(os, {bad});
  EXPECT_EQ(os.str(), "family,passed,total\ntamper,0,1\n# tamper seed 3 safety: installed forged bytes\n");
}
