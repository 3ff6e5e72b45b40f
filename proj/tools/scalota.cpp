#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "scalota/scenario.hpp"

using namespace scalota;

namespace {

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<double> horizon;
  std::string csv;
};

void add_common(CLI::App* cmd, Common& o) {
  cmd->add_option("-c,--config", o.config, "scenario INI file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override scenario.seed");
  cmd->add_option("--horizon", o.horizon, "override scenario.horizon_ms")->check(CLI::PositiveNumber);
  cmd->add_option("--csv", o.csv, "write CSV here ('-' for stdout)");
}

ScenarioConfig load(const Common& o) {
  ScenarioConfig c = o.config.empty() ? evaluation_config() : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.horizon) c.horizon_ms = *o.horizon;
  c.validate();
  return c;
}

template <class Writer>
void emit_csv(const std::string& where, Writer&& write) {
  if (where.empty()) return;
  if (where == "-") {
    write(std::cout);
    return;
  }
  std::ofstream out(where);
  if (!out) throw std::runtime_error("cannot write " + where);
  write(out);
}

std::ostream& info(const Common& o) { return o.csv == "-" ? std::cerr : std::cout; }

int cmd_run(const Common& o, const std::string& dump) {
  ScenarioConfig c = load(o);
  ScenarioRun run = execute(c);
  const MetricsReport& r = run.report;
  auto safety = check_safety(*run.world);
  auto liveness = check_liveness(*run.world, !c.attacks.empty());
  auto& os = info(o);
  for (const auto& v : r.vehicles) {
    os << v.vin << "  total " << fmt(v.complete() ? v.total() / 1000 : std::nan("")) << " s  (status "
       << fmt(v.complete() ? v.manifest_phase() / 1000 : std::nan("")) << " s, images "
       << fmt(v.complete() ? v.image_phase() / 1000 : std::nan("")) << " s)\n";
  }
  os << "cellular " << r.cellular_bytes << " B, images " << r.image_bytes << " B, manifests " << r.manifest_bytes
     << " B\n";
  os << "installs " << r.installs << ", alerts " << r.alerts << "\n";
  for (const auto& v : safety) os << "safety: " << v << "\n";
  for (const auto& v : liveness) os << "liveness: " << v << "\n";
  emit_csv(o.csv, [&](std::ostream& out) { write_metrics_csv(out, r); });
  if (!dump.empty()) run.world->dump(dump);
  return safety.empty() && liveness.empty() ? 0 : 1;
}

int cmd_sweep(const Common& o, const std::string& what) {
  ScenarioConfig c = load(o);
  std::vector<SweepRow> rows;
  if (what == "coverage") {
    auto xs = c.sweep_coverage.empty() ? std::vector<double>{0, 25, 50, 75, 100} : c.sweep_coverage;
    rows = coverage_sweep(c, xs);
  } else {
    auto ns = c.sweep_clients.empty() ? std::vector<std::size_t>{1, 5, 10, 20} : c.sweep_clients;
    rows = client_sweep(c, ns);
  }
  auto& os = info(o);
  bool ok = true;
  for (const auto& row : rows) {
    double t = row.report.mean_completion();
    ok = ok && !std::isnan(t) && row.report.alerts == 0;
    os << what << " " << fmt(row.x) << "  mean " << fmt(t / 1000) << " s  max " << fmt(row.report.max_completion() / 1000)
       << " s  cellular " << row.report.cellular_bytes << " B\n";
  }
  emit_csv(o.csv, [&](std::ostream& out) { write_sweep_csv(out, rows); });
  return ok ? 0 : 1;
}

int cmd_suite(const std::string& kind, std::size_t seeds, uint64_t first, const std::string& dump,
              const std::string& csv) {
  std::optional<std::filesystem::path> dir;
  if (!dump.empty()) dir = dump;
  auto cases = run_property_suite(parse_suite(kind), seeds, first, dir);
  std::size_t failed = 0;
  for (const auto& c : cases) failed += c.passed() ? 0 : 1;
  write_suite_table(std::cout, cases);
  if (csv != "-") emit_csv(csv, [&](std::ostream& out) { write_suite_table(out, cases); });
  std::cerr << cases.size() - failed << "/" << cases.size() << " runs clean\n";
  return failed == 0 ? 0 : 1;
}

int cmd_cost(const Common& o, double rate) {
  ScenarioConfig c = load(o);
  MetricsReport r = run_scenario(c);
  BandwidthCost cost = bandwidth_cost(r, rate);
  auto& os = info(o);
  os << "cellular bytes " << r.cellular_bytes << "\n";
  os << "cost " << fmt(cost.c_bwdth) << "\n";
  os << "relative " << cost.relative << "\n";
  emit_csv(o.csv, [&](std::ostream& out) {
    out << "rate,cellular_bytes,image_bytes,manifest_bytes,cost,relative\n";
    out << rate << "," << r.cellular_bytes << "," << r.image_bytes << "," << r.manifest_bytes << "," << cost.c_bwdth
        << "," << cost.relative << "\n";
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated over-the-air update fleet with station caches"};
  app.require_subcommand(1);

  Common run_o, sweep_o, cost_o;
  std::string dump;
  auto* run = app.add_subcommand("run", "run one scenario and check it");
  add_common(run, run_o);
  run->add_option("--dump", dump, "write the world state and traces to this directory");

  std::string what = "coverage";
  auto* sweep = app.add_subcommand("sweep", "vary station coverage or fleet size");
  add_common(sweep, sweep_o);
  sweep->add_option("--over", what, "coverage or clients")->check(CLI::IsMember({"coverage", "clients"}));

  std::string kind = "attacks";
  std::size_t seeds = 200;
  uint64_t first = 1;
  std::string suite_dump, suite_csv;
  auto* suite = app.add_subcommand("suite", "randomized property runs");
  suite->add_option("--kind", kind, "safety, liveness or attacks")
      ->check(CLI::IsMember({"safety", "liveness", "attacks"}));
  suite->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);
  suite->add_option("--first-seed", first, "first seed");
  suite->add_option("--dump", suite_dump, "dump failing runs here");
  suite->add_option("--csv", suite_csv, "also write the table here");

  double rate = 1e-6;
  auto* cost = app.add_subcommand("cost", "cellular bandwidth cost of one scenario");
  add_common(cost, cost_o);
  cost->add_option("--rate", rate, "price per cellular byte")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_o, dump);
    if (*sweep) return cmd_sweep(sweep_o, what);
    if (*suite) return cmd_suite(kind, seeds, first, suite_dump, suite_csv);
    if (*cost) return cmd_cost(cost_o, rate);
  } catch (const ConfigurationError& e) {
    std::cerr << "config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
