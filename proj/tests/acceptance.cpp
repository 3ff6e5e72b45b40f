// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "generators.hpp"
#include "scalota/scenario.hpp"

using namespace scalota;

namespace {

struct Verdict {
  bool ok = true;
  std::ostringstream why;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      why << " [failed: " << what << "]";
    }
  }
};

double seconds(double ms) { return ms / 1000; }

std::string s3(double v) { return fmt(v); }

Verdict coverage_speedup() {
  Verdict v;
  auto t0 = std::chrono::steady_clock::now();
  auto rows = coverage_sweep(evaluation_config(), {0, 25, 50, 75, 100});
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<double> t;
  for (const auto& r : rows) t.push_back(r.report.mean_completion());
  for (double x : t) v.require(!std::isnan(x), "every run completes");
  double ratio = t.back() / t.front();
  v.why << "times(s)";
  for (double x : t) v.why << " " << s3(seconds(x));
  v.why << " ratio " << s3(ratio) << " wall " << s3(wall) << "s";
  v.require(ratio <= 0.20, "100% / 0% <= 0.20");
  for (std::size_t i = 1; i < t.size(); ++i) v.require(t[i] <= t[i - 1], "non-increasing in coverage");
  v.require(wall < 10, "sweep under 10 s");
  return v;
}

Verdict cache_ordering() {
  Verdict v;
  auto with_mix = [](double hit, double miss, double unknown, double coverage = 100) {
    ScenarioConfig c = evaluation_config();
    c.coverage = coverage;
    c.hit = hit;
    c.miss = miss;
    c.unknown = unknown;
    return run_scenario(c).mean_completion();
  };
  double hit = with_mix(100, 0, 0), miss = with_mix(0, 100, 0), unknown = with_mix(0, 0, 100);
  double cellular = with_mix(100, 0, 0, 0);
  double gap = std::abs(miss - unknown) / miss;
  v.why << "hit " << s3(seconds(hit)) << "s miss " << s3(seconds(miss)) << "s unknown " << s3(seconds(unknown))
        << "s cellular " << s3(seconds(cellular)) << "s |miss-unknown|/miss " << s3(gap);
  v.require(hit < miss, "hit < miss");
  v.require(gap <= 0.10, "miss ~ unknown within 10%");
  v.require(miss < cellular, "miss < cellular only");
  return v;
}

Verdict client_scaling() {
  Verdict v;
  const std::vector<std::size_t> ns{1, 5, 10, 20};
  ScenarioConfig c = evaluation_config();
  c.coverage = 0;
  auto cell = client_sweep(c, ns);
  c.coverage = 100;
  auto station = client_sweep(c, ns);
  double base = cell.front().report.mean_completion();
  v.why << "0%:";
  for (std::size_t i = 0; i < ns.size(); ++i) {
    double t = cell[i].report.mean_completion();
    double rel = t / (base * static_cast<double>(ns[i]));
    v.why << " N=" << ns[i] << " " << s3(seconds(t)) << "s(x" << s3(rel) << ")";
    v.require(rel >= 0.85 && rel <= 1.15, "linear within 15% at N=" + std::to_string(ns[i]));
  }
  double one = station.front().report.mean_completion(), twenty = station.back().report.mean_completion();
  v.why << " 100%: N=1 " << s3(seconds(one)) << "s N=20 " << s3(seconds(twenty)) << "s";
  v.require(twenty <= 1.5 * one, "N=20 within 1.5x of N=1 at full coverage");
  return v;
}

Verdict bandwidth() {
  Verdict v;
  ScenarioConfig c = evaluation_config();
  c.coverage = 100;
  MetricsReport full = run_scenario(c);
  c.coverage = 0;
  MetricsReport none = run_scenario(c);
  double rel_full = bandwidth_cost(full, 1).relative, rel_none = bandwidth_cost(none, 1).relative;
  v.why << "manifests " << full.manifest_bytes << " B, relative at 100% " << rel_full << ", at 0% " << rel_none;
  v.require(full.manifest_bytes <= 100'000, "manifests <= 100 KB");
  v.require(rel_full <= 0.001, "relative <= 0.001");
  v.require(rel_none == 1.0, "relative == 1 at 0%");
  return v;
}

Verdict safety() {
  Verdict v;
  constexpr std::size_t kSeeds = 200;
  auto cases = run_property_suite(SuiteKind::Attacks, kSeeds);
  std::map<std::string, std::size_t> runs, bad;
  std::size_t acted = 0;
  for (const auto& c : cases) {
    ++runs[c.family];
    if (!c.safety.empty()) ++bad[c.family];
    if (c.adversary_actions > 0) ++acted;
  }
  std::size_t violations = 0;
  for (const auto& [f, n] : runs) {
    violations += bad[f];
    v.require(n >= kSeeds, f + " has >= 200 seeds");
  }
  v.why << runs.size() << " kinds x " << kSeeds << " seeds, adversary active in " << acted << "/" << cases.size()
        << ", unsafe installs " << violations;
  v.require(runs.size() == std::size(kCatalog), "all attack kinds ran");
  v.require(violations == 0, "zero unsafe installs");
  for (const auto& c : cases) {
    if (!c.safety.empty()) {
      v.why << "\n    " << c.family << " seed " << c.seed << ": " << c.safety.front();
      break;
    }
  }
  return v;
}

Verdict liveness() {
  Verdict v;
  constexpr std::size_t kSeeds = 200;
  auto clean = run_property_suite(SuiteKind::Safety, kSeeds);
  auto dropped = run_property_suite(SuiteKind::Liveness, kSeeds);
  auto attacked = run_property_suite(SuiteKind::Attacks, kSeeds / 4, 10'001);
  auto failures = [](const std::vector<SuiteCase>& cs) {
    std::size_t n = 0;
    for (const auto& c : cs) n += (c.liveness.empty() && c.safety.empty()) ? 0 : 1;
    return n;
  };
  std::size_t false_alarms = 0, installs = 0, alerted = 0;
  for (const auto& c : clean) {
    false_alarms += c.alerts;
    installs += c.installs;
  }
  for (const auto& c : attacked) alerted += c.alerts > 0 ? 1 : 0;
  std::size_t f_clean = failures(clean), f_drop = failures(dropped), f_att = failures(attacked);
  v.why << "adversary-free " << clean.size() - f_clean << "/" << clean.size() << " (" << installs << " installs, "
        << false_alarms << " alerts); drop windows " << dropped.size() - f_drop << "/" << dropped.size()
        << "; attack runs " << attacked.size() - f_att << "/" << attacked.size() << " (" << alerted << " alerted)";
  v.require(f_clean == 0 && false_alarms == 0, "adversary-free runs install everything and never alert");
  v.require(f_drop == 0, "dropped deliveries recover or alert");
  v.require(f_att == 0, "every prevented delivery alerts");
  for (const auto* set : {&clean, &dropped, &attacked}) {
    for (const auto& c : *set) {
      if (!c.liveness.empty()) {
        v.why << "\n    " << c.family << " seed " << c.seed << ": " << c.liveness.front();
        return v;
      }
    }
  }
  return v;
}

std::vector<std::vector<bool>> reach(std::vector<std::vector<bool>> r) {
  std::size_t n = r.size();
  for (std::size_t i = 0; i < n; ++i) r[i][i] = true;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (r[i][k] && r[k][j]) r[i][j] = true;
  return r;
}

bool closure_trial(std::mt19937_64& rng) {
  std::size_t n = 1 + rng() % 8;
  // random labels so index order says nothing about topological order
  std::vector<std::size_t> label(n);
  std::iota(label.begin(), label.end(), 0);
  std::shuffle(label.begin(), label.end(), rng);
  auto id = [&](std::size_t i) { return SoftwareId{"n" + std::to_string(label[i])}; };
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n));
  DependencyGraph g;
  for (std::size_t i = 0; i < n; ++i) {
    g.deps[id(i)];
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng() % 3 == 0) {
        adj[i][j] = true;
        g.deps[id(i)].push_back(id(j));
      }
    }
  }
  std::size_t t = rng() % n;
  std::set<SoftwareId> satisfied;
  std::vector<bool> sat(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i != t && rng() % 4 == 0) {
      sat[i] = true;
      satisfied.insert(id(i));
    }
  }
  // satisfied software is neither shipped nor walked through
  auto cut = adj;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (sat[i] || sat[j]) cut[i][j] = false;
  auto r = reach(cut);
  std::set<SoftwareId> want;
  for (std::size_t j = 0; j < n; ++j)
    if (r[t][j]) want.insert(id(j));

  auto order = dependency_closure(id(t), g, satisfied);
  std::set<SoftwareId> got(order.begin(), order.end());
  if (got != want || got.size() != order.size()) return false;
  std::map<SoftwareId, std::size_t> pos;
  for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = k;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (adj[i][j] && pos.count(id(i)) && pos.count(id(j)) && pos[id(j)] > pos[id(i)]) return false;
  return true;
}

bool reassembly_trial(std::mt19937_64& rng) {
  std::size_t size = rng() % 200'000;
  std::size_t bucket = 1 + rng() % 70'000;
  UpdateImage img{SoftwareId{"x"}, make_blob(testing::random_bytes(rng, size))};
  UpdateManifest mu;
  mu.theta.s = img.s;
  mu.theta.h = img.blob->digest();
  uint64_t total = bucket_count(size, bucket);

  // interrupted after k buckets, each bucket carried in its own copy as it would be off the wire
  uint64_t k = rng() % (total + 1);
  auto copy = [](const Bucket& b) {
    auto v = b.chunk.view();
    BlobPtr blob = make_blob(Bytes(v.begin(), v.end()));
    return Bucket{b.index, ImageSlice{blob, 0, blob->size()}, b.digest};
  };
  BucketProgress p;
  p.total = total;
  auto first = img.buckets(bucket);
  for (uint64_t i = 0; i < k; ++i) p.received.push_back(copy(first[i]));
  auto partial = assemble_buckets(p, mu);
  if (k < total) {
    if (!std::holds_alternative<AssemblyResume>(partial) || std::get<AssemblyResume>(partial).next_index != k) {
      return false;
    }
    for (const auto& b : img.buckets(bucket, k)) p.received.push_back(copy(b));
  }
  auto done = assemble_buckets(p, mu);
  if (!std::holds_alternative<AssemblyComplete>(done)) return false;
  if (std::get<AssemblyComplete>(done).image.blob->bytes() != img.blob->bytes()) return false;
  if (size == 0) return true;
  // one flipped byte anywhere is caught
  std::size_t at = rng() % size;
  Bytes bad(img.blob->bytes());
  bad[at] ^= 0x01;
  std::size_t which = at / bucket;
  BlobPtr blob = make_blob(Bytes(bad.begin() + static_cast<std::ptrdiff_t>(which * bucket),
                                 bad.begin() + static_cast<std::ptrdiff_t>(std::min(size, (which + 1) * bucket))));
  p.received[which] = Bucket{which, ImageSlice{blob, 0, blob->size()}, ImageSlice{blob, 0, blob->size()}.digest()};
  return std::holds_alternative<AssemblyIntegrityError>(assemble_buckets(p, mu));
}

template <class T, class Decode>
bool roundtrip(const T& x, Decode decode) {
  Bytes b = canonical_encode(x);
  T back = decode(ByteView{b});
  return back == x && canonical_encode(back) == b;
}

Verdict oracles() {
  Verdict v;
  std::mt19937_64 rng(7);
  std::size_t dag_ok = 0, img_ok = 0, enc_ok = 0;
  for (int i = 0; i < 1000; ++i) dag_ok += closure_trial(rng);
  for (int i = 0; i < 1000; ++i) img_ok += reassembly_trial(rng);
  for (int i = 0; i < 10'000; ++i) {
    bool ok = false;
    switch (i % 4) {
      case 0: ok = roundtrip(testing::random_manifest(rng), [](ByteView b) { return decode_manifest(b); }); break;
      case 1: ok = roundtrip(testing::random_bundle(rng), [](ByteView b) { return decode_bundle(b); }); break;
      case 2: ok = roundtrip(testing::random_status(rng), [](ByteView b) { return decode_status(b); }); break;
      case 3: ok = roundtrip(testing::random_tau(rng), [](ByteView b) { return decode_tau(b); }); break;
    }
    enc_ok += ok;
  }
  v.why << "closure " << dag_ok << "/1000, reassembly " << img_ok << "/1000, encoding " << enc_ok << "/10000";
  v.require(dag_ok == 1000, "closure oracle");
  v.require(img_ok == 1000, "reassembly identity");
  v.require(enc_ok == 10'000, "encoding round trip");
  return v;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"coverage speedup", coverage_speedup}, {"cache outcome ordering", cache_ordering},
      {"client scaling", client_scaling},     {"bandwidth cost", bandwidth},
      {"safety under attack", safety},        {"liveness and alerts", liveness},
      {"oracle equivalence", oracles},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, run] : criteria) {
    ++n;
    auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v.ok = false;
      v.why << "exception: " << e.what();
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %-24s %s  (%.1fs)  %s\n", n, name, v.ok ? "PASS" : "FAIL", wall, v.why.str().c_str());
    std::fflush(stdout);
    failed += v.ok ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
