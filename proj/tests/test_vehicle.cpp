#include <gtest/gtest.h>

#include "scalota/scenario.hpp"

using namespace scalota;

namespace {

const std::string kVin = "WVWZZZ1JZXW000001";
constexpr std::size_t kImage = 256 * 1024;  // four 64 KiB buckets

struct Car {
  World w;
  PrimaryActor* primary = nullptr;

  explicit Car(TrustMode mode, std::vector<double> ignitions = {100e3}, bool station = false,
               WorldOptions o = options())
      : w(o) {
    w.add_producer("p");
    w.add_software({SoftwareId{"abs"}, EcuId{"ecu2"}, "p", kImage, {}});
    w.add_software({SoftwareId{"brake"}, EcuId{"ecu1"}, "p", kImage, {}});
    w.add_software({SoftwareId{"ui"}, EcuId{"ecu1"}, "p", kImage, {}});
    VehicleSpec v{kVin,
                  {{EcuId{"ecu1"}, {SoftwareId{"brake"}, SoftwareId{"ui"}}}, {EcuId{"ecu2"}, {SoftwareId{"abs"}}}},
                  mode,
                  {}};
    v.plan.ignitions = std::move(ignitions);
    if (station) {
      w.add_station("s0", 1 << 30);
      v.plan.station = "station/s0";
    }
    primary = &w.add_vehicle(v);
  }

  static WorldOptions options() {
    WorldOptions o;
    o.timers.bucket_size = 64 * 1024;
    o.timers.image_deadline = 120e3;
    o.timers.download_stall = 5e3;
    o.timers.fallback_delay = 20e3;
    return o;
  }

  // brake v2 depends on ui v2 on the same ECU
  void release_all(double at = 1000) {
    w.release(Release{at, SoftwareId{"ui"}, EcuId{"ecu1"}, {}, 2, kImage});
    w.release(Release{at, SoftwareId{"brake"}, EcuId{"ecu1"}, {SoftwareId{"ui"}}, 2, kImage});
    w.release(Release{at, SoftwareId{"abs"}, EcuId{"ecu2"}, {}, 2, kImage});
  }

  /// Passes everything through and keeps a copy of each message handed to the network.
  std::vector<Network::Envelope>& record() {
    w.net().set_interceptor([this](const Network::Envelope& env) {
      seen.push_back(env);
      return std::vector<Network::Emission>{{env, 0}};
    });
    return seen;
  }

  std::vector<const Status*> statuses() const {
    std::vector<const Status*> out;
    for (const auto& e : seen)
      if (const auto* s = std::get_if<Status>(&e.payload)) out.push_back(s);
    return out;
  }

  std::map<std::string, uint64_t> versions() const {
    std::map<std::string, uint64_t> out;
    for (const auto* sec : w.secondaries(kVin))
      for (const auto& [s, inst] : sec->installed()) out[s.value] = inst.mu.tau.v;
    return out;
  }

  bool alerted(const std::string& needle) const {
    for (const auto& a : w.ctx().log.alerts)
      if (a.reason.find(needle) != std::string::npos) return true;
    return false;
  }

  std::vector<Network::Envelope> seen;
};

AttackRule rule(AttackKind k, std::set<std::string> kinds, std::optional<simnet::LinkClass> link = std::nullopt) {
  AttackRule r;
  r.kind = k;
  r.match.kinds = std::move(kinds);
  r.match.link = link;
  return r;
}

const std::map<std::string, uint64_t> kAllV2{{"abs", 2}, {"brake", 2}, {"ui", 2}};
const std::map<std::string, uint64_t> kAllV1{{"abs", 1}, {"brake", 1}, {"ui", 1}};

}  // namespace

TEST(Vehicle, FirstReportFullThenDigest) {
  Car car(TrustMode::Trusted, {100e3, 200e3});
  car.record();
  car.w.run(400e3);
  auto st = car.statuses();
  ASSERT_GE(st.size(), 2u);
  ASSERT_TRUE(std::holds_alternative<std::vector<StatusEntry>>(st[0]->gamma.R));
  EXPECT_EQ(std::get<std::vector<StatusEntry>>(st[0]->gamma.R).size(), 3u);
  EXPECT_EQ(st[0]->gamma.tau.v, 1u);
  EXPECT_TRUE(std::holds_alternative<Digest>(st[1]->gamma.R));
  EXPECT_GT(st[1]->gamma.tau.t, st[0]->gamma.tau.t);
  EXPECT_NE(st[1]->gamma.nonce, st[0]->gamma.nonce);
  EXPECT_TRUE(car.w.ctx().log.alerts.empty());
}

TEST(Vehicle, UntrustedReportEntriesAreSecondarySigned) {
  Car car(TrustMode::Untrusted);
  car.record();
  car.w.run(200e3);
  auto st = car.statuses();
  ASSERT_FALSE(st.empty());
  const auto& entries = std::get<std::vector<StatusEntry>>(st[0]->gamma.R);
  for (const auto& e : entries) {
    ASSERT_TRUE(e.sig.has_value());
    EXPECT_EQ(e.sig->signer.value, "vehicle/" + kVin + "/" + e.e.value);
  }
}

TEST(Vehicle, TrustedUpdateInstallsOverCellular) {
  Car car(TrustMode::Trusted);
  car.release_all();
  car.w.run(400e3);
  EXPECT_EQ(car.versions(), kAllV2);
  EXPECT_TRUE(car.w.ctx().log.alerts.empty());
  EXPECT_TRUE(check_safety(car.w).empty());
}

TEST(Vehicle, UntrustedUpdateInstallsThroughStation) {
  Car car(TrustMode::Untrusted, {100e3}, true);
  car.release_all();
  car.w.run(400e3);
  EXPECT_EQ(car.versions(), kAllV2);
  EXPECT_EQ(car.w.ctx().log.cache_events.size(), 3u);
  EXPECT_TRUE(car.w.ctx().log.alerts.empty());
  EXPECT_TRUE(check_safety(car.w).empty());
}

TEST(Vehicle, DependentSoftwareInstallsInOneStep) {
  Car car(TrustMode::Trusted);
  car.release_all();
  car.w.run(400e3);
  // ui either rides in the same install step as brake or was already in place
  int brake_installs = 0;
  for (const auto& r : car.w.ctx().log.installs) {
    if (r.mu.theta.s.value != "brake") continue;
    ++brake_installs;
    bool in_batch = std::find(r.batch.begin(), r.batch.end(), SoftwareId{"ui"}) != r.batch.end();
    bool present = std::find(r.already_present.begin(), r.already_present.end(), SoftwareId{"ui"}) !=
                   r.already_present.end();
    EXPECT_TRUE(in_batch || present);
  }
  EXPECT_EQ(brake_installs, 1);
}

TEST(Vehicle, MissingReplyRaisesAlert) {
  Car car(TrustMode::Trusted);
  car.release_all();
  car.w.set_adversary({rule(AttackKind::Drop, {"StatusReply"})}, 1);
  car.w.run(400e3);
  EXPECT_EQ(car.versions(), kAllV1);
  EXPECT_TRUE(car.alerted("no valid status reply"));
}

TEST(Vehicle, DelayedReplyRaisesAlert) {
  Car car(TrustMode::Trusted);
  car.release_all();
  AttackRule r = rule(AttackKind::Delay, {"StatusReply"});
  r.delay_ms = 3600e3;
  car.w.set_adversary({r}, 1);
  car.w.run(300e3);
  EXPECT_TRUE(car.alerted("no valid status reply"));
}

TEST(Vehicle, FrozenReplyNeverAccepted) {
  Car car(TrustMode::Trusted, {100e3, 200e3, 300e3});
  AttackRule r = rule(AttackKind::Freeze, {"StatusReply"});
  r.start = 150e3;
  car.w.set_adversary({r}, 1);
  car.release_all(160e3);
  car.w.run(600e3);
  EXPECT_EQ(car.versions(), kAllV1);
  EXPECT_TRUE(car.alerted("no valid status reply"));
}

TEST(Vehicle, InterruptedDownloadResumesAtMissingBucket) {
  Car car(TrustMode::Trusted);
  car.release_all();
  std::map<std::string, int> chunks;
  std::vector<uint64_t> resumed;
  car.w.net().set_interceptor([&](const Network::Envelope& env) {
    using E = Network::Emission;
    if (const auto* c = std::get_if<FetchChunk>(&env.payload); c && env.dst.rfind("vehicle/", 0) == 0) {
      // first pass of abs: buckets 0 and 1 get through, the rest are lost
      if (c->l.path == "abs/v2" && chunks["abs"]++ < 4 && c->bucket.index >= 2) return std::vector<E>{};
    }
    const auto* f = std::get_if<FetchRequest>(&env.payload);
    if (f && f->l.path == "abs/v2" && env.src.rfind("vehicle/", 0) == 0) {
      resumed.push_back(f->from_index);
    }
    return std::vector<E>{{env, 0}};
  });
  car.w.run(400e3);
  ASSERT_GE(resumed.size(), 2u);
  EXPECT_EQ(resumed[0], 0u);
  EXPECT_EQ(resumed[1], 2u);
  EXPECT_EQ(car.versions(), kAllV2);
}

TEST(Vehicle, TamperedStationImageRejectedThenRecovered) {
  Car car(TrustMode::Trusted, {100e3}, true);
  car.release_all();
  AttackRule r = rule(AttackKind::Tamper, {"ImageBucket"}, simnet::LinkClass::StationWire);
  car.w.set_adversary({r}, 1);
  car.w.run(400e3);
  EXPECT_TRUE(check_safety(car.w).empty());
  for (const auto& rec : car.w.ctx().log.installs) EXPECT_EQ(rec.blob->origin(), Provenance::Producer);
  EXPECT_EQ(car.versions(), kAllV2);  // cellular fallback after the station kept failing
}

TEST(Vehicle, UntrustedSecondaryRejectsForgedManifest) {
  Car car(TrustMode::Untrusted);
  car.release_all();
  AttackRule r = rule(AttackKind::CompromiseKey, {});
  r.role = "primary";
  r.actor = "vehicle/" + kVin + "/primary";
  car.w.set_adversary({r}, 1);
  car.w.run(400e3);
  EXPECT_TRUE(check_safety(car.w).empty());
  EXPECT_EQ(car.versions(), kAllV1);
  EXPECT_FALSE(car.w.ctx().log.alerts.empty());
}

TEST(Vehicle, UntrustedSecondaryAlertsWhenPrimaryWithholds) {
  Car car(TrustMode::Untrusted);
  car.release_all();
  car.w.set_adversary({rule(AttackKind::Drop, {"Install"}, simnet::LinkClass::InVehicle)}, 1);
  car.w.run(400e3);
  EXPECT_EQ(car.versions(), kAllV1);
  bool secondary_alert = false;
  for (const auto& a : car.w.ctx().log.alerts)
    if (a.actor.find("/ecu") != std::string::npos) secondary_alert = true;
  EXPECT_TRUE(secondary_alert);
}

TEST(Vehicle, PartialBundleNeverHalfInstalled) {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Car car(TrustMode::Trusted, {100e3, 200e3});
    car.release_all();
    AttackRule r = rule(AttackKind::PartialBundle, {"StatusReply", "Install"});
    r.probability = 0.7;
    car.w.set_adversary({r}, seed);
    car.w.run(400e3);
    auto v = car.versions();
    EXPECT_TRUE(v["brake"] != 2 || v["ui"] == 2) << "seed " << seed;
    EXPECT_TRUE(check_safety(car.w).empty()) << "seed " << seed;
  }
}

TEST(Vehicle, VersionsNeverDecreaseUnderRollback) {
  Car car(TrustMode::Trusted, {100e3, 200e3, 300e3});
  car.release_all();
  car.w.release(Release{150e3, SoftwareId{"abs"}, EcuId{"ecu2"}, {}, 3, kImage});
  AttackRule r = rule(AttackKind::Rollback, {"StatusReply", "Install"});
  r.start = 180e3;
  car.w.set_adversary({r}, 2);
  car.w.run(500e3);
  EXPECT_TRUE(check_safety(car.w).empty());
  EXPECT_GE(car.versions()["abs"], 2u);
}
