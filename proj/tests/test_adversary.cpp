#include <gtest/gtest.h>

#include "scalota/scenario.hpp"

using namespace scalota;

namespace {

const std::string kVin = "WVWZZZ1JZXW000001";
constexpr std::size_t kImage = 192 * 1024;

struct Small {
  World w;

  explicit Small(bool station = false, TrustMode mode = TrustMode::Trusted) : w(options()) {
    w.add_producer("p");
    w.add_software({SoftwareId{"nav"}, EcuId{"ecu1"}, "p", kImage, {}});
    VehicleSpec v{kVin, {{EcuId{"ecu1"}, {SoftwareId{"nav"}}}}, mode, {}};
    v.plan.ignitions = {100e3, 200e3};
    if (station) {
      auto& s = w.add_station("s0", 1 << 30);
      s.subscribe(Topic{"WVWZZZ1JZXW", SoftwareId{"nav"}});
      v.plan.station = "station/s0";
    }
    w.add_vehicle(v);
    w.release(Release{1000, SoftwareId{"nav"}, EcuId{"ecu1"}, {}, 2, kImage});
  }

  static WorldOptions options() {
    WorldOptions o;
    o.timers.bucket_size = 64 * 1024;
    o.timers.image_deadline = 60e3;
    o.timers.download_stall = 5e3;
    o.timers.fallback_delay = 15e3;
    return o;
  }

  uint64_t nav() const {
    for (const auto* sec : w.secondaries(kVin)) {
      auto it = sec->installed().find(SoftwareId{"nav"});
      if (it != sec->installed().end()) return it->second.mu.tau.v;
    }
    return 0;
  }
};

AttackRule rule(AttackKind k, std::set<std::string> kinds, std::optional<simnet::LinkClass> link = std::nullopt) {
  AttackRule r;
  r.kind = k;
  r.match.kinds = std::move(kinds);
  r.match.link = link;
  return r;
}

}  // namespace

TEST(AttackKind, NamesRoundTrip) {
  for (int i = 0; i <= static_cast<int>(AttackKind::CompromiseKey); ++i) {
    auto k = static_cast<AttackKind>(i);
    EXPECT_EQ(parse_attack_kind(attack_kind_name(k)), k);
  }
  EXPECT_THROW(parse_attack_kind("teleport"), ConfigurationError);
}

TEST(AttackRules, RejectedRuleSets) {
  AttackRule p = rule(AttackKind::Drop, {});
  p.probability = 1.5;
  EXPECT_THROW(validate_rules({p}), ConfigurationError);

  AttackRule w = rule(AttackKind::Drop, {});
  w.start = 10;
  w.end = 5;
  EXPECT_THROW(validate_rules({w}), ConfigurationError);

  AttackRule d = rule(AttackKind::Delay, {});
  d.delay_ms = -1;
  EXPECT_THROW(validate_rules({d}), ConfigurationError);

  AttackRule role = rule(AttackKind::CompromiseKey, {});
  role.role = "producer";
  role.actor = "producer/p";
  EXPECT_THROW(validate_rules({role}), ConfigurationError);

  AttackRule nobody = rule(AttackKind::CompromiseKey, {});
  nobody.role = "station";
  EXPECT_THROW(validate_rules({nobody}), ConfigurationError);

  AttackRule sud = rule(AttackKind::CompromiseKey, {});
  sud.role = "sud";
  sud.actor = "sud";
  AttackRule ir = rule(AttackKind::CompromiseKey, {});
  ir.role = "ir";
  ir.actor = "ir/main";
  EXPECT_NO_THROW(validate_rules({sud}));
  EXPECT_NO_THROW(validate_rules({ir}));
  EXPECT_THROW(validate_rules({sud, ir}), ConfigurationError);
}

TEST(AttackMatch, EmptyMatchesAllAndActorsByPrefix) {
  Envelope env;
  env.src = "vehicle/" + kVin + "/primary";
  env.dst = "sud";
  env.kind = "Status";
  EXPECT_TRUE(AttackMatch{}.matches(env, simnet::LinkClass::Cellular));
  AttackMatch m;
  m.src = "vehicle/";
  m.kinds = {"Status"};
  EXPECT_TRUE(m.matches(env, simnet::LinkClass::Cellular));
  m.link = simnet::LinkClass::StationWire;
  EXPECT_FALSE(m.matches(env, simnet::LinkClass::Cellular));
  m.link.reset();
  m.dst = "ir/";
  EXPECT_FALSE(m.matches(env, simnet::LinkClass::Cellular));
}

TEST(Adversary, IdleRulesPassEverythingThrough) {
  Small s;
  AttackRule r = rule(AttackKind::Drop, {});
  r.start = 1e9;
  auto& adv = s.w.set_adversary({r}, 1);
  s.w.run(400e3);
  EXPECT_EQ(adv.actions(), 0u);
  EXPECT_EQ(s.nav(), 2u);
  EXPECT_TRUE(check_liveness(s.w, false).empty());
}

TEST(Adversary, UncompromisedKeyIsNotHandedOut) {
  Small s;
  auto& adv = s.w.set_adversary({}, 1);
  EXPECT_THROW(adv.compromised("station/s0"), std::out_of_range);
}

TEST(Adversary, TamperedChunksNeverInstall) {
  Small s;
  s.w.set_adversary({rule(AttackKind::Tamper, {"FetchChunk"})}, 3);
  s.w.run(400e3);
  EXPECT_EQ(s.nav(), 1u);
  EXPECT_FALSE(s.w.ctx().log.alerts.empty());
  EXPECT_TRUE(check_safety(s.w).empty());
  EXPECT_TRUE(check_liveness(s.w, true).empty());
}

TEST(Adversary, SpoofedReplyRejected) {
  Small s;
  s.w.set_adversary({rule(AttackKind::Spoof, {"StatusReply"})}, 3);
  s.w.run(400e3);
  EXPECT_EQ(s.nav(), 1u);
  EXPECT_FALSE(s.w.ctx().log.alerts.empty());
  EXPECT_TRUE(check_safety(s.w).empty());
}

TEST(Adversary, ReplayedStatusDoesNotMoveVersionsBack) {
  Small s;
  AttackRule r = rule(AttackKind::Replay, {"Status", "StatusReply"});
  r.start = 150e3;
  auto& adv = s.w.set_adversary({r}, 4);
  s.w.run(400e3);
  EXPECT_GT(adv.actions(), 0u);
  EXPECT_EQ(s.nav(), 2u);  // installed before the replay window opened
  EXPECT_TRUE(check_safety(s.w).empty());
}

TEST(Adversary, SlowRetrievalTripsStallDetection) {
  Small s;
  AttackRule r = rule(AttackKind::SlowRetrieval, {}, simnet::LinkClass::Cellular);
  r.delay_ms = 30e3;
  s.w.set_adversary({r}, 5);
  s.w.run(400e3);
  EXPECT_FALSE(s.w.ctx().log.alerts.empty());
  EXPECT_TRUE(check_safety(s.w).empty());
  EXPECT_TRUE(check_liveness(s.w, true).empty());
}

TEST(Adversary, CompromisedStationCannotInstallForgedImage) {
  Small s(true, TrustMode::Untrusted);
  AttackRule r;
  r.kind = AttackKind::CompromiseKey;
  r.role = "station";
  r.actor = "station/s0";
  r.revoke_at = 150e3;
  auto& adv = s.w.set_adversary({r}, 6);
  EXPECT_EQ(adv.compromised("station/s0").id.value, "station/s0");
  s.w.run(500e3);
  EXPECT_TRUE(check_safety(s.w).empty());
  for (const auto& rec : s.w.ctx().log.installs) EXPECT_EQ(rec.blob->origin(), Provenance::Producer);
  EXPECT_TRUE(s.w.ctx().crl->contains(SignerId{"station/s0"}));
  // once the key is revoked the vehicle goes to the repository over cellular
  EXPECT_EQ(s.nav(), 2u);
}

TEST(Adversary, CompromisedSudKeysCannotForgeImages) {
  Small s;
  AttackRule r;
  r.kind = AttackKind::CompromiseKey;
  r.role = "sud";
  r.actor = "sud";
  s.w.set_adversary({r}, 7);
  s.w.run(400e3);
  EXPECT_TRUE(check_safety(s.w).empty());
  EXPECT_EQ(s.nav(), 1u);
}

class Catalog : public ::testing::TestWithParam<CatalogAttack> {};

TEST_P(Catalog, SafetyHoldsAcrossSeeds) {
  for (uint64_t seed = 1; seed <= 6; ++seed) {
    SuiteCase c = run_case(catalog_name(GetParam()), random_attack_config(GetParam(), seed));
    EXPECT_TRUE(c.safety.empty()) << catalog_name(GetParam()) << " seed " << seed << ": " << c.safety.front();
    EXPECT_TRUE(c.liveness.empty()) << catalog_name(GetParam()) << " seed " << seed << ": " << c.liveness.front();
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, Catalog, ::testing::ValuesIn(kCatalog),
                         [](const auto& info) {
                           std::string n = catalog_name(info.param);
                           std::replace(n.begin(), n.end(), '-', '_');
                           return n;
                         });
