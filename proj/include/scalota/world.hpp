#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scalota/adversary.hpp"
#include "scalota/director.hpp"
#include "scalota/image_repo.hpp"
#include "scalota/producer.hpp"
#include "scalota/udb_broker.hpp"
#include "scalota/vehicle.hpp"

namespace scalota {

struct SoftwareSpec {
  SoftwareId s;
  EcuId e;
  std::string producer;  // producer name as given to World::add_producer
  std::size_t size = 1 << 20;
  std::vector<SoftwareId> deps;
};

struct VehicleSpec {
  std::string vin;
  std::map<EcuId, std::vector<SoftwareId>> ecus;
  TrustMode mode = TrustMode::Trusted;
  VehiclePlan plan;  // plan.station holds a station actor id
};

struct WorldOptions {
  uint64_t seed = 1;
  bool fast_signatures = true;  // keyed-hash stand-in instead of Ed25519
  simnet::LinkProfile cellular = simnet::cellular_profile();
  simnet::LinkProfile station_wire = simnet::station_wire_profile();
  simnet::LinkProfile engine_cable = simnet::engine_cable_profile();
  simnet::LinkProfile in_vehicle = simnet::in_vehicle_profile();
  TimerPolicy timers;
  std::string repo = "main";
  uint64_t image_seed = 7;  // image contents; kept apart from `seed` so runs can share generated images
};

/// One simulated deployment: director, repository, broker, stations, producers and vehicles on a
/// shared network. Build it, add releases, then run.
class World {
 public:
  explicit World(WorldOptions opt)
      : opt_(std::move(opt)),
        provider_(opt_.fast_signatures ? std::shared_ptr<const SignatureProvider>(std::make_shared<DeterministicTestProvider>())
                                       : std::make_shared<Ed25519Provider>()),
        keys_(provider_, opt_.seed),
        registry_(std::make_shared<KeyRegistry>(provider_)),
        crl_(std::make_shared<RevocationList>()),
        net_(sim_),
        ctx_(sim_, net_) {
    ctx_.provider = provider_;
    ctx_.registry = registry_;
    ctx_.crl = crl_;
    ctx_.timers = opt_.timers;

    KeyPair root = key("sud/root");
    registry_->add(root);
    DirectorKeys dk{key("sud/targets"), key("sud/snapshot"), key("sud/timestamp"), root, key("sud/publish")};
    for (const KeyPair* k : {&dk.targets, &dk.snapshot, &dk.timestamp, &dk.publish}) registry_->add_certified(*k, root);
    adversary_key_ = key("adversary");
    registry_->add(adversary_key_);

    repo_ = std::make_unique<ImageRepo>(opt_.repo, registry_, crl_, ctx_.anchors);
    repo_->add_trusted_reader(dk.targets.id);
    director_ = std::make_unique<Director>(dk, registry_, crl_, ctx_.anchors, opt_.seed ^ 0x5eed);

    KeyPair engine_key = key("udb/engine");
    registry_->add(engine_key);
    sud_ = adopt(std::make_unique<SudActor>(ctx_, *director_, "engine", engine_key.id));
    repo_actor_ = adopt(std::make_unique<RepoActor>(ctx_, *repo_));
    engine_ = adopt(std::make_unique<EngineActor>(ctx_, engine_key));

    cell_up_ = net_.add_link("cellular-up", opt_.cellular);
    cell_down_ = net_.add_link("cellular-down", opt_.cellular);
    backbone("sud", repo_actor_->id());
    backbone("engine", repo_actor_->id());
    backbone("engine", "sud");

    net_.set_receiver([this](const Envelope& env) {
      auto it = actors_.find(env.dst);
      if (it == actors_.end()) return;
      try {
        it->second->receive(env);
      } catch (const EncodingError& e) {
        ctx_.audit(env.dst + " discarded malformed " + env.kind + ": " + e.what());
      }
    });
  }

  World(const World&) = delete;
  World& operator=(const World&) = delete;

  // ---- construction ----------------------------------------------------------------------------

  ProducerActor& add_producer(const std::string& name) {
    std::string id = "producer/" + name;
    KeyPair k = key(id);
    registry_->add(k);
    auto* p = adopt(std::make_unique<ProducerActor>(ctx_, id, k, opt_.repo, opt_.image_seed));
    producers_[name] = p;
    repo_actor_->add_producer(id, k.id);
    sud_->add_producer(k.id, id);
    backbone(id, repo_actor_->id());
    backbone(id, "sud");
    return *p;
  }

  /// Registers a software line, its authorized producer and its factory (v1) release.
  void add_software(const SoftwareSpec& spec) {
    ProducerActor& p = *producers_.at(spec.producer);
    if (software_.count(spec.s)) throw ConfigurationError("duplicate software " + spec.s.value);
    ctx_.anchors.producers[spec.s] = p.signer();
    sync_anchors();
    software_[spec.s] = spec;
    Release r{0, spec.s, spec.e, spec.deps, 1, spec.size};
    auto [image, mu] = p.prepare(r, 0);
    repo_->store(image, mu, p.signer());
    legit_[{spec.s, 1}] = mu.theta;
    factory_[spec.s] = director_->seed_factory_manifest(mu);
  }

  /// Schedules a producer release of a newer version.
  void release(Release r) {
    const SoftwareSpec& spec = software_.at(r.s);
    r.e = spec.e;
    ProducerActor& p = *producers_.at(spec.producer);
    legit_[{r.s, r.v}] = p.prepare(r, 0).second.theta;
    p.plan(r);
  }

  StationActor& add_station(const std::string& name, uint64_t capacity) {
    std::string id = "station/" + name;
    KeyPair k = key(id);
    registry_->add(k);
    auto* st = adopt(std::make_unique<StationActor>(ctx_, id, k, capacity));
    stations_[id] = st;
    engine_->add_station(id, k.id);
    backbone("engine", id);
    return *st;
  }

  PrimaryActor& add_vehicle(const VehicleSpec& spec) {
    if (!valid_vin(spec.vin)) throw ConfigurationError("malformed VIN: " + spec.vin);
    std::string base = "vehicle/" + spec.vin;
    std::string pid = base + "/primary";
    KeyPair pk = key(pid);
    registry_->add(pk);
    auto* primary = adopt(std::make_unique<PrimaryActor>(ctx_, pid, spec.vin, pk, spec.mode,
                                                         opt_.seed * 1000003 + primaries_.size()));
    primaries_[spec.vin] = primary;

    simnet::LinkId bus_down = net_.add_link(base + "/bus-down", opt_.in_vehicle);
    simnet::LinkId bus_up = net_.add_link(base + "/bus-up", opt_.in_vehicle);
    std::map<EcuId, std::vector<UpdateManifest>> initial;
    std::map<EcuId, SignerId> signers;
    for (const auto& [ecu, list] : spec.ecus) {
      std::string sid = base + "/" + ecu.value;
      KeyPair sk = key(sid);
      registry_->add(sk);
      auto* sec = adopt(std::make_unique<SecondaryActor>(ctx_, sid, spec.vin, ecu, sk, spec.mode, pid, pk.id));
      secondaries_[spec.vin].push_back(sec);
      signers[ecu] = sk.id;
      for (const auto& s : list) {
        auto f = factory_.find(s);
        if (f == factory_.end()) throw ConfigurationError("vehicle " + spec.vin + " lists unknown software " + s.value);
        if (f->second.theta.e != ecu) throw ConfigurationError(s.value + " does not target " + ecu.value);
        sec->provision(f->second);
        initial[ecu].push_back(f->second);
      }
      ctx_.routes[{pid, sid}] = bus_down;
      ctx_.routes[{sid, pid}] = bus_up;
      primary->add_secondary(ecu, sid, sec->report());
    }
    director_->register_vehicle(spec.vin, initial, pk.id, signers, spec.mode);
    sud_->add_vehicle_route(spec.vin, pid);

    ctx_.routes[{pid, "sud"}] = cell_up_;
    ctx_.routes[{"sud", pid}] = cell_down_;
    ctx_.routes[{pid, repo_actor_->id()}] = cell_up_;
    ctx_.routes[{repo_actor_->id(), pid}] = cell_down_;
    if (spec.plan.station) {
      auto st = stations_.find(*spec.plan.station);
      if (st == stations_.end()) throw ConfigurationError("vehicle " + spec.vin + " plans unknown " + *spec.plan.station);
      st->second->add_vehicle(pid, spec.vin);
      std::string wire = pid + "<->" + *spec.plan.station;
      ctx_.routes[{pid, *spec.plan.station}] = net_.add_link(wire + "/up", opt_.station_wire);
      ctx_.routes[{*spec.plan.station, pid}] = net_.add_link(wire + "/down", opt_.station_wire);
    }
    primary->set_plan(spec.plan);
    vehicles_[spec.vin] = spec;
    return *primary;
  }

  /// Installs the attack rules as link middleware. Throws ConfigurationError on excluded rule sets.
  Adversary& set_adversary(std::vector<AttackRule> rules, uint64_t seed) {
    for (const auto& r : rules) {
      if (r.kind != AttackKind::CompromiseKey) continue;
      if (r.role == "station" && !stations_.count(r.actor)) throw ConfigurationError("no station " + r.actor);
      if (r.role == "primary") {
        bool found = false;
        for (const auto& [vin, p] : primaries_) {
          if (p->id() != r.actor) continue;
          found = true;
          // a trusted primary is inside the trust boundary by definition
          if (vehicles_.at(vin).mode != TrustMode::Untrusted) {
            throw ConfigurationError("compromising the trusted primary of " + vin + " is outside the threat model");
          }
        }
        if (!found) throw ConfigurationError("no primary " + r.actor);
      }
    }
    adversary_ = std::make_unique<Adversary>(ctx_, std::move(rules), seed, adversary_key_,
                                             [this](const std::string& id) { return key(id); });
    net_.set_interceptor([this](const Envelope& env) { return (*adversary_)(env); });
    return *adversary_;
  }

  simnet::RunResult run(double horizon) { return sim_.run(horizon); }

  // ---- access ----------------------------------------------------------------------------------

  simnet::Simulator& sim() { return sim_; }
  Network& net() { return net_; }
  const Network& net() const { return net_; }
  Context& ctx() { return ctx_; }
  const Context& ctx() const { return ctx_; }
  Director& director() { return *director_; }
  const Director& director() const { return *director_; }
  ImageRepo& repo() { return *repo_; }
  EngineActor& engine() { return *engine_; }
  SudActor& sud() { return *sud_; }
  Adversary* adversary() { return adversary_.get(); }
  const std::map<std::string, StationActor*>& stations() const { return stations_; }
  const std::map<std::string, PrimaryActor*>& primaries() const { return primaries_; }
  const std::map<std::string, ProducerActor*>& producers() const { return producers_; }
  const std::vector<SecondaryActor*>& secondaries(const std::string& vin) const { return secondaries_.at(vin); }
  const std::map<SoftwareId, SoftwareSpec>& software() const { return software_; }
  const std::map<std::string, VehicleSpec>& vehicles() const { return vehicles_; }
  const WorldOptions& options() const { return opt_; }
  const KeyRegistry& registry() const { return *registry_; }

  /// The metadata the producer legitimately released for (s, v), if any.
  const MetaRecord* legit_theta(const SoftwareId& s, uint64_t v) const {
    auto it = legit_.find({s, v});
    return it == legit_.end() ? nullptr : &it->second;
  }

  KeyPair key(const std::string& id) const { return keys_.make(id); }

  /// Writes inventory, repository contents, station caches, vehicle state and the trace.
  void dump(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "inventory.txt") << director_->inventory_dump();
    repo_->dump(dir / "repo");
    std::ofstream caches(dir / "caches.txt");
    for (const auto& [id, st] : stations_) caches << "[" << id << "]\n" << st->cache_table();
    std::ofstream state(dir / "vehicles.txt");
    for (const auto& [vin, p] : primaries_) {
      state << p->state_dump();
      for (const auto* sec : secondaries_.at(vin)) {
        for (const auto& [s, inst] : sec->installed()) {
          state << "  installed " << sec->ecu().value << " " << s.value << " v" << inst.mu.tau.v << "\n";
        }
      }
    }
    std::ofstream alerts(dir / "alerts.txt");
    for (const auto& a : ctx_.log.alerts) alerts << a.time << " " << a.actor << " " << a.reason << "\n";
    std::ofstream audit(dir / "audit.txt");
    for (const auto& line : ctx_.log.audit) audit << line << "\n";
    std::ofstream trace(dir / "trace.csv");
    simnet::write_trace_csv(trace, net_.trace());
  }

 private:
  template <class A>
  A* adopt(std::unique_ptr<A> a) {
    A* raw = a.get();
    if (actors_.count(raw->id())) throw ConfigurationError("duplicate actor " + raw->id());
    actors_.emplace(raw->id(), std::move(a));
    return raw;
  }

  void backbone(const std::string& a, const std::string& b) {
    ctx_.routes[{a, b}] = net_.add_link(a + "->" + b, opt_.engine_cable);
    ctx_.routes[{b, a}] = net_.add_link(b + "->" + a, opt_.engine_cable);
  }

  // The repository and director keep their own copies of the anchors.
  void sync_anchors() {
    repo_->set_anchors(ctx_.anchors);
    director_->set_anchors(ctx_.anchors);
  }

  WorldOptions opt_;
  std::shared_ptr<const SignatureProvider> provider_;
  KeyFactory keys_;
  std::shared_ptr<KeyRegistry> registry_;
  std::shared_ptr<RevocationList> crl_;
  simnet::Simulator sim_;
  Network net_;
  Context ctx_;
  KeyPair adversary_key_;

  std::unique_ptr<ImageRepo> repo_;
  std::unique_ptr<Director> director_;
  std::map<std::string, std::unique_ptr<Actor>> actors_;
  SudActor* sud_ = nullptr;
  RepoActor* repo_actor_ = nullptr;
  EngineActor* engine_ = nullptr;
  std::map<std::string, ProducerActor*> producers_;
  std::map<std::string, StationActor*> stations_;
  std::map<std::string, PrimaryActor*> primaries_;
  std::map<std::string, std::vector<SecondaryActor*>> secondaries_;
  std::map<SoftwareId, SoftwareSpec> software_;
  std::map<std::string, VehicleSpec> vehicles_;
  std::map<SoftwareId, UpdateManifest> factory_;
  std::map<std::pair<SoftwareId, uint64_t>, MetaRecord> legit_;
  simnet::LinkId cell_up_ = 0;
  simnet::LinkId cell_down_ = 0;
  std::unique_ptr<Adversary> adversary_;
};

}  // namespace scalota
