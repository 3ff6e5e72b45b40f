#pragma once

#include <deque>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "scalota/messages.hpp"

namespace scalota {

struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingDependency : std::runtime_error {
  SoftwareId missing;
  explicit MissingDependency(SoftwareId s)
      : std::runtime_error("missing dependency manifest: " + s.value), missing(std::move(s)) {}
};

enum class TrustMode : uint8_t { Trusted, Untrusted };

/// Local dependency edges (from θ.d) plus cross-ECU co-update groups.
struct DependencyGraph {
  std::map<SoftwareId, std::vector<SoftwareId>> deps;
  std::vector<std::set<SoftwareId>> groups;

  bool contains(const SoftwareId& s) const { return deps.count(s) != 0; }

  std::vector<SoftwareId> neighbours(const SoftwareId& s) const {
    std::vector<SoftwareId> out;
    if (auto it = deps.find(s); it != deps.end()) out = it->second;
    for (const auto& g : groups) {
      if (g.count(s) == 0) continue;
      for (const auto& peer : g) {
        if (peer != s) out.push_back(peer);
      }
    }
    return out;
  }

  bool acyclic() const {
    std::map<SoftwareId, int> state;  // 0 new, 1 on stack, 2 done
    std::function<bool(const SoftwareId&)> visit = [&](const SoftwareId& s) {
      int& st = state[s];
      if (st == 1) return false;
      if (st == 2) return true;
      st = 1;
      if (auto it = deps.find(s); it != deps.end()) {
        for (const auto& d : it->second) {
          if (!visit(d)) return false;
        }
      }
      state[s] = 2;
      return true;
    };
    for (const auto& [s, _] : deps) {
      if (!visit(s)) return false;
    }
    return true;
  }
};

/// Software that must ship with `trigger`: the trigger itself plus everything reachable through
/// dependency and co-update edges, stopping at software in `satisfied`. Ordered dependencies
/// first, ties by id. Throws MissingDependency or ConfigurationError on a cycle.
inline std::vector<SoftwareId> dependency_closure(const SoftwareId& trigger, const DependencyGraph& graph,
                                                  const std::set<SoftwareId>& satisfied) {
  if (!graph.contains(trigger)) throw MissingDependency(trigger);
  std::set<SoftwareId> chosen{trigger};
  std::deque<SoftwareId> work{trigger};
  while (!work.empty()) {
    SoftwareId s = work.front();
    work.pop_front();
    for (const auto& n : graph.neighbours(s)) {
      if (!graph.contains(n)) throw MissingDependency(n);
      if (satisfied.count(n) || chosen.count(n)) continue;
      chosen.insert(n);
      work.push_back(n);
    }
  }

  // Kahn's algorithm over dependency edges inside the chosen set.
  std::map<SoftwareId, int> pending;
  std::map<SoftwareId, std::vector<SoftwareId>> dependents;
  for (const auto& s : chosen) {
    pending[s];
    for (const auto& d : graph.deps.at(s)) {
      if (!chosen.count(d)) continue;
      ++pending[s];
      dependents[d].push_back(s);
    }
  }
  std::set<SoftwareId> ready;
  for (const auto& [s, n] : pending) {
    if (n == 0) ready.insert(s);
  }
  std::vector<SoftwareId> order;
  while (!ready.empty()) {
    SoftwareId s = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(s);
    for (const auto& up : dependents[s]) {
      if (--pending[up] == 0) ready.insert(up);
    }
  }
  if (order.size() != chosen.size()) throw ConfigurationError("dependency cycle involving " + trigger.value);
  return order;
}

struct DirectorKeys {
  KeyPair targets;
  KeyPair snapshot;
  KeyPair timestamp;
  KeyPair root;
  KeyPair publish;
};

/// Director-side view of one vehicle.
struct FleetRecord {
  std::string vin;
  std::string min;
  SignerId primary;
  std::map<EcuId, SignerId> ecu_signers;
  TrustMode mode = TrustMode::Trusted;
  std::map<EcuId, std::vector<UpdateManifest>> software;  // L_e
  std::map<SoftwareId, TimestampRecord> installed;
  TimestampRecord last_status{0, 0};
  std::optional<std::vector<StatusEntry>> last_full_report;
  Digest last_report_digest;
  std::set<Nonce> seen_nonces;
};

struct IngestAccepted {
  UpdateManifest mu;
};
struct IngestRejected {
  std::string reason;
};
using IngestResult = std::variant<IngestAccepted, IngestRejected>;

struct StatusDiscarded {
  std::string reason;
};
using StatusOutcome = std::variant<StatusReport, FullReportRequired, StatusDiscarded>;

inline bool valid_vin(const std::string& vin) {
  if (vin.size() != 17) return false;
  return std::all_of(vin.begin(), vin.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); });
}

inline std::string min_of(const std::string& vin) { return vin.substr(0, 11); }

/// The OEM's software update director: fleet inventory, manifest catalog, bundling, status.
class Director {
 public:
  Director(DirectorKeys keys, std::shared_ptr<const KeyRegistry> registry, std::shared_ptr<RevocationList> crl,
           TrustAnchors anchors, uint64_t seed)
      : keys_(std::move(keys)), registry_(std::move(registry)), crl_(std::move(crl)),
        anchors_(std::move(anchors)), rng_(seed) {}

  const TrustAnchors& anchors() const { return anchors_; }
  void set_anchors(TrustAnchors anchors) { anchors_ = std::move(anchors); }
  const DirectorKeys& keys() const { return keys_; }

  void set_co_update_groups(std::vector<std::set<SoftwareId>> groups) { graph_.groups = std::move(groups); }

  /// Factory provisioning: a producer-signed manifest enters the catalog without a download.
  UpdateManifest seed_factory_manifest(UpdateManifest mu) {
    certify(mu);
    catalog_[mu.theta.s].push_back(mu);
    graph_.deps[mu.theta.s] = mu.theta.d;
    return mu;
  }

  FleetRecord& register_vehicle(const std::string& vin, const std::map<EcuId, std::vector<UpdateManifest>>& initial,
                                SignerId primary, std::map<EcuId, SignerId> ecu_signers, TrustMode mode) {
    if (!valid_vin(vin)) throw std::invalid_argument("malformed VIN: " + vin);
    if (fleet_.count(vin)) throw std::invalid_argument("vehicle already registered: " + vin);
    FleetRecord rec;
    rec.vin = vin;
    rec.min = min_of(vin);
    rec.primary = std::move(primary);
    rec.ecu_signers = std::move(ecu_signers);
    rec.mode = mode;
    rec.software = initial;
    for (const auto& [ecu, list] : initial) {
      for (const auto& mu : list) {
        rec.installed[mu.theta.s] = mu.tau;
        auto& ref = reference_[rec.min];
        if (!ref.count(mu.theta.s) || ref[mu.theta.s] < mu.tau.v) ref[mu.theta.s] = mu.tau.v;
      }
    }
    return fleet_.emplace(vin, std::move(rec)).first->second;
  }

  const FleetRecord* vehicle(const std::string& vin) const {
    auto it = fleet_.find(vin);
    return it == fleet_.end() ? nullptr : &it->second;
  }

  /// Validates a producer manifest against the bytes downloaded from its repository and, on
  /// success, countersigns it with the targets, timestamp and root roles.
  IngestResult ingest_producer_manifest(UpdateManifest mu, const SignerId& producer, const ImageBlob* downloaded) {
    const SignerId* authorized = anchors_.producer_of(mu.theta.s);
    if (authorized == nullptr || *authorized != producer) return IngestRejected{"producer not authorized"};
    if (!assert_auth(mu.sigma, {producer}, payload_digest(mu), *registry_, *crl_)) {
      return IngestRejected{"authentication"};
    }
    if (const UpdateManifest* last = latest(mu.theta.s)) {
      if (payload_digest(*last) == payload_digest(mu)) return IngestAccepted{*last};
      if (!assert_fresh(mu.tau, last->tau)) return IngestRejected{"stale"};
      if (last->theta.e != mu.theta.e) return IngestRejected{"target ECU changed"};
    }
    if (downloaded == nullptr) return IngestRejected{"download"};
    if (!assert_integrity(mu, *downloaded, mu.theta.e, mu.theta.s)) return IngestRejected{"integrity"};
    DependencyGraph trial = graph_;
    trial.deps[mu.theta.s] = mu.theta.d;
    if (!trial.acyclic()) return IngestRejected{"dependency cycle"};
    quality_assurance(mu);
    certify(mu);
    catalog_[mu.theta.s].push_back(mu);
    graph_ = std::move(trial);
    for (auto& [vin, rec] : fleet_) {
      auto& list = rec.software[mu.theta.e];
      bool has = std::any_of(list.begin(), list.end(), [&](const auto& m) { return m.theta.s == mu.theta.s; });
      if (has) list.push_back(mu);
    }
    return IngestAccepted{mu};
  }

  const UpdateManifest* latest(const SoftwareId& s) const {
    auto it = catalog_.find(s);
    if (it == catalog_.end() || it->second.empty()) return nullptr;
    return &it->second.back();
  }

  const std::map<SoftwareId, std::vector<UpdateManifest>>& catalog() const { return catalog_; }
  const DependencyGraph& graph() const { return graph_; }

  /// Bundles the latest manifest of `trigger` with every dependency and co-update peer whose
  /// latest version is newer than `installed` records. Snapshot-signed.
  Bundle resolve_and_bundle(const SoftwareId& trigger, const std::map<SoftwareId, uint64_t>& installed, double now) {
    std::set<SoftwareId> satisfied;
    for (const auto& [s, list] : catalog_) {
      auto it = installed.find(s);
      if (it != installed.end() && it->second >= list.back().tau.v) satisfied.insert(s);
    }
    satisfied.erase(trigger);
    std::vector<SoftwareId> order = dependency_closure(trigger, graph_, satisfied);
    Bundle b;
    for (const auto& s : order) b.D.push_back(*latest(s));
    std::string key = bundle_content_key(b);
    if (auto it = snapshots_.find(key); it != snapshots_.end()) return it->second;
    b.tau = TimestampRecord{bundle_clock_.next(now), ++bundle_version_};
    b.sigma.push_back(sign(payload_digest(b), keys_.snapshot, provider()));
    snapshots_.emplace(key, b);
    created_.insert(key);
    return b;
  }

  /// A snapshot bundle with a fresh τ, used when a subscriber asks for manifests again.
  Bundle rebundle(const Bundle& b, double now) {
    Bundle out;
    out.D = b.D;
    out.tau = TimestampRecord{bundle_clock_.next(now), ++bundle_version_};
    out.sigma.push_back(sign(payload_digest(out), keys_.snapshot, provider()));
    snapshots_[bundle_content_key(out)] = out;
    return out;
  }

  /// Per-subscriber copy carrying the publish role's signature and its endorsement of `subscriber`.
  Bundle publish_bundle(Bundle delta, const SignerId& subscriber) const {
    Digest d = payload_digest(delta);
    delta.sigma.push_back(sign(d, keys_.publish, provider()));
    delta.sigma.push_back(endorse(d, subscriber, keys_.publish, provider()));
    return delta;
  }

  /// Topic bundle for a model, resolved against the model's factory configuration.
  std::optional<Bundle> topic_bundle(const Topic& topic, double now) {
    auto ref = reference_.find(topic.min);
    if (ref == reference_.end() || !ref->second.count(topic.s)) return std::nullopt;
    const UpdateManifest* mu = latest(topic.s);
    if (mu == nullptr || mu->tau.v <= ref->second.at(topic.s)) return std::nullopt;
    return resolve_and_bundle(topic.s, ref->second, now);
  }

  std::vector<std::string> models_with(const SoftwareId& s) const {
    std::vector<std::string> out;
    for (const auto& [min, ref] : reference_) {
      if (ref.count(s)) out.push_back(min);
    }
    return out;
  }

  StatusOutcome handle_status(const StatusReport& gamma, const std::string& vin, double now) {
    auto it = fleet_.find(vin);
    if (it == fleet_.end()) return StatusDiscarded{"unknown vehicle"};
    FleetRecord& rec = it->second;
    if (!assert_auth(gamma.sigma, {rec.primary}, payload_digest(gamma), *registry_, *crl_)) {
      return StatusDiscarded{"authentication"};
    }
    // A fresh record holds the (0, 0) sentinel; treat it as version 1 so the first report passes.
    TimestampRecord last{rec.last_status.t, std::max<uint64_t>(rec.last_status.v, 1)};
    if (!assert_status_fresh_at_sud(gamma.tau, last)) return StatusDiscarded{"stale status"};
    if (rec.seen_nonces.count(gamma.nonce)) return StatusDiscarded{"replayed nonce"};
    if (gamma.bundles) return StatusDiscarded{"malformed status"};

    std::vector<StatusEntry> entries;
    if (const auto* d = std::get_if<Digest>(&gamma.R)) {
      if (!rec.last_full_report || *d != rec.last_report_digest) {
        rec.seen_nonces.insert(gamma.nonce);
        return FullReportRequired{vin, *d};
      }
      entries = *rec.last_full_report;
    } else {
      entries = std::get<std::vector<StatusEntry>>(gamma.R);
      if (rec.mode == TrustMode::Untrusted) {
        for (const auto& e : entries) {
          auto signer = rec.ecu_signers.find(e.e);
          if (signer == rec.ecu_signers.end() || !e.sig || e.sig->signer != signer->second ||
              e.sig->endorser || !verify(payload_digest(e), *e.sig, *registry_, *crl_)) {
            return StatusDiscarded{"ECU signature"};
          }
        }
      }
    }
    rec.seen_nonces.insert(gamma.nonce);
    if (std::holds_alternative<std::vector<StatusEntry>>(gamma.R)) {
      rec.last_full_report = entries;
      rec.last_report_digest = report_digest(entries);
    }

    std::map<SoftwareId, uint64_t> reported;
    for (const auto& e : entries) {
      reported[e.s] = e.tau.v;
      auto& inst = rec.installed[e.s];
      if (e.tau.v > inst.v) inst = e.tau;
    }

    StatusReport reply;
    reply.R = report_digest(entries);
    uint64_t v_next = last.v + 1;
    reply.tau = TimestampRecord{reply_clock_[vin].next(now), v_next};
    rec.last_status = TimestampRecord{gamma.tau.t, v_next};
    for (auto& b : reply.nonce) b = static_cast<uint8_t>(rng_());
    reply.bundles = bundles_for(rec, reported, now);
    reply.sigma.push_back(sign(payload_digest(reply), keys_.timestamp, provider()));
    return reply;
  }

  /// Every bundle content this director ever snapshot-signed.
  const std::set<std::string>& created_bundles() const { return created_; }

  /// Sorted text listing of the fleet inventory.
  std::string inventory_dump() const {
    std::ostringstream os;
    for (const auto& [vin, rec] : fleet_) {
      os << vin << " min=" << rec.min << " mode=" << (rec.mode == TrustMode::Trusted ? "trusted" : "untrusted")
         << " status=(" << rec.last_status.t << "," << rec.last_status.v << ")\n";
      for (const auto& [ecu, list] : rec.software) {
        std::vector<const UpdateManifest*> sorted;
        for (const auto& mu : list) sorted.push_back(&mu);
        std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
          return std::tie(a->theta.s, a->tau.v) < std::tie(b->theta.s, b->tau.v);
        });
        for (const auto* mu : sorted) {
          os << "  " << ecu.value << " " << mu->theta.s.value << " v" << mu->tau.v << " t" << mu->tau.t << " "
             << mu->theta.h.hex().substr(0, 16) << "\n";
        }
      }
    }
    return os.str();
  }

 private:
  const SignatureProvider& provider() const { return registry_->provider(); }

  void certify(UpdateManifest& mu) const {
    Digest d = payload_digest(mu);
    mu.sigma.push_back(sign(d, keys_.targets, provider()));
    mu.sigma.push_back(sign(d, keys_.timestamp, provider()));
    mu.sigma.push_back(sign(d, keys_.root, provider()));
  }

  // Testing of updates before release is outside the simulated system.
  void quality_assurance(const UpdateManifest&) const {}

  std::vector<Bundle> bundles_for(const FleetRecord& rec, const std::map<SoftwareId, uint64_t>& reported,
                                  double now) {
    std::vector<Bundle> out;
    std::set<std::string> keys;
    for (const auto& [s, v] : reported) {
      const UpdateManifest* mu = latest(s);
      if (mu == nullptr || mu->tau.v <= v) continue;
      Bundle snap;
      try {
        snap = resolve_and_bundle(s, reported, now);
      } catch (const MissingDependency& e) {
        deferred_.insert(s);
        continue;
      }
      if (!keys.insert(bundle_content_key(snap)).second) continue;
      Bundle b = publish_bundle(snap, rec.primary);
      if (rec.mode == TrustMode::Untrusted) {
        Digest d = payload_digest(b);
        std::set<EcuId> targets;
        for (const auto& m : b.D) targets.insert(m.theta.e);
        for (const auto& e : targets) {
          auto signer = rec.ecu_signers.find(e);
          if (signer != rec.ecu_signers.end()) b.sigma.push_back(endorse(d, signer->second, keys_.targets, provider()));
        }
      }
      out.push_back(std::move(b));
    }
    return out;
  }

  DirectorKeys keys_;
  std::shared_ptr<const KeyRegistry> registry_;
  std::shared_ptr<RevocationList> crl_;
  TrustAnchors anchors_;
  std::mt19937_64 rng_;
  std::map<std::string, FleetRecord> fleet_;
  std::map<SoftwareId, std::vector<UpdateManifest>> catalog_;
  std::map<std::string, std::map<SoftwareId, uint64_t>> reference_;  // factory versions per model
  DependencyGraph graph_;
  std::map<std::string, Bundle> snapshots_;
  std::set<std::string> created_;
  std::set<SoftwareId> deferred_;
  MonotoneClock bundle_clock_;
  uint64_t bundle_version_ = 0;
  std::map<std::string, MonotoneClock> reply_clock_;
};

/// Network face of the director.
class SudActor final : public Actor {
 public:
  SudActor(Context& ctx, Director& director, std::string engine_id, SignerId engine_signer)
      : Actor(ctx, "sud"), director_(director), engine_id_(std::move(engine_id)),
        engine_signer_(std::move(engine_signer)) {}

  Director& director() { return director_; }

  /// Maps a vehicle to the actor id its replies go to.
  void add_vehicle_route(const std::string& vin, std::string primary_actor) { vehicles_[vin] = std::move(primary_actor); }
  void add_producer(const SignerId& signer, std::string actor) { producers_[actor] = signer; }

  void receive(const Envelope& env) override {
    std::visit([&](const auto& m) { on(env, m); }, env.payload);
  }

  const std::set<Topic>& subscriptions() const { return subscribed_; }

 private:
  template <class T>
  void on(const Envelope&, const T&) {}

  void on(const Envelope& env, const SubmitManifest& m) {
    auto prod = producers_.find(env.src);
    if (prod == producers_.end()) return;
    // a resubmission while the image is still on its way would only start a second copy
    Digest key = payload_digest(m.mu);
    if (auto busy = in_flight_.find(key);
        busy != in_flight_.end() && ctx_.now() - busy->second.second < ctx_.timers.download_stall) {
      return;
    }
    uint64_t id = next_request_++;
    in_flight_[key] = {id, ctx_.now()};
    fetches_[id] = Pending{m.mu, env.src, prod->second};
    FetchRequest req;
    req.request_id = id;
    req.l = m.mu.l;
    req.requester = director_.keys().targets.id;
    req.whole = true;
    req.request_sig = sign(fetch_digest(req), director_.keys().targets, ctx_.registry->provider());
    std::string repo = "ir/" + m.mu.l.repo;
    if (!ctx_.has_route(id_, repo)) {
      finish(id, nullptr);
      return;
    }
    send(repo, std::move(req));
  }

  void on(const Envelope&, const FetchWhole& m) { finish(m.request_id, m.image.blob.get()); }
  void on(const Envelope&, const FetchError& m) { finish(m.request_id, nullptr); }

  void finish(uint64_t id, const ImageBlob* blob) {
    auto it = fetches_.find(id);
    if (it == fetches_.end()) return;
    Pending p = std::move(it->second);
    fetches_.erase(it);
    if (auto busy = in_flight_.find(payload_digest(p.mu)); busy != in_flight_.end() && busy->second.first == id) {
      in_flight_.erase(busy);
    }
    IngestResult r = director_.ingest_producer_manifest(p.mu, p.producer, blob);
    ManifestVerdict verdict{p.mu.theta.s, p.mu.tau.v, false, ""};
    if (auto* ok = std::get_if<IngestAccepted>(&r)) {
      verdict.accepted = true;
      ctx_.audit("sud accepted " + ok->mu.theta.s.value + " v" + std::to_string(ok->mu.tau.v));
      publish_software(ok->mu.theta.s);
    } else {
      verdict.reason = std::get<IngestRejected>(r).reason;
      ctx_.audit("sud rejected " + p.mu.theta.s.value + ": " + verdict.reason);
    }
    send(p.actor, verdict);
  }

  void publish_software(const SoftwareId& s) {
    for (const auto& min : director_.models_with(s)) publish_topic(Topic{min, s}, false);
  }

  void publish_topic(const Topic& topic, bool fresh) {
    if (!subscribed_.count(topic)) return;
    std::optional<Bundle> b;
    try {
      b = director_.topic_bundle(topic, ctx_.now());
    } catch (const MissingDependency& e) {
      ctx_.audit(std::string("sud deferred topic ") + topic.str() + ": " + e.what());
      return;
    }
    if (!b) return;
    if (fresh) b = director_.rebundle(*b, ctx_.now());
    send(engine_id_, Publish{topic, director_.publish_bundle(*b, engine_signer_)});
  }

  void on(const Envelope& env, const TopicSubscribe& m) {
    if (env.src != engine_id_) return;
    subscribed_.insert(m.topic);
    publish_topic(m.topic, false);
  }

  void on(const Envelope& env, const ManifestReRequest& m) {
    if (env.src != engine_id_) return;
    publish_topic(m.topic, true);
  }

  void on(const Envelope& env, const Status& m) {
    auto route = vehicles_.find(m.vin);
    if (route == vehicles_.end() || route->second != env.src) return;
    StatusOutcome out = director_.handle_status(m.gamma, m.vin, ctx_.now());
    std::string dst = route->second;
    std::string vin = m.vin;
    if (auto* reply = std::get_if<StatusReport>(&out)) {
      StatusReport copy = *reply;
      ctx_.sim.schedule_in(ctx_.timers.sud_service_time, [this, dst, vin, copy] {
        send(dst, StatusReply{vin, copy});
      });
    } else if (auto* full = std::get_if<FullReportRequired>(&out)) {
      FullReportRequired copy = *full;
      ctx_.sim.schedule_in(ctx_.timers.sud_service_time, [this, dst, copy] { send(dst, copy); });
    } else {
      ctx_.audit("sud discarded status from " + m.vin + ": " + std::get<StatusDiscarded>(out).reason);
    }
  }

  struct Pending {
    UpdateManifest mu;
    std::string actor;
    SignerId producer;
  };

  Director& director_;
  std::string engine_id_;
  SignerId engine_signer_;
  std::map<std::string, std::string> vehicles_;
  std::map<std::string, SignerId> producers_;
  std::map<uint64_t, Pending> fetches_;
  std::map<Digest, std::pair<uint64_t, double>> in_flight_;  // submission -> (request, started)
  std::set<Topic> subscribed_;
  uint64_t next_request_ = 1;
};

}  // namespace scalota
