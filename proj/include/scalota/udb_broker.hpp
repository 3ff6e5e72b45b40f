#pragma once

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scalota/messages.hpp"

namespace scalota {

struct CachedImage {
  UpdateManifest mu;
  UpdateImage image;
  uint64_t last_use = 0;
};

/// Evicts the least recently used entry; ties cannot occur because use stamps are unique.
struct LruPolicy {
  static SoftwareId victim(const std::map<SoftwareId, CachedImage>& entries) {
    auto it = std::min_element(entries.begin(), entries.end(),
                               [](const auto& a, const auto& b) { return a.second.last_use < b.second.last_use; });
    return it->first;
  }
};

/// Byte-bounded image cache holding one version per software.
template <class Policy = LruPolicy>
class StationCache {
 public:
  explicit StationCache(uint64_t capacity) : capacity_(capacity) {}

  uint64_t capacity() const { return capacity_; }
  uint64_t occupancy() const { return occupancy_; }
  std::size_t size() const { return entries_.size(); }

  /// Inserts, evicting until the image fits. Returns the evicted software, or nullopt when the
  /// image alone exceeds the capacity and is therefore not cached.
  std::optional<std::vector<SoftwareId>> insert(const UpdateManifest& mu, const UpdateImage& image) {
    uint64_t size = image.blob->size();
    if (size > capacity_) return std::nullopt;
    erase(mu.theta.s);
    std::vector<SoftwareId> evicted;
    while (occupancy_ + size > capacity_) {
      SoftwareId v = Policy::victim(entries_);
      erase(v);
      evicted.push_back(v);
    }
    entries_[mu.theta.s] = CachedImage{mu, image, ++tick_};
    occupancy_ += size;
    return evicted;
  }

  /// Cached image for exactly (s, v, h), refreshing its recency.
  const CachedImage* lookup(const SoftwareId& s, uint64_t v, const Digest& h) {
    auto it = entries_.find(s);
    if (it == entries_.end() || it->second.mu.tau.v != v || it->second.mu.theta.h != h) return nullptr;
    it->second.last_use = ++tick_;
    return &it->second;
  }

  bool erase(const SoftwareId& s) {
    auto it = entries_.find(s);
    if (it == entries_.end()) return false;
    occupancy_ -= it->second.image.blob->size();
    entries_.erase(it);
    return true;
  }

  /// Sorted "(software, version, size)" rows.
  std::vector<std::tuple<std::string, uint64_t, uint64_t>> table() const {
    std::vector<std::tuple<std::string, uint64_t, uint64_t>> rows;
    for (const auto& [s, e] : entries_) rows.emplace_back(s.value, e.mu.tau.v, e.image.blob->size());
    return rows;
  }

 private:
  uint64_t capacity_;
  uint64_t occupancy_ = 0;
  uint64_t tick_ = 0;
  std::map<SoftwareId, CachedImage> entries_;
};

/// The broker's update engine: subscribes to the director per topic, validates published
/// bundles, downloads and stores their images, and feeds subscribed stations.
class EngineActor final : public Actor {
 public:
  EngineActor(Context& ctx, KeyPair key) : Actor(ctx, "engine"), key_(std::move(key)) {}

  const SignerId& signer() const { return key_.id; }

  void receive(const Envelope& env) override {
    std::visit([&](const auto& m) { on(env, m); }, env.payload);
  }

  /// Puts a station out of service: its key joins the revocation list and it loses every topic.
  void revoke_station(const std::string& station_actor, const SignerId& station_signer) {
    if (!known_stations_.count(station_actor)) {
      ctx_.audit("engine: revoke of unknown station " + station_actor + " ignored");
      return;
    }
    *ctx_.crl = revoke(*ctx_.crl, station_signer);
    for (auto& [topic, subs] : subscribers_) subs.erase(station_actor);
    ctx_.audit("engine: revoked " + station_actor);
  }

  void add_station(const std::string& actor, SignerId signer) { known_stations_[actor] = std::move(signer); }

  /// Subscribes at the director ahead of any station demand, so images are stored early.
  void follow(const Topic& t) {
    if (sud_topics_.insert(t).second) send("sud", TopicSubscribe{t});
  }

  const std::map<Topic, std::set<std::string>>& subscribers() const { return subscribers_; }
  bool stores(const Digest& h) const { return store_.count(h) != 0; }
  std::size_t stored_images() const { return store_.size(); }
  bool has_topic(const Topic& t) const { return sud_topics_.count(t) != 0; }

 private:
  template <class T>
  void on(const Envelope&, const T&) {}

  bool station_ok(const std::string& actor) const {
    auto it = known_stations_.find(actor);
    return it != known_stations_.end() && !ctx_.crl->contains(it->second);
  }

  void on(const Envelope& env, const StationSubscribe& m) {
    if (!station_ok(env.src)) return;
    subscribers_[m.topic].insert(env.src);
    if (sud_topics_.insert(m.topic).second) send("sud", TopicSubscribe{m.topic});
    send(env.src, StationSubscribeAck{m.topic});
  }

  void on(const Envelope& env, const StationPull& m) {
    if (!station_ok(env.src)) return;
    if (auto it = store_.find(m.h); it != store_.end()) {
      send(env.src, PullResponse{it->second.mu, it->second.image});
      return;
    }
    waiting_pulls_[m.h].insert(env.src);
    if (sud_topics_.insert(m.topic).second) send("sud", TopicSubscribe{m.topic});
  }

  void on(const Envelope& env, const Publish& m) {
    if (env.src != "sud") return;
    const Bundle& b = m.bundle;
    const auto& anchors = ctx_.anchors;
    if (!assert_auth(b.sigma, {anchors.snapshot}, payload_digest(b), *ctx_.registry, *ctx_.crl) ||
        !bundle_published_to(b, key_.id, anchors, *ctx_.registry, *ctx_.crl)) {
      ctx_.audit("engine: unauthenticated bundle for " + m.topic.str());
      return;
    }
    if (auto last = last_tau_.find(m.topic); last != last_tau_.end() && !assert_fresh(b.tau, last->second)) {
      ctx_.audit("engine: stale bundle for " + m.topic.str());
      return;
    }
    last_tau_[m.topic] = b.tau;
    bundles_[m.topic] = b;
    for (const auto& mu : b.D) {
      if (!manifest_certified(mu, anchors, *ctx_.registry, *ctx_.crl)) {
        rerequest(m.topic, mu);
        continue;
      }
      if (store_.count(mu.theta.h)) {
        deliver(mu.theta.h);
        continue;
      }
      if (in_flight_.count(mu.theta.h)) continue;
      fetch(m.topic, b, mu);
    }
  }

  void fetch(const Topic& topic, const Bundle& credential, const UpdateManifest& mu) {
    FetchRequest req;
    req.request_id = next_request_++;
    req.l = mu.l;
    req.credential = credential;
    req.requester = key_.id;
    req.whole = true;
    req.request_sig = sign(fetch_digest(req), key_, ctx_.registry->provider());
    std::string repo = "ir/" + mu.l.repo;
    if (!ctx_.has_route(id_, repo)) return;
    in_flight_.insert(mu.theta.h);
    fetches_[req.request_id] = std::make_pair(topic, mu);
    send(repo, std::move(req));
  }

  void rerequest(const Topic& topic, const UpdateManifest& mu) {
    int& n = rerequests_[topic];
    if (n >= ctx_.timers.engine_rerequest_budget) {
      ctx_.audit("engine: giving up on manifests for " + topic.str());
      return;
    }
    ++n;
    send("sud", ManifestReRequest{topic, mu.theta.s, mu.tau.v});
  }

  void on(const Envelope&, const FetchWhole& m) {
    auto it = fetches_.find(m.request_id);
    if (it == fetches_.end()) return;
    auto [topic, mu] = it->second;
    fetches_.erase(it);
    in_flight_.erase(mu.theta.h);
    if (!assert_integrity(mu, *m.image.blob, mu.theta.e, mu.theta.s)) {
      ctx_.audit("engine: integrity failure for " + mu.l.uri());
      rerequest(topic, mu);
      return;
    }
    store_[mu.theta.h] = CachedImage{mu, m.image, 0};
    deliver(mu.theta.h);
  }

  void on(const Envelope&, const FetchError& m) {
    auto it = fetches_.find(m.request_id);
    if (it == fetches_.end()) return;
    auto [topic, mu] = it->second;
    fetches_.erase(it);
    in_flight_.erase(mu.theta.h);
    ctx_.audit("engine: fetch failed for " + mu.l.uri() + ": " + m.reason);
    rerequest(topic, mu);
  }

  /// Sends a stored image to every waiting puller and every subscriber of a topic whose current
  /// bundle lists it.
  void deliver(const Digest& h) {
    const CachedImage& entry = store_.at(h);
    if (auto w = waiting_pulls_.find(h); w != waiting_pulls_.end()) {
      for (const auto& st : w->second) {
        if (station_ok(st)) send(st, PullResponse{entry.mu, entry.image});
      }
      waiting_pulls_.erase(w);
    }
    for (const auto& [topic, bundle] : bundles_) {
      bool listed = std::any_of(bundle.D.begin(), bundle.D.end(),
                                [&](const UpdateManifest& mu) { return mu.theta.h == h; });
      if (!listed) continue;
      for (const auto& st : subscribers_[topic]) {
        if (!station_ok(st) || !pushed_.insert(std::make_pair(st, h)).second) continue;
        send(st, EnginePush{topic, entry.mu, entry.image});
      }
    }
  }

  KeyPair key_;
  std::map<std::string, SignerId> known_stations_;
  std::map<Topic, std::set<std::string>> subscribers_;
  std::set<Topic> sud_topics_;
  std::map<Topic, TimestampRecord> last_tau_;
  std::map<Topic, Bundle> bundles_;
  std::map<Topic, int> rerequests_;
  std::map<Digest, CachedImage> store_;
  std::set<Digest> in_flight_;
  std::map<uint64_t, std::pair<Topic, UpdateManifest>> fetches_;
  std::map<Digest, std::set<std::string>> waiting_pulls_;
  std::set<std::pair<std::string, Digest>> pushed_;
  uint64_t next_request_ = 1;
};

/// An update station: authenticates vehicles, serves cached images and fetches the rest from the
/// engine (Miss) or subscribes first (Unknown).
template <class Policy = LruPolicy>
class BasicStationActor final : public Actor {
 public:
  BasicStationActor(Context& ctx, std::string id, KeyPair key, uint64_t capacity)
      : Actor(ctx, std::move(id)), key_(std::move(key)), cache_(capacity) {}

  const SignerId& signer() const { return key_.id; }
  StationCache<Policy>& cache() { return cache_; }
  const std::set<Topic>& topics() const { return topics_; }

  void subscribe(const Topic& t) { send("engine", StationSubscribe{t}); }

  /// Vehicle actor id to VIN, so a session can be tied to the vehicle's registered key.
  void add_vehicle(const std::string& actor, std::string vin) { vehicles_[actor] = std::move(vin); }

  std::string cache_table() const {
    std::ostringstream os;
    for (const auto& [s, v, size] : cache_.table()) os << s << " " << v << " " << size << "\n";
    return os.str();
  }

  void receive(const Envelope& env) override {
    std::visit([&](const auto& m) { on(env, m); }, env.payload);
  }

 private:
  struct Session {
    std::string vin;
    SignerId vehicle;
  };

  struct Waiter {
    std::string vehicle;
    ImageRequest request;
    CacheOutcome outcome;
  };

  template <class T>
  void on(const Envelope&, const T&) {}

  void on(const Envelope& env, const EnginePush& m) {
    if (env.src != "engine") return;
    if (!manifest_certified(m.mu, ctx_.anchors, *ctx_.registry, *ctx_.crl) || m.image.blob->digest() != m.mu.theta.h) {
      return;
    }
    topics_.insert(m.topic);
    cache_.insert(m.mu, m.image);
    serve_waiting(m.mu, m.image);
  }

  void on(const Envelope& env, const StationSubscribeAck& m) {
    if (env.src != "engine") return;
    topics_.insert(m.topic);
    subscribing_.erase(m.topic);
    auto it = unknown_.find(m.topic);
    if (it == unknown_.end()) return;
    std::vector<UpdateManifest> pulls = std::move(it->second);
    unknown_.erase(it);
    for (const auto& mu : pulls) pull(m.topic, mu);
  }

  void on(const Envelope& env, const PullResponse& m) {
    if (env.src != "engine") return;
    if (!manifest_certified(m.mu, ctx_.anchors, *ctx_.registry, *ctx_.crl) || m.image.blob->digest() != m.mu.theta.h) {
      return;
    }
    pulling_.erase(m.mu.theta.h);
    cache_.insert(m.mu, m.image);  // oversized images pass through uncached
    serve_waiting(m.mu, m.image);
  }

  void on(const Envelope& env, const Hello& m) {
    auto v = vehicles_.find(env.src);
    bool ok = v != vehicles_.end() && v->second == m.vin && m.sig.signer == m.vehicle && !m.sig.endorser &&
              verify(hello_digest(m.vin, m.challenge), m.sig, *ctx_.registry, *ctx_.crl);
    if (!ok) {
      send(env.src, AuthReject{"vehicle authentication failed"});
      return;
    }
    sessions_[env.src] = Session{m.vin, m.vehicle};
    Welcome w{key_.id, m.challenge, sign(welcome_digest(key_.id, m.challenge), key_, ctx_.registry->provider())};
    send(env.src, w);
  }

  void on(const Envelope& env, const Disconnect&) {
    sessions_.erase(env.src);
    ++generation_[env.src];
  }

  void on(const Envelope& env, const ImageRequest& m) {
    auto s = sessions_.find(env.src);
    if (s == sessions_.end()) {
      send(env.src, ImageUnavailable{m.request_id, "no session"});
      return;
    }
    const auto& anchors = ctx_.anchors;
    Digest md = payload_digest(m.mu);
    bool listed = std::any_of(m.credential.D.begin(), m.credential.D.end(),
                              [&](const UpdateManifest& x) { return payload_digest(x) == md; });
    if (m.min != min_of(s->second.vin) || !listed ||
        !bundle_certified(m.credential, s->second.vehicle, anchors, *ctx_.registry, *ctx_.crl)) {
      send(env.src, ImageUnavailable{m.request_id, "manifest refused"});
      return;
    }
    Topic topic{m.min, m.mu.theta.s};
    if (const CachedImage* hit = cache_.lookup(m.mu.theta.s, m.mu.tau.v, m.mu.theta.h)) {
      record(s->second.vin, m.mu, CacheOutcome::Hit);
      stream(env.src, m, hit->image);
      return;
    }
    CacheOutcome outcome = topics_.count(topic) ? CacheOutcome::Miss : CacheOutcome::Unknown;
    record(s->second.vin, m.mu, outcome);
    waiting_[m.mu.theta.h].push_back(Waiter{env.src, m, outcome});
    if (outcome == CacheOutcome::Miss) {
      pull(topic, m.mu);
    } else {
      unknown_[topic].push_back(m.mu);
      // resubscribe if an earlier attempt went unanswered for a stall period
      auto sent = subscribing_.find(topic);
      if (sent == subscribing_.end() || ctx_.now() - sent->second >= ctx_.timers.download_stall) {
        subscribing_[topic] = ctx_.now();
        subscribe(topic);
      }
    }
  }

  void pull(const Topic& topic, const UpdateManifest& mu) {
    auto it = pulling_.find(mu.theta.h);
    if (it != pulling_.end() && ctx_.now() - it->second < ctx_.timers.download_stall) return;
    pulling_[mu.theta.h] = ctx_.now();
    send("engine", StationPull{topic, mu.theta.s, mu.tau.v, mu.theta.h});
  }

  void serve_waiting(const UpdateManifest& mu, const UpdateImage& image) {
    auto it = waiting_.find(mu.theta.h);
    if (it == waiting_.end()) return;
    std::vector<Waiter> ws = std::move(it->second);
    waiting_.erase(it);
    for (const auto& w : ws) {
      if (sessions_.count(w.vehicle)) stream(w.vehicle, w.request, image);
    }
  }

  void stream(const std::string& vehicle, const ImageRequest& req, const UpdateImage& image) {
    uint64_t total = bucket_count(image.blob->size(), ctx_.timers.bucket_size);
    auto key = std::make_pair(vehicle, req.mu.theta.h);
    uint64_t gen = ++streams_[key];
    next_bucket(vehicle, req, image, req.from_index, total, gen, generation_[vehicle]);
  }

  void next_bucket(const std::string& vehicle, const ImageRequest& req, const UpdateImage& image, uint64_t index,
                   uint64_t total, uint64_t gen, uint64_t session_gen) {
    if (index >= total || !sessions_.count(vehicle)) return;
    if (streams_[std::make_pair(vehicle, req.mu.theta.h)] != gen || generation_[vehicle] != session_gen) return;
    ImageBucket b{req.request_id, req.mu.theta.s, req.mu.tau.v, image.bucket(index, ctx_.timers.bucket_size), total};
    send(vehicle, std::move(b), [this, vehicle, req, image, index, total, gen, session_gen] {
      next_bucket(vehicle, req, image, index + 1, total, gen, session_gen);
    });
  }

  void record(const std::string& vin, const UpdateManifest& mu, CacheOutcome outcome) {
    ctx_.log.cache_events.push_back(CacheEvent{ctx_.now(), id_, vin, mu.theta.s, mu.tau.v, outcome});
  }

  KeyPair key_;
  StationCache<Policy> cache_;
  std::set<Topic> topics_;
  std::map<std::string, std::string> vehicles_;
  std::map<std::string, Session> sessions_;
  std::map<Digest, std::vector<Waiter>> waiting_;
  std::map<Topic, std::vector<UpdateManifest>> unknown_;
  std::map<Digest, double> pulling_;
  std::map<Topic, double> subscribing_;
  std::map<std::pair<std::string, Digest>, uint64_t> streams_;
  std::map<std::string, uint64_t> generation_;
};

using StationActor = BasicStationActor<LruPolicy>;

}  // namespace scalota
