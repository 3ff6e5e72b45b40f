#pragma once

#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scalota/director.hpp"
#include "scalota/messages.hpp"

namespace scalota {

struct InstalledSoftware {
  UpdateManifest mu;
  Digest image_digest;
};

/// A secondary ECU and its flash daemon.
class SecondaryActor final : public Actor {
 public:
  SecondaryActor(Context& ctx, std::string id, std::string vin, EcuId ecu, KeyPair key, TrustMode mode,
                 std::string primary_actor, SignerId primary_signer)
      : Actor(ctx, std::move(id)), vin_(std::move(vin)), ecu_(std::move(ecu)), key_(std::move(key)), mode_(mode),
        primary_actor_(std::move(primary_actor)), primary_signer_(std::move(primary_signer)) {}

  const EcuId& ecu() const { return ecu_; }
  const SignerId& signer() const { return key_.id; }
  bool alert_flag() const { return alert_; }
  const std::map<SoftwareId, InstalledSoftware>& installed() const { return installed_; }

  void provision(const UpdateManifest& mu) { installed_[mu.theta.s] = InstalledSoftware{mu, mu.theta.h}; }

  std::vector<StatusEntry> report() const {
    std::vector<StatusEntry> out;
    for (const auto& [s, inst] : installed_) {
      StatusEntry e{ecu_, s, inst.mu.tau, std::nullopt};
      if (mode_ == TrustMode::Untrusted) e.sig = sign(payload_digest(e), key_, ctx_.registry->provider());
      out.push_back(std::move(e));
    }
    return out;
  }

  void receive(const Envelope& env) override {
    if (env.src != primary_actor_) return;
    if (const auto* m = std::get_if<ReportRequest>(&env.payload)) on_report_request(*m);
    if (const auto* m = std::get_if<RelayReply>(&env.payload)) on_relay(*m);
    if (const auto* m = std::get_if<Install>(&env.payload)) on_install(*m);
  }

 private:
  void raise(const std::string& reason) {
    if (!alert_) ctx_.alert(id_, vin_, reason);
    alert_ = true;
  }

  void on_report_request(const ReportRequest& m) {
    send(primary_actor_, SecondaryReport{m.round, ecu_, report()});
    if (mode_ == TrustMode::Untrusted && status_timer_ == 0) {
      double deadline = ctx_.timers.status_deadline_floor * 1.5;
      status_timer_ = ctx_.sim.schedule_in(deadline, [this] {
        status_timer_ = 0;
        raise("no valid status reply relayed");
      });
    }
  }

  void on_relay(const RelayReply& m) {
    if (mode_ != TrustMode::Untrusted) return;
    const StatusReport& g = m.gamma;
    const auto& anchors = ctx_.anchors;
    if (!assert_auth(g.sigma, {anchors.timestamp}, payload_digest(g), *ctx_.registry, *ctx_.crl)) return;
    if (!assert_status_fresh_at_primary(g.tau, last_reply_) || seen_.count(g.nonce) || !g.bundles) return;
    last_reply_ = g.tau;
    seen_.insert(g.nonce);
    if (status_timer_) ctx_.sim.cancel(status_timer_);
    status_timer_ = 0;
    for (const auto& b : *g.bundles) {
      if (!bundle_certified(b, primary_signer_, anchors, *ctx_.registry, *ctx_.crl) ||
          !bundle_endorses_ecu(b, key_.id, anchors, *ctx_.registry, *ctx_.crl)) {
        continue;
      }
      if (needed(b).empty()) continue;
      expected_[payload_digest(b)] = b;
    }
    arm_image_timer();
  }

  /// Members of `b` destined to this ECU that are newer than what is installed.
  std::vector<const UpdateManifest*> needed(const Bundle& b) const {
    std::vector<const UpdateManifest*> out;
    for (const auto& mu : b.D) {
      if (mu.theta.e != ecu_) continue;
      auto it = installed_.find(mu.theta.s);
      if (it == installed_.end() || it->second.mu.tau.v < mu.tau.v) out.push_back(&mu);
    }
    return out;
  }

  void arm_image_timer() {
    bool outstanding = std::any_of(expected_.begin(), expected_.end(),
                                   [&](const auto& kv) { return !needed(kv.second).empty(); });
    if (!outstanding) {
      if (image_timer_) ctx_.sim.cancel(image_timer_);
      image_timer_ = 0;
      return;
    }
    if (image_timer_) return;
    image_timer_ = ctx_.sim.schedule_in(ctx_.timers.image_deadline + ctx_.timers.install_deadline, [this] {
      image_timer_ = 0;
      bool outstanding = std::any_of(expected_.begin(), expected_.end(),
                                     [&](const auto& kv) { return !needed(kv.second).empty(); });
      if (outstanding) raise("update images not delivered in time");
    });
  }

  std::string check(const Install& m, std::vector<const InstallItem*>& fresh,
                    std::vector<SoftwareId>& present) const {
    const auto& anchors = ctx_.anchors;
    const auto& reg = *ctx_.registry;
    const auto& crl = *ctx_.crl;
    if (m.primary_sig.signer != primary_signer_ || m.primary_sig.endorser ||
        !verify(install_digest(m), m.primary_sig, reg, crl)) {
      return "primary signature";
    }
    std::set<SoftwareId> batch;
    for (const auto& it : m.items) {
      const UpdateManifest& mu = it.mu;
      if (mu.theta.e != ecu_) return "manifest targets another ECU";
      if (!assert_integrity(mu, *it.image.blob, ecu_, mu.theta.s)) return "image digest";
      if (!batch.insert(mu.theta.s).second) return "duplicate software in batch";
      auto inst = installed_.find(mu.theta.s);
      if (inst != installed_.end()) {
        if (inst->second.mu.tau == mu.tau && inst->second.mu.theta.h == mu.theta.h) {
          present.push_back(mu.theta.s);
          continue;
        }
        if (inst->second.mu.tau.v > mu.tau.v) {
          present.push_back(mu.theta.s);  // already superseded by a newer install
          continue;
        }
        if (!assert_fresh(mu.tau, inst->second.mu.tau)) return "not newer than installed";
      }
      fresh.push_back(&it);
    }
    if (mode_ == TrustMode::Trusted) return "";

    // full verification of everything the primary relayed
    Digest bd = payload_digest(m.bundle);
    if (!expected_.count(bd)) return "bundle not announced by a verified status reply";
    if (!bundle_certified(m.bundle, primary_signer_, anchors, reg, crl) ||
        !bundle_endorses_ecu(m.bundle, key_.id, anchors, reg, crl)) {
      return "bundle signatures";
    }
    for (const auto& it : m.items) {
      Digest md = payload_digest(it.mu);
      bool listed = std::any_of(m.bundle.D.begin(), m.bundle.D.end(),
                                [&](const UpdateManifest& x) { return payload_digest(x) == md; });
      if (!listed) return "manifest not in bundle";
      if (!manifest_certified(it.mu, anchors, reg, crl)) return "manifest signatures";
    }
    for (const auto* mu : needed(m.bundle)) {
      if (!batch.count(mu->theta.s)) return "incomplete bundle";
    }
    for (const auto* it : fresh) {
      for (const auto& d : it->mu.theta.d) {
        if (installed_.count(d) || batch.count(d)) continue;
        // dependencies hosted on other ECUs are theirs to check
        bool local = std::any_of(m.bundle.D.begin(), m.bundle.D.end(),
                                 [&](const UpdateManifest& x) { return x.theta.s == d && x.theta.e == ecu_; });
        if (local) return "missing local dependency " + d.value;
      }
    }
    return "";
  }

  void on_install(const Install& m) {
    std::vector<const InstallItem*> fresh;
    std::vector<SoftwareId> present;
    std::string why = check(m, fresh, present);
    InstallAck ack{m.install_id, ecu_, why.empty(), why};
    if (why.empty()) {
      std::vector<SoftwareId> batch;
      for (const auto* it : fresh) batch.push_back(it->mu.theta.s);
      for (const auto* it : fresh) {
        InstallRecord rec;
        rec.time = ctx_.now();
        rec.vin = vin_;
        rec.ecu = ecu_;
        rec.mu = it->mu;
        rec.bundle = m.bundle;
        rec.blob = it->image.blob;
        if (auto prev = installed_.find(it->mu.theta.s); prev != installed_.end()) {
          rec.previous = prev->second.mu.tau;
          rec.had_previous = true;
        }
        rec.batch = batch;
        rec.already_present = present;
        ctx_.log.installs.push_back(std::move(rec));
        installed_[it->mu.theta.s] = InstalledSoftware{it->mu, it->image.blob->digest()};
      }
      arm_image_timer();
    } else {
      ctx_.audit(id_ + " refused install: " + why);
    }
    ctx_.sim.schedule_in(ctx_.timers.install_latency, [this, ack] { send(primary_actor_, ack); });
  }

  std::string vin_;
  EcuId ecu_;
  KeyPair key_;
  TrustMode mode_;
  std::string primary_actor_;
  SignerId primary_signer_;
  std::map<SoftwareId, InstalledSoftware> installed_;
  bool alert_ = false;
  TimestampRecord last_reply_{0, 0};
  std::set<Nonce> seen_;
  std::map<Digest, Bundle> expected_;
  simnet::TimerId status_timer_ = 0;
  simnet::TimerId image_timer_ = 0;
};

/// Scenario-driven behaviour of a vehicle: when it reports, which station it visits, and how it
/// splits downloads between the station and the cellular path.
struct VehiclePlan {
  std::vector<double> ignitions;
  std::optional<std::string> station;
  double station_delay = 0;
  double station_share = 1.0;
  bool cellular_fallback = true;
};

/// The primary ECU: status cycle, download manager and install coordinator.
class PrimaryActor final : public Actor {
 public:
  PrimaryActor(Context& ctx, std::string id, std::string vin, KeyPair key, TrustMode mode, uint64_t seed)
      : Actor(ctx, std::move(id)), vin_(std::move(vin)), key_(std::move(key)), mode_(mode), rng_(seed) {}

  const std::string& vin() const { return vin_; }
  const SignerId& signer() const { return key_.id; }
  bool alert_flag() const { return alert_; }
  const VehiclePlan& plan() const { return plan_; }

  void add_secondary(const EcuId& ecu, std::string actor, std::vector<StatusEntry> initial) {
    secondaries_[ecu] = std::move(actor);
    reports_[ecu] = std::move(initial);
  }

  void set_plan(VehiclePlan plan) {
    plan_ = std::move(plan);
    for (double t : plan_.ignitions) ignite_at(t);
  }

  void ignite_at(double t) {
    ctx_.sim.schedule_at(t, [this] { ignite(); });
  }

  void ignite() {
    ++round_;
    awaiting_.clear();
    for (const auto& [ecu, actor] : secondaries_) {
      awaiting_.insert(ecu);
      send(actor, ReportRequest{round_});
    }
    ignition_at_ = ctx_.now();
    uint64_t round = round_;
    // proceed with the last known entries of any secondary that stays silent
    ctx_.sim.schedule_in(ctx_.timers.status_deadline_floor / 10, [this, round] {
      if (round == round_ && !awaiting_.empty()) {
        awaiting_.clear();
        begin_status();
      }
    });
    if (awaiting_.empty()) begin_status();
  }

  void receive(const Envelope& env) override {
    std::visit([&](const auto& m) { on(env, m); }, env.payload);
  }

  std::string state_dump() const {
    std::ostringstream os;
    os << vin_ << " alert=" << alert_ << "\n";
    for (const auto& [ecu, entries] : reports_) {
      for (const auto& e : entries) os << "  " << ecu.value << " " << e.s.value << " v" << e.tau.v << " t" << e.tau.t << "\n";
    }
    return os.str();
  }

 private:
  enum class Route : uint8_t { Station, Cellular };

  struct Item {
    UpdateManifest mu;
    Bundle credential;
    Route route = Route::Cellular;
    BucketProgress progress;
    uint64_t request_id = 0;
    int attempts = 0;
    bool done = false;
    bool abandoned = false;
    UpdateImage image;
    simnet::TimerId stall = 0;
  };

  struct PendingBundle {
    Bundle bundle;
    std::map<EcuId, int> state;  // 0 waiting, 1 sent, 2 installed, 3 refused
    std::map<EcuId, uint64_t> install_ids;
    std::map<EcuId, int> sends;
  };

  template <class T>
  void on(const Envelope&, const T&) {}

  void raise(const std::string& reason) {
    if (!alert_) ctx_.alert(id_, vin_, reason);
    alert_ = true;
  }

  // ---- status cycle ----------------------------------------------------------------------------

  void on(const Envelope& env, const SecondaryReport& m) {
    auto it = secondaries_.find(m.ecu);
    if (it == secondaries_.end() || it->second != env.src) return;
    reports_[m.ecu] = m.entries;
    if (m.round != round_ || !awaiting_.count(m.ecu)) return;
    awaiting_.erase(m.ecu);
    if (awaiting_.empty()) begin_status();
  }

  std::vector<StatusEntry> current_report() const {
    std::vector<StatusEntry> out;
    for (const auto& [ecu, entries] : reports_) out.insert(out.end(), entries.begin(), entries.end());
    return out;
  }

  void begin_status() {
    outstanding_ = current_report();
    outstanding_digest_ = report_digest(outstanding_);
    status_attempts_ = 0;
    if (status_deadline_) ctx_.sim.cancel(status_deadline_);
    double rtt = 2 * cellular_latency();
    double deadline = std::max(ctx_.timers.status_deadline_floor, 2 * (rtt + ctx_.timers.sud_service_time));
    status_deadline_ = ctx_.sim.schedule_in(deadline, [this] {
      status_deadline_ = 0;
      waiting_reply_ = false;
      if (status_retry_) ctx_.sim.cancel(status_retry_);
      status_retry_ = 0;
      raise("no valid status reply");
    });
    waiting_reply_ = true;
    send_status(false);
  }

  double cellular_latency() const {
    auto it = ctx_.routes.find({id_, "sud"});
    return it == ctx_.routes.end() ? 0 : ctx_.net.profile(it->second).latency_ms;
  }

  void send_status(bool force_full) {
    StatusReport g;
    bool digest_ok = !force_full && acked_digest_ && *acked_digest_ == outstanding_digest_;
    if (digest_ok) {
      g.R = outstanding_digest_;
    } else {
      g.R = outstanding_;
    }
    g.tau = TimestampRecord{clock_.next(ctx_.now()), status_version_};
    for (auto& b : g.nonce) b = static_cast<uint8_t>(rng_());
    g.sigma.push_back(sign(payload_digest(g), key_, ctx_.registry->provider()));
    send("sud", Status{vin_, g});
    ++status_attempts_;
    if (status_retry_) ctx_.sim.cancel(status_retry_);
    status_retry_ = ctx_.sim.schedule_in(ctx_.timers.status_retry_interval, [this] {
      status_retry_ = 0;
      if (waiting_reply_ && status_attempts_ <= ctx_.timers.status_retry_budget) send_status(false);
    });
  }

  void on(const Envelope& env, const FullReportRequired& m) {
    if (env.src != "sud" || !waiting_reply_ || m.vin != vin_ || m.digest != outstanding_digest_) return;
    acked_digest_.reset();
    send_status(true);
  }

  void on(const Envelope& env, const StatusReply& m) {
    if (env.src != "sud" || m.vin != vin_) return;
    const StatusReport& g = m.gamma;
    const auto& anchors = ctx_.anchors;
    if (!waiting_reply_) return;
    if (!assert_auth(g.sigma, {anchors.timestamp}, payload_digest(g), *ctx_.registry, *ctx_.crl)) return;
    if (!assert_status_fresh_at_primary(g.tau, last_reply_) || seen_.count(g.nonce)) return;
    const Digest* echo = std::get_if<Digest>(&g.R);
    if (echo == nullptr || *echo != outstanding_digest_ || !g.bundles) return;

    last_reply_ = g.tau;
    seen_.insert(g.nonce);
    status_version_ = g.tau.v;
    acked_digest_ = outstanding_digest_;
    waiting_reply_ = false;
    if (status_deadline_) ctx_.sim.cancel(status_deadline_);
    if (status_retry_) ctx_.sim.cancel(status_retry_);
    status_deadline_ = status_retry_ = 0;

    if (mode_ == TrustMode::Untrusted) {
      for (const auto& [ecu, actor] : secondaries_) send(actor, RelayReply{g});
    }

    std::size_t added = 0;
    for (const auto& b : *g.bundles) {
      if (!bundle_certified(b, key_.id, anchors, *ctx_.registry, *ctx_.crl)) {
        // a correctly timestamped reply carrying a bad bundle means a director key is in the wrong hands
        raise("uncertified bundle in signed status reply");
        continue;
      }
      added += accept_bundle(b);
    }
    bool revived = revive();
    if (added > 0) {
      VehicleTiming& timing = ctx_.log.timings[vin_];
      timing = VehicleTiming{ignition_at_, ctx_.now(), -1, -1, items_.size()};
    }
    if (added > 0 || revived) plan_downloads();
  }

  bool installed_at_least(const UpdateManifest& mu) const {
    auto r = reports_.find(mu.theta.e);
    if (r == reports_.end()) return false;
    return std::any_of(r->second.begin(), r->second.end(),
                       [&](const StatusEntry& e) { return e.s == mu.theta.s && e.tau.v >= mu.tau.v; });
  }

  std::size_t accept_bundle(const Bundle& b) {
    Digest bd = payload_digest(b);
    bool any_needed = false;
    for (const auto& mu : b.D) {
      if (installed_at_least(mu) || !secondaries_.count(mu.theta.e)) continue;
      any_needed = true;
    }
    if (!any_needed) return 0;
    if (std::any_of(bundles_.begin(), bundles_.end(), [&](const auto& p) { return payload_digest(p.bundle) == bd; })) {
      return 0;
    }
    PendingBundle pb{b, {}, {}, {}};
    std::size_t added = 0;
    for (const auto& mu : b.D) {
      if (installed_at_least(mu) || !secondaries_.count(mu.theta.e)) continue;
      pb.state[mu.theta.e] = 0;
      auto key = item_key(mu);
      if (!items_.count(key)) {
        Item it;
        it.mu = mu;
        it.credential = b;
        items_.emplace(key, std::move(it));
        ++added;
      }
    }
    bundles_.push_back(std::move(pb));
    if (image_deadline_ == 0) {
      image_deadline_ = ctx_.sim.schedule_in(ctx_.timers.image_deadline, [this] {
        image_deadline_ = 0;
        if (!all_installed()) raise("updates not installed by deadline");
      });
    }
    return added == 0 ? 1 : added;
  }

  /// Gives abandoned downloads a fresh budget after a new valid status round.
  bool revive() {
    bool any = false;
    for (auto& [key, it] : items_) {
      if (!it.abandoned) continue;
      it.abandoned = false;
      it.attempts = 0;
      it.request_id = 0;
      it.progress = BucketProgress{};
      any = true;
    }
    return any;
  }

  static std::string item_key(const UpdateManifest& mu) {
    return mu.theta.s.value + "@" + std::to_string(mu.tau.v) + "#" + mu.theta.h.hex();
  }

  // ---- downloads -------------------------------------------------------------------------------

  void plan_downloads() {
    std::vector<Item*> fresh;
    for (auto& [key, it] : items_) {
      if (!it.done && !it.abandoned && it.request_id == 0) fresh.push_back(&it);
    }
    std::size_t to_station = plan_.station ? static_cast<std::size_t>(plan_.station_share * fresh.size() + 0.5) : 0;
    bool station_used = false;
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      Item& it = *fresh[i];
      it.route = i < to_station ? Route::Station : Route::Cellular;
      if (it.route == Route::Station) {
        station_used = true;
      } else {
        request(it);
      }
    }
    if (!station_used) return;
    if (session_ == Session::Ready) {
      for (Item* it : fresh) {
        if (it->route == Route::Station) request(*it);
      }
    } else if (session_ == Session::None) {
      session_ = Session::Pending;
      ctx_.sim.schedule_in(plan_.station_delay, [this] { connect(); });
    } else if (session_ == Session::Failed) {
      for (Item* it : fresh) {
        if (it->route == Route::Station) to_cellular(*it);
      }
    }
    if (plan_.cellular_fallback && fallback_ == 0) {
      fallback_ = ctx_.sim.schedule_in(plan_.station_delay + ctx_.timers.fallback_delay, [this] {
        fallback_ = 0;
        for (auto& [key, it] : items_) {
          if (!it.done && !it.abandoned && it.route == Route::Station) to_cellular(it);
        }
      });
    }
  }

  void connect() {
    if (!plan_.station) return;
    session_ = Session::Connecting;
    for (auto& b : challenge_) b = static_cast<uint8_t>(rng_());
    send(*plan_.station, Hello{vin_, key_.id, challenge_, sign(hello_digest(vin_, challenge_), key_, ctx_.registry->provider())});
    session_timer_ = ctx_.sim.schedule_in(ctx_.timers.download_stall, [this] {
      session_timer_ = 0;
      if (session_ == Session::Connecting) session_failed("station did not answer");
    });
  }

  void session_failed(const std::string& why) {
    ctx_.audit(id_ + " station session failed: " + why);
    session_ = Session::Failed;
    if (session_timer_) ctx_.sim.cancel(session_timer_);
    session_timer_ = 0;
    for (auto& [key, it] : items_) {
      if (!it.done && !it.abandoned && it.route == Route::Station) to_cellular(it);
    }
  }

  void on(const Envelope& env, const Welcome& m) {
    if (!plan_.station || env.src != *plan_.station || session_ != Session::Connecting) return;
    bool ok = m.challenge == challenge_ && m.sig.signer == m.station && !m.sig.endorser &&
              verify(welcome_digest(m.station, challenge_), m.sig, *ctx_.registry, *ctx_.crl);
    if (!ok) {
      session_failed("station authentication");
      return;
    }
    session_ = Session::Ready;
    if (session_timer_) ctx_.sim.cancel(session_timer_);
    session_timer_ = 0;
    for (auto& [key, it] : items_) {
      if (!it.done && !it.abandoned && it.route == Route::Station) request(it);
    }
  }

  void on(const Envelope& env, const AuthReject& m) {
    if (!plan_.station || env.src != *plan_.station || session_ != Session::Connecting) return;
    session_failed(m.reason);
  }

  void to_cellular(Item& it) {
    if (!plan_.cellular_fallback) return;
    if (it.route == Route::Cellular) return;
    it.route = Route::Cellular;
    it.attempts = 0;
    request(it);
  }

  void request(Item& it) {
    it.request_id = next_request_++;
    uint64_t from = it.progress.next_index();
    if (it.route == Route::Station) {
      if (session_ != Session::Ready) return;
      send(*plan_.station, ImageRequest{it.request_id, min_of(vin_), it.credential, it.mu, from});
    } else {
      FetchRequest req;
      req.request_id = it.request_id;
      req.l = it.mu.l;
      req.credential = it.credential;
      req.requester = key_.id;
      req.from_index = from;
      req.request_sig = sign(fetch_digest(req), key_, ctx_.registry->provider());
      send("ir/" + it.mu.l.repo, std::move(req));
    }
    arm_stall(it);
  }

  void arm_stall(Item& it) {
    if (it.stall) ctx_.sim.cancel(it.stall);
    std::string key = item_key(it.mu);
    it.stall = ctx_.sim.schedule_in(ctx_.timers.download_stall, [this, key] {
      auto found = items_.find(key);
      if (found == items_.end()) return;
      Item& it = found->second;
      it.stall = 0;
      if (!it.done && !it.abandoned) retry(it, "stalled");
    });
  }

  void retry(Item& it, const std::string& why) {
    ++it.attempts;
    if (it.attempts > ctx_.timers.download_retry_budget) {
      if (it.route == Route::Station && plan_.cellular_fallback) {
        to_cellular(it);
        return;
      }
      it.abandoned = true;
      if (it.stall) ctx_.sim.cancel(it.stall);
      it.stall = 0;
      ctx_.audit(id_ + " gave up on " + it.mu.theta.s.value + ": " + why);
      return;
    }
    request(it);
  }

  Item* item_for(uint64_t request_id) {
    for (auto& [key, it] : items_) {
      if (it.request_id == request_id && !it.done && !it.abandoned) return &it;
    }
    return nullptr;
  }

  void on(const Envelope& env, const ImageBucket& m) {
    if (!plan_.station || env.src != *plan_.station) return;
    on_bucket(m.request_id, m.bucket, m.total);
  }

  void on(const Envelope& env, const FetchChunk& m) {
    if (env.src.rfind("ir/", 0) != 0) return;
    on_bucket(m.request_id, m.bucket, m.total);
  }

  void on(const Envelope&, const ImageUnavailable& m) {
    if (Item* it = item_for(m.request_id)) {
      if (it->route == Route::Station && plan_.cellular_fallback) {
        to_cellular(*it);
      } else {
        retry(*it, m.reason);
      }
    }
  }

  void on(const Envelope&, const FetchError& m) {
    if (Item* it = item_for(m.request_id)) retry(*it, m.reason);
  }

  void on_bucket(uint64_t request_id, const Bucket& b, uint64_t total) {
    Item* found = item_for(request_id);
    if (found == nullptr) return;
    Item& it = *found;
    if (it.progress.total == 0) it.progress.total = total;
    if (total != it.progress.total || b.index != it.progress.next_index()) return;
    if (b.chunk.blob == nullptr || b.chunk.digest() != b.digest) {
      retry(it, "corrupt bucket");
      return;
    }
    it.progress.received.push_back(b);
    arm_stall(it);
    if (it.progress.received.size() < it.progress.total) return;
    AssemblyResult r = assemble_buckets(it.progress, it.mu);
    if (auto* done = std::get_if<AssemblyComplete>(&r)) {
      if (assert_integrity(it.mu, *done->image.blob, it.mu.theta.e, it.mu.theta.s)) {
        it.done = true;
        it.image = done->image;
        if (it.stall) ctx_.sim.cancel(it.stall);
        it.stall = 0;
        on_image_verified();
        return;
      }
    }
    // full-image check failed: start over from the first bucket
    it.progress = BucketProgress{};
    retry(it, "image digest mismatch");
  }

  void on_image_verified() {
    bool all = std::all_of(items_.begin(), items_.end(), [](const auto& kv) { return kv.second.done; });
    if (all) {
      ctx_.log.timings[vin_].images_done = ctx_.now();
      if (session_ == Session::Ready && plan_.station) {
        send(*plan_.station, Disconnect{});
        session_ = Session::None;
      }
      if (fallback_) ctx_.sim.cancel(fallback_);
      fallback_ = 0;
    }
    push_installs();
  }

  // ---- installs --------------------------------------------------------------------------------

  void push_installs() {
    for (auto& pb : bundles_) {
      for (auto& [ecu, state] : pb.state) {
        if (state != 0) continue;
        Install m;
        bool ready = true;
        for (const auto& mu : pb.bundle.D) {
          if (mu.theta.e != ecu || installed_at_least(mu)) continue;
          auto it = items_.find(item_key(mu));
          if (it == items_.end() || !it->second.done) {
            ready = false;
            break;
          }
          m.items.push_back(InstallItem{mu, it->second.image});
        }
        if (!ready) continue;
        if (m.items.empty()) {
          state = 2;
          continue;
        }
        m.install_id = next_install_++;
        m.bundle = pb.bundle;
        m.primary_sig = sign(install_digest(m), key_, ctx_.registry->provider());
        pb.install_ids[ecu] = m.install_id;
        state = 1;
        send_install(ecu, m);
      }
    }
    check_complete();
  }

  void send_install(const EcuId& ecu, const Install& m) {
    send(secondaries_.at(ecu), m);
    uint64_t id = m.install_id;
    ctx_.sim.schedule_in(ctx_.timers.install_deadline / 3, [this, ecu, m, id] {
      for (auto& pb : bundles_) {
        auto it = pb.install_ids.find(ecu);
        if (it == pb.install_ids.end() || it->second != id || pb.state[ecu] != 1) continue;
        if (++pb.sends[ecu] < 3) send_install(ecu, m);
      }
    });
  }

  void on(const Envelope& env, const InstallAck& m) {
    auto sec = secondaries_.find(m.ecu);
    if (sec == secondaries_.end() || sec->second != env.src) return;
    for (auto& pb : bundles_) {
      auto it = pb.install_ids.find(m.ecu);
      if (it == pb.install_ids.end() || it->second != m.install_id || pb.state[m.ecu] != 1) continue;
      pb.state[m.ecu] = m.ok ? 2 : 3;
      if (m.ok) {
        auto& entries = reports_[m.ecu];
        for (const auto& mu : pb.bundle.D) {
          if (mu.theta.e != m.ecu) continue;
          auto e = std::find_if(entries.begin(), entries.end(), [&](const StatusEntry& x) { return x.s == mu.theta.s; });
          if (e == entries.end()) {
            entries.push_back(StatusEntry{m.ecu, mu.theta.s, mu.tau, std::nullopt});
          } else if (e->tau.v < mu.tau.v) {
            e->tau = mu.tau;
          }
        }
      } else {
        ctx_.audit(id_ + " install refused by " + m.ecu.value + ": " + m.reason);
      }
    }
    push_installs();
  }

  bool all_installed() const {
    return std::all_of(bundles_.begin(), bundles_.end(), [](const PendingBundle& pb) {
      return std::all_of(pb.state.begin(), pb.state.end(), [](const auto& kv) { return kv.second == 2; });
    });
  }

  void check_complete() {
    if (bundles_.empty() || !all_installed()) return;
    ctx_.log.timings[vin_].installed = ctx_.now();
    bundles_.clear();
    for (auto& [k, it] : items_) {
      if (it.stall) ctx_.sim.cancel(it.stall);
    }
    items_.clear();
    if (image_deadline_) ctx_.sim.cancel(image_deadline_);
    image_deadline_ = 0;
  }

  enum class Session : uint8_t { None, Pending, Connecting, Ready, Failed };

  std::string vin_;
  KeyPair key_;
  TrustMode mode_;
  std::mt19937_64 rng_;
  VehiclePlan plan_;
  std::map<EcuId, std::string> secondaries_;
  std::map<EcuId, std::vector<StatusEntry>> reports_;
  std::set<EcuId> awaiting_;
  uint64_t round_ = 0;
  double ignition_at_ = -1;
  bool alert_ = false;

  MonotoneClock clock_;
  uint64_t status_version_ = 1;
  TimestampRecord last_reply_{0, 0};
  std::set<Nonce> seen_;
  std::vector<StatusEntry> outstanding_;
  Digest outstanding_digest_;
  std::optional<Digest> acked_digest_;
  bool waiting_reply_ = false;
  int status_attempts_ = 0;
  simnet::TimerId status_deadline_ = 0;
  simnet::TimerId status_retry_ = 0;

  std::map<std::string, Item> items_;
  std::vector<PendingBundle> bundles_;
  simnet::TimerId image_deadline_ = 0;
  simnet::TimerId fallback_ = 0;
  Session session_ = Session::None;
  simnet::TimerId session_timer_ = 0;
  Nonce challenge_{};
  uint64_t next_request_ = 1;
  uint64_t next_install_ = 1;
};

}  // namespace scalota
