#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "scalota/director.hpp"
#include "scalota/messages.hpp"

namespace scalota {

enum class AttackKind : uint8_t {
  Tamper,
  Spoof,
  Replay,
  Rollback,
  Freeze,
  Drop,
  Delay,
  SlowRetrieval,
  PartialBundle,
  MixBundles,
  CompromiseKey,
};

inline const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::Tamper: return "tamper";
    case AttackKind::Spoof: return "spoof";
    case AttackKind::Replay: return "replay";
    case AttackKind::Rollback: return "rollback";
    case AttackKind::Freeze: return "freeze";
    case AttackKind::Drop: return "drop";
    case AttackKind::Delay: return "delay";
    case AttackKind::SlowRetrieval: return "slow-retrieval";
    case AttackKind::PartialBundle: return "partial-bundle";
    case AttackKind::MixBundles: return "mix-bundles";
    case AttackKind::CompromiseKey: return "compromise-key";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(AttackKind::CompromiseKey); ++i) {
    auto k = static_cast<AttackKind>(i);
    if (s == attack_kind_name(k)) return k;
  }
  throw ConfigurationError("unknown attack kind: " + s);
}

/// Which messages a rule applies to. Empty fields match everything; actor fields match by prefix.
struct AttackMatch {
  std::optional<simnet::LinkClass> link;
  std::set<std::string> kinds;
  std::string src;
  std::string dst;

  bool matches(const Envelope& env, simnet::LinkClass cls) const {
    if (link && *link != cls) return false;
    if (!kinds.empty() && !kinds.count(env.kind)) return false;
    if (!src.empty() && env.src.rfind(src, 0) != 0) return false;
    if (!dst.empty() && env.dst.rfind(dst, 0) != 0) return false;
    return true;
  }
};

struct AttackRule {
  AttackKind kind = AttackKind::Drop;
  AttackMatch match;
  double start = 0;
  double end = simnet::kForever;
  double probability = 1.0;
  double delay_ms = 0;  // Delay and SlowRetrieval
  // CompromiseKey: the actor whose key leaks and its role (station, ir, primary, sud)
  std::string actor;
  std::string role;
  double revoke_at = -1;  // station keys only; negative means never revoked

  bool active(double now) const { return now >= start && now < end; }
};

/// Rejects rule sets the threat model excludes.
inline void validate_rules(const std::vector<AttackRule>& rules) {
  bool sud = false;
  bool ir = false;
  for (const auto& r : rules) {
    if (r.probability < 0 || r.probability > 1) throw ConfigurationError("attack probability outside [0,1]");
    if (r.end < r.start) throw ConfigurationError("attack window ends before it starts");
    if ((r.kind == AttackKind::Delay || r.kind == AttackKind::SlowRetrieval) && r.delay_ms < 0) {
      throw ConfigurationError("negative attack delay");
    }
    if (r.kind != AttackKind::CompromiseKey) continue;
    static const std::set<std::string> kRoles{"station", "ir", "primary", "sud"};
    if (!kRoles.count(r.role)) throw ConfigurationError("cannot compromise role '" + r.role + "'");
    if (r.actor.empty()) throw ConfigurationError("compromise rule names no actor");
    sud = sud || r.role == "sud";
    ir = ir || r.role == "ir";
  }
  if (sud && ir) throw ConfigurationError("the director and an image repository cannot both be compromised");
}

/// Link middleware realizing the attack catalog. It sees every message, keeps its own recording
/// of past traffic for replays, and can sign with keys it has been handed through compromise.
class Adversary {
 public:
  using KeySource = std::function<KeyPair(const std::string& signer)>;

  Adversary(Context& ctx, std::vector<AttackRule> rules, uint64_t seed, KeyPair own_key, KeySource keys)
      : ctx_(ctx), rules_(std::move(rules)), rng_(seed), own_(std::move(own_key)), keys_(std::move(keys)) {
    validate_rules(rules_);
    for (const auto& r : rules_) {
      if (r.kind != AttackKind::CompromiseKey) continue;
      if (r.role == "station" || r.role == "primary") stolen_[r.actor] = keys_(r.actor);
      if (r.role == "station" && r.revoke_at >= 0) {
        SignerId victim{r.actor};
        ctx_.sim.schedule_at(r.revoke_at, [this, victim] {
          *ctx_.crl = revoke(*ctx_.crl, victim);
          ctx_.audit("station key revoked: " + victim.value);
        });
      }
    }
  }

  const std::vector<AttackRule>& rules() const { return rules_; }
  std::size_t actions() const { return actions_; }

  /// Copy of a leaked key. Throws unless a rule compromised it.
  const KeyPair& compromised(const std::string& signer) const {
    auto it = stolen_.find(signer);
    if (it == stolen_.end()) throw std::out_of_range("key not compromised: " + signer);
    return it->second;
  }

  std::vector<Network::Emission> operator()(const Envelope& env) {
    simnet::LinkClass cls = ctx_.net.profile(env.link).cls;
    double now = ctx_.now();
    std::vector<Network::Emission> out;
    bool acted = false;
    for (const auto& rule : rules_) {
      if (!rule.active(now) || !applies(rule, env, cls)) continue;
      if (rule.probability < 1.0 && std::uniform_real_distribution<double>(0, 1)(rng_) >= rule.probability) continue;
      if (apply(rule, env, out)) {
        acted = true;
        ++actions_;
        break;
      }
    }
    if (!acted) out.push_back({env, 0});
    record(env);
    return out;
  }

 private:
  bool applies(const AttackRule& r, const Envelope& env, simnet::LinkClass cls) const {
    if (r.kind != AttackKind::CompromiseKey) return r.match.matches(env, cls);
    if (!r.match.matches(env, cls)) return false;
    if (r.role == "station") return env.src == r.actor && env.kind == "ImageBucket";
    if (r.role == "ir") return env.src.rfind("ir/", 0) == 0 && (env.kind == "FetchChunk" || env.kind == "FetchWhole");
    if (r.role == "primary") return env.src == r.actor && env.kind == "Install";
    if (r.role == "sud") return env.src == "sud" && env.kind == "StatusReply";
    return false;
  }

  static Network::Emission emit(const Envelope& env, Message m, double delay = 0) {
    Envelope e = env;
    e.kind = kind_name(m);
    try {
      e.size = wire_size(m);
    } catch (const EncodingError&) {
      // not a valid encoding; it still occupies the wire at the size of what it replaced
    }
    e.payload = std::move(m);
    return {std::move(e), delay};
  }

  BlobPtr forged_blob(std::size_t size) {
    Bytes b(size);
    for (auto& x : b) x = static_cast<uint8_t>(rng_());
    return make_blob(std::move(b), Provenance::Adversary);
  }

  /// Same length, one byte flipped, marked as adversarial.
  BlobPtr flipped(const ImageSlice& s) {
    ByteView v = s.view();
    Bytes b(v.begin(), v.end());
    if (b.empty()) b.push_back(0);
    b[std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng_)] ^= 0x5a;
    return make_blob(std::move(b), Provenance::Adversary);
  }

  BlobPtr flipped(const BlobPtr& blob) { return flipped(ImageSlice{blob, 0, blob->size()}); }

  static Bucket rebucket(const Bucket& b, BlobPtr blob) {
    Bucket out{b.index, ImageSlice{blob, 0, blob->size()}, {}};
    out.digest = out.chunk.digest();  // recomputed so only the end-to-end check can notice
    return out;
  }

  void corrupt(UpdateManifest& mu) { mu.theta.h.bytes[rng_() % mu.theta.h.bytes.size()] ^= 0x01; }

  /// Replaces each signature with one made by the adversary's own key under the same name.
  void respoof(SignatureSet& sigma, const Digest& d) {
    for (auto& e : sigma) e.signature = ctx_.registry->provider().sign(d.view(), own_.private_key);
    if (sigma.empty()) sigma.push_back(sign(d, own_, ctx_.registry->provider()));
  }

  // ---- per-kind behaviour; each returns false when the message is not a target -----------------

  bool apply(const AttackRule& r, const Envelope& env, std::vector<Network::Emission>& out) {
    const Message& m = env.payload;
    switch (r.kind) {
      case AttackKind::Drop:
        return true;
      case AttackKind::Delay:
        out.push_back({env, r.delay_ms});
        return true;
      case AttackKind::SlowRetrieval: {
        if (!carries_image(m)) return false;
        double d = r.delay_ms > 0 ? r.delay_ms : 2 * ctx_.timers.download_stall;
        out.push_back({env, d});
        return true;
      }
      case AttackKind::Tamper: return tamper(env, out);
      case AttackKind::Spoof: return spoof(env, out);
      case AttackKind::Replay: return replay(env, out);
      case AttackKind::Rollback: return rollback(env, out);
      case AttackKind::Freeze: return freeze(env, out);
      case AttackKind::PartialBundle: return partial(env, out);
      case AttackKind::MixBundles: return mix(env, out);
      case AttackKind::CompromiseKey: return compromise(r, env, out);
    }
    return false;
  }

  bool tamper(const Envelope& env, std::vector<Network::Emission>& out) {
    Message m = env.payload;
    bool done = std::visit(
        [&](auto& x) -> bool {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, ImageBucket> || std::is_same_v<T, FetchChunk>) {
            x.bucket = rebucket(x.bucket, flipped(x.bucket.chunk));
            return true;
          } else if constexpr (std::is_same_v<T, FetchWhole> || std::is_same_v<T, PullResponse> ||
                               std::is_same_v<T, EnginePush> || std::is_same_v<T, StoreImage>) {
            x.image.blob = flipped(x.image.blob);
            return true;
          } else if constexpr (std::is_same_v<T, Install>) {
            if (x.items.empty()) return false;
            x.items.front().image.blob = flipped(x.items.front().image.blob);
            return true;
          } else if constexpr (std::is_same_v<T, StatusReply> || std::is_same_v<T, RelayReply>) {
            if (!x.gamma.bundles || x.gamma.bundles->empty() || x.gamma.bundles->front().D.empty()) {
              x.gamma.tau.t ^= 1;
              return true;
            }
            corrupt(x.gamma.bundles->front().D.front());
            return true;
          } else if constexpr (std::is_same_v<T, Publish>) {
            if (x.bundle.D.empty()) return false;
            corrupt(x.bundle.D.front());
            return true;
          } else if constexpr (std::is_same_v<T, SubmitManifest>) {
            corrupt(x.mu);
            return true;
          } else if constexpr (std::is_same_v<T, Status>) {
            x.gamma.tau.v ^= 1;
            return true;
          } else if constexpr (std::is_same_v<T, Welcome> || std::is_same_v<T, Hello>) {
            x.challenge[0] ^= 1;
            return true;
          } else {
            return false;
          }
        },
        m);
    if (!done) return false;
    out.push_back(emit(env, std::move(m)));
    return true;
  }

  bool spoof(const Envelope& env, std::vector<Network::Emission>& out) {
    Message m = env.payload;
    bool done = std::visit(
        [&](auto& x) -> bool {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, ImageBucket> || std::is_same_v<T, FetchChunk>) {
            x.bucket = rebucket(x.bucket, forged_blob(x.bucket.chunk.length));
            return true;
          } else if constexpr (std::is_same_v<T, FetchWhole> || std::is_same_v<T, PullResponse> ||
                               std::is_same_v<T, EnginePush>) {
            x.image.blob = forged_blob(x.image.blob->size());
            return true;
          } else if constexpr (std::is_same_v<T, StatusReply> || std::is_same_v<T, RelayReply>) {
            if (x.gamma.bundles) {
              for (auto& b : *x.gamma.bundles) {
                for (auto& mu : b.D) {
                  mu.theta.h = forged_blob(16)->digest();
                  respoof(mu.sigma, payload_digest(mu));
                }
                respoof(b.sigma, payload_digest(b));
              }
            }
            respoof(x.gamma.sigma, payload_digest(x.gamma));
            return true;
          } else if constexpr (std::is_same_v<T, Publish>) {
            respoof(x.bundle.sigma, payload_digest(x.bundle));
            return true;
          } else if constexpr (std::is_same_v<T, SubmitManifest> || std::is_same_v<T, StoreImage>) {
            x.mu.theta.h = forged_blob(16)->digest();
            respoof(x.mu.sigma, payload_digest(x.mu));
            return true;
          } else if constexpr (std::is_same_v<T, Install>) {
            for (auto& it : x.items) it.image.blob = forged_blob(it.image.blob->size());
            x.primary_sig.signature = ctx_.registry->provider().sign(install_digest(x).view(), own_.private_key);
            return true;
          } else if constexpr (std::is_same_v<T, Welcome>) {
            x.sig.signature = ctx_.registry->provider().sign(welcome_digest(x.station, x.challenge).view(),
                                                             own_.private_key);
            return true;
          } else if constexpr (std::is_same_v<T, Status>) {
            respoof(x.gamma.sigma, payload_digest(x.gamma));
            return true;
          } else {
            return false;
          }
        },
        m);
    if (!done) return false;
    out.push_back(emit(env, std::move(m)));
    return true;
  }

  static bool recordable(const std::string& kind) {
    static const std::set<std::string> k{"StatusReply", "RelayReply", "Publish", "Install", "SubmitManifest",
                                         "Status", "Welcome", "ImageBucket", "FetchChunk", "StoreImage"};
    return k.count(kind) != 0;
  }

  void record(const Envelope& env) {
    if (!recordable(env.kind)) return;
    auto& q = tap_[{env.dst, env.kind}];
    q.push_back(env.payload);
    if (q.size() > 32) q.pop_front();
    if (env.kind == "StatusReply" && !frozen_.count(env.dst)) last_reply_[env.dst] = env.payload;
  }

  const Message* earlier(const Envelope& env) const {
    auto it = tap_.find({env.dst, env.kind});
    if (it == tap_.end() || it->second.empty()) return nullptr;
    return &it->second.back();
  }

  bool replay(const Envelope& env, std::vector<Network::Emission>& out) {
    const Message* old = earlier(env);
    if (old == nullptr) return false;
    out.push_back(emit(env, *old));
    return true;
  }

  /// Older bundles and manifests recorded on the way to `dst`, oldest first.
  std::vector<Bundle> recorded_bundles(const std::string& dst) const {
    std::vector<Bundle> out;
    for (const auto& [key, q] : tap_) {
      if (key.first != dst) continue;
      for (const auto& m : q) {
        if (const auto* r = std::get_if<StatusReply>(&m); r && r->gamma.bundles) {
          out.insert(out.end(), r->gamma.bundles->begin(), r->gamma.bundles->end());
        }
        if (const auto* r = std::get_if<RelayReply>(&m); r && r->gamma.bundles) {
          out.insert(out.end(), r->gamma.bundles->begin(), r->gamma.bundles->end());
        }
        if (const auto* p = std::get_if<Publish>(&m)) out.push_back(p->bundle);
        if (const auto* i = std::get_if<Install>(&m)) out.push_back(i->bundle);
      }
    }
    return out;
  }

  bool rollback(const Envelope& env, std::vector<Network::Emission>& out) {
    Message m = env.payload;
    auto older = recorded_bundles(env.dst);
    bool done = std::visit(
        [&](auto& x) -> bool {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, StatusReply> || std::is_same_v<T, RelayReply>) {
            if (older.empty() || !x.gamma.bundles) return false;
            x.gamma.bundles = std::vector<Bundle>{older.front()};
            return true;
          } else if constexpr (std::is_same_v<T, Publish>) {
            if (older.empty()) return false;
            x.bundle = older.front();
            return true;
          } else if constexpr (std::is_same_v<T, Install> || std::is_same_v<T, SubmitManifest> ||
                               std::is_same_v<T, StoreImage>) {
            const Message* old = earlier(env);
            if (old == nullptr) return false;
            x = std::get<T>(*old);
            return true;
          } else {
            return false;
          }
        },
        m);
    if (!done) return false;
    out.push_back(emit(env, std::move(m)));
    return true;
  }

  bool freeze(const Envelope& env, std::vector<Network::Emission>& out) {
    if (env.kind != "StatusReply") return false;
    frozen_.insert(env.dst);
    auto it = last_reply_.find(env.dst);
    if (it != last_reply_.end()) out.push_back(emit(env, it->second));
    return true;
  }

  template <class Pick>
  static void drop_some(std::vector<Pick>& v, std::mt19937_64& rng) {
    if (v.empty()) return;
    // a strict subset goes missing; a lone element goes missing entirely
    std::size_t n = v.size() == 1 ? 1 : 1 + rng() % (v.size() - 1);
    for (std::size_t i = 0; i < n; ++i) v.erase(v.begin() + static_cast<std::ptrdiff_t>(rng() % v.size()));
  }

  bool partial(const Envelope& env, std::vector<Network::Emission>& out) {
    Message m = env.payload;
    bool done = std::visit(
        [&](auto& x) -> bool {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, StatusReply> || std::is_same_v<T, RelayReply>) {
            if (!x.gamma.bundles || x.gamma.bundles->empty()) return false;
            auto& bundles = *x.gamma.bundles;
            auto big = std::find_if(bundles.begin(), bundles.end(), [](const Bundle& b) { return b.D.size() > 1; });
            if (big != bundles.end()) {
              drop_some(big->D, rng_);
            } else {
              drop_some(bundles, rng_);
            }
            return true;
          } else if constexpr (std::is_same_v<T, Publish>) {
            if (x.bundle.D.empty()) return false;
            drop_some(x.bundle.D, rng_);
            return true;
          } else if constexpr (std::is_same_v<T, Install>) {
            if (x.items.empty()) return false;
            drop_some(x.items, rng_);
            return true;
          } else if constexpr (std::is_same_v<T, ImageBucket> || std::is_same_v<T, FetchChunk>) {
            // the tail of the stream never arrives
            return x.bucket.index + 1 == x.total && x.total > 0;
          } else {
            return false;
          }
        },
        m);
    if (!done) return false;
    if (env.kind == "ImageBucket" || env.kind == "FetchChunk") return true;  // dropped
    out.push_back(emit(env, std::move(m)));
    return true;
  }

  bool mix(const Envelope& env, std::vector<Network::Emission>& out) {
    Message m = env.payload;
    auto others = recorded_bundles(env.dst);
    bool done = std::visit(
        [&](auto& x) -> bool {
          using T = std::decay_t<decltype(x)>;
          auto swap_into = [&](Bundle& b) -> bool {
            for (const auto& o : others) {
              for (const auto& mu : o.D) {
                for (auto& mine : b.D) {
                  if (mine.theta.s != mu.theta.s && payload_digest(mine) != payload_digest(mu)) {
                    mine = mu;
                    return true;
                  }
                }
              }
            }
            return false;
          };
          if constexpr (std::is_same_v<T, StatusReply> || std::is_same_v<T, RelayReply>) {
            if (!x.gamma.bundles) return false;
            if (x.gamma.bundles->size() > 1) {
              auto& a = (*x.gamma.bundles)[0];
              auto& b = (*x.gamma.bundles)[1];
              if (!a.D.empty() && !b.D.empty()) {
                std::swap(a.D.front(), b.D.front());
                return true;
              }
            }
            for (auto& b : *x.gamma.bundles) {
              if (swap_into(b)) return true;
            }
            return false;
          } else if constexpr (std::is_same_v<T, Publish>) {
            return swap_into(x.bundle);
          } else if constexpr (std::is_same_v<T, Install>) {
            return swap_into(x.bundle);
          } else {
            return false;
          }
        },
        m);
    if (!done) return false;
    out.push_back(emit(env, std::move(m)));
    return true;
  }

  bool compromise(const AttackRule& r, const Envelope& env, std::vector<Network::Emission>& out) {
    Message m = env.payload;
    if (r.role == "station" || r.role == "ir") {
      if (auto* b = std::get_if<ImageBucket>(&m)) b->bucket = rebucket(b->bucket, forged_blob(b->bucket.chunk.length));
      if (auto* c = std::get_if<FetchChunk>(&m)) c->bucket = rebucket(c->bucket, forged_blob(c->bucket.chunk.length));
      if (auto* w = std::get_if<FetchWhole>(&m)) w->image.blob = forged_blob(w->image.blob->size());
    } else if (r.role == "primary") {
      auto& inst = std::get<Install>(m);
      const KeyPair& key = stolen_.at(r.actor);
      for (auto& it : inst.items) {
        it.image.blob = forged_blob(it.image.blob->size());
        it.mu.theta.h = it.image.blob->digest();  // matches the forged image but loses the producer signature
      }
      inst.primary_sig = sign(install_digest(inst), key, ctx_.registry->provider());
    } else if (r.role == "sud") {
      auto& reply = std::get<StatusReply>(m);
      if (!reply.gamma.bundles) return false;
      SignerId ts = ctx_.anchors.timestamp;
      SignerId snap = ctx_.anchors.snapshot;
      for (auto& b : *reply.gamma.bundles) {
        for (auto& mu : b.D) {
          mu.theta.h = forged_blob(16)->digest();
          mu.l.path += ".evil";
        }
        for (auto& e : b.sigma) {
          if (e.signer == snap && !e.endorser) e = sign(payload_digest(b), keys_(snap.value), ctx_.registry->provider());
        }
      }
      reply.gamma.sigma = {sign(payload_digest(reply.gamma), keys_(ts.value), ctx_.registry->provider())};
    }
    out.push_back(emit(env, std::move(m)));
    return true;
  }

  Context& ctx_;
  std::vector<AttackRule> rules_;
  std::mt19937_64 rng_;
  KeyPair own_;
  KeySource keys_;
  std::map<std::string, KeyPair> stolen_;
  std::map<std::pair<std::string, std::string>, std::deque<Message>> tap_;
  std::map<std::string, Message> last_reply_;
  std::set<std::string> frozen_;
  std::size_t actions_ = 0;
};

}  // namespace scalota
