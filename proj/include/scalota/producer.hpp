#pragma once

#include <map>
#include <mutex>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "scalota/messages.hpp"

namespace scalota {

/// Deterministic pseudo-random image content. Large images are shared process-wide so that
/// repeated scenario runs do not regenerate or rehash them.
inline BlobPtr synthetic_image(const std::string& name, uint64_t seed, std::size_t size) {
  static std::mutex lock;
  static std::map<std::tuple<std::string, uint64_t, std::size_t>, BlobPtr> cache;
  auto key = std::make_tuple(name, seed, size);
  {
    std::lock_guard<std::mutex> g(lock);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(std::hash<std::string>{}(name))};
  std::mt19937_64 rng(seq);
  Bytes bytes(size);
  std::size_t i = 0;
  for (; i + 8 <= size; i += 8) {
    uint64_t x = rng();
    std::memcpy(bytes.data() + i, &x, 8);
  }
  for (; i < size; ++i) bytes[i] = static_cast<uint8_t>(rng());
  BlobPtr blob = make_blob(std::move(bytes), Provenance::Producer);
  blob->digest();
  std::lock_guard<std::mutex> g(lock);
  return cache.emplace(key, blob).first->second;
}

struct Release {
  double at = 0;
  SoftwareId s;
  EcuId e;
  std::vector<SoftwareId> deps;
  uint64_t v = 2;
  std::size_t size = 1 << 20;
};

/// Software supplier: uploads image and manifest to its repository, then submits the manifest
/// to the director and waits for a verdict, resubmitting on silence or rejection.
class ProducerActor final : public Actor {
 public:
  ProducerActor(Context& ctx, std::string id, KeyPair key, std::string repo, uint64_t seed)
      : Actor(ctx, std::move(id)), key_(std::move(key)), repo_(std::move(repo)), seed_(seed) {}

  const SignerId& signer() const { return key_.id; }

  /// Builds the producer-signed manifest for a release without sending anything.
  std::pair<UpdateImage, UpdateManifest> prepare(const Release& r, uint64_t t) const {
    BlobPtr blob = synthetic_image(r.s.value + "@" + std::to_string(r.v), seed_, r.size);
    UpdateManifest mu;
    mu.l = Location{repo_, r.s.value + "/v" + std::to_string(r.v)};
    mu.theta = MetaRecord{blob->digest(), r.e, r.s, r.deps};
    mu.tau = TimestampRecord{t, r.v};
    mu.sigma.push_back(sign(payload_digest(mu), key_, ctx_.registry->provider()));
    return {UpdateImage{r.s, blob}, mu};
  }

  void schedule(const Release& r) {
    ctx_.sim.schedule_at(r.at, [this, r] { start(r); });
  }

  /// Releases whose manifest the director never accepted.
  std::vector<Release> unaccepted() const {
    std::vector<Release> out;
    for (const auto& [key, job] : jobs_) {
      if (!job.accepted) out.push_back(job.release);
    }
    return out;
  }

  const std::vector<Release>& planned() const { return planned_; }
  void plan(const Release& r) {
    planned_.push_back(r);
    schedule(r);
  }

  void receive(const Envelope& env) override {
    if (const auto* ack = std::get_if<StoreAck>(&env.payload)) {
      auto it = by_path_.find(ack->l.path);
      if (it == by_path_.end() || env.src != "ir/" + repo_) return;
      Job& job = jobs_.at(it->second);
      if (job.accepted || job.stored) return;
      if (ack->ok) {
        job.stored = true;
        submit(job);
      }
    } else if (const auto* v = std::get_if<ManifestVerdict>(&env.payload)) {
      if (env.src != "sud") return;
      auto it = jobs_.find(std::make_pair(v->s, v->v));
      if (it == jobs_.end() || it->second.accepted) return;
      Job& job = it->second;
      if (v->accepted) {
        job.accepted = true;
        ctx_.sim.cancel(job.timer);
      } else {
        ctx_.audit(id_ + " manifest rejected: " + v->reason);
      }
    }
  }

 private:
  struct Job {
    Release release;
    UpdateImage image;
    UpdateManifest mu;
    bool stored = false;
    bool accepted = false;
    int attempts = 0;
    simnet::TimerId timer = 0;
  };

  void start(const Release& r) {
    auto [image, mu] = prepare(r, clock_.next(ctx_.now()));
    auto key = std::make_pair(r.s, r.v);
    by_path_[mu.l.path] = key;
    Job& job = jobs_[key];
    job = Job{r, image, mu};
    attempt(key);
  }

  void attempt(std::pair<SoftwareId, uint64_t> key) {
    Job& job = jobs_.at(key);
    if (job.accepted) return;
    if (job.attempts > ctx_.timers.producer_retry_budget) {
      ctx_.alert(id_, "", "no verdict for " + job.release.s.value + " v" + std::to_string(job.release.v));
      return;
    }
    int n = ++job.attempts;
    // the wait starts once our bytes are on the wire; a large image can take longer to upload than
    // the whole verdict budget
    auto arm = [this, key, n] {
      Job& j = jobs_.at(key);
      if (j.accepted || j.attempts != n) return;
      j.timer = ctx_.sim.schedule_in(ctx_.timers.producer_deadline / (ctx_.timers.producer_retry_budget + 1),
                                     [this, key] { attempt(key); });
    };
    if (!job.stored) {
      send("ir/" + repo_, StoreImage{job.image, job.mu}, arm);
    } else {
      send("sud", SubmitManifest{job.mu}, arm);
    }
  }

  void submit(const Job& job) { send("sud", SubmitManifest{job.mu}); }

  KeyPair key_;
  std::string repo_;
  uint64_t seed_;
  MonotoneClock clock_;
  std::map<std::pair<SoftwareId, uint64_t>, Job> jobs_;
  std::map<std::string, std::pair<SoftwareId, uint64_t>> by_path_;
  std::vector<Release> planned_;
};

}  // namespace scalota
