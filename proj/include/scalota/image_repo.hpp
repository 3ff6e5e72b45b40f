#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "scalota/messages.hpp"

namespace scalota {

struct RepoError : std::runtime_error {
  enum class Kind { Rejected, NotFound, Unauthorized };
  Kind kind;
  RepoError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

struct RepoEntry {
  UpdateImage image;
  UpdateManifest mu;
};

/// Versioned store of update images and their producer manifests, addressed by location path.
class ImageRepo {
 public:
  ImageRepo(std::string repo_id, std::shared_ptr<const KeyRegistry> registry, std::shared_ptr<RevocationList> crl,
            TrustAnchors anchors)
      : repo_id_(std::move(repo_id)), registry_(std::move(registry)), crl_(std::move(crl)),
        anchors_(std::move(anchors)) {}

  const std::string& repo_id() const { return repo_id_; }
  void set_anchors(TrustAnchors anchors) { anchors_ = std::move(anchors); }

  /// Readers that may download without a publish credential (the director validating uploads).
  void add_trusted_reader(SignerId id) { trusted_readers_.insert(std::move(id)); }

  Location store(UpdateImage delta, UpdateManifest mu, const SignerId& producer) {
    if (mu.l.repo != repo_id_) throw RepoError(RepoError::Kind::Rejected, "location names another repository");
    const SignerId* authorized = anchors_.producer_of(mu.theta.s);
    if (authorized == nullptr || *authorized != producer ||
        !assert_auth(mu.sigma, {producer}, payload_digest(mu), *registry_, *crl_)) {
      throw RepoError(RepoError::Kind::Rejected, "manifest not signed by its producer");
    }
    if (delta.blob->digest() != mu.theta.h || delta.s != mu.theta.s) {
      throw RepoError(RepoError::Kind::Rejected, "image does not match manifest");
    }
    if (auto it = entries_.find(mu.l.path); it != entries_.end()) {
      if (it->second.mu.theta.h != mu.theta.h) throw RepoError(RepoError::Kind::Rejected, "path already taken");
      return mu.l;
    }
    entries_.emplace(mu.l.path, RepoEntry{std::move(delta), mu});
    return mu.l;
  }

  bool contains(const Location& l) const { return l.repo == repo_id_ && entries_.count(l.path) != 0; }

  /// Throws unless `requester` may read `l` under `credential`.
  const RepoEntry& authorize(const Location& l, const std::optional<Bundle>& credential,
                             const SignerId& requester) const {
    auto it = entries_.find(l.path);
    if (l.repo != repo_id_ || it == entries_.end()) throw RepoError(RepoError::Kind::NotFound, "not found: " + l.uri());
    if (trusted_readers_.count(requester) && registry_->trusted(requester, *crl_)) return it->second;
    if (!credential) throw RepoError(RepoError::Kind::Unauthorized, "missing credential");
    if (!bundle_published_to(*credential, requester, anchors_, *registry_, *crl_)) {
      throw RepoError(RepoError::Kind::Unauthorized, "credential not published to requester");
    }
    bool listed = std::any_of(credential->D.begin(), credential->D.end(),
                              [&](const UpdateManifest& mu) { return mu.l == l; });
    if (!listed) throw RepoError(RepoError::Kind::Unauthorized, "location not covered by credential");
    return it->second;
  }

  UpdateImage fetch(const Location& l, const std::optional<Bundle>& credential, const SignerId& requester) const {
    return authorize(l, credential, requester).image;
  }

  std::vector<Bucket> fetch_buckets(const Location& l, const std::optional<Bundle>& credential,
                                    const SignerId& requester, uint64_t from_index,
                                    std::size_t bucket_size = kDefaultBucketSize) const {
    return authorize(l, credential, requester).image.buckets(bucket_size, from_index);
  }

  const std::map<std::string, RepoEntry>& entries() const { return entries_; }

  /// Writes `<dir>/<content digest>.img` and `.manifest` per entry plus an index file.
  void dump(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.txt");
    for (const auto& [path, entry] : entries_) {
      std::string name = entry.image.blob->digest().hex();
      index << path << " " << name << " " << entry.image.blob->size() << "\n";
      std::ofstream img(dir / (name + ".img"), std::ios::binary);
      const Bytes& b = entry.image.blob->bytes();
      img.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
      Bytes enc = canonical_encode(entry.mu);
      std::ofstream man(dir / (name + ".manifest"), std::ios::binary);
      man.write(reinterpret_cast<const char*>(enc.data()), static_cast<std::streamsize>(enc.size()));
    }
  }

 private:
  std::string repo_id_;
  std::shared_ptr<const KeyRegistry> registry_;
  std::shared_ptr<RevocationList> crl_;
  TrustAnchors anchors_;
  std::set<SignerId> trusted_readers_;
  std::map<std::string, RepoEntry> entries_;
};

/// Network face of an image repository. Bucket streams are pipelined: the next bucket starts as
/// soon as the previous one has left the sender.
class RepoActor final : public Actor {
 public:
  RepoActor(Context& ctx, ImageRepo& repo) : Actor(ctx, "ir/" + repo.repo_id()), repo_(repo) {}

  ImageRepo& repo() { return repo_; }

  void add_producer(const std::string& actor, SignerId signer) { producers_[actor] = std::move(signer); }

  void receive(const Envelope& env) override {
    if (const auto* m = std::get_if<StoreImage>(&env.payload)) on_store(env, *m);
    if (const auto* m = std::get_if<FetchRequest>(&env.payload)) on_fetch(env, *m);
  }

 private:
  void on_store(const Envelope& env, const StoreImage& m) {
    auto prod = producers_.find(env.src);
    StoreAck ack{m.mu.l, false, ""};
    if (prod == producers_.end()) {
      ack.reason = "unknown producer";
    } else {
      try {
        repo_.store(m.image, m.mu, prod->second);
        ack.ok = true;
      } catch (const RepoError& e) {
        ack.reason = e.what();
      }
    }
    send(env.src, ack);
  }

  void on_fetch(const Envelope& env, const FetchRequest& m) {
    try {
      if (!verify(fetch_digest(m), m.request_sig, *ctx_.registry, *ctx_.crl) || m.request_sig.signer != m.requester ||
          m.request_sig.endorser) {
        throw RepoError(RepoError::Kind::Unauthorized, "request signature");
      }
      const RepoEntry& entry = repo_.authorize(m.l, m.credential, m.requester);
      if (m.whole) {
        send(env.src, FetchWhole{m.request_id, m.l, entry.image});
        return;
      }
      uint64_t total = bucket_count(entry.image.blob->size(), ctx_.timers.bucket_size);
      auto key = std::make_pair(env.src, m.l.path);
      uint64_t generation = ++streams_[key];
      stream(env.src, m, entry.image, m.from_index, total, generation);
    } catch (const RepoError& e) {
      send(env.src, FetchError{m.request_id, m.l, e.what()});
    }
  }

  void stream(const std::string& dst, const FetchRequest& req, const UpdateImage& image, uint64_t index,
              uint64_t total, uint64_t generation) {
    if (index >= total) return;
    // a newer request for the same image from the same reader supersedes this stream
    if (streams_[std::make_pair(dst, req.l.path)] != generation) return;
    FetchChunk chunk{req.request_id, req.l, image.bucket(index, ctx_.timers.bucket_size), total};
    send(dst, std::move(chunk), [this, dst, req, image, index, total, generation] {
      stream(dst, req, image, index + 1, total, generation);
    });
  }

  ImageRepo& repo_;
  std::map<std::string, SignerId> producers_;
  std::map<std::pair<std::string, std::string>, uint64_t> streams_;
};

}  // namespace scalota
