#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "scalota/manifest.hpp"
#include "scalota/simnet.hpp"
#include "scalota/trust.hpp"

namespace scalota {

/// (MIN, software) subscription key used between the director, the engine and stations.
struct Topic {
  std::string min;
  SoftwareId s;

  auto operator<=>(const Topic&) const = default;
  std::string str() const { return min + "/" + s.value; }
};

// ---- producer, repository, director ------------------------------------------------------------

struct StoreImage {
  UpdateImage image;
  UpdateManifest mu;
};

struct StoreAck {
  Location l;
  bool ok = false;
  std::string reason;
};

struct SubmitManifest {
  UpdateManifest mu;
};

struct ManifestVerdict {
  SoftwareId s;
  uint64_t v = 0;
  bool accepted = false;
  std::string reason;
};

/// Download request to an image repository. Whole-image transfers are used by the director and
/// the engine; vehicles stream buckets so interrupted downloads can resume.
struct FetchRequest {
  uint64_t request_id = 0;
  Location l;
  std::optional<Bundle> credential;
  SignerId requester;
  uint64_t from_index = 0;
  bool whole = false;
  SignatureEntry request_sig;
};

struct FetchChunk {
  uint64_t request_id = 0;
  Location l;
  Bucket bucket;
  uint64_t total = 0;
};

struct FetchWhole {
  uint64_t request_id = 0;
  Location l;
  UpdateImage image;
};

struct FetchError {
  uint64_t request_id = 0;
  Location l;
  std::string reason;
};

// ---- director <-> engine -----------------------------------------------------------------------

struct Publish {
  Topic topic;
  Bundle bundle;
};

struct TopicSubscribe {
  Topic topic;
};

struct ManifestReRequest {
  Topic topic;
  SoftwareId s;
  uint64_t v = 0;
};

// ---- status cycle ------------------------------------------------------------------------------

struct Status {
  std::string vin;
  StatusReport gamma;
};

struct StatusReply {
  std::string vin;
  StatusReport gamma;
};

struct FullReportRequired {
  std::string vin;
  Digest digest;
};

// ---- engine <-> station ------------------------------------------------------------------------

struct StationSubscribe {
  Topic topic;
};

struct StationSubscribeAck {
  Topic topic;
};

struct StationPull {
  Topic topic;
  SoftwareId s;
  uint64_t v = 0;
  Digest h;
};

struct PullResponse {
  UpdateManifest mu;
  UpdateImage image;
};

struct EnginePush {
  Topic topic;
  UpdateManifest mu;
  UpdateImage image;
};

// ---- vehicle <-> station -----------------------------------------------------------------------

struct Hello {
  std::string vin;
  SignerId vehicle;
  Nonce challenge{};
  SignatureEntry sig;
};

struct Welcome {
  SignerId station;
  Nonce challenge{};
  SignatureEntry sig;
};

struct AuthReject {
  std::string reason;
};

struct ImageRequest {
  uint64_t request_id = 0;
  std::string min;
  Bundle credential;
  UpdateManifest mu;
  uint64_t from_index = 0;
};

struct ImageBucket {
  uint64_t request_id = 0;
  SoftwareId s;
  uint64_t v = 0;
  Bucket bucket;
  uint64_t total = 0;
};

struct ImageUnavailable {
  uint64_t request_id = 0;
  std::string reason;
};

struct Disconnect {};

// ---- in-vehicle --------------------------------------------------------------------------------

struct ReportRequest {
  uint64_t round = 0;
};

struct SecondaryReport {
  uint64_t round = 0;
  EcuId ecu;
  std::vector<StatusEntry> entries;
};

struct RelayReply {
  StatusReport gamma;
};

struct InstallItem {
  UpdateManifest mu;
  UpdateImage image;
};

struct Install {
  uint64_t install_id = 0;
  Bundle bundle;
  std::vector<InstallItem> items;
  SignatureEntry primary_sig;
};

struct InstallAck {
  uint64_t install_id = 0;
  EcuId ecu;
  bool ok = false;
  std::string reason;
};

using Message =
    std::variant<StoreImage, StoreAck, SubmitManifest, ManifestVerdict, FetchRequest, FetchChunk, FetchWhole,
                 FetchError, Publish, TopicSubscribe, ManifestReRequest, Status, StatusReply,
                 FullReportRequired, StationSubscribe, StationSubscribeAck, StationPull, PullResponse,
                 EnginePush, Hello, Welcome, AuthReject, ImageRequest, ImageBucket, ImageUnavailable,
                 Disconnect, ReportRequest, SecondaryReport, RelayReply, Install, InstallAck>;

inline const char* kind_name(const Message& m) {
  static constexpr const char* kNames[] = {
      "StoreImage",       "StoreAck",           "SubmitManifest", "ManifestVerdict",    "FetchRequest",
      "FetchChunk",       "FetchWhole",         "FetchError",     "Publish",            "TopicSubscribe",
      "ManifestReRequest", "Status",            "StatusReply",    "FullReportRequired", "StationSubscribe",
      "StationSubscribeAck", "StationPull",     "PullResponse",   "EnginePush",         "Hello",
      "Welcome",          "AuthReject",         "ImageRequest",   "ImageBucket",        "ImageUnavailable",
      "Disconnect",       "ReportRequest",      "SecondaryReport", "RelayReply",        "Install",
      "InstallAck"};
  static_assert(std::size(kNames) == std::variant_size_v<Message>);
  return kNames[m.index()];
}

/// True for messages whose bulk is image payload.
inline bool carries_image(const Message& m) {
  return std::holds_alternative<StoreImage>(m) || std::holds_alternative<FetchChunk>(m) ||
         std::holds_alternative<FetchWhole>(m) || std::holds_alternative<PullResponse>(m) ||
         std::holds_alternative<EnginePush>(m) || std::holds_alternative<ImageBucket>(m) ||
         std::holds_alternative<Install>(m);
}

namespace detail {

inline constexpr uint64_t kHeaderBytes = 64;
inline constexpr uint64_t kSignatureEntryBytes = 96;

inline uint64_t encoded(const UpdateManifest& mu) { return canonical_encode(mu).size(); }
inline uint64_t encoded(const Bundle& b) { return canonical_encode(b).size(); }
inline uint64_t encoded(const StatusReport& g) { return canonical_encode(g).size(); }

}  // namespace detail

/// Bytes the message occupies on the wire: a fixed header plus canonical encodings of every
/// protocol structure it carries plus raw image bytes.
inline uint64_t wire_size(const Message& m) {
  using namespace detail;
  return kHeaderBytes + std::visit(
      [](const auto& x) -> uint64_t {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, StoreImage>) return x.image.blob->size() + encoded(x.mu);
        else if constexpr (std::is_same_v<T, SubmitManifest>) return encoded(x.mu);
        else if constexpr (std::is_same_v<T, FetchRequest>)
          return 64 + (x.credential ? encoded(*x.credential) : 0) + kSignatureEntryBytes;
        else if constexpr (std::is_same_v<T, FetchChunk>) return 40 + x.bucket.chunk.length;
        else if constexpr (std::is_same_v<T, FetchWhole>) return 40 + x.image.blob->size();
        else if constexpr (std::is_same_v<T, Publish>) return encoded(x.bundle);
        else if constexpr (std::is_same_v<T, Status>) return encoded(x.gamma);
        else if constexpr (std::is_same_v<T, StatusReply>) return encoded(x.gamma);
        else if constexpr (std::is_same_v<T, PullResponse>) return encoded(x.mu) + x.image.blob->size();
        else if constexpr (std::is_same_v<T, EnginePush>) return encoded(x.mu) + x.image.blob->size();
        else if constexpr (std::is_same_v<T, Hello> || std::is_same_v<T, Welcome>) return 16 + kSignatureEntryBytes;
        else if constexpr (std::is_same_v<T, ImageRequest>) return 16 + encoded(x.credential) + encoded(x.mu);
        else if constexpr (std::is_same_v<T, ImageBucket>) return 40 + x.bucket.chunk.length;
        else if constexpr (std::is_same_v<T, SecondaryReport>) {
          uint64_t n = 0;
          for (const auto& e : x.entries) n += canonical_encode(ReportBody{std::vector<StatusEntry>{e}}).size();
          return n;
        } else if constexpr (std::is_same_v<T, RelayReply>) return encoded(x.gamma);
        else if constexpr (std::is_same_v<T, Install>) {
          uint64_t n = encoded(x.bundle) + kSignatureEntryBytes;
          for (const auto& it : x.items) n += encoded(it.mu) + it.image.blob->size();
          return n;
        } else return 32;
      },
      m);
}

using Network = simnet::Network<Message>;
using Envelope = Network::Envelope;

// ---- observation logs --------------------------------------------------------------------------

struct AlertRecord {
  double time = 0;
  std::string actor;
  std::string vin;  // empty for non-vehicle actors
  std::string reason;
};

struct InstallRecord {
  double time = 0;
  std::string vin;
  EcuId ecu;
  UpdateManifest mu;
  Bundle bundle;
  BlobPtr blob;
  TimestampRecord previous;  // installed τ before this install; v == 0 when none
  bool had_previous = false;
  std::vector<SoftwareId> batch;  // every software installed by the same all-or-nothing step
  std::vector<SoftwareId> already_present;
};

enum class CacheOutcome : uint8_t { Hit, Miss, Unknown, PassThrough };

inline const char* cache_outcome_name(CacheOutcome c) {
  switch (c) {
    case CacheOutcome::Hit: return "hit";
    case CacheOutcome::Miss: return "miss";
    case CacheOutcome::Unknown: return "unknown";
    case CacheOutcome::PassThrough: return "pass_through";
  }
  return "?";
}

struct CacheEvent {
  double time = 0;
  std::string station;
  std::string vin;
  SoftwareId s;
  uint64_t v = 0;
  CacheOutcome outcome = CacheOutcome::Hit;
};

/// Per-vehicle milestones of the most recent update round.
struct VehicleTiming {
  double ignition = -1;
  double reply = -1;
  double images_done = -1;
  double installed = -1;
  std::size_t images = 0;
};

struct EventLog {
  std::vector<AlertRecord> alerts;
  std::vector<InstallRecord> installs;
  std::vector<CacheEvent> cache_events;
  std::vector<std::string> audit;
  std::map<std::string, VehicleTiming> timings;
};

/// Protocol timing knobs shared by all actors of a world. Times in simulated milliseconds.
struct TimerPolicy {
  double status_deadline_floor = 10'000;
  double sud_service_time = 5;
  double status_retry_interval = 3'000;
  int status_retry_budget = 3;
  double image_deadline = 600'000;
  double download_stall = 20'000;
  int download_retry_budget = 4;
  double fallback_delay = 60'000;
  double install_latency = 50;
  double install_deadline = 30'000;
  double producer_deadline = 60'000;
  int producer_retry_budget = 3;
  int engine_rerequest_budget = 3;
  std::size_t bucket_size = kDefaultBucketSize;
};

class Actor;

/// Everything an actor may touch besides its own state.
struct Context {
  simnet::Simulator& sim;
  Network& net;
  std::map<std::pair<std::string, std::string>, simnet::LinkId> routes;
  std::shared_ptr<const SignatureProvider> provider;
  std::shared_ptr<const KeyRegistry> registry;
  std::shared_ptr<RevocationList> crl;  // broker-wide, changes take effect immediately
  TrustAnchors anchors;
  TimerPolicy timers;
  EventLog log;

  Context(simnet::Simulator& s, Network& n) : sim(s), net(n) {}

  double now() const { return sim.now(); }

  bool has_route(const std::string& src, const std::string& dst) const {
    return routes.count({src, dst}) != 0;
  }

  void send(const std::string& src, const std::string& dst, Message m, std::function<void()> on_tx = {}) {
    auto it = routes.find({src, dst});
    if (it == routes.end()) throw std::logic_error("no route " + src + " -> " + dst);
    uint64_t size = wire_size(m);
    std::string kind = kind_name(m);
    net.send(src, dst, it->second, size, std::move(kind), std::move(m), std::move(on_tx));
  }

  void alert(const std::string& actor, const std::string& vin, const std::string& reason) {
    log.alerts.push_back(AlertRecord{now(), actor, vin, reason});
  }

  void audit(const std::string& line) { log.audit.push_back(std::to_string(now()) + " " + line); }
};

/// Clock value for τ fields: milliseconds, strictly increasing per caller.
class MonotoneClock {
 public:
  uint64_t next(double now) {
    auto t = static_cast<uint64_t>(now < 0 ? 0 : now);
    last_ = std::max(t, last_ + 1);
    return last_;
  }
  uint64_t last() const { return last_; }

 private:
  uint64_t last_ = 0;
};

class Actor {
 public:
  Actor(Context& ctx, std::string id) : ctx_(ctx), id_(std::move(id)) {}
  virtual ~Actor() = default;
  Actor(const Actor&) = delete;
  Actor& operator=(const Actor&) = delete;

  const std::string& id() const { return id_; }
  virtual void receive(const Envelope& env) = 0;

 protected:
  void send(const std::string& dst, Message m, std::function<void()> on_tx = {}) {
    ctx_.send(id_, dst, std::move(m), std::move(on_tx));
  }

  Context& ctx_;
  std::string id_;
};

/// Digest a primary signs to vouch for an install batch.
inline Digest install_digest(const Install& m) {
  Hasher h;
  h.update("scalota/install").update(payload_digest(m.bundle));
  for (const auto& it : m.items) h.update(payload_digest(it.mu)).update(it.image.blob->digest());
  return h.finish();
}

inline Digest fetch_digest(const FetchRequest& r) {
  Writer w;
  w.u64(r.request_id);
  w.str(r.l.repo);
  w.str(r.l.path);
  w.str(r.requester.value);
  w.u64(r.from_index);
  w.u8(r.whole ? 1 : 0);
  return Hasher{}.update("scalota/fetch").update(w.data()).finish();
}

inline Digest hello_digest(const std::string& vin, const Nonce& challenge) {
  return Hasher{}.update("scalota/hello").update(vin).update(ByteView{challenge.data(), challenge.size()}).finish();
}

inline Digest welcome_digest(const SignerId& station, const Nonce& challenge) {
  return Hasher{}
      .update("scalota/welcome")
      .update(station.value)
      .update(ByteView{challenge.data(), challenge.size()})
      .finish();
}

}  // namespace scalota
