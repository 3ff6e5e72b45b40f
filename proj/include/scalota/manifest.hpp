#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "scalota/crypto.hpp"
#include "scalota/encoding.hpp"

namespace scalota {

template <class Tag>
struct Name {
  std::string value;

  Name() = default;
  explicit Name(std::string v) : value(std::move(v)) {}

  auto operator<=>(const Name&) const = default;
};

using EcuId = Name<struct EcuTag>;
using SoftwareId = Name<struct SoftwareTag>;

/// Image location inside a repository: rendered as "ir://<repo>/<path>".
struct Location {
  std::string repo;
  std::string path;

  auto operator<=>(const Location&) const = default;
  std::string uri() const { return "ir://" + repo + "/" + path; }
};

/// τ = (t, v): issue time in simulated milliseconds and a version counter.
struct TimestampRecord {
  uint64_t t = 0;
  uint64_t v = 1;

  bool operator==(const TimestampRecord&) const = default;
};

/// θ = (h, e, s, d)
struct MetaRecord {
  Digest h;
  EcuId e;
  SoftwareId s;
  std::vector<SoftwareId> d;

  bool operator==(const MetaRecord&) const = default;
};

/// μ = (l, θ, τ) plus its signature set.
struct UpdateManifest {
  Location l;
  MetaRecord theta;
  TimestampRecord tau;
  SignatureSet sigma;

  bool operator==(const UpdateManifest&) const = default;
};

/// Δ = (D, τ) plus its signature set.
struct Bundle {
  std::vector<UpdateManifest> D;
  TimestampRecord tau;
  SignatureSet sigma;

  bool operator==(const Bundle&) const = default;
};

/// One line of a status report R. `sig` is the secondary's own signature in untrusted mode.
struct StatusEntry {
  EcuId e;
  SoftwareId s;
  TimestampRecord tau;
  std::optional<SignatureEntry> sig;

  bool operator==(const StatusEntry&) const = default;
};

using Nonce = std::array<uint8_t, 16>;
using ReportBody = std::variant<std::vector<StatusEntry>, Digest>;

/// γ = (R, τ, nonce). SUD replies additionally carry bundles.
struct StatusReport {
  ReportBody R;
  TimestampRecord tau;
  Nonce nonce{};
  SignatureSet sigma;
  std::optional<std::vector<Bundle>> bundles;

  bool operator==(const StatusReport&) const = default;
};

// ---------------------------------------------------------------------------------------------
// Canonical encoding. The wire form of a signed message is its signed region followed by its
// signature set, so appending signatures never changes the bytes other parties verify.

namespace detail {

inline void check_tau(const TimestampRecord& tau) {
  if (tau.v < 1) throw EncodingError("timestamp record version must be >= 1");
}

inline void check_theta(const MetaRecord& theta) {
  std::set<SoftwareId> seen;
  for (const auto& dep : theta.d) {
    if (dep == theta.s) throw EncodingError("software lists itself as a dependency");
    if (!seen.insert(dep).second) throw EncodingError("duplicate dependency");
  }
}

inline void put_sigma(Writer& w, const SignatureSet& sigma) {
  w.count(sigma.size());
  for (const auto& e : sigma) {
    w.str(e.signer.value);
    w.bytes(e.signature);
    w.u8(e.endorser ? 1 : 0);
    if (e.endorser) w.str(e.endorser->value);
  }
}

inline SignatureSet get_sigma(Reader& r) {
  SignatureSet sigma(r.count());
  for (auto& e : sigma) {
    e.signer = SignerId{r.str()};
    e.signature = r.bytes();
    uint8_t has = r.u8();
    if (has > 1) throw EncodingError("bad presence flag");
    if (has) e.endorser = SignerId{r.str()};
  }
  return sigma;
}

inline void put_entry(Writer& w, const SignatureEntry& e) {
  put_sigma(w, SignatureSet{e});
}

}  // namespace detail

inline void encode_into(Writer& w, const TimestampRecord& tau) {
  detail::check_tau(tau);
  w.u64(tau.t);
  w.u64(tau.v);
}

inline TimestampRecord decode_tau(Reader& r) {
  TimestampRecord tau{r.u64(), r.u64()};
  detail::check_tau(tau);
  return tau;
}

inline void encode_into(Writer& w, const MetaRecord& theta) {
  detail::check_theta(theta);
  w.digest(theta.h);
  w.str(theta.e.value);
  w.str(theta.s.value);
  w.count(theta.d.size());
  for (const auto& dep : theta.d) w.str(dep.value);
}

inline MetaRecord decode_theta(Reader& r) {
  MetaRecord theta;
  theta.h = r.digest();
  theta.e = EcuId{r.str()};
  theta.s = SoftwareId{r.str()};
  theta.d.resize(r.count());
  for (auto& dep : theta.d) dep = SoftwareId{r.str()};
  detail::check_theta(theta);
  return theta;
}

inline void encode_signed_region(Writer& w, const UpdateManifest& mu) {
  w.str(mu.l.repo);
  w.str(mu.l.path);
  encode_into(w, mu.theta);
  encode_into(w, mu.tau);
}

inline void encode_into(Writer& w, const UpdateManifest& mu) {
  if (mu.sigma.empty()) throw EncodingError("manifest has an empty signature set");
  encode_signed_region(w, mu);
  detail::put_sigma(w, mu.sigma);
}

inline UpdateManifest decode_manifest(Reader& r) {
  UpdateManifest mu;
  mu.l.repo = r.str();
  mu.l.path = r.str();
  mu.theta = decode_theta(r);
  mu.tau = decode_tau(r);
  mu.sigma = detail::get_sigma(r);
  if (mu.sigma.empty()) throw EncodingError("manifest has an empty signature set");
  return mu;
}

inline void check_bundle(const Bundle& b) {
  if (b.D.empty()) throw EncodingError("bundle has no manifests");
  std::set<std::pair<SoftwareId, uint64_t>> seen;
  for (const auto& mu : b.D) {
    if (!seen.emplace(mu.theta.s, mu.tau.v).second) {
      throw EncodingError("bundle lists the same (software, version) twice");
    }
  }
}

inline void encode_signed_region(Writer& w, const Bundle& b) {
  check_bundle(b);
  w.count(b.D.size());
  for (const auto& mu : b.D) encode_into(w, mu);
  encode_into(w, b.tau);
}

inline void encode_into(Writer& w, const Bundle& b) {
  encode_signed_region(w, b);
  detail::put_sigma(w, b.sigma);
}

inline Bundle decode_bundle(Reader& r) {
  Bundle b;
  b.D.resize(r.count());
  for (auto& mu : b.D) mu = decode_manifest(r);
  b.tau = decode_tau(r);
  b.sigma = detail::get_sigma(r);
  check_bundle(b);
  return b;
}

inline void encode_signed_region(Writer& w, const StatusEntry& e) {
  w.str(e.e.value);
  w.str(e.s.value);
  encode_into(w, e.tau);
}

inline void encode_into(Writer& w, const StatusEntry& e) {
  encode_signed_region(w, e);
  w.u8(e.sig ? 1 : 0);
  if (e.sig) detail::put_entry(w, *e.sig);
}

inline StatusEntry decode_status_entry(Reader& r) {
  StatusEntry e;
  e.e = EcuId{r.str()};
  e.s = SoftwareId{r.str()};
  e.tau = decode_tau(r);
  uint8_t has = r.u8();
  if (has > 1) throw EncodingError("bad presence flag");
  if (has) {
    SignatureSet one = detail::get_sigma(r);
    if (one.size() != 1) throw EncodingError("status entry carries more than one signature");
    e.sig = std::move(one.front());
  }
  return e;
}

inline void encode_into(Writer& w, const ReportBody& body) {
  if (const auto* entries = std::get_if<std::vector<StatusEntry>>(&body)) {
    w.u8(0);
    w.count(entries->size());
    for (const auto& e : *entries) encode_into(w, e);
  } else {
    w.u8(1);
    w.digest(std::get<Digest>(body));
  }
}

inline ReportBody decode_report_body(Reader& r) {
  uint8_t tag = r.u8();
  if (tag == 0) {
    std::vector<StatusEntry> entries(r.count());
    for (auto& e : entries) e = decode_status_entry(r);
    return entries;
  }
  if (tag == 1) return r.digest();
  throw EncodingError("bad report body tag");
}

inline void encode_signed_region(Writer& w, const StatusReport& g) {
  encode_into(w, g.R);
  encode_into(w, g.tau);
  w.raw(ByteView{g.nonce.data(), g.nonce.size()});
  w.u8(g.bundles ? 1 : 0);
  if (g.bundles) {
    w.count(g.bundles->size());
    for (const auto& b : *g.bundles) encode_into(w, b);
  }
}

inline void encode_into(Writer& w, const StatusReport& g) {
  encode_signed_region(w, g);
  detail::put_sigma(w, g.sigma);
}

inline StatusReport decode_status(Reader& r) {
  StatusReport g;
  g.R = decode_report_body(r);
  g.tau = decode_tau(r);
  for (auto& b : g.nonce) b = r.u8();
  uint8_t has = r.u8();
  if (has > 1) throw EncodingError("bad presence flag");
  if (has) {
    std::vector<Bundle> bundles(r.count());
    for (auto& b : bundles) b = decode_bundle(r);
    g.bundles = std::move(bundles);
  }
  g.sigma = detail::get_sigma(r);
  return g;
}

/// Full wire encoding of any protocol message.
template <class T>
Bytes canonical_encode(const T& msg) {
  Writer w;
  encode_into(w, msg);
  return std::move(w).data();
}

template <class T>
Bytes signed_region(const T& msg) {
  Writer w;
  encode_signed_region(w, msg);
  return std::move(w).data();
}

template <class T, class Fn>
T decode_all(ByteView bytes, Fn&& fn) {
  Reader r(bytes);
  T out = fn(r);
  r.expect_done();
  return out;
}

inline UpdateManifest decode_manifest(ByteView b) { return decode_all<UpdateManifest>(b, [](Reader& r) { return decode_manifest(r); }); }
inline Bundle decode_bundle(ByteView b) { return decode_all<Bundle>(b, [](Reader& r) { return decode_bundle(r); }); }
inline StatusReport decode_status(ByteView b) { return decode_all<StatusReport>(b, [](Reader& r) { return decode_status(r); }); }
inline TimestampRecord decode_tau(ByteView b) { return decode_all<TimestampRecord>(b, [](Reader& r) { return decode_tau(r); }); }

namespace detail {
template <class T> struct MessageTag;
template <> struct MessageTag<UpdateManifest> { static constexpr std::string_view value = "Manifest"; };
template <> struct MessageTag<Bundle> { static constexpr std::string_view value = "Bundle"; };
template <> struct MessageTag<StatusReport> { static constexpr std::string_view value = "Status"; };
template <> struct MessageTag<StatusEntry> { static constexpr std::string_view value = "StatusEntry"; };
}  // namespace detail

/// Digest every signature in the message's σ covers: H(type tag || signed region).
template <class T>
Digest payload_digest(const T& msg) {
  Bytes region = signed_region(msg);
  return Hasher{}.update(detail::MessageTag<T>::value).update(region).finish();
}

inline Digest report_digest(const std::vector<StatusEntry>& entries) {
  Writer w;
  encode_into(w, ReportBody{entries});
  return digest_of(w.data());
}

/// Digest the receiver compares R against, whichever form R was sent in.
inline Digest report_digest(const ReportBody& body) {
  if (const auto* d = std::get_if<Digest>(&body)) return *d;
  return report_digest(std::get<std::vector<StatusEntry>>(body));
}

// ---------------------------------------------------------------------------------------------
// Validation assertions.

/// True iff every required signer has a verifying, non-revoked entry in sigma. Endorsed
/// entries count only when their endorser is listed in `trusted_endorsers`.
inline bool assert_auth(const SignatureSet& sigma, const std::set<SignerId>& required,
                        const Digest& payload, const KeyRegistry& registry,
                        const RevocationList& crl,
                        const std::set<SignerId>& trusted_endorsers = {}) {
  for (const auto& who : required) {
    bool found = std::any_of(sigma.begin(), sigma.end(), [&](const SignatureEntry& e) {
      if (e.signer != who) return false;
      if (e.endorser && trusted_endorsers.count(*e.endorser) == 0) return false;
      return verify(payload, e, registry, crl);
    });
    if (!found) return false;
  }
  return true;
}

/// Strictly newer in both time and version.
inline bool assert_fresh(const TimestampRecord& fresh, const TimestampRecord& last) {
  return fresh.t > last.t && fresh.v > last.v;
}

/// Director-side status freshness: time advances, version never ahead of the director's.
inline bool assert_status_fresh_at_sud(const TimestampRecord& fresh, const TimestampRecord& last) {
  return fresh.t > last.t && fresh.v <= last.v;
}

/// Vehicle-side reply freshness: time advances, version may skip ahead.
inline bool assert_status_fresh_at_primary(const TimestampRecord& fresh,
                                           const TimestampRecord& last) {
  return fresh.t > last.t && fresh.v >= last.v;
}

// ---------------------------------------------------------------------------------------------
// Images and buckets.

enum class Provenance : uint8_t { Producer, Adversary };

/// Immutable image payload. Digests are memoized; the bytes never change after construction.
class ImageBlob {
 public:
  ImageBlob(Bytes bytes, Provenance origin) : bytes_(std::move(bytes)), origin_(origin) {}

  const Bytes& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }
  Provenance origin() const { return origin_; }

  const Digest& digest() const {
    if (!digest_) digest_ = digest_of(bytes_);
    return *digest_;
  }

  const Digest& range_digest(std::size_t offset, std::size_t length) const {
    auto key = std::make_pair(offset, length);
    auto it = range_digests_.find(key);
    if (it == range_digests_.end()) {
      it = range_digests_.emplace(key, digest_of(ByteView{bytes_}.subspan(offset, length))).first;
    }
    return it->second;
  }

 private:
  Bytes bytes_;
  Provenance origin_;
  mutable std::optional<Digest> digest_;
  mutable std::map<std::pair<std::size_t, std::size_t>, Digest> range_digests_;
};

using BlobPtr = std::shared_ptr<const ImageBlob>;

inline BlobPtr make_blob(Bytes bytes, Provenance origin = Provenance::Producer) {
  return std::make_shared<const ImageBlob>(std::move(bytes), origin);
}

/// A view of a contiguous range of an image blob.
struct ImageSlice {
  BlobPtr blob;
  std::size_t offset = 0;
  std::size_t length = 0;

  ByteView view() const { return ByteView{blob->bytes()}.subspan(offset, length); }
  const Digest& digest() const { return blob->range_digest(offset, length); }
};

struct Bucket {
  uint64_t index = 0;
  ImageSlice chunk;
  Digest digest;
};

inline constexpr std::size_t kDefaultBucketSize = 1 << 20;

inline uint64_t bucket_count(std::size_t image_size, std::size_t bucket_size) {
  if (bucket_size == 0) throw std::invalid_argument("bucket size must be >= 1");
  if (image_size == 0) return 1;
  return (image_size + bucket_size - 1) / bucket_size;
}

/// δ: an update image with its bucket decomposition.
struct UpdateImage {
  SoftwareId s;
  BlobPtr blob;

  Bucket bucket(uint64_t index, std::size_t bucket_size) const {
    std::size_t offset = static_cast<std::size_t>(index) * bucket_size;
    std::size_t length = std::min(bucket_size, blob->size() - std::min(offset, blob->size()));
    ImageSlice slice{blob, offset, length};
    return Bucket{index, slice, slice.digest()};
  }

  std::vector<Bucket> buckets(std::size_t bucket_size, uint64_t from_index = 0) const {
    std::vector<Bucket> out;
    uint64_t n = bucket_count(blob->size(), bucket_size);
    for (uint64_t i = from_index; i < n; ++i) out.push_back(bucket(i, bucket_size));
    return out;
  }
};

/// Payload hash, target ECU and software id all match the manifest.
inline bool assert_integrity(const UpdateManifest& mu, ByteView image_bytes, const EcuId& expected_ecu,
                             const SoftwareId& expected_sw) {
  return digest_of(image_bytes) == mu.theta.h && mu.theta.e == expected_ecu &&
         mu.theta.s == expected_sw;
}

inline bool assert_integrity(const UpdateManifest& mu, const ImageBlob& image, const EcuId& expected_ecu,
                             const SoftwareId& expected_sw) {
  return image.digest() == mu.theta.h && mu.theta.e == expected_ecu && mu.theta.s == expected_sw;
}

/// Buckets received so far, in index order, out of `total`.
struct BucketProgress {
  uint64_t total = 0;
  std::vector<Bucket> received;

  uint64_t next_index() const {
    for (uint64_t i = 0; i < received.size(); ++i) {
      if (received[i].index != i) return i;
    }
    return received.size();
  }
};

struct AssemblyComplete {
  UpdateImage image;
};
struct AssemblyResume {
  uint64_t next_index = 0;
};
struct AssemblyIntegrityError {};

using AssemblyResult = std::variant<AssemblyComplete, AssemblyResume, AssemblyIntegrityError>;

inline AssemblyResult assemble_buckets(const BucketProgress& progress, const UpdateManifest& mu) {
  uint64_t next = progress.next_index();
  if (next < progress.total) return AssemblyResume{next};

  const auto& parts = progress.received;
  // Zero-copy path: the buckets are contiguous slices tiling one blob.
  bool tiles_one_blob = !parts.empty();
  std::size_t expected_offset = 0;
  for (const auto& b : parts) {
    if (b.chunk.blob != parts.front().chunk.blob || b.chunk.offset != expected_offset) {
      tiles_one_blob = false;
      break;
    }
    expected_offset += b.chunk.length;
  }
  BlobPtr blob;
  if (tiles_one_blob && expected_offset == parts.front().chunk.blob->size()) {
    blob = parts.front().chunk.blob;
  } else {
    Bytes joined;
    Provenance origin = Provenance::Producer;
    for (const auto& b : parts) {
      auto v = b.chunk.view();
      joined.insert(joined.end(), v.begin(), v.end());
      if (b.chunk.blob->origin() == Provenance::Adversary) origin = Provenance::Adversary;
    }
    blob = make_blob(std::move(joined), origin);
  }
  if (blob->digest() != mu.theta.h) return AssemblyIntegrityError{};
  return AssemblyComplete{UpdateImage{mu.theta.s, blob}};
}

}  // namespace scalota
