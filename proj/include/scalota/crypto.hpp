#pragma once

#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scalota {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

inline constexpr std::size_t kDigestSize = 32;

namespace detail {

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) {
    throw std::runtime_error("libsodium initialization failed");
  }
}

}  // namespace detail

/// Fixed 32-byte SHA-256 digest.
struct Digest {
  std::array<uint8_t, kDigestSize> bytes{};

  auto operator<=>(const Digest&) const = default;

  ByteView view() const { return {bytes.data(), bytes.size()}; }

  std::string hex() const {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(kDigestSize * 2);
    for (uint8_t b : bytes) {
      out.push_back(kHex[b >> 4]);
      out.push_back(kHex[b & 0x0f]);
    }
    return out;
  }
};

inline Digest digest_of(ByteView data) {
  detail::ensure_sodium();
  Digest d;
  crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
  return d;
}

inline Digest digest_of(std::string_view text) {
  return digest_of(ByteView{reinterpret_cast<const uint8_t*>(text.data()), text.size()});
}

/// Incremental SHA-256 for multi-part payloads.
class Hasher {
 public:
  Hasher() {
    detail::ensure_sodium();
    crypto_hash_sha256_init(&state_);
  }

  Hasher& update(ByteView data) {
    crypto_hash_sha256_update(&state_, data.data(), data.size());
    return *this;
  }
  Hasher& update(std::string_view text) {
    return update(ByteView{reinterpret_cast<const uint8_t*>(text.data()), text.size()});
  }
  Hasher& update(const Digest& d) { return update(d.view()); }

  Digest finish() {
    Digest d;
    crypto_hash_sha256_final(&state_, d.bytes.data());
    return d;
  }

 private:
  crypto_hash_sha256_state state_{};
};

/// Opaque signer identity, unique within a KeyRegistry.
struct SignerId {
  std::string value;

  SignerId() = default;
  explicit SignerId(std::string v) : value(std::move(v)) {}

  auto operator<=>(const SignerId&) const = default;
  bool empty() const { return value.empty(); }
};

enum class Role : uint8_t {
  Producer,
  Targets,
  Snapshot,
  Timestamp,
  Root,
  Publish,
  Subscriber,
  Station,
  PrimaryEcu,
  SecondaryEcu,
};

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::Producer: return "producer";
    case Role::Targets: return "targets";
    case Role::Snapshot: return "snapshot";
    case Role::Timestamp: return "timestamp";
    case Role::Root: return "root";
    case Role::Publish: return "publish";
    case Role::Subscriber: return "subscriber";
    case Role::Station: return "station";
    case Role::PrimaryEcu: return "primary";
    case Role::SecondaryEcu: return "secondary";
  }
  return "unknown";
}

struct KeyPair {
  SignerId id;
  Bytes public_key;
  Bytes private_key;
};

/// One element of a signature set. A plain entry is the signer's own signature over the
/// payload digest. An endorsement is made by `endorser` over (payload digest, signer id) and
/// vouches for `signer` without requiring its private key.
struct SignatureEntry {
  SignerId signer;
  Bytes signature;
  std::optional<SignerId> endorser;

  bool operator==(const SignatureEntry&) const = default;
};

using SignatureSet = std::vector<SignatureEntry>;

/// Pluggable signing scheme. Implementations must be deterministic given the key seed.
class SignatureProvider {
 public:
  virtual ~SignatureProvider() = default;

  virtual std::string_view name() const = 0;
  virtual KeyPair generate(SignerId id, std::span<const uint8_t, 32> seed) const = 0;
  virtual Bytes sign(ByteView message, ByteView private_key) const = 0;
  virtual bool verify(ByteView message, ByteView signature, ByteView public_key) const = 0;
};

/// Ed25519 via libsodium.
class Ed25519Provider final : public SignatureProvider {
 public:
  Ed25519Provider() { detail::ensure_sodium(); }

  std::string_view name() const override { return "ed25519"; }

  KeyPair generate(SignerId id, std::span<const uint8_t, 32> seed) const override {
    KeyPair kp{std::move(id), Bytes(crypto_sign_PUBLICKEYBYTES), Bytes(crypto_sign_SECRETKEYBYTES)};
    crypto_sign_seed_keypair(kp.public_key.data(), kp.private_key.data(), seed.data());
    return kp;
  }

  Bytes sign(ByteView message, ByteView private_key) const override {
    if (private_key.size() != crypto_sign_SECRETKEYBYTES) {
      throw std::invalid_argument("ed25519: malformed private key");
    }
    Bytes sig(crypto_sign_BYTES);
    crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), private_key.data());
    return sig;
  }

  bool verify(ByteView message, ByteView signature, ByteView public_key) const override {
    if (signature.size() != crypto_sign_BYTES || public_key.size() != crypto_sign_PUBLICKEYBYTES) {
      return false;
    }
    return crypto_sign_verify_detached(signature.data(), message.data(), message.size(),
                                       public_key.data()) == 0;
  }
};

/// Fast deterministic scheme for simulation sweeps: HMAC-SHA-512 keyed by the seed.
/// The verification key equals the signing key, so it offers no security against anyone
/// holding the registry. Key and signature sizes match Ed25519 so that wire sizes, and
/// therefore simulated timings, are identical under either provider.
class DeterministicTestProvider final : public SignatureProvider {
 public:
  DeterministicTestProvider() { detail::ensure_sodium(); }

  std::string_view name() const override { return "test-hmac"; }

  KeyPair generate(SignerId id, std::span<const uint8_t, 32> seed) const override {
    Bytes key(seed.begin(), seed.end());
    return KeyPair{std::move(id), key, key};
  }

  Bytes sign(ByteView message, ByteView private_key) const override {
    Bytes sig(crypto_auth_hmacsha512_BYTES);
    crypto_auth_hmacsha512_state st;
    crypto_auth_hmacsha512_init(&st, private_key.data(), private_key.size());
    crypto_auth_hmacsha512_update(&st, message.data(), message.size());
    crypto_auth_hmacsha512_final(&st, sig.data());
    return sig;
  }

  bool verify(ByteView message, ByteView signature, ByteView public_key) const override {
    if (signature.size() != crypto_auth_hmacsha512_BYTES) return false;
    Bytes expected = sign(message, public_key);
    return sodium_memcmp(expected.data(), signature.data(), expected.size()) == 0;
  }
};

/// Revoked signers plus a monotone change counter.
struct RevocationList {
  std::set<SignerId> revoked;
  uint64_t version = 0;

  bool contains(const SignerId& id) const { return revoked.count(id) != 0; }
};

/// Adds `signer` to the list. Revoking twice is idempotent on the set but still bumps the version.
inline RevocationList revoke(RevocationList crl, const SignerId& signer) {
  crl.revoked.insert(signer);
  ++crl.version;
  return crl;
}

/// Public keys of every provisioned signer. Role keys of the director carry a certificate
/// issued by its root key; revoking the issuer invalidates every key it certified.
class KeyRegistry {
 public:
  explicit KeyRegistry(std::shared_ptr<const SignatureProvider> provider)
      : provider_(std::move(provider)) {}

  const SignatureProvider& provider() const { return *provider_; }
  std::shared_ptr<const SignatureProvider> provider_ptr() const { return provider_; }

  void add(const KeyPair& kp) {
    auto [it, inserted] = entries_.emplace(kp.id, Entry{kp.public_key, std::nullopt, {}});
    if (!inserted) {
      throw std::invalid_argument("duplicate signer id: " + kp.id.value);
    }
  }

  void add_certified(const KeyPair& kp, const KeyPair& issuer) {
    add(kp);
    auto& e = entries_.at(kp.id);
    e.issuer = issuer.id;
    e.certificate = provider_->sign(certificate_message(kp.id, kp.public_key), issuer.private_key);
  }

  bool contains(const SignerId& id) const { return entries_.count(id) != 0; }

  const Bytes* public_key(const SignerId& id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second.public_key;
  }

  /// True iff `id` is registered, not revoked, and its certificate (if any) checks out.
  bool trusted(const SignerId& id, const RevocationList& crl) const {
    auto it = entries_.find(id);
    if (it == entries_.end() || crl.contains(id)) return false;
    const Entry& e = it->second;
    if (!e.issuer) return true;
    auto issuer = entries_.find(*e.issuer);
    if (issuer == entries_.end() || crl.contains(*e.issuer) || issuer->second.issuer) return false;
    return provider_->verify(certificate_message(id, e.public_key), e.certificate,
                             issuer->second.public_key);
  }

  std::vector<SignerId> signers() const {
    std::vector<SignerId> out;
    for (const auto& [id, _] : entries_) out.push_back(id);
    return out;
  }

 private:
  struct Entry {
    Bytes public_key;
    std::optional<SignerId> issuer;
    Bytes certificate;
  };

  static Bytes certificate_message(const SignerId& id, const Bytes& pk) {
    Hasher h;
    h.update("scalota/cert").update(id.value).update(pk);
    Digest d = h.finish();
    return Bytes(d.bytes.begin(), d.bytes.end());
  }

  std::shared_ptr<const SignatureProvider> provider_;
  std::map<SignerId, Entry> entries_;
};

/// Deterministic key source: every key is derived from (seed, signer id).
class KeyFactory {
 public:
  KeyFactory(std::shared_ptr<const SignatureProvider> provider, uint64_t seed)
      : provider_(std::move(provider)), seed_(seed) {}

  KeyPair make(const std::string& id) const {
    Hasher h;
    uint8_t seed_bytes[8];
    for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<uint8_t>(seed_ >> (56 - 8 * i));
    h.update("scalota/key").update(ByteView{seed_bytes, 8}).update(id);
    Digest d = h.finish();
    return provider_->generate(SignerId{id}, std::span<const uint8_t, 32>(d.bytes.data(), 32));
  }

 private:
  std::shared_ptr<const SignatureProvider> provider_;
  uint64_t seed_;
};

inline Digest endorsement_digest(const Digest& payload, const SignerId& subject) {
  return Hasher{}.update("scalota/endorse").update(payload).update(subject.value).finish();
}

inline SignatureEntry sign(const Digest& payload_digest, const KeyPair& key,
                           const SignatureProvider& provider) {
  if (key.private_key.empty()) {
    throw std::invalid_argument("sign: key has no private part: " + key.id.value);
  }
  return SignatureEntry{key.id, provider.sign(payload_digest.view(), key.private_key), std::nullopt};
}

/// Endorsement of `subject` by `endorser` over the payload digest.
inline SignatureEntry endorse(const Digest& payload_digest, const SignerId& subject,
                              const KeyPair& endorser, const SignatureProvider& provider) {
  Digest d = endorsement_digest(payload_digest, subject);
  return SignatureEntry{subject, provider.sign(d.view(), endorser.private_key), endorser.id};
}

/// True iff the entry's signature verifies under the registry's key for its signer (or its
/// endorser) and no key involved is revoked. Unknown signers yield false.
inline bool verify(const Digest& payload_digest, const SignatureEntry& entry,
                   const KeyRegistry& registry, const RevocationList& crl) {
  if (!registry.trusted(entry.signer, crl)) return false;
  if (entry.endorser) {
    if (!registry.trusted(*entry.endorser, crl)) return false;
    const Bytes* pk = registry.public_key(*entry.endorser);
    Digest d = endorsement_digest(payload_digest, entry.signer);
    return registry.provider().verify(d.view(), entry.signature, *pk);
  }
  const Bytes* pk = registry.public_key(entry.signer);
  return registry.provider().verify(payload_digest.view(), entry.signature, *pk);
}

inline std::string to_hex(ByteView data) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (uint8_t b : data) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0x0f]);
  }
  return out;
}

}  // namespace scalota
