#pragma once

#include <map>
#include <set>

#include "scalota/manifest.hpp"

namespace scalota {

/// Signer ids every verifier is provisioned with at initialization.
struct TrustAnchors {
  SignerId targets{"sud/targets"};
  SignerId snapshot{"sud/snapshot"};
  SignerId timestamp{"sud/timestamp"};
  SignerId root{"sud/root"};
  SignerId publish{"sud/publish"};
  std::map<SoftwareId, SignerId> producers;

  const SignerId* producer_of(const SoftwareId& s) const {
    auto it = producers.find(s);
    return it == producers.end() ? nullptr : &it->second;
  }
};

/// μ carries verifying signatures from its authorized producer and the director's
/// targets, timestamp and root roles.
inline bool manifest_certified(const UpdateManifest& mu, const TrustAnchors& anchors,
                               const KeyRegistry& registry, const RevocationList& crl) {
  const SignerId* prod = anchors.producer_of(mu.theta.s);
  if (prod == nullptr) return false;
  return assert_auth(mu.sigma, {*prod, anchors.targets, anchors.timestamp, anchors.root},
                     payload_digest(mu), registry, crl);
}

/// The publish role signed the bundle and endorsed `subscriber` as its recipient.
inline bool bundle_published_to(const Bundle& b, const SignerId& subscriber, const TrustAnchors& anchors,
                                const KeyRegistry& registry, const RevocationList& crl) {
  return assert_auth(b.sigma, {anchors.publish, subscriber}, payload_digest(b), registry, crl,
                     {anchors.publish});
}

/// Full bundle check: snapshot certification, publication to `subscriber`, and every
/// enclosed manifest certified.
inline bool bundle_certified(const Bundle& b, const SignerId& subscriber, const TrustAnchors& anchors,
                             const KeyRegistry& registry, const RevocationList& crl) {
  Digest d = payload_digest(b);
  if (!assert_auth(b.sigma, {anchors.snapshot}, d, registry, crl)) return false;
  if (!bundle_published_to(b, subscriber, anchors, registry, crl)) return false;
  return std::all_of(b.D.begin(), b.D.end(), [&](const UpdateManifest& mu) {
    return manifest_certified(mu, anchors, registry, crl);
  });
}

/// The director vouched that this bundle is destined to the given ECU signer.
inline bool bundle_endorses_ecu(const Bundle& b, const SignerId& ecu_signer, const TrustAnchors& anchors,
                                const KeyRegistry& registry, const RevocationList& crl) {
  return assert_auth(b.sigma, {ecu_signer}, payload_digest(b), registry, crl, {anchors.targets});
}

/// Content identity of a bundle independent of its τ and σ: the sorted (s, v, h) triples.
inline std::string bundle_content_key(const Bundle& b) {
  std::vector<std::string> parts;
  for (const auto& mu : b.D) {
    parts.push_back(mu.theta.s.value + "@" + std::to_string(mu.tau.v) + "#" + mu.theta.h.hex().substr(0, 16));
  }
  std::sort(parts.begin(), parts.end());
  std::string key;
  for (const auto& p : parts) key += p + ";";
  return key;
}

}  // namespace scalota
