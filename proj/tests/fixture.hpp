#pragma once

// Keys, registry and a director wired the way World wires them, without the network.

#include <memory>
#include <string>
#include <vector>

#include "scalota/director.hpp"
#include "scalota/image_repo.hpp"
#include "scalota/producer.hpp"

namespace scalota::testing {

struct Pki {
  std::shared_ptr<const SignatureProvider> provider = std::make_shared<DeterministicTestProvider>();
  KeyFactory factory{provider, 99};
  std::shared_ptr<KeyRegistry> registry = std::make_shared<KeyRegistry>(provider);
  std::shared_ptr<RevocationList> crl = std::make_shared<RevocationList>();
  DirectorKeys keys;
  TrustAnchors anchors;
  std::map<std::string, KeyPair> producers;

  Pki() {
    keys.root = factory.make("sud/root");
    keys.targets = factory.make("sud/targets");
    keys.snapshot = factory.make("sud/snapshot");
    keys.timestamp = factory.make("sud/timestamp");
    keys.publish = factory.make("sud/publish");
    registry->add(keys.root);
    for (const KeyPair* k : {&keys.targets, &keys.snapshot, &keys.timestamp, &keys.publish}) {
      registry->add_certified(*k, keys.root);
    }
  }

  KeyPair& producer(const std::string& name) {
    auto it = producers.find(name);
    if (it != producers.end()) return it->second;
    KeyPair k = factory.make("producer/" + name);
    registry->add(k);
    return producers.emplace(name, k).first->second;
  }

  KeyPair add_key(const std::string& id) {
    KeyPair k = factory.make(id);
    registry->add(k);
    return k;
  }

  /// Producer-signed manifest and image; registers `s` with `prod` in the anchors.
  std::pair<UpdateManifest, UpdateImage> release(const std::string& prod, const std::string& s, const std::string& e,
                                                 uint64_t v, std::vector<SoftwareId> deps = {},
                                                 std::size_t size = 4096) {
    KeyPair& k = producer(prod);
    anchors.producers[SoftwareId{s}] = k.id;
    BlobPtr blob = synthetic_image(s + "@" + std::to_string(v), 5, size);
    UpdateManifest mu;
    mu.l = Location{"main", s + "/v" + std::to_string(v)};
    mu.theta = MetaRecord{blob->digest(), EcuId{e}, SoftwareId{s}, std::move(deps)};
    mu.tau = TimestampRecord{1000 * v, v};
    mu.sigma.push_back(sign(payload_digest(mu), k, *provider));
    return {mu, UpdateImage{SoftwareId{s}, blob}};
  }

  std::unique_ptr<Director> director(uint64_t seed = 1) {
    return std::make_unique<Director>(keys, registry, crl, anchors, seed);
  }
};

}  // namespace scalota::testing
