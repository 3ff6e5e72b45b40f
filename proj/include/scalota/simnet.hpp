#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace scalota::simnet {

/// Simulated time in milliseconds.
using SimTime = double;

inline constexpr SimTime kForever = std::numeric_limits<SimTime>::infinity();

enum class LinkClass : uint8_t { Cellular, EngineCable, StationWire, InVehicle };

inline const char* link_class_name(LinkClass c) {
  switch (c) {
    case LinkClass::Cellular: return "cellular";
    case LinkClass::EngineCable: return "engine_cable";
    case LinkClass::StationWire: return "station_wire";
    case LinkClass::InVehicle: return "in_vehicle";
  }
  return "unknown";
}

struct LinkProfile {
  double bandwidth_bps = 1e6;
  double latency_ms = 0;
  LinkClass cls = LinkClass::Cellular;

  void validate() const {
    if (!(bandwidth_bps > 0)) throw std::invalid_argument("link bandwidth must be > 0");
    if (!(latency_ms >= 0)) throw std::invalid_argument("link latency must be >= 0");
  }

  /// Transfer time of `bytes` at the full link rate, excluding latency.
  SimTime serialization_ms(uint64_t bytes) const {
    return static_cast<double>(bytes) * 8.0 / bandwidth_bps * 1000.0;
  }
};

// Profiles measured in the evaluation setup.
inline LinkProfile cellular_profile() { return {5e6, 30, LinkClass::Cellular}; }
inline LinkProfile engine_cable_profile() { return {10e6, 10, LinkClass::EngineCable}; }
inline LinkProfile station_wire_profile() { return {100e6, 2, LinkClass::StationWire}; }
inline LinkProfile in_vehicle_profile() { return {100e6, 1, LinkClass::InVehicle}; }

using TimerId = uint64_t;

struct RunResult {
  SimTime clock = 0;
  bool timed_out = false;
  uint64_t events = 0;
};

/// Single-threaded event loop ordered by (time, sequence).
class Simulator {
 public:
  using Callback = std::function<void()>;

  SimTime now() const { return now_; }

  TimerId schedule_at(SimTime when, Callback cb) {
    if (when < now_) when = now_;
    TimerId id = next_id_++;
    queue_.push(Item{when, id});
    live_.emplace(id, std::move(cb));
    return id;
  }

  TimerId schedule_in(SimTime delay, Callback cb) { return schedule_at(now_ + delay, std::move(cb)); }

  void cancel(TimerId id) { live_.erase(id); }

  bool pending(TimerId id) const { return live_.count(id) != 0; }

  bool idle() const { return live_.empty(); }

  /// Processes events up to and including `horizon`. Stops early when nothing is left.
  RunResult run(SimTime horizon = kForever) {
    RunResult result;
    while (!queue_.empty()) {
      Item top = queue_.top();
      auto it = live_.find(top.id);
      if (it == live_.end()) {
        queue_.pop();
        continue;
      }
      if (top.time > horizon) {
        now_ = horizon;
        result.timed_out = true;
        break;
      }
      queue_.pop();
      now_ = top.time;
      Callback cb = std::move(it->second);
      live_.erase(it);
      cb();
      ++result.events;
    }
    result.clock = now_;
    return result;
  }

 private:
  struct Item {
    SimTime time;
    TimerId id;
    bool operator>(const Item& o) const { return time != o.time ? time > o.time : id > o.id; }
  };

  SimTime now_ = 0;
  TimerId next_id_ = 1;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> queue_;
  std::unordered_map<TimerId, Callback> live_;
};

using LinkId = std::size_t;

enum class Outcome : uint8_t { Delivered, Dropped };

struct TraceRecord {
  SimTime time = 0;  // delivery time, or interception time for drops
  SimTime sent = 0;
  std::string src;
  std::string dst;
  uint64_t size = 0;
  LinkClass cls = LinkClass::Cellular;
  std::string link;
  std::string kind;
  Outcome outcome = Outcome::Delivered;
};

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace) {
  os << "time_ms,sent_ms,src,dst,size,link_class,link,kind,outcome\n";
  for (const auto& r : trace) {
    std::ostringstream line;
    line.precision(17);
    line << r.time << ',' << r.sent << ',' << r.src << ',' << r.dst << ',' << r.size << ','
         << link_class_name(r.cls) << ',' << r.link << ',' << r.kind << ','
         << (r.outcome == Outcome::Delivered ? "delivered" : "dropped") << '\n';
    os << line.str();
  }
}

struct LinkCounters {
  uint64_t offered = 0;
  uint64_t delivered = 0;
  uint64_t dropped = 0;
  uint64_t messages = 0;
};

/// Message-level network over shared links. Every message is a flow that holds an equal
/// share of its link's bandwidth while transmitting; shares are recomputed whenever a flow
/// starts or finishes. Delivery happens one link latency after the last bit leaves.
template <class Payload>
class Network {
 public:
  struct Envelope {
    uint64_t id = 0;
    std::string src;
    std::string dst;
    LinkId link = 0;
    uint64_t size = 0;
    std::string kind;
    Payload payload;
    SimTime sent_at = 0;
  };

  /// What an interceptor wants to put on the wire in place of the original message.
  struct Emission {
    Envelope envelope;
    SimTime extra_delay = 0;
  };

  using Receiver = std::function<void(const Envelope&)>;
  using Interceptor = std::function<std::vector<Emission>(const Envelope&)>;

  explicit Network(Simulator& sim) : sim_(sim) {}

  LinkId add_link(std::string name, LinkProfile profile) {
    profile.validate();
    Link l;
    l.name = std::move(name);
    l.profile = profile;
    links_.push_back(std::move(l));
    return links_.size() - 1;
  }

  const LinkProfile& profile(LinkId id) const { return links_.at(id).profile; }
  const std::string& link_name(LinkId id) const { return links_.at(id).name; }
  std::size_t link_count() const { return links_.size(); }
  const LinkCounters& counters(LinkId id) const { return links_.at(id).counters; }

  void set_receiver(Receiver r) { receiver_ = std::move(r); }
  void set_interceptor(Interceptor i) { interceptor_ = std::move(i); }

  /// Starts transmitting. `on_transmitted` fires when the sender's last bit leaves (or at once
  /// if the message was suppressed), which lets senders pipeline consecutive chunks.
  uint64_t send(std::string src, std::string dst, LinkId link, uint64_t size, std::string kind,
                Payload payload, std::function<void()> on_transmitted = {}) {
    Envelope env{next_msg_++, std::move(src), std::move(dst), link, size, std::move(kind),
                 std::move(payload), sim_.now()};
    std::vector<Emission> emissions;
    if (interceptor_) {
      emissions = interceptor_(env);
    } else {
      emissions.push_back(Emission{env, 0});
    }
    if (emissions.empty()) {
      Link& l = links_.at(link);
      l.counters.offered += env.size;
      l.counters.dropped += env.size;
      trace_.push_back(TraceRecord{sim_.now(), env.sent_at, env.src, env.dst, env.size, l.profile.cls,
                                   l.name, env.kind, Outcome::Dropped});
      if (on_transmitted) sim_.schedule_in(0, std::move(on_transmitted));
      return env.id;
    }
    for (std::size_t i = 0; i < emissions.size(); ++i) {
      start_flow(std::move(emissions[i].envelope), emissions[i].extra_delay,
                 i == 0 ? std::move(on_transmitted) : std::function<void()>{});
    }
    return env.id;
  }

  /// Injects a message that did not originate from a protocol actor.
  void inject(Envelope env, SimTime extra_delay = 0) {
    env.id = next_msg_++;
    env.sent_at = sim_.now();
    start_flow(std::move(env), extra_delay, {});
  }

  const std::vector<TraceRecord>& trace() const { return trace_; }

  /// Instantaneous per-flow rates on a link, in bits per second.
  std::vector<double> current_rates(LinkId id) const {
    const Link& l = links_.at(id);
    std::vector<double> rates;
    for (std::size_t i = 0; i < l.flows.size(); ++i) {
      rates.push_back(l.profile.bandwidth_bps / static_cast<double>(l.flows.size()));
    }
    return rates;
  }

  std::size_t active_flows(LinkId id) const { return links_.at(id).flows.size(); }

 private:
  struct Flow {
    Envelope env;
    double remaining_bits = 0;
    SimTime extra_delay = 0;
    std::function<void()> on_transmitted;
  };

  struct Link {
    std::string name;
    LinkProfile profile;
    std::vector<Flow> flows;
    SimTime last_update = 0;
    TimerId completion = 0;
    LinkCounters counters;
  };

  void start_flow(Envelope env, SimTime extra_delay, std::function<void()> on_tx) {
    Link& l = links_.at(env.link);
    advance(l);
    l.counters.offered += env.size;
    ++l.counters.messages;
    double bits = static_cast<double>(env.size) * 8.0;
    LinkId id = env.link;
    l.flows.push_back(Flow{std::move(env), bits, extra_delay, std::move(on_tx)});
    reschedule(id);
  }

  void advance(Link& l) {
    SimTime now = sim_.now();
    if (!l.flows.empty() && now > l.last_update) {
      double rate_per_ms = l.profile.bandwidth_bps / 1000.0 / static_cast<double>(l.flows.size());
      double sent = rate_per_ms * (now - l.last_update);
      for (auto& f : l.flows) f.remaining_bits = std::max(0.0, f.remaining_bits - sent);
    }
    l.last_update = now;
  }

  void reschedule(LinkId id) {
    Link& l = links_.at(id);
    if (l.completion != 0) sim_.cancel(l.completion);
    l.completion = 0;
    if (l.flows.empty()) return;
    double min_bits = l.flows.front().remaining_bits;
    for (const auto& f : l.flows) min_bits = std::min(min_bits, f.remaining_bits);
    double rate_per_ms = l.profile.bandwidth_bps / 1000.0 / static_cast<double>(l.flows.size());
    l.completion = sim_.schedule_in(min_bits / rate_per_ms, [this, id] { on_completion(id); });
  }

  void on_completion(LinkId id) {
    Link& l = links_.at(id);
    l.completion = 0;
    advance(l);
    // This event was scheduled for the flow with the least remaining work, so that flow is done
    // whatever rounding left over; any flow within rounding of it finishes too.
    constexpr double kEpsilonBits = 1e-6;
    double least = l.flows.front().remaining_bits;
    for (const auto& f : l.flows) least = std::min(least, f.remaining_bits);
    std::vector<Flow> done;
    std::vector<Flow> keep;
    for (auto& f : l.flows) {
      (f.remaining_bits <= least + kEpsilonBits ? done : keep).push_back(std::move(f));
    }
    l.flows = std::move(keep);
    for (auto& f : done) {
      SimTime arrive = sim_.now() + l.profile.latency_ms + f.extra_delay;
      auto env = std::make_shared<Envelope>(std::move(f.env));
      sim_.schedule_at(arrive, [this, env] { deliver(*env); });
      if (f.on_transmitted) f.on_transmitted();
    }
    reschedule(id);
  }

  void deliver(const Envelope& env) {
    Link& l = links_.at(env.link);
    l.counters.delivered += env.size;
    trace_.push_back(TraceRecord{sim_.now(), env.sent_at, env.src, env.dst, env.size, l.profile.cls,
                                 l.name, env.kind, Outcome::Delivered});
    if (receiver_) receiver_(env);
  }

  Simulator& sim_;
  std::vector<Link> links_;
  Receiver receiver_;
  Interceptor interceptor_;
  std::vector<TraceRecord> trace_;
  uint64_t next_msg_ = 1;
};

}  // namespace scalota::simnet
