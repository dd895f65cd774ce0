#pragma once

// Minimal-communication swarm layer.
//
// Each agent announces its constraint envelope once, then monitors it
// locally. Messages are sent only on transitions: an announce at start-up
// or on envelope change, a violation when the envelope is first breached
// (re-sent every keepalive_s while still breached), and a resume on
// re-entry. Other agents skip estimation for any agent they believe invalid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "uwbrel/error.hpp"
#include "uwbrel/estimator.hpp"
#include "uwbrel/geometry.hpp"
#include "uwbrel/sensing.hpp"
#include "uwbrel/smoothing.hpp"

namespace uwbrel {

inline constexpr int kProtoVersion = 1;

/// Commanded altitude / roll / pitch and their absolute tolerances.
struct ConstraintEnvelope {
  double z_cmd = 0.0;      // m
  double roll_cmd = 0.0;   // deg
  double pitch_cmd = 0.0;  // deg
  double z_tol = 0.0;      // m
  double roll_tol = 0.0;   // deg
  double pitch_tol = 0.0;  // deg

  bool operator==(const ConstraintEnvelope&) const = default;

  void validate() const {
    if (!(z_tol >= 0.0 && roll_tol >= 0.0 && pitch_tol >= 0.0)) {
      throw ValidationError("envelope tolerances must be >= 0");
    }
  }
};

/// Locally measured altitude / roll / pitch.
struct EnvelopeMeasurement {
  double z_meas = 0.0;
  double roll_meas = 0.0;
  double pitch_meas = 0.0;
  double time = 0.0;

  bool operator==(const EnvelopeMeasurement&) const = default;
};

/// |cmd - meas| <= tol element-wise (inclusive).
inline bool check_envelope(const ConstraintEnvelope& env, const EnvelopeMeasurement& meas) {
  return std::abs(env.z_cmd - meas.z_meas) <= env.z_tol && std::abs(env.roll_cmd - meas.roll_meas) <= env.roll_tol &&
         std::abs(env.pitch_cmd - meas.pitch_meas) <= env.pitch_tol;
}

struct AgentInfo {
  std::string agent;
  ConstraintEnvelope envelope;
  AntennaArray array;
  bool valid = true;
  std::int64_t info_version = 1;
};

enum class MessageKind { announce_info, violation, resume };

inline const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::announce_info:
      return "announce_info";
    case MessageKind::violation:
      return "violation";
    case MessageKind::resume:
      return "resume";
  }
  return "?";
}

inline MessageKind message_kind_from_string(const std::string& s) {
  if (s == "announce_info") return MessageKind::announce_info;
  if (s == "violation") return MessageKind::violation;
  if (s == "resume") return MessageKind::resume;
  throw SchemaError("unknown message kind '" + s + "'");
}

struct SwarmMessage {
  MessageKind kind = MessageKind::announce_info;
  std::string sender;
  std::optional<AgentInfo> payload;  // announce / resume only
  std::int64_t seq = 0;
  double time = 0.0;
};

/// Antenna arrays compare by mount tuple within 1e-9 (deg / m), since
/// Euler extraction is not bit-exact through a matrix round trip.
inline bool same_array(const AntennaArray& a, const AntennaArray& b, double tol = 1e-9) {
  if (a.count() != b.count()) return false;
  for (std::size_t k = 0; k < a.count(); ++k) {
    const auto ta = a.mounts[k].to_tuple(), tb = b.mounts[k].to_tuple();
    const double d = std::max({std::abs(ta.x - tb.x), std::abs(ta.y - tb.y), std::abs(ta.z - tb.z),
                               std::abs(wrap_deg(ta.roll - tb.roll)), std::abs(ta.pitch - tb.pitch),
                               std::abs(wrap_deg(ta.yaw - tb.yaw))});
    if (d > tol) return false;
  }
  return true;
}

inline bool operator==(const AgentInfo& a, const AgentInfo& b) {
  return a.agent == b.agent && a.envelope == b.envelope && a.valid == b.valid && a.info_version == b.info_version &&
         same_array(a.array, b.array);
}

inline bool operator==(const SwarmMessage& a, const SwarmMessage& b) {
  return a.kind == b.kind && a.sender == b.sender && a.payload == b.payload && a.seq == b.seq && a.time == b.time;
}

// ---- wire format: 4-byte big-endian length + canonical (sorted-key,
// compact) UTF-8 JSON.

inline nlohmann::json envelope_to_json(const ConstraintEnvelope& e) {
  return {{"z_cmd_m", e.z_cmd},       {"roll_cmd_deg", e.roll_cmd}, {"pitch_cmd_deg", e.pitch_cmd},
          {"z_tol_m", e.z_tol},       {"roll_tol_deg", e.roll_tol}, {"pitch_tol_deg", e.pitch_tol}};
}

inline ConstraintEnvelope envelope_from_json(const nlohmann::json& j) {
  ConstraintEnvelope e;
  e.z_cmd = j.at("z_cmd_m").get<double>();
  e.roll_cmd = j.at("roll_cmd_deg").get<double>();
  e.pitch_cmd = j.at("pitch_cmd_deg").get<double>();
  e.z_tol = j.at("z_tol_m").get<double>();
  e.roll_tol = j.at("roll_tol_deg").get<double>();
  e.pitch_tol = j.at("pitch_tol_deg").get<double>();
  e.validate();
  return e;
}

inline nlohmann::json agent_info_to_json(const AgentInfo& a) {
  return {{"agent", a.agent},
          {"envelope", envelope_to_json(a.envelope)},
          {"array", array_to_json(a.array)},
          {"valid", a.valid},
          {"info_version", a.info_version}};
}

inline AgentInfo agent_info_from_json(const nlohmann::json& j) {
  AgentInfo a;
  a.agent = j.at("agent").get<std::string>();
  a.envelope = envelope_from_json(j.at("envelope"));
  a.array = array_from_json(j.at("array"));
  a.valid = j.at("valid").get<bool>();
  a.info_version = j.at("info_version").get<std::int64_t>();
  return a;
}

inline std::vector<std::uint8_t> encode_message(const SwarmMessage& msg) {
  if ((msg.kind == MessageKind::violation) == msg.payload.has_value()) {
    throw ValidationError("encode_message: violation carries no payload; announce/resume require one");
  }
  nlohmann::json j{{"proto_version", kProtoVersion},
                   {"kind", to_string(msg.kind)},
                   {"sender", msg.sender},
                   {"seq", msg.seq},
                   {"time", msg.time},
                   {"payload", msg.payload ? agent_info_to_json(*msg.payload) : nlohmann::json(nullptr)}};
  const std::string body = j.dump();
  const auto n = static_cast<std::uint32_t>(body.size());
  std::vector<std::uint8_t> out;
  out.reserve(4 + body.size());
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>((n >> shift) & 0xffu));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

/// Decodes one frame starting at offset; advances offset past it.
inline SwarmMessage decode_frame(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (bytes.size() - offset < 4) throw DecodeError("truncated length prefix", bytes.size());
  std::uint32_t n = 0;
  for (int k = 0; k < 4; ++k) n = (n << 8) | bytes[offset + static_cast<std::size_t>(k)];
  const std::size_t body_start = offset + 4;
  if (bytes.size() - body_start < n) {
    throw DecodeError("truncated body: need " + std::to_string(n) + " bytes, have " +
                          std::to_string(bytes.size() - body_start),
                      bytes.size());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(body_start),
                              bytes.begin() + static_cast<std::ptrdiff_t>(body_start + n));
  } catch (const nlohmann::json::parse_error& e) {
    throw DecodeError(std::string("malformed JSON: ") + e.what(), body_start + (e.byte > 0 ? e.byte - 1 : 0));
  }
  SwarmMessage msg;
  try {
    if (j.at("proto_version").get<int>() != kProtoVersion) {
      throw DecodeError("unsupported proto_version " + j.at("proto_version").dump(), body_start);
    }
    msg.kind = message_kind_from_string(j.at("kind").get<std::string>());
    msg.sender = j.at("sender").get<std::string>();
    msg.seq = j.at("seq").get<std::int64_t>();
    msg.time = j.at("time").get<double>();
    const auto& p = j.at("payload");
    if (!p.is_null()) msg.payload = agent_info_from_json(p);
  } catch (const DecodeError&) {
    throw;
  } catch (const std::exception& e) {
    throw DecodeError(std::string("invalid message fields: ") + e.what(), body_start);
  }
  if ((msg.kind == MessageKind::violation) == msg.payload.has_value()) {
    throw DecodeError("payload does not match message kind", body_start);
  }
  offset = body_start + n;
  return msg;
}

inline SwarmMessage decode_message(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  SwarmMessage msg = decode_frame(bytes, offset);
  if (offset != bytes.size()) throw DecodeError("trailing bytes after frame", offset);
  return msg;
}

// ---- per-agent local procedure

/// Solver settings shared by protocol replay and evaluation.
struct SolverConfig {
  LossConfig loss = LossConfig::huber(0.06);
  AblationFlags ablation;
  std::optional<BiasModel> bias;
  SolverOptions solver;
  double range_window_s = 1.0;
  double pose_window_s = 4.0;
  /// Nominal ranging period; pairs older than twice this are stale.
  double nominal_period_s = 1.0 / 25.0;
};

inline nlohmann::json solver_config_to_json(const SolverConfig& c) {
  nlohmann::json j{
      {"loss", {{"kind", c.ablation.huber ? "huber" : "squared"}, {"delta_m", c.loss.delta}}},
      {"ablation", {{"el_bias", c.ablation.el_bias}, {"z_fixed", c.ablation.z_fixed}, {"huber", c.ablation.huber}}},
      {"range_window_s", c.range_window_s},
      {"pose_window_s", c.pose_window_s},
      {"nominal_period_s", c.nominal_period_s},
      {"max_iters", c.solver.max_iters},
      {"step_tol", c.solver.step_tol},
      {"rel_decrease_tol", c.solver.rel_decrease_tol},
      {"yaw_starts", c.solver.yaw_starts},
      {"huber_convention", "a^2/2 inside delta, delta(|a| - delta/2) outside"}};
  if (c.bias) j["bias"] = bias_to_json(*c.bias);
  return j;
}

inline SolverConfig solver_config_from_json(const nlohmann::json& j) {
  SolverConfig c;
  if (!j.is_object()) throw ValidationError("solver config must be a JSON object");
  std::optional<bool> huber_from_kind;
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    if (l.contains("kind")) {
      const auto kind = l.at("kind").get<std::string>();
      if (kind != "huber" && kind != "squared") throw ValidationError("loss.kind must be huber or squared");
      huber_from_kind = kind == "huber";
    }
    if (l.contains("delta_m")) c.loss.delta = l.at("delta_m").get<double>();
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    c.ablation.el_bias = a.value("el_bias", c.ablation.el_bias);
    c.ablation.z_fixed = a.value("z_fixed", c.ablation.z_fixed);
    if (a.contains("huber")) {
      c.ablation.huber = a.at("huber").get<bool>();
      if (huber_from_kind && *huber_from_kind != c.ablation.huber) {
        throw ValidationError("loss.kind and ablation.huber disagree");
      }
    } else if (huber_from_kind) {
      c.ablation.huber = *huber_from_kind;
    }
  } else if (huber_from_kind) {
    c.ablation.huber = *huber_from_kind;
  }
  c.range_window_s = j.value("range_window_s", c.range_window_s);
  c.pose_window_s = j.value("pose_window_s", c.pose_window_s);
  c.nominal_period_s = j.value("nominal_period_s", c.nominal_period_s);
  c.solver.max_iters = j.value("max_iters", c.solver.max_iters);
  c.solver.step_tol = j.value("step_tol", c.solver.step_tol);
  c.solver.rel_decrease_tol = j.value("rel_decrease_tol", c.solver.rel_decrease_tol);
  c.solver.yaw_starts = j.value("yaw_starts", c.solver.yaw_starts);
  if (j.contains("bias")) c.bias = bias_from_json(j.at("bias"));
  c.loss.kind = c.ablation.huber ? LossConfig::Kind::huber : LossConfig::Kind::squared;
  c.loss.validate();
  if (c.range_window_s < 0.0 || c.pose_window_s < 0.0) throw ValidationError("smoothing windows must be >= 0");
  if (c.solver.max_iters <= 0) throw ValidationError("max_iters must be > 0");
  if (!(c.nominal_period_s > 0.0)) throw ValidationError("nominal_period_s must be > 0");
  return c;
}

struct ProtocolConfig {
  double keepalive_s = 5.0;
  /// When false the agent only runs envelope monitoring and messaging.
  bool estimate = true;
  /// Minimum spacing of estimates per target; 0 estimates every step.
  double estimate_period_s = 0.0;
  SolverConfig solver;
  /// Replaces the commanded relative height for a target (evaluation only).
  std::function<std::optional<double>(const std::string& target, double now)> z_rel_override;
};

struct ProtocolDiagnostics {
  std::size_t unknown_agent_ranges = 0;
  std::size_t foreign_ranges = 0;
  std::size_t skipped_invalid = 0;
  std::size_t skipped_unobservable = 0;
  std::size_t stale_messages = 0;
};

/// Everything one agent knows; owned by a single execution context.
struct AgentState {
  AgentInfo self;
  ProtocolConfig config;

  bool announced = false;
  bool self_valid = true;
  std::int64_t next_seq = 1;
  double last_violation_sent = -std::numeric_limits<double>::infinity();
  std::optional<ConstraintEnvelope> pending_envelope;

  std::map<std::string, AgentInfo> known;
  std::map<std::string, std::int64_t> last_seq;

  struct PairBuffer {
    ScalarSmoother filter{1.0};
    double last_time = -std::numeric_limits<double>::infinity();
    double last_range = 0.0;
  };
  std::map<std::string, std::map<std::pair<int, int>, PairBuffer>> ranges;
  std::map<std::string, PoseEstimate> last_estimate;
  std::map<std::string, double> last_estimate_time;
  std::map<std::string, PoseSmoother> pose_filters;
  std::map<std::string, PoseTuple> last_smoothed;

  ProtocolDiagnostics diagnostics;
};

inline AgentState make_agent(std::string id, ConstraintEnvelope envelope, AntennaArray array,
                             ProtocolConfig config = {}) {
  envelope.validate();
  AgentState s;
  s.self.agent = std::move(id);
  s.self.envelope = envelope;
  s.self.array = std::move(array);
  s.self.valid = true;
  s.self.info_version = 1;
  s.config = std::move(config);
  return s;
}

/// Queues a commanded-envelope change; announced on the next step.
inline void change_envelope(AgentState& state, const ConstraintEnvelope& envelope) {
  envelope.validate();
  state.pending_envelope = envelope;
}

inline void apply_message(AgentState& state, const SwarmMessage& msg) {
  if (msg.sender == state.self.agent) return;
  auto seen = state.last_seq.find(msg.sender);
  if (seen != state.last_seq.end() && msg.seq <= seen->second) {
    ++state.diagnostics.stale_messages;
    return;
  }
  state.last_seq[msg.sender] = msg.seq;
  switch (msg.kind) {
    case MessageKind::announce_info:
    case MessageKind::resume: {
      AgentInfo info = *msg.payload;
      if (msg.kind == MessageKind::resume) info.valid = true;
      state.known[msg.sender] = std::move(info);
      break;
    }
    case MessageKind::violation: {
      auto it = state.known.find(msg.sender);
      if (it != state.known.end()) it->second.valid = false;
      state.last_estimate.erase(msg.sender);
      state.pose_filters.erase(msg.sender);
      state.last_smoothed.erase(msg.sender);
      break;
    }
  }
}

/// Applies a batch of messages in (sender, seq) order, so the result does
/// not depend on arrival order across senders.
inline void apply_inbox(AgentState& state, std::span<const SwarmMessage> inbox) {
  std::vector<const SwarmMessage*> sorted;
  sorted.reserve(inbox.size());
  for (const auto& m : inbox) sorted.push_back(&m);
  std::sort(sorted.begin(), sorted.end(), [](const SwarmMessage* a, const SwarmMessage* b) {
    return std::tie(a->sender, a->seq) < std::tie(b->sender, b->seq);
  });
  for (const auto* m : sorted) apply_message(state, *m);
}

/// Current measurement stack for target: smoothed over range_window_s, or
/// the most recent sample when the window is 0; stale pairs dropped.
inline std::vector<RangeMeasurement> current_ranges(AgentState& state, const std::string& target, double now) {
  std::vector<RangeMeasurement> out;
  auto it = state.ranges.find(target);
  if (it == state.ranges.end()) return out;
  const double max_age = 2.0 * state.config.solver.nominal_period_s;
  for (auto& [pair, buf] : it->second) {
    if (buf.last_time < now - max_age - 1e-9) continue;
    RangeMeasurement m;
    m.time = buf.last_time;
    m.measuring_agent = state.self.agent;
    m.target_agent = target;
    m.antenna_i = pair.first;
    m.antenna_j = pair.second;
    if (state.config.solver.range_window_s > 0.0) {
      auto v = buf.filter.value_at(buf.last_time);
      m.range = v ? *v : buf.last_range;
    } else {
      m.range = buf.last_range;
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// The estimation problem A would solve against target from its current state.
inline EstimationProblem build_problem(AgentState& state, const AgentInfo& target, double now) {
  EstimationProblem p;
  p.measurements = current_ranges(state, target.agent, now);
  p.array_A = state.self.array;
  p.array_B = target.array;
  p.z_rel = target.envelope.z_cmd - state.self.envelope.z_cmd;
  p.roll_rel = target.envelope.roll_cmd - state.self.envelope.roll_cmd;
  p.pitch_rel = target.envelope.pitch_cmd - state.self.envelope.pitch_cmd;
  if (state.config.z_rel_override) {
    if (auto z = state.config.z_rel_override(target.agent, now)) p.z_rel = *z;
  }
  p.bias = state.config.solver.bias;
  p.loss = state.config.solver.loss;
  p.ablation = state.config.solver.ablation;
  return p;
}

struct TargetEstimate {
  std::string target;
  PoseEstimate estimate;
  PoseTuple smoothed;  // over pose_window_s
};

struct StepOutput {
  std::vector<TargetEstimate> estimates;
  std::vector<SwarmMessage> outbox;
};

/// Ingests local range samples without estimating.
inline void ingest_ranges(AgentState& state, std::span<const RangeMeasurement> ranges) {
  for (const auto& r : ranges) {
    if (r.measuring_agent != state.self.agent) {
      ++state.diagnostics.foreign_ranges;
      continue;
    }
    if (!state.known.contains(r.target_agent)) {
      ++state.diagnostics.unknown_agent_ranges;
      continue;
    }
    auto& per_target = state.ranges[r.target_agent];
    auto key = std::make_pair(r.antenna_i, r.antenna_j);
    auto found = per_target.find(key);
    if (found == per_target.end()) {
      const double w = state.config.solver.range_window_s > 0.0 ? state.config.solver.range_window_s : 1.0;
      found = per_target.emplace(key, AgentState::PairBuffer{ScalarSmoother(w)}).first;
    }
    auto& buf = found->second;
    if (r.time < buf.last_time) throw OrderingError("ranges: time went backwards for a pair");
    buf.last_time = r.time;
    buf.last_range = r.range;
    if (state.config.solver.range_window_s > 0.0) buf.filter.push(r.time, r.range);
  }
}

/// One pass of the local procedure at time meas.time.
inline StepOutput step_agent(AgentState& state, const EnvelopeMeasurement& meas, std::span<const SwarmMessage> inbox,
                             std::span<const RangeMeasurement> ranges) {
  StepOutput out;
  const double now = meas.time;
  auto send = [&](MessageKind kind) {
    SwarmMessage m;
    m.kind = kind;
    m.sender = state.self.agent;
    m.seq = state.next_seq++;
    m.time = now;
    if (kind != MessageKind::violation) {
      AgentInfo info = state.self;
      info.valid = state.self_valid;
      m.payload = std::move(info);
    }
    out.outbox.push_back(std::move(m));
  };

  apply_inbox(state, inbox);

  bool envelope_changed = false;
  if (state.pending_envelope) {
    if (!(*state.pending_envelope == state.self.envelope)) {
      state.self.envelope = *state.pending_envelope;
      ++state.self.info_version;
      envelope_changed = true;
    }
    state.pending_envelope.reset();
  }

  const bool ok = check_envelope(state.self.envelope, meas);
  if (!state.announced || envelope_changed) {
    // The announce payload carries the current validity, so no separate
    // violation is needed when announcing from outside the envelope.
    state.announced = true;
    state.self_valid = ok;
    send(MessageKind::announce_info);
    if (!ok) state.last_violation_sent = now;
  } else if (state.self_valid && !ok) {
    state.self_valid = false;
    send(MessageKind::violation);
    state.last_violation_sent = now;
  } else if (!state.self_valid && ok) {
    state.self_valid = true;
    send(MessageKind::resume);
  } else if (!state.self_valid && !ok && now - state.last_violation_sent >= state.config.keepalive_s - 1e-9) {
    send(MessageKind::violation);
    state.last_violation_sent = now;
  }
  state.self.valid = state.self_valid;

  ingest_ranges(state, ranges);

  if (!state.config.estimate) return out;
  for (const auto& [id, info] : state.known) {
    if (id == state.self.agent) continue;
    if (!info.valid) {
      ++state.diagnostics.skipped_invalid;
      continue;
    }
    if (auto last = state.last_estimate_time.find(id);
        last != state.last_estimate_time.end() && now - last->second < state.config.estimate_period_s - 1e-9) {
      continue;
    }
    EstimationProblem problem = build_problem(state, info, now);
    std::optional<InitialGuess> init;
    if (auto prev = state.last_smoothed.find(id); prev != state.last_smoothed.end()) {
      init = InitialGuess{prev->second.x, prev->second.y, prev->second.yaw, prev->second.z};
    }
    try {
      PoseEstimate est = solve(problem, init, state.config.solver.solver);
      PoseTuple pt;
      pt.x = est.x;
      pt.y = est.y;
      pt.z = est.z;
      pt.roll = est.roll;
      pt.pitch = est.pitch;
      pt.yaw = est.yaw;
      // A zero window passes raw estimates through.
      auto filter = state.pose_filters.try_emplace(id, std::max(state.config.solver.pose_window_s, 1e-6)).first;
      const PoseTuple smoothed = filter->second.push(now, pt);
      state.last_smoothed[id] = smoothed;
      state.last_estimate[id] = est;
      state.last_estimate_time[id] = now;
      out.estimates.push_back({id, std::move(est), smoothed});
    } catch (const ObservabilityError&) {
      ++state.diagnostics.skipped_unobservable;
    }
  }
  return out;
}

}  // namespace uwbrel
