#pragma once

// Deterministic multi-agent scenario engine: trajectories, 25 Hz pairwise
// range synthesis through the sensing model, scripted envelope events, and a
// lossy message channel driving the protocol layer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uwbrel/csv.hpp"
#include "uwbrel/error.hpp"
#include "uwbrel/geometry.hpp"
#include "uwbrel/protocol.hpp"
#include "uwbrel/random.hpp"
#include "uwbrel/sensing.hpp"

namespace uwbrel {

inline constexpr double kMaxSpeed = 1.0;     // m/s
inline constexpr double kMaxYawRate = 1.0;   // rad/s

struct TrajectorySpec {
  enum class Kind { static_pose, line, circle, waypoint };
  enum class YawMode { fixed, rate, tangent };

  Kind kind = Kind::static_pose;
  Vec3 center = Vec3::Zero();  // static position / circle centre (z ignored for circle)
  Vec3 start = Vec3::Zero();   // line
  Vec3 end = Vec3::Zero();     // line
  std::vector<Vec3> waypoints;  // closed loop
  double radius = 1.0;          // m
  double speed = 0.0;           // m/s along the path
  double altitude = 0.0;        // m, circle height
  double phase = 0.0;           // deg, circle start angle
  bool clockwise = false;
  YawMode yaw_mode = YawMode::fixed;
  double yaw0 = 0.0;       // deg
  double yaw_rate = 0.0;   // deg/s
  double roll = 0.0;       // deg
  double pitch = 0.0;      // deg

  static TrajectorySpec stationary(const Vec3& p, double yaw = 0.0) {
    TrajectorySpec s;
    s.kind = Kind::static_pose;
    s.center = p;
    s.yaw0 = yaw;
    return s;
  }

  static TrajectorySpec straight(const Vec3& a, const Vec3& b, double speed) {
    TrajectorySpec s;
    s.kind = Kind::line;
    s.start = a;
    s.end = b;
    s.speed = speed;
    return s;
  }

  static TrajectorySpec orbit(const Vec3& c, double radius, double speed, double altitude) {
    TrajectorySpec s;
    s.kind = Kind::circle;
    s.center = c;
    s.radius = radius;
    s.speed = speed;
    s.altitude = altitude;
    return s;
  }

  void validate() const {
    if (!(speed >= 0.0) || speed > kMaxSpeed + 1e-12) {
      throw ValidationError("trajectory: speed must be in [0, " + std::to_string(kMaxSpeed) + "] m/s");
    }
    double ang_rate = 0.0;
    if (yaw_mode == YawMode::rate) ang_rate = std::abs(deg_to_rad(yaw_rate));
    if (kind == Kind::circle) {
      if (!(radius > 0.0)) throw ValidationError("trajectory: circle radius must be > 0");
      if (yaw_mode == YawMode::tangent) ang_rate = speed / radius;
    }
    if (ang_rate > kMaxYawRate + 1e-12) throw ValidationError("trajectory: angular speed exceeds 1 rad/s");
    if (kind == Kind::waypoint && waypoints.size() < 2) throw ValidationError("trajectory: need >= 2 waypoints");
    if (kind == Kind::waypoint && yaw_mode == YawMode::tangent) {
      throw ValidationError("trajectory: tangent yaw is not supported on waypoint paths");
    }
    if (std::abs(pitch) > 90.0 || std::abs(roll) > 180.0) throw ValidationError("trajectory: roll/pitch out of range");
  }
};

/// Pose on the trajectory at time t in [0, duration].
inline Pose3 pose_at(const TrajectorySpec& spec, double t, double duration = std::numeric_limits<double>::infinity()) {
  if (!(t >= 0.0) || t > duration) {
    throw DomainError("pose_at: t = " + std::to_string(t) + " outside [0, " + std::to_string(duration) + "]");
  }
  using K = TrajectorySpec::Kind;
  Vec3 pos = spec.center;
  double heading = 0.0;  // rad, direction of travel
  switch (spec.kind) {
    case K::static_pose:
      break;
    case K::line: {
      // Back and forth between start and end.
      const Vec3 d = spec.end - spec.start;
      const double len = d.norm();
      if (len <= 0.0 || spec.speed <= 0.0) {
        pos = spec.start;
        break;
      }
      const double s = std::fmod(spec.speed * t, 2.0 * len);
      const bool back = s > len;
      pos = spec.start + d * ((back ? 2.0 * len - s : s) / len);
      heading = std::atan2(back ? -d.y() : d.y(), back ? -d.x() : d.x());
      break;
    }
    case K::circle: {
      const double dir = spec.clockwise ? -1.0 : 1.0;
      const double phi = deg_to_rad(spec.phase) + dir * spec.speed / spec.radius * t;
      pos = Vec3(spec.center.x() + spec.radius * std::cos(phi), spec.center.y() + spec.radius * std::sin(phi),
                 spec.altitude);
      heading = phi + dir * std::numbers::pi / 2.0;
      break;
    }
    case K::waypoint: {
      const auto& w = spec.waypoints;
      double perimeter = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) perimeter += (w[(k + 1) % w.size()] - w[k]).norm();
      if (perimeter <= 0.0 || spec.speed <= 0.0) {
        pos = w.front();
        break;
      }
      double s = std::fmod(spec.speed * t, perimeter);
      for (std::size_t k = 0; k < w.size(); ++k) {
        const Vec3 seg = w[(k + 1) % w.size()] - w[k];
        const double len = seg.norm();
        if (s <= len || k + 1 == w.size()) {
          pos = w[k] + (len > 0.0 ? Vec3(seg * (std::min(s, len) / len)) : Vec3(Vec3::Zero()));
          break;
        }
        s -= len;
      }
      break;
    }
  }
  double yaw = spec.yaw0;
  if (spec.yaw_mode == TrajectorySpec::YawMode::rate) yaw += spec.yaw_rate * t;
  if (spec.yaw_mode == TrajectorySpec::YawMode::tangent) yaw += rad_to_deg(heading);
  return Pose3::from_tuple(pos.x(), pos.y(), pos.z(), spec.roll, spec.pitch, wrap_deg(yaw));
}

struct AgentSpec {
  std::string id;
  AntennaArray array;
  ConstraintEnvelope envelope;
  TrajectorySpec trajectory;
  double body_radius = 0.15;  // m, occlusion cylinder
};

struct ChannelSpec {
  double drop_prob = 0.0;
  double delay = 0.0;  // s
  std::optional<std::uint64_t> seed;
};

struct ScenarioEvent {
  enum class Kind { altitude_shift, envelope_change };
  double time = 0.0;
  std::string agent;
  Kind kind = Kind::altitude_shift;
  double dz = 0.0;         // altitude_shift: metres added to true altitude
  double duration = 0.0;   // altitude_shift: seconds until reverted, 0 = permanent
  ConstraintEnvelope envelope;  // envelope_change
};

struct Scenario {
  std::string name = "custom";
  std::vector<AgentSpec> agents;
  double duration = 10.0;    // s
  double range_rate = 25.0;  // Hz
  NoiseProfile noise = NoiseProfile::synthetic_default();
  BiasModel bias_truth;
  ChannelSpec channel;
  std::vector<ScenarioEvent> events;
  std::uint64_t seed = 0;
  double envelope_z_sigma = 0.01;      // m, altimeter noise
  double envelope_angle_sigma = 0.2;   // deg, IMU roll/pitch noise
  double body_half_height = kBodyHalfHeight;

  std::size_t tick_count() const { return static_cast<std::size_t>(std::floor(duration * range_rate + 1e-9)); }
  double tick_time(std::size_t k) const { return static_cast<double>(k) / range_rate; }

  void validate() const {
    if (!(duration > 0.0)) throw ValidationError("scenario: duration must be > 0");
    if (!(range_rate > 0.0)) throw ValidationError("scenario: range_rate must be > 0");
    if (!(channel.drop_prob >= 0.0 && channel.drop_prob <= 1.0)) {
      throw ValidationError("scenario: channel drop_prob must be in [0, 1]");
    }
    if (!(channel.delay >= 0.0)) throw ValidationError("scenario: channel delay must be >= 0");
    if (agents.size() < 2) throw ValidationError("scenario: needs at least two agents");
    noise.validate();
    std::map<std::string, int> ids;
    for (const auto& a : agents) {
      if (a.id.empty() || a.id.find(',') != std::string::npos) throw ValidationError("scenario: bad agent id");
      if (ids[a.id]++) throw ValidationError("scenario: duplicate agent id " + a.id);
      a.array.validate(1);
      a.envelope.validate();
      a.trajectory.validate();
      if (!(a.body_radius >= 0.0)) throw ValidationError("scenario: body_radius must be >= 0");
    }
    for (const auto& e : events) {
      if (!ids.contains(e.agent)) throw ValidationError("scenario: event references unknown agent " + e.agent);
      if (!(e.time >= 0.0)) throw ValidationError("scenario: event time must be >= 0");
    }
  }
};

struct PoseRecord {
  double time = 0.0;
  std::string agent;
  Pose3 pose;
  PoseTuple tuple;  // as logged
};

struct EnvelopeRecord {
  std::string agent;
  EnvelopeMeasurement meas;
};

struct MessageRecord {
  double send_time = 0.0;
  double deliver_time = 0.0;  // NaN when dropped
  std::string recipient;
  bool dropped = false;
  SwarmMessage message;
};

struct SimulationLog {
  Scenario scenario;
  std::vector<PoseRecord> poses;
  std::vector<RangeMeasurement> ranges;
  std::vector<EnvelopeRecord> envelopes;
  std::vector<MessageRecord> messages;
  std::optional<nlohmann::json> manifest;  // preserved verbatim from an imported bundle
};

/// Runs the scenario. Range, envelope and channel randomness come from
/// separate streams, so changing the channel seed leaves ranges untouched.
inline SimulationLog run(const Scenario& sc) {
  sc.validate();
  SimulationLog log;
  log.scenario = sc;

  Rng range_rng = Rng::stream(sc.seed, "ranges:" + std::to_string(sc.noise.seed));
  Rng env_rng = Rng::stream(sc.seed, "envelopes");
  Rng chan_rng = Rng::stream(sc.channel.seed.value_or(sc.seed), "channel");

  const std::size_t n_agents = sc.agents.size();
  const std::size_t ticks = sc.tick_count();
  const double eps = 1e-9;

  std::vector<AgentState> agents;
  for (const auto& a : sc.agents) {
    ProtocolConfig pc;
    pc.estimate = false;
    agents.push_back(make_agent(a.id, a.envelope, a.array, pc));
  }

  struct Pending {
    std::size_t deliver_tick;
    std::size_t recipient;
    SwarmMessage msg;
  };
  std::vector<Pending> in_flight;

  std::vector<Pose3> world(n_agents);
  for (std::size_t k = 0; k < ticks; ++k) {
    const double t = sc.tick_time(k);

    for (std::size_t a = 0; a < n_agents; ++a) {
      const auto& spec = sc.agents[a];
      double dz = 0.0;
      for (const auto& e : sc.events) {
        if (e.agent != spec.id || e.kind != ScenarioEvent::Kind::altitude_shift) continue;
        if (t + eps >= e.time && (e.duration <= 0.0 || t + eps < e.time + e.duration)) dz += e.dz;
      }
      Pose3 p = pose_at(spec.trajectory, t);
      world[a] = Pose3(p.rotation(), p.translation() + Vec3(0.0, 0.0, dz));
      log.poses.push_back({t, spec.id, world[a], world[a].to_tuple()});

      for (const auto& e : sc.events) {
        if (e.agent != spec.id || e.kind != ScenarioEvent::Kind::envelope_change) continue;
        // Snap to the first tick at or after the event time.
        if (t + eps >= e.time && t + eps - 1.0 / sc.range_rate < e.time) change_envelope(agents[a], e.envelope);
      }
    }

    // Ranges: every ordered agent pair, every antenna pair, independent draws.
    for (std::size_t a = 0; a < n_agents; ++a) {
      for (std::size_t b = 0; b < n_agents; ++b) {
        if (a == b) continue;
        const auto& A = sc.agents[a];
        const auto& B = sc.agents[b];
        const Pose3 T_AB = world[a].inverse() * world[b];
        for (std::size_t i = 0; i < A.array.count(); ++i) {
          for (std::size_t j = 0; j < B.array.count(); ++j) {
            const bool occ =
                is_occluded(T_AB, A.array, B.array, i, j, A.body_radius, B.body_radius, sc.body_half_height);
            RangeMeasurement m = sample_measurement(sc.noise, sc.bias_truth, T_AB, A.array, B.array, i, j, occ, range_rng);
            m.time = t;
            m.measuring_agent = A.id;
            m.target_agent = B.id;
            log.ranges.push_back(std::move(m));
          }
        }
      }
    }

    // Envelope monitoring and messaging.
    for (std::size_t a = 0; a < n_agents; ++a) {
      const PoseTuple tp = world[a].to_tuple();
      EnvelopeMeasurement em;
      em.time = t;
      em.z_meas = tp.z + sc.envelope_z_sigma * env_rng.normal();
      em.roll_meas = tp.roll + sc.envelope_angle_sigma * env_rng.normal();
      em.pitch_meas = tp.pitch + sc.envelope_angle_sigma * env_rng.normal();
      log.envelopes.push_back({sc.agents[a].id, em});

      std::vector<SwarmMessage> inbox;
      for (auto it = in_flight.begin(); it != in_flight.end();) {
        if (it->recipient == a && it->deliver_tick <= k) {
          inbox.push_back(std::move(it->msg));
          it = in_flight.erase(it);
        } else {
          ++it;
        }
      }
      StepOutput out = step_agent(agents[a], em, inbox, {});
      for (const auto& msg : out.outbox) {
        for (std::size_t r = 0; r < n_agents; ++r) {
          if (r == a) continue;
          MessageRecord rec;
          rec.send_time = t;
          rec.recipient = sc.agents[r].id;
          rec.message = msg;
          rec.dropped = chan_rng.bernoulli(sc.channel.drop_prob);
          if (rec.dropped) {
            rec.deliver_time = std::numeric_limits<double>::quiet_NaN();
          } else {
            // Earliest later tick at or after send time + delay.
            auto dt = static_cast<std::size_t>(std::ceil((t + sc.channel.delay) * sc.range_rate - eps));
            dt = std::max(dt, k + 1);
            rec.deliver_time = sc.tick_time(dt);
            in_flight.push_back({dt, r, msg});
          }
          log.messages.push_back(std::move(rec));
        }
      }
    }
  }
  return log;
}

// ---- presets

/// Three ground robots with six antennas at 0.32 m radius, antenna planes at
/// 1.75 m (A) and 0.5 m (B, C), moving slowly; geometry randomised by seed.
inline Scenario preset_ugv_three_agent(std::uint64_t seed, double duration = 30.0) {
  Scenario sc;
  sc.name = "ugv_three_agent";
  sc.seed = seed;
  sc.duration = duration;
  sc.range_rate = 25.0;
  sc.noise = NoiseProfile::synthetic_default();
  sc.bias_truth.coefficients = {0.10, 0.0, 1.2e-4};
  Rng g = Rng::stream(seed, "preset:ugv_three_agent");
  auto U = [&](double lo, double hi) { return lo + (hi - lo) * g.uniform(); };

  const double heights[3] = {1.75, 0.5, 0.5};
  const char* ids[3] = {"A", "B", "C"};
  // Agents circle about centres spread over a 6 m x 6 m area.
  const Vec3 centres[3] = {Vec3(U(-0.5, 0.5), U(-0.5, 0.5), 0.0), Vec3(U(2.5, 3.5), U(-2.0, 2.0), 0.0),
                           Vec3(U(-2.5, 0.5), U(2.5, 3.5), 0.0)};
  for (int a = 0; a < 3; ++a) {
    AgentSpec s;
    s.id = ids[a];
    s.array = AntennaArray::circular(6, 0.32);
    s.envelope = {heights[a], 0.0, 0.0, 0.1, 5.0, 5.0};
    s.trajectory = TrajectorySpec::orbit(centres[a], U(0.5, 1.2), U(0.03, 0.08), heights[a]);
    s.trajectory.phase = U(-180.0, 180.0);
    s.trajectory.clockwise = g.bernoulli(0.5);
    s.trajectory.yaw_mode = TrajectorySpec::YawMode::rate;
    s.trajectory.yaw0 = U(-180.0, 180.0);
    s.trajectory.yaw_rate = U(-2.0, 2.0);
    s.body_radius = 0.15;
    sc.agents.push_back(std::move(s));
  }
  return sc;
}

/// Static four-antenna agent (0.37 m) and a six-antenna agent (0.31 m)
/// flying circles either 1 m above or level with it.
inline Scenario preset_uav_circle(std::uint64_t seed, bool level = false, double duration = 60.0) {
  Scenario sc;
  sc.name = level ? "uav_circle_level" : "uav_circle";
  sc.seed = seed;
  sc.duration = duration;
  sc.noise = NoiseProfile::synthetic_default();
  sc.bias_truth.coefficients = {0.10, 0.0, 1.2e-4};
  const double zA = 0.8;
  const double zB = level ? zA : zA + 1.0;

  AgentSpec a;
  a.id = "A";
  a.array = AntennaArray::circular(4, 0.37);
  a.envelope = {zA, 0.0, 0.0, 0.1, 5.0, 5.0};
  a.trajectory = TrajectorySpec::stationary(Vec3(0.0, 0.0, zA));
  a.body_radius = 0.15;

  AgentSpec b;
  b.id = "B";
  b.array = AntennaArray::circular(6, 0.31);
  b.envelope = {zB, 0.0, 0.0, 0.2, 5.0, 5.0};
  b.trajectory = TrajectorySpec::orbit(Vec3(2.5, 0.0, 0.0), 1.0, 0.3, zB);
  b.trajectory.yaw_mode = TrajectorySpec::YawMode::rate;
  b.trajectory.yaw_rate = 6.0;
  b.body_radius = 0.12;
  sc.agents = {a, b};
  return sc;
}

/// Static agent and a second agent flying back-and-forth lines 1 m above it.
inline Scenario preset_uav_line(std::uint64_t seed, double duration = 60.0) {
  Scenario sc;
  sc.name = "uav_line";
  sc.seed = seed;
  sc.duration = duration;
  sc.noise = NoiseProfile::synthetic_default();
  sc.bias_truth.coefficients = {0.10, 0.0, 1.2e-4};
  const double zA = 0.8, zB = 1.8;

  AgentSpec a;
  a.id = "A";
  a.array = AntennaArray::circular(4, 0.37);
  a.envelope = {zA, 0.0, 0.0, 0.1, 5.0, 5.0};
  a.trajectory = TrajectorySpec::stationary(Vec3(0.0, 0.0, zA));

  AgentSpec b;
  b.id = "B";
  b.array = AntennaArray::circular(6, 0.31);
  b.envelope = {zB, 0.0, 0.0, 0.2, 5.0, 5.0};
  b.trajectory = TrajectorySpec::straight(Vec3(1.5, -2.0, zB), Vec3(3.5, 2.0, zB), 0.2);
  b.trajectory.yaw0 = 30.0;
  b.body_radius = 0.12;
  sc.agents = {a, b};
  return sc;
}

inline Scenario preset_by_name(const std::string& name, std::uint64_t seed) {
  if (name == "ugv_three_agent") return preset_ugv_three_agent(seed);
  if (name == "uav_circle") return preset_uav_circle(seed, false);
  if (name == "uav_circle_level") return preset_uav_circle(seed, true);
  if (name == "uav_line") return preset_uav_line(seed);
  throw ValidationError("unknown scenario preset '" + name + "'");
}

// ---- scenario JSON

inline nlohmann::json vec_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json trajectory_to_json(const TrajectorySpec& s) {
  static const char* kinds[] = {"static", "line", "circle", "waypoint"};
  static const char* yaws[] = {"fixed", "rate", "tangent"};
  nlohmann::json wp = nlohmann::json::array();
  for (const auto& w : s.waypoints) wp.push_back(vec_to_json(w));
  return {{"kind", kinds[static_cast<int>(s.kind)]},
          {"center_m", vec_to_json(s.center)},
          {"start_m", vec_to_json(s.start)},
          {"end_m", vec_to_json(s.end)},
          {"waypoints_m", wp},
          {"radius_m", s.radius},
          {"speed_m_s", s.speed},
          {"altitude_m", s.altitude},
          {"phase_deg", s.phase},
          {"clockwise", s.clockwise},
          {"yaw_mode", yaws[static_cast<int>(s.yaw_mode)]},
          {"yaw0_deg", s.yaw0},
          {"yaw_rate_deg_s", s.yaw_rate},
          {"roll_deg", s.roll},
          {"pitch_deg", s.pitch}};
}

inline TrajectorySpec trajectory_from_json(const nlohmann::json& j) {
  TrajectorySpec s;
  const std::string kind = j.value("kind", std::string("static"));
  if (kind == "static") s.kind = TrajectorySpec::Kind::static_pose;
  else if (kind == "line") s.kind = TrajectorySpec::Kind::line;
  else if (kind == "circle") s.kind = TrajectorySpec::Kind::circle;
  else if (kind == "waypoint") s.kind = TrajectorySpec::Kind::waypoint;
  else throw SchemaError("trajectory kind '" + kind + "' unknown");
  if (j.contains("center_m")) s.center = vec_from_json(j.at("center_m"));
  if (j.contains("start_m")) s.start = vec_from_json(j.at("start_m"));
  if (j.contains("end_m")) s.end = vec_from_json(j.at("end_m"));
  if (j.contains("waypoints_m")) {
    for (const auto& w : j.at("waypoints_m")) s.waypoints.push_back(vec_from_json(w));
  }
  s.radius = j.value("radius_m", s.radius);
  s.speed = j.value("speed_m_s", s.speed);
  s.altitude = j.value("altitude_m", s.altitude);
  s.phase = j.value("phase_deg", s.phase);
  s.clockwise = j.value("clockwise", s.clockwise);
  const std::string ym = j.value("yaw_mode", std::string("fixed"));
  if (ym == "fixed") s.yaw_mode = TrajectorySpec::YawMode::fixed;
  else if (ym == "rate") s.yaw_mode = TrajectorySpec::YawMode::rate;
  else if (ym == "tangent") s.yaw_mode = TrajectorySpec::YawMode::tangent;
  else throw SchemaError("yaw_mode '" + ym + "' unknown");
  s.yaw0 = j.value("yaw0_deg", s.yaw0);
  s.yaw_rate = j.value("yaw_rate_deg_s", s.yaw_rate);
  s.roll = j.value("roll_deg", s.roll);
  s.pitch = j.value("pitch_deg", s.pitch);
  return s;
}

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : sc.agents) {
    agents.push_back({{"id", a.id},
                      {"array", array_to_json(a.array)},
                      {"envelope", envelope_to_json(a.envelope)},
                      {"trajectory", trajectory_to_json(a.trajectory)},
                      {"body_radius_m", a.body_radius}});
  }
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : sc.events) {
    nlohmann::json je{{"time_s", e.time}, {"agent", e.agent}};
    if (e.kind == ScenarioEvent::Kind::altitude_shift) {
      je["kind"] = "altitude_shift";
      je["dz_m"] = e.dz;
      je["duration_s"] = e.duration;
    } else {
      je["kind"] = "envelope_change";
      je["envelope"] = envelope_to_json(e.envelope);
    }
    events.push_back(je);
  }
  nlohmann::json channel{{"drop_prob", sc.channel.drop_prob}, {"delay_s", sc.channel.delay}};
  if (sc.channel.seed) channel["seed"] = *sc.channel.seed;
  return {{"name", sc.name},
          {"agents", agents},
          {"duration_s", sc.duration},
          {"range_rate_hz", sc.range_rate},
          {"noise", noise_to_json(sc.noise)},
          {"bias_truth", bias_to_json(sc.bias_truth)},
          {"channel", channel},
          {"events", events},
          {"seed", sc.seed},
          {"envelope_z_sigma_m", sc.envelope_z_sigma},
          {"envelope_angle_sigma_deg", sc.envelope_angle_sigma},
          {"body_half_height_m", sc.body_half_height}};
}

/// Accepts either a full scenario or {"preset": name, "seed": n, ...} with
/// optional overrides of duration_s and events.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("scenario must be a JSON object");
  Scenario sc;
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  if (j.contains("preset")) {
    sc = preset_by_name(j.at("preset").get<std::string>(), seed);
  } else {
    sc.name = j.value("name", std::string("custom"));
    sc.seed = seed;
    if (!j.contains("agents")) throw SchemaError("scenario: missing 'agents'");
    for (const auto& ja : j.at("agents")) {
      AgentSpec a;
      a.id = ja.at("id").get<std::string>();
      a.array = array_from_json(ja.at("array"));
      a.envelope = envelope_from_json(ja.at("envelope"));
      a.trajectory = trajectory_from_json(ja.at("trajectory"));
      a.body_radius = ja.value("body_radius_m", a.body_radius);
      sc.agents.push_back(std::move(a));
    }
    if (j.contains("noise")) sc.noise = noise_from_json(j.at("noise"));
    if (j.contains("bias_truth")) sc.bias_truth = bias_from_json(j.at("bias_truth"));
    sc.range_rate = j.value("range_rate_hz", sc.range_rate);
    sc.envelope_z_sigma = j.value("envelope_z_sigma_m", sc.envelope_z_sigma);
    sc.envelope_angle_sigma = j.value("envelope_angle_sigma_deg", sc.envelope_angle_sigma);
    sc.body_half_height = j.value("body_half_height_m", sc.body_half_height);
  }
  sc.duration = j.value("duration_s", sc.duration);
  if (j.contains("channel")) {
    const auto& c = j.at("channel");
    sc.channel.drop_prob = c.value("drop_prob", 0.0);
    sc.channel.delay = c.value("delay_s", 0.0);
    if (c.contains("seed")) sc.channel.seed = c.at("seed").get<std::uint64_t>();
  }
  if (j.contains("events")) {
    sc.events.clear();
    for (const auto& je : j.at("events")) {
      ScenarioEvent e;
      e.time = je.at("time_s").get<double>();
      e.agent = je.at("agent").get<std::string>();
      const auto kind = je.at("kind").get<std::string>();
      if (kind == "altitude_shift") {
        e.kind = ScenarioEvent::Kind::altitude_shift;
        e.dz = je.at("dz_m").get<double>();
        e.duration = je.value("duration_s", 0.0);
      } else if (kind == "envelope_change") {
        e.kind = ScenarioEvent::Kind::envelope_change;
        e.envelope = envelope_from_json(je.at("envelope"));
      } else {
        throw SchemaError("event kind '" + kind + "' unknown");
      }
      sc.events.push_back(std::move(e));
    }
  }
  sc.validate();
  return sc;
}

// ---- canonical bundle: manifest.json, poses.csv, ranges.csv, envelopes.csv, messages.csv

inline constexpr const char* kBundleFormat = "uwbrel-bundle";
inline constexpr int kBundleVersion = 1;

inline nlohmann::json make_manifest(const SimulationLog& log) {
  if (log.manifest) return *log.manifest;
  return {{"format", kBundleFormat},
          {"version", kBundleVersion},
          {"source", "simulator"},
          {"scenario", scenario_to_json(log.scenario)},
          {"units",
           {{"time", "s"}, {"position", "m"}, {"range", "m"}, {"angle", "deg"}}},
          {"pose_convention", "T_WA maps body to world; R = Rz(yaw) Ry(pitch) Rx(roll)"},
          {"metrics", {{"std", "population"}, {"ape", "3d"}}},
          {"files", {"poses.csv", "ranges.csv", "envelopes.csv", "messages.csv"}},
          {"counts",
           {{"poses", log.poses.size()},
            {"ranges", log.ranges.size()},
            {"envelopes", log.envelopes.size()},
            {"messages", log.messages.size()}}}};
}

inline void write_bundle(const std::filesystem::path& dir, const SimulationLog& log) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw ResourceError("cannot write " + (dir / "manifest.json").string());
    out << make_manifest(log).dump(2) << '\n';
  }
  using csv::format_double;
  csv::Table poses;
  poses.header = {"time_s", "agent", "x_m", "y_m", "z_m", "roll_deg", "pitch_deg", "yaw_deg"};
  for (const auto& p : log.poses) {
    const auto& q = p.tuple;
    poses.rows.push_back({format_double(p.time), p.agent, format_double(q.x), format_double(q.y), format_double(q.z),
                          format_double(q.roll), format_double(q.pitch), format_double(q.yaw)});
  }
  csv::write_table(dir / "poses.csv", poses);
  write_ranges_csv(dir / "ranges.csv", log.ranges);

  csv::Table env;
  env.header = {"time_s", "agent", "z_meas_m", "roll_meas_deg", "pitch_meas_deg"};
  for (const auto& e : log.envelopes) {
    env.rows.push_back({format_double(e.meas.time), e.agent, format_double(e.meas.z_meas),
                        format_double(e.meas.roll_meas), format_double(e.meas.pitch_meas)});
  }
  csv::write_table(dir / "envelopes.csv", env);

  csv::Table msgs;
  msgs.header = {"send_time_s", "deliver_time_s", "sender", "recipient", "kind", "seq", "dropped"};
  for (const auto& m : log.messages) {
    msgs.rows.push_back({format_double(m.send_time), m.dropped ? std::string() : format_double(m.deliver_time),
                         m.message.sender, m.recipient, to_string(m.message.kind), std::to_string(m.message.seq),
                         m.dropped ? "1" : "0"});
  }
  csv::write_table(dir / "messages.csv", msgs);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline std::vector<PoseRecord> poses_from_table(const csv::Table& t) {
  const int ct = t.require("time_s"), ca = t.require("agent");
  const int cx = t.require("x_m"), cy = t.require("y_m"), cz = t.require("z_m");
  const int cr = t.require("roll_deg"), cp = t.require("pitch_deg"), cw = t.require("yaw_deg");
  std::vector<PoseRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    PoseRecord r;
    r.time = csv::parse_double(row[ct], "time_s");
    r.agent = row[ca];
    r.tuple.x = csv::parse_double(row[cx], "x_m");
    r.tuple.y = csv::parse_double(row[cy], "y_m");
    r.tuple.z = csv::parse_double(row[cz], "z_m");
    r.tuple.roll = csv::parse_double(row[cr], "roll_deg");
    r.tuple.pitch = csv::parse_double(row[cp], "pitch_deg");
    r.tuple.yaw = csv::parse_double(row[cw], "yaw_deg");
    r.pose = Pose3::from_tuple(r.tuple.x, r.tuple.y, r.tuple.z, r.tuple.roll, r.tuple.pitch, r.tuple.yaw);
    out.push_back(std::move(r));
  }
  return out;
}

inline SimulationLog read_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw SchemaError("bundle: not a directory: " + dir.string());
  SimulationLog log;
  nlohmann::json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("format", std::string()) != kBundleFormat) {
    throw SchemaError("bundle: manifest format is not '" + std::string(kBundleFormat) + "'");
  }
  if (!manifest.contains("scenario")) throw SchemaError("bundle: manifest lacks 'scenario'");
  log.scenario = scenario_from_json(manifest.at("scenario"));
  log.manifest = std::move(manifest);

  log.poses = poses_from_table(csv::read_table(dir / "poses.csv"));
  log.ranges = read_ranges_csv(dir / "ranges.csv");

  if (std::filesystem::exists(dir / "envelopes.csv")) {
    const auto t = csv::read_table(dir / "envelopes.csv");
    const int ct = t.require("time_s"), ca = t.require("agent"), cz = t.require("z_meas_m");
    const int cr = t.require("roll_meas_deg"), cp = t.require("pitch_meas_deg");
    for (const auto& row : t.rows) {
      EnvelopeRecord e;
      e.agent = row[ca];
      e.meas.time = csv::parse_double(row[ct], "time_s");
      e.meas.z_meas = csv::parse_double(row[cz], "z_meas_m");
      e.meas.roll_meas = csv::parse_double(row[cr], "roll_meas_deg");
      e.meas.pitch_meas = csv::parse_double(row[cp], "pitch_meas_deg");
      log.envelopes.push_back(std::move(e));
    }
  }
  if (std::filesystem::exists(dir / "messages.csv")) {
    const auto t = csv::read_table(dir / "messages.csv");
    const int cs = t.require("send_time_s"), cd = t.require("deliver_time_s"), cf = t.require("sender");
    const int cr = t.require("recipient"), ck = t.require("kind"), cq = t.require("seq"), cx = t.require("dropped");
    for (const auto& row : t.rows) {
      MessageRecord m;
      m.send_time = csv::parse_double(row[cs], "send_time_s");
      m.dropped = row[cx] == "1";
      m.deliver_time = m.dropped ? std::numeric_limits<double>::quiet_NaN() : csv::parse_double(row[cd], "deliver_time_s");
      m.recipient = row[cr];
      m.message.sender = row[cf];
      m.message.kind = message_kind_from_string(row[ck]);
      m.message.seq = csv::parse_int(row[cq], "seq");
      m.message.time = m.send_time;
      log.messages.push_back(std::move(m));
    }
  }
  return log;
}

}  // namespace uwbrel
