#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "uwbrel/protocol.hpp"

using namespace uwbrel;

namespace {

ConstraintEnvelope level_envelope(double z = 0.0) { return {z, 0, 0, 0.1, 5, 5}; }

struct Swarm {
  std::vector<AgentState> agents;
  std::vector<Pose3> world;
  std::vector<SwarmMessage> in_flight;
  int step_index = 0;

  explicit Swarm(ProtocolConfig cfg) {
    const AntennaArray arr = AntennaArray::circular(4, 0.32);
    for (const auto& id : {"A", "B", "C"}) agents.push_back(make_agent(id, level_envelope(), arr, cfg));
    world = {Pose3::from_tuple(0, 0, 0, 0, 0, 0), Pose3::from_tuple(3, 0, 0, 0, 0, 90),
             Pose3::from_tuple(0.5, 3, 0, 0, 0, -45)};
  }

  std::vector<RangeMeasurement> ranges_for(std::size_t a, double t) const {
    std::vector<RangeMeasurement> out;
    for (std::size_t b = 0; b < agents.size(); ++b) {
      if (b == a) continue;
      const Pose3 T = world[a].inverse() * world[b];
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
          out.push_back({t, agents[a].self.agent, agents[b].self.agent, static_cast<int>(i), static_cast<int>(j),
                         expected_range(T, agents[a].self.array, agents[b].self.array, i, j)});
        }
      }
    }
    return out;
  }

  // Runs one tick; z_meas[k] is agent k's measured altitude.
  std::vector<StepOutput> step(const std::vector<double>& z_meas) {
    const double t = step_index++ / 25.0;
    std::vector<StepOutput> outs;
    std::vector<SwarmMessage> sent;
    for (std::size_t a = 0; a < agents.size(); ++a) {
      const auto ranges = ranges_for(a, t);
      outs.push_back(step_agent(agents[a], EnvelopeMeasurement{z_meas[a], 0, 0, t}, in_flight, ranges));
      for (const auto& m : outs.back().outbox) sent.push_back(m);
    }
    in_flight = std::move(sent);
    return outs;
  }
};

ProtocolConfig monitor_only() {
  ProtocolConfig c;
  c.estimate = false;
  return c;
}

bool has_estimate_for(const StepOutput& o, const std::string& id) {
  return std::any_of(o.estimates.begin(), o.estimates.end(), [&](const auto& e) { return e.target == id; });
}

std::size_t count_kind(const StepOutput& o, MessageKind k) {
  return static_cast<std::size_t>(
      std::count_if(o.outbox.begin(), o.outbox.end(), [&](const auto& m) { return m.kind == k; }));
}

SwarmMessage announce(const std::string& id, std::int64_t seq) {
  SwarmMessage m;
  m.kind = MessageKind::announce_info;
  m.sender = id;
  m.seq = seq;
  m.time = 0.5 * static_cast<double>(seq);
  m.payload = AgentInfo{id, level_envelope(0.1 * static_cast<double>(seq)), AntennaArray::circular(3, 0.3), true, seq};
  return m;
}

}  // namespace

TEST(CheckEnvelope, Examples) {
  const ConstraintEnvelope env{1.0, 0, 0, 0.2, 5, 5};
  EXPECT_TRUE(check_envelope(env, {1.1, 2, -3, 0}));
  EXPECT_FALSE(check_envelope(env, {1.3, 0, 0, 0}));
  EXPECT_TRUE(check_envelope(env, {1.2, 5, -5, 0}));
  EXPECT_FALSE(check_envelope(env, {1.0, 5.01, 0, 0}));
  EXPECT_FALSE(check_envelope(env, {1.0, 0, -5.01, 0}));
}

TEST(CheckEnvelope, NegativeToleranceRejected) {
  EXPECT_THROW(make_agent("A", ConstraintEnvelope{0, 0, 0, -0.1, 5, 5}, AntennaArray::circular(3, 0.3)),
               ValidationError);
}

TEST(Codec, RoundTripEachKind) {
  for (auto kind : {MessageKind::announce_info, MessageKind::violation, MessageKind::resume}) {
    SwarmMessage m;
    m.kind = kind;
    m.sender = "uav-1";
    m.seq = 42;
    m.time = 12.34;
    if (kind != MessageKind::violation) {
      m.payload = AgentInfo{"uav-1", ConstraintEnvelope{1.8, 0.5, -0.5, 0.1, 5, 5}, AntennaArray::circular(6, 0.31),
                            kind == MessageKind::resume, 3};
    }
    const auto bytes = encode_message(m);
    EXPECT_EQ(decode_message(bytes), m) << to_string(kind);
  }
}

TEST(Codec, LengthPrefixAndCanonicalBody) {
  SwarmMessage m;
  m.kind = MessageKind::violation;
  m.sender = "B";
  m.seq = 7;
  m.time = 1.0;
  const auto bytes = encode_message(m);
  const std::uint32_t n = (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16) |
                          (std::uint32_t{bytes[2]} << 8) | std::uint32_t{bytes[3]};
  ASSERT_EQ(n + 4, bytes.size());
  const std::string body(bytes.begin() + 4, bytes.end());
  EXPECT_EQ(body, nlohmann::json::parse(body).dump());
  EXPECT_NE(body.find("\"proto_version\":1"), std::string::npos);
  EXPECT_EQ(encode_message(m), bytes);
}

TEST(Codec, ViolationFitsInUnder128Bytes) {
  SwarmMessage m;
  m.kind = MessageKind::violation;
  m.sender = "agent-B";
  m.seq = 123456;
  m.time = 3600.04;
  EXPECT_LT(encode_message(m).size(), 128u);
}

TEST(Codec, TruncatedBufferThrowsWithOffset) {
  const auto bytes = encode_message(announce("A", 1));
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{4}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      decode_message(part);
      FAIL() << "no error for cut " << cut;
    } catch (const DecodeError& e) {
      EXPECT_LE(e.offset(), cut);
    }
  }
}

TEST(Codec, MalformedJsonReportsByteOffset) {
  const std::string body = "{\"kind\":}";
  std::vector<std::uint8_t> bytes = {0, 0, 0, static_cast<std::uint8_t>(body.size())};
  bytes.insert(bytes.end(), body.begin(), body.end());
  try {
    decode_message(bytes);
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.offset(), 4u + body.find('}'));
  }
}

TEST(Codec, SchemaViolationsAreDecodeErrors) {
  auto frame = [](const std::string& body) {
    std::vector<std::uint8_t> b = {0, 0, 0, static_cast<std::uint8_t>(body.size())};
    b.insert(b.end(), body.begin(), body.end());
    return b;
  };
  EXPECT_THROW(decode_message(frame(R"({"proto_version":2,"kind":"violation","sender":"A","seq":1,"time":0,"payload":null})")),
               DecodeError);
  EXPECT_THROW(decode_message(frame(R"({"proto_version":1,"kind":"jump","sender":"A","seq":1,"time":0,"payload":null})")),
               DecodeError);
  EXPECT_THROW(decode_message(frame(R"({"proto_version":1,"kind":"resume","sender":"A","seq":1,"time":0,"payload":null})")),
               DecodeError);
  auto ok = encode_message(announce("A", 1));
  ok.push_back(0);
  EXPECT_THROW(decode_message(ok), DecodeError);
}

TEST(StepAgent, QuiescentSwarmSendsOnlyInitialAnnouncements) {
  Swarm s(monitor_only());
  std::size_t total = 0, announces = 0;
  for (int k = 0; k < 100; ++k) {
    for (const auto& o : s.step({0.0, 0.02, -0.05})) {
      total += o.outbox.size();
      announces += count_kind(o, MessageKind::announce_info);
    }
  }
  EXPECT_EQ(total, 3u);
  EXPECT_EQ(announces, 3u);
  for (const auto& a : s.agents) EXPECT_EQ(a.known.size(), 2u);
}

TEST(StepAgent, ViolationIsSentOnTheBreachStepAndGatesEstimates) {
  ProtocolConfig cfg;
  cfg.estimate_period_s = 0.0;
  Swarm s(cfg);
  const int breach = 10, recover = 30;
  std::size_t violations = 0, resumes = 0;
  for (int k = 0; k < 40; ++k) {
    const double zb = (k >= breach && k < recover) ? 0.3 : 0.0;
    const auto outs = s.step({0.0, zb, 0.0});
    violations += count_kind(outs[1], MessageKind::violation);
    resumes += count_kind(outs[1], MessageKind::resume);
    if (k == breach) {
      EXPECT_EQ(count_kind(outs[1], MessageKind::violation), 1u);
    }
    if (k == recover) {
      EXPECT_EQ(count_kind(outs[1], MessageKind::resume), 1u);
    }
    for (std::size_t obs : {0u, 2u}) {
      if (k > breach && k <= recover) {
        EXPECT_FALSE(has_estimate_for(outs[obs], "B")) << "step " << k;
      } else if (k >= 1 && (k <= breach || k > recover)) {
        EXPECT_TRUE(has_estimate_for(outs[obs], "B")) << "step " << k;
      }
      if (k >= 1) {
        EXPECT_TRUE(has_estimate_for(outs[obs], obs == 0 ? "C" : "A")) << "step " << k;
      }
    }
  }
  EXPECT_EQ(violations, 1u);
  EXPECT_EQ(resumes, 1u);
}

TEST(StepAgent, NoisefreeEstimatesMatchTruth) {
  Swarm s(ProtocolConfig{});
  std::vector<StepOutput> outs;
  for (int k = 0; k < 3; ++k) outs = s.step({0, 0, 0});
  const Pose3 truth = s.world[0].inverse() * s.world[1];
  for (const auto& e : outs[0].estimates) {
    if (e.target != "B") continue;
    EXPECT_NEAR(e.estimate.x, truth.translation().x(), 1e-6);
    EXPECT_NEAR(e.estimate.y, truth.translation().y(), 1e-6);
    EXPECT_NEAR(std::abs(wrap_deg(e.estimate.yaw - truth.to_tuple().yaw)), 0.0, 1e-6);
  }
}

TEST(StepAgent, EstimateEqualsDirectSolve) {
  Swarm s(ProtocolConfig{});
  for (int k = 0; k < 5; ++k) s.step({0, 0, 0});
  AgentState pre = s.agents[0];
  const auto inbox = s.in_flight;
  const double t = s.step_index / 25.0;
  const auto ranges = s.ranges_for(0, t);
  const auto outs = s.step({0, 0, 0});

  apply_inbox(pre, inbox);
  ingest_ranges(pre, ranges);
  for (const auto& te : outs[0].estimates) {
    const EstimationProblem p = build_problem(pre, pre.known.at(te.target), t);
    const auto& sm = pre.last_smoothed.at(te.target);
    const PoseEstimate direct = solve(p, InitialGuess{sm.x, sm.y, sm.yaw, sm.z}, pre.config.solver.solver);
    EXPECT_EQ(direct.x, te.estimate.x);
    EXPECT_EQ(direct.y, te.estimate.y);
    EXPECT_EQ(direct.yaw, te.estimate.yaw);
    EXPECT_EQ(direct.objective, te.estimate.objective);
  }
  EXPECT_EQ(outs[0].estimates.size(), 2u);
}

TEST(StepAgent, KeepaliveWhileInvalid) {
  Swarm s(monitor_only());
  std::vector<int> violation_steps;
  for (int k = 0; k < 400; ++k) {
    const auto outs = s.step({0.0, k >= 20 ? 0.5 : 0.0, 0.0});
    if (count_kind(outs[1], MessageKind::violation) > 0) violation_steps.push_back(k);
  }
  // 25 Hz ticks: breach at 20, then every 5 s (125 ticks).
  EXPECT_EQ(violation_steps, (std::vector<int>{20, 145, 270, 395}));
}

TEST(StepAgent, EnvelopeChangeIsAnnounced) {
  Swarm s(monitor_only());
  s.step({0, 0, 0});
  s.step({0, 0, 0});
  change_envelope(s.agents[2], level_envelope(1.0));
  auto outs = s.step({0, 0, 1.0});
  ASSERT_EQ(outs[2].outbox.size(), 1u);
  EXPECT_EQ(outs[2].outbox[0].kind, MessageKind::announce_info);
  EXPECT_EQ(outs[2].outbox[0].payload->info_version, 2);
  s.step({0, 0, 1.0});
  EXPECT_DOUBLE_EQ(s.agents[0].known.at("C").envelope.z_cmd, 1.0);
  EXPECT_EQ(s.agents[0].known.at("C").info_version, 2);
}

TEST(StepAgent, UnknownAndForeignRangesAreCounted) {
  AgentState a = make_agent("A", level_envelope(), AntennaArray::circular(3, 0.3), monitor_only());
  const std::vector<RangeMeasurement> ranges = {{0, "A", "Z", 0, 0, 1.0}, {0, "Q", "A", 0, 0, 1.0}};
  const StepOutput out = step_agent(a, EnvelopeMeasurement{}, {}, ranges);
  EXPECT_EQ(a.diagnostics.unknown_agent_ranges, 1u);
  EXPECT_EQ(a.diagnostics.foreign_ranges, 1u);
  EXPECT_EQ(out.outbox.size(), 1u);
}

TEST(ApplyInbox, StaleSequenceNumbersAreIgnored) {
  AgentState a = make_agent("A", level_envelope(), AntennaArray::circular(3, 0.3));
  const std::vector<SwarmMessage> first = {announce("B", 5)};
  apply_inbox(a, first);
  const std::vector<SwarmMessage> stale = {announce("B", 5), announce("B", 2)};
  apply_inbox(a, stale);
  EXPECT_EQ(a.diagnostics.stale_messages, 2u);
  EXPECT_EQ(a.known.at("B").info_version, 5);
}

TEST(ApplyInbox, OrderAcrossSendersDoesNotMatter) {
  std::vector<SwarmMessage> inbox;
  for (const auto& id : {"B", "C", "D"}) {
    inbox.push_back(announce(id, 1));
    SwarmMessage v;
    v.kind = MessageKind::violation;
    v.sender = id;
    v.seq = 2;
    inbox.push_back(v);
    inbox.push_back(announce(id, 3));
  }
  inbox.back().payload->valid = false;
  AgentState ref = make_agent("A", level_envelope(), AntennaArray::circular(3, 0.3));
  apply_inbox(ref, inbox);
  std::mt19937_64 rng(41);
  for (int k = 0; k < 50; ++k) {
    std::shuffle(inbox.begin(), inbox.end(), rng);
    AgentState a = make_agent("A", level_envelope(), AntennaArray::circular(3, 0.3));
    apply_inbox(a, inbox);
    EXPECT_EQ(a.known, ref.known);
    EXPECT_EQ(a.last_seq, ref.last_seq);
  }
  EXPECT_FALSE(ref.known.at("D").valid);
  EXPECT_TRUE(ref.known.at("B").valid);
}

TEST(SolverConfig, JsonRoundTripAndValidation) {
  SolverConfig c;
  c.ablation = {false, true, false};
  c.range_window_s = 0.5;
  BiasModel b;
  b.coefficients = {0.1, 0.0, 1e-4};
  c.bias = b;
  const auto j = solver_config_to_json(c);
  EXPECT_EQ(j.at("loss").at("kind"), "squared");
  const SolverConfig back = solver_config_from_json(j);
  EXPECT_EQ(back.ablation, c.ablation);
  EXPECT_EQ(back.range_window_s, 0.5);
  EXPECT_EQ(back.bias->coefficients, b.coefficients);
  EXPECT_THROW(solver_config_from_json({{"loss", {{"kind", "cauchy"}}}}), ValidationError);
  EXPECT_THROW(solver_config_from_json({{"loss", {{"kind", "huber"}}}, {"ablation", {{"huber", false}}}}),
               ValidationError);
  EXPECT_THROW(solver_config_from_json({{"loss", {{"delta_m", 0.0}}}}), ValidationError);
}
