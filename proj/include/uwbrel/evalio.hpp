#pragma once

// Ground-truth alignment, APE/AHE metrics, protocol replay over logs, the
// 8-row flag ablation, and dataset import into the canonical bundle.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Geometry>
#include <json.hpp>

#include "uwbrel/csv.hpp"
#include "uwbrel/error.hpp"
#include "uwbrel/estimator.hpp"
#include "uwbrel/geometry.hpp"
#include "uwbrel/protocol.hpp"
#include "uwbrel/sensing.hpp"
#include "uwbrel/simulator.hpp"
#include "uwbrel/smoothing.hpp"

namespace uwbrel {

// ---- metrics

inline double ape(const Pose3& estimate, const Pose3& truth) {
  return (estimate.translation() - truth.translation()).norm();
}

inline double ahe(const Pose3& estimate, const Pose3& truth) {
  return std::abs(wrap_deg(estimate.yaw_deg() - truth.yaw_deg()));
}

inline double ape(const PoseTuple& estimate, const Pose3& truth) {
  return (Vec3(estimate.x, estimate.y, estimate.z) - truth.translation()).norm();
}

inline double ahe(const PoseTuple& estimate, const Pose3& truth) {
  return std::abs(wrap_deg(estimate.yaw - truth.yaw_deg()));
}

struct EvalRecord {
  double time = 0.0;
  std::string agent;   // A, the estimating agent
  std::string target;  // B
  PoseEstimate estimate;  // raw solver output
  PoseTuple reported;     // pose after smoothing; metrics use this
  Pose3 truth;            // T_AB
};

struct MetricSummary {
  double mean_ape = 0.0, max_ape = 0.0, std_ape = 0.0;
  double mean_ahe = 0.0, max_ahe = 0.0, std_ahe = 0.0;
  std::size_t count = 0;
  // Diagnostics: constrained inputs, not part of the heading error.
  double mean_roll_err = 0.0, mean_pitch_err = 0.0;
};

namespace detail {

struct Moments {
  double mean = 0.0, max = 0.0, std = 0.0;
};

inline Moments population_moments(std::span<const double> xs) {
  Moments m;
  for (double x : xs) {
    m.mean += x;
    m.max = std::max(m.max, x);
  }
  m.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

}  // namespace detail

/// Population statistics of the two error series.
inline MetricSummary summarize_errors(std::span<const double> apes, std::span<const double> ahes) {
  if (apes.empty()) throw ArityError("summarize: no records");
  if (apes.size() != ahes.size()) throw ArityError("summarize: error series differ in length");
  MetricSummary s;
  const auto p = detail::population_moments(apes);
  const auto h = detail::population_moments(ahes);
  s.mean_ape = p.mean;
  s.max_ape = p.max;
  s.std_ape = p.std;
  s.mean_ahe = h.mean;
  s.max_ahe = h.max;
  s.std_ahe = h.std;
  s.count = apes.size();
  return s;
}

inline MetricSummary summarize(std::span<const EvalRecord> records) {
  if (records.empty()) throw ArityError("summarize: no records");
  std::vector<double> apes, ahes;
  apes.reserve(records.size());
  ahes.reserve(records.size());
  double roll = 0.0, pitch = 0.0;
  for (const auto& r : records) {
    apes.push_back(ape(r.reported, r.truth));
    ahes.push_back(ahe(r.reported, r.truth));
    const PoseTuple t = r.truth.to_tuple();
    roll += std::abs(wrap_deg(r.reported.roll - t.roll));
    pitch += std::abs(r.reported.pitch - t.pitch);
  }
  MetricSummary s = summarize_errors(apes, ahes);
  s.mean_roll_err = roll / static_cast<double>(records.size());
  s.mean_pitch_err = pitch / static_cast<double>(records.size());
  return s;
}

// ---- ground truth

/// Per-agent world poses, interpolated linearly in translation and
/// spherically in rotation.
class TruthTrack {
 public:
  static constexpr double kTolerance = 0.02;  // s

  explicit TruthTrack(std::span<const PoseRecord> poses) {
    for (const auto& p : poses) tracks_[p.agent].emplace_back(p.time, p.pose);
    for (auto& [id, v] : tracks_) {
      std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    }
  }

  /// World pose of agent at t; empty when no sample lies within tolerance.
  std::optional<Pose3> world(const std::string& agent, double t, double tol = kTolerance) const {
    auto it = tracks_.find(agent);
    if (it == tracks_.end() || it->second.empty()) return std::nullopt;
    const auto& v = it->second;
    auto hi = std::lower_bound(v.begin(), v.end(), t, [](const auto& s, double x) { return s.first < x; });
    if (hi != v.end() && hi->first == t) return hi->second;
    if (hi == v.begin()) {
      if (hi->first - t <= tol) return hi->second;
      return std::nullopt;
    }
    auto lo = std::prev(hi);
    if (hi == v.end()) {
      if (t - lo->first <= tol) return lo->second;
      return std::nullopt;
    }
    if (std::min(t - lo->first, hi->first - t) > tol) return std::nullopt;
    const double a = (t - lo->first) / (hi->first - lo->first);
    const Eigen::Quaterniond q0(lo->second.rotation()), q1(hi->second.rotation());
    const Vec3 tr = (1.0 - a) * lo->second.translation() + a * hi->second.translation();
    return Pose3(q0.slerp(a, q1).toRotationMatrix(), tr);
  }

  /// T_AB = T_WA^-1 T_WB at time t.
  std::optional<Pose3> relative(const std::string& a, const std::string& b, double t, double tol = kTolerance) const {
    auto wa = world(a, t, tol);
    auto wb = world(b, t, tol);
    if (!wa || !wb) return std::nullopt;
    return wa->inverse() * (*wb);
  }

 private:
  std::map<std::string, std::vector<std::pair<double, Pose3>>> tracks_;
};

// ---- replay

enum class ZSource { commanded, measured, truth };

struct ReplayOptions {
  SolverConfig solver;
  /// Spacing of estimates per pair; 0 estimates at every tick.
  double estimate_period_s = 0.0;
  ZSource z_source = ZSource::commanded;
  double keepalive_s = 5.0;
};

struct EstimateRow {
  double time = 0.0;
  std::string agent;
  std::string target;
  PoseEstimate raw;
  PoseTuple smoothed;
};

struct ReplayResult {
  std::vector<EstimateRow> estimates;
  std::vector<SwarmMessage> messages;
  std::map<std::string, ProtocolDiagnostics> diagnostics;
};

namespace detail {

/// Latest value per agent at or before a time, from a time-sorted stream.
class LatestByTime {
 public:
  void add(const std::string& agent, double t, double v) { series_[agent].emplace_back(t, v); }
  void finish() {
    for (auto& [k, s] : series_) {
      std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    }
  }
  std::optional<double> at(const std::string& agent, double t) const {
    auto it = series_.find(agent);
    if (it == series_.end()) return std::nullopt;
    const auto& s = it->second;
    auto hi = std::upper_bound(s.begin(), s.end(), t + 1e-9, [](double x, const auto& e) { return x < e.first; });
    if (hi == s.begin()) return std::nullopt;
    return std::prev(hi)->second;
  }

 private:
  std::map<std::string, std::vector<std::pair<double, double>>> series_;
};

}  // namespace detail

/// Replays the protocol and estimator over a log with an ideal channel:
/// messages sent at one tick are delivered at the next.
inline ReplayResult replay(const SimulationLog& log, const ReplayOptions& opt) {
  const Scenario& sc = log.scenario;
  ReplayResult result;

  std::set<double> times;
  for (const auto& r : log.ranges) times.insert(r.time);
  for (const auto& e : log.envelopes) times.insert(e.meas.time);

  std::map<double, std::map<std::string, std::vector<RangeMeasurement>>> ranges_at;
  for (const auto& r : log.ranges) ranges_at[r.time][r.measuring_agent].push_back(r);
  std::map<std::string, EnvelopeMeasurement> latest_env;
  std::map<double, std::vector<const EnvelopeRecord*>> env_at;
  for (const auto& e : log.envelopes) env_at[e.meas.time].push_back(&e);

  detail::LatestByTime z_meas, z_true;
  for (const auto& e : log.envelopes) z_meas.add(e.agent, e.meas.time, e.meas.z_meas);
  for (const auto& p : log.poses) z_true.add(p.agent, p.time, p.tuple.z);
  z_meas.finish();
  z_true.finish();

  std::vector<AgentState> agents;
  for (const auto& a : sc.agents) {
    ProtocolConfig pc;
    pc.keepalive_s = opt.keepalive_s;
    pc.solver = opt.solver;
    pc.estimate = true;
    pc.estimate_period_s = opt.estimate_period_s;
    const std::string self = a.id;
    if (opt.z_source != ZSource::commanded) {
      const auto* src = opt.z_source == ZSource::measured ? &z_meas : &z_true;
      pc.z_rel_override = [src, self](const std::string& target, double now) -> std::optional<double> {
        auto zb = src->at(target, now);
        auto za = src->at(self, now);
        if (!zb || !za) return std::nullopt;
        return *zb - *za;
      };
    }
    agents.push_back(make_agent(a.id, a.envelope, a.array, pc));
  }

  std::vector<SwarmMessage> in_flight;
  std::optional<double> prev_time;
  for (double t : times) {
    for (const EnvelopeRecord* e : env_at[t]) latest_env[e->agent] = e->meas;
    std::vector<SwarmMessage> sent;
    for (std::size_t a = 0; a < agents.size(); ++a) {
      const auto& spec = sc.agents[a];
      for (const auto& ev : sc.events) {
        if (ev.agent != spec.id || ev.kind != ScenarioEvent::Kind::envelope_change) continue;
        if (t + 1e-9 >= ev.time && (!prev_time || *prev_time + 1e-9 < ev.time)) change_envelope(agents[a], ev.envelope);
      }
      EnvelopeMeasurement em;
      if (auto it = latest_env.find(spec.id); it != latest_env.end()) {
        em = it->second;
      } else {
        // No envelope stream: the agent reports its commanded envelope.
        const auto& env = agents[a].self.envelope;
        em = {env.z_cmd, env.roll_cmd, env.pitch_cmd, t};
      }
      em.time = t;

      std::vector<SwarmMessage> inbox;
      for (const auto& m : in_flight) {
        if (m.sender != spec.id) inbox.push_back(m);
      }
      static const std::vector<RangeMeasurement> kNone;
      const auto& mine = [&]() -> const std::vector<RangeMeasurement>& {
        auto it = ranges_at.find(t);
        if (it == ranges_at.end()) return kNone;
        auto jt = it->second.find(spec.id);
        return jt == it->second.end() ? kNone : jt->second;
      }();
      StepOutput out = step_agent(agents[a], em, inbox, mine);
      for (auto& m : out.outbox) sent.push_back(std::move(m));
      for (auto& te : out.estimates) {
        EstimateRow row;
        row.time = t;
        row.agent = spec.id;
        row.target = te.target;
        row.smoothed = te.smoothed;
        row.raw = std::move(te.estimate);
        result.estimates.push_back(std::move(row));
      }
    }
    // Everything sent this tick is visible to all agents at the next tick.
    for (const auto& m : sent) result.messages.push_back(m);
    in_flight = std::move(sent);
    prev_time = t;
  }
  for (const auto& a : agents) result.diagnostics[a.self.agent] = a.diagnostics;
  return result;
}

/// Pairs estimates with interpolated ground truth; rows without truth
/// within tolerance are dropped.
inline std::vector<EvalRecord> align_with_truth(std::span<const EstimateRow> rows, const TruthTrack& truth) {
  std::vector<EvalRecord> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    auto tr = truth.relative(r.agent, r.target, r.time);
    if (!tr) continue;
    out.push_back({r.time, r.agent, r.target, r.raw, r.smoothed, *tr});
  }
  return out;
}

struct PipelineResult {
  ReplayResult replay;
  std::vector<EvalRecord> records;
  MetricSummary summary;
};

inline PipelineResult run_pipeline(const SimulationLog& log, const ReplayOptions& opt) {
  PipelineResult r;
  r.replay = replay(log, opt);
  r.records = align_with_truth(r.replay.estimates, TruthTrack(log.poses));
  r.summary = summarize(r.records);
  return r;
}

// ---- ablation

/// The eight flag rows in table order: (el_bias, z_fixed, huber).
inline std::vector<AblationFlags> ablation_flag_grid() {
  std::vector<AblationFlags> rows;
  for (int h = 0; h < 2; ++h) {
    for (int z = 0; z < 2; ++z) {
      for (int e = 0; e < 2; ++e) rows.push_back({e == 1, z == 1, h == 1});
    }
  }
  return rows;
}

struct AblationRow {
  AblationFlags flags;
  std::optional<MetricSummary> summary;
  std::string error;
};

inline ReplayOptions with_flags(ReplayOptions opt, const AblationFlags& flags) {
  opt.solver.ablation = flags;
  opt.solver.loss.kind = flags.huber ? LossConfig::Kind::huber : LossConfig::Kind::squared;
  return opt;
}

/// Runs the pipeline once per flag row over every log, pooling records
/// across logs. A failing row records its error and the others continue.
inline std::vector<AblationRow> ablation_table(std::span<const SimulationLog> logs, const ReplayOptions& base,
                                               unsigned jobs = 1) {
  const auto grid = ablation_flag_grid();
  std::vector<AblationRow> rows(grid.size());
  auto run_row = [&](std::size_t k) {
    rows[k].flags = grid[k];
    try {
      const ReplayOptions opt = with_flags(base, grid[k]);
      std::vector<EvalRecord> pooled;
      for (const auto& log : logs) {
        auto part = align_with_truth(replay(log, opt).estimates, TruthTrack(log.poses));
        pooled.insert(pooled.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      rows[k].summary = summarize(pooled);
    } catch (const std::exception& e) {
      rows[k].error = e.what();
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(grid.size())));
  if (jobs == 1) {
    for (std::size_t k = 0; k < grid.size(); ++k) run_row(k);
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < grid.size();) run_row(k);
    });
  }
  for (auto& th : pool) th.join();
  return rows;
}

inline std::vector<AblationRow> ablation_table(const SimulationLog& log, const ReplayOptions& base, unsigned jobs = 1) {
  return ablation_table(std::span<const SimulationLog>(&log, 1), base, jobs);
}

inline csv::Table ablation_csv(std::span<const AblationRow> rows) {
  csv::Table t;
  t.header = {"el_bias", "z_fixed", "huber", "count", "mean_ape_m", "max_ape_m", "std_ape_m",
              "mean_ahe_deg", "max_ahe_deg", "std_ahe_deg", "error"};
  for (const auto& r : rows) {
    std::vector<std::string> row{r.flags.el_bias ? "1" : "0", r.flags.z_fixed ? "1" : "0", r.flags.huber ? "1" : "0"};
    if (r.summary) {
      const auto& s = *r.summary;
      for (double v : {s.mean_ape, s.max_ape, s.std_ape, s.mean_ahe, s.max_ahe, s.std_ahe}) {
        row.push_back(csv::format_double(v));
      }
      row.insert(row.begin() + 3, std::to_string(s.count));
      row.emplace_back();
    } else {
      row.insert(row.end(), 7, std::string());
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      row.push_back(err);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline std::string ablation_text(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "el_bias" << std::setw(8) << "z_fixed" << std::setw(7) << "huber" << std::right
     << std::setw(9) << "count" << std::setw(10) << "APE mean" << std::setw(9) << "max" << std::setw(9) << "std"
     << std::setw(10) << "AHE mean" << std::setw(9) << "max" << std::setw(9) << "std" << '\n';
  auto mark = [](bool b) { return b ? "x" : "-"; };
  for (const auto& r : rows) {
    os << std::left << std::setw(8) << mark(r.flags.el_bias) << std::setw(8) << mark(r.flags.z_fixed) << std::setw(7)
       << mark(r.flags.huber) << std::right;
    if (r.summary) {
      const auto& s = *r.summary;
      os << std::setw(9) << s.count << std::fixed << std::setprecision(3) << std::setw(10) << s.mean_ape
         << std::setw(9) << s.max_ape << std::setw(9) << s.std_ape << std::setprecision(2) << std::setw(10)
         << s.mean_ahe << std::setw(9) << s.max_ahe << std::setw(9) << s.std_ahe << std::defaultfloat;
    } else {
      os << "  error: " << r.error;
    }
    os << '\n';
  }
  return os.str();
}

// ---- bias learning

/// (elevation, range error) samples from a log with ground truth.
inline std::vector<ElevationSample> elevation_samples(const SimulationLog& log) {
  std::map<std::string, const AgentSpec*> specs;
  for (const auto& a : log.scenario.agents) specs[a.id] = &a;
  const TruthTrack truth(log.poses);
  std::vector<ElevationSample> out;
  out.reserve(log.ranges.size());
  for (const auto& r : log.ranges) {
    auto A = specs.find(r.measuring_agent);
    auto B = specs.find(r.target_agent);
    if (A == specs.end() || B == specs.end()) continue;
    auto T = truth.relative(r.measuring_agent, r.target_agent, r.time);
    if (!T) continue;
    const auto i = static_cast<std::size_t>(r.antenna_i), j = static_cast<std::size_t>(r.antenna_j);
    const double el = pair_elevation(*T, A->second->array, B->second->array, i, j);
    const double d = expected_range(*T, A->second->array, B->second->array, i, j);
    out.push_back({el, r.range - d});
  }
  return out;
}

inline BiasFit learn_bias_from_log(const SimulationLog& log, int degree = 6) {
  const auto samples = elevation_samples(log);
  return fit_bias_polynomial(samples, degree);
}

// ---- estimate files

inline void write_estimates_csv(const std::filesystem::path& path, std::span<const EstimateRow> rows) {
  using csv::format_double;
  csv::Table t;
  t.header = {"time_s",    "agent",     "target",    "x_m",        "y_m",         "z_m",
              "roll_deg",  "pitch_deg", "yaw_deg",   "smooth_x_m", "smooth_y_m",  "smooth_z_m",
              "smooth_roll_deg", "smooth_pitch_deg", "smooth_yaw_deg", "objective", "iterations", "converged",
              "ambiguous"};
  for (const auto& r : rows) {
    const auto& e = r.raw;
    const auto& s = r.smoothed;
    t.rows.push_back({format_double(r.time), r.agent, r.target, format_double(e.x), format_double(e.y),
                      format_double(e.z), format_double(e.roll), format_double(e.pitch), format_double(e.yaw),
                      format_double(s.x), format_double(s.y), format_double(s.z), format_double(s.roll),
                      format_double(s.pitch), format_double(s.yaw), format_double(e.objective),
                      std::to_string(e.iterations), e.converged ? "1" : "0", e.ambiguous ? "1" : "0"});
  }
  csv::write_table(path, t);
}

inline std::vector<EstimateRow> read_estimates_csv(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  std::vector<int> c;
  for (const char* name : {"time_s", "agent", "target", "x_m", "y_m", "z_m", "roll_deg", "pitch_deg", "yaw_deg",
                           "smooth_x_m", "smooth_y_m", "smooth_z_m", "smooth_roll_deg", "smooth_pitch_deg",
                           "smooth_yaw_deg", "objective", "iterations", "converged", "ambiguous"}) {
    c.push_back(t.require(name));
  }
  std::vector<EstimateRow> out;
  for (const auto& row : t.rows) {
    auto d = [&](int k) { return csv::parse_double(row[c[k]], t.header[c[k]]); };
    EstimateRow r;
    r.time = d(0);
    r.agent = row[c[1]];
    r.target = row[c[2]];
    r.raw.x = d(3);
    r.raw.y = d(4);
    r.raw.z = d(5);
    r.raw.roll = d(6);
    r.raw.pitch = d(7);
    r.raw.yaw = d(8);
    r.raw.pose = Pose3::from_tuple(r.raw.x, r.raw.y, r.raw.z, r.raw.roll, r.raw.pitch, r.raw.yaw);
    r.smoothed = {d(9), d(10), d(11), d(12), d(13), d(14), false};
    r.raw.objective = d(15);
    r.raw.iterations = static_cast<int>(csv::parse_int(row[c[16]], "iterations"));
    r.raw.converged = row[c[17]] == "1";
    r.raw.ambiguous = row[c[18]] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

inline csv::Table summary_csv(const MetricSummary& s) {
  using csv::format_double;
  csv::Table t;
  t.header = {"count", "mean_ape_m", "max_ape_m", "std_ape_m", "mean_ahe_deg", "max_ahe_deg", "std_ahe_deg",
              "mean_roll_err_deg", "mean_pitch_err_deg"};
  t.rows.push_back({std::to_string(s.count), format_double(s.mean_ape), format_double(s.max_ape),
                    format_double(s.std_ape), format_double(s.mean_ahe), format_double(s.max_ahe),
                    format_double(s.std_ahe), format_double(s.mean_roll_err), format_double(s.mean_pitch_err)});
  return t;
}

// ---- dataset import

enum class DatasetFormat { murp, simlog };

inline DatasetFormat dataset_format_from_string(const std::string& s) {
  if (s == "murp") return DatasetFormat::murp;
  if (s == "simlog") return DatasetFormat::simlog;
  throw ValidationError("unknown dataset format '" + s + "'");
}

struct ImportResult {
  SimulationLog log;
  nlohmann::json report;
  /// Unknown columns, keyed by source file; first column is the row index.
  std::map<std::string, csv::Table> sidecars;
};

namespace detail {

inline double unit_scale(const std::string& unit, const std::string& what) {
  if (unit == "m" || unit == "s") return 1.0;
  if (unit == "mm" || unit == "ms") return 1e-3;
  if (unit == "cm") return 1e-2;
  if (unit == "us") return 1e-6;
  if (unit == "ns") return 1e-9;
  throw SchemaError("murp: unsupported " + what + " unit '" + unit + "'");
}

inline void require_columns(const csv::Table& t, std::span<const char* const> names, const std::string& file) {
  std::string missing;
  for (const char* n : names) {
    if (t.column(n) < 0) missing += (missing.empty() ? "" : ", ") + std::string(n);
  }
  if (!missing.empty()) throw SchemaError("murp: " + file + " is missing columns: " + missing);
}

inline csv::Table unknown_columns(const csv::Table& t, std::span<const char* const> known) {
  csv::Table side;
  std::vector<int> cols;
  side.header.push_back("row");
  for (std::size_t k = 0; k < t.header.size(); ++k) {
    if (std::find_if(known.begin(), known.end(), [&](const char* n) { return t.header[k] == n; }) == known.end()) {
      cols.push_back(static_cast<int>(k));
      side.header.push_back(t.header[k]);
    }
  }
  if (cols.empty()) return {};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::vector<std::string> row{std::to_string(r)};
    for (int c : cols) row.push_back(t.rows[r][c]);
    side.rows.push_back(std::move(row));
  }
  return side;
}

// Importer schema snapshot.
inline constexpr const char* kMurpRangeCols[] = {"timestamp", "initiator", "responder", "initiator_antenna",
                                                 "responder_antenna", "range"};
inline constexpr const char* kMurpMocapCols[] = {"timestamp", "agent", "x", "y", "z", "qx", "qy", "qz", "qw"};

inline ImportResult import_murp(const std::filesystem::path& dir) {
  ImportResult res;
  const nlohmann::json meta = read_json_file(dir / "metadata.json");
  for (const char* key : {"schema_version", "units", "agents"}) {
    if (!meta.contains(key)) throw SchemaError(std::string("murp: metadata.json lacks '") + key + "'");
  }
  if (meta.at("schema_version").get<int>() != 1) {
    throw SchemaError("murp: unsupported schema_version " + meta.at("schema_version").dump());
  }
  const auto& units = meta.at("units");
  const std::string range_unit = units.value("range", std::string("m"));
  const std::string pos_unit = units.value("position", std::string("m"));
  const std::string time_unit = units.value("time", std::string("s"));
  const double rs = unit_scale(range_unit, "range");
  const double ps = unit_scale(pos_unit, "position");
  const double ts = unit_scale(time_unit, "time");

  Scenario& sc = res.log.scenario;
  sc.name = "murp:" + meta.value("name", dir.filename().string());
  sc.noise = NoiseProfile::noiseless();
  for (const auto& ja : meta.at("agents")) {
    AgentSpec a;
    a.id = ja.at("id").get<std::string>();
    // Mount positions share the position unit; angles are degrees.
    AntennaArray arr = array_from_json(ja.at("array"));
    for (auto& m : arr.mounts) m = Pose3(m.rotation(), m.translation() * ps);
    a.array = std::move(arr);
    a.envelope = envelope_from_json(ja.at("envelope"));
    a.trajectory = TrajectorySpec::stationary(Vec3::Zero());
    sc.agents.push_back(std::move(a));
  }

  const auto rt = csv::read_table(dir / "ranges.csv");
  require_columns(rt, kMurpRangeCols, "ranges.csv");
  const auto mt = csv::read_table(dir / "mocap.csv");
  require_columns(mt, kMurpMocapCols, "mocap.csv");
  if (auto side = unknown_columns(rt, kMurpRangeCols); !side.header.empty()) res.sidecars["ranges.csv"] = side;
  if (auto side = unknown_columns(mt, kMurpMocapCols); !side.header.empty()) res.sidecars["mocap.csv"] = side;

  for (const auto& row : rt.rows) {
    RangeMeasurement m;
    m.time = csv::parse_double(row[rt.require("timestamp")], "timestamp") * ts;
    m.measuring_agent = row[rt.require("initiator")];
    m.target_agent = row[rt.require("responder")];
    m.antenna_i = static_cast<int>(csv::parse_int(row[rt.require("initiator_antenna")], "initiator_antenna"));
    m.antenna_j = static_cast<int>(csv::parse_int(row[rt.require("responder_antenna")], "responder_antenna"));
    m.range = csv::parse_double(row[rt.require("range")], "range") * rs;
    if (!(m.range >= 0.0)) throw InputError("murp: negative or non-finite range");
    res.log.ranges.push_back(std::move(m));
  }
  std::stable_sort(res.log.ranges.begin(), res.log.ranges.end(),
                   [](const auto& a, const auto& b) { return a.time < b.time; });

  for (const auto& row : mt.rows) {
    auto d = [&](const char* c) { return csv::parse_double(row[mt.require(c)], c); };
    Eigen::Quaterniond q(d("qw"), d("qx"), d("qy"), d("qz"));
    if (!(q.norm() > 0.0)) throw InputError("murp: zero quaternion in mocap.csv");
    q.normalize();
    PoseRecord p;
    p.time = d("timestamp") * ts;
    p.agent = row[mt.require("agent")];
    p.pose = Pose3(q.toRotationMatrix(), Vec3(d("x"), d("y"), d("z")) * ps);
    p.tuple = p.pose.to_tuple();
    res.log.poses.push_back(std::move(p));
    // Altitude and attitude as an onboard monitor would report them.
    res.log.envelopes.push_back({res.log.poses.back().agent,
                                 {p.tuple.z, p.tuple.roll, p.tuple.pitch, res.log.poses.back().time}});
  }
  std::stable_sort(res.log.poses.begin(), res.log.poses.end(),
                   [](const auto& a, const auto& b) { return a.time < b.time; });
  std::stable_sort(res.log.envelopes.begin(), res.log.envelopes.end(),
                   [](const auto& a, const auto& b) { return a.meas.time < b.meas.time; });

  double t0 = std::numeric_limits<double>::infinity(), t1 = -t0;
  for (const auto& r : res.log.ranges) {
    t0 = std::min(t0, r.time);
    t1 = std::max(t1, r.time);
  }
  sc.duration = res.log.ranges.empty() ? 1.0 : std::max(t1 - t0, 1e-3);
  sc.range_rate = meta.value("range_rate_hz", 25.0);

  res.report = {{"format", "murp"},
                {"source", dir.string()},
                {"units_in", {{"range", range_unit}, {"position", pos_unit}, {"time", time_unit}}},
                {"units_out", {{"range", "m"}, {"position", "m"}, {"time", "s"}, {"angle", "deg"}}},
                {"scale", {{"range", rs}, {"position", ps}, {"time", ts}}},
                {"counts", {{"ranges", res.log.ranges.size()}, {"poses", res.log.poses.size()}}},
                {"envelopes", "derived from mocap z, roll and pitch"},
                {"sidecars", nlohmann::json::array()}};
  for (const auto& [file, side] : res.sidecars) {
    res.report["sidecars"].push_back({{"file", file}, {"columns", side.header}});
  }
  return res;
}

}  // namespace detail

inline ImportResult import_dataset(const std::filesystem::path& path, DatasetFormat format) {
  if (!std::filesystem::exists(path)) throw SchemaError("import: path does not exist: " + path.string());
  if (format == DatasetFormat::simlog) {
    ImportResult r;
    r.log = read_bundle(path);
    r.report = {{"format", "simlog"}, {"source", path.string()}, {"conversion", "none"}};
    return r;
  }
  return detail::import_murp(path);
}

/// Writes the canonical bundle plus sidecars and the import report.
inline void write_import(const std::filesystem::path& dir, const ImportResult& r) {
  write_bundle(dir, r.log);
  for (const auto& [file, side] : r.sidecars) {
    csv::write_table(dir / (std::filesystem::path(file).stem().string() + ".extra.csv"), side);
  }
  if (r.report.value("format", std::string()) != "simlog") {
    std::ofstream out(dir / "import_report.json", std::ios::binary);
    out << r.report.dump(2) << '\n';
  }
}

}  // namespace uwbrel
