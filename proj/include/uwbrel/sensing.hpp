#pragma once

// UWB range observation model, elevation-dependent mean bias, and the
// generative noise model used by the simulator.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uwbrel/csv.hpp"
#include "uwbrel/error.hpp"
#include "uwbrel/geometry.hpp"
#include "uwbrel/random.hpp"

namespace uwbrel {

/// One noisy range between measuring_agent's antenna_i and target_agent's
/// antenna_j, as measured locally by measuring_agent.
struct RangeMeasurement {
  double time = 0.0;
  std::string measuring_agent;
  std::string target_agent;
  int antenna_i = 0;
  int antenna_j = 0;
  double range = 0.0;

  bool operator==(const RangeMeasurement&) const = default;
};

/// Horner evaluation of c0 + c1 x + ... + cd x^d.
inline double eval_polynomial(std::span<const double> coeffs, double x) {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

inline double eval_polynomial_derivative(std::span<const double> coeffs, double x) {
  double acc = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 1;) acc = acc * x + static_cast<double>(k) * coeffs[k];
  return acc;
}

/// Mean range bias as a polynomial over signed relative elevation (degrees).
struct BiasModel {
  std::vector<double> coefficients;  // metres per deg^k

  int degree() const { return static_cast<int>(coefficients.size()) - 1; }
  bool empty() const { return coefficients.empty(); }

  double evaluate(double elevation_deg) const { return eval_polynomial(coefficients, elevation_deg); }

  /// d(bias)/d(elevation), metres per degree.
  double slope(double elevation_deg) const {
    return eval_polynomial_derivative(coefficients, elevation_deg);
  }
};

struct BiasFit {
  BiasModel model;
  std::size_t sample_count = 0;
  double rms_residual = 0.0;
  double max_abs_residual = 0.0;
};

struct ElevationSample {
  double elevation_deg = 0.0;
  double error_m = 0.0;
};

/// Least-squares polynomial of the given degree over elevation.
///
/// The fit is carried out on elevation / 90 to keep the Vandermonde matrix
/// well conditioned, then mapped back to per-degree coefficients.
inline BiasFit fit_bias_polynomial(std::span<const ElevationSample> samples, int degree) {
  if (degree < 0) throw DomainError("fit_bias_polynomial: negative degree");
  const auto cols = static_cast<Eigen::Index>(degree + 1);
  if (samples.size() < static_cast<std::size_t>(degree + 1)) {
    throw ArityError("fit_bias_polynomial: " + std::to_string(samples.size()) +
                     " samples cannot determine a degree-" + std::to_string(degree) + " polynomial");
  }
  constexpr double kScale = 90.0;
  Eigen::MatrixXd V(static_cast<Eigen::Index>(samples.size()), cols);
  Eigen::VectorXd y(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const auto& s = samples[r];
    if (!std::isfinite(s.elevation_deg) || !std::isfinite(s.error_m)) {
      throw InputError("fit_bias_polynomial: non-finite sample");
    }
    const double u = s.elevation_deg / kScale;
    double p = 1.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      V(static_cast<Eigen::Index>(r), c) = p;
      p *= u;
    }
    y(static_cast<Eigen::Index>(r)) = s.error_m;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(V);
  qr.setThreshold(1e-12);
  if (qr.rank() < cols) {
    throw DegeneracyError("fit_bias_polynomial: design matrix is rank deficient (rank " +
                          std::to_string(qr.rank()) + " < " + std::to_string(cols) + ")");
  }
  const Eigen::VectorXd a = qr.solve(y);

  BiasFit fit;
  fit.model.coefficients.resize(static_cast<std::size_t>(cols));
  double scale_pow = 1.0;
  for (Eigen::Index c = 0; c < cols; ++c) {
    fit.model.coefficients[static_cast<std::size_t>(c)] = a(c) / scale_pow;
    scale_pow *= kScale;
  }
  const Eigen::VectorXd res = y - V * a;
  fit.sample_count = samples.size();
  fit.rms_residual = std::sqrt(res.squaredNorm() / static_cast<double>(samples.size()));
  fit.max_abs_residual = res.cwiseAbs().maxCoeff();
  return fit;
}

/// Generative ranging-noise parameters.
struct NoiseProfile {
  double base_sigma = 0.10;                // m, at zero elevation
  std::vector<double> sigma_vs_elevation;  // added to base_sigma; m per deg^k
  double tail_mixture_weight = 0.1;
  double tail_scale = 0.3;  // m
  double nlos_bias = 0.5;   // m
  double nlos_sigma_inflation = 3.0;
  std::uint64_t seed = 0;

  /// Synthetic default tuned to the qualitative shape of measured UWB error
  /// (positive tail, variance growing with |elevation|). Not calibration data.
  static NoiseProfile synthetic_default() {
    NoiseProfile p;
    p.sigma_vs_elevation = {0.0, 0.0, 2e-5};
    return p;
  }

  /// All-zero profile; ranges equal d + bias exactly.
  static NoiseProfile noiseless() {
    NoiseProfile p;
    p.base_sigma = 0.0;
    p.tail_mixture_weight = 0.0;
    p.tail_scale = 0.0;
    p.nlos_bias = 0.0;
    p.nlos_sigma_inflation = 1.0;
    return p;
  }

  double sigma_at(double elevation_deg) const {
    return std::max(0.0, base_sigma + eval_polynomial(sigma_vs_elevation, elevation_deg));
  }

  void validate() const {
    if (!(base_sigma >= 0.0)) throw ValidationError("noise: base_sigma must be >= 0");
    if (!(tail_mixture_weight >= 0.0 && tail_mixture_weight <= 1.0)) {
      throw ValidationError("noise: tail_mixture_weight must be in [0, 1]");
    }
    if (!(tail_scale >= 0.0)) throw ValidationError("noise: tail_scale must be >= 0");
    if (!(nlos_bias >= 0.0)) throw ValidationError("noise: nlos_bias must be >= 0");
    if (!(nlos_sigma_inflation >= 1.0)) throw ValidationError("noise: nlos_sigma_inflation must be >= 1");
  }
};

/// Vector from A's antenna i to B's antenna j, expressed in A's body frame.
inline Vec3 antenna_offset(const Pose3& T_AB, const AntennaArray& array_A, const AntennaArray& array_B,
                           std::size_t i, std::size_t j) {
  return T_AB.transform(array_B.point(j)) - array_A.point(i);
}

/// Noise-free distance between A's antenna i and B's antenna j.
inline double expected_range(const Pose3& T_AB, const AntennaArray& array_A, const AntennaArray& array_B,
                             std::size_t i, std::size_t j) {
  return antenna_offset(T_AB, array_A, array_B, i, j).norm();
}

/// Elevation of a translation above the xy-plane of its frame, degrees.
inline double elevation_of(const Vec3& t) {
  const double n = t.norm();
  if (!(n > 1e-9)) throw DegeneracyError("relative_elevation: zero-length translation");
  return rad_to_deg(std::asin(std::clamp(t.z() / n, -1.0, 1.0)));
}

inline double relative_elevation(const Pose3& T_AiBj) { return elevation_of(T_AiBj.translation()); }

/// Relative elevation of the (i, j) antenna pair, measured in antenna i's frame.
inline double pair_elevation(const Pose3& T_AB, const AntennaArray& array_A, const AntennaArray& array_B,
                             std::size_t i, std::size_t j) {
  if (i >= array_A.count() || j >= array_B.count()) throw ArityError("pair_elevation: antenna index out of range");
  return relative_elevation(relative_antenna_pose(T_AB, array_A.mounts[i], array_B.mounts[j]));
}

inline double bias_correction(const BiasModel& model, const Pose3& T_AB, const AntennaArray& array_A,
                              const AntennaArray& array_B, std::size_t i, std::size_t j) {
  return model.evaluate(pair_elevation(T_AB, array_A, array_B, i, j));
}

namespace detail {

/// Shortest distance between segments [p1, q1] and [p2, q2].
inline double segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
  const Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  constexpr double eps = 1e-18;
  double s = 0.0, t = 0.0;
  if (a <= eps && e <= eps) return r.norm();
  if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > eps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + s * d1) - (p2 + t * d2)).norm();
}

}  // namespace detail

/// Default vertical half-extent of the body cylinder around the antenna plane.
inline constexpr double kBodyHalfHeight = 0.05;

/// True when the line of sight between A's antenna i and B's antenna j passes
/// within body_radius of either agent's vertical body axis. The axis spans
/// +-body_half_height about each body origin.
inline bool is_occluded(const Pose3& T_AB, const AntennaArray& array_A, const AntennaArray& array_B,
                        std::size_t i, std::size_t j, double body_radius_A, double body_radius_B,
                        double body_half_height = kBodyHalfHeight) {
  if (body_radius_A < 0.0 || body_radius_B < 0.0) throw DomainError("is_occluded: negative body radius");
  const Vec3 from = array_A.point(i);
  const Vec3 to = T_AB.transform(array_B.point(j));
  const Vec3 up(0.0, 0.0, body_half_height);
  if (body_radius_A > 0.0 && detail::segment_distance(from, to, -up, up) < body_radius_A) return true;
  if (body_radius_B > 0.0 &&
      detail::segment_distance(from, to, T_AB.transform(-up), T_AB.transform(up)) < body_radius_B) {
    return true;
  }
  return false;
}

/// Ground-truth quantities a single range draw depends on.
struct PairGeometry {
  double distance = 0.0;
  double elevation_deg = 0.0;
};

/// max(0, d + bias(el) + eps), eps a Gaussian / positive-exponential mixture.
/// Consumes exactly three variates from rng per call.
inline double sample_range(const NoiseProfile& profile, const BiasModel& bias, const PairGeometry& geo,
                           bool occluded, Rng& rng) {
  const double pick = rng.uniform();
  const double gauss = rng.normal();
  const double tail = rng.exponential(1.0);
  double sigma = profile.sigma_at(geo.elevation_deg);
  double eps = 0.0;
  if (occluded) {
    sigma *= profile.nlos_sigma_inflation;
    eps += profile.nlos_bias;
  }
  if (pick < profile.tail_mixture_weight) {
    eps += profile.tail_scale * tail;
  } else {
    eps += sigma * gauss;
  }
  return std::max(0.0, geo.distance + bias.evaluate(geo.elevation_deg) + eps);
}

inline RangeMeasurement sample_measurement(const NoiseProfile& profile, const BiasModel& bias,
                                           const Pose3& T_AB, const AntennaArray& array_A,
                                           const AntennaArray& array_B, std::size_t i, std::size_t j,
                                           bool occluded, Rng& rng) {
  const Pose3 rel = relative_antenna_pose(T_AB, array_A.mounts.at(i), array_B.mounts.at(j));
  PairGeometry geo{rel.translation().norm(), relative_elevation(rel)};
  RangeMeasurement m;
  m.antenna_i = static_cast<int>(i);
  m.antenna_j = static_cast<int>(j);
  m.range = sample_range(profile, bias, geo, occluded, rng);
  return m;
}

// JSON with units in the field names: c<k>_m_per_deg<k>, sigma0_m, ...

inline std::string bias_coefficient_key(std::size_t k) {
  if (k == 0) return "c0_m";
  if (k == 1) return "c1_m_per_deg";
  return "c" + std::to_string(k) + "_m_per_deg" + std::to_string(k);
}

inline nlohmann::json bias_to_json(const BiasModel& m) {
  nlohmann::json j;
  j["degree"] = m.degree();
  j["domain"] = "signed_elevation_deg";
  for (std::size_t k = 0; k < m.coefficients.size(); ++k) j[bias_coefficient_key(k)] = m.coefficients[k];
  return j;
}

inline BiasModel bias_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("degree")) throw SchemaError("bias model JSON needs 'degree'");
  const int degree = j.at("degree").get<int>();
  if (degree < -1) throw SchemaError("bias model: invalid degree");
  if (j.contains("domain") && j.at("domain") != "signed_elevation_deg") {
    throw SchemaError("bias model: unsupported domain " + j.at("domain").dump());
  }
  BiasModel m;
  for (int k = 0; k <= degree; ++k) {
    const auto key = bias_coefficient_key(static_cast<std::size_t>(k));
    if (!j.contains(key)) throw SchemaError("bias model: missing " + key);
    m.coefficients.push_back(j.at(key).get<double>());
  }
  return m;
}

inline std::string sigma_coefficient_key(std::size_t k) {
  if (k == 0) return "s0_m";
  if (k == 1) return "s1_m_per_deg";
  return "s" + std::to_string(k) + "_m_per_deg" + std::to_string(k);
}

inline nlohmann::json noise_to_json(const NoiseProfile& p) {
  nlohmann::json sig = nlohmann::json::object();
  for (std::size_t k = 0; k < p.sigma_vs_elevation.size(); ++k) sig[sigma_coefficient_key(k)] = p.sigma_vs_elevation[k];
  return {{"sigma0_m", p.base_sigma},
          {"sigma_vs_elevation", sig},
          {"sigma_vs_elevation_degree", static_cast<int>(p.sigma_vs_elevation.size()) - 1},
          {"tail_mixture_weight", p.tail_mixture_weight},
          {"tail_scale_m", p.tail_scale},
          {"nlos_bias_m", p.nlos_bias},
          {"nlos_sigma_inflation", p.nlos_sigma_inflation},
          {"seed", p.seed}};
}

inline NoiseProfile noise_from_json(const nlohmann::json& j) {
  NoiseProfile p = NoiseProfile::synthetic_default();
  if (!j.is_object()) throw SchemaError("noise profile JSON must be an object");
  if (j.contains("sigma0_m")) p.base_sigma = j.at("sigma0_m").get<double>();
  if (j.contains("sigma_vs_elevation")) {
    const int deg = j.value("sigma_vs_elevation_degree", -1);
    p.sigma_vs_elevation.clear();
    for (int k = 0; k <= deg; ++k) {
      const auto key = sigma_coefficient_key(static_cast<std::size_t>(k));
      p.sigma_vs_elevation.push_back(j.at("sigma_vs_elevation").value(key, 0.0));
    }
  }
  if (j.contains("tail_mixture_weight")) p.tail_mixture_weight = j.at("tail_mixture_weight").get<double>();
  if (j.contains("tail_scale_m")) p.tail_scale = j.at("tail_scale_m").get<double>();
  if (j.contains("nlos_bias_m")) p.nlos_bias = j.at("nlos_bias_m").get<double>();
  if (j.contains("nlos_sigma_inflation")) p.nlos_sigma_inflation = j.at("nlos_sigma_inflation").get<double>();
  if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
  p.validate();
  return p;
}

// Measurement streams: time_s,meas_agent,targ_agent,ant_i,ant_j,range_m

inline const std::vector<std::string>& range_csv_header() {
  static const std::vector<std::string> h{"time_s", "meas_agent", "targ_agent", "ant_i", "ant_j", "range_m"};
  return h;
}

inline void write_ranges_csv(const std::filesystem::path& path, std::span<const RangeMeasurement> ranges) {
  csv::Table t;
  t.header = range_csv_header();
  t.rows.reserve(ranges.size());
  for (const auto& r : ranges) {
    t.rows.push_back({csv::format_double(r.time), r.measuring_agent, r.target_agent,
                      std::to_string(r.antenna_i), std::to_string(r.antenna_j), csv::format_double(r.range)});
  }
  csv::write_table(path, t);
}

inline std::vector<RangeMeasurement> ranges_from_table(const csv::Table& t) {
  const int ct = t.require("time_s"), cm = t.require("meas_agent"), cg = t.require("targ_agent");
  const int ci = t.require("ant_i"), cj = t.require("ant_j"), cr = t.require("range_m");
  std::vector<RangeMeasurement> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    RangeMeasurement m;
    m.time = csv::parse_double(row[ct], "time_s");
    m.measuring_agent = row[cm];
    m.target_agent = row[cg];
    m.antenna_i = static_cast<int>(csv::parse_int(row[ci], "ant_i"));
    m.antenna_j = static_cast<int>(csv::parse_int(row[cj], "ant_j"));
    m.range = csv::parse_double(row[cr], "range_m");
    if (!(m.range >= 0.0)) throw InputError("ranges: negative or non-finite range");
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<RangeMeasurement> read_ranges_csv(const std::filesystem::path& path) {
  return ranges_from_table(csv::read_table(path));
}

}  // namespace uwbrel
