#pragma once

// Constrained range-only relative pose solver.
//
// With z, roll and pitch fixed by the agents' announced envelopes, the
// relative pose T_AB is found by minimising
//
//   f(x, y, yaw) = sum_ij L( (d~_ij - bias_ij(T)) - d_ij(T) )
//
// over the remaining three free coordinates. Dropping z_fixed adds z as a
// fourth free coordinate; roll and pitch are always held at their
// constrained values.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "uwbrel/error.hpp"
#include "uwbrel/geometry.hpp"
#include "uwbrel/sensing.hpp"

namespace uwbrel {

struct LossConfig {
  enum class Kind { huber, squared };

  Kind kind = Kind::huber;
  double delta = 0.06;  // m

  static LossConfig huber(double delta = 0.06) { return {Kind::huber, delta}; }
  static LossConfig squared() { return {Kind::squared, 0.06}; }

  void validate() const {
    if (kind == Kind::huber && !(delta > 0.0)) throw ValidationError("loss: Huber delta must be > 0");
  }
};

/// squared: a^2.  huber: a^2/2 for |a| <= delta, delta (|a| - delta/2) beyond.
inline double loss(const LossConfig& cfg, double a) {
  if (cfg.kind == LossConfig::Kind::squared) return a * a;
  const double m = std::abs(a);
  return m <= cfg.delta ? 0.5 * a * a : cfg.delta * (m - 0.5 * cfg.delta);
}

/// dL/da.
inline double loss_derivative(const LossConfig& cfg, double a) {
  if (cfg.kind == LossConfig::Kind::squared) return 2.0 * a;
  return std::abs(a) <= cfg.delta ? a : std::copysign(cfg.delta, a);
}

/// Iteratively-reweighted curvature weight, L'(a) / a.
inline double loss_weight(const LossConfig& cfg, double a) {
  if (cfg.kind == LossConfig::Kind::squared) return 2.0;
  const double m = std::abs(a);
  return m <= cfg.delta ? 1.0 : cfg.delta / m;
}

/// Switches matching the ablation columns el_bias / z_fixed / Huber.
struct AblationFlags {
  bool el_bias = true;
  bool z_fixed = true;
  bool huber = true;

  bool operator==(const AblationFlags&) const = default;
};

struct SolverOptions {
  int max_iters = 200;
  double step_tol = 1e-8;
  double rel_decrease_tol = 1e-10;
  int yaw_starts = 8;
};

struct EstimationProblem {
  std::vector<RangeMeasurement> measurements;
  AntennaArray array_A;
  AntennaArray array_B;
  double z_rel = 0.0;      // m
  double roll_rel = 0.0;   // deg
  double pitch_rel = 0.0;  // deg
  std::optional<BiasModel> bias;
  LossConfig loss;
  AblationFlags ablation;

  /// Loss actually minimised: loss.delta with Huber when ablation.huber,
  /// otherwise squared error.
  LossConfig effective_loss() const {
    return ablation.huber ? LossConfig::huber(loss.delta) : LossConfig::squared();
  }

  bool uses_bias() const { return ablation.el_bias && bias.has_value() && !bias->empty(); }
};

struct PairResidual {
  int antenna_i = 0;
  int antenna_j = 0;
  double residual = 0.0;  // m
};

struct PoseEstimate {
  double x = 0.0;      // m
  double y = 0.0;      // m
  double yaw = 0.0;    // deg
  double z = 0.0;      // m
  double roll = 0.0;   // deg
  double pitch = 0.0;  // deg
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  /// z free with a mirror pose (z -> -z) of equal objective.
  bool ambiguous = false;
  std::vector<PairResidual> residuals;
  Pose3 pose;
};

/// Starting point for a warm-started solve. z is used only when z is free.
struct InitialGuess {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // deg
  std::optional<double> z;
};

/// Most recent measurement per (i, j) pair, keyed in row-major pair order.
/// Measurements older than now - max_age are dropped when max_age > 0.
inline std::vector<RangeMeasurement> stack_current(std::span<const RangeMeasurement> measurements,
                                                   double now = 0.0, double max_age = 0.0) {
  std::map<std::pair<int, int>, RangeMeasurement> latest;
  for (const auto& m : measurements) {
    if (max_age > 0.0 && m.time < now - max_age) continue;
    auto key = std::make_pair(m.antenna_i, m.antenna_j);
    auto it = latest.find(key);
    if (it == latest.end() || m.time >= it->second.time) latest[key] = m;
  }
  std::vector<RangeMeasurement> out;
  out.reserve(latest.size());
  for (auto& [k, m] : latest) out.push_back(std::move(m));
  return out;
}

/// (d~ - bias(candidate)) - d(candidate) for the current measurement of pair.
inline double residual(const EstimationProblem& problem, const Pose3& candidate, std::pair<int, int> pair) {
  const RangeMeasurement* found = nullptr;
  for (const auto& m : problem.measurements) {
    if (m.antenna_i == pair.first && m.antenna_j == pair.second && (!found || m.time >= found->time)) found = &m;
  }
  if (!found) {
    throw LookupError("residual: no measurement for pair (" + std::to_string(pair.first) + ", " +
                      std::to_string(pair.second) + ")");
  }
  const auto i = static_cast<std::size_t>(pair.first), j = static_cast<std::size_t>(pair.second);
  const double bias =
      problem.uses_bias() ? bias_correction(*problem.bias, candidate, problem.array_A, problem.array_B, i, j) : 0.0;
  return (found->range - bias) - expected_range(candidate, problem.array_A, problem.array_B, i, j);
}

namespace detail {

/// Free coordinates: x, y, yaw (radians), and z when z is free.
using Params = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;
using Jacobian = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, Eigen::Dynamic, 4>;

/// Precomputed objective over the free coordinates of one problem.
class Objective {
 public:
  explicit Objective(const EstimationProblem& p) : loss_(p.effective_loss()), z_free_(!p.ablation.z_fixed) {
    loss_.validate();
    if (!std::isfinite(p.z_rel) || !std::isfinite(p.roll_rel) || !std::isfinite(p.pitch_rel)) {
      throw InputError("solve: non-finite envelope constraint");
    }
    p.array_A.validate(1);
    p.array_B.validate(1);
    z_fixed_value_ = p.z_rel;
    roll_ = p.roll_rel;
    pitch_ = p.pitch_rel;
    tilt_ = rot_y(deg_to_rad(p.pitch_rel)) * rot_x(deg_to_rad(p.roll_rel));
    if (p.uses_bias()) bias_ = p.bias->coefficients;

    for (const auto& m : stack_current(p.measurements)) {
      if (!std::isfinite(m.range) || !std::isfinite(m.time)) throw InputError("solve: non-finite measurement");
      if (m.antenna_i < 0 || m.antenna_j < 0 || static_cast<std::size_t>(m.antenna_i) >= p.array_A.count() ||
          static_cast<std::size_t>(m.antenna_j) >= p.array_B.count()) {
        throw ArityError("solve: measurement antenna index out of range");
      }
      Term t;
      t.i = m.antenna_i;
      t.j = m.antenna_j;
      t.range = m.range;
      t.p_i = p.array_A.point(static_cast<std::size_t>(m.antenna_i));
      t.mount_i_T = p.array_A.mounts[static_cast<std::size_t>(m.antenna_i)].rotation().transpose();
      t.tilted_p_j = tilt_ * p.array_B.point(static_cast<std::size_t>(m.antenna_j));
      terms_.push_back(t);
    }
    if (terms_.size() < 3) {
      throw ObservabilityError("solve: " + std::to_string(terms_.size()) +
                               " usable antenna pairs; at least 3 are required");
    }
  }

  int dims() const { return z_free_ ? 4 : 3; }
  bool z_free() const { return z_free_; }
  std::size_t size() const { return terms_.size(); }
  const LossConfig& loss_config() const { return loss_; }

  double z_of(const Params& th) const { return z_free_ ? th(3) : z_fixed_value_; }

  /// Residuals, and their Jacobian when jac is non-null.
  void residuals(const Params& th, Eigen::VectorXd& r, Jacobian* jac) const {
    const double c = std::cos(th(2)), s = std::sin(th(2));
    const Vec3 t(th(0), th(1), z_of(th));
    r.resize(static_cast<Eigen::Index>(terms_.size()));
    if (jac) jac->resize(static_cast<Eigen::Index>(terms_.size()), dims());
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      const Term& tm = terms_[k];
      const Vec3& q = tm.tilted_p_j;
      const Vec3 rq(c * q.x() - s * q.y(), s * q.x() + c * q.y(), q.z());
      const Vec3 v = rq + t - tm.p_i;
      const double n = v.norm();
      double bias = 0.0, bias_slope_rad = 0.0;
      Vec3 u = Vec3::Zero();
      double sin_el = 0.0;
      if (!bias_.empty()) {
        u = tm.mount_i_T * v;
        sin_el = n > 0.0 ? std::clamp(u.z() / n, -1.0, 1.0) : 0.0;
        const double el_deg = rad_to_deg(std::asin(sin_el));
        bias = eval_polynomial(bias_, el_deg);
        bias_slope_rad = eval_polynomial_derivative(bias_, el_deg) * kDegPerRad;
      }
      const auto row = static_cast<Eigen::Index>(k);
      r(row) = (tm.range - bias) - n;
      if (!jac) continue;

      // dv/dx = e_x, dv/dy = e_y, dv/dz = e_z, dv/dyaw = Rz'(yaw) q.
      const Vec3 dv_yaw(-s * q.x() - c * q.y(), c * q.x() - s * q.y(), 0.0);
      const Vec3 vhat = n > 0.0 ? Vec3(v / n) : Vec3::Zero();
      auto d_norm = [&](const Vec3& dv) { return vhat.dot(dv); };
      auto d_bias = [&](const Vec3& dv) {
        if (bias_.empty() || !(n > 0.0)) return 0.0;
        const double dn = d_norm(dv);
        const double duz = tm.mount_i_T.row(2).dot(dv);
        const double ds = duz / n - u.z() * dn / (n * n);
        const double cos_el = std::sqrt(std::max(1e-300, 1.0 - sin_el * sin_el));
        return bias_slope_rad * ds / cos_el;
      };
      auto set = [&](int col, const Vec3& dv) { (*jac)(row, col) = -d_bias(dv) - d_norm(dv); };
      set(0, Vec3::UnitX());
      set(1, Vec3::UnitY());
      set(2, dv_yaw);
      if (z_free_) set(3, Vec3::UnitZ());
    }
  }

  double value(const Params& th) const {
    Eigen::VectorXd r;
    residuals(th, r, nullptr);
    return total_loss(r);
  }

  double total_loss(const Eigen::VectorXd& r) const {
    double f = 0.0;
    for (Eigen::Index k = 0; k < r.size(); ++k) f += loss(loss_, r(k));
    return f;
  }

  Eigen::VectorXd gradient(const Params& th) const {
    Eigen::VectorXd r;
    Jacobian J;
    residuals(th, r, &J);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dims());
    for (Eigen::Index k = 0; k < r.size(); ++k) g += loss_derivative(loss_, r(k)) * J.row(k).transpose();
    return g;
  }

  /// Initial (x, y) from linear trilateration of B's array centre against
  /// A's antennas, and a |z| magnitude estimate.
  std::tuple<double, double, double> coarse_position(const EstimationProblem& p) const {
    const std::size_t nA = p.array_A.count();
    std::vector<double> sum_sq(nA, 0.0), count(nA, 0.0);
    double spread_B = 0.0;
    for (std::size_t j = 0; j < p.array_B.count(); ++j) spread_B += p.array_B.point(j).squaredNorm();
    spread_B /= static_cast<double>(p.array_B.count());
    for (const auto& tm : terms_) {
      sum_sq[static_cast<std::size_t>(tm.i)] += tm.range * tm.range;
      count[static_cast<std::size_t>(tm.i)] += 1.0;
    }
    std::vector<std::size_t> used;
    std::vector<double> r2(nA, 0.0);
    for (std::size_t i = 0; i < nA; ++i) {
      if (count[i] > 0.0) {
        used.push_back(i);
        r2[i] = std::max(0.0, sum_sq[i] / count[i] - spread_B);
      }
    }
    double mean_r = 0.0;
    for (auto i : used) mean_r += std::sqrt(r2[i]);
    mean_r /= static_cast<double>(std::max<std::size_t>(1, used.size()));

    double x = mean_r, y = 0.0;
    if (used.size() >= 3) {
      // |c - p_i|^2 = r_i^2, differenced against the first used antenna.
      const std::size_t ref = used.front();
      const Vec3& p0 = p.array_A.point(ref);
      const double cz = z_fixed_value_;
      Eigen::MatrixXd A(static_cast<Eigen::Index>(used.size() - 1), 2);
      Eigen::VectorXd b(static_cast<Eigen::Index>(used.size() - 1));
      for (std::size_t k = 1; k < used.size(); ++k) {
        const Vec3& pk = p.array_A.point(used[k]);
        const auto row = static_cast<Eigen::Index>(k - 1);
        A(row, 0) = 2.0 * (pk.x() - p0.x());
        A(row, 1) = 2.0 * (pk.y() - p0.y());
        b(row) = r2[ref] - r2[used[k]] + pk.squaredNorm() - p0.squaredNorm() - 2.0 * cz * (pk.z() - p0.z());
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
      if (qr.rank() == 2) {
        const Eigen::Vector2d c = qr.solve(b);
        if (c.allFinite()) {
          x = c(0);
          y = c(1);
        }
      }
    }
    double z2 = 0.0;
    for (auto i : used) {
      const Vec3& pi = p.array_A.point(i);
      z2 += r2[i] - (x - pi.x()) * (x - pi.x()) - (y - pi.y()) * (y - pi.y());
    }
    z2 /= static_cast<double>(std::max<std::size_t>(1, used.size()));
    return {x, y, std::sqrt(std::max(0.0, z2))};
  }

  struct Term {
    int i = 0;
    int j = 0;
    double range = 0.0;
    Vec3 p_i;
    Mat3 mount_i_T;
    Vec3 tilted_p_j;
  };

  const std::vector<Term>& terms() const { return terms_; }
  double roll() const { return roll_; }
  double pitch() const { return pitch_; }

 private:
  LossConfig loss_;
  bool z_free_;
  double z_fixed_value_ = 0.0;
  double roll_ = 0.0;
  double pitch_ = 0.0;
  Mat3 tilt_;
  std::vector<double> bias_;
  std::vector<Term> terms_;
};

struct LocalResult {
  Params params;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) with IRLS curvature for Huber.
inline LocalResult minimise(const Objective& obj, Params th, const SolverOptions& opt) {
  const int n = obj.dims();
  Eigen::VectorXd r;
  Jacobian J;
  obj.residuals(th, r, &J);
  double f = obj.total_loss(r);
  double lambda = 1e-3;
  LocalResult out;
  for (int it = 0; it < opt.max_iters; ++it) {
    out.iterations = it + 1;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd H_exact_gn = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    const LossConfig& lc = obj.loss_config();
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      const auto row = J.row(k);
      H.noalias() += loss_weight(lc, r(k)) * row.transpose() * row;
      g.noalias() += loss_derivative(lc, r(k)) * row.transpose();
      if (obj.z_free()) {
        const double l2 = lc.kind == LossConfig::Kind::squared ? 2.0 : (std::abs(r(k)) <= lc.delta ? 1.0 : 0.0);
        H_exact_gn.noalias() += l2 * row.transpose() * row;
      }
    }
    if (obj.z_free()) {
      // Gauss-Newton curvature vanishes along z near the mirror plane, so
      // add the residual second-order term (full Hessian from the differenced
      // analytic gradient, minus its Gauss-Newton part).
      const double h = 1e-6;
      Eigen::MatrixXd Hf(n, n);
      for (int d = 0; d < n; ++d) {
        Params up = th, dn = th;
        up(d) += h;
        dn(d) -= h;
        Hf.col(d) = (obj.gradient(up) - obj.gradient(dn)) / (2.0 * h);
      }
      H += 0.5 * (Hf + Hf.transpose()) - H_exact_gn;
    }
    if (g.cwiseAbs().maxCoeff() == 0.0 || f == 0.0) {
      out.converged = true;
      break;
    }
    bool stepped = false;
    while (!stepped) {
      // Marquardt scaling with a floor, so a direction with vanishing
      // Gauss-Newton curvature is still damped.
      Eigen::MatrixXd A = H;
      const double floor = std::max(1e-3 * H.diagonal().maxCoeff(), 1e-9);
      for (int d = 0; d < n; ++d) A(d, d) += lambda * std::max(H(d, d), floor);
      const auto ldlt = A.ldlt();
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any()) {
        lambda = std::max(lambda * 4.0, 1e-6);
        if (lambda > 1e16) break;
        continue;
      }
      const Eigen::VectorXd step = ldlt.solve(-g);
      Params cand = th + step;
      cand(2) = wrap_rad(cand(2));
      Eigen::VectorXd r_new;
      obj.residuals(cand, r_new, nullptr);
      const double f_new = obj.total_loss(r_new);
      const double step_norm = step.norm();
      if (std::isfinite(f_new) && f_new < f) {
        const double rel = (f - f_new) / std::max(f, std::numeric_limits<double>::min());
        th = cand;
        f = f_new;
        obj.residuals(th, r, &J);
        lambda = std::max(lambda / 3.0, 1e-12);
        stepped = true;
        if (step_norm < opt.step_tol && rel < opt.rel_decrease_tol) out.converged = true;
      } else {
        // No descent along a step shorter than the tolerance: stationary.
        if (step_norm < opt.step_tol) {
          out.converged = true;
          stepped = true;
        }
        lambda *= 4.0;
        if (lambda > 1e16) stepped = true;
      }
    }
    if (out.converged || lambda > 1e16) break;
  }
  out.params = th;
  out.objective = f;
  return out;
}

}  // namespace detail

/// Sum of losses at an arbitrary candidate pose (independent of the free
/// parameterisation; used by tests and the mirror check).
inline double objective_at(const EstimationProblem& problem, const Pose3& candidate) {
  const LossConfig l = problem.effective_loss();
  double f = 0.0;
  for (const auto& m : stack_current(problem.measurements)) {
    f += loss(l, residual(problem, candidate, {m.antenna_i, m.antenna_j}));
  }
  return f;
}

/// Objective and gradient over the free coordinates (x, y, yaw in radians,
/// and z when z is free). Exposed for gradient verification.
inline double objective_value(const EstimationProblem& problem, std::span<const double> free_params) {
  detail::Objective obj(problem);
  detail::Params th(obj.dims());
  for (int k = 0; k < obj.dims(); ++k) th(k) = free_params[static_cast<std::size_t>(k)];
  return obj.value(th);
}

inline std::vector<double> objective_gradient(const EstimationProblem& problem, std::span<const double> free_params) {
  detail::Objective obj(problem);
  detail::Params th(obj.dims());
  for (int k = 0; k < obj.dims(); ++k) th(k) = free_params[static_cast<std::size_t>(k)];
  const Eigen::VectorXd g = obj.gradient(th);
  return {g.data(), g.data() + g.size()};
}

/// Local minimiser of the constrained objective over (x, y, yaw) (plus z
/// when ablation.z_fixed is off). With no initial guess, or when the
/// warm-started run fails to converge, a multi-start over evenly spaced
/// yaws is used.
inline PoseEstimate solve(const EstimationProblem& problem, std::optional<InitialGuess> init = std::nullopt,
                          const SolverOptions& options = {}) {
  detail::Objective obj(problem);
  const int n = obj.dims();

  std::optional<detail::LocalResult> best;
  int total_iters = 0;
  auto run = [&](detail::Params th) {
    auto res = detail::minimise(obj, std::move(th), options);
    total_iters += res.iterations;
    if (!best || res.objective < best->objective ||
        (res.objective == best->objective && res.converged && !best->converged)) {
      best = std::move(res);
    }
  };

  if (init) {
    detail::Params th(n);
    th(0) = init->x;
    th(1) = init->y;
    th(2) = deg_to_rad(wrap_deg(init->yaw));
    if (obj.z_free()) th(3) = init->z.value_or(problem.z_rel);
    run(th);
  }
  if (!best || !best->converged) {
    const auto [x0, y0, zmag] = obj.coarse_position(problem);
    std::vector<double> z_starts{0.0};
    // Off the mirror plane, where the z gradient vanishes identically.
    if (obj.z_free()) z_starts = {std::max(zmag, 0.25), -std::max(zmag, 0.25)};
    const int starts = std::max(1, options.yaw_starts);
    for (double z0 : z_starts) {
      for (int k = 0; k < starts; ++k) {
        detail::Params th(n);
        th(0) = x0;
        th(1) = y0;
        th(2) = wrap_rad(-std::numbers::pi + 2.0 * std::numbers::pi * k / starts);
        if (obj.z_free()) th(3) = z0;
        run(th);
      }
    }
  }

  PoseEstimate est;
  const auto& th = best->params;
  est.x = th(0);
  est.y = th(1);
  est.yaw = wrap_deg(rad_to_deg(th(2)));
  est.z = obj.z_of(th);
  est.roll = problem.roll_rel;
  est.pitch = problem.pitch_rel;
  est.iterations = total_iters;
  est.converged = best->converged;
  est.pose = Pose3::from_tuple(est.x, est.y, est.z, est.roll, est.pitch, est.yaw);

  Eigen::VectorXd r;
  obj.residuals(th, r, nullptr);
  est.objective = 0.0;
  const LossConfig l = obj.loss_config();
  for (std::size_t k = 0; k < obj.size(); ++k) {
    const double rk = r(static_cast<Eigen::Index>(k));
    est.residuals.push_back({obj.terms()[k].i, obj.terms()[k].j, rk});
    est.objective += loss(l, rk);
  }

  if (obj.z_free() && std::abs(est.z) > 1e-6) {
    detail::Params mirror = th;
    mirror(3) = -th(3);
    const double f_mirror = obj.value(mirror);
    est.ambiguous = std::abs(f_mirror - est.objective) <= 1e-9 * std::max(1.0, est.objective);
  }
  return est;
}

struct GridBounds {
  double x_min = -1.0, x_max = 1.0;
  double y_min = -1.0, y_max = 1.0;
  double yaw_min = -180.0, yaw_max = 180.0;  // deg; a full turn is treated as periodic
};

struct GridResolution {
  int nx = 64;
  int ny = 64;
  int nyaw = 72;
};

struct GridResult {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double objective = std::numeric_limits<double>::infinity();
};

/// Grid axis values: inclusive endpoints for linear axes, a single cell at
/// the midpoint, and [min, min + span) for a periodic full turn.
inline std::vector<double> grid_axis(double lo, double hi, int n, bool periodic) {
  std::vector<double> v;
  if (n <= 0) throw DomainError("grid_oracle: resolution must be positive");
  if (n == 1) return {0.5 * (lo + hi)};
  for (int k = 0; k < n; ++k) {
    v.push_back(periodic ? lo + (hi - lo) * k / n : lo + (hi - lo) * k / (n - 1));
  }
  return v;
}

/// Exhaustive objective evaluation over an (x, y, yaw) grid; z is held at
/// problem.z_rel. Test and acceptance oracle only.
inline GridResult grid_oracle(const EstimationProblem& problem, const GridBounds& bounds, const GridResolution& res) {
  const double cells = static_cast<double>(res.nx) * res.ny * res.nyaw;
  if (cells > 1e8) throw ResourceError("grid_oracle: grid of " + std::to_string(cells) + " cells exceeds 1e8");
  for (double b : {bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max, bounds.yaw_min, bounds.yaw_max}) {
    if (!std::isfinite(b)) throw DomainError("grid_oracle: bounds must be finite");
  }
  EstimationProblem fixed = problem;
  fixed.ablation.z_fixed = true;
  detail::Objective obj(fixed);

  const bool periodic = std::abs((bounds.yaw_max - bounds.yaw_min) - 360.0) < 1e-9;
  const auto xs = grid_axis(bounds.x_min, bounds.x_max, res.nx, false);
  const auto ys = grid_axis(bounds.y_min, bounds.y_max, res.ny, false);
  const auto yaws = grid_axis(bounds.yaw_min, bounds.yaw_max, res.nyaw, periodic);

  GridResult out;
  detail::Params th(3);
  for (double yaw : yaws) {
    th(2) = deg_to_rad(yaw);
    for (double x : xs) {
      th(0) = x;
      for (double y : ys) {
        th(1) = y;
        const double f = obj.value(th);
        if (f < out.objective) out = {x, y, yaw, f};
      }
    }
  }
  return out;
}

}  // namespace uwbrel
