#pragma once

// Rigid-body algebra and trilateration geometry.
//
// Conventions: T_AB maps points from frame B into frame A, p_A = R p_B + t.
// Rotations compose as R = Rz(yaw) * Ry(pitch) * Rx(roll). Angles are degrees
// at every public boundary and radians internally. The world frame has z = 0
// on the floor with gravity along -z.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uwbrel/error.hpp"

namespace uwbrel {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kDegPerRad = 180.0 / std::numbers::pi;
inline constexpr double kRadPerDeg = std::numbers::pi / 180.0;

inline double deg_to_rad(double deg) { return deg * kRadPerDeg; }
inline double rad_to_deg(double rad) { return rad * kDegPerRad; }

/// Wraps an angle to (-180, 180]; -180 maps to +180.
inline double wrap_deg(double deg) {
  double w = std::remainder(deg, 360.0);
  if (w <= -180.0) w += 360.0;
  return w;
}

inline double wrap_rad(double rad) {
  double w = std::remainder(rad, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
  return w;
}

inline Mat3 rot_x(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

inline Mat3 rot_y(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

inline Mat3 rot_z(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

/// Six-tuple view of a pose; angles in degrees.
struct PoseTuple {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  /// Set when |pitch| >= 89 deg; roll was forced to 0 during extraction.
  bool gimbal_locked = false;
};

/// Rigid transform in 3D.
class Pose3 {
 public:
  Pose3() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  /// Throws DomainError unless rotation is orthonormal with det +1 (1e-9).
  Pose3(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho <= 1e-9) || !(std::abs(rotation.determinant() - 1.0) <= 1e-9)) {
      throw DomainError("Pose3: rotation is not a proper orthonormal matrix");
    }
    if (!translation.allFinite()) throw DomainError("Pose3: non-finite translation");
  }

  static Pose3 identity() { return Pose3(); }

  static Pose3 from_translation(const Vec3& t) { return Pose3(Mat3::Identity(), t); }

  /// Builds R = Rz(yaw) Ry(pitch) Rx(roll), t = (x, y, z). Angles in degrees;
  /// roll and yaw must lie in [-180, 180], pitch in [-90, 90].
  static Pose3 from_tuple(double x, double y, double z, double roll, double pitch, double yaw) {
    auto check = [](double v, double lim, const char* name) {
      if (!std::isfinite(v) || v < -lim || v > lim) {
        throw DomainError(std::string("pose_from_tuple: ") + name + " = " + std::to_string(v) +
                          " outside [-" + std::to_string(lim) + ", " + std::to_string(lim) + "]");
      }
    };
    check(roll, 180.0, "roll");
    check(pitch, 90.0, "pitch");
    check(yaw, 180.0, "yaw");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      throw DomainError("pose_from_tuple: non-finite translation");
    }
    Pose3 p;
    p.rotation_ = rot_z(deg_to_rad(yaw)) * rot_y(deg_to_rad(pitch)) * rot_x(deg_to_rad(roll));
    p.translation_ = Vec3(x, y, z);
    return p;
  }

  static Pose3 from_tuple(const PoseTuple& t) {
    return from_tuple(t.x, t.y, t.z, t.roll, t.pitch, t.yaw);
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  Vec3 transform(const Vec3& p) const { return rotation_ * p + translation_; }

  Pose3 inverse() const {
    Pose3 inv;
    inv.rotation_ = rotation_.transpose();
    inv.translation_ = -(inv.rotation_ * translation_);
    return inv;
  }

  Pose3 operator*(const Pose3& rhs) const {
    Pose3 out;
    out.rotation_ = rotation_ * rhs.rotation_;
    out.translation_ = rotation_ * rhs.translation_ + translation_;
    return out;
  }

  /// Extracts the six-tuple; atan2 principal values, yaw/roll ties at +180.
  PoseTuple to_tuple() const {
    PoseTuple out;
    out.x = translation_.x();
    out.y = translation_.y();
    out.z = translation_.z();
    const double s = std::clamp(-rotation_(2, 0), -1.0, 1.0);
    const double pitch = std::asin(s);
    out.pitch = rad_to_deg(pitch);
    if (std::abs(out.pitch) >= 89.0) {
      out.gimbal_locked = true;
      out.roll = 0.0;
      out.yaw = rad_to_deg(std::atan2(-rotation_(0, 1), rotation_(1, 1)));
    } else {
      out.roll = rad_to_deg(std::atan2(rotation_(2, 1), rotation_(2, 2)));
      out.yaw = rad_to_deg(std::atan2(rotation_(1, 0), rotation_(0, 0)));
    }
    if (out.roll == -180.0) out.roll = 180.0;
    if (out.yaw == -180.0) out.yaw = 180.0;
    return out;
  }

  double yaw_deg() const { return to_tuple().yaw; }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

inline Pose3 pose_from_tuple(double x, double y, double z, double roll, double pitch, double yaw) {
  return Pose3::from_tuple(x, y, z, roll, pitch, yaw);
}

inline Vec3 transform_point(const Pose3& T, const Vec3& p) { return T.transform(p); }

/// Fixed body-frame mounting poses of an agent's ranging antennas.
struct AntennaArray {
  std::vector<Pose3> mounts;

  std::size_t count() const { return mounts.size(); }

  /// Antenna k position in the body frame.
  const Vec3& point(std::size_t k) const {
    if (k >= mounts.size()) {
      throw ArityError("antenna index " + std::to_string(k) + " out of range (count " +
                       std::to_string(mounts.size()) + ")");
    }
    return mounts[k].translation();
  }

  /// Throws if fewer than min_count antennas, or two antennas coincide.
  void validate(std::size_t min_count = 3) const {
    if (mounts.size() < min_count) {
      throw ArityError("antenna array needs at least " + std::to_string(min_count) +
                       " antennas, has " + std::to_string(mounts.size()));
    }
    for (std::size_t a = 0; a < mounts.size(); ++a) {
      if (!mounts[a].translation().allFinite()) throw InputError("antenna mount not finite");
      for (std::size_t b = a + 1; b < mounts.size(); ++b) {
        if ((mounts[a].translation() - mounts[b].translation()).norm() <= 1e-6) {
          throw DegeneracyError("antennas " + std::to_string(a) + " and " + std::to_string(b) +
                                " coincide");
        }
      }
    }
  }

  /// True when every antenna lies in the body z = height plane.
  bool is_planar(double height = 0.0, double tol = 1e-12) const {
    for (const auto& m : mounts) {
      if (std::abs(m.translation().z() - height) > tol) return false;
    }
    return true;
  }

  /// n antennas evenly spaced on a horizontal circle, first one on +x.
  static AntennaArray circular(std::size_t n, double radius, double height = 0.0) {
    AntennaArray arr;
    arr.mounts.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      arr.mounts.push_back(
          Pose3::from_translation(Vec3(radius * std::cos(ang), radius * std::sin(ang), height)));
    }
    return arr;
  }
};

/// Antenna-to-antenna pose T^{A_i}_{B_j} = (T^A_{A_i})^-1 T_AB T^B_{B_j}.
inline Pose3 relative_antenna_pose(const Pose3& T_AB, const Pose3& mount_i, const Pose3& mount_j) {
  return mount_i.inverse() * T_AB * mount_j;
}

/// Closed-form least-squares rigid alignment (unit-quaternion form):
/// returns T minimising sum |dst_k - T src_k|^2.
inline Pose3 horn_align(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw ArityError("horn_align: point set sizes differ");
  if (src.size() < 3) throw ArityError("horn_align: needs at least 3 point pairs");

  const double n = static_cast<double>(src.size());
  Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (!src[k].allFinite() || !dst[k].allFinite()) throw InputError("horn_align: non-finite point");
    src_mean += src[k];
    dst_mean += dst[k];
  }
  src_mean /= n;
  dst_mean /= n;

  Mat3 spread = Mat3::Zero();
  Mat3 M = Mat3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    const Vec3 a = src[k] - src_mean;
    const Vec3 b = dst[k] - dst_mean;
    spread += a * a.transpose();
    M += a * b.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Mat3> spread_eig(spread);
  const Vec3 ev = spread_eig.eigenvalues();  // ascending
  if (ev(2) <= 0.0 || ev(1) <= 1e-12 * ev(2)) {
    throw DegeneracyError("horn_align: source points are collinear or coincident");
  }

  const double Sxx = M(0, 0), Sxy = M(0, 1), Sxz = M(0, 2);
  const double Syx = M(1, 0), Syy = M(1, 1), Syz = M(1, 2);
  const double Szx = M(2, 0), Szy = M(2, 1), Szz = M(2, 2);
  Eigen::Matrix4d N;
  N << Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx,
       Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz,
       Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy,
       Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(N);
  const Eigen::Vector4d q = eig.eigenvectors().col(3);
  const Eigen::Quaterniond quat(q(0), q(1), q(2), q(3));
  Mat3 R = quat.normalized().toRotationMatrix();
  const Vec3 t = dst_mean - R * src_mean;
  return Pose3(R, t);
}

/// Mirrors p across the horizontal plane z = plane_z.
inline Vec3 reflect_across_plane(const Vec3& p, double plane_z) {
  return Vec3(p.x(), p.y(), 2.0 * plane_z - p.z());
}

struct DopReport {
  double position_dop = 0.0;
  double horizontal_dop = 0.0;
  double vertical_dop = 0.0;
  double geometry_matrix_condition = 0.0;
  bool degenerate = false;
};

inline constexpr double kDopConditionLimit = 1e12;

/// Dilution of precision of a range-only fix at target from base_points.
/// Singular geometry is reported through the degenerate flag, with infinite
/// DOP values.
inline DopReport position_dop(std::span<const Vec3> base_points, const Vec3& target) {
  if (base_points.size() < 3) {
    throw ArityError("position_dop: needs at least 3 base points, got " +
                     std::to_string(base_points.size()));
  }
  Eigen::MatrixXd G(static_cast<Eigen::Index>(base_points.size()), 3);
  for (std::size_t k = 0; k < base_points.size(); ++k) {
    const Vec3 los = target - base_points[k];
    const double len = los.norm();
    if (!(len > 1e-12)) throw DegeneracyError("position_dop: target coincides with a base point");
    G.row(static_cast<Eigen::Index>(k)) = (los / len).transpose();
  }
  const Mat3 GtG = G.transpose() * G;

  DopReport rep;
  Eigen::SelfAdjointEigenSolver<Mat3> eig(GtG);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(2);
  rep.geometry_matrix_condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(rep.geometry_matrix_condition <= kDopConditionLimit)) {
    rep.degenerate = true;
    rep.position_dop = rep.horizontal_dop = rep.vertical_dop =
        std::numeric_limits<double>::infinity();
    return rep;
  }
  const Mat3 Q = GtG.inverse();
  rep.position_dop = std::sqrt(Q(0, 0) + Q(1, 1) + Q(2, 2));
  rep.horizontal_dop = std::sqrt(Q(0, 0) + Q(1, 1));
  rep.vertical_dop = std::sqrt(Q(2, 2));
  return rep;
}

// JSON: { "mounts": [ {"x":..,"y":..,"z":..,"roll":..,"pitch":..,"yaw":..}, ... ] }

inline nlohmann::json pose_to_json(const Pose3& p) {
  const PoseTuple t = p.to_tuple();
  return {{"x", t.x}, {"y", t.y}, {"z", t.z}, {"roll", t.roll}, {"pitch", t.pitch}, {"yaw", t.yaw}};
}

inline Pose3 pose_from_json(const nlohmann::json& j) {
  auto get = [&](const char* key) {
    if (!j.contains(key)) return 0.0;
    if (!j.at(key).is_number()) throw SchemaError(std::string("pose field '") + key + "' is not a number");
    return j.at(key).get<double>();
  };
  return Pose3::from_tuple(get("x"), get("y"), get("z"), get("roll"), get("pitch"), get("yaw"));
}

inline nlohmann::json array_to_json(const AntennaArray& arr) {
  nlohmann::json mounts = nlohmann::json::array();
  for (const auto& m : arr.mounts) mounts.push_back(pose_to_json(m));
  return {{"mounts", mounts}};
}

inline AntennaArray array_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("mounts") || !j.at("mounts").is_array()) {
    throw SchemaError("antenna array JSON needs a 'mounts' array");
  }
  AntennaArray arr;
  for (const auto& m : j.at("mounts")) arr.mounts.push_back(pose_from_json(m));
  return arr;
}

}  // namespace uwbrel
