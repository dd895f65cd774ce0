#pragma once

// Trailing-window moving averages for range and pose streams.

#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uwbrel/error.hpp"
#include "uwbrel/geometry.hpp"

namespace uwbrel {

/// Averaging policy: arithmetic mean for scalars.
struct ArithmeticMean {
  double operator()(std::span<const double> xs) const {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  }
};

/// Circular mean of angles in degrees, result in (-180, 180].
inline double circular_mean_deg(std::span<const double> angles) {
  double s = 0.0, c = 0.0;
  for (double a : angles) {
    s += std::sin(deg_to_rad(a));
    c += std::cos(deg_to_rad(a));
  }
  return wrap_deg(rad_to_deg(std::atan2(s, c)));
}

/// Position and roll/pitch averaged arithmetically, yaw on the circle.
struct PoseMean {
  PoseTuple operator()(std::span<const PoseTuple> poses) const {
    PoseTuple out;
    std::vector<double> yaws;
    yaws.reserve(poses.size());
    for (const auto& p : poses) {
      out.x += p.x;
      out.y += p.y;
      out.z += p.z;
      out.roll += p.roll;
      out.pitch += p.pitch;
      yaws.push_back(p.yaw);
    }
    const double n = static_cast<double>(poses.size());
    out.x /= n;
    out.y /= n;
    out.z /= n;
    out.roll /= n;
    out.pitch /= n;
    out.yaw = circular_mean_deg(yaws);
    return out;
  }
};

/// Mean of the samples with time in (t - window, t].
template <typename Value, typename Mean>
class SmoothingFilter {
 public:
  explicit SmoothingFilter(double window_s, double rate_hz = 0.0) : window_(window_s), rate_(rate_hz) {
    if (!(window_s > 0.0)) throw DomainError("smoothing window must be > 0");
  }

  double window() const { return window_; }
  double rate() const { return rate_; }
  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }

  /// Adds a sample and returns the current average.
  Value push(double time, Value v) {
    if (!times_.empty() && time < times_.back()) {
      throw OrderingError("smoothing: timestamp " + std::to_string(time) + " precedes " +
                          std::to_string(times_.back()));
    }
    times_.push_back(time);
    values_.push_back(std::move(v));
    evict(time);
    return average();
  }

  /// Average at time now without adding a sample; empty when nothing is in
  /// the window.
  std::optional<Value> value_at(double now) {
    evict(now);
    if (values_.empty()) return std::nullopt;
    return average();
  }

  void clear() {
    times_.clear();
    values_.clear();
  }

 private:
  void evict(double now) {
    // 1e-9 s slack keeps exactly one window's worth of fixed-rate samples.
    while (!times_.empty() && times_.front() <= now - window_ + 1e-9) {
      times_.pop_front();
      values_.pop_front();
    }
  }

  Value average() const {
    std::vector<Value> buf(values_.begin(), values_.end());
    return Mean{}(std::span<const Value>(buf));
  }

  double window_;
  double rate_;
  std::deque<double> times_;
  std::deque<Value> values_;
};

using ScalarSmoother = SmoothingFilter<double, ArithmeticMean>;
using PoseSmoother = SmoothingFilter<PoseTuple, PoseMean>;

/// Smooths a whole timestamped stream.
template <typename Value, typename Mean>
std::vector<std::pair<double, Value>> smooth(SmoothingFilter<Value, Mean>& filter,
                                             std::span<const std::pair<double, Value>> stream) {
  std::vector<std::pair<double, Value>> out;
  out.reserve(stream.size());
  for (const auto& [t, v] : stream) out.emplace_back(t, filter.push(t, v));
  return out;
}

}  // namespace uwbrel
