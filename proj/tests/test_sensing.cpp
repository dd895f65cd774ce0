#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "uwbrel/sensing.hpp"
#include "uwbrel/smoothing.hpp"

using namespace uwbrel;

namespace {

AntennaArray single(const Vec3& p) {
  AntennaArray a;
  a.mounts = {Pose3::from_translation(p)};
  return a;
}

Pose3 random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-5.0, 5.0), ang(-179.0, 179.0), pit(-30.0, 30.0);
  return Pose3::from_tuple(pos(rng), pos(rng), pos(rng), ang(rng), pit(rng), ang(rng));
}

// Plain normal equations with partial-pivot Gaussian elimination, on u = el / 90.
std::vector<double> normal_equations_fit(const std::vector<ElevationSample>& s, int degree) {
  const int n = degree + 1;
  std::vector<std::vector<double>> A(n, std::vector<double>(n + 1, 0.0));
  for (const auto& e : s) {
    std::vector<double> row(n);
    double p = 1.0;
    for (int c = 0; c < n; ++c, p *= e.elevation_deg / 90.0) row[c] = p;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) A[r][c] += row[r] * row[c];
      A[r][n] += row[r] * e.error_m;
    }
  }
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    std::swap(A[col], A[piv]);
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = A[r][col] / A[col][col];
      for (int c = col; c <= n; ++c) A[r][c] -= f * A[col][c];
    }
  }
  std::vector<double> coeffs(n);
  double scale = 1.0;
  for (int c = 0; c < n; ++c, scale *= 90.0) coeffs[c] = A[c][n] / A[c][c] / scale;
  return coeffs;
}

double sum_sq_residual(const std::vector<ElevationSample>& s, const std::vector<double>& c) {
  double acc = 0.0;
  for (const auto& e : s) {
    double p = 1.0, v = 0.0;
    for (double k : c) {
      v += k * p;
      p *= e.elevation_deg;
    }
    acc += (e.error_m - v) * (e.error_m - v);
  }
  return acc;
}

}  // namespace

TEST(ExpectedRange, CoincidentAntennasGiveZero) {
  const AntennaArray a = single(Vec3::Zero());
  EXPECT_DOUBLE_EQ(expected_range(Pose3::identity(), a, a, 0, 0), 0.0);
}

TEST(ExpectedRange, GroundVehicleHeights) {
  const AntennaArray a = single(Vec3(0.32, 0, 1.75));
  const AntennaArray b = single(Vec3(0.32, 0, 0.5));
  const Pose3 T = Pose3::from_translation(Vec3(3, 0, -1.25));
  // Antenna B sits (3, 0, -2.5) from antenna A.
  EXPECT_NEAR(expected_range(T, a, b, 0, 0), std::sqrt(9.0 + 2.5 * 2.5), 1e-12);
  const AntennaArray a0 = single(Vec3(0.32, 0, 0));
  const AntennaArray b0 = single(Vec3(0.32, 0, 0));
  EXPECT_NEAR(expected_range(T, a0, b0, 0, 0), 3.25, 1e-12);
}

TEST(ExpectedRange, IndexOutOfRangeThrows) {
  const AntennaArray a = AntennaArray::circular(3, 0.3);
  EXPECT_THROW(expected_range(Pose3::identity(), a, a, 3, 0), ArityError);
  EXPECT_THROW(expected_range(Pose3::identity(), a, a, 0, 7), ArityError);
}

TEST(ExpectedRange, CrossCheckAndSymmetry) {
  std::mt19937_64 rng(21);
  const AntennaArray a = AntennaArray::circular(6, 0.32, 0.1);
  const AntennaArray b = AntennaArray::circular(4, 0.37, -0.05);
  for (int k = 0; k < 500; ++k) {
    const Pose3 T = random_pose(rng);
    const std::size_t i = static_cast<std::size_t>(k) % 6, j = static_cast<std::size_t>(k) % 4;
    const double d = expected_range(T, a, b, i, j);
    EXPECT_NEAR(d, relative_antenna_pose(T, a.mounts[i], b.mounts[j]).translation().norm(), 1e-12);
    EXPECT_NEAR(d, expected_range(T.inverse(), b, a, j, i), 1e-10);
  }
}

TEST(RelativeElevation, Examples) {
  EXPECT_DOUBLE_EQ(relative_elevation(Pose3::from_translation(Vec3(1, 0, 0))), 0.0);
  EXPECT_NEAR(relative_elevation(Pose3::from_translation(Vec3(0, 0, 5))), 90.0, 1e-12);
  EXPECT_NEAR(relative_elevation(Pose3::from_translation(Vec3(3, 0, -1.25))), -22.619864948040426, 1e-9);
  EXPECT_THROW(relative_elevation(Pose3::identity()), DegeneracyError);
}

TEST(BiasCorrection, ConstantAndLinearModels) {
  const AntennaArray a = AntennaArray::circular(3, 0.3);
  const Pose3 T = Pose3::from_tuple(2, 1, 0.7, 0, 0, 40);
  BiasModel c;
  c.coefficients = {0.1};
  EXPECT_DOUBLE_EQ(bias_correction(c, T, a, a, 0, 2), 0.1);
  BiasModel lin;
  lin.coefficients = {0.0, 0.01};
  const Pose3 level = Pose3::from_tuple(2, 1, 0, 0, 0, 40);
  EXPECT_NEAR(bias_correction(lin, level, a, a, 1, 2), 0.0, 1e-15);
}

TEST(BiasCorrection, InvariantToCommonWorldTranslation) {
  std::mt19937_64 rng(22);
  BiasModel m;
  m.coefficients = {0.1, 1e-3, 1.2e-4};
  const AntennaArray a = AntennaArray::circular(6, 0.32);
  const AntennaArray b = AntennaArray::circular(4, 0.37);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int k = 0; k < 200; ++k) {
    const Pose3 WA = random_pose(rng), WB = random_pose(rng);
    const Pose3 shift = Pose3::from_translation(Vec3(u(rng), u(rng), u(rng)));
    const double before = bias_correction(m, WA.inverse() * WB, a, b, 2, 3);
    const double after = bias_correction(m, (shift * WA).inverse() * (shift * WB), a, b, 2, 3);
    EXPECT_NEAR(before, after, 1e-9);
  }
}

TEST(FitBiasPolynomial, RecoversCubicExactly) {
  const std::vector<double> truth = {0.05, -2e-3, 3e-5, 4e-7};
  std::vector<ElevationSample> s;
  for (double el = -80; el <= 80; el += 2.5) s.push_back({el, eval_polynomial(truth, el)});
  const BiasFit fit = fit_bias_polynomial(s, 3);
  ASSERT_EQ(fit.model.degree(), 3);
  for (std::size_t k = 0; k < truth.size(); ++k) EXPECT_NEAR(fit.model.coefficients[k], truth[k], 1e-9);
  EXPECT_LT(fit.max_abs_residual, 1e-9);
}

TEST(FitBiasPolynomial, ConstantSignalDegreeSix) {
  std::vector<ElevationSample> s;
  for (double el = -60; el <= 60; el += 1.0) s.push_back({el, 0.25});
  const BiasFit fit = fit_bias_polynomial(s, 6);
  EXPECT_NEAR(fit.model.coefficients[0], 0.25, 1e-9);
  for (int k = 1; k <= 6; ++k) EXPECT_LT(std::abs(fit.model.coefficients[static_cast<std::size_t>(k)]), 1e-9);
}

TEST(FitBiasPolynomial, DegreeSixReproducesGeneratingPolynomial) {
  const std::vector<double> truth = {0.1, 1e-3, 1.2e-4, -2e-6, 3e-8, -1e-10, 2e-12};
  std::vector<ElevationSample> s;
  for (double el = -70; el <= 70; el += 0.5) s.push_back({el, eval_polynomial(truth, el)});
  const BiasFit fit = fit_bias_polynomial(s, 6);
  const AntennaArray a = single(Vec3::Zero());
  for (const auto& e : s) {
    const double rad = e.elevation_deg * std::acos(-1.0) / 180.0;
    const Pose3 T = Pose3::from_translation(Vec3(std::cos(rad), 0, std::sin(rad)) * 3.0);
    EXPECT_NEAR(bias_correction(fit.model, T, a, a, 0, 0), e.error_m, 1e-6);
  }
}

TEST(FitBiasPolynomial, NoisyFitIsAtLeastAsGoodAsNormalEquations) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::uniform_real_distribution<double> el(-75, 75);
  for (int degree : {1, 3, 6}) {
    std::vector<ElevationSample> s;
    for (int k = 0; k < 400; ++k) {
      const double e = el(rng);
      s.push_back({e, 0.1 + 1e-4 * e * e + noise(rng)});
    }
    const BiasFit fit = fit_bias_polynomial(s, degree);
    const double ours = sum_sq_residual(s, fit.model.coefficients);
    const double oracle = sum_sq_residual(s, normal_equations_fit(s, degree));
    EXPECT_LE(ours, oracle * (1.0 + 1e-9) + 1e-12);
    EXPECT_NEAR(fit.rms_residual, std::sqrt(ours / 400.0), 1e-9);
  }
}

TEST(FitBiasPolynomial, RejectsUnderdeterminedAndDegenerate) {
  std::vector<ElevationSample> few = {{0, 0}, {1, 0}, {2, 0}};
  EXPECT_THROW(fit_bias_polynomial(few, 6), ArityError);
  std::vector<ElevationSample> same(20, ElevationSample{10.0, 0.3});
  EXPECT_THROW(fit_bias_polynomial(same, 2), DegeneracyError);
}

TEST(IsOccluded, ElevatedFacingPairIsClear) {
  const AntennaArray a = AntennaArray::circular(4, 0.3);
  const Pose3 T = Pose3::from_tuple(5, 0, 1, 0, 0, 180);
  EXPECT_FALSE(is_occluded(T, a, a, 0, 0, 0.15, 0.15));
}

TEST(IsOccluded, FarSideAntennaThroughOwnBody) {
  const AntennaArray a = AntennaArray::circular(4, 0.3);
  const Pose3 T = Pose3::from_tuple(5, 0, 0, 0, 0, 0);
  // B's antenna 0 is on its far (+x) side; the line of sight crosses B's axis.
  EXPECT_TRUE(is_occluded(T, a, a, 0, 0, 0.15, 0.15));
  EXPECT_FALSE(is_occluded(T, a, a, 0, 2, 0.15, 0.15));
}

TEST(IsOccluded, ZeroRadiiNeverOcclude) {
  std::mt19937_64 rng(24);
  const AntennaArray a = AntennaArray::circular(6, 0.3);
  for (int k = 0; k < 300; ++k) {
    EXPECT_FALSE(is_occluded(random_pose(rng), a, a, static_cast<std::size_t>(k) % 6,
                             static_cast<std::size_t>(k / 6) % 6, 0.0, 0.0));
  }
  EXPECT_THROW(is_occluded(Pose3::identity(), a, a, 0, 1, -0.1, 0.0), DomainError);
}

TEST(SampleMeasurement, NoiselessProfileIsExact) {
  const AntennaArray a = AntennaArray::circular(6, 0.32);
  BiasModel m;
  m.coefficients = {0.1, 0, 1.2e-4};
  Rng rng(5);
  std::mt19937_64 prng(25);
  for (int k = 0; k < 200; ++k) {
    const Pose3 T = random_pose(prng);
    const auto r = sample_measurement(NoiseProfile::noiseless(), m, T, a, a, 1, 4, k % 2 == 0, rng);
    const double d = expected_range(T, a, a, 1, 4);
    EXPECT_DOUBLE_EQ(r.range, std::max(0.0, d + bias_correction(m, T, a, a, 1, 4)));
  }
}

TEST(SampleMeasurement, MonteCarloMomentsAndPositiveSkew) {
  const NoiseProfile p = NoiseProfile::synthetic_default();
  BiasModel m;
  m.coefficients = {0.1};
  const PairGeometry geo{3.0, 0.0};
  Rng rng(26);
  constexpr int N = 100000;
  double s1 = 0, s2 = 0, s3 = 0;
  std::vector<double> err(N);
  for (int k = 0; k < N; ++k) err[k] = sample_range(p, m, geo, false, rng) - (3.0 + 0.1);
  for (double e : err) s1 += e;
  const double mean = s1 / N;
  for (double e : err) {
    s2 += (e - mean) * (e - mean);
    s3 += (e - mean) * (e - mean) * (e - mean);
  }
  const double var = s2 / N;
  const double skew = (s3 / N) / std::pow(var, 1.5);
  const double w = p.tail_mixture_weight, sig = p.base_sigma, ts = p.tail_scale;
  const double expected_mean = w * ts;
  const double expected_var = (1 - w) * sig * sig + w * 2 * ts * ts - expected_mean * expected_mean;
  EXPECT_NEAR(mean, expected_mean, 3.0 * std::sqrt(expected_var / N));
  EXPECT_NEAR(var, expected_var, 0.05 * expected_var);
  EXPECT_GT(skew, 0.0);
}

TEST(SampleMeasurement, OcclusionRaisesMeanAndVariance) {
  const NoiseProfile p = NoiseProfile::synthetic_default();
  const BiasModel m;
  const PairGeometry geo{4.0, 5.0};
  Rng r1(27), r2(27);
  constexpr int N = 50000;
  double m0 = 0, v0 = 0, m1 = 0, v1 = 0;
  std::vector<double> clear(N), blocked(N);
  for (int k = 0; k < N; ++k) {
    clear[k] = sample_range(p, m, geo, false, r1);
    blocked[k] = sample_range(p, m, geo, true, r2);
    m0 += clear[k];
    m1 += blocked[k];
  }
  m0 /= N;
  m1 /= N;
  for (int k = 0; k < N; ++k) {
    v0 += (clear[k] - m0) * (clear[k] - m0);
    v1 += (blocked[k] - m1) * (blocked[k] - m1);
  }
  EXPECT_GT(m1, m0);
  EXPECT_GT(v1, v0);
}

TEST(SampleMeasurement, SameSeedIsBitReproducible) {
  const NoiseProfile p = NoiseProfile::synthetic_default();
  BiasModel m;
  m.coefficients = {0.1, 0, 1.2e-4};
  const PairGeometry geo{2.0, -15.0};
  Rng a(99), b(99), c(100);
  bool differs = false;
  for (int k = 0; k < 1000; ++k) {
    const double x = sample_range(p, m, geo, k % 3 == 0, a);
    EXPECT_EQ(x, sample_range(p, m, geo, k % 3 == 0, b));
    differs |= x != sample_range(p, m, geo, k % 3 == 0, c);
  }
  EXPECT_TRUE(differs);
}

TEST(SampleMeasurement, RangeIsNeverNegative) {
  NoiseProfile p = NoiseProfile::synthetic_default();
  p.base_sigma = 1.0;
  const BiasModel m;
  Rng rng(28);
  for (int k = 0; k < 10000; ++k) EXPECT_GE(sample_range(p, m, PairGeometry{0.05, 0.0}, false, rng), 0.0);
}

TEST(NoiseProfile, ValidationAndJsonRoundTrip) {
  NoiseProfile p = NoiseProfile::synthetic_default();
  p.seed = 17;
  const NoiseProfile back = noise_from_json(noise_to_json(p));
  EXPECT_EQ(back.base_sigma, p.base_sigma);
  EXPECT_EQ(back.sigma_vs_elevation, p.sigma_vs_elevation);
  EXPECT_EQ(back.tail_mixture_weight, p.tail_mixture_weight);
  EXPECT_EQ(back.seed, 17u);
  EXPECT_THROW(noise_from_json({{"tail_mixture_weight", 1.5}}), ValidationError);
  EXPECT_THROW(noise_from_json({{"nlos_bias_m", -0.1}}), ValidationError);
  EXPECT_THROW(noise_from_json({{"nlos_sigma_inflation", 0.5}}), ValidationError);
}

TEST(BiasModel, JsonRoundTripUsesUnitKeys) {
  BiasModel m;
  m.coefficients = {0.1, 2e-3, 1.2e-4};
  const auto j = bias_to_json(m);
  EXPECT_TRUE(j.contains("c0_m"));
  EXPECT_TRUE(j.contains("c1_m_per_deg"));
  EXPECT_TRUE(j.contains("c2_m_per_deg2"));
  EXPECT_EQ(bias_from_json(j).coefficients, m.coefficients);
  EXPECT_THROW(bias_from_json({{"degree", 1}, {"c0_m", 0.1}}), SchemaError);
}

TEST(RangeCsv, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "uwbrel_ranges_roundtrip.csv";
  std::vector<RangeMeasurement> rs = {{0.04, "A", "B", 0, 5, 3.1234567890123},
                                      {0.08, "B", "A", 2, 1, 0.1}};
  write_ranges_csv(path, rs);
  EXPECT_EQ(read_ranges_csv(path), rs);
  std::filesystem::remove(path);
}

TEST(Smoothing, FixedRateWindowKeepsExpectedCount) {
  ScalarSmoother s(1.0, 25.0);
  for (int k = 0; k < 100; ++k) s.push(k / 25.0, 1.0);
  EXPECT_EQ(s.size(), 25u);
  PoseSmoother p(4.0, 25.0);
  for (int k = 0; k < 300; ++k) p.push(k / 25.0, PoseTuple{});
  EXPECT_EQ(p.size(), 100u);
}

TEST(Smoothing, YawAveragesOnTheCircle) {
  const std::vector<double> yaws = {179.0, -179.0};
  EXPECT_NEAR(std::abs(circular_mean_deg(yaws)), 180.0, 1e-9);
  PoseSmoother p(4.0);
  p.push(0.0, PoseTuple{0, 0, 0, 0, 0, 170});
  const PoseTuple m = p.push(0.1, PoseTuple{1, 0, 0, 0, 0, -170});
  EXPECT_NEAR(m.x, 0.5, 1e-12);
  EXPECT_NEAR(std::abs(m.yaw), 180.0, 1e-9);
}

TEST(Smoothing, OutOfOrderTimestampThrows) {
  ScalarSmoother s(1.0);
  s.push(1.0, 0.0);
  EXPECT_THROW(s.push(0.5, 0.0), OrderingError);
  EXPECT_THROW(ScalarSmoother(0.0), DomainError);
}
