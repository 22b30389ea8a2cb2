#pragma once

// Pearson / Spearman correlation with two-tailed Student-t significance, and
// a seeded permutation test used as an independent check of the t p-value.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xferscope/error.hpp"

namespace xferscope {

enum class Stars { none, one, two };

inline Stars stars_for(double p) {
  if (p < 0.01) return Stars::two;
  if (p < 0.05) return Stars::one;
  return Stars::none;
}

inline std::string_view stars_text(Stars s) {
  switch (s) {
    case Stars::two: return "**";
    case Stars::one: return "*";
    case Stars::none: return "";
  }
  return "";
}

struct CorrelationResult {
  double coefficient = 0.0;
  std::size_t n = 0;
  double p_value = 1.0;
  Stars stars = Stars::none;

  friend bool operator==(const CorrelationResult&, const CorrelationResult&) = default;
};

inline constexpr double kBetaTolerance = 1e-12;
inline constexpr int kBetaMaxIterations = 300;

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kBetaMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kBetaTolerance) return h;
  }
  throw Error(Errc::NonConvergence, "incomplete beta continued fraction (a=" + std::to_string(a) +
                                        ", b=" + std::to_string(b) + ", x=" + std::to_string(x) + ")");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error(Errc::DomainError, "incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw Error(Errc::DomainError, "incomplete beta needs x in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast below the mean; use the reflection above it.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-tailed p for a correlation coefficient under the t transform,
/// t = r sqrt((n-2)/(1-r^2)) with n-2 degrees of freedom.
inline double p_value_two_tailed(double r, std::size_t n) {
  if (!(std::abs(r) <= 1.0)) throw Error(Errc::DomainError, "|r| > 1");
  if (n < 3) throw Error(Errc::DomainError, "n must be at least 3");
  if (std::abs(r) == 1.0) return 0.0;
  if (r == 0.0) return 1.0;
  const double df = static_cast<double>(n - 2);
  const double t2 = r * r * df / (1.0 - r * r);
  // 2 P(T >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
  return std::clamp(incomplete_beta(df / 2.0, 0.5, df / (df + t2)), 0.0, 1.0);
}

namespace detail {

inline void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw Error(Errc::LengthMismatch, std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 3) throw Error(Errc::TooFewPairs, "need n >= 3, got " + std::to_string(x.size()));
}

/// Mean-removed copy and its Euclidean norm; throws on constant input.
inline std::vector<double> centered(std::span<const double> v, double& norm) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::vector<double> out(v.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] - mean;
    ss += out[i] * out[i];
  }
  norm = std::sqrt(ss);
  if (norm == 0.0 || !std::isfinite(norm)) throw Error(Errc::ConstantInput, "sequence has zero variance");
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double pearson_r(std::span<const double> x, std::span<const double> y) {
  double nx = 0.0, ny = 0.0;
  const auto cx = centered(x, nx);
  const auto cy = centered(y, ny);
  return std::clamp(dot(cx, cy) / (nx * ny), -1.0, 1.0);
}

inline CorrelationResult make_result(double r, std::size_t n) {
  const double p = p_value_two_tailed(r, n);
  return {r, n, p, stars_for(p)};
}

}  // namespace detail

inline CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y);
  return detail::make_result(detail::pearson_r(x, y), x.size());
}

/// Average ranks (1-based); ties share the mean of their rank span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

inline CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
  detail::check_pair(x, y);
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return detail::make_result(detail::pearson_r(rx, ry), x.size());
}

/// Fraction of seeded permutations of y whose |r| reaches the observed |r|,
/// (count + 1) / (iterations + 1).
inline double permutation_p(std::span<const double> x, std::span<const double> y, std::size_t iterations,
                            std::uint64_t seed) {
  detail::check_pair(x, y);
  if (iterations < 1000) throw Error(Errc::DomainError, "permutation test needs at least 1000 iterations");
  double nx = 0.0, ny = 0.0;
  const auto cx = detail::centered(x, nx);
  auto cy = detail::centered(y, ny);
  const double scale = nx * ny;
  const double observed = std::abs(detail::dot(cx, cy) / scale);
  // Tolerate rounding so permutations reproducing the observed pairing count.
  const double bar = observed - 1e-12;
  std::mt19937_64 rng(seed);
  std::size_t hits = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    // Fisher-Yates with an explicit bounded draw, so results do not depend on
    // the standard library's shuffle.
    for (std::size_t i = cy.size() - 1; i > 0; --i) {
      const std::uint64_t bound = i + 1;
      const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
      std::uint64_t draw = 0;
      do {
        draw = rng();
      } while (draw >= limit);
      std::swap(cy[i], cy[static_cast<std::size_t>(draw % bound)]);
    }
    if (std::abs(detail::dot(cx, cy) / scale) >= bar) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(iterations + 1);
}

}  // namespace xferscope
