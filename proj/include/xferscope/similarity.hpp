#pragma once

// Linear centered kernel alignment and the impact score built on it.
//
//   CKA(X, Y) = ||Y~' X~||_F^2 / (||X~' X~||_F * ||Y~' Y~||_F)
//
// where ~ is column centering. Impact = 1 - CKA(base, finetuned).

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "xferscope/error.hpp"
#include "xferscope/tensor_store.hpp"

namespace xferscope {

using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDegenerateNorm = 1e-12;

enum class CkaMode { centered, paper_literal };

/// Similarity in [0, 1]; 1 = identical up to rotation and isotropic scale.
class CkaScore {
 public:
  explicit CkaScore(double raw) : raw_(raw), value_(std::clamp(raw, 0.0, 1.0)) {}
  double value() const noexcept { return value_; }
  /// Value before clamping, kept to measure rounding excursions.
  double unclamped() const noexcept { return raw_; }

 private:
  double raw_;
  double value_;
};

/// 1 - CKA(base, finetuned), in [0, 1]. 0 = space unchanged.
class ImpactScore {
 public:
  explicit ImpactScore(const CkaScore& cka) : value_(1.0 - cka.value()) {}
  double value() const noexcept { return value_; }

 private:
  double value_;
};

inline MatrixXdR to_eigen(const RepresentationMatrix& m) {
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
      m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
  return view.cast<double>();
}

inline void center_columns_inplace(MatrixXdR& x) { x.rowwise() -= x.colwise().mean(); }

/// X' X through a symmetric rank update, both triangles filled.
inline Eigen::MatrixXd cross_gram(const MatrixXdR& x) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

/// Column-centered copy, stored back at float precision.
inline RepresentationMatrix center_columns(const RepresentationMatrix& x) {
  MatrixXdR d = to_eigen(x);
  center_columns_inplace(d);
  std::vector<float> out(static_cast<std::size_t>(d.size()));
  for (Eigen::Index i = 0; i < d.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(d.data()[i]);
  return {x.rows(), x.cols(), std::move(out)};
}

namespace detail {

inline void require_same_rows(Eigen::Index a, Eigen::Index b) {
  if (a != b)
    throw Error(Errc::RowMismatch, std::to_string(a) + " vs " + std::to_string(b) + " rows");
}

inline double checked_ratio(double cross, double norm_x, double norm_y) {
  if (norm_x < kDegenerateNorm || norm_y < kDegenerateNorm)
    throw Error(Errc::DegenerateInput, "denominator norm below 1e-12 (constant columns?)");
  return cross / (norm_x * norm_y);
}

}  // namespace detail

/// Un-normalized alignment terms for already-centered inputs, feature route:
/// m x m cross products, O(N m^2).
struct AlignmentTerms {
  double cross_sq;  // ||Y' X||_F^2
  double norm_x;    // ||X' X||_F
  double norm_y;    // ||Y' Y||_F
};

inline AlignmentTerms alignment_terms_feature(const MatrixXdR& xc, const MatrixXdR& yc) {
  detail::require_same_rows(xc.rows(), yc.rows());
  return {(yc.transpose() * xc).squaredNorm(), (xc.transpose() * xc).norm(), (yc.transpose() * yc).norm()};
}

/// Same terms through N x N Gram matrices: <K, L>_F, ||K||_F, ||L||_F.
inline AlignmentTerms alignment_terms_gram(const MatrixXdR& xc, const MatrixXdR& yc) {
  detail::require_same_rows(xc.rows(), yc.rows());
  const Eigen::MatrixXd k = xc * xc.transpose();
  const Eigen::MatrixXd l = yc * yc.transpose();
  return {(k.array() * l.array()).sum(), k.norm(), l.norm()};
}

inline CkaScore cka_feature(MatrixXdR x, MatrixXdR y) {
  center_columns_inplace(x);
  center_columns_inplace(y);
  const auto t = alignment_terms_feature(x, y);
  return CkaScore(detail::checked_ratio(t.cross_sq, t.norm_x, t.norm_y));
}

inline CkaScore cka_gram(MatrixXdR x, MatrixXdR y) {
  center_columns_inplace(x);
  center_columns_inplace(y);
  const auto t = alignment_terms_gram(x, y);
  return CkaScore(detail::checked_ratio(t.cross_sq, t.norm_x, t.norm_y));
}

/// Evaluates 1 - ||X Y'||_F^2 / (||X X'||_F ||Y Y'||_F) on raw, uncentered
/// inputs, as an uncentered dissimilarity. Audit use only.
inline CkaScore cka_paper_literal(const MatrixXdR& x, const MatrixXdR& y) {
  detail::require_same_rows(x.rows(), y.rows());
  if (x.cols() != y.cols())
    throw Error(Errc::DomainError, "paper_literal needs equal widths for X Y', got " + std::to_string(x.cols()) +
                                       " and " + std::to_string(y.cols()));
  const Eigen::MatrixXd xy = x * y.transpose();
  const Eigen::MatrixXd xx = x * x.transpose();
  const Eigen::MatrixXd yy = y * y.transpose();
  return CkaScore(1.0 - detail::checked_ratio(xy.squaredNorm(), xx.norm(), yy.norm()));
}

/// Picks the cheaper route: feature space when the combined width is
/// below N, Gram space otherwise.
inline CkaScore cka_linear(const MatrixXdR& x, const MatrixXdR& y, CkaMode mode = CkaMode::centered) {
  detail::require_same_rows(x.rows(), y.rows());
  if (mode == CkaMode::paper_literal) return cka_paper_literal(x, y);
  if (std::max(x.cols(), y.cols()) < x.rows()) return cka_feature(x, y);
  return cka_gram(x, y);
}

inline CkaScore cka_linear(const RepresentationMatrix& x, const RepresentationMatrix& y,
                           CkaMode mode = CkaMode::centered) {
  if (x.rows() != y.rows())
    throw Error(Errc::RowMismatch, std::to_string(x.rows()) + " vs " + std::to_string(y.rows()) + " rows");
  return cka_linear(to_eigen(x), to_eigen(y), mode);
}

inline ImpactScore impact(const RepresentationMatrix& base, const RepresentationMatrix& finetuned) {
  return ImpactScore(cka_linear(base, finetuned, CkaMode::centered));
}

inline ImpactScore impact(const MatrixXdR& base, const MatrixXdR& finetuned) {
  return ImpactScore(cka_linear(base, finetuned, CkaMode::centered));
}

/// Base-side terms cached so one base matrix can be compared against many
/// finetuned matrices without recentering or recomputing ||X' X||.
class CenteredReference {
 public:
  explicit CenteredReference(const RepresentationMatrix& base) : xc_(to_eigen(base)) {
    center_columns_inplace(xc_);
    use_gram_ = xc_.cols() >= xc_.rows();
    if (use_gram_) {
      gram_ = xc_ * xc_.transpose();
      norm_ = gram_.norm();
    } else {
      norm_ = cross_gram(xc_).norm();
    }
  }

  Eigen::Index rows() const noexcept { return xc_.rows(); }

  ImpactScore impact_of(const RepresentationMatrix& finetuned) const {
    if (static_cast<Eigen::Index>(finetuned.rows()) != xc_.rows())
      throw Error(Errc::RowMismatch, std::to_string(xc_.rows()) + " vs " + std::to_string(finetuned.rows()) + " rows");
    MatrixXdR yc = to_eigen(finetuned);
    center_columns_inplace(yc);
    if (use_gram_ || yc.cols() >= yc.rows()) {
      const Eigen::MatrixXd l = yc * yc.transpose();
      const Eigen::MatrixXd k = use_gram_ ? gram_ : Eigen::MatrixXd(xc_ * xc_.transpose());
      return ImpactScore(CkaScore(detail::checked_ratio((k.array() * l.array()).sum(), norm_, l.norm())));
    }
    return ImpactScore(
        CkaScore(detail::checked_ratio((yc.transpose() * xc_).squaredNorm(), norm_, cross_gram(yc).norm())));
  }

 private:
  MatrixXdR xc_;
  Eigen::MatrixXd gram_;
  double norm_ = 0.0;
  bool use_gram_ = false;
};

}  // namespace xferscope
