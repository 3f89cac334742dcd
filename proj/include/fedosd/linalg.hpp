#pragma once

// Gradient-geometry kernels: Gram matrix, symmetric eigendecomposition,
// steepest descent restricted to the null space of the remaining clients'
// gradients, and normal-plane projection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedosd/error.hpp"
#include "fedosd/matrix.hpp"
#include "fedosd/nn.hpp"

namespace fedosd {

inline constexpr double kDefaultRankTol = 1e-10;
inline constexpr double kDefaultNullTol = 1e-9;
inline constexpr double kDefaultConflictTol = 1e-8;

/// Remaining-client gradients stacked as rows, in ascending client-id order.
class GradientMatrix {
 public:
  GradientMatrix() = default;
  explicit GradientMatrix(std::size_t dim) : dim_(dim) {}

  /// Rows must arrive with strictly increasing client ids.
  void add(std::size_t client_id, std::span<const double> g) {
    if (rows_.empty() && dim_ == 0) dim_ = g.size();
    if (g.size() != dim_)
      throw PreconditionError("gradient row has length " + std::to_string(g.size()) +
                              ", expected " + std::to_string(dim_));
    if (!ids_.empty() && client_id <= ids_.back())
      throw PreconditionError("gradient rows must be added in ascending client-id order");
    rows_.emplace_back(g.begin(), g.end());
    ids_.push_back(client_id);
  }

  void add(std::size_t client_id, const GradVec& g) { add(client_id, std::span<const double>(g.flat)); }

  std::size_t rows() const { return rows_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return rows_.empty(); }
  std::span<const double> row(std::size_t i) const { return rows_[i]; }
  const std::vector<std::size_t>& client_ids() const { return ids_; }

 private:
  std::size_t dim_ = 0;
  std::vector<std::vector<double>> rows_;
  std::vector<std::size_t> ids_;
};

/// G G^T.
inline Matrix gram(const GradientMatrix& g) {
  const std::size_t k = g.rows();
  Matrix a(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      const double v = dot(g.row(i), g.row(j));
      a(i, j) = v;
      a(j, i) = v;
    }
  }
  return a;
}

/// Eigenpairs of a symmetric matrix. values are descending; column k of
/// `vectors` is the unit eigenvector for values[k].
struct EigenDecomp {
  std::vector<double> values;
  Matrix vectors;
};

/// Cyclic Jacobi rotations.
inline EigenDecomp sym_eig(const Matrix& input, int max_sweeps = 100) {
  if (input.rows != input.cols) throw PreconditionError("sym_eig needs a square matrix");
  const std::size_t n = input.rows;
  const double scale_ref = frobenius_norm(input);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(input(i, j) - input(j, i)) > 1e-10 * std::max(scale_ref, 1e-300))
        throw PreconditionError("sym_eig input is not symmetric");

  Matrix a = input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (input(i, j) + input(j, i));
  Matrix v = Matrix::identity(n);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  bool converged = n < 2 || scale_ref == 0.0;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = off_norm() <= 1e-15 * scale_ref;
  }
  if (!converged)
    throw NumericalError("Jacobi eigensolver did not converge in " + std::to_string(max_sweeps) +
                         " sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  EigenDecomp out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

/// Orthogonal projector onto null(G), built from the eigendecomposition of
/// G G^T: the rows (1/sqrt(s_k)) q_k^T G for s_k > tol_rank * s_max form an
/// orthonormal basis of rowspace(G).
class NullSpaceProjector {
 public:
  explicit NullSpaceProjector(const GradientMatrix& g, double tol_rank = kDefaultRankTol)
      : dim_(g.dim()) {
    if (g.empty()) return;
    const EigenDecomp eig = sym_eig(gram(g));
    const double smax = eig.values.front();
    if (!(smax > 0.0)) return;
    for (std::size_t k = 0; k < eig.values.size(); ++k) {
      const double s = eig.values[k];
      if (s <= tol_rank * smax) break;
      std::vector<double> b(dim_, 0.0);
      for (std::size_t i = 0; i < g.rows(); ++i) axpy(eig.vectors(i, k), g.row(i), b);
      scale(b, 1.0 / std::sqrt(s));
      basis_.push_back(std::move(b));
    }
  }

  std::size_t rank() const { return basis_.size(); }
  std::size_t dim() const { return dim_; }
  bool trivial() const { return rank() >= dim_; }

  /// (I - B^T B) x, applied twice to absorb the basis' loss of orthogonality.
  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> out(x.begin(), x.end());
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<double> coef(basis_.size());
      for (std::size_t k = 0; k < basis_.size(); ++k) coef[k] = dot(basis_[k], out);
      for (std::size_t k = 0; k < basis_.size(); ++k) axpy(-coef[k], basis_[k], out);
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::vector<std::vector<double>> basis_;
};

namespace detail {

inline void check_osd_inputs(const GradientMatrix& g, const GradVec& g_u) {
  if (!g.empty() && g.dim() != g_u.size())
    throw PreconditionError("target gradient length does not match gradient matrix rows");
  if (!(norm(g_u.flat) > 0.0)) throw PreconditionError("target gradient is zero");
}

}  // namespace detail

/// The direction of norm ||g_u|| in null(G) closest to -g_u, or
/// nullopt when g_u lies in rowspace(G) (the projected residual is at most
/// tol_null * ||g_u||).
inline std::optional<GradVec> osd_direction(const GradientMatrix& g, const GradVec& g_u,
                                            double tol_rank = kDefaultRankTol,
                                            double tol_null = kDefaultNullTol) {
  detail::check_osd_inputs(g, g_u);
  const double gu_norm = norm(g_u.flat);
  std::vector<double> neg(g_u.flat);
  scale(neg, -1.0);
  if (g.empty()) return GradVec(std::move(neg));

  const NullSpaceProjector proj(g, tol_rank);
  std::vector<double> d = proj.apply(neg);
  const double r = norm(d);
  if (r <= tol_null * gu_norm) return std::nullopt;
  scale(d, gu_norm / r);
  return GradVec(std::move(d));
}

/// Lagrange multiplier of the norm constraint ||d|| = ||g_u|| given the
/// pseudoinverse residual norm ||G^T (GG^T)^+ G g_u - g_u||. The constraint
/// fixes the power of ||g_u|| at 3.
inline double osd_norm_multiplier(double residual_norm, double gu_norm) {
  return residual_norm / (2.0 * gu_norm * gu_norm * gu_norm);
}

/// The same direction through the closed form
///   d = (G^T U S^+ V^T G g_u - g_u) / (2 ||g_u||^2 mu)
/// with GG^T = V S U^T realized by a symmetric eigendecomposition (U = V).
inline std::optional<GradVec> osd_direction_formula(const GradientMatrix& g, const GradVec& g_u,
                                                    double tol_rank = kDefaultRankTol,
                                                    double tol_null = kDefaultNullTol) {
  detail::check_osd_inputs(g, g_u);
  const double gu_norm = norm(g_u.flat);
  const std::size_t k = g.rows();
  std::vector<double> residual(g_u.flat.size(), 0.0);
  if (k > 0) {
    const EigenDecomp eig = sym_eig(gram(g));
    const double smax = eig.values.front();
    std::vector<double> s_pinv(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      if (smax > 0.0 && eig.values[i] > tol_rank * smax) s_pinv[i] = 1.0 / eig.values[i];

    // G g_u -> V^T -> S^+ -> U -> G^T
    std::vector<double> x(k);
    for (std::size_t i = 0; i < k; ++i) x[i] = dot(g.row(i), g_u.flat);
    std::vector<double> y(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += eig.vectors(i, j) * x[i];
      y[j] = s_pinv[j] * acc;
    }
    std::vector<double> lambda(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) lambda[i] += eig.vectors(i, j) * y[j];
    for (std::size_t i = 0; i < k; ++i) axpy(lambda[i], g.row(i), residual);
  }
  axpy(-1.0, g_u.flat, residual);

  const double r = norm(residual);
  if (r <= tol_null * gu_norm) return std::nullopt;
  const double mu = osd_norm_multiplier(r, gu_norm);
  scale(residual, 1.0 / (2.0 * gu_norm * gu_norm * mu));
  return GradVec(std::move(residual));
}

struct ProjectionResult {
  GradVec gradient;
  bool projected = false;  // the g . g_a > 0 branch was taken
  bool parallel = false;   // g was parallel to g_a; gradient is zero
};

/// Removes the component of g along g_a when g . g_a > 0, then rescales to
/// the original norm. Otherwise g passes through untouched.
inline ProjectionResult project_normal_plane(const GradVec& g, const GradVec& g_a) {
  if (g.size() != g_a.size()) throw PreconditionError("gradient length mismatch in projection");
  const double ga_sq = dot(g_a.flat, g_a.flat);
  const double gdot = dot(g.flat, g_a.flat);
  if (ga_sq == 0.0 || gdot <= 0.0) return {g, false, false};

  GradVec out(g.flat);
  axpy(-gdot / ga_sq, g_a.flat, out.flat);
  const double g_norm = norm(g.flat);
  const double raw_norm = norm(out.flat);
  if (raw_norm <= 1e-14 * g_norm) return {GradVec(g.size()), true, true};
  scale(out.flat, g_norm / raw_norm);
  return {std::move(out), true, false};
}

inline double cos_sim(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw PreconditionError("cosine similarity of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Number of rows g_i with g_i . d < -tol ||g_i|| ||d||.
inline std::size_t conflict_count(std::span<const double> d, const GradientMatrix& g,
                                  double tol = kDefaultConflictTol) {
  const double dn = norm(d);
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto row = g.row(i);
    if (dot(row, d) < -tol * norm(row) * dn) ++n;
  }
  return n;
}

}  // namespace fedosd
