#ifndef PARAHOM_FLUX_OPERATOR_HPP
#define PARAHOM_FLUX_OPERATOR_HPP

// Conservative finite-volume discretisation of u -> div(a grad u) on T^n.
//
// Diagonal entries a^{dd} enter through face coefficients (harmonic mean of
// the two adjacent nodes); off-diagonal entries a^{de} enter nodally through
// centred differences. Writing B u = (d+_1 u, .., d+_n u, dc_1 u, .., dc_n u)
// the operator is L = -B^T A B, so it is symmetric and every output has zero
// mean. The unit-gradient forcing L z_j used by the corrector equations is
// the same expression with B z_j = e_j.

#include "parahom/torus.hpp"
#include "parahom/tridiagonal.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace parahom {

template <typename Scalar>
class FluxOperator {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  FluxOperator() = default;

  explicit FluxOperator(const TorusGrid& grid) : grid_(grid) { build_tables(); }

  /// Builds the operator for the coefficient field `a` (rank Matrix).
  explicit FluxOperator(const PeriodicField<Scalar>& a, bool validate = true)
      : grid_(a.grid()) {
    build_tables();
    reset(a, validate);
  }

  const TorusGrid& grid() const { return grid_; }
  int dimension() const { return grid_.dimension(); }

  /// Re-targets the operator to a new coefficient on the same grid without
  /// reallocating.
  void reset(const PeriodicField<Scalar>& a, bool validate = true) {
    if (a.rank() != FieldRank::Matrix || a.grid() != grid_)
      throw std::invalid_argument("FluxOperator: matrix field on the operator grid expected");
    if (validate) check_coefficient(a);
    const int n = dimension();
    const Eigen::Index N = grid_.size();
    for (int d = 0; d < n; ++d) {
      const auto& nx = next_[d];
      auto& A = face_[d];
      const int c = d * n + d;
      for (Eigen::Index k = 0; k < N; ++k) {
        const Scalar l = a.at(k, c), r = a.at(nx[k], c);
        A(k) = Scalar(2) * l * r / (l + r);
      }
    }
    if (n > 1) {
      for (int d = 0; d < n; ++d)
        for (int e = 0; e < n; ++e)
          if (d != e) off_[d * n + e] = a.component(d * n + e);
    }
    nodal_ = a.values();
    factored_ds_ = Scalar(-1);
  }

  const Vector& face_coefficient(int axis) const { return face_[axis]; }

  /// Face flux A^d (d+_d u + [d == j]) on faces k -> k + e_d; j < 0 means no
  /// unit gradient.
  void face_flux(const Eigen::Ref<const Vector>& u, int j, int d, Eigen::Ref<Vector> out) const {
    const Scalar invh = static_cast<Scalar>(grid_.resolution());
    const Scalar unit = (d == j) ? Scalar(1) : Scalar(0);
    const auto& nx = next_[d];
    const auto& A = face_[d];
    for (Eigen::Index k = 0; k < grid_.size(); ++k) out(k) = A(k) * ((u(nx[k]) - u(k)) * invh + unit);
  }

  /// Nodal off-diagonal flux sum_{e != d} a^{de} (dc_e u + [e == j]).
  void offdiag_flux(const Eigen::Ref<const Vector>& u, int j, int d, Eigen::Ref<Vector> out) const {
    out.setZero();
    const int n = dimension();
    if (n == 1) return;
    const Scalar inv2h = static_cast<Scalar>(grid_.resolution()) / Scalar(2);
    for (int e = 0; e < n; ++e) {
      if (e == d) continue;
      const Scalar unit = (e == j) ? Scalar(1) : Scalar(0);
      const auto& nx = next_[e];
      const auto& pv = prev_[e];
      const Vector& c = off_[d * n + e];
      for (Eigen::Index k = 0; k < grid_.size(); ++k)
        out(k) += c(k) * ((u(nx[k]) - u(pv[k])) * inv2h + unit);
    }
  }

  /// L(u + z_j); j < 0 gives L u.
  Vector apply(const Eigen::Ref<const Vector>& u, int j = -1) const {
    Vector out = Vector::Zero(grid_.size());
    Vector flux(grid_.size());
    const Scalar invh = static_cast<Scalar>(grid_.resolution());
    const Scalar inv2h = invh / Scalar(2);
    for (int d = 0; d < dimension(); ++d) {
      face_flux(u, j, d, flux);
      const auto& pv = prev_[d];
      for (Eigen::Index k = 0; k < grid_.size(); ++k) out(k) += (flux(k) - flux(pv[k])) * invh;
      if (dimension() > 1) {
        offdiag_flux(u, j, d, flux);
        const auto& nx = next_[d];
        for (Eigen::Index k = 0; k < grid_.size(); ++k) out(k) += (flux(nx[k]) - flux(pv[k])) * inv2h;
      }
    }
    return out;
  }

  /// Forcing L z_j of the j-th corrector equation (the discrete div a e_j).
  Vector unit_forcing(int j) const { return apply(Vector::Zero(grid_.size()), j); }

  /// Nodal flux vector q_i ~ [a (grad u + e_j)]_i; face fluxes are averaged
  /// onto nodes. Result is (M^n x n).
  Matrix nodal_flux(const Eigen::Ref<const Vector>& u, int j) const {
    const int n = dimension();
    Matrix q(grid_.size(), n);
    Vector flux(grid_.size()), od(grid_.size());
    for (int d = 0; d < n; ++d) {
      face_flux(u, j, d, flux);
      offdiag_flux(u, j, d, od);
      const auto& pv = prev_[d];
      for (Eigen::Index k = 0; k < grid_.size(); ++k)
        q(k, d) = Scalar(0.5) * (flux(k) + flux(pv[k])) + od(k);
    }
    return q;
  }

  /// Spatial mean of the flux, i.e. column j of the integral of a(I + grad u).
  Vector flux_mean(const Eigen::Ref<const Vector>& u, int j) const {
    const int n = dimension();
    Vector m(n);
    Vector flux(grid_.size()), od(grid_.size());
    for (int d = 0; d < n; ++d) {
      face_flux(u, j, d, flux);
      offdiag_flux(u, j, d, od);
      m(d) = flux.mean() + od.mean();
    }
    return m;
  }

  /// Gradient recovered from the flux: grad u = a^{-1} q - e_j at each node.
  Matrix flux_gradient(const Eigen::Ref<const Vector>& u, int j) const {
    const int n = dimension();
    Matrix q = nodal_flux(u, j);
    if (n == 1) {
      for (Eigen::Index k = 0; k < grid_.size(); ++k)
        q(k, 0) = q(k, 0) / nodal_(k, 0) - (j == 0 ? Scalar(1) : Scalar(0));
      return q;
    }
    for (Eigen::Index k = 0; k < grid_.size(); ++k) {
      Matrix a(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) a(r, c) = nodal_(k, r * n + c);
      Vector g = a.ldlt().solve(q.row(k).transpose());
      if (j >= 0) g(j) -= Scalar(1);
      q.row(k) = g.transpose();
    }
    return q;
  }

  /// sum_i d_i (a^{ij} p): face form for i == j, centred for i != j. Zero mean.
  Vector divergence_of_product(int j, const Eigen::Ref<const Vector>& p) const {
    const int n = dimension();
    const Scalar invh = static_cast<Scalar>(grid_.resolution());
    Vector out = Vector::Zero(grid_.size());
    {
      const auto& nx = next_[j];
      const auto& pv = prev_[j];
      const Vector& A = face_[j];
      for (Eigen::Index k = 0; k < grid_.size(); ++k) {
        const Scalar right = A(k) * Scalar(0.5) * (p(k) + p(nx[k]));
        const Scalar left = A(pv[k]) * Scalar(0.5) * (p(pv[k]) + p(k));
        out(k) += (right - left) * invh;
      }
    }
    for (int i = 0; i < n; ++i) {
      if (i == j) continue;
      const auto& nx = next_[i];
      const auto& pv = prev_[i];
      const Vector& c = off_[i * n + j];
      for (Eigen::Index k = 0; k < grid_.size(); ++k)
        out(k) += (c(nx[k]) * p(nx[k]) - c(pv[k]) * p(pv[k])) * invh / Scalar(2);
    }
    return out;
  }

  /// Prepares solves of (I - ds L) x = rhs for the current coefficient.
  void factor_implicit(Scalar ds) {
    if (ds <= Scalar(0)) throw std::invalid_argument("FluxOperator: time step must be positive");
    const Eigen::Index N = grid_.size();
    const Scalar invh2 = static_cast<Scalar>(grid_.resolution()) * grid_.resolution();
    if (dimension() == 1) {
      Vector diag(N), off(N);
      const Vector& A = face_[0];
      for (Eigen::Index k = 0; k < N; ++k) {
        const Eigen::Index km = prev_[0][k];
        diag(k) = Scalar(1) + ds * (A(k) + A(km)) * invh2;
        off(k) = -ds * A(k) * invh2;
      }
      cyclic_.factor(diag, off);
    } else {
      assemble_sparse(ds);
    }
    factored_ds_ = ds;
  }

  void solve_implicit(Eigen::Ref<Vector> rhs) const {
    if (factored_ds_ <= Scalar(0)) throw std::logic_error("FluxOperator: factor_implicit not called");
    if (dimension() == 1) {
      cyclic_.solve_in_place(rhs);
    } else {
      Vector x = sparse_solver_->solve(rhs);
      if (sparse_solver_->info() != Eigen::Success)
        throw std::runtime_error("FluxOperator: implicit solve failed");
      rhs = x;
    }
  }

  /// Sparse matrix of L itself (same stencil as apply()).
  Eigen::SparseMatrix<Scalar> sparse_matrix() const {
    const int n = dimension();
    const Eigen::Index N = grid_.size();
    const Scalar invh = static_cast<Scalar>(grid_.resolution());
    const Scalar invh2 = invh * invh, inv4h2 = invh2 / Scalar(4);
    std::vector<Eigen::Triplet<Scalar>> trip;
    trip.reserve(static_cast<std::size_t>(N) * (1 + 2 * n + 4 * n * (n - 1)));
    for (Eigen::Index k = 0; k < N; ++k) {
      for (int d = 0; d < n; ++d) {
        const Scalar r = face_[d](k) * invh2, l = face_[d](prev_[d][k]) * invh2;
        trip.emplace_back(k, next_[d][k], r);
        trip.emplace_back(k, prev_[d][k], l);
        trip.emplace_back(k, k, -(r + l));
        for (int e = 0; e < n; ++e) {
          if (e == d) continue;
          const Vector& c = off_[d * n + e];
          const Eigen::Index kp = next_[d][k], km = prev_[d][k];
          const Scalar cp = c(kp) * inv4h2, cm = c(km) * inv4h2;
          trip.emplace_back(k, next_[e][kp], cp);
          trip.emplace_back(k, prev_[e][kp], -cp);
          trip.emplace_back(k, next_[e][km], -cm);
          trip.emplace_back(k, prev_[e][km], cm);
        }
      }
    }
    Eigen::SparseMatrix<Scalar> Lm(N, N);
    Lm.setFromTriplets(trip.begin(), trip.end());
    return Lm;
  }

 private:
  void build_tables() {
    const int n = grid_.dimension();
    const Eigen::Index N = grid_.size();
    next_.assign(n, std::vector<Eigen::Index>(N));
    prev_.assign(n, std::vector<Eigen::Index>(N));
    for (int d = 0; d < n; ++d)
      for (Eigen::Index k = 0; k < N; ++k) {
        next_[d][k] = grid_.neighbor(k, d, 1);
        prev_[d][k] = grid_.neighbor(k, d, -1);
      }
    face_.assign(n, Vector::Zero(N));
    off_.assign(n * n, Vector::Zero(N));
    nodal_ = Matrix::Zero(N, n * n);
  }

  void check_coefficient(const PeriodicField<Scalar>& a) const {
    const int n = dimension();
    for (Eigen::Index k = 0; k < grid_.size(); ++k) {
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          const Scalar x = a.entry(k, i, j), y = a.entry(k, j, i);
          if (std::abs(x - y) > Scalar(1e-12) * (Scalar(1) + std::abs(x)))
            throw std::invalid_argument("FluxOperator: coefficient is not symmetric");
        }
      bool spd = true;
      if (n == 1) {
        spd = a.at(k, 0) > Scalar(0);
      } else {
        const Scalar a11 = a.entry(k, 0, 0), a22 = a.entry(k, 1, 1), a12 = a.entry(k, 0, 1);
        spd = a11 > Scalar(0) && a11 * a22 - a12 * a12 > Scalar(0);
      }
      if (!spd || !std::isfinite(static_cast<double>(a.at(k, 0))))
        throw std::invalid_argument("FluxOperator: coefficient is not positive definite");
    }
  }

  void assemble_sparse(Scalar ds) {
    const Eigen::Index N = grid_.size();
    Eigen::SparseMatrix<Scalar> Lm = sparse_matrix();
    Eigen::SparseMatrix<Scalar> I(N, N);
    I.setIdentity();
    Eigen::SparseMatrix<Scalar> K = I - ds * Lm;
    if (!sparse_solver_) {
      sparse_solver_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<Scalar>>>();
      sparse_solver_->analyzePattern(K);
    }
    sparse_solver_->factorize(K);
    if (sparse_solver_->info() != Eigen::Success)
      throw std::runtime_error("FluxOperator: implicit operator is not positive definite");
  }

  TorusGrid grid_;
  std::vector<std::vector<Eigen::Index>> next_, prev_;
  std::vector<Vector> face_;
  std::vector<Vector> off_;
  Matrix nodal_;
  CyclicTridiagonal<Scalar> cyclic_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<Scalar>>> sparse_solver_;
  Scalar factored_ds_ = Scalar(-1);
};

/// div(a grad u) in conservative flux form.
template <typename Scalar>
PeriodicField<Scalar> apply_operator(const PeriodicField<Scalar>& a, const PeriodicField<Scalar>& u) {
  if (u.rank() != FieldRank::Scalar || u.grid() != a.grid())
    throw std::invalid_argument("apply_operator: scalar field on the coefficient grid expected");
  FluxOperator<Scalar> op(a);
  PeriodicField<Scalar> out(u.grid(), FieldRank::Scalar);
  out.component(0) = op.apply(u.component(0));
  return out;
}

}  // namespace parahom

#endif  // PARAHOM_FLUX_OPERATOR_HPP
