#ifndef PARAHOM_TRIDIAGONAL_HPP
#define PARAHOM_TRIDIAGONAL_HPP

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace parahom {

/// Symmetric tridiagonal system  off(k-1) x(k-1) + diag(k) x(k) + off(k) x(k+1) = d(k).
/// `off` has size n-1. Factor once, solve any number of right-hand sides.
template <typename Scalar>
class Tridiagonal {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  void factor(const Eigen::Ref<const Vector>& diag, const Eigen::Ref<const Vector>& off) {
    const Eigen::Index n = diag.size();
    if (off.size() != n - 1) throw std::invalid_argument("Tridiagonal: size mismatch");
    off_ = off;
    inv_pivot_.resize(n);
    upper_.resize(n > 1 ? n - 1 : 0);
    Scalar pivot = diag(0);
    for (Eigen::Index k = 0;; ++k) {
      if (pivot == Scalar(0)) throw std::runtime_error("Tridiagonal: zero pivot");
      inv_pivot_(k) = Scalar(1) / pivot;
      if (k + 1 == n) break;
      upper_(k) = off(k) * inv_pivot_(k);
      pivot = diag(k + 1) - off(k) * upper_(k);
    }
  }

  /// Overwrites `rhs` with the solution.
  void solve_in_place(Eigen::Ref<Vector> rhs) const {
    const Eigen::Index n = inv_pivot_.size();
    rhs(0) *= inv_pivot_(0);
    for (Eigen::Index k = 1; k < n; ++k)
      rhs(k) = (rhs(k) - off_(k - 1) * rhs(k - 1)) * inv_pivot_(k);
    for (Eigen::Index k = n - 2; k >= 0; --k) rhs(k) -= upper_(k) * rhs(k + 1);
  }

  Eigen::Index size() const { return inv_pivot_.size(); }

 private:
  Vector off_, inv_pivot_, upper_;
};

/// Symmetric cyclic tridiagonal system: like Tridiagonal but with `off(n-1)`
/// coupling x(n-1) and x(0). Sherman-Morrison on top of the plain solver.
template <typename Scalar>
class CyclicTridiagonal {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  void factor(const Eigen::Ref<const Vector>& diag, const Eigen::Ref<const Vector>& off) {
    const Eigen::Index n = diag.size();
    if (n < 3 || off.size() != n) throw std::invalid_argument("CyclicTridiagonal: size mismatch");
    const Scalar corner = off(n - 1);
    gamma_ = -diag(0);
    Vector d = diag;
    d(0) -= gamma_;
    d(n - 1) -= corner * corner / gamma_;
    base_.factor(d, off.head(n - 1));
    corner_ = corner;
    z_ = Vector::Zero(n);
    z_(0) = gamma_;
    z_(n - 1) = corner;
    base_.solve_in_place(z_);
    denom_ = Scalar(1) + z_(0) + corner * z_(n - 1) / gamma_;
  }

  void solve_in_place(Eigen::Ref<Vector> rhs) const {
    const Eigen::Index n = z_.size();
    base_.solve_in_place(rhs);
    const Scalar factor = (rhs(0) + corner_ * rhs(n - 1) / gamma_) / denom_;
    rhs -= factor * z_;
  }

 private:
  Tridiagonal<Scalar> base_;
  Vector z_;
  Scalar gamma_ = 0, corner_ = 0, denom_ = 1;
};

}  // namespace parahom

#endif  // PARAHOM_TRIDIAGONAL_HPP
