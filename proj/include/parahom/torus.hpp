#ifndef PARAHOM_TORUS_HPP
#define PARAHOM_TORUS_HPP

// Periodic fields on the unit torus T^n and their discrete calculus.
//
// Nodes are laid out with axis 0 fastest: node k = k0 + M k1 + M^2 k2 ...
// and sit at z = (k0, k1, ...) / M. Periodicity lives in the index
// arithmetic only; there are no ghost layers.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace parahom {

class TorusGrid {
 public:
  TorusGrid() = default;
  TorusGrid(int dimension, int resolution) : dim_(dimension), res_(resolution) {
    if (dimension < 1 || dimension > 2)
      throw std::invalid_argument("TorusGrid: dimension must be 1 or 2");
    if (resolution < 4 || resolution % 2 != 0)
      throw std::invalid_argument("TorusGrid: resolution must be even and >= 4");
    size_ = 1;
    for (int d = 0; d < dim_; ++d) size_ *= res_;
  }

  int dimension() const { return dim_; }
  int resolution() const { return res_; }
  double spacing() const { return 1.0 / res_; }
  Eigen::Index size() const { return size_; }

  Eigen::Index stride(int axis) const {
    Eigen::Index s = 1;
    for (int d = 0; d < axis; ++d) s *= res_;
    return s;
  }

  int coordinate(Eigen::Index node, int axis) const {
    return static_cast<int>((node / stride(axis)) % res_);
  }

  /// Index of the node reached from `node` by `offset` steps along `axis`.
  Eigen::Index neighbor(Eigen::Index node, int axis, int offset) const {
    const Eigen::Index s = stride(axis);
    const int c = coordinate(node, axis);
    const int shifted = ((c + offset) % res_ + res_) % res_;
    return node + static_cast<Eigen::Index>(shifted - c) * s;
  }

  Eigen::VectorXd point(Eigen::Index node) const {
    Eigen::VectorXd z(dim_);
    for (int d = 0; d < dim_; ++d) z(d) = coordinate(node, d) * spacing();
    return z;
  }

  bool operator==(const TorusGrid& other) const {
    return dim_ == other.dim_ && res_ == other.res_;
  }
  bool operator!=(const TorusGrid& other) const { return !(*this == other); }

 private:
  int dim_ = 1;
  int res_ = 4;
  Eigen::Index size_ = 4;
};

enum class FieldRank { Scalar, Vector, Matrix, Tensor3 };

inline int rank_order(FieldRank r) {
  switch (r) {
    case FieldRank::Scalar: return 0;
    case FieldRank::Vector: return 1;
    case FieldRank::Matrix: return 2;
    case FieldRank::Tensor3: return 3;
  }
  return 0;
}

inline FieldRank rank_from_order(int order) {
  switch (order) {
    case 0: return FieldRank::Scalar;
    case 1: return FieldRank::Vector;
    case 2: return FieldRank::Matrix;
    case 3: return FieldRank::Tensor3;
  }
  throw std::invalid_argument("rank_from_order: unsupported order");
}

inline int component_count(FieldRank r, int n) {
  int c = 1;
  for (int k = 0; k < rank_order(r); ++k) c *= n;
  return c;
}

/// Nodal values of a scalar/vector/matrix/3-tensor function on T^n.
///
/// Values are stored as an (M^n x components) array; matrix components are
/// row-major (i*n + j), 3-tensor components (i*n + j)*n + k.
template <typename Scalar>
class PeriodicField {
 public:
  using Values = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  PeriodicField() = default;
  PeriodicField(const TorusGrid& grid, FieldRank rank)
      : grid_(grid), rank_(rank),
        values_(Values::Zero(grid.size(), component_count(rank, grid.dimension()))) {}
  PeriodicField(const TorusGrid& grid, FieldRank rank, Values values)
      : grid_(grid), rank_(rank), values_(std::move(values)) {
    if (values_.rows() != grid_.size() ||
        values_.cols() != component_count(rank_, grid_.dimension()))
      throw std::invalid_argument("PeriodicField: value array has the wrong shape");
  }

  /// Samples `fn(z)` at every node; `fn` returns the component vector.
  template <typename Fn>
  static PeriodicField sample(const TorusGrid& grid, FieldRank rank, Fn&& fn) {
    PeriodicField f(grid, rank);
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
      const Eigen::VectorXd z = grid.point(k);
      const auto v = fn(z);
      for (int c = 0; c < f.components(); ++c) f.values_(k, c) = static_cast<Scalar>(v(c));
    }
    return f;
  }

  const TorusGrid& grid() const { return grid_; }
  FieldRank rank() const { return rank_; }
  int dimension() const { return grid_.dimension(); }
  int components() const { return static_cast<int>(values_.cols()); }
  Eigen::Index nodes() const { return values_.rows(); }

  Values& values() { return values_; }
  const Values& values() const { return values_; }

  auto component(int c) { return values_.col(c); }
  auto component(int c) const { return values_.col(c); }

  Scalar& at(Eigen::Index node, int c = 0) { return values_(node, c); }
  Scalar at(Eigen::Index node, int c = 0) const { return values_(node, c); }

  /// Matrix entry (i, j) at a node; only valid for rank Matrix.
  Scalar entry(Eigen::Index node, int i, int j) const {
    return values_(node, i * dimension() + j);
  }
  Scalar& entry(Eigen::Index node, int i, int j) {
    return values_(node, i * dimension() + j);
  }

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> matrix_at(Eigen::Index node) const {
    const int n = dimension();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = entry(node, i, j);
    return m;
  }

  bool all_finite() const { return values_.allFinite(); }

 private:
  TorusGrid grid_;
  FieldRank rank_ = FieldRank::Scalar;
  Values values_;
};

using Field = PeriodicField<double>;

enum class DiffScheme { Spectral, CentralDifference };

namespace detail {

template <typename Scalar>
void require_finite(const PeriodicField<Scalar>& f, const char* what) {
  if (!f.all_finite()) throw std::runtime_error(std::string(what) + ": non-finite values");
}

/// d/dz_axis of one nodal column.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> partial(
    const TorusGrid& grid, const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& u,
    int axis, DiffScheme scheme) {
  const int M = grid.resolution();
  const Eigen::Index s = grid.stride(axis);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(u.size());
  if (scheme == DiffScheme::CentralDifference) {
    const Scalar inv2h = static_cast<Scalar>(M) / Scalar(2);
    for (Eigen::Index k = 0; k < u.size(); ++k)
      out(k) = (u(grid.neighbor(k, axis, 1)) - u(grid.neighbor(k, axis, -1))) * inv2h;
    return out;
  }
  // Spectral: transform every line along `axis`; the Nyquist mode is
  // dropped so that the derivative stays real and skew-adjoint.
  Eigen::FFT<Scalar> fft;
  std::vector<Scalar> line(M), back(M);
  std::vector<std::complex<Scalar>> spec(M);
  const Scalar two_pi = Scalar(2) * Scalar(EIGEN_PI);
  for (Eigen::Index base = 0; base < u.size(); ++base) {
    if (grid.coordinate(base, axis) != 0) continue;
    for (int m = 0; m < M; ++m) line[m] = u(base + m * s);
    fft.fwd(spec, line);
    for (int m = 0; m < M; ++m) {
      const int wave = (m <= M / 2) ? m : m - M;
      if (2 * m == M) {
        spec[m] = 0;
      } else {
        spec[m] *= std::complex<Scalar>(0, two_pi * wave);
      }
    }
    fft.inv(back, spec);
    for (int m = 0; m < M; ++m) out(base + m * s) = back[m];
  }
  return out;
}

}  // namespace detail

/// Gradient of a scalar field.
template <typename Scalar>
PeriodicField<Scalar> gradient(const PeriodicField<Scalar>& f,
                               DiffScheme scheme = DiffScheme::Spectral) {
  if (f.rank() != FieldRank::Scalar)
    throw std::invalid_argument("gradient: scalar field expected");
  if (f.grid().resolution() < 4)
    throw std::invalid_argument("gradient: resolution too small for the scheme");
  const int n = f.dimension();
  PeriodicField<Scalar> g(f.grid(), FieldRank::Vector);
  for (int i = 0; i < n; ++i)
    g.component(i) = detail::partial<Scalar>(f.grid(), f.component(0), i, scheme);
  detail::require_finite(g, "gradient");
  return g;
}

/// Divergence contracting the first index: vector -> scalar, matrix -> vector,
/// 3-tensor -> matrix.
template <typename Scalar>
PeriodicField<Scalar> divergence(const PeriodicField<Scalar>& F,
                                 DiffScheme scheme = DiffScheme::Spectral) {
  const int order = rank_order(F.rank());
  if (order == 0) throw std::invalid_argument("divergence: rank-0 input");
  const int n = F.dimension();
  const FieldRank out_rank = rank_from_order(order - 1);
  PeriodicField<Scalar> out(F.grid(), out_rank);
  const int tail = component_count(out_rank, n);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < tail; ++t)
      out.component(t) += detail::partial<Scalar>(F.grid(), F.component(i * tail + t), i, scheme);
  detail::require_finite(out, "divergence");
  return out;
}

/// Average over T^n per component (exact integral on the uniform grid for
/// trigonometric polynomials of degree < M).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean(const PeriodicField<Scalar>& f) {
  return f.values().colwise().mean().transpose();
}

/// L2(T^n) norm of each component.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> l2_norm(const PeriodicField<Scalar>& f) {
  return (f.values().array().square().colwise().mean().sqrt()).transpose();
}

}  // namespace parahom

#endif  // PARAHOM_TORUS_HPP
