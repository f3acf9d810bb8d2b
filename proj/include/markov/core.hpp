#pragma once

// Superoperator core: dense d^2 x d^2 linear-map representation of channels,
// the Gamma reshuffle between map and Choi forms, CPT validity checks, and
// random channel sampling.
//
// Index convention, shared by every module: the operator basis |i><j| on a
// d-dimensional Hilbert space is flattened row-major, pair (i,j) -> i*d + j.
// A superoperator matrix E acts on vec(rho) by plain matrix multiplication,
// and E((i,j),(k,l)) is the (i,j) coefficient of the image of |k><l|.

#include <cmath>
#include <complex>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace markov {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

struct Tolerances {
  double herm_tol = 1e-9;
  double psd_tol = 1e-9;
  double tp_tol = 1e-9;
  double pair_tol = 1e-7;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Side length d^2 -> d, rejecting sides that are not perfect squares.
inline int hilbert_dim_of_side(Eigen::Index side) {
  int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(side))));
  if (d < 1 || static_cast<Eigen::Index>(d) * d != side)
    throw DimensionError("matrix side " + std::to_string(side) +
                         " is not a perfect square");
  return d;
}

struct SuperOp {
  int d = 0;
  CMatrix mat;
};

struct ChoiMatrix {
  int d = 0;
  CMatrix mat;
};

inline SuperOp make_superop(CMatrix m) {
  if (m.rows() != m.cols()) throw DimensionError("superoperator must be square");
  SuperOp e;
  e.d = hilbert_dim_of_side(m.rows());
  e.mat = std::move(m);
  return e;
}

inline SuperOp identity_superop(int d) {
  SuperOp e;
  e.d = d;
  e.mat = CMatrix::Identity(d * d, d * d);
  return e;
}

inline double frobenius_norm(const CMatrix& m) { return m.norm(); }
inline double frobenius_norm(const SuperOp& e) { return e.mat.norm(); }

// out((i,k),(j,l)) = in((i,j),(k,l)). Involution; entry permutation, so it
// preserves the Frobenius norm and maps superoperator <-> Choi form.
inline CMatrix gamma_involution(const CMatrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("gamma: matrix must be square");
  const int d = hilbert_dim_of_side(m.rows());
  CMatrix out(m.rows(), m.cols());
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      for (int j = 0; j < d; ++j)
        for (int l = 0; l < d; ++l)
          out(i * d + k, j * d + l) = m(i * d + j, k * d + l);
  return out;
}

inline ChoiMatrix choi_of(const SuperOp& e) {
  return ChoiMatrix{e.d, gamma_involution(e.mat)};
}

inline SuperOp superop_of(const ChoiMatrix& c) {
  return SuperOp{c.d, gamma_involution(c.mat)};
}

// out(i,j) = conj(in(j,i)) on flattened index pairs. Under this convention
// the flip of an eigenvector of a Hermiticity-preserving map with eigenvalue
// lambda is an eigenvector with eigenvalue conj(lambda).
inline CVector flip_vector(const CVector& v) {
  const int d = hilbert_dim_of_side(v.size());
  CVector out(v.size());
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out(i * d + j) = std::conj(v(j * d + i));
  return out;
}

// Entrywise extension of the flip to operators:
// out((i,j),(k,l)) = conj(in((j,i),(l,k))).
inline CMatrix flip_operator(const CMatrix& m) {
  const int d = hilbert_dim_of_side(m.rows());
  CMatrix out(m.rows(), m.cols());
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l)
          out(i * d + j, k * d + l) = std::conj(m(j * d + i, l * d + k));
  return out;
}

struct OmegaData {
  int d = 0;
  CVector vec;        // sum_i |i,i> / sqrt(d)
  CMatrix proj;       // |omega><omega|
  CMatrix complement; // 1 - proj
};

inline OmegaData omega_data(int d) {
  OmegaData w;
  w.d = d;
  w.vec = CVector::Zero(d * d);
  for (int i = 0; i < d; ++i) w.vec(i * d + i) = 1.0 / std::sqrt(double(d));
  w.proj = w.vec * w.vec.adjoint();
  w.complement = CMatrix::Identity(d * d, d * d) - w.proj;
  return w;
}

// Trace over the first (output) tensor factor: out(k,l) = sum_i m((i,k),(i,l)).
inline CMatrix partial_trace_first(const CMatrix& m) {
  const int d = hilbert_dim_of_side(m.rows());
  CMatrix out = CMatrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l) out(k, l) += m(i * d + k, i * d + l);
  return out;
}

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

// Connected components of the exact-nonzero support graph (edge when either
// m(i,j) or m(j,i) is nonzero). Components are ordered by smallest member,
// rows ascending inside each, so the decomposition is deterministic.
inline std::vector<std::vector<int>> support_components(const CMatrix& m) {
  const int n = static_cast<int>(m.rows());
  UnionFind uf(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (m(i, j) != Complex(0, 0) || m(j, i) != Complex(0, 0)) uf.unite(i, j);
  std::vector<std::vector<int>> comps;
  std::vector<int> slot(n, -1);
  for (int i = 0; i < n; ++i) {
    const int r = uf.find(i);
    if (slot[r] < 0) {
      slot[r] = static_cast<int>(comps.size());
      comps.emplace_back();
    }
    comps[slot[r]].push_back(i);
  }
  return comps;
}

// Minimum eigenvalue of a Hermitian matrix, solved block-by-block over the
// exact-nonzero support. On dense input this is one full solve; on the
// block-sparse matrices the channel compiler emits it avoids cubing d^2.
inline double min_eig_hermitian_blocked(const CMatrix& sym) {
  double min_eig = std::numeric_limits<double>::infinity();
  for (const auto& rows : support_components(sym)) {
    if (rows.size() == 1) {
      min_eig = std::min(min_eig, sym(rows[0], rows[0]).real());
      continue;
    }
    const int s = static_cast<int>(rows.size());
    CMatrix block(s, s);
    for (int a = 0; a < s; ++a)
      for (int b = 0; b < s; ++b) block(a, b) = sym(rows[a], rows[b]);
    Eigen::SelfAdjointEigenSolver<CMatrix> es(block, Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
  }
  return min_eig;
}

}  // namespace detail

struct CptReport {
  double cp_margin = 0.0;    // min eigenvalue of the (symmetrized) Choi matrix
  double tp_residual = 0.0;  // max-norm of Tr_out(Choi) - 1
  double herm_residual = 0.0;
  bool pass = false;
};

inline CptReport is_cpt(const SuperOp& e, const Tolerances& tol = {}) {
  CptReport r;
  CMatrix choi = gamma_involution(e.mat);
  r.herm_residual = (choi - choi.adjoint()).norm();
  CMatrix sym = 0.5 * (choi + choi.adjoint());
  r.cp_margin = detail::min_eig_hermitian_blocked(sym);
  CMatrix pt = partial_trace_first(choi);
  pt -= CMatrix::Identity(e.d, e.d);
  r.tp_residual = pt.cwiseAbs().maxCoeff();
  r.pass = r.cp_margin >= -tol.psd_tol && r.tp_residual <= tol.tp_tol &&
           r.herm_residual <= tol.herm_tol;
  return r;
}

inline bool is_hermiticity_preserving(const SuperOp& e,
                                      const Tolerances& tol = {}) {
  CMatrix choi = gamma_involution(e.mat);
  return (choi - choi.adjoint()).norm() <= tol.herm_tol;
}

// compose(a, b) acts as a after b: vec(a(b(rho))) = a.mat * b.mat * vec(rho).
inline SuperOp compose(const SuperOp& a, const SuperOp& b) {
  if (a.d != b.d) throw DimensionError("compose: dimension mismatch");
  return SuperOp{a.d, a.mat * b.mat};
}

inline CMatrix apply(const SuperOp& e, const CMatrix& rho) {
  if (rho.rows() != e.d || rho.cols() != e.d)
    throw DimensionError("apply: state dimension mismatch");
  CVector v(e.d * e.d);
  for (int i = 0; i < e.d; ++i)
    for (int j = 0; j < e.d; ++j) v(i * e.d + j) = rho(i, j);
  CVector w = e.mat * v;
  CMatrix out(e.d, e.d);
  for (int i = 0; i < e.d; ++i)
    for (int j = 0; j < e.d; ++j) out(i, j) = w(i * e.d + j);
  return out;
}

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline CMatrix mat_exp(const CMatrix& m) { return m.exp(); }

inline SuperOp exp_superop(const SuperOp& l, double t = 1.0) {
  return SuperOp{l.d, CMatrix((t * l.mat).exp())};
}

inline CMatrix ginibre(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  CMatrix g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = Complex(gauss(rng), gauss(rng));
  return g;
}

// Random CPT map: Choi = (1 (x) S^{-1/2}) W W^dag (1 (x) S^{-1/2}) with W
// complex Gaussian and S the input-factor partial trace of W W^dag. The
// sandwich enforces the trace-preservation constraint exactly while keeping
// the Choi matrix positive semi-definite by construction.
inline SuperOp random_channel(int d, std::uint64_t seed) {
  if (d < 2) throw DimensionError("random_channel: d must be at least 2");
  std::mt19937_64 rng(seed);
  CMatrix w = ginibre(d * d, d * d, rng);
  CMatrix c0 = w * w.adjoint();
  CMatrix s = partial_trace_first(c0);
  Eigen::SelfAdjointEigenSolver<CMatrix> es(s);
  CVector inv_sqrt(d);
  for (int i = 0; i < d; ++i)
    inv_sqrt(i) = 1.0 / std::sqrt(std::max(es.eigenvalues()(i), 1e-300));
  CMatrix k =
      es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().adjoint();
  CMatrix sandwich = kron(CMatrix::Identity(d, d), k);
  CMatrix choi = sandwich * c0 * sandwich.adjoint();
  return SuperOp{d, gamma_involution(choi)};
}

}  // namespace markov
