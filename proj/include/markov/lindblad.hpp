#pragma once

// Generators: build a superoperator from Hamiltonian + Kossakowski data,
// verify the three generator conditions (Hermiticity preservation of the
// reshuffle, annihilation of <omega|, conditional complete positivity), and
// repair near-generators by a uniform depolarizing shift.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "markov/core.hpp"
#include "markov/io.hpp"

namespace markov {

struct LindbladData {
  CMatrix H;                // d x d Hermitian
  CMatrix G;                // r x r positive semi-definite
  std::vector<CMatrix> F;   // r jump operators, each d x d
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate_gks(const LindbladData& data, double tol = 1e-9) {
  if (data.H.rows() != data.H.cols()) throw ValidationError("H must be square");
  if ((data.H - data.H.adjoint()).norm() > tol * std::max(1.0, data.H.norm()))
    throw ValidationError("H must be Hermitian");
  if (data.G.rows() != data.G.cols()) throw ValidationError("G must be square");
  if (static_cast<std::size_t>(data.G.rows()) != data.F.size())
    throw ValidationError("G side must match the number of jump operators");
  CMatrix gs = 0.5 * (data.G + data.G.adjoint());
  if ((data.G - gs).norm() > tol * std::max(1.0, data.G.norm()))
    throw ValidationError("G must be Hermitian");
  if (data.G.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(gs, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol * std::max(1.0, data.G.norm()))
      throw ValidationError("G must be positive semi-definite");
  }
  for (const auto& f : data.F)
    if (f.rows() != data.H.rows() || f.cols() != data.H.cols())
      throw ValidationError("jump operators must match the Hamiltonian dimension");
}

// rho -> i[rho, H] + sum_{a,b} G_ab (F_a rho F_b^dag - {F_b^dag F_a, rho}/2).
// Row-major vectorization turns rho -> A rho B into A (x) B^T.
inline SuperOp build_from_gks(const LindbladData& data, double tol = 1e-9) {
  validate_gks(data, tol);
  const int d = static_cast<int>(data.H.rows());
  const CMatrix id = CMatrix::Identity(d, d);
  CMatrix l = Complex(0, 1) * (kron(id, data.H.transpose()) - kron(data.H, id));
  const int r = static_cast<int>(data.F.size());
  for (int a = 0; a < r; ++a) {
    for (int b = 0; b < r; ++b) {
      const Complex g = data.G(a, b);
      if (g == Complex(0, 0)) continue;
      CMatrix fba = data.F[b].adjoint() * data.F[a];
      l += g * (kron(data.F[a], data.F[b].conjugate()) -
                0.5 * (kron(fba, id) + kron(id, fba.transpose())));
    }
  }
  return SuperOp{d, std::move(l)};
}

// Orthonormal basis of the orthogonal complement of |omega>: the d^2 - d
// off-diagonal pair vectors |i,j>, plus d - 1 traceless combinations of the
// diagonal pairs w_k = (|0,0> + ... + |k-1,k-1> - k |k,k>) / sqrt(k(k+1)).
inline CMatrix complement_basis(int d) {
  CMatrix v = CMatrix::Zero(d * d, d * d - 1);
  int col = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) v(i * d + j, col++) = 1.0;
  for (int k = 1; k < d; ++k) {
    const double norm = std::sqrt(double(k) * (k + 1));
    for (int i = 0; i < k; ++i) v(i * d + i, col) = 1.0 / norm;
    v(k * d + k, col) = -double(k) / norm;
    ++col;
  }
  return v;
}

// V^dag X V for the complement basis above, exploiting that every basis
// column has at most d nonzero entries. Column order matches
// complement_basis exactly.
inline CMatrix compress_complement(const CMatrix& x, int d) {
  if (x.rows() != Eigen::Index(d) * d || x.cols() != Eigen::Index(d) * d)
    throw DimensionError("compress_complement: matrix side must be d^2");
  std::vector<std::vector<std::pair<int, double>>> cols;
  cols.reserve(d * d - 1);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) cols.push_back({{i * d + j, 1.0}});
  for (int k = 1; k < d; ++k) {
    const double norm = std::sqrt(double(k) * (k + 1));
    std::vector<std::pair<int, double>> col;
    col.reserve(k + 1);
    for (int i = 0; i < k; ++i) col.emplace_back(i * d + i, 1.0 / norm);
    col.emplace_back(k * d + k, -double(k) / norm);
    cols.push_back(std::move(col));
  }
  const Eigen::Index n = Eigen::Index(d) * d - 1;
  CMatrix z(Eigen::Index(d) * d, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    z.col(b).setZero();
    for (const auto& [row, coeff] : cols[b]) z.col(b) += coeff * x.col(row);
  }
  CMatrix out(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    out.row(a).setZero();
    for (const auto& [row, coeff] : cols[a]) out.row(a) += coeff * z.row(row);
  }
  return out;
}

// Minimum eigenvalue of the reshuffled generator compressed onto the
// complement of |omega>. The compression deflates the structural zero at
// |omega>, so a strictly positive margin is possible.
inline double ccp_margin(const SuperOp& l) {
  CMatrix g = gamma_involution(l.mat);
  CMatrix sym = 0.5 * (g + g.adjoint());
  CMatrix compressed = compress_complement(sym, l.d);
  return detail::min_eig_hermitian_blocked(compressed);
}

struct Lemma1Report {
  double herm_residual = 0.0;  // || Gamma(L) - Gamma(L)^dag ||_F
  double norm_residual = 0.0;  // || <omega| L ||_2
  double ccp_margin = 0.0;
  bool pass = false;
};

inline Lemma1Report check_lemma1(const SuperOp& l, double tol = 1e-9) {
  Lemma1Report r;
  CMatrix g = gamma_involution(l.mat);
  r.herm_residual = (g - g.adjoint()).norm();
  OmegaData w = omega_data(l.d);
  r.norm_residual = (l.mat.adjoint() * w.vec).norm();
  r.ccp_margin = ccp_margin(l);
  r.pass = r.herm_residual <= tol && r.norm_residual <= tol &&
           r.ccp_margin >= -tol;
  return r;
}

// L' = L + eps (d omega - d 1). Shifts the compressed reshuffle by exactly
// +eps on the complement of |omega> and moves L by eps * d * sqrt(d^2 - 1)
// in Frobenius norm.
inline SuperOp repair_generator(const SuperOp& l, double eps, double tol = 1e-7) {
  if (eps < 0) throw ValidationError("repair amount must be nonnegative");
  Lemma1Report before = check_lemma1(l, tol);
  if (before.herm_residual > tol || before.norm_residual > tol)
    throw ValidationError("repair requires a Hermiticity-preserving, normalized input");
  if (before.ccp_margin < -eps - tol)
    throw ValidationError("repair amount too small for the ccp deficit");
  OmegaData w = omega_data(l.d);
  CMatrix shift = double(l.d) * (w.proj - CMatrix::Identity(l.d * l.d, l.d * l.d));
  return SuperOp{l.d, l.mat + eps * shift};
}

/// Random generator data: Gaussian Hermitian H, Wishart G over the full
// matrix-unit jump basis. Always satisfies the generator conditions.
inline LindbladData random_gks(int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CMatrix h = ginibre(d, d, rng);
  LindbladData data;
  data.H = 0.5 * (h + h.adjoint());
  const int r = d * d;
  CMatrix m = ginibre(r, r, rng);
  data.G = (m * m.adjoint()) / double(r);
  data.F.reserve(r);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      CMatrix f = CMatrix::Zero(d, d);
      f(i, j) = 1.0;
      data.F.push_back(std::move(f));
    }
  return data;
}

inline OrderedJson lindblad_to_json(const LindbladData& data) {
  OrderedJson fs = OrderedJson::array();
  for (const auto& f : data.F) fs.push_back(matrix_to_json(f));
  return OrderedJson{{"H", matrix_to_json(data.H)},
                     {"G", matrix_to_json(data.G)},
                     {"F", std::move(fs)}};
}

inline LindbladData lindblad_from_json(const OrderedJson& j) {
  if (!j.is_object() || !j.contains("H") || !j.contains("G") || !j.contains("F"))
    throw ParseError("generator data: expected fields H, G, F");
  LindbladData data;
  data.H = matrix_from_json(j["H"], "H");
  data.G = matrix_from_json(j["G"], "G");
  if (!j["F"].is_array()) throw ParseError("generator data: F must be an array");
  for (const auto& f : j["F"]) data.F.push_back(matrix_from_json(f, "F"));
  return data;
}

}  // namespace markov
