#pragma once

// Nearest-CPT-channel projection in Choi space. The CPT set is the
// intersection of the PSD cone with the trace-preservation affine subspace;
// Dykstra's alternating projections converge to the Frobenius-nearest point
// of the intersection, which plain alternating projections do not.

#include <cmath>
#include <stdexcept>

#include "markov/core.hpp"

namespace markov {

// Orthogonal projection onto { sigma : Tr_1 sigma = I }. The offset lives in
// the I (x) X slice, so the correction is (1/d) I (x) (I - Tr_1 sigma).
inline ChoiMatrix project_tp(const ChoiMatrix& c) {
  const int d = c.d;
  CMatrix defect = CMatrix::Identity(d, d) - partial_trace_first(c.mat);
  CMatrix out = c.mat;
  const double inv_d = 1.0 / d;
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l)
        out(i * d + k, i * d + l) += inv_d * defect(k, l);
  return ChoiMatrix{d, std::move(out)};
}

// Projection onto the PSD cone: symmetrize, then clip negative eigenvalues.
// A large anti-Hermitian part means the input is not the Choi matrix of a
// Hermiticity-preserving map, for which "nearest PSD" is not meaningful.
inline ChoiMatrix project_psd(const ChoiMatrix& c, double herm_tol = 1e-6) {
  CMatrix sym = 0.5 * (c.mat + c.mat.adjoint());
  const double herm_residual = (c.mat - sym).norm();
  if (herm_residual > herm_tol * std::max(1.0, c.mat.norm()))
    throw std::invalid_argument("input is far from Hermiticity-preserving");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(sym);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed in PSD projection");
  RVector clipped = es.eigenvalues().cwiseMax(0.0);
  CMatrix out = es.eigenvectors() * clipped.asDiagonal() *
                es.eigenvectors().adjoint();
  return ChoiMatrix{c.d, std::move(out)};
}

struct ProjectionResult {
  SuperOp projected;
  double distance = 0.0;  // Frobenius, in superoperator = Choi coordinates
  int iterations = 0;
  bool converged = false;
};

inline ProjectionResult nearest_cpt(const SuperOp& e, double tol = 1e-10,
                                    int max_iter = 10000) {
  const int d = e.d;
  ChoiMatrix start = choi_of(e);
  CMatrix x = 0.5 * (start.mat + start.mat.adjoint());
  if ((start.mat - x).norm() > 1e-6 * std::max(1.0, start.mat.norm()))
    throw std::invalid_argument("input is far from Hermiticity-preserving");
  CMatrix increment = CMatrix::Zero(d * d, d * d);  // Dykstra's PSD correction
  ProjectionResult res;
  const double scale = std::max(1.0, x.norm());
  CMatrix prev = x;
  for (int it = 0; it < max_iter; ++it) {
    ChoiMatrix y = project_psd(ChoiMatrix{d, x + increment}, 1e-6);
    increment = (x + increment) - y.mat;
    x = project_tp(y).mat;
    res.iterations = it + 1;
    if ((x - prev).norm() <= tol * scale) {
      // accept only if the iterate actually sits in both sets
      Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (x + x.adjoint()));
      const double min_eig = es.eigenvalues().minCoeff();
      if (min_eig >= -100 * tol * scale) {
        res.converged = true;
        break;
      }
    }
    prev = x;
  }
  ChoiMatrix final_choi{d, x};
  res.projected = superop_of(final_choi);
  res.distance = (x - start.mat).norm();
  return res;
}

}  // namespace markov
