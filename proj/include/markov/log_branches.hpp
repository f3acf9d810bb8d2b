#pragma once

// Eigendecomposition of a channel with conjugate-pair matching, the principal
// logarithm, and the integer branch family L_m = L_0 + sum_c m_c A_c.
//
// Degeneracy policy: clusters of (numerically) equal eigenvalues are accepted
// when they are real and positive, because the principal logarithm of such a
// cluster is basis-independent (the identity channel is the extreme case).
// Complex clusters make the conjugate pairing, and hence the branch matrices,
// ambiguous; those inputs are rejected rather than silently perturbed.
// Eigenvalues exactly on the negative real axis admit a Hermiticity-preserving
// logarithm only in pairs; an isolated pair is split symmetrically into
// log = ln r -/+ i*pi (the conjugation-symmetric version of rotating the
// branch cut), anything larger is ambiguous and rejected.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "markov/core.hpp"

namespace markov {

class DegenerateChannel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpectralOptions {
  double pair_tol = 1e-7;        // conjugate-pair matching disc
  double zero_tol = 1e-7;        // singularity guard on |lambda|
  double degeneracy_tol = 1e-10; // ambiguity guard between distinct eigenvalues
  double cond_cap = 1e8;         // eigenbasis condition number cap
};

struct EigenSystem {
  CVector values;
  CMatrix right;  // columns r_k
  CMatrix left;   // columns l_k, <l_j | r_k> = delta_jk
  double recon_residual = 0.0;  // ||sum_k lambda_k r_k l_k^dag - E||_F / ||E||_F
  bool normal_path = false;
  // Support decomposition: component c owns rows comp_rows[c] and the column
  // range [comp_cols[c].first, comp_cols[c].second) of right/left. Vectors are
  // exactly zero outside their component's rows. Dense input gives one
  // component; the block-sparse channels the compiler emits give many, and
  // every consumer that reconstructs exp(L_m) can then work per block.
  std::vector<std::vector<int>> comp_rows;
  std::vector<std::pair<int, int>> comp_cols;
};

namespace detail {

// Group sorted real values into clusters separated by gaps > gap_tol.
inline std::vector<std::pair<int, int>> cluster_ranges(const RVector& sorted,
                                                       double gap_tol) {
  std::vector<std::pair<int, int>> ranges;
  int start = 0;
  for (int i = 1; i <= sorted.size(); ++i) {
    if (i == sorted.size() || sorted(i) - sorted(i - 1) > gap_tol) {
      ranges.emplace_back(start, i);
      start = i;
    }
  }
  return ranges;
}

// Joint diagonalization of the commuting Hermitian/skew-Hermitian parts of a
// normal matrix: diagonalize H, then K compressed onto each H-eigenspace,
// then H again within K-subclusters. Gives an orthonormal eigenbasis, which
// keeps left vectors exact and makes large normal channels tractable.
inline bool normal_eigensystem(const CMatrix& m, EigenSystem& out) {
  const Eigen::Index n = m.rows();
  const double scale = std::max(m.norm(), 1e-300);
  if ((m * m.adjoint() - m.adjoint() * m).norm() > 1e-12 * scale * scale)
    return false;
  CMatrix h = 0.5 * (m + m.adjoint());
  CMatrix k = Complex(0, -0.5) * (m - m.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es_h(h);
  if (es_h.info() != Eigen::Success) return false;
  CMatrix basis = es_h.eigenvectors();
  RVector hvals = es_h.eigenvalues();
  CVector vals(n);
  // Two gap levels: clusters of H are cut coarsely, but the work inside a
  // cluster (splitting on K, refining H again) must resolve spacings far
  // below the cluster gap, down to what the residual gate can confirm.
  const double gap = std::max(1e-9 * scale, 1e-13);
  const double fine = std::max(1e-12 * scale, 1e-15);
  for (auto [b, e] : cluster_ranges(hvals, gap)) {
    const int len = e - b;
    auto block = basis.middleCols(b, len);
    if (len == 1) {
      vals(b) = Complex(hvals(b), (block.adjoint() * k * block)(0, 0).real());
      continue;
    }
    CMatrix kc = block.adjoint() * k * block;
    kc = 0.5 * (kc + kc.adjoint());
    if (kc.norm() <= fine) {  // real cluster, any orthonormal basis works
      for (int i = b; i < e; ++i)
        vals(i) = Complex(hvals(i), kc(i - b, i - b).real());
      continue;
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es_k(kc);
    if (es_k.info() != Eigen::Success) return false;
    CMatrix rotated = block * es_k.eigenvectors();
    RVector kvals = es_k.eigenvalues();
    // refine H within K-subclusters so joint eigenvalues come out exact
    for (auto [b2, e2] : cluster_ranges(kvals, fine)) {
      const int len2 = e2 - b2;
      auto sub = rotated.middleCols(b2, len2);
      if (len2 > 1) {
        CMatrix hc = sub.adjoint() * h * sub;
        hc = 0.5 * (hc + hc.adjoint());
        if (hc.norm() > fine) {
          Eigen::SelfAdjointEigenSolver<CMatrix> es_h2(hc);
          if (es_h2.info() != Eigen::Success) return false;
          CMatrix sub2 = sub * es_h2.eigenvectors();
          sub = sub2;
          for (int i = 0; i < len2; ++i)
            vals(b + b2 + i) = Complex(es_h2.eigenvalues()(i), kvals(b2 + i));
          continue;
        }
      }
      for (int i = 0; i < len2; ++i) {
        Complex hv = (sub.col(i).adjoint() * h * sub.col(i))(0, 0);
        vals(b + b2 + i) = Complex(hv.real(), kvals(b2 + i));
      }
    }
    basis.middleCols(b, len) = rotated;
  }
  double residual = (m * basis - basis * vals.asDiagonal()).norm() / scale;
  if (residual > 1e-9) return false;
  out.values = std::move(vals);
  out.right = basis;
  out.left = std::move(basis);
  out.recon_residual = residual;
  out.normal_path = true;
  return true;
}

// Eigensystem of one dense block. Residual is reported in absolute Frobenius
// norm so block contributions can be pooled across components.
inline void block_eigensystem(const CMatrix& m, double cond_cap,
                              EigenSystem& out, double& abs_residual) {
  if (normal_eigensystem(m, out)) {
    abs_residual = out.recon_residual * std::max(m.norm(), 1e-300);
    return;
  }
  Eigen::ComplexEigenSolver<CMatrix> es(m);
  if (es.info() != Eigen::Success)
    throw DegenerateChannel("eigendecomposition failed to converge");
  out.values = es.eigenvalues();
  out.right = es.eigenvectors();
  Eigen::PartialPivLU<CMatrix> lu(out.right);
  CMatrix inv = lu.inverse();
  const double cond = out.right.norm() * inv.norm();
  if (!std::isfinite(cond) || cond > cond_cap)
    throw DegenerateChannel("eigenbasis condition number exceeds cap");
  out.left = inv.adjoint();
  abs_residual =
      (out.right * out.values.asDiagonal() * out.left.adjoint() - m).norm();
  out.normal_path = false;
}

}  // namespace detail

inline EigenSystem eigensystem(const CMatrix& m, double cond_cap = 1e8) {
  const Eigen::Index n = m.rows();
  EigenSystem out;
  std::vector<std::vector<int>> comps = detail::support_components(m);
  out.values = CVector::Zero(n);
  out.right = CMatrix::Zero(n, n);
  out.left = CMatrix::Zero(n, n);
  out.normal_path = true;
  double residual_sq = 0.0;
  int col = 0;
  for (auto& rows : comps) {
    const int s = static_cast<int>(rows.size());
    out.comp_cols.emplace_back(col, col + s);
    if (s == 1) {
      out.values(col) = m(rows[0], rows[0]);
      out.right(rows[0], col) = 1.0;
      out.left(rows[0], col) = 1.0;
      ++col;
      out.comp_rows.push_back(std::move(rows));
      continue;
    }
    CMatrix block(s, s);
    for (int a = 0; a < s; ++a)
      for (int b = 0; b < s; ++b) block(a, b) = m(rows[a], rows[b]);
    EigenSystem sub;
    double abs_res = 0.0;
    detail::block_eigensystem(block, cond_cap, sub, abs_res);
    residual_sq += abs_res * abs_res;
    out.normal_path = out.normal_path && sub.normal_path;
    out.values.segment(col, s) = sub.values;
    for (int a = 0; a < s; ++a) {
      out.right.row(rows[a]).segment(col, s) = sub.right.row(a);
      out.left.row(rows[a]).segment(col, s) = sub.left.row(a);
    }
    col += s;
    out.comp_rows.push_back(std::move(rows));
  }
  // Off-block entries of the reconstruction are exactly zero, so the block
  // residuals pool into the global one.
  out.recon_residual = std::sqrt(residual_sq) / std::max(m.norm(), 1e-300);
  return out;
}

// True when some cluster of eigenvalues on the negative real axis has odd
// size. Such a channel has negative determinant, which no Hermiticity-
// preserving logarithm can produce, so it is certifiably non-Markovian.
inline bool negative_axis_obstruction(const CVector& values,
                                      double im_tol = 1e-9,
                                      double gap_tol = 1e-9) {
  std::vector<double> neg;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const Complex v = values(i);
    if (v.real() < 0 && std::abs(v.imag()) <= im_tol * (1.0 + std::abs(v)))
      neg.push_back(v.real());
  }
  if (neg.empty()) return false;
  std::sort(neg.begin(), neg.end());
  int run = 1;
  for (std::size_t i = 1; i <= neg.size(); ++i) {
    if (i == neg.size() || neg[i] - neg[i - 1] > gap_tol * (1.0 + std::abs(neg[i]))) {
      if (run % 2 == 1) return true;
      run = 1;
    } else {
      ++run;
    }
  }
  return false;
}

struct SpectralData {
  int d = 0;
  CVector eigenvalues;
  CMatrix right;
  CMatrix left;
  std::vector<int> pair_index;  // conjugate partner, or -1
  std::vector<Complex> logs;    // chosen branch of log per eigenvalue
  double recon_residual = 0.0;
  bool normal_path = false;
  std::vector<std::vector<int>> comp_rows;        // support blocks (see EigenSystem)
  std::vector<std::pair<int, int>> comp_cols;
};

namespace detail {

// Replace the eigenvectors of an isolated 2-cluster on the negative real
// axis by the conjugation-symmetric pair r, flip(r), and assign logs
// ln r -/+ i*pi. Requires an orthonormal eigenbasis.
inline void split_negative_pair(SpectralData& s, int a, int b) {
  CVector q1 = s.right.col(a);
  CVector u1 = q1 + flip_vector(q1);
  if (u1.norm() < 0.5) u1 = Complex(0, 1) * (q1 - flip_vector(q1));
  if (u1.norm() < 1e-8)
    throw DegenerateChannel("cannot symmetrize negative-axis eigenpair");
  u1.normalize();
  CVector q2 = s.right.col(b);
  CVector u2 = q2 + flip_vector(q2);
  u2 -= u1 * (u1.adjoint() * u2);
  if (u2.norm() < 1e-8) {
    u2 = Complex(0, 1) * (q2 - flip_vector(q2));
    u2 -= u1 * (u1.adjoint() * u2);
  }
  if (u2.norm() < 1e-8)
    throw DegenerateChannel("cannot symmetrize negative-axis eigenpair");
  u2.normalize();
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CVector r = (u1 + Complex(0, 1) * u2) * inv_sqrt2;
  CVector rbar = (u1 - Complex(0, 1) * u2) * inv_sqrt2;
  s.right.col(a) = r;
  s.left.col(a) = r;
  s.right.col(b) = rbar;
  s.left.col(b) = rbar;
  const double lr = std::log(std::abs(s.eigenvalues(a).real()));
  s.logs[a] = Complex(lr, -kPi);  // representative carries the -i*pi branch
  s.logs[b] = Complex(lr, kPi);
  s.pair_index[a] = b;
  s.pair_index[b] = a;
}

}  // namespace detail

inline SpectralData classify_and_pair(EigenSystem sys, int d,
                                      const SpectralOptions& opt = {}) {
  SpectralData s;
  s.d = d;
  s.eigenvalues = std::move(sys.values);
  s.right = std::move(sys.right);
  s.left = std::move(sys.left);
  s.recon_residual = sys.recon_residual;
  s.normal_path = sys.normal_path;
  s.comp_rows = std::move(sys.comp_rows);
  s.comp_cols = std::move(sys.comp_cols);
  const Eigen::Index n = s.eigenvalues.size();
  s.pair_index.assign(n, -1);
  s.logs.assign(n, Complex(0, 0));

  const double scale = s.eigenvalues.cwiseAbs().maxCoeff();
  const double im_zero = std::max(opt.degeneracy_tol, 1e-14 * scale);

  std::vector<int> pos_im, neg_im, neg_real;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex v = s.eigenvalues(i);
    if (std::abs(v) <= opt.zero_tol)
      throw DegenerateChannel("eigenvalue too close to zero");
    if (std::abs(v.imag()) <= im_zero) {
      if (v.real() > 0) {
        s.logs[i] = Complex(std::log(v.real()), 0.0);
      } else {
        neg_real.push_back(static_cast<int>(i));
      }
    } else if (v.imag() > 0) {
      pos_im.push_back(static_cast<int>(i));
    } else {
      neg_im.push_back(static_cast<int>(i));
    }
  }

  // Negative real axis: only isolated 2-clusters are unambiguous.
  std::sort(neg_real.begin(), neg_real.end(), [&](int a, int b) {
    return s.eigenvalues(a).real() < s.eigenvalues(b).real();
  });
  for (std::size_t i = 0; i < neg_real.size();) {
    std::size_t j = i + 1;
    const double gap = std::max(opt.degeneracy_tol, 1e-12 * scale);
    while (j < neg_real.size() &&
           s.eigenvalues(neg_real[j]).real() -
                   s.eigenvalues(neg_real[j - 1]).real() <=
               gap)
      ++j;
    if (j - i != 2)
      throw DegenerateChannel(
          "negative real eigenvalue without an unambiguous partner");
    if (!s.normal_path)
      throw DegenerateChannel(
          "negative real eigenpair of a non-normal channel");
    detail::split_negative_pair(s, neg_real[i], neg_real[i + 1]);
    i = j;
  }

  // Conjugate pairing by the mutual-nearest-disc criterion.
  for (int i : pos_im) {
    const Complex target = std::conj(s.eigenvalues(i));
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (int j : neg_im) {
      if (s.pair_index[j] != -1) continue;
      const double dist = std::abs(s.eigenvalues(j) - target);
      if (dist < best_d) {
        second = best_d;
        best_d = dist;
        best = j;
      } else if (dist < second) {
        second = dist;
      }
    }
    if (best < 0 || best_d > opt.pair_tol)
      throw DegenerateChannel("unpaired complex eigenvalue");
    if (second <= best_d + opt.degeneracy_tol)
      throw DegenerateChannel("ambiguous conjugate pairing");
    // ambiguity on the other side: another positive-Im eigenvalue equally close
    for (int i2 : pos_im) {
      if (i2 == i) continue;
      if (std::abs(std::conj(s.eigenvalues(i2)) - s.eigenvalues(best)) <=
          best_d + opt.degeneracy_tol)
        throw DegenerateChannel("ambiguous conjugate pairing");
    }
    s.pair_index[i] = best;
    s.pair_index[best] = i;
    s.logs[i] = std::log(s.eigenvalues(i));
    s.logs[best] = std::log(s.eigenvalues(best));
  }
  return s;
}

inline SpectralData spectral(const SuperOp& e, const SpectralOptions& opt = {}) {
  return classify_and_pair(eigensystem(e.mat, opt.cond_cap), e.d, opt);
}

inline SuperOp principal_log(const SpectralData& s) {
  CVector logs(s.eigenvalues.size());
  for (Eigen::Index i = 0; i < logs.size(); ++i) logs(i) = s.logs[i];
  if (s.comp_rows.size() <= 1) {
    CMatrix l0 = s.right * logs.asDiagonal() * s.left.adjoint();
    return SuperOp{s.d, std::move(l0)};
  }
  // blocked assembly: vectors vanish outside their component's rows
  CMatrix l0 = CMatrix::Zero(s.right.rows(), s.right.cols());
  for (std::size_t b = 0; b < s.comp_rows.size(); ++b) {
    const auto& rows = s.comp_rows[b];
    const int col = s.comp_cols[b].first;
    const int len = s.comp_cols[b].second - col;
    const int sz = static_cast<int>(rows.size());
    CMatrix vr(sz, len), vl(sz, len);
    for (int a = 0; a < sz; ++a) {
      vr.row(a) = s.right.row(rows[a]).segment(col, len);
      vl.row(a) = s.left.row(rows[a]).segment(col, len);
    }
    CMatrix block = vr * logs.segment(col, len).asDiagonal() * vl.adjoint();
    for (int a = 0; a < sz; ++a)
      for (int c = 0; c < sz; ++c) l0(rows[a], rows[c]) = block(a, c);
  }
  return SuperOp{s.d, std::move(l0)};
}

struct BranchFamily {
  SuperOp L0;
  std::vector<SuperOp> A;
  // representative (negative log-imaginary-part member) and partner indices
  std::vector<std::pair<int, int>> pairs;
};

// A_c = 2 pi i (P_c - flip(P_c)) with P_c the right-left spectral projector
// of the pair member whose log has negative imaginary part. This orientation
// makes e^{L_0 + A_c} = E and gives A_c nonzero eigenvalues +/- 2 pi i.
inline std::vector<SuperOp> branch_matrices(const SpectralData& s,
                                            std::vector<std::pair<int, int>>* pairs_out = nullptr) {
  std::vector<SuperOp> out;
  for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
    const int j = s.pair_index[i];
    if (j < 0 || j < static_cast<int>(i)) continue;
    const int rep = s.logs[i].imag() < 0 ? static_cast<int>(i) : j;
    CMatrix p = s.right.col(rep) * s.left.col(rep).adjoint();
    CMatrix a = Complex(0, 2 * kPi) * (p - flip_operator(p));
    out.push_back(SuperOp{s.d, std::move(a)});
    if (pairs_out) pairs_out->emplace_back(rep, rep == static_cast<int>(i) ? j : static_cast<int>(i));
  }
  return out;
}

inline BranchFamily make_branch_family(const SpectralData& s) {
  BranchFamily b;
  b.L0 = principal_log(s);
  b.A = branch_matrices(s, &b.pairs);
  return b;
}

inline SuperOp branch_generator(const BranchFamily& b,
                                const std::vector<long>& m) {
  if (m.size() != b.A.size())
    throw DimensionError("branch integer vector length mismatch");
  SuperOp l = b.L0;
  for (std::size_t c = 0; c < m.size(); ++c)
    if (m[c] != 0) l.mat += double(m[c]) * b.A[c].mat;
  return l;
}

struct Lemma3Report {
  double max_commutator = 0.0;
  double max_eigen_error = 0.0;   // A_c nonzero eigenvalues vs +/- 2 pi i
  double max_rank_excess = 0.0;   // third-largest singular value of A_c
  double max_omega_residual = 0.0;
  double max_herm_residual = 0.0; // Gamma(L0), Gamma(A_c) Hermiticity
  double max_overlap = 0.0;       // |tr(A_c^dag A_c')| between distinct pairs
  bool pass = false;
};

inline Lemma3Report verify_lemma3(const BranchFamily& b, double tol = 1e-7) {
  Lemma3Report r;
  const int d = b.L0.d;
  OmegaData w = omega_data(d);
  CMatrix gl = gamma_involution(b.L0.mat);
  r.max_herm_residual = (gl - gl.adjoint()).norm();
  for (std::size_t c = 0; c < b.A.size(); ++c) {
    const CMatrix& a = b.A[c].mat;
    r.max_commutator = std::max(r.max_commutator,
                                (b.L0.mat * a - a * b.L0.mat).norm());
    for (std::size_t c2 = c + 1; c2 < b.A.size(); ++c2) {
      r.max_commutator = std::max(
          r.max_commutator, (a * b.A[c2].mat - b.A[c2].mat * a).norm());
      r.max_overlap =
          std::max(r.max_overlap, std::abs((a.adjoint() * b.A[c2].mat).trace()));
    }
    CMatrix ga = gamma_involution(a);
    r.max_herm_residual =
        std::max(r.max_herm_residual, (ga - ga.adjoint()).norm());
    r.max_omega_residual =
        std::max(r.max_omega_residual, (a.adjoint() * w.vec).norm());
    Eigen::JacobiSVD<CMatrix> svd(a);
    if (svd.singularValues().size() > 2)
      r.max_rank_excess =
          std::max(r.max_rank_excess, svd.singularValues()(2));
    Eigen::ComplexEigenSolver<CMatrix> es(a);
    std::vector<double> ims;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
      const Complex v = es.eigenvalues()(i);
      if (std::abs(v) > tol * 2 * kPi) ims.push_back(v.imag());
    }
    std::sort(ims.begin(), ims.end());
    if (ims.size() != 2) {
      r.max_eigen_error = std::max(r.max_eigen_error, 2 * kPi);
    } else {
      r.max_eigen_error = std::max(
          r.max_eigen_error,
          std::max(std::abs(ims[0] + 2 * kPi), std::abs(ims[1] - 2 * kPi)));
    }
  }
  const double s = 2 * kPi;
  r.pass = r.max_commutator <= tol * s && r.max_eigen_error <= tol * s &&
           r.max_rank_excess <= tol * s && r.max_omega_residual <= tol * s &&
           r.max_herm_residual <= tol * s && r.max_overlap <= tol * s * s;
  return r;
}

}  // namespace markov
