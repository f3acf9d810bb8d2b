#pragma once

// Classical embeddability: is a column-stochastic matrix P the exponential
// of a rate matrix (nonnegative off-diagonal, zero column sums)? Same
// principal-log-plus-integer-branches structure as the channel decision,
// with the dissipativity cone replaced by entrywise nonnegativity.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "markov/core.hpp"
#include "markov/decider.hpp"
#include "markov/log_branches.hpp"

namespace markov {

struct StochasticMatrix {
  int d = 0;
  RMatrix mat;  // columns sum to 1
};

struct StochasticReport {
  double entry_min = 0.0;
  double colsum_residual = 0.0;
  bool pass = false;
};

inline StochasticReport check_stochastic(const RMatrix& p, double tol = 1e-9) {
  StochasticReport r;
  if (p.rows() != p.cols() || p.rows() == 0)
    throw DimensionError("stochastic matrix must be square and nonempty");
  r.entry_min = p.minCoeff();
  r.colsum_residual =
      (p.colwise().sum().transpose() - RVector::Ones(p.cols()))
          .cwiseAbs()
          .maxCoeff();
  r.pass = r.entry_min >= -tol && r.colsum_residual <= tol;
  return r;
}

struct QMatrixReport {
  double offdiag_min = 0.0;
  double colsum_residual = 0.0;
  bool pass = false;
};

inline QMatrixReport check_qmatrix(const RMatrix& q, double tol = 1e-9) {
  QMatrixReport r;
  if (q.rows() != q.cols() || q.rows() == 0)
    throw DimensionError("rate matrix must be square and nonempty");
  r.offdiag_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      if (i != j) r.offdiag_min = std::min(r.offdiag_min, q(i, j));
  if (q.rows() == 1) r.offdiag_min = 0.0;
  r.colsum_residual = q.colwise().sum().cwiseAbs().maxCoeff();
  r.pass = r.offdiag_min >= -tol && r.colsum_residual <= tol;
  return r;
}

// Q + tau (AllOnes - d I): adds tau to every off-diagonal rate, keeps
// column sums zero, moves Q by tau * d * sqrt(d - 1) in Frobenius norm.
inline RMatrix repair_qmatrix(const RMatrix& q, double tau) {
  if (tau < 0) throw std::invalid_argument("repair amount must be nonnegative");
  const Eigen::Index d = q.rows();
  return q + tau * (RMatrix::Ones(d, d) - double(d) * RMatrix::Identity(d, d));
}

// 2x2 case in closed form: embeddable iff det P = P00 + P11 - 1 > 0.
inline bool kingman_embeddable_2x2(const StochasticMatrix& p, double tol = 1e-9) {
  if (p.d != 2) throw DimensionError("closed form requires a 2x2 matrix");
  if (!check_stochastic(p.mat, tol).pass)
    throw std::invalid_argument("matrix is not column-stochastic");
  return p.mat(0, 0) + p.mat(1, 1) > 1.0;
}

// Embed a classical map into a channel acting on the diagonal sector:
// E(|j><j|) = sum_i P_ij |i><i|, coherences scaled by the decoherence
// factor (0 gives the fully decohering completion, which is always CPT).
inline SuperOp lift_stochastic_to_channel(const StochasticMatrix& p,
                                          double decoherence = 0.0) {
  if (!check_stochastic(p.mat, 1e-9).pass)
    throw std::invalid_argument("matrix is not column-stochastic");
  const int d = p.d;
  CMatrix e = CMatrix::Zero(d * d, d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      e(i * d + i, j * d + j) = p.mat(i, j);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) e(i * d + j, i * d + j) = decoherence;
  return SuperOp{d, std::move(e)};
}

// Embed a rate matrix into a generator, with uniform decoherence rate tau
// on the coherence sector. Satisfies the generator conditions when
// tau >= max_i(-Q_ii).
inline SuperOp lift_qmatrix_to_generator(const RMatrix& q, double tau) {
  QMatrixReport rep = check_qmatrix(q, 1e-9);
  if (!rep.pass) throw std::invalid_argument("input is not a rate matrix");
  const int d = static_cast<int>(q.rows());
  if (tau < q.diagonal().cwiseAbs().maxCoeff())
    throw std::invalid_argument(
        "decoherence rate too small for the diagonal rates");
  CMatrix l = CMatrix::Zero(d * d, d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      l(i * d + i, j * d + j) = q(i, j);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) l(i * d + j, i * d + j) = -tau;
  return SuperOp{d, std::move(l)};
}

struct ClassicalVerdict {
  enum class Kind { Embeddable, NotEmbeddable };
  Kind kind = Kind::NotEmbeddable;
  double t_star = 0.0;        // max off-diagonal violation at m_star
  std::vector<long> m_star;
  std::optional<RMatrix> witness;
  double delta_tilde = 0.0;
  bool box_limited = false;
  bool axis_obstruction = false;
  bool exhaustive = true;
  bool repaired = false;
  int M = 0;
  double threshold = 0.0;
};

// Conjugate pairing for a real matrix spectrum; projector of the conjugate
// eigenvalue is the conjugate projector, so branch matrices are real:
// A_c = 2 pi i (P_c - conj P_c) = -4 pi Im P_c.
inline ClassicalVerdict decide_embeddable(const StochasticMatrix& p,
                                          const DeciderConfig& cfg = {}) {
  if (!check_stochastic(p.mat, cfg.gate.tp_tol).pass)
    throw std::invalid_argument("matrix is not column-stochastic");
  const int d = p.d;
  ClassicalVerdict v;
  if (d == 1) {
    v.kind = ClassicalVerdict::Kind::Embeddable;
    v.witness = RMatrix::Zero(1, 1);
    return v;
  }
  EigenSystem sys = eigensystem(p.mat.cast<Complex>(), cfg.spectral.cond_cap);
  const double scale = sys.values.cwiseAbs().maxCoeff();
  const double axis_tol =
      std::max(cfg.spectral.degeneracy_tol, 1e-12 * scale);
  if (negative_axis_obstruction(sys.values, axis_tol, axis_tol)) {
    v.axis_obstruction = true;
    v.t_star = std::numeric_limits<double>::infinity();
    return v;
  }
  const Eigen::Index n = sys.values.size();
  const double im_zero = std::max(cfg.spectral.degeneracy_tol, 1e-14 * scale);
  std::vector<Complex> logs(n);
  std::vector<int> pair_index(n, -1);
  std::vector<int> pos_im, neg_im;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex val = sys.values(i);
    if (std::abs(val) <= cfg.spectral.zero_tol)
      throw DegenerateChannel("eigenvalue too close to zero");
    if (std::abs(val.imag()) <= im_zero) {
      if (val.real() < 0)
        throw DegenerateChannel(
            "even negative-axis cluster of a stochastic matrix is not "
            "supported");
      logs[i] = Complex(std::log(val.real()), 0.0);
    } else if (val.imag() > 0) {
      pos_im.push_back(static_cast<int>(i));
    } else {
      neg_im.push_back(static_cast<int>(i));
    }
  }
  for (int i : pos_im) {
    const Complex target = std::conj(sys.values(i));
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (int j : neg_im) {
      if (pair_index[j] != -1) continue;
      const double dist = std::abs(sys.values(j) - target);
      if (dist < best_d) {
        second = best_d;
        best_d = dist;
        best = j;
      } else if (dist < second) {
        second = dist;
      }
    }
    if (best < 0 || best_d > cfg.spectral.pair_tol)
      throw DegenerateChannel("unpaired complex eigenvalue");
    if (second <= best_d + cfg.spectral.degeneracy_tol)
      throw DegenerateChannel("ambiguous conjugate pairing");
    pair_index[i] = best;
    pair_index[best] = i;
    logs[i] = std::log(sys.values(i));
    logs[best] = std::log(sys.values(best));
  }

  CVector logv(n);
  for (Eigen::Index i = 0; i < n; ++i) logv(i) = logs[i];
  CMatrix l0c = sys.right * logv.asDiagonal() * sys.left.adjoint();
  if (l0c.imag().cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, l0c.norm()))
    throw DegenerateChannel("principal log of a real matrix came out complex");
  RMatrix l0 = l0c.real();

  std::vector<RMatrix> amats;
  for (int i : pos_im) {
    const int rep = logs[i].imag() < 0 ? i : pair_index[i];
    CMatrix proj = sys.right.col(rep) * sys.left.col(rep).adjoint();
    amats.push_back(-4.0 * kPi * proj.imag());
  }

  const int nc = static_cast<int>(amats.size());
  const double norm_l0 = l0.norm();
  const int box =
      cfg.M > 0
          ? cfg.M
          : std::max(3, static_cast<int>(std::ceil(norm_l0 / (2 * kPi))) + 2);
  const double kappa_achieved = (mat_exp(l0c).real() - p.mat).norm();
  double kappa = cfg.kappa > 0.0
                     ? cfg.kappa
                     : std::min(1e-8, cfg.epsilon / (10.0 * (1.0 + box * d)));
  kappa = std::max(kappa, kappa_achieved);
  double sum_a = 0.0;
  for (const auto& a : amats) sum_a += a.norm();
  DeltaSolve ds = solve_delta_tilde(
      cfg.epsilon, threshold_log_c(norm_l0, sum_a, box, kappa, d));
  v.delta_tilde = ds.delta_tilde;
  const double denom = d * std::sqrt(double(d) - 1.0);
  const double a_threshold = ds.delta_tilde / (6.0 * denom);
  const double repair_tau = ds.delta_tilde / (2.0 * denom);
  v.threshold = a_threshold;
  v.M = box;

  auto violation = [&](const std::vector<long>& m) {
    RMatrix q = l0;
    for (int c = 0; c < nc; ++c)
      if (m[c] != 0) q += double(m[c]) * amats[c];
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) worst = std::max(worst, -q(i, j));
    return worst;
  };

  std::vector<long> m(nc, -box), best_m(nc, 0);
  const double cost = std::pow(2.0 * box + 1.0, double(nc)) * d * d;
  v.exhaustive = cost <= cfg.flop_budget;
  if (nc == 0) {
    v.t_star = violation(best_m);
  } else if (v.exhaustive) {
    best_m = m;
    double best_t = violation(m);
    while (true) {
      int k = nc - 1;
      while (k >= 0 && m[k] == box) m[k--] = -box;
      if (k < 0) break;
      ++m[k];
      const double t = violation(m);
      if (t < best_t) {
        best_t = t;
        best_m = m;
      }
    }
    v.t_star = best_t;
  } else {
    std::vector<long> cur(nc, 0);
    double best_t = violation(cur);
    for (int sweep = 0; sweep < 64; ++sweep) {
      bool moved = false;
      for (int c = 0; c < nc; ++c)
        for (long step : {-1L, 1L}) {
          std::vector<long> cand = cur;
          cand[c] += step;
          if (std::abs(cand[c]) > box) continue;
          const double t = violation(cand);
          if (t < best_t - 1e-15) {
            best_t = t;
            cur = cand;
            moved = true;
          }
        }
      if (!moved) break;
    }
    best_m = cur;
    v.t_star = best_t;
  }
  v.m_star = best_m;
  for (long mi : best_m)
    if (std::abs(mi) == box) v.box_limited = true;

  if (v.t_star > a_threshold) {
    if (!v.exhaustive)
      throw BudgetError(
          "branch search exceeded the flop budget; cannot certify a "
          "non-embeddable verdict from a local search");
    v.kind = ClassicalVerdict::Kind::NotEmbeddable;
    return v;
  }
  RMatrix w = l0;
  for (int c = 0; c < nc; ++c)
    if (best_m[c] != 0) w += double(best_m[c]) * amats[c];
  if (v.t_star > -a_threshold && repair_tau > 0.0) {
    w = repair_qmatrix(w, repair_tau);
    v.repaired = true;
  }
  QMatrixReport wrep = check_qmatrix(w, std::max(1e-9, 1e-12 * norm_l0));
  if (!wrep.pass)
    throw WitnessError("witness rate matrix fails the rate conditions");
  const double exp_err = (mat_exp(w.cast<Complex>()).real() - p.mat).norm();
  if (!(exp_err <= cfg.epsilon))
    throw WitnessError("witness rate matrix does not reproduce the input");
  v.kind = ClassicalVerdict::Kind::Embeddable;
  v.witness = std::move(w);
  return v;
}

}  // namespace markov
