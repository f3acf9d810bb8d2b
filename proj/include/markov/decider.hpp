#pragma once

// Markovianity decision for a channel: principal log, integer branch search
// over the box ||m||_inf <= M, conditioning-aware thresholds, and certified
// witnesses. Every Markovian verdict is backed by a generator that is
// re-checked against the channel before it is returned.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "markov/core.hpp"
#include "markov/cpt_project.hpp"
#include "markov/lindblad.hpp"
#include "markov/log_branches.hpp"

namespace markov {

class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WitnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ||e^B - e^A||_F <= e^||A|| e^||A-B|| ||A-B||  (Frobenius, any A, B)
inline double exp_continuity_bound(double norm_a, double norm_a_minus_b) {
  return std::exp(norm_a) * std::exp(norm_a_minus_b) * norm_a_minus_b;
}

// Log-branch continuity: bound on ||log_m A - log_m B|| over branches
// ||m||_inf <= m_bound, valid when the spectra stay clear of zero by the
// implicit margin encoded in the guard below.
inline double log_continuity_bound(double norm_a, double norm_a_minus_b,
                                   double m_bound) {
  if (norm_a_minus_b == 0.0) return 0.0;
  const double c = 134.0 * (1.0 + m_bound * m_bound);
  const double guard =
      c * c * norm_a_minus_b * norm_a_minus_b - norm_a * norm_a;
  double k = 1.0;
  if (guard > 0.0) k = std::min(1.0, 1.0 / std::sqrt(guard));
  return c * k *
         (1.0 + k * norm_a +
          k * norm_a_minus_b * std::sqrt(1.0 + k * k * norm_a * norm_a)) *
         norm_a_minus_b;
}

struct DeltaSolve {
  double delta_tilde = 0.0;
  double residual = 0.0;  // |C dt e^dt - eps| / eps, 0 when underflowed
  bool underflow = false;
};

// Solve C * delta * e^delta = epsilon for delta > 0, with C passed as log C
// so that enormous conditioning constants degrade to delta ~ 0 instead of
// overflowing. Solved as y + e^y = log(eps) - log C in y = log delta.
inline DeltaSolve solve_delta_tilde(double epsilon, double log_c) {
  if (!(epsilon > 0.0))
    throw std::invalid_argument("epsilon must be positive");
  const double target = std::log(epsilon) - log_c;
  DeltaSolve out;
  if (target < -700.0) {
    // delta ~ e^target is subnormal or zero; report the graceful floor
    out.delta_tilde = std::exp(target);
    out.underflow = true;
    return out;
  }
  double lo = -745.0, hi = 7.0;
  while (hi + std::exp(hi) < target) hi += 1.0;  // epsilon >> C
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mid + std::exp(mid) < target ? lo : hi) = mid;
  }
  double y = 0.5 * (lo + hi);
  for (int it = 0; it < 4; ++it)
    y -= (y + std::exp(y) - target) / (1.0 + std::exp(y));
  out.delta_tilde = std::exp(y);
  out.residual = std::abs(std::expm1(y + std::exp(y) - target));
  return out;
}

// log C for the threshold solve, from the computed log and branch norms
inline double threshold_log_c(double norm_l0, double sum_norm_a, int box,
                              double kappa, int d) {
  return norm_l0 + box * sum_norm_a + kappa + 0.5 * box * d * kappa;
}

// Threshold family scaled from delta_tilde. The deflation projector has
// Frobenius norm sqrt(d^2 - 1); its first and third powers are the only
// geometry entering these bounds.

// eigenvalue accuracy required of the spectral data
inline double eigenvalue_precision(double delta_tilde, int d) {
  const double q = double(d) * d - 1.0;
  return delta_tilde / (12.0 * d * q * std::sqrt(q));
}

// eigenvector accuracy required of the spectral data
inline double eigenvector_precision(double delta_tilde, int box, int d) {
  const double q = double(d) * d - 1.0;
  return delta_tilde / (24.0 * kPi * box * double(d) * d * q * std::sqrt(q));
}

// verdict threshold a: t <= -a accepts, t > a rejects
inline double verdict_threshold(double delta_tilde, int d) {
  const double q = double(d) * d - 1.0;
  return delta_tilde / (6.0 * d * std::sqrt(q));
}

// margin guaranteed after repairing a boundary-case witness
inline double boundary_margin(double delta_tilde, int d) {
  const double q = double(d) * d - 1.0;
  return delta_tilde / (3.0 * d * std::sqrt(q));
}

// shift applied by the boundary-case repair
inline double repair_amount(double delta_tilde, int d) {
  const double q = double(d) * d - 1.0;
  return delta_tilde / (2.0 * d * std::sqrt(q));
}

struct DeciderConfig {
  double epsilon = 1e-3;
  int M = 0;                  // branch box radius; 0 derives it from ||L0||
  double kappa = 0.0;         // log precision allowance; 0 derives it
  double epsilon_prime = 0.0; // channel-distance gate for maps; 0 means eps/3
  double flop_budget = 4e9;   // exhaustive-search cost cap, eigensolve flops
  SpectralOptions spectral;
  Tolerances gate;            // is_cpt admission tolerances
};

struct MinimizeResult {
  std::vector<long> m_star;
  double t_star = 0.0;        // -lambda_min of the compressed matrix at m_star
  bool box_limited = false;
  bool exhaustive = true;     // false when the budget forced a local search
};

namespace detail {

// Exact-zero support blocking is a permutation similarity, so the blocked
// minimum is the dense minimum; it just skips cubing block-sparse inputs.
inline double min_eig_hermitian(const CMatrix& m) {
  if (m.rows() == 1) return m(0, 0).real();
  return min_eig_hermitian_blocked(m);
}

}  // namespace detail

// Minimize t(m) = -lambda_min(c0 + sum_c m_c d_c) over m in [-box, box]^nc.
// The matrices decompose into independent blocks over their joint support
// graph, and variables never straddle blocks after merging, so the search
// is exhaustive per block. Ties break to the lexicographically smallest m.
inline MinimizeResult integer_minimize(const CMatrix& c0,
                                       const std::vector<CMatrix>& dmats,
                                       int box, double flop_budget = 4e9) {
  const int n = static_cast<int>(c0.rows());
  const int nc = static_cast<int>(dmats.size());
  detail::UnionFind uf(n);
  auto add_edges = [&](const CMatrix& x) {
    const double tol = 1e-12 * std::max(x.cwiseAbs().maxCoeff(), 1e-300);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (std::abs(x(i, j)) > tol || std::abs(x(j, i)) > tol)
          uf.unite(i, j);
  };
  add_edges(c0);
  std::vector<std::vector<int>> var_rows(nc);
  for (int c = 0; c < nc; ++c) {
    add_edges(dmats[c]);
    const double tol =
        1e-12 * std::max(dmats[c].cwiseAbs().maxCoeff(), 1e-300);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (std::abs(dmats[c](i, j)) > tol) {
          var_rows[c].push_back(i);
          var_rows[c].push_back(j);
        }
    for (std::size_t t = 1; t < var_rows[c].size(); ++t)
      uf.unite(var_rows[c][0], var_rows[c][t]);
  }

  std::vector<int> root_of(n), comp_of(n, -1);
  std::vector<std::vector<int>> comp_rows;
  for (int i = 0; i < n; ++i) root_of[i] = uf.find(i);
  for (int i = 0; i < n; ++i) {
    if (comp_of[root_of[i]] < 0) {
      comp_of[root_of[i]] = static_cast<int>(comp_rows.size());
      comp_rows.emplace_back();
    }
    comp_rows[comp_of[root_of[i]]].push_back(i);
  }
  const int nb = static_cast<int>(comp_rows.size());
  std::vector<std::vector<int>> comp_vars(nb);
  for (int c = 0; c < nc; ++c)
    if (!var_rows[c].empty())
      comp_vars[comp_of[root_of[var_rows[c][0]]]].push_back(c);

  auto extract = [&](const CMatrix& x, const std::vector<int>& rows) {
    CMatrix out(rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows.size(); ++j)
        out(i, j) = x(rows[i], rows[j]);
    return out;
  };
  // A block whose base and directions are all diagonal costs s per grid
  // point, not an s^3 eigensolve; compiled-instance blocks are of this kind.
  auto is_diag = [](const CMatrix& x) {
    const double tol = 1e-14 * std::max(x.cwiseAbs().maxCoeff(), 1.0);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (i != j && std::abs(x(i, j)) > tol) return false;
    return true;
  };

  std::vector<CMatrix> bases(nb);
  std::vector<std::vector<CMatrix>> dirs(nb);
  std::vector<bool> diag_block(nb);
  const double width = 2.0 * box + 1.0;
  double cost = 0.0;
  for (int b = 0; b < nb; ++b) {
    bases[b] = extract(c0, comp_rows[b]);
    diag_block[b] = is_diag(bases[b]);
    for (int c : comp_vars[b]) {
      dirs[b].push_back(extract(dmats[c], comp_rows[b]));
      diag_block[b] = diag_block[b] && is_diag(dirs[b].back());
    }
    const double s = static_cast<double>(comp_rows[b].size());
    cost += std::pow(width, static_cast<double>(comp_vars[b].size())) *
            std::max(diag_block[b] ? s : s * s * s, 1.0);
  }
  const bool exhaustive = cost <= flop_budget;

  MinimizeResult res;
  res.m_star.assign(nc, 0);
  res.exhaustive = exhaustive;
  for (int b = 0; b < nb; ++b) {
    const auto& rows = comp_rows[b];
    const auto& vars = comp_vars[b];
    const CMatrix& base = bases[b];
    RVector base_diag, dir_diag;
    if (diag_block[b]) {
      base_diag = base.diagonal().real();
      dir_diag.resize(rows.size() * vars.size());
      for (std::size_t t = 0; t < vars.size(); ++t)
        dir_diag.segment(t * rows.size(), rows.size()) =
            dirs[b][t].diagonal().real();
    }
    auto eval = [&](const std::vector<long>& mb) {
      if (diag_block[b]) {
        RVector diag = base_diag;
        for (std::size_t t = 0; t < mb.size(); ++t)
          if (mb[t] != 0)
            diag += double(mb[t]) * dir_diag.segment(t * rows.size(), rows.size());
        return -diag.minCoeff();
      }
      CMatrix m = base;
      for (std::size_t t = 0; t < mb.size(); ++t)
        if (mb[t] != 0) m += double(mb[t]) * dirs[b][t];
      return -detail::min_eig_hermitian(0.5 * (m + m.adjoint()));
    };
    std::vector<long> best(vars.size(), 0);
    double best_t;
    if (vars.empty()) {
      best_t = eval(best);
    } else if (exhaustive) {
      std::vector<long> mb(vars.size(), -box);
      best = mb;
      best_t = eval(mb);
      while (true) {
        int k = static_cast<int>(mb.size()) - 1;
        while (k >= 0 && mb[k] == box) mb[k--] = -box;
        if (k < 0) break;
        ++mb[k];
        const double t = eval(mb);
        if (t < best_t) {  // strict: first minimizer in odometer order wins
          best_t = t;
          best = mb;
        }
      }
    } else {
      // budget fallback: deterministic coordinate descent from m = 0
      std::vector<long> mb(vars.size(), 0);
      best_t = eval(mb);
      for (int sweep = 0; sweep < 64; ++sweep) {
        bool moved = false;
        for (std::size_t t = 0; t < mb.size(); ++t) {
          for (long step : {-1L, 1L}) {
            std::vector<long> cand = mb;
            cand[t] += step;
            if (std::abs(cand[t]) > box) continue;
            const double tc = eval(cand);
            if (tc < best_t - 1e-15) {
              best_t = tc;
              mb = cand;
              moved = true;
            }
          }
        }
        if (!moved) break;
      }
      best = mb;
    }
    for (std::size_t t = 0; t < vars.size(); ++t) {
      res.m_star[vars[t]] = best[t];
      if (std::abs(best[t]) == box) res.box_limited = true;
    }
  }

  // Re-evaluate on the full matrix; the verdict must not depend on the
  // support decomposition being right.
  CMatrix full = c0;
  for (int c = 0; c < nc; ++c)
    if (res.m_star[c] != 0) full += double(res.m_star[c]) * dmats[c];
  res.t_star = -detail::min_eig_hermitian(0.5 * (full + full.adjoint()));
  return res;
}

struct Verdict {
  enum class Kind { Markovian, NonMarkovian };
  Kind kind = Kind::NonMarkovian;
  double t_star = 0.0;
  std::vector<long> m_star;
  std::optional<SuperOp> witness;
  double delta_tilde = 0.0;
  bool box_limited = false;
  bool axis_obstruction = false;
  bool exhaustive = true;
  bool precision_ok = true;
  bool repaired = false;      // boundary case, witness nudged into the cone
  int M = 0;
  double kappa = 0.0;
  double threshold = 0.0;     // delta_tilde / (6 d sqrt(d^2-1))
  double witness_margin = 0.0;
  double witness_exp_error = 0.0;
};

namespace detail {

// ||sum_k v_k r_k l_k^dag - E||_F, assembled block by block when the
// eigensystem carries a support decomposition; the reconstruction is exactly
// zero between blocks, so entries of E there count in full.
inline double spectral_recon_error(const SpectralData& s, const CMatrix& e,
                                   const CVector& vals) {
  if (s.comp_rows.size() <= 1)
    return (s.right * vals.asDiagonal() * s.left.adjoint() - e).norm();
  const Eigen::Index n = e.rows();
  std::vector<int> comp_of(n, -1);
  for (std::size_t b = 0; b < s.comp_rows.size(); ++b)
    for (int r : s.comp_rows[b]) comp_of[r] = static_cast<int>(b);
  double err_sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (comp_of[i] != comp_of[j]) err_sq += std::norm(e(i, j));
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
    CMatrix recon = vr * vals.segment(col, len).asDiagonal() * vl.adjoint();
    for (int a = 0; a < sz; ++a)
      for (int c = 0; c < sz; ++c)
        err_sq += std::norm(recon(a, c) - e(rows[a], rows[c]));
  }
  return std::sqrt(err_sq);
}

// For d^2 > 64 a dense matrix exponential is not affordable, but the witness
// differs from the principal log only by branch phases, so e^w can be
// evaluated exactly through the eigensystem.
inline double witness_exp_error(const SuperOp& w, const SuperOp& e,
                                const SpectralData& s,
                                const std::vector<long>& m,
                                const BranchFamily& fam, bool repaired,
                                double repair_shift_norm) {
  if (e.d * e.d <= 64 || repaired) {
    if (e.d * e.d <= 64) return (mat_exp(w.mat) - e.mat).norm();
    // large repaired witness: spectral route cannot represent the shift,
    // fall back to the continuity bound around the unrepaired generator
    CVector vals(s.eigenvalues.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i)
      vals(i) = std::exp(s.logs[i]);
    const double base = spectral_recon_error(s, e.mat, vals);
    const double norm_w = w.mat.norm();
    return base + exp_continuity_bound(norm_w, repair_shift_norm);
  }
  std::vector<Complex> logs(s.logs);
  for (std::size_t c = 0; c < fam.pairs.size(); ++c) {
    logs[fam.pairs[c].first] += Complex(0, 2 * kPi * double(m[c]));
    logs[fam.pairs[c].second] -= Complex(0, 2 * kPi * double(m[c]));
  }
  CVector vals(s.eigenvalues.size());
  for (Eigen::Index i = 0; i < vals.size(); ++i) vals(i) = std::exp(logs[i]);
  return spectral_recon_error(s, e.mat, vals);
}

}  // namespace detail

inline Verdict decide_channel(const SuperOp& e, const DeciderConfig& cfg = {}) {
  const int d = e.d;
  CptReport gate = is_cpt(e, cfg.gate);
  if (!gate.pass)
    throw std::invalid_argument(
        "input is not completely positive and trace-preserving within "
        "tolerance");

  Verdict v;
  v.exhaustive = true;
  EigenSystem sys = eigensystem(e.mat, cfg.spectral.cond_cap);
  const double axis_tol = std::max(
      cfg.spectral.degeneracy_tol, 1e-12 * sys.values.cwiseAbs().maxCoeff());
  if (negative_axis_obstruction(sys.values, axis_tol, axis_tol)) {
    // odd negative-axis multiplicity: det E < 0 branch, no Hermiticity-
    // preserving log exists at any branch choice
    v.kind = Verdict::Kind::NonMarkovian;
    v.axis_obstruction = true;
    v.t_star = std::numeric_limits<double>::infinity();
    return v;
  }
  SpectralData sd = classify_and_pair(std::move(sys), d, cfg.spectral);
  BranchFamily fam = make_branch_family(sd);

  const double norm_l0 = fam.L0.mat.norm();
  double sum_norm_a = 0.0;
  for (const auto& a : fam.A) sum_norm_a += a.mat.norm();
  const int box =
      cfg.M > 0
          ? cfg.M
          : std::max(3, static_cast<int>(std::ceil(norm_l0 / (2 * kPi))) + 2);
  double kappa = cfg.kappa > 0.0
                     ? cfg.kappa
                     : std::min(1e-8, cfg.epsilon / (10.0 * (1.0 + box * d)));
  double kappa_achieved;
  if (d * d <= 64) {
    kappa_achieved = (mat_exp(fam.L0.mat) - e.mat).norm();
  } else {
    kappa_achieved = sd.recon_residual * e.mat.norm();
  }
  kappa = std::max(kappa, kappa_achieved);
  v.precision_ok = kappa_achieved <= cfg.epsilon / 10.0;
  v.M = box;
  v.kappa = kappa;

  DeltaSolve ds =
      solve_delta_tilde(cfg.epsilon,
                        threshold_log_c(norm_l0, sum_norm_a, box, kappa, d));
  v.delta_tilde = ds.delta_tilde;
  const double a_threshold = verdict_threshold(ds.delta_tilde, d);
  const double repair_eps = repair_amount(ds.delta_tilde, d);
  v.threshold = a_threshold;

  CMatrix g0 = gamma_involution(fam.L0.mat);
  CMatrix c0 = compress_complement(CMatrix(0.5 * (g0 + g0.adjoint())), d);
  std::vector<CMatrix> dmats;
  dmats.reserve(fam.A.size());
  for (const auto& a : fam.A) {
    CMatrix ga = gamma_involution(a.mat);
    dmats.push_back(compress_complement(CMatrix(0.5 * (ga + ga.adjoint())), d));
  }
  MinimizeResult mr = integer_minimize(c0, dmats, box, cfg.flop_budget);
  v.t_star = mr.t_star;
  v.m_star = mr.m_star;
  v.box_limited = mr.box_limited;
  v.exhaustive = mr.exhaustive;

  if (mr.t_star > a_threshold) {
    if (!mr.exhaustive)
      throw BudgetError(
          "branch search exceeded the flop budget; cannot certify a "
          "non-Markovian verdict from a local search");
    v.kind = Verdict::Kind::NonMarkovian;
    return v;
  }

  SuperOp w = branch_generator(fam, mr.m_star);
  double margin = -mr.t_star;
  double repair_shift_norm = 0.0;
  if (mr.t_star > 0.0 && repair_eps > 0.0) {
    // boundary: certified only after nudging into the interior of the cone;
    // the shift exceeds the deficit, leaving margin >= boundary_margin
    w = repair_generator(w, repair_eps, std::max(1e-7, 10 * kappa_achieved));
    repair_shift_norm = repair_eps * d * std::sqrt(double(d) * d - 1.0);
    margin += repair_eps;
    v.repaired = true;
  }

  CMatrix gw = gamma_involution(w.mat);
  const double wscale = std::max(1.0, w.mat.norm());
  if ((gw - gw.adjoint()).norm() > 1e-7 * wscale)
    throw WitnessError("witness generator is not Hermiticity-preserving");
  OmegaData om = omega_data(d);
  if ((w.mat.adjoint() * om.vec).norm() > 1e-7 * wscale)
    throw WitnessError("witness generator is not trace-preserving");
  if (margin < -1e-9 * std::max(1.0, c0.norm()))
    throw WitnessError("witness generator is outside the dissipativity cone");
  const double exp_err = detail::witness_exp_error(
      w, e, sd, mr.m_star, fam, v.repaired, repair_shift_norm);
  if (!(exp_err <= cfg.epsilon))
    throw WitnessError("witness generator does not reproduce the channel");

  v.kind = Verdict::Kind::Markovian;
  v.witness = std::move(w);
  v.witness_margin = margin;
  v.witness_exp_error = exp_err;
  return v;
}

struct MapDecision {
  bool is_channel = false;
  double distance = 0.0;
  ProjectionResult projection;
  std::optional<Verdict> verdict;
};

// Decide a map that is only promised to be near a channel: project onto the
// CPT set first, reject if the distance exceeds the gate, then decide the
// projected channel at a reduced accuracy that absorbs the projection error.
inline MapDecision decide_map(const SuperOp& e, DeciderConfig cfg = {}) {
  MapDecision out;
  const double eps_prime =
      cfg.epsilon_prime > 0.0 ? cfg.epsilon_prime : cfg.epsilon / 3.0;
  out.projection = nearest_cpt(e);
  out.distance = out.projection.distance;
  if (out.distance > eps_prime || !out.projection.converged) return out;
  out.is_channel = true;
  cfg.epsilon = 2.0 * cfg.epsilon / 3.0;
  const double scale = std::max(1.0, e.mat.norm());
  cfg.gate.psd_tol = std::max(cfg.gate.psd_tol, 2e-8 * scale);
  cfg.gate.tp_tol = std::max(cfg.gate.tp_tol, 1e-8 * scale);
  out.verdict = decide_channel(out.projection.projected, cfg);
  return out;
}

struct FamilySnapshot {
  double time = 0.0;
  SuperOp channel;
};

struct FamilyDecision {
  Verdict base;                // verdict for the earliest snapshot
  bool family_markovian = false;
  int first_violation = -1;    // snapshot index, -1 when consistent
  double max_error = 0.0;      // max ||e^{t_i L} - E_i||_F over snapshots
};

// A family {E_i = E(t_i)} lies on one semigroup iff the generator extracted
// from the earliest snapshot reproduces every later one.
inline FamilyDecision decide_family(std::vector<FamilySnapshot> snaps,
                                    const DeciderConfig& cfg = {}) {
  if (snaps.empty()) throw std::invalid_argument("empty snapshot family");
  for (const auto& s : snaps)
    if (!(s.time > 0.0))
      throw std::invalid_argument("snapshot times must be positive");
  std::sort(snaps.begin(), snaps.end(),
            [](const FamilySnapshot& a, const FamilySnapshot& b) {
              return a.time < b.time;
            });
  FamilyDecision out;
  out.base = decide_channel(snaps.front().channel, cfg);
  if (out.base.kind != Verdict::Kind::Markovian) return out;
  const CMatrix gen = out.base.witness->mat / snaps.front().time;
  out.family_markovian = true;
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    const double err =
        (mat_exp(CMatrix(gen * snaps[i].time)) - snaps[i].channel.mat).norm();
    out.max_error = std::max(out.max_error, err);
    if (err > cfg.epsilon && out.first_violation < 0) {
      out.family_markovian = false;
      out.first_violation = static_cast<int>(i);
    }
  }
  return out;
}

}  // namespace markov
