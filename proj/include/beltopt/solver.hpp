#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "beltopt/nlp.hpp"
#include "beltopt/transcription.hpp"
#include "beltopt/types.hpp"

namespace beltopt {

enum class SolveStatus { Converged, MaxIter, Singular, InfeasibleStage };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIter: return "max-iter";
    case SolveStatus::Singular: return "singular";
    case SolveStatus::InfeasibleStage: return "infeasible-stage";
  }
  return "unknown";
}

struct SolverOptions {
  std::vector<double> sigma_schedule = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  double constraint_tol = 1e-4;
  double complementarity_tol = 1e-5;  // product rows held tighter than constraint_tol
  double optimality_tol = 1e-4;       // projected gradient, internally scaled variables
  int max_outer_iters = 40;           // multiplier/penalty updates per stage
  int max_inner_iters = 60;           // Newton iterations per subproblem
  double penalty_growth = 10.0;
  double initial_penalty = 10.0;
  double max_penalty = 1e8;
  int cg_max_iters = 200;             // CG iterations per Newton step
  double stage_relax_factor = 10.0;   // looser tolerances for non-final sigma stages
  double wall_budget_s = 300.0;       // per solve, checked between subproblems; <= 0 off
  bool verbose = false;

  void validate() const {
    if (sigma_schedule.empty()) throw std::invalid_argument("sigma schedule empty");
    for (std::size_t i = 0; i < sigma_schedule.size(); ++i) {
      if (!(sigma_schedule[i] > 0)) throw std::invalid_argument("sigma must be positive");
      if (i && !(sigma_schedule[i] < sigma_schedule[i - 1]))
        throw std::invalid_argument("sigma schedule must be strictly decreasing");
    }
    if (!(constraint_tol > 0) || !(optimality_tol > 0) || !(complementarity_tol > 0))
      throw std::invalid_argument("tolerances must be positive");
    if (!(penalty_growth > 1)) throw std::invalid_argument("penalty_growth must exceed 1");
  }
};

struct StageDiagnostics {
  double sigma = 0.0;
  double end_violation = 0.0;  // max over rows of violation / row tolerance
  double end_cost = 0.0;
  int inner_iterations = 0;
  int outer_iterations = 0;
  double wall_time_s = 0.0;
  bool converged = false;
};

struct SolveDiagnostics {
  std::vector<StageDiagnostics> stages;
  double final_violation = 0.0;       // max true violation, unscaled
  double final_violation_rel = 0.0;   // max violation / row tolerance
  double final_cost = 0.0;
  double final_sigma = 0.0;
  double projected_gradient = 0.0;
  double max_bound_violation = 0.0;
  int total_inner_iterations = 0;
  double wall_time_s = 0.0;
};

namespace al_detail {

inline double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Augmented-Lagrangian state shared across homotopy stages of one solve.
struct AlState {
  VecX z;    // current point, real units
  VecX mu;   // multiplier estimates per constraint row
  double rho = 0.0;
};

struct RowInfo {
  std::vector<bool> is_equality;
  std::vector<double> tol;       // per-row feasibility tolerance
  std::vector<int> slack_index;  // inequality row -> slack slot, -1 for equalities
  int num_slacks = 0;
};

inline RowInfo build_row_info(const Nlp& nlp, const SolverOptions& opts) {
  RowInfo info;
  const int m = nlp.num_constraints();
  info.is_equality.assign(m, false);
  info.tol.assign(m, opts.constraint_tol);
  info.slack_index.assign(m, -1);
  for (const auto& b : nlp.constraint_blocks()) {
    for (int r = b.row_begin; r < b.row_begin + b.rows; ++r) {
      info.is_equality[r] = b.is_equality;
      if (b.is_complementarity_product) info.tol[r] = opts.complementarity_tol;
    }
  }
  for (int r = 0; r < m; ++r)
    if (!info.is_equality[r]) info.slack_index[r] = info.num_slacks++;
  return info;
}

// Bound half-range scaling followed by Jacobian column equilibration; keeps
// the huge 1/M1 torque columns from wrecking quasi-Newton conditioning.
inline VecX build_scaling(const Nlp& nlp, const VecX& z0) {
  const int n = nlp.num_vars();
  const VecX& lb = nlp.lower_bounds();
  const VecX& ub = nlp.upper_bounds();
  VecX d(n);
  for (int i = 0; i < n; ++i) {
    const double range = ub[i] - lb[i];
    if (!(range > 0) || !std::isfinite(range) || range > 1e6)
      d[i] = 1.0;
    else
      d[i] = std::max(1e-8, 0.5 * range);
  }
  const auto& pattern = nlp.jacobian_pattern();
  VecX vals;
  nlp.jacobian_values(z0, vals);
  VecX colmax = VecX::Zero(n);
  for (int t = 0; t < pattern.nnz(); ++t) {
    const int c = pattern.cols[t];
    colmax[c] = std::max(colmax[c], std::abs(vals[t]) * d[c]);
  }
  for (int i = 0; i < n; ++i) d[i] /= std::max(1.0, colmax[i]);
  return d;
}

struct InnerResult {
  int iterations = 0;
  double projected_gradient = 0.0;
  bool hit_iteration_cap = false;
  bool saw_nonfinite = false;
};

// Evaluates the augmented Lagrangian over (scaled variables, slacks) and
// exposes the Gauss-Newton curvature of its penalty term for the inner
// truncated-Newton solver.
class AlFunction {
 public:
  AlFunction(const Nlp& nlp, const RowInfo& rows, const VecX& scaling)
      : nlp_(nlp), rows_(rows), scaling_(scaling), n_(nlp.num_vars()),
        m_(nlp.num_constraints()) {
    const auto& pattern = nlp.jacobian_pattern();
    jac_scaled_.resize(pattern.nnz());
    nlp.cost_hessian_diag(VecX::Zero(n_), cost_diag_);
    cost_diag_ = cost_diag_.cwiseProduct(scaling_.cwiseProduct(scaling_));

    block_width_ = nlp.variable_block_width();
    if (block_width_ <= 0) block_width_ = std::max(1, n_);
    num_blocks_ = (n_ + block_width_ - 1) / block_width_;
    n_padded_ = num_blocks_ * block_width_;

    // CSR view of the Jacobian pattern for row-wise outer products
    row_ptr_.assign(m_ + 1, 0);
    for (int t = 0; t < pattern.nnz(); ++t) ++row_ptr_[pattern.rows[t] + 1];
    for (int r = 0; r < m_; ++r) row_ptr_[r + 1] += row_ptr_[r];
    row_slots_.resize(pattern.nnz());
    std::vector<int> fill = row_ptr_;
    for (int t = 0; t < pattern.nnz(); ++t) row_slots_[fill[pattern.rows[t]]++] = t;
  }

  int dim() const { return n_ + rows_.num_slacks; }

  void bounds(VecX& lo, VecX& hi) const {
    lo.resize(dim());
    hi.resize(dim());
    const VecX& lb = nlp_.lower_bounds();
    const VecX& ub = nlp_.upper_bounds();
    for (int i = 0; i < n_; ++i) {
      lo[i] = lb[i] / scaling_[i];
      hi[i] = ub[i] / scaling_[i];
    }
    for (int i = n_; i < dim(); ++i) {
      lo[i] = 0.0;
      hi[i] = std::numeric_limits<double>::infinity();
    }
  }

  VecX real_point(const VecX& y) const {
    return scaling_.cwiseProduct(y.head(n_));
  }

  // value of L_A; infinite when the evaluation produced non-finite numbers
  double value(const VecX& y, const VecX& mu, double rho) const {
    const VecX z = real_point(y);
    const double f = nlp_.cost(z);
    nlp_.constraints(z, c_);
    if (!std::isfinite(f) || !c_.allFinite()) return std::numeric_limits<double>::infinity();
    double total = f;
    for (int r = 0; r < m_; ++r) {
      const int si = rows_.slack_index[r];
      const double v = si >= 0 ? c_[r] - y[n_ + si] : c_[r];
      total += -mu[r] * v + 0.5 * rho * v * v;
    }
    return total;
  }

  // gradient of L_A in the scaled space; caches the scaled Jacobian at y so
  // that subsequent hessian_vec calls refer to the same point
  double value_gradient(const VecX& y, const VecX& mu, double rho, VecX& grad) const {
    z_cache_ = real_point(y);
    const VecX& z = z_cache_;
    const double f = nlp_.cost(z);
    nlp_.cost_gradient(z, grad_z_);
    nlp_.constraints(z, c_);
    nlp_.jacobian_values(z, jac_scaled_);
    if (!std::isfinite(f) || !c_.allFinite() || !grad_z_.allFinite() ||
        !jac_scaled_.allFinite()) {
      grad.setZero(dim());
      return std::numeric_limits<double>::infinity();
    }
    const auto& pattern = nlp_.jacobian_pattern();
    for (int t = 0; t < pattern.nnz(); ++t) jac_scaled_[t] *= scaling_[pattern.cols[t]];
    w_.resize(m_);
    double total = f;
    for (int r = 0; r < m_; ++r) {
      const int si = rows_.slack_index[r];
      const double v = si >= 0 ? c_[r] - y[n_ + si] : c_[r];
      total += -mu[r] * v + 0.5 * rho * v * v;
      w_[r] = rho * v - mu[r];
    }
    grad.resize(dim());
    grad.head(n_) = scaling_.cwiseProduct(grad_z_);
    for (int t = 0; t < pattern.nnz(); ++t)
      grad[pattern.cols[t]] += jac_scaled_[t] * w_[pattern.rows[t]];
    for (int r = 0; r < m_; ++r) {
      const int si = rows_.slack_index[r];
      if (si >= 0) grad[n_ + si] = -w_[r];
    }
    return total;
  }

  // Newton step of the augmented Lagrangian model with the free slacks
  // eliminated in closed form. The reduced Hessian over the variables,
  //   H = rho * J_A^T J_A + diag(cost'') + sum_j w_j grad^2 c_j,
  // (J_A = rows that are equalities or have their slack pinned at zero) is
  // block tridiagonal in the NLP's variable blocks and factors by a block
  // LDL^T sweep. Returns false when the shifted factorization still fails.
  bool newton_step(double rho, const std::vector<bool>& free_var, VecX& step) const {
    const int width = block_width_;
    const int nb = num_blocks_;
    diag_blocks_.assign(nb, MatX::Zero(width, width));
    off_blocks_.assign(nb > 1 ? nb - 1 : 0, MatX::Zero(width, width));
    rhs_.setZero(n_padded_);

    // row inclusion: equalities and active-slack inequalities keep their
    // penalty curvature; rows with a free slack drop out of the reduced
    // Hessian and right-hand side
    const auto& pattern = nlp_.jacobian_pattern();
    row_included_.assign(m_, true);
    for (int r = 0; r < m_; ++r) {
      const int si = rows_.slack_index[r];
      if (si >= 0 && free_var[n_ + si]) row_included_[r] = false;
    }

    // gradient restricted to included rows
    nlp_.cost_gradient(z_cache_, grad_z_);
    for (int i = 0; i < n_; ++i) rhs_[i] = -scaling_[i] * grad_z_[i];
    for (int t = 0; t < pattern.nnz(); ++t) {
      const int r = pattern.rows[t];
      if (row_included_[r]) rhs_[pattern.cols[t]] -= jac_scaled_[t] * w_[r];
    }

    // penalty Gauss-Newton blocks: per included row, the outer product of
    // its sparse entries lands within one block or two adjacent ones
    for (int r = 0; r < m_; ++r) {
      if (!row_included_[r]) continue;
      const int begin = row_ptr_[r], count = row_ptr_[r + 1] - begin;
      for (int a = 0; a < count; ++a) {
        const int ta = row_slots_[begin + a];
        const int ca = pattern.cols[ta];
        const double va = rho * jac_scaled_[ta];
        if (va == 0.0) continue;
        for (int b = 0; b < count; ++b) {
          const int tb = row_slots_[begin + b];
          const int cb = pattern.cols[tb];
          add_entry(ca, cb, va * jac_scaled_[tb]);
        }
      }
    }
    for (int i = 0; i < n_; ++i) add_entry(i, i, cost_diag_[i]);
    nlp_.constraint_curvature(z_cache_, w_, [&](int i, int j, double v) {
      add_entry(i, j, scaling_[i] * scaling_[j] * v);
    });

    // pinned variables become identity rows/columns
    for (int i = 0; i < n_padded_; ++i) {
      if (i < n_ && free_var[i]) continue;
      const int bi = i / width, oi = i % width;
      diag_blocks_[bi].row(oi).setZero();
      diag_blocks_[bi].col(oi).setZero();
      diag_blocks_[bi](oi, oi) = 1.0;
      if (bi > 0) off_blocks_[bi - 1].col(oi).setZero();
      if (bi + 1 < nb) off_blocks_[bi].row(oi).setZero();
      rhs_[i] = 0.0;
    }

    // block-tridiagonal LDL^T with a Levenberg shift retried on failure
    double shift = 0.0;
    double max_diag = 1e-12;
    for (int b = 0; b < nb; ++b)
      max_diag = std::max(max_diag, diag_blocks_[b].diagonal().cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 12; ++attempt) {
      if (factor_blocks(shift)) {
        solve_blocks(step);
        if (step.allFinite()) return true;
      }
      shift = shift == 0.0 ? 1e-10 * max_diag : shift * 100.0;
    }
    return false;
  }

  // diagonal of the penalty Gauss-Newton Hessian, for the fallback direction
  void hessian_diag(double rho, VecX& diag) const {
    const auto& pattern = nlp_.jacobian_pattern();
    diag.setZero(dim());
    for (int t = 0; t < pattern.nnz(); ++t) {
      const double v = jac_scaled_[t];
      diag[pattern.cols[t]] += rho * v * v;
    }
    diag.head(n_) += cost_diag_;
    for (int i = n_; i < dim(); ++i) diag[i] += rho;
  }

  // slack components of the Newton step, from the elimination formula
  void slack_step(const VecX& dz, double rho, const std::vector<bool>& free_var,
                  VecX& step) const {
    const auto& pattern = nlp_.jacobian_pattern();
    row_tmp_.setZero(m_);
    for (int t = 0; t < pattern.nnz(); ++t)
      row_tmp_[pattern.rows[t]] += jac_scaled_[t] * dz[pattern.cols[t]];
    for (int r = 0; r < m_; ++r) {
      const int si = rows_.slack_index[r];
      if (si < 0) continue;
      step[n_ + si] = free_var[n_ + si] ? row_tmp_[r] + w_[r] / rho : 0.0;
    }
  }

  const VecX& last_constraints() const { return c_; }
  const VecX& scaling() const { return scaling_; }
  const VecX& row_weights() const { return w_; }

 private:
  void add_entry(int i, int j, double v) const {
    const int bi = i / block_width_, bj = j / block_width_;
    if (bi == bj) {
      diag_blocks_[bi](i % block_width_, j % block_width_) += v;
    } else if (bj == bi + 1) {
      off_blocks_[bi](i % block_width_, j % block_width_) += v;
    } else if (bi == bj + 1) {
      off_blocks_[bj](j % block_width_, i % block_width_) += v;
    }
    // farther couplings cannot occur for banded problems
  }

  bool factor_blocks(double shift) const {
    const int nb = num_blocks_;
    const int width = block_width_;
    factors_.resize(nb);
    gains_.resize(nb > 1 ? nb - 1 : 0);
    work_block_ = MatX::Zero(width, width);
    for (int b = 0; b < nb; ++b) {
      work_block_ = diag_blocks_[b];
      work_block_.diagonal().array() += shift;
      if (b > 0) work_block_.noalias() -= off_blocks_[b - 1].transpose() * gains_[b - 1];
      factors_[b].compute(work_block_);
      if (factors_[b].info() != Eigen::Success ||
          factors_[b].vectorD().minCoeff() <= 0.0)
        return false;
      if (b + 1 < nb) gains_[b] = factors_[b].solve(off_blocks_[b]);
    }
    return true;
  }

  void solve_blocks(VecX& step) const {
    const int nb = num_blocks_;
    const int width = block_width_;
    fwd_.resize(nb);
    for (int b = 0; b < nb; ++b) {
      fwd_[b] = rhs_.segment(b * width, width);
      if (b > 0)
        fwd_[b].noalias() -=
            off_blocks_[b - 1].transpose() * factors_[b - 1].solve(fwd_[b - 1]);
    }
    sol_padded_.resize(n_padded_);
    sol_padded_.segment((nb - 1) * width, width) = factors_[nb - 1].solve(fwd_[nb - 1]);
    for (int b = nb - 2; b >= 0; --b) {
      VecX xb = factors_[b].solve(fwd_[b]);
      xb.noalias() -= gains_[b] * sol_padded_.segment((b + 1) * width, width);
      sol_padded_.segment(b * width, width) = xb;
    }
    step.setZero(dim());
    step.head(n_) = sol_padded_.head(n_);
  }

  const Nlp& nlp_;
  const RowInfo& rows_;
  VecX scaling_;
  int n_, m_;
  int block_width_ = 0, num_blocks_ = 0, n_padded_ = 0;
  VecX cost_diag_;
  std::vector<int> row_ptr_, row_slots_;
  mutable VecX c_, grad_z_, w_, row_tmp_, z_cache_;
  mutable VecX jac_scaled_;
  mutable VecX rhs_;
  mutable std::vector<MatX> diag_blocks_, off_blocks_, gains_;
  mutable std::vector<Eigen::LDLT<MatX>> factors_;
  mutable std::vector<VecX> fwd_;
  mutable VecX sol_padded_;
  mutable MatX work_block_;
  mutable std::vector<bool> row_included_;
};

// Projected Newton with the block-direct step and backtracking Armijo on the
// projected path; falls back to a diagonally preconditioned gradient step
// when the factorization fails or the step is not a descent direction.
inline InnerResult minimize_inner(const AlFunction& fn, const VecX& lo, const VecX& hi,
                                  VecX& y, const VecX& mu, double rho, double pg_tol,
                                  int max_iters, int /*unused*/) {
  InnerResult result;
  const int dim = static_cast<int>(y.size());
  auto clamp = [&](VecX& v) {
    for (int i = 0; i < dim; ++i) v[i] = std::min(hi[i], std::max(lo[i], v[i]));
  };
  clamp(y);

  VecX g(dim), d(dim), y_trial(dim), step(dim), hdiag(dim);
  std::vector<bool> free_var(dim);
  double phi = fn.value_gradient(y, mu, rho, g);
  if (!std::isfinite(phi)) {
    result.saw_nonfinite = true;
    return result;
  }

  int stall_count = 0;
  for (int iter = 0; iter < max_iters; ++iter) {
    double pg = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double t = std::min(hi[i], std::max(lo[i], y[i] - g[i])) - y[i];
      pg = std::max(pg, std::abs(t));
    }
    result.projected_gradient = pg;
    if (pg <= pg_tol) return result;

    for (int i = 0; i < dim; ++i) {
      const double eps = 1e-10 * (1.0 + std::abs(y[i]));
      free_var[i] = !(y[i] <= lo[i] + eps && g[i] > 0.0) &&
                    !(y[i] >= hi[i] - eps && g[i] < 0.0);
    }

    bool have_newton = fn.newton_step(rho, free_var, d);
    if (have_newton) {
      fn.slack_step(d, rho, free_var, d);
      for (int i = 0; i < dim; ++i)
        if (!free_var[i]) d[i] = 0.0;
      if (d.dot(g) > -1e-14 * d.norm() * g.norm()) have_newton = false;
    }
    bool used_gradient = !have_newton;
    if (!have_newton) {
      fn.hessian_diag(rho, hdiag);
      for (int i = 0; i < dim; ++i)
        d[i] = free_var[i] ? -g[i] / std::max(hdiag[i], 1e-8) : 0.0;
    }

    // backtracking Armijo on the projected path
    bool accepted = false;
    double phi_trial = phi;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double step_len = 1.0;
      for (int ls = 0; ls < 40; ++ls) {
        y_trial = y + step_len * d;
        clamp(y_trial);
        step = y_trial - y;
        if (step.lpNorm<Eigen::Infinity>() < 1e-16) break;
        const double gs = g.dot(step);
        phi_trial = fn.value(y_trial, mu, rho);
        if (!std::isfinite(phi_trial)) {
          result.saw_nonfinite = true;
        } else if (phi_trial <= phi + 1e-4 * std::min(gs, 0.0)) {
          accepted = true;
          break;
        }
        step_len *= 0.5;
      }
      if (!accepted && !used_gradient) {
        fn.hessian_diag(rho, hdiag);
        for (int i = 0; i < dim; ++i)
          d[i] = free_var[i] ? -g[i] / std::max(hdiag[i], 1e-8) : 0.0;
        used_gradient = true;
      } else {
        break;
      }
    }
    if (!accepted) return result;  // line search exhausted

    const double decrease = phi - phi_trial;
    y = y_trial;
    phi = fn.value_gradient(y, mu, rho, g);
    if (!std::isfinite(phi)) {
      result.saw_nonfinite = true;
      return result;
    }
    result.iterations = iter + 1;
    if (decrease <= 1e-14 * std::max(1.0, std::abs(phi))) {
      if (++stall_count >= 4) return result;
    } else {
      stall_count = 0;
    }
  }
  result.hit_iteration_cap = true;
  return result;
}

struct StageOutcome {
  StageDiagnostics diag;
  bool singular = false;
  bool infeasible = false;
  bool out_of_budget = false;
  double projected_gradient = 0.0;
};

// True violations per row: |c| for equalities, max(0, -c) for inequalities.
inline void true_violations(const VecX& c, const RowInfo& rows, VecX& viol) {
  viol.resize(c.size());
  for (int r = 0; r < c.size(); ++r)
    viol[r] = rows.is_equality[r] ? std::abs(c[r]) : std::max(0.0, -c[r]);
}

// One smooth subproblem (fixed sigma): multiplier iterations around the
// projected quasi-Newton inner solver.
inline StageOutcome solve_stage(const Nlp& nlp, const RowInfo& rows, const AlFunction& fn,
                                const VecX& lo, const VecX& hi, AlState& state,
                                const SolverOptions& opts, double tol_factor,
                                double deadline) {
  StageOutcome out;
  const int n = nlp.num_vars();
  const int m = nlp.num_constraints();
  const double t0 = now_seconds();

  VecX y(fn.dim());
  y.head(n) = state.z.cwiseQuotient(fn.scaling());
  // slacks start at their closed-form optimum given z
  VecX c(m);
  nlp.constraints(state.z, c);
  for (int r = 0; r < m; ++r) {
    const int si = rows.slack_index[r];
    if (si >= 0) y[n + si] = std::max(0.0, c[r] - state.mu[r] / state.rho);
  }

  VecX viol;
  const double pg_goal = opts.optimality_tol * tol_factor;
  double omega = std::max(1e-1, 10.0 * pg_goal);
  double eta = std::numeric_limits<double>::infinity();  // set after first solve
  int no_progress = 0;

  for (int outer = 0; outer < opts.max_outer_iters; ++outer) {
    if (deadline > 0 && now_seconds() > deadline) {
      out.out_of_budget = true;
      break;
    }
    const InnerResult inner =
        minimize_inner(fn, lo, hi, y, state.mu, state.rho, omega, opts.max_inner_iters,
                       opts.cg_max_iters);
    out.diag.inner_iterations += inner.iterations;
    out.diag.outer_iterations = outer + 1;
    out.projected_gradient = inner.projected_gradient;
    if (inner.saw_nonfinite) {
      out.singular = true;
      break;
    }

    state.z = fn.real_point(y);
    nlp.constraints(state.z, c);
    true_violations(c, rows, viol);
    double viol_rel = 0.0;
    for (int r = 0; r < m; ++r) viol_rel = std::max(viol_rel, viol[r] / rows.tol[r]);
    out.diag.end_violation = viol_rel;
    if (opts.verbose)
      std::printf("    outer %2d rho=%.1e viol_rel=%.3e pg=%.3e eta=%.2e inner=%d%s\n",
                  outer, state.rho, viol_rel, inner.projected_gradient, eta,
                  inner.iterations, inner.hit_iteration_cap ? " cap" : "");

    const bool feasible = viol_rel <= tol_factor;
    const bool optimal = inner.projected_gradient <= pg_goal;
    if (feasible && optimal) {
      out.diag.converged = true;
      break;
    }
    if (outer == 0) eta = std::max(10.0 * tol_factor, 0.25 * viol_rel);

    if (viol_rel <= eta || inner.hit_iteration_cap) {
      // feasibility on track (or inner needs more time): first-order
      // multiplier update, tighten the targets
      for (int r = 0; r < m; ++r) {
        const int si = rows.slack_index[r];
        const double v = si >= 0 ? c[r] - y[n + si] : c[r];
        double mu_new = state.mu[r] - state.rho * v;
        if (si >= 0) mu_new = std::max(0.0, mu_new);
        state.mu[r] = std::min(1e10, std::max(-1e10, mu_new));
      }
      eta = std::max(0.25 * eta, 0.9 * tol_factor);
      no_progress = 0;
    } else {
      // insufficient feasibility progress from a solved subproblem
      if (state.rho >= opts.max_penalty) {
        if (++no_progress >= 3) {
          out.infeasible = true;
          break;
        }
      } else {
        state.rho = std::min(state.rho * opts.penalty_growth, opts.max_penalty);
      }
      eta = std::max(eta, 0.5 * viol_rel);
    }
    omega = std::max(0.3 * omega, pg_goal);
  }
  out.diag.wall_time_s = now_seconds() - t0;
  return out;
}

}  // namespace al_detail

struct AlResult {
  VecX z;
  SolveStatus status = SolveStatus::MaxIter;
  SolveDiagnostics diagnostics;
  VecX multipliers;
  double penalty = 0.0;
  VecX scaling;
};

// Solves one smooth NLP (no homotopy) by the augmented-Lagrangian method.
inline AlResult al_solve(const Nlp& nlp, const VecX& initial_guess,
                         const SolverOptions& opts) {
  opts.validate();
  if (initial_guess.size() != nlp.num_vars())
    throw std::invalid_argument("al_solve: initial guess dimension mismatch");

  using namespace al_detail;
  const double t0 = now_seconds();
  const RowInfo rows = build_row_info(nlp, opts);

  AlResult result;
  if (nlp.num_vars() == 0) {
    result.z.resize(0);
    result.status = SolveStatus::Converged;
    result.multipliers.resize(0);
    result.scaling.resize(0);
    return result;
  }

  AlState state;
  state.z = initial_guess;
  // clamp the guess into the box
  for (int i = 0; i < nlp.num_vars(); ++i)
    state.z[i] = std::min(nlp.upper_bounds()[i], std::max(nlp.lower_bounds()[i], state.z[i]));
  state.mu = VecX::Zero(nlp.num_constraints());
  state.rho = opts.initial_penalty;

  const VecX scaling = build_scaling(nlp, state.z);
  AlFunction fn(nlp, rows, scaling);
  VecX lo, hi;
  fn.bounds(lo, hi);

  const double deadline = opts.wall_budget_s > 0 ? t0 + opts.wall_budget_s : -1.0;
  const StageOutcome outcome =
      solve_stage(nlp, rows, fn, lo, hi, state, opts, 1.0, deadline);

  result.z = state.z;
  result.multipliers = state.mu;
  result.penalty = state.rho;
  result.scaling = scaling;
  result.diagnostics.stages.push_back(outcome.diag);
  result.diagnostics.total_inner_iterations = outcome.diag.inner_iterations;
  result.diagnostics.projected_gradient = outcome.projected_gradient;
  result.diagnostics.wall_time_s = now_seconds() - t0;

  VecX c(nlp.num_constraints()), viol;
  nlp.constraints(state.z, c);
  true_violations(c, rows, viol);
  result.diagnostics.final_violation = viol.size() ? viol.maxCoeff() : 0.0;
  double viol_rel = 0.0;
  for (int r = 0; r < viol.size(); ++r) viol_rel = std::max(viol_rel, viol[r] / rows.tol[r]);
  result.diagnostics.final_violation_rel = viol_rel;
  result.diagnostics.final_cost = nlp.cost(state.z);

  if (outcome.singular)
    result.status = SolveStatus::Singular;
  else if (outcome.infeasible)
    result.status = SolveStatus::InfeasibleStage;
  else if (outcome.diag.converged)
    result.status = SolveStatus::Converged;
  else
    result.status = SolveStatus::MaxIter;
  return result;
}

// Knot-point trajectory with solver diagnostics. `flat`, `multipliers`,
// `penalty`, and `scaling` carry the raw solver state for warm starts and
// KKT reporting.
struct TrajectorySolution {
  MatX states;            // (N+1) x 18
  MatX inputs;            // (N+1) x 6
  MatX force_magnitudes;  // (N+1) x 2
  SolveStatus status = SolveStatus::MaxIter;
  SolveDiagnostics diagnostics;
  SubtaskId subtask = SubtaskId::S1;
  int horizon_N = 0;
  double step_h = 0.0;
  VecX flat;
  VecX multipliers;
  double penalty = 0.0;
  VecX scaling;

  SystemState state_at(int k) const {
    return SystemState::from_flat(states.row(k).transpose());
  }
  SystemState terminal_state() const { return state_at(horizon_N); }
};

inline void unflatten_into(const DecisionLayout& layout, const VecX& flat,
                           TrajectorySolution& sol) {
  const int K = layout.num_knots();
  sol.states.resize(K, kStateDim);
  sol.inputs.resize(K, kInputDim);
  sol.force_magnitudes.resize(K, kForceDim);
  for (int k = 0; k < K; ++k) {
    sol.states.row(k) = layout.state(flat, k).transpose();
    sol.inputs.row(k) = layout.input(flat, k).transpose();
    sol.force_magnitudes(k, 0) = layout.lambda0(flat, k);
    sol.force_magnitudes(k, 1) = layout.lambda1(flat, k);
  }
  sol.flat = flat;
  sol.horizon_N = layout.horizon_N;
}

// All knot states pinned to the start state, gravity-compensating lift on K1,
// zero force magnitudes.
inline VecX cold_start_guess(const TranscribedNLP& nlp, const SystemState& x_init) {
  const DecisionLayout& layout = nlp.layout();
  VecX z = VecX::Zero(layout.num_vars());
  const Vec18 x = x_init.flatten();
  Vec6 u = Vec6::Zero();
  u[2] = nlp.belt().m1 * nlp.belt().gravity_g;
  for (int k = 0; k <= layout.horizon_N; ++k) {
    z.segment<kStateDim>(layout.x_index(k, 0)) = x;
    z.segment<kInputDim>(layout.u_index(k, 0)) = u;
  }
  return z;
}

// Reuses a previous solution as the next stage's starting point.
inline VecX warm_start(const TrajectorySolution& previous, const TranscribedNLP& nlp) {
  if (previous.horizon_N != nlp.layout().horizon_N ||
      previous.flat.size() != nlp.layout().num_vars())
    throw std::invalid_argument("warm_start: layout mismatch");
  return previous.flat;
}

// Relaxation homotopy over the sigma schedule; each smooth stage is solved by
// the augmented-Lagrangian method and warm-starts the next.
inline TrajectorySolution solve(TranscribedNLP& nlp, const VecX& initial_guess,
                                const SolverOptions& opts = {}) {
  opts.validate();
  if (initial_guess.size() != nlp.num_vars())
    throw std::invalid_argument("solve: initial guess dimension mismatch");

  using namespace al_detail;
  const double t0 = now_seconds();
  const double deadline = opts.wall_budget_s > 0 ? t0 + opts.wall_budget_s : -1.0;
  const RowInfo rows = build_row_info(nlp, opts);

  AlState state;
  state.z = initial_guess;
  for (int i = 0; i < nlp.num_vars(); ++i)
    state.z[i] = std::min(nlp.upper_bounds()[i], std::max(nlp.lower_bounds()[i], state.z[i]));
  state.mu = VecX::Zero(nlp.num_constraints());
  state.rho = opts.initial_penalty;

  const VecX scaling = build_scaling(nlp, state.z);
  AlFunction fn(nlp, rows, scaling);
  VecX lo, hi;
  fn.bounds(lo, hi);

  TrajectorySolution sol;
  sol.subtask = nlp.spec().id;
  sol.step_h = nlp.spec().step_h;
  sol.scaling = scaling;

  bool singular = false, infeasible = false, out_of_budget = false;
  bool all_converged = true;
  for (std::size_t stage = 0; stage < opts.sigma_schedule.size(); ++stage) {
    const bool final_stage = stage + 1 == opts.sigma_schedule.size();
    nlp.set_sigma(opts.sigma_schedule[stage]);
    const double tol_factor = final_stage ? 1.0 : opts.stage_relax_factor;
    StageOutcome outcome = solve_stage(nlp, rows, fn, lo, hi, state, opts, tol_factor,
                                       deadline);
    outcome.diag.sigma = opts.sigma_schedule[stage];
    outcome.diag.end_cost = nlp.cost(state.z);
    sol.diagnostics.stages.push_back(outcome.diag);
    sol.diagnostics.total_inner_iterations += outcome.diag.inner_iterations;
    sol.diagnostics.projected_gradient = outcome.projected_gradient;
    if (opts.verbose)
      std::printf("  stage sigma=%.1e viol=%.3e iters=%d %s\n", outcome.diag.sigma,
                  outcome.diag.end_violation, outcome.diag.inner_iterations,
                  outcome.diag.converged ? "ok" : "not-converged");
    if (outcome.singular) { singular = true; all_converged = false; break; }
    if (outcome.infeasible) { infeasible = true; all_converged = false; break; }
    if (outcome.out_of_budget) { out_of_budget = true; all_converged = false; break; }
    if (!outcome.diag.converged) { all_converged = false; break; }
  }

  unflatten_into(nlp.layout(), state.z, sol);
  sol.multipliers = state.mu;
  sol.penalty = state.rho;
  sol.diagnostics.final_sigma = nlp.sigma();
  sol.diagnostics.final_cost = nlp.cost(state.z);
  sol.diagnostics.wall_time_s = now_seconds() - t0;

  VecX c(nlp.num_constraints()), viol;
  nlp.constraints(state.z, c);
  true_violations(c, rows, viol);
  sol.diagnostics.final_violation = viol.size() ? viol.maxCoeff() : 0.0;
  double viol_rel = 0.0;
  for (int r = 0; r < viol.size(); ++r) viol_rel = std::max(viol_rel, viol[r] / rows.tol[r]);
  sol.diagnostics.final_violation_rel = viol_rel;

  double bound_viol = 0.0;
  for (int i = 0; i < nlp.num_vars(); ++i)
    bound_viol = std::max({bound_viol, nlp.lower_bounds()[i] - state.z[i],
                           state.z[i] - nlp.upper_bounds()[i]});
  sol.diagnostics.max_bound_violation = std::max(0.0, bound_viol);

  if (singular)
    sol.status = SolveStatus::Singular;
  else if (infeasible)
    sol.status = SolveStatus::InfeasibleStage;
  else if (all_converged)
    sol.status = SolveStatus::Converged;
  else
    sol.status = SolveStatus::MaxIter;
  (void)out_of_budget;
  return sol;
}

struct SequenceResult {
  TrajectorySolution s1;
  std::optional<TrajectorySolution> s2;  // absent when S1 failed
  std::string failed_subtask;            // "", "s1", or "s2"
};

// Solves S1 from the scenario start, then S2 from S1's terminal state.
inline SequenceResult solve_subtask_sequence(const Scenario& scenario,
                                             const std::pair<SubtaskSpec, SubtaskSpec>& specs,
                                             const SolverOptions& opts = {},
                                             const TranscriptionOptions& topts = {}) {
  SequenceResult result;
  TranscribedNLP nlp1 = transcribe(scenario, specs.first, scenario.initial_state, topts);
  result.s1 = solve(nlp1, cold_start_guess(nlp1, scenario.initial_state), opts);
  if (result.s1.status != SolveStatus::Converged) {
    result.failed_subtask = "s1";
    return result;
  }
  const SystemState handoff = result.s1.terminal_state();
  TranscribedNLP nlp2 = transcribe(scenario, specs.second, handoff, topts);
  result.s2 = solve(nlp2, cold_start_guess(nlp2, handoff), opts);
  if (result.s2->status != SolveStatus::Converged) result.failed_subtask = "s2";
  return result;
}

struct KktBlockReport {
  std::string name;
  double max_violation = 0.0;
};

struct KktReport {
  double stationarity = 0.0;  // projected gradient of the augmented Lagrangian
  std::vector<KktBlockReport> feasibility;
  std::vector<std::pair<double, double>> products;  // per-knot complementarity
  bool empty = false;
};

// Residual summary at a point: stationarity of the augmented Lagrangian,
// primal feasibility by named block, per-knot complementarity products.
inline KktReport kkt_report(const Nlp& nlp, const VecX& point,
                            const VecX& multipliers = VecX(), double penalty = 1.0,
                            const VecX& scaling = VecX()) {
  if (point.size() != nlp.num_vars())
    throw std::invalid_argument("kkt_report: point dimension mismatch");
  KktReport report;
  if (nlp.num_vars() == 0) {
    report.empty = true;
    return report;
  }
  const int m = nlp.num_constraints();
  VecX mu = multipliers.size() == m ? multipliers : VecX::Zero(m);
  VecX d = scaling.size() == nlp.num_vars() ? scaling : VecX::Ones(nlp.num_vars());

  VecX c(m);
  nlp.constraints(point, c);
  std::vector<bool> eq(m, false);
  for (const auto& b : nlp.constraint_blocks())
    for (int r = b.row_begin; r < b.row_begin + b.rows; ++r) eq[r] = b.is_equality;

  // gradient of the AL with slacks at their closed-form optimum
  VecX grad;
  nlp.cost_gradient(point, grad);
  VecX w(m);
  for (int r = 0; r < m; ++r) {
    double v = c[r];
    if (!eq[r]) v = c[r] - std::max(0.0, c[r] - mu[r] / penalty);
    w[r] = penalty * v - mu[r];
  }
  const auto& pattern = nlp.jacobian_pattern();
  VecX vals;
  nlp.jacobian_values(point, vals);
  for (int t = 0; t < pattern.nnz(); ++t)
    grad[pattern.cols[t]] += vals[t] * w[pattern.rows[t]];

  double stat = 0.0;
  for (int i = 0; i < nlp.num_vars(); ++i) {
    const double gi = grad[i] * d[i];
    const double yi = point[i] / d[i];
    const double lo = nlp.lower_bounds()[i] / d[i];
    const double hi = nlp.upper_bounds()[i] / d[i];
    stat = std::max(stat, std::abs(std::min(hi, std::max(lo, yi - gi)) - yi));
  }
  report.stationarity = stat;

  for (const auto& b : nlp.constraint_blocks()) {
    double worst = 0.0;
    for (int r = b.row_begin; r < b.row_begin + b.rows; ++r)
      worst = std::max(worst, eq[r] ? std::abs(c[r]) : std::max(0.0, -c[r]));
    report.feasibility.push_back({b.name, worst});
  }
  report.products = nlp.complementarity_products(point);
  return report;
}

}  // namespace beltopt
