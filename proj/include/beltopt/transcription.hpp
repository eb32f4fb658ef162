#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "beltopt/dynamics.hpp"
#include "beltopt/nlp.hpp"
#include "beltopt/types.hpp"

namespace beltopt {

// Flat decision vector: per knot k = 0..N a contiguous slice
// [x_k (18) | u_k (6) | elastic_mag_k | contact_mag_k].
struct DecisionLayout {
  int horizon_N = 0;
  static constexpr int kKnotStride = kStateDim + kInputDim + kForceDim;  // 26

  int num_knots() const { return horizon_N + 1; }
  int num_vars() const { return num_knots() * kKnotStride; }

  int knot_base(int k) const { return k * kKnotStride; }
  int x_index(int k, int i) const { return knot_base(k) + i; }
  int u_index(int k, int i) const { return knot_base(k) + kStateDim + i; }
  int lambda0_index(int k) const { return knot_base(k) + kStateDim + kInputDim; }
  int lambda1_index(int k) const { return knot_base(k) + kStateDim + kInputDim + 1; }

  Vec18 state(const VecX& z, int k) const { return z.segment<kStateDim>(x_index(k, 0)); }
  Vec6 input(const VecX& z, int k) const { return z.segment<kInputDim>(u_index(k, 0)); }
  double lambda0(const VecX& z, int k) const { return z[lambda0_index(k)]; }
  double lambda1(const VecX& z, int k) const { return z[lambda1_index(k)]; }
};

struct TranscriptionOptions {
  double epsilon = 1e-3;        // m, contact smoothing of lambda_3
  double delta_sing = 1e-9;     // m, projection denominator regularization
  double initial_sigma = 1e-1;  // starting complementarity relaxation
  long max_variables = 20'000'000;
};

// Trapezoidal defect x_{k+1} - x_k - h/2 (f_k + f_{k+1}).
inline Vec18 defect_residual(const SystemState& x_k, const ControlInput& u_k,
                             const ForceVariables& f_k, const SystemState& x_k1,
                             const ControlInput& u_k1, const ForceVariables& f_k1,
                             double h, const BeltModel& belt, const ForceContext& ctx) {
  if (!(h > 0)) throw std::invalid_argument("defect_residual: h must be positive");
  const Vec18 fk = vector_field(x_k, u_k, f_k, belt, ctx);
  const Vec18 fk1 = vector_field(x_k1, u_k1, f_k1, belt, ctx);
  return x_k1.flatten() - x_k.flatten() - 0.5 * h * (fk + fk1);
}

// Relaxed elastic pair, rows feasible when >= 0:
//   [lambda_2, elastic_mag, sigma - elastic_mag * lambda_2]
// with lambda_2 = elastic_mag / k_p + L - l(x).
inline Vec3 elastic_complementarity_rows(const SystemState& x, double elastic_mag,
                                         double sigma, const BeltModel& belt,
                                         const ForceContext& ctx) {
  if (!(sigma >= 0)) throw std::invalid_argument("sigma must be >= 0");
  const double lambda2 = elastic_mag / belt.k_p + belt.rest_length_L - cable_length(x, ctx);
  return Vec3(lambda2, elastic_mag, sigma - elastic_mag * lambda2);
}

// Relaxed contact pair, rows feasible when >= 0:
//   [lambda_3 - eps, contact_mag, sigma - contact_mag * (lambda_3 - eps)]
inline Vec3 contact_complementarity_rows(const SystemState& x, double contact_mag,
                                         double epsilon, double sigma,
                                         const ForceContext& ctx) {
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be positive");
  if (!(sigma >= 0)) throw std::invalid_argument("sigma must be >= 0");
  const double gap = contact_gap(x, ctx, epsilon) - epsilon;
  return Vec3(gap, contact_mag, sigma - contact_mag * gap);
}

// Keypoint-vs-pulley clearances and the cable length limit, feasible >= 0:
//   [d(K1,P1), d(K1,P2), d(K2,P1), d(K2,P2), L_max - l(x)]
inline Eigen::Matrix<double, 5, 1> path_constraint_rows(const SystemState& x,
                                                        const Pulley& p1, const Pulley& p2,
                                                        const BeltModel& belt,
                                                        const ForceContext& ctx) {
  const double delta = ctx.regularized ? ctx.delta_sing : 0.0;
  Eigen::Matrix<double, 5, 1> rows;
  rows[0] = ellipsoid_distance(x.q.k1_pos, p1, delta);
  rows[1] = ellipsoid_distance(x.q.k1_pos, p2, delta);
  rows[2] = ellipsoid_distance(x.q.k2_pos, p1, delta);
  rows[3] = ellipsoid_distance(x.q.k2_pos, p2, delta);
  rows[4] = belt.max_length_Lmax - cable_length(x, ctx);
  return rows;
}

inline Eigen::Matrix<double, 5, 1> path_constraint_rows(const SystemState& x,
                                                        const Scenario& scenario,
                                                        const SubtaskSpec& spec) {
  ForceContext ctx;
  ctx.subtask_id = spec.id;
  ctx.pulley1 = scenario.pulley1;
  return path_constraint_rows(x, scenario.pulley1, scenario.pulley2, scenario.belt, ctx);
}

// Running cost of one knot per the tracking objective.
inline double knot_cost(const Vec18& x, const Vec6& u, double elastic_mag,
                        const SubtaskSpec& spec) {
  const Vec18 dx = x - spec.goal_state.flatten();
  const double tension_err = elastic_mag - spec.desired_tension;
  return dx.dot(spec.weight_Q.cwiseProduct(dx)) + u.dot(spec.weight_R.cwiseProduct(u)) +
         spec.weight_w * tension_err * tension_err;
}

// One subtask's trajectory optimization problem as a sparse smooth NLP.
// Feasible points satisfy the pinned initial state, trapezoidal defects,
// relaxed complementarity, pulley clearance, cable length limit, and box
// bounds; the relaxation sigma may be tightened between solves.
class TranscribedNLP final : public Nlp {
 public:
  TranscribedNLP(const Scenario& scenario, const SubtaskSpec& spec, const SystemState& x_init,
                 const TranscriptionOptions& options = {})
      : spec_(spec),
        belt_(scenario.belt),
        pulley1_(scenario.pulley1),
        pulley2_(scenario.pulley2),
        options_(options),
        sigma_(options.initial_sigma),
        x_init_(x_init.flatten()) {
    spec_.validate();
    x_init.validate();
    if (static_cast<long>(spec.horizon_N + 1) * DecisionLayout::kKnotStride >
        options.max_variables)
      throw std::length_error("transcribe: layout overflow, horizon too large");
    if (!spec.bounds.contains_state(x_init_))
      throw std::invalid_argument("transcribe: x_init violates state bounds");
    layout_.horizon_N = spec.horizon_N;

    ctx_.subtask_id = spec.id;
    ctx_.pulley1 = pulley1_;
    ctx_.delta_sing = options.delta_sing;
    ctx_.regularized = true;

    build_bounds();
    build_blocks();
    build_pattern();
  }

  const DecisionLayout& layout() const { return layout_; }
  const SubtaskSpec& spec() const { return spec_; }
  const BeltModel& belt() const { return belt_; }
  const ForceContext& context() const { return ctx_; }
  double epsilon() const { return options_.epsilon; }
  const Vec18& initial_state() const { return x_init_; }

  double sigma() const { return sigma_; }
  void set_sigma(double sigma) {
    if (!(sigma >= 0)) throw std::invalid_argument("sigma must be >= 0");
    sigma_ = sigma;
  }

  int num_vars() const override { return layout_.num_vars(); }
  int num_constraints() const override { return num_rows_; }
  const VecX& lower_bounds() const override { return lb_; }
  const VecX& upper_bounds() const override { return ub_; }
  const std::vector<ConstraintBlock>& constraint_blocks() const override { return blocks_; }

  double cost(const VecX& z) const override {
    check_dim(z);
    double total = 0.0;
    for (int k = 0; k <= layout_.horizon_N; ++k)
      total += knot_cost(layout_.state(z, k), layout_.input(z, k), layout_.lambda0(z, k), spec_);
    return total;
  }

  void cost_gradient(const VecX& z, VecX& grad) const override {
    check_dim(z);
    grad.setZero(num_vars());
    const Vec18 goal = spec_.goal_state.flatten();
    for (int k = 0; k <= layout_.horizon_N; ++k) {
      const Vec18 dx = layout_.state(z, k) - goal;
      grad.segment<kStateDim>(layout_.x_index(k, 0)) = 2.0 * spec_.weight_Q.cwiseProduct(dx);
      grad.segment<kInputDim>(layout_.u_index(k, 0)) =
          2.0 * spec_.weight_R.cwiseProduct(layout_.input(z, k));
      grad[layout_.lambda0_index(k)] =
          2.0 * spec_.weight_w * (layout_.lambda0(z, k) - spec_.desired_tension);
    }
  }

  void cost_hessian_diag(const VecX& z, VecX& diag) const override {
    (void)z;
    diag.resize(num_vars());
    for (int k = 0; k <= layout_.horizon_N; ++k) {
      diag.segment<kStateDim>(layout_.x_index(k, 0)) = 2.0 * spec_.weight_Q;
      diag.segment<kInputDim>(layout_.u_index(k, 0)) = 2.0 * spec_.weight_R;
      diag[layout_.lambda0_index(k)] = 2.0 * spec_.weight_w;
      diag[layout_.lambda1_index(k)] = 0.0;
    }
  }

  void constraints(const VecX& z, VecX& c) const override {
    check_dim(z);
    c.resize(num_rows_);
    const int N = layout_.horizon_N;

    c.segment<kStateDim>(row_boundary_) = layout_.state(z, 0) - x_init_;

    // one dynamics evaluation per knot, shared by both adjacent defects
    std::vector<Vec18> field_cache_(N + 1);
    for (int k = 0; k <= N; ++k) {
      const SystemState xk = SystemState::from_flat(layout_.state(z, k));
      field_cache_[k] = vector_field(xk, ControlInput::from_flat(layout_.input(z, k)),
                                     forces(z, k), belt_, ctx_);

      const Vec3 el =
          elastic_complementarity_rows(xk, layout_.lambda0(z, k), sigma_, belt_, ctx_);
      c[row_elastic_slack_ + k] = el[0];
      c[row_elastic_mag_ + k] = el[1];
      c[row_elastic_product_ + k] = el[2];
      const Vec3 co = contact_complementarity_rows(xk, layout_.lambda1(z, k),
                                                   options_.epsilon, sigma_, ctx_);
      c[row_contact_gap_ + k] = co[0];
      c[row_contact_mag_ + k] = co[1];
      c[row_contact_product_ + k] = co[2];
      const auto path = path_constraint_rows(xk, pulley1_, pulley2_, belt_, ctx_);
      for (int j = 0; j < 4; ++j) c[row_obstacle_ + 4 * k + j] = path[j];
      c[row_length_ + k] = path[4];
    }
    for (int k = 0; k < N; ++k) {
      c.segment<kStateDim>(row_defect_ + kStateDim * k) =
          layout_.state(z, k + 1) - layout_.state(z, k) -
          0.5 * spec_.step_h * (field_cache_[k] + field_cache_[k + 1]);
    }
  }

  const JacobianPattern& jacobian_pattern() const override { return pattern_; }

  void jacobian_values(const VecX& z, VecX& values) const override {
    check_dim(z);
    values.resize(pattern_.nnz());
    int slot = 0;
    auto emit = [&](int, int, double v) { values[slot++] = v; };
    for_each_jacobian_entry(z, emit);
    if (slot != pattern_.nnz())
      throw std::logic_error("jacobian slot count mismatch");
  }

  int variable_block_width() const override { return DecisionLayout::kKnotStride; }

  // Exact curvature of the strongly nonlinear rows: cable-length rows (the
  // slack, product, and length-limit constraints all carry grad^2 l), the
  // bilinear complementarity products, and the obstacle distances. The
  // defect and contact-gap curvature is small and left to the Gauss-Newton
  // part of the model. All entries are knot-local.
  void constraint_curvature(const VecX& z, const VecX& w,
                            const std::function<void(int, int, double)>& emit)
      const override {
    const int N = layout_.horizon_N;
    const bool couple_k2 = ctx_.anchor_is_k2();
    const double delta = ctx_.delta_sing;
    auto emit_block = [&](int base_i, int base_j, const Mat3& m, double scale) {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          if (m(i, j) != 0.0) emit(base_i + i, base_j + j, scale * m(i, j));
    };
    for (int k = 0; k <= N; ++k) {
      const SystemState xk = SystemState::from_flat(layout_.state(z, k));
      const int ik1 = layout_.x_index(k, 0);
      const int ik2 = layout_.x_index(k, 3);
      const int il0 = layout_.lambda0_index(k);
      const int il1 = layout_.lambda1_index(k);
      const double lambda0 = z[il0];

      const double w_slack = w[row_elastic_slack_ + k];
      const double w_eprod = w[row_elastic_product_ + k];
      const double w_len = w[row_length_ + k];
      const double w_cprod = w[row_contact_product_ + k];

      // cable-length curvature; the weight collects every row carrying -l or
      // +lambda0 * l
      const double wl = -w_slack + w_eprod * lambda0 - w_len;
      const Vec3 d_e = xk.q.k1_pos - ctx_.elastic_anchor(xk);
      if (wl != 0.0) {
        const Mat3 n_e = dyn_detail::normalize_jacobian(d_e, delta);
        emit_block(ik1, ik1, n_e, wl);
        if (couple_k2) {
          emit_block(ik2, ik2, n_e, wl);
          emit_block(ik1, ik2, n_e, -wl);
          emit_block(ik2, ik1, n_e, -wl);
        }
      }

      // elastic product: d2c/dl0^2 = -2/k_p, cross term +grad(l)
      if (w_eprod != 0.0) {
        const Vec3 dl_k1 = d_e / dyn_detail::norm_reg(d_e, delta);
        emit(il0, il0, w_eprod * (-2.0 / belt_.k_p));
        for (int j = 0; j < 3; ++j) {
          emit(il0, ik1 + j, w_eprod * dl_k1[j]);
          emit(ik1 + j, il0, w_eprod * dl_k1[j]);
          if (couple_k2) {
            emit(il0, ik2 + j, -w_eprod * dl_k1[j]);
            emit(ik2 + j, il0, -w_eprod * dl_k1[j]);
          }
        }
      }

      // contact product cross term: d2c/dl1 dK2 = -grad(lambda_3)
      if (w_cprod != 0.0) {
        const Vec3 dgap = contact_gap_gradient_k2(xk, ctx_, options_.epsilon);
        for (int j = 0; j < 3; ++j) {
          emit(il1, ik2 + j, -w_cprod * dgap[j]);
          emit(ik2 + j, il1, -w_cprod * dgap[j]);
        }
      }

      const double w_obs[4] = {w[row_obstacle_ + 4 * k + 0], w[row_obstacle_ + 4 * k + 1],
                               w[row_obstacle_ + 4 * k + 2], w[row_obstacle_ + 4 * k + 3]};
      if (w_obs[0] != 0.0)
        emit_block(ik1, ik1, ellipsoid_distance_hessian(xk.q.k1_pos, pulley1_, delta),
                   w_obs[0]);
      if (w_obs[1] != 0.0)
        emit_block(ik1, ik1, ellipsoid_distance_hessian(xk.q.k1_pos, pulley2_, delta),
                   w_obs[1]);
      if (w_obs[2] != 0.0)
        emit_block(ik2, ik2, ellipsoid_distance_hessian(xk.q.k2_pos, pulley1_, delta),
                   w_obs[2]);
      if (w_obs[3] != 0.0)
        emit_block(ik2, ik2, ellipsoid_distance_hessian(xk.q.k2_pos, pulley2_, delta),
                   w_obs[3]);
    }
  }

  std::vector<std::pair<double, double>> complementarity_products(
      const VecX& z) const override {
    check_dim(z);
    std::vector<std::pair<double, double>> products;
    products.reserve(layout_.num_knots());
    for (int k = 0; k <= layout_.horizon_N; ++k) {
      const SystemState xk = SystemState::from_flat(layout_.state(z, k));
      const double lambda2 = layout_.lambda0(z, k) / belt_.k_p + belt_.rest_length_L -
                             cable_length(xk, ctx_);
      const double gap = contact_gap(xk, ctx_, options_.epsilon) - options_.epsilon;
      products.emplace_back(layout_.lambda0(z, k) * lambda2, layout_.lambda1(z, k) * gap);
    }
    return products;
  }

 private:
  void check_dim(const VecX& z) const {
    if (z.size() != num_vars())
      throw std::invalid_argument("decision vector dimension mismatch");
  }

  ForceVariables forces(const VecX& z, int k) const {
    ForceVariables f;
    f.elastic_mag = layout_.lambda0(z, k);
    f.contact_mag = layout_.lambda1(z, k);
    return f;
  }

  void build_bounds() {
    const int n = num_vars();
    lb_.resize(n);
    ub_.resize(n);
    const Vec18 xlo = spec_.bounds.state_lower();
    const Vec18 xhi = spec_.bounds.state_upper();
    for (int k = 0; k <= layout_.horizon_N; ++k) {
      lb_.segment<kStateDim>(layout_.x_index(k, 0)) = xlo;
      ub_.segment<kStateDim>(layout_.x_index(k, 0)) = xhi;
      lb_.segment<kInputDim>(layout_.u_index(k, 0)) = spec_.bounds.u_lower;
      ub_.segment<kInputDim>(layout_.u_index(k, 0)) = spec_.bounds.u_upper;
      lb_[layout_.lambda0_index(k)] = spec_.bounds.lambda_lower[0];
      ub_[layout_.lambda0_index(k)] = spec_.bounds.lambda_upper[0];
      lb_[layout_.lambda1_index(k)] = spec_.bounds.lambda_lower[1];
      ub_[layout_.lambda1_index(k)] = spec_.bounds.lambda_upper[1];
    }
    // pin the initial state exactly; the boundary rows stay exactly zero
    lb_.segment<kStateDim>(layout_.x_index(0, 0)) = x_init_;
    ub_.segment<kStateDim>(layout_.x_index(0, 0)) = x_init_;
  }

  void build_blocks() {
    const int N = layout_.horizon_N;
    const int K = N + 1;
    int row = 0;
    auto add = [&](const std::string& name, int rows, bool eq, bool product) {
      blocks_.push_back({name, row, rows, eq, product});
      row += rows;
    };
    row_boundary_ = row;
    add("boundary", kStateDim, true, false);
    row_defect_ = row;
    add("defects", kStateDim * N, true, false);
    row_elastic_slack_ = row;
    add("elastic_slack", K, false, false);
    row_elastic_mag_ = row;
    add("elastic_mag", K, false, false);
    row_elastic_product_ = row;
    add("elastic_product", K, false, true);
    row_contact_gap_ = row;
    add("contact_gap", K, false, false);
    row_contact_mag_ = row;
    add("contact_mag", K, false, false);
    row_contact_product_ = row;
    add("contact_product", K, false, true);
    row_obstacle_ = row;
    add("obstacle", 4 * K, false, false);
    row_length_ = row;
    add("length_limit", K, false, false);
    num_rows_ = row;
  }

  // Columns of the dynamics Jacobian that can be structurally nonzero.
  static const std::array<int, 12>& velocity_row_x_cols() {
    static const std::array<int, 12> cols = {0, 1, 2, 3, 4, 5, 9, 10, 11, 12, 13, 14};
    return cols;
  }

  template <typename Emit>
  void emit_defect_knot(int row0, int k, int sign, const DynamicsJacobians& jac,
                        Emit&& emit) const {
    const double c = -0.5 * spec_.step_h;
    for (int i = 0; i < 9; ++i) {
      emit(row0 + i, layout_.x_index(k, i), sign * 1.0);
      emit(row0 + i, layout_.x_index(k, 9 + i), c * jac.dx(i, 9 + i));
    }
    for (int i = 9; i < 15; ++i) {
      for (int j : velocity_row_x_cols()) {
        double v = c * jac.dx(i, j);
        if (j == i) v += sign;
        emit(row0 + i, layout_.x_index(k, j), v);
      }
      if (i < 12) {
        for (int j = 0; j < 3; ++j)
          emit(row0 + i, layout_.u_index(k, j), c * jac.du(i, j));
        emit(row0 + i, layout_.lambda0_index(k), c * jac.dlambda(i, 0));
      } else {
        emit(row0 + i, layout_.lambda0_index(k), c * jac.dlambda(i, 0));
        emit(row0 + i, layout_.lambda1_index(k), c * jac.dlambda(i, 1));
      }
    }
    for (int i = 15; i < 18; ++i) {
      emit(row0 + i, layout_.x_index(k, i), sign * 1.0);
      emit(row0 + i, layout_.u_index(k, i - 12), c * jac.du(i, i - 12));
    }
  }

  template <typename Emit>
  void for_each_jacobian_entry(const VecX& z, Emit&& emit) const {
    const int N = layout_.horizon_N;
    for (int i = 0; i < kStateDim; ++i)
      emit(row_boundary_ + i, layout_.x_index(0, i), 1.0);

    std::vector<DynamicsJacobians> jac_cache_(N + 1);
    for (int k = 0; k <= N; ++k) {
      const SystemState xk = SystemState::from_flat(layout_.state(z, k));
      jac_cache_[k] = dynamics_jacobians(xk, ControlInput::from_flat(layout_.input(z, k)),
                                         forces(z, k), belt_, ctx_);
    }
    for (int k = 0; k < N; ++k) {
      const int row0 = row_defect_ + kStateDim * k;
      emit_defect_knot(row0, k, -1, jac_cache_[k], emit);
      emit_defect_knot(row0, k + 1, +1, jac_cache_[k + 1], emit);
    }

    const bool include_k2 = ctx_.anchor_is_k2();
    for (int k = 0; k <= N; ++k) {
      const SystemState xk = SystemState::from_flat(layout_.state(z, k));
      const Vec18 dl = cable_length_gradient(xk, ctx_);
      const double lambda0 = layout_.lambda0(z, k);
      const double lambda1 = layout_.lambda1(z, k);
      const double lambda2 = lambda0 / belt_.k_p + belt_.rest_length_L -
                             cable_length(xk, ctx_);

      // lambda_2 >= 0
      emit(row_elastic_slack_ + k, layout_.lambda0_index(k), 1.0 / belt_.k_p);
      for (int j = 0; j < 3; ++j)
        emit(row_elastic_slack_ + k, layout_.x_index(k, j), -dl[j]);
      if (include_k2)
        for (int j = 3; j < 6; ++j)
          emit(row_elastic_slack_ + k, layout_.x_index(k, j), -dl[j]);

      emit(row_elastic_mag_ + k, layout_.lambda0_index(k), 1.0);

      // sigma - lambda0 * lambda2
      emit(row_elastic_product_ + k, layout_.lambda0_index(k),
           -(lambda2 + lambda0 / belt_.k_p));
      for (int j = 0; j < 3; ++j)
        emit(row_elastic_product_ + k, layout_.x_index(k, j), lambda0 * dl[j]);
      if (include_k2)
        for (int j = 3; j < 6; ++j)
          emit(row_elastic_product_ + k, layout_.x_index(k, j), lambda0 * dl[j]);

      const Vec3 dgap = contact_gap_gradient_k2(xk, ctx_, options_.epsilon);
      const double gap = contact_gap(xk, ctx_, options_.epsilon) - options_.epsilon;
      for (int j = 0; j < 3; ++j)
        emit(row_contact_gap_ + k, layout_.x_index(k, 3 + j), dgap[j]);
      emit(row_contact_mag_ + k, layout_.lambda1_index(k), 1.0);
      emit(row_contact_product_ + k, layout_.lambda1_index(k), -gap);
      for (int j = 0; j < 3; ++j)
        emit(row_contact_product_ + k, layout_.x_index(k, 3 + j), -lambda1 * dgap[j]);

      const double delta = ctx_.delta_sing;
      const Vec3 g_k1_p1 = ellipsoid_distance_gradient(xk.q.k1_pos, pulley1_, delta);
      const Vec3 g_k1_p2 = ellipsoid_distance_gradient(xk.q.k1_pos, pulley2_, delta);
      const Vec3 g_k2_p1 = ellipsoid_distance_gradient(xk.q.k2_pos, pulley1_, delta);
      const Vec3 g_k2_p2 = ellipsoid_distance_gradient(xk.q.k2_pos, pulley2_, delta);
      for (int j = 0; j < 3; ++j) {
        emit(row_obstacle_ + 4 * k + 0, layout_.x_index(k, j), g_k1_p1[j]);
        emit(row_obstacle_ + 4 * k + 1, layout_.x_index(k, j), g_k1_p2[j]);
        emit(row_obstacle_ + 4 * k + 2, layout_.x_index(k, 3 + j), g_k2_p1[j]);
        emit(row_obstacle_ + 4 * k + 3, layout_.x_index(k, 3 + j), g_k2_p2[j]);
      }

      for (int j = 0; j < 3; ++j)
        emit(row_length_ + k, layout_.x_index(k, j), -dl[j]);
      if (include_k2)
        for (int j = 3; j < 6; ++j)
          emit(row_length_ + k, layout_.x_index(k, j), -dl[j]);
    }
  }

  void build_pattern() {
    VecX z = VecX::Zero(num_vars());
    // pattern walk needs a nonsingular state; replicate the pinned start
    for (int k = 0; k <= layout_.horizon_N; ++k)
      z.segment<kStateDim>(layout_.x_index(k, 0)) = x_init_;
    auto collect = [&](int r, int c, double) {
      pattern_.rows.push_back(r);
      pattern_.cols.push_back(c);
    };
    for_each_jacobian_entry(z, collect);
  }

  SubtaskSpec spec_;
  BeltModel belt_;
  Pulley pulley1_;
  Pulley pulley2_;
  TranscriptionOptions options_;
  double sigma_;
  Vec18 x_init_;
  DecisionLayout layout_;
  ForceContext ctx_;

  VecX lb_, ub_;
  std::vector<ConstraintBlock> blocks_;
  JacobianPattern pattern_;
  int num_rows_ = 0;
  int row_boundary_ = 0, row_defect_ = 0;
  int row_elastic_slack_ = 0, row_elastic_mag_ = 0, row_elastic_product_ = 0;
  int row_contact_gap_ = 0, row_contact_mag_ = 0, row_contact_product_ = 0;
  int row_obstacle_ = 0, row_length_ = 0;
};

// Builds the NLP for one subtask from the scenario geometry and start state.
inline TranscribedNLP transcribe(const Scenario& scenario, const SubtaskSpec& spec,
                                 const SystemState& x_init,
                                 const TranscriptionOptions& options = {}) {
  return TranscribedNLP(scenario, spec, x_init, options);
}

}  // namespace beltopt
