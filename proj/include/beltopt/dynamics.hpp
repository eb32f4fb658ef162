#pragma once

#include <cmath>
#include <stdexcept>

#include "beltopt/types.hpp"

namespace beltopt {

class SingularityError : public std::runtime_error {
 public:
  explicit SingularityError(const std::string& what) : std::runtime_error(what) {}
};

// Evaluation context for the force terms of one subtask. The elastic anchor
// point p is the state's K2 in S1 and the fixed pulley center O1 in S2; the
// contact anchor is the groove-rim point of P1 nearest to K2. With
// `regularized` set (the solver path), denominators become
// sqrt(|d|^2 + delta_sing^2) and no singularity is thrown.
struct ForceContext {
  SubtaskId subtask_id = SubtaskId::S1;
  Pulley pulley1;
  double delta_sing = 1e-9;  // m
  bool regularized = false;

  bool anchor_is_k2() const { return subtask_id == SubtaskId::S1; }

  Vec3 elastic_anchor(const SystemState& x) const {
    return anchor_is_k2() ? x.q.k2_pos : pulley1.center;
  }
};

namespace dyn_detail {

inline double norm_reg(const Vec3& d, double delta) {
  return std::sqrt(d.squaredNorm() + delta * delta);
}

// d/ds of d/s with s = sqrt(|d|^2 + delta^2); delta = 0 gives the exact
// normalization derivative (I - dd^T/|d|^2)/|d|.
inline Mat3 normalize_jacobian(const Vec3& d, double delta) {
  const double s = norm_reg(d, delta);
  return Mat3::Identity() / s - (d * d.transpose()) / (s * s * s);
}

}  // namespace dyn_detail

// Unit direction from `to_point` toward `from_point`; the projection operator
// of a force magnitude onto the axes. Throws when the points coincide within
// delta_sing.
inline Vec3 projection(const Vec3& from_point, const Vec3& to_point,
                       double delta_sing = 1e-9) {
  const Vec3 d = from_point - to_point;
  const double n = d.norm();
  if (n <= delta_sing)
    throw SingularityError("projection: points coincide within delta_sing");
  return d / n;
}

namespace dyn_detail {

inline Vec3 projection_ctx(const Vec3& from, const Vec3& to, const ForceContext& ctx) {
  const Vec3 d = from - to;
  if (ctx.regularized) return d / norm_reg(d, ctx.delta_sing);
  return projection(from, to, ctx.delta_sing);
}

}  // namespace dyn_detail

// Virtual cable length: |K1 - K2| in S1, |K1 - O1| + r1 in S2.
inline double cable_length(const SystemState& x, const ForceContext& ctx) {
  if (ctx.anchor_is_k2()) {
    const Vec3 d = x.q.k1_pos - x.q.k2_pos;
    return ctx.regularized ? dyn_detail::norm_reg(d, ctx.delta_sing) : d.norm();
  }
  const Vec3 d = x.q.k1_pos - ctx.pulley1.center;
  const double n = ctx.regularized ? dyn_detail::norm_reg(d, ctx.delta_sing) : d.norm();
  return n + ctx.pulley1.groove_radius;
}

// Gradient of cable_length with respect to the flattened state.
inline Vec18 cable_length_gradient(const SystemState& x, const ForceContext& ctx) {
  Vec18 g = Vec18::Zero();
  const Vec3 to = ctx.elastic_anchor(x);
  const Vec3 d = x.q.k1_pos - to;
  const Vec3 dir = d / dyn_detail::norm_reg(d, ctx.regularized ? ctx.delta_sing : 0.0);
  g.segment<3>(0) = dir;
  if (ctx.anchor_is_k2()) g.segment<3>(3) = -dir;
  return g;
}

// Groove-rim point of P1 nearest to K2 (the contact point O_e). Falls back to
// the bottom of the rim when K2 projects onto the shaft axis.
inline Vec3 contact_rim_point(const Vec3& k2, const Pulley& pulley, double delta_sing,
                              bool regularized) {
  const Vec3 n = pulley.axis;
  const Vec3 d = k2 - pulley.center;
  Vec3 w = d - d.dot(n) * n;
  if (w.norm() < delta_sing) {
    w = -Vec3::UnitZ() + Vec3::UnitZ().dot(n) * n;
    if (w.norm() < delta_sing) w = pulley.frame().col(0);
  }
  const double s = dyn_detail::norm_reg(w, regularized ? delta_sing : 0.0);
  return pulley.center + pulley.groove_radius * (w / s);
}

// d(O_e)/d(K2) for the non-degenerate branch.
inline Mat3 contact_rim_jacobian(const Vec3& k2, const Pulley& pulley, double delta_sing) {
  const Vec3 n = pulley.axis;
  const Vec3 d = k2 - pulley.center;
  const Vec3 w = d - d.dot(n) * n;
  if (w.norm() < delta_sing) return Mat3::Zero();
  const Mat3 plane = Mat3::Identity() - n * n.transpose();
  return pulley.groove_radius * dyn_detail::normalize_jacobian(w, delta_sing) * plane;
}

// Smoothed contact distance lambda_3 = sqrt(|K2 - O_e|^2 + eps^2) >= eps.
inline double contact_gap(const SystemState& x, const ForceContext& ctx, double epsilon) {
  if (!(epsilon >= 0)) throw std::invalid_argument("contact_gap: epsilon must be >= 0");
  const Vec3 oe =
      contact_rim_point(x.q.k2_pos, ctx.pulley1, ctx.delta_sing, ctx.regularized);
  const Vec3 r = x.q.k2_pos - oe;
  return std::sqrt(r.squaredNorm() + epsilon * epsilon);
}

// d(lambda_3)/d(K2), differentiating through the rim point.
inline Vec3 contact_gap_gradient_k2(const SystemState& x, const ForceContext& ctx,
                                    double epsilon) {
  const Vec3 oe =
      contact_rim_point(x.q.k2_pos, ctx.pulley1, ctx.delta_sing, ctx.regularized);
  const Vec3 r = x.q.k2_pos - oe;
  const double gap = std::sqrt(r.squaredNorm() + epsilon * epsilon);
  const Mat3 doe = contact_rim_jacobian(x.q.k2_pos, ctx.pulley1, ctx.delta_sing);
  return (Mat3::Identity() - doe).transpose() * r / gap;
}

// Scaled point-to-ellipsoid distance: sqrt((p-O)^T S (p-O)) - 1 in the pulley
// frame; negative inside, zero on the surface.
inline double ellipsoid_distance(const Vec3& point, const Pulley& pulley,
                                 double delta_reg = 0.0) {
  const Vec3 y = pulley.frame().transpose() * (point - pulley.center);
  const Vec3 v = y.cwiseQuotient(pulley.ellipsoid_semi_axes);
  return std::sqrt(v.squaredNorm() + delta_reg * delta_reg) - 1.0;
}

inline Vec3 ellipsoid_distance_gradient(const Vec3& point, const Pulley& pulley,
                                        double delta_reg = 0.0) {
  const Mat3 f = pulley.frame();
  const Vec3 y = f.transpose() * (point - pulley.center);
  const Vec3 v = y.cwiseQuotient(pulley.ellipsoid_semi_axes);
  const double s = std::sqrt(v.squaredNorm() + delta_reg * delta_reg);
  if (s < 1e-12) return Vec3::Zero();
  const Vec3 dy = v.cwiseQuotient(pulley.ellipsoid_semi_axes) / s;
  return f * dy;
}

inline Mat3 ellipsoid_distance_hessian(const Vec3& point, const Pulley& pulley,
                                       double delta_reg = 0.0) {
  const Mat3 f = pulley.frame();
  const Vec3 y = f.transpose() * (point - pulley.center);
  const Vec3 v = y.cwiseQuotient(pulley.ellipsoid_semi_axes);
  const double s = std::sqrt(v.squaredNorm() + delta_reg * delta_reg);
  if (s < 1e-12) return Mat3::Zero();
  const Mat3 inv_a = pulley.ellipsoid_semi_axes.cwiseInverse().asDiagonal();
  const Mat3 core = (Mat3::Identity() / s - (v * v.transpose()) / (s * s * s));
  return f * (inv_a * core * inv_a) * f.transpose();
}

// Continuous-time dynamics xdot = Ax + Bu + G + f(x, lambda): damped relative
// motion of the keypoints, the elastic force of magnitude elastic_mag along
// the K1-anchor direction, the contact force of magnitude contact_mag pushing
// K2 off the pulley center, gravity on both keypoints, and direct
// torque-to-angular-acceleration for K1's orientation.
inline Vec18 vector_field(const SystemState& x, const ControlInput& u,
                          const ForceVariables& f, const BeltModel& belt,
                          const ForceContext& ctx) {
  const Vec3 v1 = x.k1_vel();
  const Vec3 v2 = x.k2_vel();
  const Vec3 pi_e = dyn_detail::projection_ctx(x.q.k1_pos, ctx.elastic_anchor(x), ctx);
  const Vec3 pi_c = dyn_detail::projection_ctx(ctx.pulley1.center, x.q.k2_pos, ctx);
  const Vec3 gravity(0, 0, -belt.gravity_g);

  Vec18 xdot;
  xdot.head<9>() = x.qdot;
  xdot.segment<3>(9) =
      (u.force - belt.k_d * (v1 - v2) - pi_e * f.elastic_mag) / belt.m1 + gravity;
  xdot.segment<3>(12) =
      (belt.k_d * (v1 - v2) + pi_e * f.elastic_mag - pi_c * f.contact_mag) / belt.m2 +
      gravity;
  xdot.segment<3>(15) = u.torque / belt.inertia_M1;
  return xdot;
}

struct DynamicsJacobians {
  Eigen::Matrix<double, 18, 18> dx;      // d(xdot)/dx
  Eigen::Matrix<double, 18, 6> du;       // d(xdot)/du
  Eigen::Matrix<double, 18, 2> dlambda;  // d(xdot)/d[elastic_mag, contact_mag]
};

inline DynamicsJacobians dynamics_jacobians(const SystemState& x, const ControlInput& u,
                                            const ForceVariables& f, const BeltModel& belt,
                                            const ForceContext& ctx) {
  (void)u;
  const double delta = ctx.regularized ? ctx.delta_sing : 0.0;
  const Vec3 anchor = ctx.elastic_anchor(x);
  const Vec3 d_e = x.q.k1_pos - anchor;
  if (!ctx.regularized && d_e.norm() <= ctx.delta_sing)
    throw SingularityError("dynamics_jacobians: elastic projection singular");
  const Vec3 d_c = ctx.pulley1.center - x.q.k2_pos;
  if (!ctx.regularized && d_c.norm() <= ctx.delta_sing)
    throw SingularityError("dynamics_jacobians: contact projection singular");

  const Vec3 pi_e = d_e / dyn_detail::norm_reg(d_e, delta);
  const Vec3 pi_c = d_c / dyn_detail::norm_reg(d_c, delta);
  const Mat3 n_e = dyn_detail::normalize_jacobian(d_e, delta);
  const Mat3 n_c = dyn_detail::normalize_jacobian(d_c, delta);
  const Mat3 eye = Mat3::Identity();

  DynamicsJacobians jac;
  jac.dx.setZero();
  jac.du.setZero();
  jac.dlambda.setZero();

  jac.dx.topRightCorner<9, 9>().setIdentity();

  // v1dot rows
  jac.dx.block<3, 3>(9, 0) = -(f.elastic_mag / belt.m1) * n_e;
  if (ctx.anchor_is_k2()) jac.dx.block<3, 3>(9, 3) = (f.elastic_mag / belt.m1) * n_e;
  jac.dx.block<3, 3>(9, 9) = -(belt.k_d / belt.m1) * eye;
  jac.dx.block<3, 3>(9, 12) = (belt.k_d / belt.m1) * eye;

  // v2dot rows; d(pi_c)/dK2 = -n_c because d_c decreases with K2
  jac.dx.block<3, 3>(12, 0) = (f.elastic_mag / belt.m2) * n_e;
  jac.dx.block<3, 3>(12, 3) = (f.contact_mag / belt.m2) * n_c;
  if (ctx.anchor_is_k2()) jac.dx.block<3, 3>(12, 3) -= (f.elastic_mag / belt.m2) * n_e;
  jac.dx.block<3, 3>(12, 9) = (belt.k_d / belt.m2) * eye;
  jac.dx.block<3, 3>(12, 12) = -(belt.k_d / belt.m2) * eye;

  jac.du.block<3, 3>(9, 0) = eye / belt.m1;
  jac.du.block<3, 3>(15, 3) = eye / belt.inertia_M1;

  jac.dlambda.block<3, 1>(9, 0) = -pi_e / belt.m1;
  jac.dlambda.block<3, 1>(12, 0) = pi_e / belt.m2;
  jac.dlambda.block<3, 1>(12, 1) = -pi_c / belt.m2;
  return jac;
}

}  // namespace beltopt
