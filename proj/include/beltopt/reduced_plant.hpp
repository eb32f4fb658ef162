#pragma once

#include <stdexcept>
#include <vector>

#include "beltopt/dynamics.hpp"
#include "beltopt/solver.hpp"
#include "beltopt/types.hpp"

namespace beltopt {

class SimulationError : public std::runtime_error {
 public:
  explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

struct ReducedPlantParams {
  double contact_stiffness = 1e4;  // N/m, one-sided penalty at the P1 rim
  double contact_damping = 10.0;   // N*s/m on the radial approach velocity
  int substeps = 10;               // RK4 substeps per knot interval
  double blowup_limit = 1e3;
};

// State trace of the reduced two-keypoint plant with the force magnitudes
// evaluated by the constitutive laws.
struct ReducedTrace {
  std::vector<double> t;
  std::vector<Vec18> x;
  std::vector<double> elastic_mag;
  std::vector<double> contact_mag;
};

namespace reduced_detail {

// Spring law: tension proportional to stretch beyond rest length, zero slack.
inline double constitutive_elastic(const SystemState& s, const BeltModel& belt,
                                   const ForceContext& ctx) {
  return belt.k_p * std::max(0.0, cable_length(s, ctx) - belt.rest_length_L);
}

// Stiff one-sided penalty keeping K2 outside the groove circle of P1.
inline double constitutive_contact(const SystemState& s, const Pulley& p1,
                                   const ReducedPlantParams& params) {
  const Vec3 r = s.q.k2_pos - p1.center;
  const double dist = r.norm();
  if (dist >= p1.groove_radius || dist < 1e-12) return 0.0;
  const double pen = p1.groove_radius - dist;
  const double approach = r.dot(s.k2_vel()) / dist;  // radial velocity, >0 moving out
  return std::max(0.0, params.contact_stiffness * pen - params.contact_damping * approach);
}

inline Vec18 constitutive_field(const Vec18& x, const Vec6& u, const BeltModel& belt,
                                const ForceContext& ctx, const ReducedPlantParams& params,
                                ForceVariables* forces_out = nullptr) {
  const SystemState s = SystemState::from_flat(x);
  ForceVariables f;
  f.elastic_mag = constitutive_elastic(s, belt, ctx);
  f.contact_mag = constitutive_contact(s, ctx.pulley1, params);
  if (forces_out) *forces_out = f;
  return vector_field(s, ControlInput::from_flat(u), f, belt, ctx);
}

}  // namespace reduced_detail

// Integrates the reduced plant over [0, T] with a fixed step and zero-order
// hold input u(t) = u(floor(t/h)); fourth-order Runge-Kutta.
inline ReducedTrace simulate_reduced_from(const Vec18& x0, const MatX& inputs, double h,
                                          int horizon_N, const BeltModel& belt,
                                          const ForceContext& ctx_in,
                                          const ReducedPlantParams& params = {}) {
  if (params.substeps < 1) throw std::invalid_argument("substeps must be >= 1");
  ForceContext ctx = ctx_in;
  ctx.regularized = true;  // replay never throws on grazing singularities

  ReducedTrace trace;
  Vec18 x = x0;
  const double dt = h / params.substeps;
  ForceVariables f;
  reduced_detail::constitutive_field(x, inputs.row(0).transpose(), belt, ctx, params, &f);
  trace.t.push_back(0.0);
  trace.x.push_back(x);
  trace.elastic_mag.push_back(f.elastic_mag);
  trace.contact_mag.push_back(f.contact_mag);

  for (int k = 0; k < horizon_N; ++k) {
    const Vec6 u = inputs.row(k).transpose();
    for (int s = 0; s < params.substeps; ++s) {
      const Vec18 k1 = reduced_detail::constitutive_field(x, u, belt, ctx, params);
      const Vec18 k2 =
          reduced_detail::constitutive_field(x + 0.5 * dt * k1, u, belt, ctx, params);
      const Vec18 k3 =
          reduced_detail::constitutive_field(x + 0.5 * dt * k2, u, belt, ctx, params);
      const Vec18 k4 = reduced_detail::constitutive_field(x + dt * k3, u, belt, ctx, params);
      x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (x.cwiseAbs().maxCoeff() > params.blowup_limit)
        throw SimulationError("reduced plant blow-up at t=" +
                              std::to_string(k * h + (s + 1) * dt));
      reduced_detail::constitutive_field(x, u, belt, ctx, params, &f);
      trace.t.push_back(k * h + (s + 1) * dt);
      trace.x.push_back(x);
      trace.elastic_mag.push_back(f.elastic_mag);
      trace.contact_mag.push_back(f.contact_mag);
    }
  }
  return trace;
}

// Open-loop replay of a solved trajectory through the constitutive plant.
inline ReducedTrace simulate_reduced(const TrajectorySolution& solution,
                                     const Scenario& scenario,
                                     const ForceContext& ctx,
                                     const ReducedPlantParams& params = {}) {
  if (solution.status != SolveStatus::Converged)
    throw std::invalid_argument("simulate_reduced: solution not converged");
  return simulate_reduced_from(solution.states.row(0).transpose(), solution.inputs,
                               solution.step_h, solution.horizon_N, scenario.belt, ctx,
                               params);
}

// Kinetic + one-sided spring potential + gravitational potential; used by the
// dissipation audit (contact-free states).
inline double reduced_energy(const Vec18& x, const BeltModel& belt, const ForceContext& ctx) {
  const SystemState s = SystemState::from_flat(x);
  const double ke = 0.5 * belt.m1 * s.k1_vel().squaredNorm() +
                    0.5 * belt.m2 * s.k2_vel().squaredNorm() +
                    0.5 * belt.inertia_M1 * s.k1_angular_rate().squaredNorm();
  const double stretch = std::max(0.0, cable_length(s, ctx) - belt.rest_length_L);
  const double pe_spring = 0.5 * belt.k_p * stretch * stretch;
  const double pe_grav =
      belt.gravity_g * (belt.m1 * s.q.k1_pos.z() + belt.m2 * s.q.k2_pos.z());
  return ke + pe_spring + pe_grav;
}

inline Vec3 reduced_momentum(const Vec18& x, const BeltModel& belt) {
  const SystemState s = SystemState::from_flat(x);
  return belt.m1 * s.k1_vel() + belt.m2 * s.k2_vel();
}

}  // namespace beltopt
