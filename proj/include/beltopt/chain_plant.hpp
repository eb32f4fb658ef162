#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "beltopt/reduced_plant.hpp"
#include "beltopt/solver.hpp"
#include "beltopt/types.hpp"

namespace beltopt {

struct TrackingGains {
  double kp_pos = 200.0;   // N/m
  double kd_pos = -1.0;    // N*s/m; negative selects critical damping
  double kp_rot = 1e-6;    // N*m/rad
  double kd_rot = 1e-7;    // N*m*s/rad
  double ff_mass = 0.042;  // kg lifted by the gravity feedforward

  void validate() const {
    if (!(kp_pos > 0) || !(kp_rot > 0))
      throw std::invalid_argument("tracking gains must be positive");
  }
};

// PD tracking law with gravity feedforward, saturated at the input bounds.
inline Vec6 track_k1(const Vec6& pose_error, const Vec6& velocity_error,
                     const TrackingGains& gains, double gravity_g, const Vec6& u_lower,
                     const Vec6& u_upper) {
  gains.validate();
  const double kd_pos = gains.kd_pos >= 0
                            ? gains.kd_pos
                            : 2.0 * std::sqrt(gains.kp_pos * gains.ff_mass);
  Vec6 u;
  u.head<3>() = gains.kp_pos * pose_error.head<3>() + kd_pos * velocity_error.head<3>();
  u[2] += gains.ff_mass * gravity_g;
  u.tail<3>() =
      gains.kp_rot * pose_error.tail<3>() + gains.kd_rot * velocity_error.tail<3>();
  for (int i = 0; i < 6; ++i) u[i] = std::min(u_upper[i], std::max(u_lower[i], u[i]));
  return u;
}

struct ChainPlantParams {
  int num_nodes = 41;
  double dt = 1e-4;                 // s, semi-implicit Euler step
  double contact_stiffness = 1e4;   // N/m
  double contact_damping = 10.0;    // N*s/m
  double ground_drag = 0.1;         // N*s/m per node
  double cap_radius = 0.02;         // m, initial hanging-loop cap
  double settle_time = 1.0;         // s simulated after release
  double groove_contact_tol = 0.012;  // m, node-to-groove-circle distance
  double trace_interval = 0.01;     // s between logged frames
  double blowup_limit = 1e3;
  TrackingGains gains;
};

// Closed loop of point-mass nodes joined by stretch-only spring-dampers; the
// grip node is the belt point held by the gripper.
struct ChainBeltState {
  MatX positions;   // M x 3
  MatX velocities;  // M x 3
  int grip_node = 0;
  Vec3 grip_rpy = Vec3::Zero();  // kinematic bookkeeping of belt twist
  double circumference = 0.0;
  double segment_rest = 0.0;   // circumference / M
  double node_mass = 0.0;
  double segment_stiffness = 0.0;
  double segment_damping = 0.0;

  int num_nodes() const { return static_cast<int>(positions.rows()); }
};

struct AssemblyOutcome {
  bool success = false;
  bool wrapped_p1 = false;
  bool wrapped_p2 = false;
  double final_tension = 0.0;   // N, mean over segments
  double max_penetration = 0.0; // m, worst case over the run
  bool dropped = false;
};

struct ChainFrame {
  double t = 0.0;
  MatX positions;
  MatX velocities;
  double kinetic_energy = 0.0;
  double mean_tension = 0.0;
  double max_penetration = 0.0;
};

struct ChainTrace {
  std::vector<ChainFrame> frames;
  double max_penetration = 0.0;
};

// Hanging stadium-shaped loop in the groove plane of P1, topmost point at the
// grip position; node spacing matches the segment rest length so the belt
// starts force-free.
inline ChainBeltState init_chain_state(const Scenario& scenario,
                                       const ChainPlantParams& params = {}) {
  const int m = params.num_nodes;
  if (m < 8) throw std::invalid_argument("chain plant needs at least 8 nodes");
  const double perimeter = scenario.belt.circumference();
  const double cap = std::min(params.cap_radius, perimeter / (2.0 * M_PI + 2.0));
  const double strand = 0.5 * perimeter - M_PI * cap;

  const Vec3 axis = scenario.pulley1.axis;
  Vec3 down = -Vec3::UnitZ();
  down -= down.dot(axis) * axis;
  if (down.norm() < 1e-9) down = scenario.pulley1.frame().col(0);
  down.normalize();
  const Vec3 side = axis.cross(down);

  const Vec3 grip = scenario.initial_state.q.k1_pos;
  auto path_point = [&](double s) {
    const double q0 = 0.5 * M_PI * cap;        // top-right quarter cap
    const double q1 = q0 + strand;             // right strand
    const double q2 = q1 + M_PI * cap;         // bottom cap
    const double q3 = q2 + strand;             // left strand
    double h = 0.0, v = 0.0;
    if (s < q0) {
      const double phi = s / cap;
      h = cap * std::sin(phi);
      v = cap * (1.0 - std::cos(phi));
    } else if (s < q1) {
      h = cap;
      v = cap + (s - q0);
    } else if (s < q2) {
      const double psi = (s - q1) / cap;
      h = cap * std::cos(psi);
      v = cap + strand + cap * std::sin(psi);
    } else if (s < q3) {
      h = -cap;
      v = cap + strand - (s - q2);
    } else {
      const double phi = (s - q3) / cap;
      h = -cap * std::cos(phi);
      v = cap * (1.0 - std::sin(phi));
    }
    return grip + h * side + v * down;
  };

  ChainBeltState chain;
  chain.positions.resize(m, 3);
  chain.velocities = MatX::Zero(m, 3);
  for (int i = 0; i < m; ++i)
    chain.positions.row(i) = path_point(i * perimeter / m).transpose();
  chain.grip_node = 0;
  chain.grip_rpy = scenario.initial_state.q.k1_rpy;
  chain.circumference = perimeter;
  chain.segment_rest = perimeter / m;
  chain.node_mass = (scenario.belt.m1 + scenario.belt.m2) / m;
  chain.segment_stiffness = scenario.belt.k_p * m / 2.0;
  chain.segment_damping = scenario.belt.k_d * m / 2.0;
  return chain;
}

namespace chain_detail {

// Stretch-only tension of segment i -> j; zero whenever shorter than rest.
inline double segment_tension(const ChainBeltState& chain, int i, int j, Vec3* dir_out) {
  const Vec3 d = (chain.positions.row(j) - chain.positions.row(i)).transpose();
  const double len = d.norm();
  if (len <= chain.segment_rest || len < 1e-12) return 0.0;
  const Vec3 dir = d / len;
  const double rate =
      dir.dot((chain.velocities.row(j) - chain.velocities.row(i)).transpose());
  const double tension =
      chain.segment_stiffness * (len - chain.segment_rest) + chain.segment_damping * rate;
  if (dir_out) *dir_out = dir;
  return std::max(0.0, tension);
}

struct CylinderSpec {
  double radius;
  double z_lo, z_hi;  // extent along the pulley axis, relative to the center
};

// Groove cylinder flanked by two larger flange cylinders; 5 mm flange lip.
inline std::array<CylinderSpec, 3> pulley_cylinders(const Pulley& p) {
  const double half_width = p.ellipsoid_semi_axes[2];
  const double flange_radius = std::max(p.ellipsoid_semi_axes[0], p.groove_radius + 0.005);
  const double inner_half = 0.5 * half_width;
  return {CylinderSpec{p.groove_radius, -inner_half, inner_half},
          CylinderSpec{flange_radius, inner_half, half_width},
          CylinderSpec{flange_radius, -half_width, -inner_half}};
}

// Penalty force of one node against one pulley; returns the penetration.
inline double pulley_contact(const Pulley& p, const Vec3& pos, const Vec3& vel,
                             double k_c, double c_c, Vec3& force) {
  const Vec3 r = pos - p.center;
  const double z = r.dot(p.axis);
  const Vec3 radial = r - z * p.axis;
  const double rho = radial.norm();
  double worst = 0.0;
  for (const auto& cyl : pulley_cylinders(p)) {
    if (z <= cyl.z_lo || z >= cyl.z_hi || rho >= cyl.radius) continue;
    const double pen_radial = cyl.radius - rho;
    const double pen_axial = std::min(z - cyl.z_lo, cyl.z_hi - z);
    Vec3 normal;
    double pen;
    if (pen_radial <= pen_axial && rho > 1e-9) {
      normal = radial / rho;
      pen = pen_radial;
    } else {
      normal = (z - cyl.z_lo <= cyl.z_hi - z) ? -p.axis : p.axis;
      pen = pen_axial;
    }
    const double vn = vel.dot(normal);
    force += std::max(0.0, k_c * pen - c_c * vn) * normal;
    worst = std::max(worst, pen);
  }
  return worst;
}

}  // namespace chain_detail

// Mean stretch-only segment tension of the current shape.
inline double chain_mean_tension(const ChainBeltState& chain) {
  const int m = chain.num_nodes();
  double total = 0.0;
  for (int i = 0; i < m; ++i) total += chain_detail::segment_tension(chain, i, (i + 1) % m, nullptr);
  return total / m;
}

// Advances the chain by one step; grip_force may be null after release.
inline double chain_step(ChainBeltState& chain, const Scenario& scenario,
                         const ChainPlantParams& params, const Vec3* grip_force) {
  const int m = chain.num_nodes();
  MatX forces = MatX::Zero(m, 3);
  const double g = scenario.belt.gravity_g;
  for (int i = 0; i < m; ++i) forces(i, 2) -= chain.node_mass * g;

  for (int i = 0; i < m; ++i) {
    const int j = (i + 1) % m;
    Vec3 dir;
    const double tension = chain_detail::segment_tension(chain, i, j, &dir);
    if (tension > 0.0) {
      forces.row(i) += (tension * dir).transpose();
      forces.row(j) -= (tension * dir).transpose();
    }
  }

  double max_pen = 0.0;
  for (int i = 0; i < m; ++i) {
    Vec3 contact = Vec3::Zero();
    const Vec3 pos = chain.positions.row(i).transpose();
    const Vec3 vel = chain.velocities.row(i).transpose();
    max_pen = std::max(max_pen, chain_detail::pulley_contact(
                                    scenario.pulley1, pos, vel, params.contact_stiffness,
                                    params.contact_damping, contact));
    max_pen = std::max(max_pen, chain_detail::pulley_contact(
                                    scenario.pulley2, pos, vel, params.contact_stiffness,
                                    params.contact_damping, contact));
    forces.row(i) += contact.transpose();
    forces.row(i) -= params.ground_drag * chain.velocities.row(i);
  }

  if (grip_force) forces.row(chain.grip_node) += grip_force->transpose();

  chain.velocities += (params.dt / chain.node_mass) * forces;
  chain.positions += params.dt * chain.velocities;
  if (chain.positions.cwiseAbs().maxCoeff() > params.blowup_limit ||
      !chain.positions.allFinite())
    throw SimulationError("chain plant blow-up");
  return max_pen;
}

// Decides whether the belt loop encloses and seats on each pulley: the pulley
// center must lie inside the belt polygon projected on the groove plane
// (nonzero winding number) and at least two nodes must sit near the groove
// circle; success additionally needs positive mean tension.
inline AssemblyOutcome detect_success(const ChainBeltState& chain, const Scenario& scenario,
                                      const ChainPlantParams& params = {}) {
  auto wrapped = [&](const Pulley& p) {
    const Mat3 f = p.frame();
    const int m = chain.num_nodes();
    std::vector<Vec2> poly(m);
    for (int i = 0; i < m; ++i) {
      const Vec3 rel = chain.positions.row(i).transpose() - p.center;
      poly[i] = Vec2(rel.dot(f.col(0)), rel.dot(f.col(1)));
    }
    int winding = 0;
    for (int i = 0; i < m; ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % m];
      if (a.y() <= 0.0) {
        if (b.y() > 0.0 && (a.x() * (b.y() - a.y()) - a.y() * (b.x() - a.x())) > 0.0)
          ++winding;
      } else {
        if (b.y() <= 0.0 && (a.x() * (b.y() - a.y()) - a.y() * (b.x() - a.x())) < 0.0)
          --winding;
      }
    }
    int seated = 0;
    for (int i = 0; i < m; ++i) {
      const Vec3 rel = chain.positions.row(i).transpose() - p.center;
      const double z = rel.dot(p.axis);
      const double rho = (rel - z * p.axis).norm();
      const double dist = std::hypot(rho - p.groove_radius, z);
      if (dist <= params.groove_contact_tol) ++seated;
    }
    return winding != 0 && seated >= 2;
  };

  AssemblyOutcome outcome;
  outcome.wrapped_p1 = wrapped(scenario.pulley1);
  outcome.wrapped_p2 = wrapped(scenario.pulley2);
  outcome.final_tension = chain_mean_tension(chain);
  const double floor_z =
      std::min(scenario.pulley1.center.z(), scenario.pulley2.center.z()) - 0.15;
  outcome.dropped = chain.positions.col(2).maxCoeff() < floor_z;
  outcome.success =
      outcome.wrapped_p1 && outcome.wrapped_p2 && outcome.final_tension > 0.0;
  return outcome;
}

namespace chain_detail {

inline void log_frame(ChainTrace& trace, const ChainBeltState& chain, double t,
                      double max_pen) {
  ChainFrame frame;
  frame.t = t;
  frame.positions = chain.positions;
  frame.velocities = chain.velocities;
  frame.kinetic_energy = 0.5 * chain.node_mass * chain.velocities.squaredNorm();
  frame.mean_tension = chain_mean_tension(chain);
  frame.max_penetration = max_pen;
  trace.frames.push_back(std::move(frame));
}

// Tracks one solved K1 trajectory with the PD grip law.
inline void track_solution(ChainBeltState& chain, const TrajectorySolution& solution,
                           const Scenario& scenario, const ChainPlantParams& params,
                           ChainTrace& trace, double t_offset) {
  const double total = solution.horizon_N * solution.step_h;
  const int steps = static_cast<int>(std::llround(total / params.dt));
  const double kd = params.gains.kd_pos >= 0
                        ? params.gains.kd_pos
                        : 2.0 * std::sqrt(params.gains.kp_pos *
                                          (scenario.belt.m1 + scenario.belt.m2));
  double next_log = 0.0;
  for (int step = 0; step <= steps; ++step) {
    const double t = step * params.dt;
    const double knot_pos = std::min(t / solution.step_h,
                                     static_cast<double>(solution.horizon_N) - 1e-12);
    const int k = static_cast<int>(knot_pos);
    const double frac = knot_pos - k;
    const Vec3 p_ref =
        ((1.0 - frac) * solution.states.row(k).segment<3>(0) +
         frac * solution.states.row(k + 1).segment<3>(0))
            .transpose();
    const Vec3 v_ref =
        ((1.0 - frac) * solution.states.row(k).segment<3>(9) +
         frac * solution.states.row(k + 1).segment<3>(9))
            .transpose();
    const Vec3 rpy_ref =
        ((1.0 - frac) * solution.states.row(k).segment<3>(6) +
         frac * solution.states.row(k + 1).segment<3>(6))
            .transpose();

    const Vec3 grip_pos = chain.positions.row(chain.grip_node).transpose();
    const Vec3 grip_vel = chain.velocities.row(chain.grip_node).transpose();
    Vec3 grip_force = params.gains.kp_pos * (p_ref - grip_pos) + kd * (v_ref - grip_vel);
    grip_force.z() += params.gains.ff_mass * scenario.belt.gravity_g;
    for (int i = 0; i < 3; ++i) grip_force[i] = std::min(50.0, std::max(-50.0, grip_force[i]));

    const double pen = chain_step(chain, scenario, params, &grip_force);
    chain.grip_rpy = rpy_ref;
    trace.max_penetration = std::max(trace.max_penetration, pen);
    if (t + t_offset >= next_log) {
      log_frame(trace, chain, t + t_offset, pen);
      next_log = t + t_offset + params.trace_interval;
    }
  }
}

}  // namespace chain_detail

// Chain-plant replay of one subtask trajectory from a given (or freshly
// hanging) belt state; the grip stays attached throughout.
inline std::pair<ChainTrace, AssemblyOutcome> simulate_chain(
    const TrajectorySolution& solution, const Scenario& scenario,
    const ChainPlantParams& params = {}, const ChainBeltState* start = nullptr) {
  if (solution.status != SolveStatus::Converged &&
      solution.states.rows() != solution.horizon_N + 1)
    throw std::invalid_argument("simulate_chain: invalid solution");
  params.gains.validate();
  ChainBeltState chain = start ? *start : init_chain_state(scenario, params);
  ChainTrace trace;
  chain_detail::track_solution(chain, solution, scenario, params, trace, 0.0);
  AssemblyOutcome outcome = detect_success(chain, scenario, params);
  outcome.max_penetration = trace.max_penetration;
  return {trace, outcome};
}

struct AssemblyReplay {
  ChainTrace trace;
  AssemblyOutcome outcome;
  ChainBeltState final_state;
};

// Full S1 + S2 replay: fresh hanging belt, track both subtask trajectories,
// release the grip, settle, then judge the assembly.
inline AssemblyReplay simulate_assembly(const TrajectorySolution& s1,
                                        const TrajectorySolution& s2,
                                        const Scenario& scenario,
                                        const ChainPlantParams& params = {}) {
  params.gains.validate();
  AssemblyReplay replay;
  ChainBeltState chain = init_chain_state(scenario, params);
  chain_detail::track_solution(chain, s1, scenario, params, replay.trace, 0.0);
  const double t1 = s1.horizon_N * s1.step_h;
  chain_detail::track_solution(chain, s2, scenario, params, replay.trace, t1);
  const double t2 = t1 + s2.horizon_N * s2.step_h;
  const int settle_steps = static_cast<int>(std::llround(params.settle_time / params.dt));
  double next_log = t2;
  for (int step = 0; step < settle_steps; ++step) {
    const double pen = chain_step(chain, scenario, params, nullptr);
    replay.trace.max_penetration = std::max(replay.trace.max_penetration, pen);
    const double t = t2 + (step + 1) * params.dt;
    if (t >= next_log) {
      chain_detail::log_frame(replay.trace, chain, t, pen);
      next_log = t + params.trace_interval;
    }
  }
  replay.outcome = detect_success(chain, scenario, params);
  replay.outcome.max_penetration = replay.trace.max_penetration;
  replay.final_state = chain;
  return replay;
}

}  // namespace beltopt
