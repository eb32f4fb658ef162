#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "beltopt/types.hpp"

namespace beltopt {

// Stretch of the virtual cable at the S1 goal, beyond the groove-depth
// geometry; reproduces the published goal K1 = O1 + 0.19 m * z for the
// 0.4 m belt.
constexpr double kS1StretchMargin = 0.02;  // m

// Cable tension encouraged at the S2 goal.
constexpr double kDefaultDesiredTension = 3.0;  // N

namespace io_detail {

using nlohmann::json;

template <int N>
json vec_to_json(const Eigen::Matrix<double, N, 1>& v) {
  json a = json::array();
  for (int i = 0; i < N; ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from_json(const json& a, const std::string& key) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(N))
    throw ParseError("expected array of length " + std::to_string(N) + " at '" + key + "'");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = a[i].get<double>();
  return v;
}

inline const json& member(const json& j, const std::string& key) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing key '" + key + "'");
  return *it;
}

inline json state_to_json(const SystemState& s) {
  json j;
  j["k1_position_m"] = vec_to_json<3>(s.q.k1_pos);
  j["k2_position_m"] = vec_to_json<3>(s.q.k2_pos);
  j["k1_rpy_rad"] = vec_to_json<3>(s.q.k1_rpy);
  j["k1_velocity_m_per_s"] = vec_to_json<3>(s.k1_vel());
  j["k2_velocity_m_per_s"] = vec_to_json<3>(s.k2_vel());
  j["k1_angular_rate_rad_per_s"] = vec_to_json<3>(s.k1_angular_rate());
  return j;
}

inline SystemState state_from_json(const json& j) {
  SystemState s;
  s.q.k1_pos = vec_from_json<3>(member(j, "k1_position_m"), "k1_position_m");
  s.q.k2_pos = vec_from_json<3>(member(j, "k2_position_m"), "k2_position_m");
  s.q.k1_rpy = vec_from_json<3>(member(j, "k1_rpy_rad"), "k1_rpy_rad");
  s.qdot.segment<3>(0) = vec_from_json<3>(member(j, "k1_velocity_m_per_s"), "k1_velocity_m_per_s");
  s.qdot.segment<3>(3) = vec_from_json<3>(member(j, "k2_velocity_m_per_s"), "k2_velocity_m_per_s");
  s.qdot.segment<3>(6) =
      vec_from_json<3>(member(j, "k1_angular_rate_rad_per_s"), "k1_angular_rate_rad_per_s");
  return s;
}

inline json pulley_to_json(const Pulley& p) {
  json j;
  j["center_m"] = vec_to_json<3>(p.center);
  j["groove_radius_m"] = p.groove_radius;
  j["ellipsoid_semi_axes_m"] = vec_to_json<3>(p.ellipsoid_semi_axes);
  j["axis"] = vec_to_json<3>(p.axis);
  return j;
}

inline Pulley pulley_from_json(const json& j) {
  Pulley p;
  p.center = vec_from_json<3>(member(j, "center_m"), "center_m");
  p.groove_radius = member(j, "groove_radius_m").get<double>();
  p.ellipsoid_semi_axes =
      vec_from_json<3>(member(j, "ellipsoid_semi_axes_m"), "ellipsoid_semi_axes_m");
  p.axis = vec_from_json<3>(member(j, "axis"), "axis");
  return p;
}

inline json belt_to_json(const BeltModel& b) {
  json j;
  j["m1_kg"] = b.m1;
  j["m2_kg"] = b.m2;
  j["inertia_m1_kg_m2"] = b.inertia_M1;
  j["stiffness_kp_n_per_m"] = b.k_p;
  j["damping_kd_ns_per_m"] = b.k_d;
  j["rest_length_l_m"] = b.rest_length_L;
  j["max_length_lmax_m"] = b.max_length_Lmax;
  j["gravity_m_per_s2"] = b.gravity_g;
  return j;
}

inline BeltModel belt_from_json(const json& j) {
  BeltModel b;
  b.m1 = member(j, "m1_kg").get<double>();
  b.m2 = member(j, "m2_kg").get<double>();
  b.inertia_M1 = member(j, "inertia_m1_kg_m2").get<double>();
  b.k_p = member(j, "stiffness_kp_n_per_m").get<double>();
  b.k_d = member(j, "damping_kd_ns_per_m").get<double>();
  b.rest_length_L = member(j, "rest_length_l_m").get<double>();
  b.max_length_Lmax = member(j, "max_length_lmax_m").get<double>();
  b.gravity_g = member(j, "gravity_m_per_s2").get<double>();
  return b;
}

inline json bounds_to_json(const VariableBounds& b) {
  json j;
  j["q_lower"] = vec_to_json<9>(b.q_lower);
  j["q_upper"] = vec_to_json<9>(b.q_upper);
  j["qdot_lower"] = vec_to_json<9>(b.qdot_lower);
  j["qdot_upper"] = vec_to_json<9>(b.qdot_upper);
  j["u_lower"] = vec_to_json<6>(b.u_lower);
  j["u_upper"] = vec_to_json<6>(b.u_upper);
  j["lambda_lower"] = vec_to_json<2>(b.lambda_lower);
  j["lambda_upper"] = vec_to_json<2>(b.lambda_upper);
  return j;
}

inline VariableBounds bounds_from_json(const json& j) {
  VariableBounds b;
  b.q_lower = vec_from_json<9>(member(j, "q_lower"), "q_lower");
  b.q_upper = vec_from_json<9>(member(j, "q_upper"), "q_upper");
  b.qdot_lower = vec_from_json<9>(member(j, "qdot_lower"), "qdot_lower");
  b.qdot_upper = vec_from_json<9>(member(j, "qdot_upper"), "qdot_upper");
  b.u_lower = vec_from_json<6>(member(j, "u_lower"), "u_lower");
  b.u_upper = vec_from_json<6>(member(j, "u_upper"), "u_upper");
  b.lambda_lower = vec_from_json<2>(member(j, "lambda_lower"), "lambda_lower");
  b.lambda_upper = vec_from_json<2>(member(j, "lambda_upper"), "lambda_upper");
  return b;
}

inline json subtask_to_json(const SubtaskSpec& s) {
  json j;
  j["id"] = to_string(s.id);
  j["goal_state"] = state_to_json(s.goal_state);
  j["weight_q"] = vec_to_json<18>(s.weight_Q);
  j["weight_r"] = vec_to_json<6>(s.weight_R);
  j["weight_w"] = s.weight_w;
  j["desired_tension_n"] = s.desired_tension;
  j["horizon_n"] = s.horizon_N;
  j["step_h_s"] = s.step_h;
  j["bounds"] = bounds_to_json(s.bounds);
  return j;
}

inline SubtaskSpec subtask_from_json(const json& j) {
  SubtaskSpec s;
  const std::string id = member(j, "id").get<std::string>();
  if (id == "s1")
    s.id = SubtaskId::S1;
  else if (id == "s2")
    s.id = SubtaskId::S2;
  else
    throw ParseError("subtask id must be 's1' or 's2'");
  s.goal_state = state_from_json(member(j, "goal_state"));
  s.weight_Q = vec_from_json<18>(member(j, "weight_q"), "weight_q");
  s.weight_R = vec_from_json<6>(member(j, "weight_r"), "weight_r");
  s.weight_w = member(j, "weight_w").get<double>();
  s.desired_tension = member(j, "desired_tension_n").get<double>();
  s.horizon_N = member(j, "horizon_n").get<int>();
  s.step_h = member(j, "step_h_s").get<double>();
  s.bounds = bounds_from_json(member(j, "bounds"));
  return s;
}

}  // namespace io_detail

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["name"] = sc.name;
  j["pulley1"] = io_detail::pulley_to_json(sc.pulley1);
  j["pulley2"] = io_detail::pulley_to_json(sc.pulley2);
  j["belt"] = io_detail::belt_to_json(sc.belt);
  j["subtask_s1"] = io_detail::subtask_to_json(sc.subtask_s1);
  j["subtask_s2"] = io_detail::subtask_to_json(sc.subtask_s2);
  j["initial_state"] = io_detail::state_to_json(sc.initial_state);
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  using io_detail::member;
  Scenario sc;
  sc.name = member(j, "name").get<std::string>();
  sc.pulley1 = io_detail::pulley_from_json(member(j, "pulley1"));
  sc.pulley2 = io_detail::pulley_from_json(member(j, "pulley2"));
  sc.belt = io_detail::belt_from_json(member(j, "belt"));
  sc.subtask_s1 = io_detail::subtask_from_json(member(j, "subtask_s1"));
  sc.subtask_s2 = io_detail::subtask_from_json(member(j, "subtask_s2"));
  sc.initial_state = io_detail::state_from_json(member(j, "initial_state"));
  sc.validate();
  return sc;
}

// Parses and validates a scenario file; ParseError on malformed input,
// ValidationError naming the violated invariant otherwise.
inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed scenario file '" + path + "': " + e.what());
  }
  try {
    return scenario_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scenario file '" + path + "': " + e.what());
  }
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario file '" + path + "'");
  out << scenario_to_json(sc).dump(2) << "\n";
}

// S1 goal: K1 vertically above O1 with the cable stretched slightly past the
// groove-depth wrap, K2 at the bottom of the P1 groove, zero velocity.
inline SystemState s1_goal_state(const Scenario& sc) {
  const Vec3 o1 = sc.pulley1.center;
  const double r1 = sc.pulley1.groove_radius;
  const double lift = sc.belt.rest_length_L + kS1StretchMargin - r1;
  SystemState g;
  g.q.k1_pos = o1 + Vec3(0, 0, lift);
  g.q.k2_pos = o1 - Vec3(0, 0, r1);
  g.q.k1_rpy = Vec3::Zero();
  g.qdot.setZero();
  return g;
}

// S2 goal: K1 past the outer-bottom edge of P2 on the ray from O1, far enough
// out that the virtual cable carries the desired tension; orientation twisted
// to [-pi/2, 0, pi/2].
inline SystemState s2_goal_state(const Scenario& sc, double desired_tension_target) {
  const Vec3 o1 = sc.pulley1.center;
  const Vec3 o2 = sc.pulley2.center;
  const double r1 = sc.pulley1.groove_radius;
  const double r2 = sc.pulley2.groove_radius;
  const Vec3 dir = (o2 - o1).normalized();
  Vec3 down = -Vec3::UnitZ();
  down -= down.dot(sc.pulley2.axis) * sc.pulley2.axis;
  if (down.norm() > 1e-9) down.normalize();
  const Vec3 outer_bottom = o2 + r2 * dir + r2 * down;
  const double reach_geom = (outer_bottom - o1).norm();
  const double reach_tension =
      sc.belt.rest_length_L - r1 + desired_tension_target / sc.belt.k_p;
  const double reach = std::max(reach_geom, reach_tension);
  SystemState g;
  g.q.k1_pos = o1 + reach * (outer_bottom - o1).normalized();
  g.q.k2_pos = o1 - Vec3(0, 0, r1);
  g.q.k1_rpy = Vec3(-M_PI / 2.0, 0.0, M_PI / 2.0);
  g.qdot.setZero();
  return g;
}

// Cable tension implied by a S2 goal position: k_p * (l(q) - L) with
// l = |K1 - O1| + r1, clamped at zero for goals sampled inside the slack set.
inline double s2_desired_tension(const Vec3& k1_goal, const Scenario& sc) {
  const double l = (k1_goal - sc.pulley1.center).norm() + sc.pulley1.groove_radius;
  return std::max(0.0, sc.belt.k_p * (l - sc.belt.rest_length_L));
}

inline Vec18 s1_default_weights() {
  Vec18 q;
  q << 10, 10, 10, 5, 5, 5, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0.01, 0.01, 0.01;
  return q;
}

inline Vec18 s2_default_weights() {
  Vec18 q;
  q << 10, 10, 10, 0, 0, 0, 5, 5, 5, 1, 1, 1, 0, 0, 0, 0.05, 0.05, 0.05;
  return q;
}

// Builds the default subtask pair for a scenario geometry.
inline std::pair<SubtaskSpec, SubtaskSpec> default_goals(const Scenario& sc,
                                                         int horizon_N = 300,
                                                         double step_h = 0.05) {
  SubtaskSpec s1;
  s1.id = SubtaskId::S1;
  s1.goal_state = s1_goal_state(sc);
  s1.weight_Q = s1_default_weights();
  s1.weight_R = Vec6::Constant(0.01);
  s1.weight_w = 0.0;
  s1.desired_tension = 0.0;
  s1.horizon_N = horizon_N;
  s1.step_h = step_h;
  s1.bounds = VariableBounds::defaults();

  SubtaskSpec s2;
  s2.id = SubtaskId::S2;
  s2.goal_state = s2_goal_state(sc, kDefaultDesiredTension);
  s2.weight_Q = s2_default_weights();
  s2.weight_R = Vec6::Constant(0.01);
  s2.weight_w = 0.5;
  s2.desired_tension = s2_desired_tension(s2.goal_state.q.k1_pos, sc);
  s2.horizon_N = horizon_N;
  s2.step_h = step_h;
  s2.bounds = VariableBounds::defaults();
  return {s1, s2};
}

// The four published scenarios: P1 fixed, P2 position and belt length vary.
inline std::vector<Scenario> builtin_scenarios(int horizon_N = 300, double step_h = 0.05) {
  const Vec3 o1(0.100, 0.550, 0.340);
  const std::vector<Vec3> o2 = {
      Vec3(0.100, 0.680, 0.340),
      Vec3(0.100, 0.642, 0.432),
      Vec3(0.100, 0.645, 0.275),
      Vec3(0.100, 0.780, 0.340),
  };
  const std::vector<double> belt_circumference = {0.4, 0.4, 0.4, 0.6};

  std::vector<Scenario> out;
  for (std::size_t i = 0; i < o2.size(); ++i) {
    Scenario sc;
    sc.name = "scenario" + std::to_string(i + 1);
    sc.pulley1.center = o1;
    sc.pulley1.groove_radius = 0.030;
    sc.pulley1.ellipsoid_semi_axes = Vec3(0.030, 0.030, 0.010);
    sc.pulley1.axis = Vec3::UnitX();
    sc.pulley2.center = o2[i];
    sc.pulley2.groove_radius = 0.015;
    sc.pulley2.ellipsoid_semi_axes = Vec3(0.015, 0.015, 0.010);
    sc.pulley2.axis = Vec3::UnitX();

    sc.belt = BeltModel{};
    sc.belt.rest_length_L = belt_circumference[i] / 2.0;
    const double wrap = 2.0 * (o1 - o2[i]).norm() +
                        M_PI * (sc.pulley1.groove_radius + sc.pulley2.groove_radius);
    sc.belt.max_length_Lmax = 1.25 * wrap;

    sc.initial_state.q.k1_pos = Vec3(0.10, 0.30, 0.45);
    sc.initial_state.q.k2_pos =
        sc.initial_state.q.k1_pos - Vec3(0, 0, 0.95 * sc.belt.rest_length_L);
    sc.initial_state.q.k1_rpy = Vec3::Zero();
    sc.initial_state.qdot.setZero();

    auto [s1, s2] = default_goals(sc, horizon_N, step_h);
    sc.subtask_s1 = std::move(s1);
    sc.subtask_s2 = std::move(s2);
    sc.validate();
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace beltopt
