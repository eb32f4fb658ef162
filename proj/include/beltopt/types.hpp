#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace beltopt {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Vec18 = Eigen::Matrix<double, 18, 1>;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;

constexpr int kStateDim = 18;   // x = [q; qdot]
constexpr int kConfigDim = 9;   // q = [K1 xyz, K2 xyz, K1 rpy]
constexpr int kInputDim = 6;    // u = [F on K1, M on K1]
constexpr int kForceDim = 2;    // [elastic magnitude, contact magnitude]

// Thrown when a scenario or state violates a documented invariant; the
// message names the invariant.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Generalized coordinates: Cartesian positions of the grasped keypoint K1 and
// the opposite keypoint K2, plus K1 orientation as roll/pitch/yaw.
struct KeypointConfig {
  Vec3 k1_pos = Vec3::Zero();   // m
  Vec3 k2_pos = Vec3::Zero();   // m
  Vec3 k1_rpy = Vec3::Zero();   // rad, each bounded by pi

  Vec9 flatten() const {
    Vec9 q;
    q << k1_pos, k2_pos, k1_rpy;
    return q;
  }

  static KeypointConfig from_flat(const Vec9& q) {
    KeypointConfig c;
    c.k1_pos = q.segment<3>(0);
    c.k2_pos = q.segment<3>(3);
    c.k1_rpy = q.segment<3>(6);
    return c;
  }

  void validate() const {
    if (!flatten().allFinite()) throw ValidationError("KeypointConfig finiteness");
    for (int i = 0; i < 3; ++i) {
      if (std::abs(k1_rpy[i]) > M_PI + 1e-12)
        throw ValidationError("KeypointConfig tilt-angle bound");
    }
  }
};

// Full 18-dimensional state x = [q; qdot].
// qdot = [v1 (m/s), v2 (m/s), K1 angular rates (rad/s)].
struct SystemState {
  KeypointConfig q;
  Vec9 qdot = Vec9::Zero();

  Vec18 flatten() const {
    Vec18 x;
    x << q.flatten(), qdot;
    return x;
  }

  static SystemState from_flat(const Vec18& x) {
    SystemState s;
    s.q = KeypointConfig::from_flat(x.head<9>());
    s.qdot = x.tail<9>();
    return s;
  }

  Vec3 k1_vel() const { return qdot.segment<3>(0); }
  Vec3 k2_vel() const { return qdot.segment<3>(3); }
  Vec3 k1_angular_rate() const { return qdot.segment<3>(6); }

  void validate() const {
    q.validate();
    if (!qdot.allFinite()) throw ValidationError("SystemState finiteness");
  }
};

// End-effector wrench applied to K1 through the gripper.
struct ControlInput {
  Vec3 force = Vec3::Zero();    // N
  Vec3 torque = Vec3::Zero();   // N*m

  Vec6 flatten() const {
    Vec6 u;
    u << force, torque;
    return u;
  }

  static ControlInput from_flat(const Vec6& u) {
    ControlInput c;
    c.force = u.head<3>();
    c.torque = u.tail<3>();
    return c;
  }
};

// Magnitudes of the elastic and contact forces plus the algebraic slack
// quantities of the two complementarity pairs.
struct ForceVariables {
  double elastic_mag = 0.0;    // N, >= 0
  double contact_mag = 0.0;    // N, >= 0
  double elastic_slack = 0.0;  // m-equivalent, >= 0
  double contact_slack = 0.0;  // m, >= epsilon

  void validate(double epsilon) const {
    if (elastic_mag < 0.0) throw ValidationError("ForceVariables elastic_mag nonnegative");
    if (contact_mag < 0.0) throw ValidationError("ForceVariables contact_mag nonnegative");
    if (elastic_slack < 0.0) throw ValidationError("ForceVariables elastic_slack nonnegative");
    if (contact_slack < epsilon - 1e-15)
      throw ValidationError("ForceVariables contact_slack >= epsilon");
  }
};

// Physical parameters of the two-keypoint belt model.
struct BeltModel {
  double m1 = 0.042;            // kg, grasped keypoint
  double m2 = 0.042;            // kg, opposite keypoint
  double inertia_M1 = 1e-7;     // kg*m^2, isotropic moment of inertia of K1
  double k_p = 63.34;           // N/m, virtual cable stiffness
  double k_d = 4.65;            // N*s/m, damping between keypoints
  double rest_length_L = 0.2;   // m, cable length in the hanging configuration
  double max_length_Lmax = 0.5; // m, break limit of the virtual cable
  double gravity_g = 9.81;      // m/s^2

  // Circumference of the physical belt loop; the hanging loop doubles over,
  // so the virtual cable rest length is half of it.
  double circumference() const { return 2.0 * rest_length_L; }

  void validate() const {
    if (m1 <= 0 || m2 <= 0 || inertia_M1 <= 0 || k_p <= 0 || k_d <= 0 ||
        rest_length_L <= 0 || max_length_Lmax <= 0 || gravity_g <= 0)
      throw ValidationError("BeltModel positivity");
    if (rest_length_L >= max_length_Lmax)
      throw ValidationError("BeltModel rest_length_L < max_length_Lmax");
  }
};

// One pulley: groove circle plus the ellipsoid used for keypoint avoidance.
// The ellipsoid semi-axis c lies along the shaft axis, a and b span the
// groove plane.
struct Pulley {
  Vec3 center = Vec3::Zero();            // m
  double groove_radius = 0.03;           // m
  Vec3 ellipsoid_semi_axes = Vec3(0.03, 0.03, 0.01);  // m, (a, b, c)
  Vec3 axis = Vec3::UnitX();             // unit shaft direction

  void validate() const {
    if (!(groove_radius > 0)) throw ValidationError("Pulley groove_radius positive");
    if (!(ellipsoid_semi_axes.minCoeff() > 0))
      throw ValidationError("Pulley semi-axes positive");
    if (std::abs(axis.norm() - 1.0) > 1e-9)
      throw ValidationError("Pulley axis unit norm");
    if (!center.allFinite()) throw ValidationError("Pulley finiteness");
  }

  // Orthonormal frame [e1 e2 axis]; columns e1, e2 span the groove plane.
  Mat3 frame() const {
    const Vec3 n = axis;
    int smallest = 0;
    n.cwiseAbs().minCoeff(&smallest);
    Vec3 helper = Vec3::Zero();
    helper[smallest] = 1.0;
    const Vec3 e1 = (helper - helper.dot(n) * n).normalized();
    const Vec3 e2 = n.cross(e1);
    Mat3 f;
    f.col(0) = e1;
    f.col(1) = e2;
    f.col(2) = n;
    return f;
  }
};

enum class SubtaskId { S1, S2 };

inline const char* to_string(SubtaskId id) { return id == SubtaskId::S1 ? "s1" : "s2"; }

// Box bounds for states, inputs, and force magnitudes at every knot.
struct VariableBounds {
  Vec9 q_lower = Vec9::Zero();
  Vec9 q_upper = Vec9::Zero();
  Vec9 qdot_lower = Vec9::Zero();
  Vec9 qdot_upper = Vec9::Zero();
  Vec6 u_lower = Vec6::Zero();
  Vec6 u_upper = Vec6::Zero();
  Vec2 lambda_lower = Vec2::Zero();
  Vec2 lambda_upper = Vec2::Zero();

  // position +-1 m, linear velocity +-0.5 m/s, tilt +-pi, angular rate +-pi,
  // force +-50 N, torque +-1 N*m, force magnitudes within [0, 50] N
  static VariableBounds defaults() {
    VariableBounds b;
    b.q_lower << -1, -1, -1, -1, -1, -1, -M_PI, -M_PI, -M_PI;
    b.q_upper = -b.q_lower;
    b.qdot_lower << -0.5, -0.5, -0.5, -0.5, -0.5, -0.5, -M_PI, -M_PI, -M_PI;
    b.qdot_upper = -b.qdot_lower;
    b.u_lower << -50, -50, -50, -1, -1, -1;
    b.u_upper = -b.u_lower;
    b.lambda_lower << 0, 0;
    b.lambda_upper << 50, 50;
    return b;
  }

  void validate() const {
    auto ordered = [](const auto& lo, const auto& hi) {
      return ((hi - lo).array() >= 0).all();
    };
    if (!ordered(q_lower, q_upper) || !ordered(qdot_lower, qdot_upper) ||
        !ordered(u_lower, u_upper) || !ordered(lambda_lower, lambda_upper))
      throw ValidationError("VariableBounds ordering");
  }

  Vec18 state_lower() const {
    Vec18 lo;
    lo << q_lower, qdot_lower;
    return lo;
  }
  Vec18 state_upper() const {
    Vec18 hi;
    hi << q_upper, qdot_upper;
    return hi;
  }

  bool contains_state(const Vec18& x, double tol = 1e-9) const {
    return ((x - state_lower()).array() >= -tol).all() &&
           ((state_upper() - x).array() >= -tol).all();
  }
};

// Goal, weights, horizon, and bounds for one planning subtask.
struct SubtaskSpec {
  SubtaskId id = SubtaskId::S1;
  SystemState goal_state;
  Vec18 weight_Q = Vec18::Zero();   // diagonal of Q
  Vec6 weight_R = Vec6::Zero();     // diagonal of R
  double weight_w = 0.0;            // tension tracking weight; 0 in S1
  double desired_tension = 0.0;     // N
  int horizon_N = 300;
  double step_h = 0.05;             // s
  VariableBounds bounds = VariableBounds::defaults();

  void validate() const {
    if (horizon_N < 2) throw ValidationError("SubtaskSpec horizon_N >= 2");
    if (!(step_h > 0)) throw ValidationError("SubtaskSpec step_h positive");
    if (weight_Q.minCoeff() < 0 || weight_R.minCoeff() < 0)
      throw ValidationError("SubtaskSpec weights nonnegative");
    if (id == SubtaskId::S1 && weight_w != 0.0)
      throw ValidationError("SubtaskSpec weight_w zero in S1");
    goal_state.validate();
    bounds.validate();
  }
};

namespace detail {
template <typename A, typename B>
bool exact_eq(const A& a, const B& b) {
  return (a.array() == b.array()).all();
}
}  // namespace detail

inline bool operator==(const KeypointConfig& a, const KeypointConfig& b) {
  return detail::exact_eq(a.flatten(), b.flatten());
}
inline bool operator==(const SystemState& a, const SystemState& b) {
  return detail::exact_eq(a.flatten(), b.flatten());
}
inline bool operator==(const BeltModel& a, const BeltModel& b) {
  return a.m1 == b.m1 && a.m2 == b.m2 && a.inertia_M1 == b.inertia_M1 &&
         a.k_p == b.k_p && a.k_d == b.k_d && a.rest_length_L == b.rest_length_L &&
         a.max_length_Lmax == b.max_length_Lmax && a.gravity_g == b.gravity_g;
}
inline bool operator==(const Pulley& a, const Pulley& b) {
  return detail::exact_eq(a.center, b.center) && a.groove_radius == b.groove_radius &&
         detail::exact_eq(a.ellipsoid_semi_axes, b.ellipsoid_semi_axes) &&
         detail::exact_eq(a.axis, b.axis);
}
inline bool operator==(const VariableBounds& a, const VariableBounds& b) {
  return detail::exact_eq(a.q_lower, b.q_lower) && detail::exact_eq(a.q_upper, b.q_upper) &&
         detail::exact_eq(a.qdot_lower, b.qdot_lower) &&
         detail::exact_eq(a.qdot_upper, b.qdot_upper) &&
         detail::exact_eq(a.u_lower, b.u_lower) && detail::exact_eq(a.u_upper, b.u_upper) &&
         detail::exact_eq(a.lambda_lower, b.lambda_lower) &&
         detail::exact_eq(a.lambda_upper, b.lambda_upper);
}
inline bool operator==(const SubtaskSpec& a, const SubtaskSpec& b) {
  return a.id == b.id && a.goal_state == b.goal_state &&
         detail::exact_eq(a.weight_Q, b.weight_Q) && detail::exact_eq(a.weight_R, b.weight_R) &&
         a.weight_w == b.weight_w && a.desired_tension == b.desired_tension &&
         a.horizon_N == b.horizon_N && a.step_h == b.step_h && a.bounds == b.bounds;
}

// One belt-drive-unit instance: geometry, belt parameters, the two subtasks,
// and the hanging start configuration.
struct Scenario {
  std::string name;
  Pulley pulley1;
  Pulley pulley2;
  BeltModel belt;
  SubtaskSpec subtask_s1;
  SubtaskSpec subtask_s2;
  SystemState initial_state;

  void validate() const {
    pulley1.validate();
    pulley2.validate();
    belt.validate();
    subtask_s1.validate();
    subtask_s2.validate();
    initial_state.validate();
    if (subtask_s1.id != SubtaskId::S1 || subtask_s2.id != SubtaskId::S2)
      throw ValidationError("Scenario subtask ids");
    const double hang = (initial_state.q.k1_pos - initial_state.q.k2_pos).norm();
    if (hang > belt.rest_length_L + 1e-9)
      throw ValidationError("Scenario initial cable slack (|K1-K2| <= rest_length_L)");
    const double wrap = 2.0 * (pulley1.center - pulley2.center).norm() +
                        M_PI * (pulley1.groove_radius + pulley2.groove_radius);
    if (belt.max_length_Lmax <= wrap)
      throw ValidationError("Scenario max_length_Lmax exceeds taut wrap length");
  }
};

inline bool operator==(const Scenario& a, const Scenario& b) {
  return a.name == b.name && a.pulley1 == b.pulley1 && a.pulley2 == b.pulley2 &&
         a.belt == b.belt && a.subtask_s1 == b.subtask_s1 && a.subtask_s2 == b.subtask_s2 &&
         a.initial_state == b.initial_state;
}

}  // namespace beltopt
