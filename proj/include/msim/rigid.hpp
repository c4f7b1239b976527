#pragma once

// Minimal rigid layer: free 6-DoF bodies under semi-implicit Newton-Euler,
// kinematically driven robot links, per-body coupling wrench buffers.

#include "msim/geometry.hpp"
#include "msim/sdf.hpp"

namespace msim {

enum class BodyMode : std::uint8_t { Dynamic, Kinematic };

/// Force/torque accumulated on a body during soft substeps; torque is about
/// the body's center of mass. Reset at the start of every rigid step.
struct WrenchBuffer {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();

  void reset() {
    force.setZero();
    torque.setZero();
  }
};

struct RigidBody {
  std::string name;
  Pose pose;
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();
  double mass = 1.0;
  Vec3 inertia = Vec3::Constant(1e-3);  // body-frame principal inertia
  Vec3 com_offset = Vec3::Zero();       // body frame
  std::vector<Shape> shapes;
  BodyMode mode = BodyMode::Kinematic;

  Vec3 world_com() const { return pose.apply(com_offset); }

  void validate() const {
    if (mode == BodyMode::Dynamic && (mass <= 0.0 || inertia.minCoeff() <= 0.0))
      throw std::invalid_argument("RigidBody: dynamic body needs positive mass and inertia");
    for (const Shape& s : shapes) s.validate();
  }
};

/// World-frame velocity of a material point rigidly attached to the body.
inline Vec3 body_point_velocity(const RigidBody& b, const Vec3& p) {
  return b.linear_velocity + b.angular_velocity.cross(p - b.world_com());
}

/// Semi-implicit Euler for a free dynamic body. Velocities update first,
/// the pose integrates with the updated twist, quaternion renormalized.
inline void integrate_free_body(RigidBody& b, const WrenchBuffer& w, const Vec3& gravity,
                                double dt) {
  if (b.mode != BodyMode::Dynamic) return;
  b.linear_velocity += dt * (gravity + w.force / b.mass);
  Mat3 rot = b.pose.matrix3();
  Mat3 inertia_w = rot * b.inertia.asDiagonal() * rot.transpose();
  Vec3 ang_mom = inertia_w * b.angular_velocity;
  b.angular_velocity += dt * inertia_w.inverse() * (w.torque - b.angular_velocity.cross(ang_mom));
  // Translate so the COM follows the linear velocity, then rotate about it.
  Vec3 com = b.world_com();
  Vec3 com_new = com + dt * b.linear_velocity;
  Quat dq = quat_exp(b.angular_velocity * dt);
  Quat rot_new = (dq * b.pose.rotation).normalized();
  b.pose = Pose(rot_new, com_new - rot_new * b.com_offset);
}

/// Gripper with two mirrored prismatic fingers hanging off the TCP frame.
struct GripperConfig {
  bool present = false;
  Vec3 axis{1, 0, 0};     // finger separation axis in the TCP frame
  double lower = 0.0;     // finger opening limits (per finger)
  double upper = 0.04;
  Vec3 finger_half_extents{0.005, 0.01, 0.02};
  Vec3 finger_offset{0.0, 0.0, 0.02};  // finger body center relative to TCP, along -z of travel
  double friction = 1.0;
};

/// Kinematically driven robot: link poses always equal FK of the chain;
/// soft-body reactions are recorded but do not perturb motion.
struct Robot {
  KinematicChain chain;
  VecX q;
  VecX qdot;
  GripperConfig gripper;
  double finger_q = 0.0;
  double finger_qdot = 0.0;

  std::vector<RigidBody> links;     // one kinematic body per chain link
  RigidBody finger_left, finger_right;

  double drive_velocity_limit = 2.0;  // per joint, rad/s or m/s
  double finger_velocity_limit = 0.2;
  VecX drive_bias;                    // constant joint-space disturbance, rad/s
  bool limit_violation = false;

  Pose base_pose;

  void init(const Pose& base = Pose::identity()) {
    base_pose = base;
    if (q.size() == 0) q = VecX::Zero(chain.dof());
    qdot = VecX::Zero(chain.dof());
    if (drive_bias.size() == 0) drive_bias = VecX::Zero(chain.dof());
    links.resize(chain.dof());
    for (int i = 0; i < chain.dof(); ++i) {
      links[i].name = "link" + std::to_string(i);
      links[i].mode = BodyMode::Kinematic;
    }
    finger_left.name = "finger_left";
    finger_right.name = "finger_right";
    finger_left.mode = finger_right.mode = BodyMode::Kinematic;
    if (gripper.present) {
      Shape fs;
      fs.geom = BoxGeom{gripper.finger_half_extents};
      fs.friction = gripper.friction;
      finger_left.shapes = {fs};
      finger_right.shapes = {fs};
    }
    update_link_poses(0.0);
  }

  Pose tcp_pose() const {
    return compose(base_pose, forward_kinematics(chain, q).tcp);
  }

  void update_link_poses(double dt) {
    FkResult fk = forward_kinematics(chain, q);
    for (int i = 0; i < chain.dof(); ++i) {
      Pose world = compose(base_pose, fk.link_poses[i]);
      set_kinematic_pose(links[i], world, dt);
    }
    if (gripper.present) {
      Pose tcp = compose(base_pose, fk.tcp);
      Vec3 travel = gripper.axis.normalized();
      Pose l = compose(tcp, Pose::from_translation(gripper.finger_offset + travel * finger_q));
      Pose r = compose(tcp, Pose::from_translation(gripper.finger_offset - travel * finger_q));
      set_kinematic_pose(finger_left, l, dt);
      set_kinematic_pose(finger_right, r, dt);
    }
  }

  static void set_kinematic_pose(RigidBody& b, const Pose& target, double dt) {
    if (dt > 0.0) {
      b.linear_velocity = (target.translation - b.pose.translation) / dt;
      b.angular_velocity = quat_log(target.rotation * b.pose.rotation.conjugate()) / dt;
    } else {
      b.linear_velocity.setZero();
      b.angular_velocity.setZero();
    }
    b.pose = target;
  }
};

/// First-order drive toward (qbar, qbardot) with gain 1/dt: the target is
/// reached in one step unless the velocity clamp engages. Joint limits clamp
/// and set the violation flag.
inline void robot_drive_step(Robot& r, const VecX& qbar, const VecX& qbardot, double dt,
                             double finger_target = -1.0) {
  if (qbar.size() != r.chain.dof() || qbardot.size() != r.chain.dof())
    throw std::invalid_argument("robot_drive_step: drive target dimension mismatch");
  VecX qnew(r.chain.dof());
  for (int i = 0; i < r.chain.dof(); ++i) {
    double cmd = (qbar[i] - r.q[i]) / dt + qbardot[i];
    cmd = std::clamp(cmd, -r.drive_velocity_limit, r.drive_velocity_limit);
    cmd += r.drive_bias[i];
    qnew[i] = r.q[i] + cmd * dt;
    const Joint& j = r.chain.joints[i];
    if (qnew[i] < j.lower || qnew[i] > j.upper) {
      qnew[i] = std::clamp(qnew[i], j.lower, j.upper);
      r.limit_violation = true;
    }
  }
  r.qdot = (qnew - r.q) / dt;
  r.q = qnew;
  if (r.gripper.present && finger_target >= 0.0) {
    double cmd = std::clamp((finger_target - r.finger_q) / dt, -r.finger_velocity_limit,
                            r.finger_velocity_limit);
    double fnew = std::clamp(r.finger_q + cmd * dt, r.gripper.lower, r.gripper.upper);
    r.finger_qdot = (fnew - r.finger_q) / dt;
    r.finger_q = fnew;
  }
  r.update_link_poses(dt);
}

}  // namespace msim
