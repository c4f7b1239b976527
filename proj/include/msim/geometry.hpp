#pragma once

// SE(3) poses, twists, serial kinematic chains, FK/IK.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace msim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;

/// Rigid transform in SE(3). Quaternion is kept unit-norm and canonicalized
/// to w >= 0 so serialization is deterministic.
struct Pose {
  Quat rotation{1.0, 0.0, 0.0, 0.0};
  Vec3 translation{0.0, 0.0, 0.0};

  Pose() = default;
  Pose(const Quat& q, const Vec3& t) : rotation(q), translation(t) { canonicalize(); }

  static Pose identity() { return Pose{}; }
  static Pose from_translation(const Vec3& t) { return Pose(Quat::Identity(), t); }
  static Pose from_rotation(const Quat& q) { return Pose(q, Vec3::Zero()); }

  void canonicalize() {
    rotation.normalize();
    if (rotation.w() < 0.0) rotation.coeffs() = -rotation.coeffs();
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Mat3 matrix3() const { return rotation.toRotationMatrix(); }

  Eigen::Matrix4d matrix4() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = matrix3();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// compose(a, b) is the homogeneous matrix product a*b (b applied first).
inline Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

inline Pose inverse(const Pose& a) {
  Quat qi = a.rotation.conjugate();
  return Pose(qi, -(qi * a.translation));
}

/// 6-dim rigid motion increment: free translation plus compact axis-angle
/// rotation. Translation and rotation are independent (no screw coupling).
struct Twist6 {
  Vec3 translation{0.0, 0.0, 0.0};
  Vec3 rotation{0.0, 0.0, 0.0};  // axis * angle, |angle| <= pi after canonicalization

  void canonicalize() {
    double ang = rotation.norm();
    if (ang > kPi) {
      double wrapped = std::fmod(ang + kPi, 2.0 * kPi) - kPi;
      rotation *= wrapped / ang;
    }
  }
};

inline Quat quat_exp(const Vec3& axis_angle) {
  double ang = axis_angle.norm();
  if (ang < 1e-14) {
    Quat q(1.0, 0.5 * axis_angle.x(), 0.5 * axis_angle.y(), 0.5 * axis_angle.z());
    q.normalize();
    return q;
  }
  Vec3 axis = axis_angle / ang;
  return Quat(Eigen::AngleAxisd(ang, axis));
}

inline Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  double vn = q.vec().norm();
  if (vn < 1e-14) return 2.0 * q.vec();
  double ang = 2.0 * std::atan2(vn, q.w());
  return (ang / vn) * q.vec();
}

/// Rotation is the exponential of the axis-angle part; translation copied.
inline Pose pose_from_twist(const Twist6& t) {
  return Pose(quat_exp(t.rotation), t.translation);
}

inline Twist6 twist_from_pose(const Pose& p) {
  Twist6 t;
  t.translation = p.translation;
  t.rotation = quat_log(p.rotation);
  return t;
}

/// Geodesic angle between two rotations, in [0, pi].
inline double rotation_geodesic(const Quat& a, const Quat& b) {
  return quat_log(a.conjugate() * b).norm();
}

enum class JointType : std::uint8_t { Revolute, Prismatic };

struct Joint {
  JointType type = JointType::Revolute;
  Pose offset;          // parent-frame transform to this joint's frame
  Vec3 axis{0, 0, 1};   // unit, in the joint frame
  double lower = -3.0;
  double upper = 3.0;
};

/// Single serial chain; link i frame is the frame after joint i moves.
struct KinematicChain {
  std::vector<Joint> joints;
  Pose tcp_offset;  // from the last link frame

  int dof() const { return static_cast<int>(joints.size()); }

  void validate() const {
    for (const Joint& j : joints) {
      if (std::abs(j.axis.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("KinematicChain: joint axis must be unit-norm");
      if (j.lower > j.upper)
        throw std::invalid_argument("KinematicChain: joint limit lower > upper");
    }
  }

  VecX clamp_limits(const VecX& q, bool* clamped = nullptr) const {
    VecX out = q;
    for (int i = 0; i < dof(); ++i) {
      double c = std::min(std::max(q[i], joints[i].lower), joints[i].upper);
      if (clamped && c != q[i]) *clamped = true;
      out[i] = c;
    }
    return out;
  }
};

struct JointState {
  VecX q;
  VecX qdot;
};

inline Pose joint_motion(const Joint& j, double q) {
  if (j.type == JointType::Revolute) return Pose(quat_exp(j.axis * q), Vec3::Zero());
  return Pose(Quat::Identity(), j.axis * q);
}

struct FkResult {
  std::vector<Pose> link_poses;  // frame after each joint
  Pose tcp;
};

inline FkResult forward_kinematics(const KinematicChain& chain, const VecX& q) {
  if (q.size() != chain.dof())
    throw std::invalid_argument("forward_kinematics: dim(q) != joint count");
  FkResult r;
  r.link_poses.reserve(chain.joints.size());
  Pose cur;
  for (int i = 0; i < chain.dof(); ++i) {
    cur = compose(cur, compose(chain.joints[i].offset, joint_motion(chain.joints[i], q[i])));
    r.link_poses.push_back(cur);
  }
  r.tcp = compose(cur, chain.tcp_offset);
  return r;
}

/// Geometric Jacobian of the TCP at q: rows 0..2 linear, 3..5 angular.
inline MatX geometric_jacobian(const KinematicChain& chain, const VecX& q) {
  FkResult fk = forward_kinematics(chain, q);
  MatX jac = MatX::Zero(6, chain.dof());
  Pose cur;
  for (int i = 0; i < chain.dof(); ++i) {
    Pose joint_frame = compose(cur, chain.joints[i].offset);
    Vec3 z = joint_frame.rotation * chain.joints[i].axis;
    if (chain.joints[i].type == JointType::Prismatic) {
      jac.block<3, 1>(0, i) = z;
    } else {
      jac.block<3, 1>(0, i) = z.cross(fk.tcp.translation - joint_frame.translation);
      jac.block<3, 1>(3, i) = z;
    }
    cur = compose(joint_frame, joint_motion(chain.joints[i], q[i]));
  }
  return jac;
}

struct IkOptions {
  double lambda = 1e-2;
  int max_iters = 200;
  double tol = 1e-5;          // combined weighted error norm
  double rotation_weight = 1.0;  // 0 disables orientation tracking
  int restarts = 10;          // deterministic random restarts on failure
};

struct IkResult {
  VecX q;
  bool converged = false;
  double pos_error = 0.0;
  double rot_error = 0.0;
};

namespace detail {

inline Eigen::Matrix<double, 6, 1> ik_error(const Pose& target, const Pose& cur, double rw) {
  Eigen::Matrix<double, 6, 1> e;
  e.head<3>() = target.translation - cur.translation;
  e.tail<3>() = rw * quat_log(target.rotation * cur.rotation.conjugate());
  return e;
}

inline IkResult ik_attempt(const KinematicChain& chain, const Pose& target, VecX q,
                           const IkOptions& opt) {
  IkResult res;
  for (int it = 0; it < opt.max_iters; ++it) {
    FkResult fk = forward_kinematics(chain, q);
    Eigen::Matrix<double, 6, 1> e = detail::ik_error(target, fk.tcp, opt.rotation_weight);
    if (e.norm() < opt.tol) break;
    // Large errors make the linearization unreliable; cap the step.
    if (e.norm() > 0.5) e *= 0.5 / e.norm();
    MatX jac = geometric_jacobian(chain, q);
    jac.bottomRows<3>() *= opt.rotation_weight;
    Eigen::Matrix<double, 6, 6> jjt = jac * jac.transpose();
    jjt.diagonal().array() += opt.lambda * opt.lambda;
    VecX dq = jac.transpose() * jjt.ldlt().solve(e);
    q = chain.clamp_limits(q + dq);
  }
  FkResult fk = forward_kinematics(chain, q);
  res.q = q;
  res.pos_error = (target.translation - fk.tcp.translation).norm();
  res.rot_error = rotation_geodesic(target.rotation, fk.tcp.rotation);
  res.converged = res.pos_error <= 1e-4 &&
                  (opt.rotation_weight == 0.0 || res.rot_error <= 1e-3);
  return res;
}

}  // namespace detail

/// Damped least-squares IK. Never throws on non-convergence: returns the
/// best-effort q with converged=false.
inline IkResult inverse_kinematics(const KinematicChain& chain, const Pose& target,
                                   const VecX& q0, const IkOptions& opt = {}) {
  if (q0.size() != chain.dof())
    throw std::invalid_argument("inverse_kinematics: dim(q0) != joint count");
  IkResult best = detail::ik_attempt(chain, target, chain.clamp_limits(q0), opt);
  if (best.converged) return best;
  // Deterministic restarts from jittered seeds.
  std::uint64_t s = 0x9e3779b97f4a7c15ull;
  auto next01 = [&s]() {
    s ^= s << 13; s ^= s >> 7; s ^= s << 17;
    return static_cast<double>(s >> 11) * (1.0 / 9007199254740992.0);
  };
  for (int r = 0; r < opt.restarts && !best.converged; ++r) {
    VecX q = q0;
    for (int i = 0; i < q.size(); ++i) {
      const Joint& j = chain.joints[i];
      q[i] = j.lower + next01() * (j.upper - j.lower);
    }
    IkResult cand = detail::ik_attempt(chain, target, chain.clamp_limits(q), opt);
    double bw = best.pos_error + best.rot_error;
    double cw = cand.pos_error + cand.rot_error;
    if (cand.converged || cw < bw) best = cand;
  }
  return best;
}

}  // namespace msim
