#pragma once

// Controller suite: normalized action handling, per-variant drive-target
// computation, the PD law, and composite controllers with action slices.

#include "msim/geometry.hpp"
#include "msim/rigid.hpp"

namespace msim {

enum class ControllerVariant : std::uint8_t {
  JointPos,
  JointDeltaPos,
  JointTargetDeltaPos,
  EeDeltaPos,
  EeDeltaPose,
  EeTargetDeltaPos,
  EeTargetDeltaPose,
  JointVel,
  JointPosVel,
  JointDeltaPosVel,
  GripperPos,
};

inline const char* variant_name(ControllerVariant v) {
  switch (v) {
    case ControllerVariant::JointPos: return "joint_pos";
    case ControllerVariant::JointDeltaPos: return "joint_delta_pos";
    case ControllerVariant::JointTargetDeltaPos: return "joint_target_delta_pos";
    case ControllerVariant::EeDeltaPos: return "ee_delta_pos";
    case ControllerVariant::EeDeltaPose: return "ee_delta_pose";
    case ControllerVariant::EeTargetDeltaPos: return "ee_target_delta_pos";
    case ControllerVariant::EeTargetDeltaPose: return "ee_target_delta_pose";
    case ControllerVariant::JointVel: return "joint_vel";
    case ControllerVariant::JointPosVel: return "joint_pos_vel";
    case ControllerVariant::JointDeltaPosVel: return "joint_delta_pos_vel";
    case ControllerVariant::GripperPos: return "gripper_pos";
  }
  return "unknown";
}

inline ControllerVariant variant_from_name(const std::string& s) {
  for (int v = 0; v <= static_cast<int>(ControllerVariant::GripperPos); ++v)
    if (s == variant_name(static_cast<ControllerVariant>(v)))
      return static_cast<ControllerVariant>(v);
  throw std::invalid_argument("unknown controller variant: " + s);
}

/// Action dimension for a variant on an arm with `dof` joints.
inline int variant_dim(ControllerVariant v, int dof) {
  switch (v) {
    case ControllerVariant::EeDeltaPos:
    case ControllerVariant::EeTargetDeltaPos: return 3;
    case ControllerVariant::EeDeltaPose:
    case ControllerVariant::EeTargetDeltaPose: return 6;
    case ControllerVariant::JointPosVel:
    case ControllerVariant::JointDeltaPosVel: return 2 * dof;
    case ControllerVariant::GripperPos: return 1;
    default: return dof;
  }
}

inline bool is_normalized(ControllerVariant v) {
  // joint_pos is unnormalized (motion-planning interface); everything else
  // takes [-1, 1] actions.
  return v != ControllerVariant::JointPos;
}

struct ControllerConfig {
  ControllerVariant variant = ControllerVariant::JointPos;
  int arm_dof = 7;
  VecX lower;  // physical bounds per action dim
  VecX upper;
  VecX kp;     // per joint, diagnostics only on the kinematic robot
  VecX kd;

  int dim() const { return variant_dim(variant, arm_dof); }

  /// Default bounds: +-0.1 per delta dim; joint limits for joint_pos;
  /// gripper travel for the gripper.
  static ControllerConfig make(ControllerVariant v, const KinematicChain& chain,
                               const GripperConfig& grip = {}) {
    ControllerConfig c;
    c.variant = v;
    c.arm_dof = chain.dof();
    int d = c.dim();
    c.lower = VecX::Constant(d, -0.1);
    c.upper = VecX::Constant(d, 0.1);
    if (v == ControllerVariant::JointPos || v == ControllerVariant::JointPosVel) {
      for (int i = 0; i < chain.dof(); ++i) {
        c.lower[i] = chain.joints[i].lower;
        c.upper[i] = chain.joints[i].upper;
      }
    }
    if (v == ControllerVariant::JointVel || v == ControllerVariant::JointPosVel ||
        v == ControllerVariant::JointDeltaPosVel) {
      for (int i = d - chain.dof(); i < d; ++i) {
        c.lower[i] = -1.0;  // velocity bounds, rad/s
        c.upper[i] = 1.0;
      }
    }
    if (v == ControllerVariant::GripperPos) {
      c.lower = VecX::Constant(1, grip.lower);
      c.upper = VecX::Constant(1, grip.upper);
    }
    c.kp = VecX::Constant(chain.dof(), v == ControllerVariant::JointVel ? 0.0 : 1000.0);
    c.kd = VecX::Constant(chain.dof(), 100.0);
    return c;
  }

  void validate() const {
    if (lower.size() != dim() || upper.size() != dim())
      throw std::invalid_argument("ControllerConfig: bounds dimension mismatch");
    if (variant == ControllerVariant::JointVel && kp.size() > 0 && kp.cwiseAbs().maxCoeff() != 0.0)
      throw std::invalid_argument("ControllerConfig: joint_vel requires K_p = 0");
  }
};

/// Per-controller memory for the "target" variants.
struct ControllerState {
  VecX prev_qbar;        // previous drive targets
  Pose prev_target_tcp;  // previous desired EE pose

  static ControllerState reset(const ControllerConfig& cfg, const VecX& q, const Pose& tcp) {
    ControllerState s;
    s.prev_qbar = q;
    s.prev_target_tcp = tcp;
    (void)cfg;
    return s;
  }
};

/// Affine map from normalized [-1,1] actions to physical bounds.
/// joint_pos passes through unnormalized. Out-of-range input clamps and
/// reports via `clamped`.
inline VecX denormalize(const ControllerConfig& cfg, const VecX& a_norm, bool* clamped = nullptr) {
  if (a_norm.size() != cfg.dim())
    throw std::invalid_argument("denormalize: action dimension mismatch");
  VecX out(cfg.dim());
  for (int i = 0; i < cfg.dim(); ++i) {
    if (!is_normalized(cfg.variant)) {
      out[i] = std::clamp(a_norm[i], cfg.lower[i], cfg.upper[i]);
      if (clamped && out[i] != a_norm[i]) *clamped = true;
      continue;
    }
    double a = a_norm[i];
    if (a < -1.0 || a > 1.0) {
      a = std::clamp(a, -1.0, 1.0);
      if (clamped) *clamped = true;
    }
    out[i] = cfg.lower[i] + 0.5 * (a + 1.0) * (cfg.upper[i] - cfg.lower[i]);
  }
  return out;
}

/// Inverse of denormalize (physical -> [-1,1]); saturating values outside the
/// bounds clamp and flag.
inline VecX normalize_action(const ControllerConfig& cfg, const VecX& a_phys,
                             bool* saturated = nullptr) {
  VecX out(cfg.dim());
  for (int i = 0; i < cfg.dim(); ++i) {
    if (!is_normalized(cfg.variant)) {
      out[i] = a_phys[i];
      continue;
    }
    double span = cfg.upper[i] - cfg.lower[i];
    double a = span == 0.0 ? 0.0 : 2.0 * (a_phys[i] - cfg.lower[i]) / span - 1.0;
    if (a < -1.0 || a > 1.0) {
      a = std::clamp(a, -1.0, 1.0);
      if (saturated) *saturated = true;
    }
    out[i] = a;
  }
  return out;
}

struct DriveTargets {
  VecX qbar;
  VecX qbardot;
  ControllerState state;
  bool ik_converged = true;
};

/// Per-variant drive target computation. `action` is already physical
/// (denormalized). The EE variants resolve targets through IK seeded at the
/// current configuration.
inline DriveTargets drive_targets(const ControllerConfig& cfg, const ControllerState& state,
                                  const KinematicChain& chain, const VecX& q, const VecX& qdot,
                                  const Pose& tcp, const VecX& action,
                                  const Pose& base_pose = Pose::identity()) {
  if (action.size() != cfg.dim())
    throw std::invalid_argument("drive_targets: action dimension mismatch");
  (void)qdot;
  DriveTargets out;
  out.state = state;
  int dof = chain.dof();
  out.qbar = q;
  out.qbardot = VecX::Zero(dof);

  auto solve_ik = [&](const Pose& target_world, double rot_weight) {
    IkOptions opt;
    opt.rotation_weight = rot_weight;
    Pose target_base = compose(inverse(base_pose), target_world);
    IkResult r = inverse_kinematics(chain, target_base, q, opt);
    out.qbar = r.q;
    out.ik_converged = r.converged;
  };

  switch (cfg.variant) {
    case ControllerVariant::JointPos:
      out.qbar = action;
      break;
    case ControllerVariant::JointDeltaPos:
      out.qbar = q + action;
      break;
    case ControllerVariant::JointTargetDeltaPos:
      out.qbar = state.prev_qbar + action;
      break;
    case ControllerVariant::JointVel:
      out.qbar = q;
      out.qbardot = action;
      break;
    case ControllerVariant::JointPosVel:
      out.qbar = action.head(dof);
      out.qbardot = action.tail(dof);
      break;
    case ControllerVariant::JointDeltaPosVel:
      out.qbar = q + action.head(dof);
      out.qbardot = action.tail(dof);
      break;
    case ControllerVariant::EeDeltaPos: {
      Pose target(tcp.rotation, tcp.translation + action);
      solve_ik(target, 0.0);
      break;
    }
    case ControllerVariant::EeTargetDeltaPos: {
      Pose target(state.prev_target_tcp.rotation, state.prev_target_tcp.translation + action);
      solve_ik(target, 0.0);
      out.state.prev_target_tcp = target;
      break;
    }
    case ControllerVariant::EeDeltaPose: {
      Twist6 t{action.head<3>(), action.tail<3>()};
      Pose target = compose(pose_from_twist(t), tcp);
      solve_ik(target, 1.0);
      break;
    }
    case ControllerVariant::EeTargetDeltaPose: {
      Twist6 t{action.head<3>(), action.tail<3>()};
      Pose target = compose(pose_from_twist(t), state.prev_target_tcp);
      solve_ik(target, 1.0);
      out.state.prev_target_tcp = target;
      break;
    }
    case ControllerVariant::GripperPos:
      out.qbar = action;  // 1-dim finger target, mirrored by the caller
      break;
  }
  out.state.prev_qbar = out.qbar;
  return out;
}

/// The PD law. On the kinematic robot this is diagnostic only; targets are
/// consumed directly by the drive.
inline VecX pd_torque(const VecX& qbar, const VecX& qbardot, const VecX& q, const VecX& qdot,
                      const VecX& kp, const VecX& kd) {
  if (qbar.size() != q.size() || qbardot.size() != qdot.size() || kp.size() != q.size() ||
      kd.size() != q.size())
    throw std::invalid_argument("pd_torque: dimension mismatch");
  return kp.cwiseProduct(qbar - q) + kd.cwiseProduct(qbardot - qdot);
}

/// Ordered controller components with contiguous disjoint action slices.
struct CompositeController {
  struct Component {
    ControllerConfig cfg;
    ControllerState state;
  };
  std::vector<Component> components;

  int total_dim() const {
    int d = 0;
    for (const auto& c : components) d += c.cfg.dim();
    return d;
  }

  std::vector<VecX> split_action(const VecX& a) const {
    if (a.size() != total_dim())
      throw std::invalid_argument("split_action: expected dim " + std::to_string(total_dim()) +
                                  ", got " + std::to_string(a.size()));
    std::vector<VecX> out;
    int off = 0;
    for (const auto& c : components) {
      out.push_back(a.segment(off, c.cfg.dim()));
      off += c.cfg.dim();
    }
    return out;
  }

  std::string id() const {
    std::string s;
    for (const auto& c : components) {
      if (!s.empty()) s += "+";
      s += variant_name(c.cfg.variant);
    }
    return s;
  }
};

}  // namespace msim
