#pragma once

// Demonstration trajectories: binary record/replay, closed-loop conversion
// between action spaces, and replay verification against a task metric.
//
// Conversion recovers the source's desired joint targets, maps them through
// forward kinematics to a desired TCP pose, and re-expresses that pose in
// the target action space using the LIVE target-world state (closed loop).
// An open-loop variant is kept for comparison; it re-expresses the pose
// against an undisturbed shadow of the source motion and accumulates any
// execution error.

#include "msim/coupling.hpp"

#include <fstream>
#include <functional>

namespace msim {

/// A recorded demonstration: actions for one composite controller plus the
/// scene it was recorded in (worlds are rebuilt deterministically from the
/// scene name by a factory).
struct Trajectory {
  std::string controller_id;  // composite id, e.g. "joint_pos+gripper_pos"
  std::string scene;          // initial world snapshot reference
  double dt = 0.05;           // control period, s
  std::vector<VecX> actions;
  std::vector<VecX> recorded_q;    // optional per-step joint state
  std::vector<Pose> recorded_tcp;  // optional per-step TCP pose

  bool has_states() const { return !recorded_q.empty(); }

  void validate() const {
    if (!actions.empty()) {
      Eigen::Index d = actions.front().size();
      for (const VecX& a : actions)
        if (a.size() != d) throw std::invalid_argument("Trajectory: ragged action dims");
    }
    if (has_states() &&
        (recorded_q.size() != actions.size() || recorded_tcp.size() != actions.size()))
      throw std::invalid_argument("Trajectory: recorded states must align 1:1 with actions");
    if (dt <= 0.0) throw std::invalid_argument("Trajectory: dt must be positive");
  }
};

// ---------------------------------------------------------------------------
// Binary trajectory I/O. Magic "MSTRAJ1", little-endian; header {version,
// controller id, scene id, action dim, step count, dt, flags}, then actions
// as f32 rows, then (flags bit 0) per-step states as f64 {q, quat wxyz,
// translation}.

namespace detail {

inline void io_fail(const std::string& what, const std::string& path, std::streamoff at) {
  throw std::runtime_error(what + " in " + path + " at byte " + std::to_string(at));
}

inline void read_exact(std::istream& f, void* dst, std::size_t n, const std::string& path) {
  std::streamoff at = f.tellg();
  f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (!f) io_fail("trajectory file truncated", path, at);
}

inline std::string read_string(std::istream& f, const std::string& path) {
  std::uint32_t len = 0;
  read_exact(f, &len, 4, path);
  if (len > (1u << 20)) io_fail("implausible string length", path, f.tellg());
  std::string s(len, '\0');
  if (len) read_exact(f, s.data(), len, path);
  return s;
}

inline void write_string(std::ostream& f, const std::string& s) {
  std::uint32_t len = static_cast<std::uint32_t>(s.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace detail

inline void save_trajectory(const Trajectory& t, const std::string& path) {
  t.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_trajectory: cannot open " + path);
  f.write("MSTRAJ1", 7);
  std::uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), 4);
  detail::write_string(f, t.controller_id);
  detail::write_string(f, t.scene);
  std::uint32_t dim = t.actions.empty() ? 0 : static_cast<std::uint32_t>(t.actions[0].size());
  std::uint32_t count = static_cast<std::uint32_t>(t.actions.size());
  std::uint32_t flags = t.has_states() ? 1u : 0u;
  std::uint32_t qdim =
      t.has_states() ? static_cast<std::uint32_t>(t.recorded_q[0].size()) : 0u;
  f.write(reinterpret_cast<const char*>(&dim), 4);
  f.write(reinterpret_cast<const char*>(&count), 4);
  f.write(reinterpret_cast<const char*>(&t.dt), 8);
  f.write(reinterpret_cast<const char*>(&flags), 4);
  f.write(reinterpret_cast<const char*>(&qdim), 4);
  for (const VecX& a : t.actions)
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      float v = static_cast<float>(a[i]);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  if (t.has_states())
    for (std::size_t s = 0; s < t.actions.size(); ++s) {
      f.write(reinterpret_cast<const char*>(t.recorded_q[s].data()),
              static_cast<std::streamsize>(8 * qdim));
      const Pose& p = t.recorded_tcp[s];
      double row[7] = {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z(),
                       p.translation.x(), p.translation.y(), p.translation.z()};
      f.write(reinterpret_cast<const char*>(row), 56);
    }
  if (!f) throw std::runtime_error("save_trajectory: write failed for " + path);
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_trajectory: cannot open " + path);
  char magic[7];
  detail::read_exact(f, magic, 7, path);
  if (std::string(magic, 7) != "MSTRAJ1")
    throw std::runtime_error("load_trajectory: bad magic in " + path);
  std::uint32_t version = 0;
  detail::read_exact(f, &version, 4, path);
  if (version != 1)
    throw std::runtime_error("load_trajectory: unsupported version " + std::to_string(version));
  Trajectory t;
  t.controller_id = detail::read_string(f, path);
  t.scene = detail::read_string(f, path);
  std::uint32_t dim = 0, count = 0, flags = 0, qdim = 0;
  detail::read_exact(f, &dim, 4, path);
  detail::read_exact(f, &count, 4, path);
  detail::read_exact(f, &t.dt, 8, path);
  detail::read_exact(f, &flags, 4, path);
  detail::read_exact(f, &qdim, 4, path);
  t.actions.resize(count, VecX(dim));
  for (VecX& a : t.actions)
    for (std::uint32_t i = 0; i < dim; ++i) {
      float v = 0;
      detail::read_exact(f, &v, 4, path);
      a[i] = v;
    }
  if (flags & 1u) {
    t.recorded_q.resize(count, VecX(qdim));
    t.recorded_tcp.resize(count);
    for (std::uint32_t s = 0; s < count; ++s) {
      detail::read_exact(f, t.recorded_q[s].data(), 8 * qdim, path);
      double row[7];
      detail::read_exact(f, row, 56, path);
      // Saved poses are already canonical; assign directly instead of going
      // through the normalizing constructor so the round trip is bit exact.
      Pose p;
      p.rotation = Quat(row[0], row[1], row[2], row[3]);
      p.translation = Vec3(row[4], row[5], row[6]);
      t.recorded_tcp[s] = p;
    }
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Action conversion.

struct ConversionReport {
  std::vector<double> pos_error;  // per-step TCP error vs source desired, m
  std::vector<double> rot_error;  // rad
  bool success = false;           // final TCP within 5 mm, no divergence
  bool saturated = false;         // some converted action clamped
  int failure_step = -1;          // step where replay diverged, -1 if none
};

/// Recover the source's desired joint targets from its action. Only the
/// joint-position family carries enough information in the action stream.
inline VecX recover_source_targets(const ControllerConfig& src_cfg, ControllerState& src_state,
                                   const VecX& src_action) {
  VecX phys = denormalize(src_cfg, src_action);
  switch (src_cfg.variant) {
    case ControllerVariant::JointPos:
      src_state.prev_qbar = phys;
      return phys;
    case ControllerVariant::JointTargetDeltaPos:
      src_state.prev_qbar += phys;
      return src_state.prev_qbar;
    default:
      throw std::invalid_argument(
          "convert: source must be a joint-position-family controller with recoverable targets");
  }
}

namespace detail {

/// Physical (pre-normalization) target action whose drive targets reproduce
/// the desired world TCP pose `tbar` (or joint targets `qbar_src`), given
/// the reference state the target controller resolves deltas against.
inline VecX target_physical_action(const ControllerConfig& tgt_cfg,
                                   const ControllerState& tgt_state, const VecX& qbar_src,
                                   const Pose& tbar, const VecX& q_ref, const Pose& tcp_ref) {
  switch (tgt_cfg.variant) {
    case ControllerVariant::JointPos:
      return qbar_src;
    case ControllerVariant::JointDeltaPos:
      return qbar_src - q_ref;
    case ControllerVariant::JointTargetDeltaPos:
      return qbar_src - tgt_state.prev_qbar;
    case ControllerVariant::EeDeltaPos:
      return tbar.translation - tcp_ref.translation;
    case ControllerVariant::EeTargetDeltaPos:
      return tbar.translation - tgt_state.prev_target_tcp.translation;
    case ControllerVariant::EeDeltaPose:
    case ControllerVariant::EeTargetDeltaPose: {
      const Pose& ref = tgt_cfg.variant == ControllerVariant::EeDeltaPose
                            ? tcp_ref
                            : tgt_state.prev_target_tcp;
      Twist6 d = twist_from_pose(compose(tbar, inverse(ref)));
      VecX a(6);
      a.head<3>() = d.translation;
      a.tail<3>() = d.rotation;
      return a;
    }
    default:
      throw std::invalid_argument("convert: unsupported target controller variant");
  }
}

}  // namespace detail

/// Closed-loop single-action conversion: the emitted target action, fed to
/// the target controller in the CURRENT target-world state, drives toward
/// FK(ā_src). Saturating deltas clamp and flag.
inline VecX convert_action(const VecX& src_action, const ControllerConfig& src_cfg,
                           ControllerState& src_state, const ControllerConfig& tgt_cfg,
                           const ControllerState& tgt_state, const World& tgt_world,
                           bool* saturated = nullptr) {
  if (!tgt_world.robot)
    throw std::invalid_argument("convert_action: target world has no robot");
  const Robot& r = *tgt_world.robot;
  VecX qbar_src = recover_source_targets(src_cfg, src_state, src_action);
  Pose tbar = compose(r.base_pose, forward_kinematics(r.chain, qbar_src).tcp);
  VecX phys =
      detail::target_physical_action(tgt_cfg, tgt_state, qbar_src, tbar, r.q, r.tcp_pose());
  return normalize_action(tgt_cfg, phys, saturated);
}

struct ConvertOptions {
  bool open_loop = false;  // re-express against the undisturbed source shadow
  double success_tcp_error = 5e-3;  // m, final-step criterion
};

/// Convert a whole trajectory into the target arm variant, replaying the
/// converted actions in a fresh world from `factory` and recording the TCP
/// error against the source's desired poses. Gripper actions pass through
/// unchanged. The factory must rebuild the recording scene (same composite
/// controller layout the trajectory was recorded with).
inline std::pair<Trajectory, ConversionReport> convert_trajectory(
    const Trajectory& src, ControllerVariant tgt_variant,
    const std::function<World()>& factory, const ConvertOptions& opt = {}) {
  src.validate();
  World w = factory();
  if (!w.robot || w.controller.components.empty())
    throw std::invalid_argument("convert_trajectory: scene lacks a controlled robot");
  if (w.controller.id() != src.controller_id)
    throw std::invalid_argument("convert_trajectory: trajectory controller '" +
                                src.controller_id + "' does not match scene '" +
                                w.controller.id() + "'");

  ControllerConfig src_cfg = w.controller.components[0].cfg;
  ControllerState src_state = w.controller.components[0].state;
  auto& arm = w.controller.components[0];
  arm.cfg = ControllerConfig::make(tgt_variant, w.robot->chain);
  arm.state = ControllerState::reset(arm.cfg, w.robot->q, w.robot->tcp_pose());

  // Undisturbed shadow of the source motion, used by the open-loop variant
  // and to define per-step desired poses.
  Robot shadow = *w.robot;
  shadow.drive_bias.setZero();

  Trajectory out;
  out.controller_id = w.controller.id();
  out.scene = src.scene;
  out.dt = src.dt;
  ConversionReport rep;
  const double dt_r = w.dt_rigid();

  for (std::size_t step = 0; step < src.actions.size(); ++step) {
    VecX a = src.actions[step];
    if (a.size() != src_cfg.dim() + w.controller.total_dim() - arm.cfg.dim())
      throw std::invalid_argument("convert_trajectory: action dim mismatch at step " +
                                  std::to_string(step));
    VecX qbar_src = recover_source_targets(src_cfg, src_state, a.head(src_cfg.dim()));
    Pose tbar = compose(w.robot->base_pose, forward_kinematics(w.robot->chain, qbar_src).tcp);

    const Robot& ref = opt.open_loop ? shadow : *w.robot;
    bool sat = false;
    VecX arm_action = normalize_action(
        arm.cfg,
        detail::target_physical_action(arm.cfg, arm.state, qbar_src, tbar, ref.q,
                                       ref.tcp_pose()),
        &sat);
    rep.saturated = rep.saturated || sat;

    VecX full(w.controller.total_dim());
    full.head(arm.cfg.dim()) = arm_action;
    full.tail(full.size() - arm.cfg.dim()) = a.tail(a.size() - src_cfg.dim());
    out.actions.push_back(full);

    env_step(w, full);
    for (int i = 0; i < w.n_rigid; ++i)
      robot_drive_step(shadow, qbar_src, VecX::Zero(shadow.chain.dof()), dt_r);

    Pose tcp = w.robot->tcp_pose();
    out.recorded_q.push_back(w.robot->q);
    out.recorded_tcp.push_back(tcp);
    rep.pos_error.push_back((tcp.translation - tbar.translation).norm());
    rep.rot_error.push_back(rotation_geodesic(tcp.rotation, tbar.rotation));
    if (!w.robot->q.allFinite() || !tcp.translation.allFinite()) {
      rep.failure_step = static_cast<int>(step);
      break;
    }
  }
  rep.success = rep.failure_step < 0 &&
                (rep.pos_error.empty() || rep.pos_error.back() < opt.success_tcp_error);
  return {std::move(out), rep};
}

struct ReplayResult {
  bool success = false;
  double metric_value = 0.0;
  std::size_t steps_run = 0;
  std::uint64_t final_hash = 0;
};

/// Deterministic replay of a trajectory in a fresh world; the metric is
/// evaluated on the final state (at the truncation point for short
/// trajectories) and decides success.
inline ReplayResult replay_verify(const Trajectory& traj, const std::function<World()>& factory,
                                  const std::function<std::pair<double, bool>(const World&)>& metric) {
  traj.validate();
  World w = factory();
  ReplayResult r;
  for (const VecX& a : traj.actions) {
    env_step(w, a);
    ++r.steps_run;
  }
  auto [value, ok] = metric(w);
  r.metric_value = value;
  r.success = ok;
  r.final_hash = state_hash(w);
  return r;
}

}  // namespace msim
