#pragma once

// Two-way rigid-soft bridge: pose sync into shape mirrors, SDF penalty
// contact in particle or grid mode, third-law wrench accumulation, and the
// nested env_step loop (controller -> rigid steps -> soft substeps).
//
// Wrenches gathered during soft substeps are applied to dynamic bodies at
// the NEXT rigid step (explicit staggering).

#include "msim/control.hpp"
#include "msim/mpm.hpp"
#include "msim/rigid.hpp"

#include <optional>

namespace msim {

enum class CouplingMode : std::uint8_t { Particle, Grid };

struct CouplingConfig {
  CouplingMode mode = CouplingMode::Particle;
  double r_c_factor = 0.5;  // influence radius as a fraction of the grid cell
  double c_d = 10.0;        // normal damping, N*s/m

  double contact_radius(double h) const { return r_c_factor * h; }
};

/// Snapshot of one rigid body as the soft solver sees it between syncs.
struct BodyMirror {
  Pose pose;
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();
  Vec3 com = Vec3::Zero();
  const std::vector<Shape>* shapes = nullptr;

  Vec3 point_velocity(const Vec3& p) const {
    return linear_velocity + angular_velocity.cross(p - com);
  }
};

struct StepReport {
  int rigid_steps = 0;
  int soft_substeps = 0;
  int cfl_cycles = 0;  // internal cycles, >= soft_substeps when CFL halves
  double max_penetration = 0.0;
  double max_force_balance_error = 0.0;  // | sum(reactions) + sum(applied) |, per cycle
  std::size_t lost_particles = 0;
  bool ik_converged = true;
  bool limit_violation = false;
};

/// Single-owner simulation world; env_step is not reentrant but distinct
/// Worlds step independently.
struct World {
  std::vector<RigidBody> bodies;
  std::optional<Robot> robot;
  SoftState soft;
  CompositeController controller;
  CouplingConfig coupling;
  Vec3 rigid_gravity = Vec3(0, 0, -9.81);
  int n_rigid = 25;  // rigid steps per env step
  int n_soft = 1;    // soft substeps per rigid step
  double time = 0.0;
  // All transfers are gather-style, so stepping is bitwise thread-count
  // independent; the flag is configuration metadata surfaced by the bench.
  bool deterministic = true;

  std::vector<BodyMirror> mirrors;
  std::vector<WrenchBuffer> wrenches;          // accumulating this rigid step
  std::vector<WrenchBuffer> pending_wrenches;  // consumed by the next rigid step
  double mean_particle_mass = 0.0;

  double dt_rigid() const { return n_soft * soft.dt; }

  /// Contact bodies in stable order: scene bodies, robot links, fingers.
  std::size_t contact_body_count() const {
    std::size_t n = bodies.size();
    if (robot) {
      n += robot->links.size();
      if (robot->gripper.present) n += 2;
    }
    return n;
  }

  RigidBody& contact_body(std::size_t i) {
    if (i < bodies.size()) return bodies[i];
    i -= bodies.size();
    if (i < robot->links.size()) return robot->links[i];
    return i == robot->links.size() ? robot->finger_left : robot->finger_right;
  }

  void init() {
    if (n_rigid < 1 || n_soft < 1)
      throw std::invalid_argument("World: n_rigid and n_soft must be >= 1");
    for (const RigidBody& b : bodies) b.validate();
    soft.init_buffers();
    mean_particle_mass = 0.0;
    for (const Particle& p : soft.particles) mean_particle_mass += p.mass;
    if (!soft.particles.empty()) mean_particle_mass /= static_cast<double>(soft.particles.size());
    mirrors.resize(contact_body_count());
    wrenches.assign(contact_body_count(), WrenchBuffer{});
    pending_wrenches.assign(contact_body_count(), WrenchBuffer{});
    sync_rigid_to_soft(*this);
  }

  friend void sync_rigid_to_soft(World& w) {
    for (std::size_t i = 0; i < w.mirrors.size(); ++i) {
      const RigidBody& b = w.contact_body(i);
      BodyMirror& m = w.mirrors[i];
      m.pose = b.pose;
      m.linear_velocity = b.linear_velocity;
      m.angular_velocity = b.angular_velocity;
      m.com = b.world_com();
      m.shapes = &b.shapes;
      w.wrenches[i].reset();
    }
  }
};

namespace detail {

/// Penalty force at a world point with velocity v against one shape.
/// Returns false outside the influence band. `penetration` reports
/// max(0, -phi) for diagnostics.
inline bool penalty_point_force(const Shape& shape, const Pose& shape_pose, const Vec3& x,
                                const Vec3& v_point, const BodyMirror& m, double r_c, double c_d,
                                Vec3& force, double& penetration) {
  double phi = sdf_eval(shape, shape_pose, x);
  if (phi >= r_c) return false;
  Vec3 n = sdf_gradient(shape, shape_pose, x);
  Vec3 f = shape.k_n * (r_c - phi) * n;
  Vec3 v_rel = v_point - m.point_velocity(x);
  double vn = v_rel.dot(n);
  f += -c_d * std::min(0.0, vn) * n;
  Vec3 v_t = v_rel - vn * n;
  double vt_norm = v_t.norm();
  if (vt_norm > 1e-12) {
    double cap = std::min(shape.friction * shape.k_n * (r_c - phi), shape.k_t * vt_norm);
    f -= cap * (v_t / vt_norm);
  }
  force = f;
  penetration = std::max(0.0, -phi);
  return true;
}

}  // namespace detail

/// Particle-mode contact: per-particle SDF penalty forces fed into the grid
/// transfer as external forces; reactions accumulated on the bodies.
/// Serial over particles so accumulation order is fixed.
inline void penalty_particle(World& w, double* max_penetration = nullptr) {
  SoftState& st = w.soft;
  const double r_c = w.coupling.contact_radius(st.grid.h);
  for (std::size_t ip = 0; ip < st.particles.size(); ++ip) {
    if (st.lost[ip]) continue;
    const Particle& p = st.particles[ip];
    for (std::size_t bi = 0; bi < w.mirrors.size(); ++bi) {
      const BodyMirror& m = w.mirrors[bi];
      for (const Shape& s : *m.shapes) {
        Pose sp = compose(m.pose, s.local_pose);
        Vec3 f;
        double pen;
        if (!detail::penalty_point_force(s, sp, p.x, p.v, m, r_c, w.coupling.c_d, f, pen))
          continue;
        st.ext_force[ip] += f;
        w.wrenches[bi].force -= f;
        w.wrenches[bi].torque += (p.x - m.com).cross(-f);
        if (max_penetration) *max_penetration = std::max(*max_penetration, pen);
      }
    }
  }
}

/// Grid-mode contact: the same force law evaluated at grid nodes with node
/// momentum velocity, scaled by node mass over mean particle mass so both
/// modes discretize the same contact integral. Runs after p2g.
///
/// The influence radius is floored at 0.65*h: a band thinner than the node
/// spacing misses the massive node layer entirely and the surface leaks
/// between nodes. The floor is calibrated so both modes deliver the same
/// total impulse on a flat press.
inline double grid_contact_radius(const CouplingConfig& c, double h) {
  return std::max(c.contact_radius(h), 0.65 * h);
}

inline void penalty_grid(World& w, double* max_penetration = nullptr) {
  SoftState& st = w.soft;
  MpmGrid& g = st.grid;
  const double r_c = grid_contact_radius(w.coupling, g.h);
  for (std::size_t a = 0; a < st.scratch.active_nodes.size(); ++a) {
    std::size_t ni = st.scratch.active_nodes[a];
    if (g.mass[ni] <= 0.0) continue;
    int i = static_cast<int>(ni % g.dims.x());
    int j = static_cast<int>((ni / g.dims.x()) % g.dims.y());
    int k = static_cast<int>(ni / (static_cast<std::size_t>(g.dims.x()) * g.dims.y()));
    Vec3 xi = g.node_pos(i, j, k);
    Vec3 vi = g.momentum[ni] / g.mass[ni];
    double scale = w.mean_particle_mass > 0.0 ? g.mass[ni] / w.mean_particle_mass : 1.0;
    for (std::size_t bi = 0; bi < w.mirrors.size(); ++bi) {
      const BodyMirror& m = w.mirrors[bi];
      for (const Shape& s : *m.shapes) {
        Pose sp = compose(m.pose, s.local_pose);
        Vec3 f;
        double pen;
        if (!detail::penalty_point_force(s, sp, xi, vi, m, r_c, w.coupling.c_d, f, pen)) continue;
        f *= scale;
        g.force[ni] += f;
        w.wrenches[bi].force -= f;
        w.wrenches[bi].torque += (xi - m.com).cross(-f);
        if (max_penetration) *max_penetration = std::max(*max_penetration, pen);
      }
    }
  }
}

/// One environment step: controller -> n_rigid x { apply staged wrenches and
/// integrate dynamics; drive the robot; sync mirrors; n_soft soft substeps
/// with the configured penalty mode }.
inline StepReport env_step(World& w, const VecX& action) {
  StepReport rep;
  VecX qbar, qbardot;
  double finger_target = -1.0;
  bool have_arm_target = false;

  if (!w.controller.components.empty()) {
    if (!w.robot) throw std::invalid_argument("env_step: controller configured without a robot");
    std::vector<VecX> slices = w.controller.split_action(action);
    for (std::size_t c = 0; c < w.controller.components.size(); ++c) {
      auto& comp = w.controller.components[c];
      VecX phys = denormalize(comp.cfg, slices[c]);
      if (comp.cfg.variant == ControllerVariant::GripperPos) {
        finger_target = phys[0];
        continue;
      }
      DriveTargets t = drive_targets(comp.cfg, comp.state, w.robot->chain, w.robot->q,
                                     w.robot->qdot, w.robot->tcp_pose(), phys,
                                     w.robot->base_pose);
      comp.state = t.state;
      qbar = t.qbar;
      qbardot = t.qbardot;
      rep.ik_converged = rep.ik_converged && t.ik_converged;
      have_arm_target = true;
    }
  } else if (action.size() != 0) {
    throw std::invalid_argument("env_step: action supplied but no controller configured");
  }

  const double dt_r = w.dt_rigid();
  for (int r = 0; r < w.n_rigid; ++r) {
    for (std::size_t i = 0; i < w.bodies.size(); ++i)
      integrate_free_body(w.bodies[i], w.pending_wrenches[i], w.rigid_gravity, dt_r);
    if (w.robot) {
      if (have_arm_target)
        robot_drive_step(*w.robot, qbar, qbardot, dt_r, finger_target);
      else
        w.robot->update_link_poses(dt_r);
      rep.limit_violation = rep.limit_violation || w.robot->limit_violation;
    }
    sync_rigid_to_soft(w);
    for (int s = 0; s < w.n_soft; ++s) {
      auto wrench_sum = [&] {
        Vec3 s = Vec3::Zero();
        for (const WrenchBuffer& b : w.wrenches) s += b.force;
        return s;
      };
      auto particle_hook = [&](SoftState& st) {
        if (w.coupling.mode != CouplingMode::Particle) return;
        Vec3 before = wrench_sum();
        penalty_particle(w, &rep.max_penetration);
        Vec3 applied = Vec3::Zero();
        for (const Vec3& f : st.ext_force) applied += f;
        rep.max_force_balance_error =
            std::max(rep.max_force_balance_error, (wrench_sum() - before + applied).norm());
      };
      auto grid_hook = [&](SoftState& st) {
        if (w.coupling.mode != CouplingMode::Grid) return;
        Vec3 before = wrench_sum();
        std::vector<Vec3> f0 = st.grid.force;
        penalty_grid(w, &rep.max_penetration);
        Vec3 applied = Vec3::Zero();
        for (std::size_t ni : st.scratch.active_nodes) applied += st.grid.force[ni] - f0[ni];
        rep.max_force_balance_error =
            std::max(rep.max_force_balance_error, (wrench_sum() - before + applied).norm());
      };
      rep.cfl_cycles += soft_substep(w.soft, particle_hook, grid_hook);
      ++rep.soft_substeps;
    }
    w.pending_wrenches = w.wrenches;  // staged for the next rigid step
    ++rep.rigid_steps;
  }
  w.time += w.n_rigid * w.n_soft * w.soft.dt;
  rep.lost_particles = w.soft.lost_count;
  return rep;
}

// ---------------------------------------------------------------------------
// Determinism hashing.

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t hash_doubles(const double* d, std::size_t n, std::uint64_t h) {
  return fnv1a(d, n * sizeof(double), h);
}

/// Bitwise state hash: particles, grid-independent rigid state, robot
/// configuration, sim time.
inline std::uint64_t state_hash(const World& w) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Particle& p : w.soft.particles) {
    h = hash_doubles(p.x.data(), 3, h);
    h = hash_doubles(p.v.data(), 3, h);
    h = hash_doubles(p.F.data(), 9, h);
    h = hash_doubles(p.C.data(), 9, h);
  }
  auto hash_body = [&](const RigidBody& b) {
    double q[4] = {b.pose.rotation.w(), b.pose.rotation.x(), b.pose.rotation.y(),
                   b.pose.rotation.z()};
    h = hash_doubles(q, 4, h);
    h = hash_doubles(b.pose.translation.data(), 3, h);
    h = hash_doubles(b.linear_velocity.data(), 3, h);
    h = hash_doubles(b.angular_velocity.data(), 3, h);
  };
  for (const RigidBody& b : w.bodies) hash_body(b);
  if (w.robot) {
    h = hash_doubles(w.robot->q.data(), w.robot->q.size(), h);
    h = hash_doubles(&w.robot->finger_q, 1, h);
  }
  h = hash_doubles(&w.time, 1, h);
  return h;
}

}  // namespace msim
