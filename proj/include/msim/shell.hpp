#pragma once

// Scene configuration loading (JSON), particle export, and the throughput
// benchmark. Unknown keys are rejected with their field path; parameters
// outside the validated simulation envelope produce warnings, not errors.

#include "msim/demo.hpp"
#include "msim/parallel.hpp"
#include "msim/scenario.hpp"

#include <chrono>
#include <thread>

#include <json.hpp>

namespace msim {

using nlohmann::json;

namespace detail {

[[noreturn]] inline void config_error(const std::string& path, const std::string& what) {
  throw std::runtime_error("scene config: " + path + ": " + what);
}

inline void check_keys(const json& o, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  if (!o.is_object()) config_error(path, "expected an object");
  for (const auto& [key, _] : o.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) config_error(path + "." + key, "unknown key");
  }
}

inline const json& require(const json& o, const std::string& path, const char* key) {
  auto it = o.find(key);
  if (it == o.end()) config_error(path + "." + key, "missing required field");
  return *it;
}

inline Vec3 vec3_of(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) config_error(path, "expected an array of 3 numbers");
  return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

inline Pose pose_of(const json& o, const std::string& path) {
  check_keys(o, path, {"translation", "rotation_wxyz"});
  Vec3 t = o.contains("translation") ? vec3_of(o["translation"], path + ".translation")
                                     : Vec3::Zero();
  Quat q = Quat::Identity();
  if (o.contains("rotation_wxyz")) {
    const json& r = o["rotation_wxyz"];
    if (!r.is_array() || r.size() != 4)
      config_error(path + ".rotation_wxyz", "expected an array of 4 numbers");
    q = Quat(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>());
  }
  return Pose(q, t);
}

inline Material material_of(const json& m, const std::string& path) {
  if (m.is_string()) {
    if (m.get<std::string>() == "soft_clay") return soft_clay();
    config_error(path, "unknown material preset '" + m.get<std::string>() + "'");
  }
  check_keys(m, path, {"density", "youngs_modulus", "poisson_ratio", "yield_stress"});
  Material mat;
  mat.density = require(m, path, "density").get<double>();
  mat.youngs = require(m, path, "youngs_modulus").get<double>();
  mat.poisson = require(m, path, "poisson_ratio").get<double>();
  mat.yield_stress = require(m, path, "yield_stress").get<double>();
  return mat;
}

inline Shape shape_of(const json& s, const std::string& path, double default_k_n,
                      double default_k_t) {
  check_keys(s, path,
             {"type", "half_extents", "radius", "half_length", "normal", "offset", "pose",
              "friction", "k_n", "k_t"});
  Shape sh;
  std::string type = require(s, path, "type").get<std::string>();
  if (type == "box") {
    sh.geom = BoxGeom{vec3_of(require(s, path, "half_extents"), path + ".half_extents")};
  } else if (type == "sphere") {
    sh.geom = SphereGeom{require(s, path, "radius").get<double>()};
  } else if (type == "capsule") {
    sh.geom = CapsuleGeom{require(s, path, "half_length").get<double>(),
                          require(s, path, "radius").get<double>()};
  } else if (type == "plane") {
    PlaneGeom p;
    if (s.contains("normal")) p.normal = vec3_of(s["normal"], path + ".normal").normalized();
    if (s.contains("offset")) p.offset = s["offset"].get<double>();
    sh.geom = p;
  } else {
    config_error(path + ".type", "unknown shape type '" + type + "'");
  }
  if (s.contains("pose")) sh.local_pose = pose_of(s["pose"], path + ".pose");
  sh.friction = s.value("friction", sh.friction);
  sh.k_n = s.value("k_n", default_k_n);
  sh.k_t = s.value("k_t", default_k_t);
  return sh;
}

inline KinematicChain chain_of(const std::string& name, const std::string& path) {
  if (name == "arm") return default_arm_chain();
  if (name == "lift") return lift_chain();
  if (name == "slide_x") return slide_chain(Vec3(1, 0, 0));
  if (name == "slide_y") return slide_chain(Vec3(0, 1, 0));
  if (name == "slide_z") return slide_chain(Vec3(0, 0, 1));
  config_error(path, "unknown chain '" + name + "'");
}

inline BoundaryKind boundary_of(const std::string& s, const std::string& path) {
  if (s == "sticky") return BoundaryKind::Sticky;
  if (s == "slip") return BoundaryKind::Slip;
  config_error(path, "unknown boundary kind '" + s + "'");
}

/// Validated simulation envelope; values outside produce warnings only.
inline void range_warnings(const World& w, double particle_volume,
                           std::vector<std::string>* warnings) {
  if (!warnings) return;
  auto warn = [&](const std::string& s) { warnings->push_back(s); };
  if (w.soft.grid.h < 0.005 || w.soft.grid.h > 0.015)
    warn("grid.length outside validated range [0.005, 0.015]");
  if (particle_volume > 0.0 && (particle_volume < 6.2e-8 || particle_volume > 1.2e-7))
    warn("particle_volume outside validated range [6.2e-8, 1.2e-7]");
  for (const Material& m : w.soft.materials) {
    if (m.density < 300.0 || m.density > 3000.0)
      warn("material density outside validated range [300, 3000]");
    if (m.youngs < 1e4 || m.youngs > 3e5)
      warn("material youngs_modulus outside validated range [1e4, 3e5]");
    if (m.poisson != 0.3) warn("material poisson_ratio outside validated value 0.3");
    if (m.yield_stress < 2e3 || m.yield_stress > 1e4)
      warn("material yield_stress outside validated range [2e3, 1e4]");
  }
}

}  // namespace detail

/// Builds a fully initialized World from a parsed scene config. Unknown keys
/// are rejected with their field path; Table-style parameter ranges only
/// warn. The stepping block must satisfy
/// 1/control_hz == n_rigid * n_soft * dt_soft.
inline World scene_from_json(const json& root, std::vector<std::string>* warnings = nullptr) {
  detail::check_keys(root, "scene",
                     {"gravity", "grid", "materials", "sources", "bodies", "robot", "coupling",
                      "stepping", "seed", "deterministic"});
  World w;
  if (root.contains("gravity")) {
    w.rigid_gravity = detail::vec3_of(root["gravity"], "scene.gravity");
    w.soft.gravity = w.rigid_gravity;
  }

  const json& grid = detail::require(root, "scene", "grid");
  detail::check_keys(grid, "scene.grid", {"length", "dims", "origin", "boundary"});
  w.soft.grid.h = detail::require(grid, "scene.grid", "length").get<double>();
  if (grid.contains("dims")) {
    const json& d = grid["dims"];
    if (!d.is_array() || d.size() != 3)
      detail::config_error("scene.grid.dims", "expected an array of 3 integers");
    w.soft.grid.dims = Eigen::Vector3i(d[0].get<int>(), d[1].get<int>(), d[2].get<int>());
  }
  if (grid.contains("origin"))
    w.soft.grid.origin = detail::vec3_of(grid["origin"], "scene.grid.origin");
  if (grid.contains("boundary")) {
    const json& b = grid["boundary"];
    if (!b.is_array() || b.size() != 6)
      detail::config_error("scene.grid.boundary", "expected 6 per-face kinds");
    for (int i = 0; i < 6; ++i)
      w.soft.grid.boundary[i] = detail::boundary_of(
          b[i].get<std::string>(), "scene.grid.boundary[" + std::to_string(i) + "]");
  }

  w.soft.materials.clear();
  for (std::size_t i = 0; i < detail::require(root, "scene", "materials").size(); ++i)
    w.soft.materials.push_back(detail::material_of(
        root["materials"][i], "scene.materials[" + std::to_string(i) + "]"));

  double default_k_n = 1e3, default_k_t = 10.0;
  if (root.contains("coupling")) {
    const json& c = root["coupling"];
    detail::check_keys(c, "scene.coupling", {"mode", "k_n", "k_t", "c_d", "r_c_factor"});
    if (c.contains("mode")) {
      std::string m = c["mode"].get<std::string>();
      if (m == "particle")
        w.coupling.mode = CouplingMode::Particle;
      else if (m == "grid")
        w.coupling.mode = CouplingMode::Grid;
      else
        detail::config_error("scene.coupling.mode", "expected 'particle' or 'grid'");
    }
    w.coupling.r_c_factor = c.value("r_c_factor", w.coupling.r_c_factor);
    w.coupling.c_d = c.value("c_d", w.coupling.c_d);
    default_k_n = c.value("k_n", default_k_n);
    default_k_t = c.value("k_t", default_k_t);
  }

  std::uint64_t seed = root.value("seed", 42u);
  std::mt19937_64 rng(seed);
  double last_particle_volume = 0.0;
  if (root.contains("sources"))
    for (std::size_t i = 0; i < root["sources"].size(); ++i) {
      std::string path = "scene.sources[" + std::to_string(i) + "]";
      const json& s = root["sources"][i];
      detail::check_keys(s, path, {"box_min", "box_max", "material", "particle_volume"});
      Vec3 lo = detail::vec3_of(detail::require(s, path, "box_min"), path + ".box_min");
      Vec3 hi = detail::vec3_of(detail::require(s, path, "box_max"), path + ".box_max");
      int mat = s.value("material", 0);
      if (mat < 0 || mat >= static_cast<int>(w.soft.materials.size()))
        detail::config_error(path + ".material", "material index out of range");
      last_particle_volume = s.value("particle_volume", kSoftClayParticleVolume);
      seed_particles_box(w.soft, lo, hi, mat, last_particle_volume, rng);
    }

  if (root.contains("bodies"))
    for (std::size_t i = 0; i < root["bodies"].size(); ++i) {
      std::string path = "scene.bodies[" + std::to_string(i) + "]";
      const json& b = root["bodies"][i];
      detail::check_keys(b, path,
                         {"name", "mode", "mass", "inertia", "com_offset", "pose", "shapes"});
      RigidBody body;
      body.name = b.value("name", "body" + std::to_string(i));
      std::string mode = b.value("mode", std::string("kinematic"));
      if (mode == "dynamic")
        body.mode = BodyMode::Dynamic;
      else if (mode != "kinematic")
        detail::config_error(path + ".mode", "expected 'dynamic' or 'kinematic'");
      body.mass = b.value("mass", body.mass);
      if (b.contains("inertia")) body.inertia = detail::vec3_of(b["inertia"], path + ".inertia");
      if (b.contains("com_offset"))
        body.com_offset = detail::vec3_of(b["com_offset"], path + ".com_offset");
      if (b.contains("pose")) body.pose = detail::pose_of(b["pose"], path + ".pose");
      for (std::size_t si = 0; si < detail::require(b, path, "shapes").size(); ++si)
        body.shapes.push_back(detail::shape_of(b["shapes"][si],
                                               path + ".shapes[" + std::to_string(si) + "]",
                                               default_k_n, default_k_t));
      w.bodies.push_back(body);
    }

  if (root.contains("robot")) {
    const json& r = root["robot"];
    detail::check_keys(r, "scene.robot",
                       {"chain", "base", "home", "controllers", "gripper", "shapes"});
    Robot robot;
    robot.chain =
        detail::chain_of(detail::require(r, "scene.robot", "chain").get<std::string>(),
                         "scene.robot.chain");
    if (r.contains("home")) {
      const json& h = r["home"];
      if (static_cast<int>(h.size()) != robot.chain.dof())
        detail::config_error("scene.robot.home", "dimension must match the chain dof");
      robot.q = VecX(robot.chain.dof());
      for (int i = 0; i < robot.chain.dof(); ++i) robot.q[i] = h[i].get<double>();
    }
    if (r.contains("gripper")) {
      const json& g = r["gripper"];
      detail::check_keys(g, "scene.robot.gripper",
                         {"axis", "lower", "upper", "finger_half_extents", "finger_offset",
                          "friction"});
      robot.gripper.present = true;
      if (g.contains("axis"))
        robot.gripper.axis = detail::vec3_of(g["axis"], "scene.robot.gripper.axis");
      robot.gripper.lower = g.value("lower", robot.gripper.lower);
      robot.gripper.upper = g.value("upper", robot.gripper.upper);
      if (g.contains("finger_half_extents"))
        robot.gripper.finger_half_extents =
            detail::vec3_of(g["finger_half_extents"], "scene.robot.gripper.finger_half_extents");
      if (g.contains("finger_offset"))
        robot.gripper.finger_offset =
            detail::vec3_of(g["finger_offset"], "scene.robot.gripper.finger_offset");
      robot.gripper.friction = g.value("friction", robot.gripper.friction);
    }
    Pose base = r.contains("base") ? Pose::from_translation(detail::vec3_of(
                                         r["base"], "scene.robot.base"))
                                   : Pose::identity();
    robot.init(base);
    if (r.contains("shapes")) {
      // Tool shapes attach to the last link.
      for (std::size_t si = 0; si < r["shapes"].size(); ++si)
        robot.links.back().shapes.push_back(
            detail::shape_of(r["shapes"][si], "scene.robot.shapes[" + std::to_string(si) + "]",
                             default_k_n, default_k_t));
      robot.update_link_poses(0.0);
    }
    w.robot = robot;
    if (r.contains("controllers")) {
      Pose tcp = w.robot->tcp_pose();
      for (std::size_t ci = 0; ci < r["controllers"].size(); ++ci) {
        ControllerVariant v = variant_from_name(r["controllers"][ci].get<std::string>());
        ControllerConfig cfg = ControllerConfig::make(v, w.robot->chain, w.robot->gripper);
        w.controller.components.push_back(
            {cfg, ControllerState::reset(cfg, w.robot->q, tcp)});
      }
    }
  }

  if (root.contains("stepping")) {
    const json& s = root["stepping"];
    detail::check_keys(s, "scene.stepping", {"dt_soft", "n_soft", "n_rigid", "control_hz"});
    w.soft.dt = s.value("dt_soft", w.soft.dt);
    w.n_soft = s.value("n_soft", w.n_soft);
    w.n_rigid = s.value("n_rigid", w.n_rigid);
    if (s.contains("control_hz")) {
      double hz = s["control_hz"].get<double>();
      double period = w.n_rigid * w.n_soft * w.soft.dt;
      if (std::abs(period - 1.0 / hz) > 1e-9 * std::max(1.0, period))
        detail::config_error("scene.stepping.control_hz",
                             "inconsistent: n_rigid * n_soft * dt_soft = " +
                                 std::to_string(period) + " but 1/control_hz = " +
                                 std::to_string(1.0 / hz));
    }
  }

  w.deterministic = root.value("deterministic", true);
  detail::range_warnings(w, last_particle_volume, warnings);
  w.init();
  return w;
}

inline World load_scene(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_scene: cannot open " + path);
  json root;
  try {
    root = json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_scene: " + path + ": " + e.what());
  }
  return scene_from_json(root, warnings);
}

// ---------------------------------------------------------------------------
// Particle export: ASCII PLY with positions and material id.

inline void export_particles(const SoftState& st, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("export_particles: cannot open " + path);
  f << "ply\nformat ascii 1.0\nelement vertex " << st.particles.size()
    << "\nproperty float x\nproperty float y\nproperty float z\nproperty int material\n"
       "end_header\n";
  f.precision(9);
  for (const Particle& p : st.particles)
    f << static_cast<float>(p.x.x()) << " " << static_cast<float>(p.x.y()) << " "
      << static_cast<float>(p.x.z()) << " " << p.material << "\n";
  if (!f) throw std::runtime_error("export_particles: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Throughput benchmark.

struct BenchReport {
  int worlds = 1;
  int steps = 0;
  std::size_t particles = 0;
  int threads = 1;
  bool deterministic = true;
  double env_steps_per_s = 0.0;   // single world
  double soft_substeps_per_s = 0.0;
  double aggregate_env_steps_per_s = 0.0;  // across all worlds
  std::vector<std::uint64_t> final_hashes;
};

/// Steps `steps` env steps in each of `worlds` independently owned worlds
/// (each on its own thread) and reports throughput plus final state hashes.
inline BenchReport bench(const std::function<World()>& factory,
                         const std::vector<VecX>& script, int steps, int worlds = 1) {
  BenchReport rep;
  rep.worlds = worlds;
  rep.steps = steps;
  rep.threads = worker_threads();
  std::vector<World> ws;
  for (int i = 0; i < worlds; ++i) ws.push_back(factory());
  rep.particles = ws[0].soft.particles.size();
  rep.deterministic = ws[0].deterministic;
  int substeps = 0;

  auto run_world = [&](World& w, int* substep_count) {
    for (int s = 0; s < steps; ++s) {
      const VecX& a = script.empty() ? VecX() : script[s % script.size()];
      StepReport r = env_step(w, a);
      if (substep_count) *substep_count += r.soft_substeps;
    }
  };

  auto t0 = std::chrono::steady_clock::now();
  run_world(ws[0], &substeps);
  double dt_single = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.env_steps_per_s = steps / std::max(dt_single, 1e-12);
  rep.soft_substeps_per_s = substeps / std::max(dt_single, 1e-12);

  if (worlds > 1) {
    auto t1 = std::chrono::steady_clock::now();
    std::vector<std::thread> pool;
    for (int i = 1; i < worlds; ++i)
      pool.emplace_back([&, i] { run_world(ws[i], nullptr); });
    for (auto& t : pool) t.join();
    double dt_rest =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    rep.aggregate_env_steps_per_s =
        static_cast<double>(steps) * worlds / std::max(dt_single + dt_rest, 1e-12);
  } else {
    rep.aggregate_env_steps_per_s = rep.env_steps_per_s;
  }
  for (World& w : ws) rep.final_hashes.push_back(state_hash(w));
  return rep;
}

}  // namespace msim
