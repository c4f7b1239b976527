#pragma once

// Desk-scale scripted scenes and soft-body success metrics: fill fraction,
// write IoU over indentation depth maps, pinch chamfer ratio, plus the
// heightmap rasterizer and depth-map file I/O.

#include "msim/chains.hpp"
#include "msim/coupling.hpp"
#include "msim/seeding.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace msim {

/// Axis-aligned world-frame region (e.g. a beaker interior).
struct RegionBox {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }

  void validate() const {
    if ((max - min).minCoeff() <= 0.0)
      throw std::invalid_argument("RegionBox: extents must be positive");
  }
};

/// Heightmap over a region footprint. Samples are heights above the region
/// floor, row-major with x fastest. Occupancy reads as indentation: a cell
/// is "written" when its height sits below the threshold.
struct DepthMap {
  int nx = 0, ny = 0;
  double cell = 0.0;
  double threshold = 0.0;
  std::vector<double> samples;

  double& at(int i, int j) { return samples[static_cast<std::size_t>(j) * nx + i]; }
  double at(int i, int j) const { return samples[static_cast<std::size_t>(j) * nx + i]; }
  bool occupied(std::size_t idx) const { return samples[idx] < threshold; }

  void validate() const {
    if (nx < 2 || ny < 2) throw std::invalid_argument("DepthMap: resolution must be >= 2x2");
    for (double s : samples)
      if (!std::isfinite(s)) throw std::invalid_argument("DepthMap: non-finite sample");
  }
};

// ---------------------------------------------------------------------------
// Metrics.

struct FillResult {
  double fraction = 0.0;
  double max_speed = 0.0;
  bool success = false;
};

/// Fraction of particles inside the region; success needs > 90% inside and
/// every particle slower than 0.05 m/s.
inline FillResult metric_fill(const std::vector<Particle>& particles, const RegionBox& region) {
  if (particles.empty()) throw std::invalid_argument("metric_fill: no particles");
  region.validate();
  FillResult r;
  std::size_t inside = 0;
  for (const Particle& p : particles) {
    if (region.contains(p.x)) ++inside;
    r.max_speed = std::max(r.max_speed, p.v.norm());
  }
  r.fraction = static_cast<double>(inside) / static_cast<double>(particles.size());
  r.success = r.fraction > 0.9 && r.max_speed < 0.05;
  return r;
}

/// Per-cell max particle height above the region floor; cells without
/// particles stay 0. Only particles inside the region box contribute.
inline DepthMap render_heightmap(const std::vector<Particle>& particles, const RegionBox& region,
                                 int nx, int ny, double threshold = 0.0) {
  region.validate();
  if (nx < 2 || ny < 2)
    throw std::invalid_argument("render_heightmap: resolution must be >= 2x2");
  DepthMap m;
  m.nx = nx;
  m.ny = ny;
  m.cell = (region.max.x() - region.min.x()) / nx;
  m.threshold = threshold;
  m.samples.assign(static_cast<std::size_t>(nx) * ny, 0.0);
  double cy = (region.max.y() - region.min.y()) / ny;
  for (const Particle& p : particles) {
    if (!region.contains(p.x)) continue;
    int i = std::min(nx - 1, static_cast<int>((p.x.x() - region.min.x()) / m.cell));
    int j = std::min(ny - 1, static_cast<int>((p.x.y() - region.min.y()) / cy));
    m.at(i, j) = std::max(m.at(i, j), p.x.z() - region.min.z());
  }
  return m;
}

struct IouResult {
  double iou = 1.0;
  bool success = true;
};

/// IoU of the binarized indentation patterns; both-empty counts as 1.
inline IouResult metric_write_iou(const DepthMap& current, const DepthMap& target) {
  if (current.nx != target.nx || current.ny != target.ny)
    throw std::invalid_argument("metric_write_iou: resolution mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < current.samples.size(); ++i) {
    bool a = current.occupied(i), b = target.occupied(i);
    inter += a && b;
    uni += a || b;
  }
  IouResult r;
  r.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  r.success = r.iou > 0.8;
  return r;
}

namespace detail {

/// Uniform-grid nearest-neighbor structure over a point set.
struct NnGrid {
  Vec3 origin;
  double cell;
  Eigen::Vector3i dims;
  std::vector<std::vector<int>> bins;
  const std::vector<Vec3>* pts;

  explicit NnGrid(const std::vector<Vec3>& points) : pts(&points) {
    Vec3 lo = points[0], hi = points[0];
    for (const Vec3& p : points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    double diag = (hi - lo).norm();
    cell = std::max(diag / std::cbrt(static_cast<double>(points.size())), 1e-9);
    origin = lo;
    for (int ax = 0; ax < 3; ++ax)
      dims[ax] = std::max(1, static_cast<int>((hi[ax] - lo[ax]) / cell) + 1);
    bins.resize(static_cast<std::size_t>(dims.x()) * dims.y() * dims.z());
    for (std::size_t i = 0; i < points.size(); ++i)
      bins[bin_of(points[i])].push_back(static_cast<int>(i));
  }

  std::size_t bin_of(const Vec3& p) const {
    Eigen::Vector3i c = cell_of(p);
    return (static_cast<std::size_t>(c.z()) * dims.y() + c.y()) * dims.x() + c.x();
  }
  Eigen::Vector3i cell_of(const Vec3& p) const {
    Eigen::Vector3i c;
    for (int ax = 0; ax < 3; ++ax)
      c[ax] = std::clamp(static_cast<int>((p[ax] - origin[ax]) / cell), 0, dims[ax] - 1);
    return c;
  }

  /// Expanding-shell search; a shell at Chebyshev radius k is safe to skip
  /// once the best distance is below (k-1)*cell.
  double nearest_dist(const Vec3& q) const {
    Eigen::Vector3i c = cell_of(q);
    double best = std::numeric_limits<double>::infinity();
    int kmax = dims.maxCoeff();
    for (int k = 0; k <= kmax; ++k) {
      if (best <= (k - 1) * cell) break;
      bool any = false;
      for (int dz = -k; dz <= k; ++dz)
        for (int dy = -k; dy <= k; ++dy)
          for (int dx = -k; dx <= k; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != k) continue;
            int x = c.x() + dx, y = c.y() + dy, z = c.z() + dz;
            if (x < 0 || y < 0 || z < 0 || x >= dims.x() || y >= dims.y() || z >= dims.z())
              continue;
            any = true;
            const auto& bin = bins[(static_cast<std::size_t>(z) * dims.y() + y) * dims.x() + x];
            for (int i : bin) best = std::min(best, ((*pts)[i] - q).norm());
          }
      if (!any && best < std::numeric_limits<double>::infinity()) break;
    }
    return best;
  }
};

}  // namespace detail

/// Symmetric sum of mean nearest-neighbor distances,
/// mean_a min_b |a-b| + mean_b min_a |a-b|.
inline double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("chamfer_distance: point sets must be non-empty");
  detail::NnGrid ga(a), gb(b);
  double ab = 0.0, ba = 0.0;
  for (const Vec3& p : a) ab += gb.nearest_dist(p);
  for (const Vec3& p : b) ba += ga.nearest_dist(p);
  return ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size());
}

struct PinchResult {
  double ratio = 0.0;  // chamfer(current, target) / chamfer(initial, target)
  bool success = false;
};

/// Success when the current shape is within 30% of the initial-to-target
/// chamfer distance.
inline PinchResult metric_pinch(const std::vector<Vec3>& current,
                                const std::vector<Vec3>& initial,
                                const std::vector<Vec3>& target) {
  double t = chamfer_distance(initial, target);
  double d = chamfer_distance(current, target);
  PinchResult r;
  r.ratio = t > 0.0 ? d / t : (d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  r.success = d < 0.3 * t;
  return r;
}

inline std::vector<Vec3> particle_positions(const SoftState& st) {
  std::vector<Vec3> out;
  out.reserve(st.particles.size());
  for (const Particle& p : st.particles) out.push_back(p.x);
  return out;
}

inline double kinetic_energy(const SoftState& st) {
  double e = 0.0;
  for (const Particle& p : st.particles) e += 0.5 * p.mass * p.v.squaredNorm();
  return e;
}

// ---------------------------------------------------------------------------
// Depth-map file I/O: flat binary grid plus ASCII PGM for eyeballing.

inline void save_depth_map(const DepthMap& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_depth_map: cannot open " + path);
  f.write("MSDEP1", 6);
  std::uint32_t nx = m.nx, ny = m.ny;
  f.write(reinterpret_cast<const char*>(&nx), 4);
  f.write(reinterpret_cast<const char*>(&ny), 4);
  f.write(reinterpret_cast<const char*>(&m.cell), 8);
  f.write(reinterpret_cast<const char*>(&m.threshold), 8);
  for (double s : m.samples) {
    float v = static_cast<float>(s);
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!f) throw std::runtime_error("save_depth_map: write failed for " + path);
}

inline DepthMap load_depth_map(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_depth_map: cannot open " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::string(magic, 6) != "MSDEP1")
    throw std::runtime_error("load_depth_map: bad magic in " + path);
  std::uint32_t nx = 0, ny = 0;
  f.read(reinterpret_cast<char*>(&nx), 4);
  f.read(reinterpret_cast<char*>(&ny), 4);
  DepthMap m;
  m.nx = static_cast<int>(nx);
  m.ny = static_cast<int>(ny);
  f.read(reinterpret_cast<char*>(&m.cell), 8);
  f.read(reinterpret_cast<char*>(&m.threshold), 8);
  m.samples.resize(static_cast<std::size_t>(nx) * ny);
  for (double& s : m.samples) {
    float v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    s = v;
  }
  if (!f) throw std::runtime_error("load_depth_map: truncated file " + path);
  m.validate();
  return m;
}

inline void save_depth_map_pgm(const DepthMap& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_depth_map_pgm: cannot open " + path);
  double hi = 0.0;
  for (double s : m.samples) hi = std::max(hi, s);
  f << "P2\n" << m.nx << " " << m.ny << "\n255\n";
  for (int j = 0; j < m.ny; ++j) {
    for (int i = 0; i < m.nx; ++i)
      f << static_cast<int>(hi > 0 ? 255.0 * m.at(i, j) / hi : 0.0) << (i + 1 < m.nx ? " " : "");
    f << "\n";
  }
}

// ---------------------------------------------------------------------------
// Golden scenes: small scripted worlds used by tests and the CLI.

struct GoldenScene {
  std::string name;
  World world;
  std::vector<VecX> script;  // one action per env step
  RegionBox region;          // fill region / heightmap footprint
  DepthMap write_target;     // write scene only
  double stamp_depth = 0.0;
  std::vector<Vec3> initial_positions;
  std::vector<Vec3> pinch_target;  // pinch scene only
};

namespace detail {

inline void common_soft_setup(World& w) {
  w.soft.grid.h = 0.01;
  w.soft.grid.dims = Eigen::Vector3i(32, 32, 32);
  w.soft.materials = {soft_clay()};
  w.soft.dt = 5e-4;
  w.n_rigid = 10;
  w.n_soft = 1;
  // Per-particle contact must respect the explicit stability bound
  // k*dt^2 < ~0.1*m_p; the scenes scale stiffness and damping accordingly.
  w.coupling.c_d = 0.05;
}

inline void soften_contact(Shape& s) {
  s.k_n = 20.0;
  s.k_t = 0.1;
}

}  // namespace detail

/// Clay block dropped into a walled region: a sliding plate under the block
/// is scripted away and the clay falls into the "beaker".
inline GoldenScene fill_mini() {
  GoldenScene s;
  s.name = "fill-mini";
  World& w = s.world;
  detail::common_soft_setup(w);
  std::mt19937_64 rng(101);
  // Seeded just above the plate's contact band so nothing starts pre-loaded.
  seed_particles_box(w.soft, Vec3(0.105, 0.105, 0.082), Vec3(0.155, 0.155, 0.110), 0,
                     kSoftClayParticleVolume, rng);

  // Beaker: four thin kinematic walls around the target region.
  s.region = RegionBox{Vec3(0.09, 0.09, 0.01), Vec3(0.17, 0.17, 0.07)};
  RigidBody beaker;
  beaker.name = "beaker";
  auto wall = [](const Vec3& center, const Vec3& half) {
    Shape sh;
    sh.geom = BoxGeom{half};
    sh.local_pose = Pose::from_translation(center);
    sh.friction = 0.2;
    detail::soften_contact(sh);
    return sh;
  };
  beaker.shapes = {wall({0.085, 0.13, 0.05}, {0.005, 0.05, 0.03}),
                   wall({0.175, 0.13, 0.05}, {0.005, 0.05, 0.03}),
                   wall({0.13, 0.085, 0.05}, {0.05, 0.005, 0.03}),
                   wall({0.13, 0.175, 0.05}, {0.05, 0.005, 0.03})};
  w.bodies.push_back(beaker);

  // Plate carrying the clay, on a horizontal slide.
  Robot r;
  r.chain = slide_chain(Vec3(1, 0, 0));
  r.q = VecX::Zero(1);
  r.init(Pose::from_translation(Vec3(0.13, 0.13, 0.072)));
  Shape plate;
  plate.geom = BoxGeom{Vec3(0.045, 0.045, 0.004)};
  plate.friction = 0.1;
  detail::soften_contact(plate);
  r.links[0].shapes = {plate};
  r.update_link_poses(0.0);
  w.robot = r;

  ControllerConfig cfg = ControllerConfig::make(ControllerVariant::JointPos, r.chain);
  w.controller.components.push_back(
      {cfg, ControllerState::reset(cfg, r.q, forward_kinematics(r.chain, r.q).tcp)});

  // Slide the plate out over 30 steps, then hold while the clay settles.
  for (int i = 0; i < 130; ++i) {
    VecX a(1);
    a[0] = std::min(1.0, i / 30.0) * 0.12;
    s.script.push_back(a);
  }
  w.init();
  s.initial_positions = particle_positions(w.soft);
  return s;
}

/// Kinematic stamp on a vertical lift presses a bar pattern into a clay
/// slab, then retracts.
inline GoldenScene write_mini() {
  GoldenScene s;
  s.name = "write-mini";
  World& w = s.world;
  detail::common_soft_setup(w);
  w.coupling.r_c_factor = 0.2;  // tight band for a sharp indentation edge
  // Firm clay: low elastic-to-yield ratio so the indentation survives the
  // stamp's retraction instead of springing back.
  w.soft.materials = {Material{1000.0, 1e5, 0.3, 4e3}};
  w.soft.dt = 2.5e-4;  // elastic wave speed sqrt(E/rho) = 10 m/s
  w.n_soft = 2;
  std::mt19937_64 rng(102);
  // The slab bottom reaches into the sticky boundary band so it is anchored
  // rather than sagging before the press.
  seed_particles_box(w.soft, Vec3(0.10, 0.10, 0.016), Vec3(0.18, 0.16, 0.036), 0,
                     kSoftClayParticleVolume, rng);

  Robot r;
  r.chain = lift_chain();
  r.q = VecX::Zero(1);
  r.init(Pose::from_translation(Vec3(0.14, 0.13, 0.05)));
  Shape stamp;
  stamp.geom = BoxGeom{Vec3(0.030, 0.010, 0.008)};  // bar footprint 60 x 20 mm
  stamp.friction = 0.3;
  detail::soften_contact(stamp);
  stamp.k_n = 80.0;  // firm press; still inside the stability bound at this dt
  r.links[0].shapes = {stamp};
  r.update_link_poses(0.0);
  w.robot = r;

  ControllerConfig cfg = ControllerConfig::make(ControllerVariant::JointPos, r.chain);
  w.controller.components.push_back(
      {cfg, ControllerState::reset(cfg, r.q, forward_kinematics(r.chain, r.q).tcp)});

  // Descend 10 mm into the slab, dwell, retract, dwell.
  const double press_q = -0.016;  // stamp bottom starts 6 mm above the slab
  for (int i = 0; i < 45; ++i) {
    VecX a(1);
    if (i < 12)
      a[0] = press_q * (i + 1) / 12.0;
    else if (i < 17)
      a[0] = press_q;
    else if (i < 27)
      a[0] = press_q + (press_q * -1 + 0.01) * (i - 16) / 10.0;
    else
      a[0] = 0.01;
    s.script.push_back(a);
  }

  s.stamp_depth = 0.010;
  s.region = RegionBox{Vec3(0.10, 0.10, 0.02), Vec3(0.18, 0.16, 0.08)};
  // Reference height from the initial particle heightmap (particle centers
  // sit below the geometric surface), threshold 25% of the stamp depth
  // below it.
  // Cells are 10 mm so every cell sees the slab's top particle layer.
  DepthMap initial = render_heightmap(w.soft.particles, s.region, 8, 6);
  std::vector<double> sorted = initial.samples;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  double ref_height = sorted[sorted.size() / 2];
  // 40% of the stamp depth: deeper than the shoulder sag the plastic flow
  // produces next to the bar, well above the trench floor.
  double threshold = ref_height - 0.40 * s.stamp_depth;
  // Target pattern from the stamp footprint geometry: bar cells indented by
  // the stamp depth, everything else at the reference height.
  DepthMap t;
  t.nx = 8;
  t.ny = 6;
  t.cell = 0.01;
  t.threshold = threshold;
  t.samples.assign(8 * 6, ref_height);
  for (int j = 0; j < t.ny; ++j)
    for (int i = 0; i < t.nx; ++i) {
      double cx = 0.10 + (i + 0.5) * 0.01, cy = 0.10 + (j + 0.5) * 0.01;
      if (std::abs(cx - 0.14) < 0.030 && std::abs(cy - 0.13) < 0.010)
        t.at(i, j) = ref_height - s.stamp_depth;
    }
  s.write_target = t;
  w.init();
  s.initial_positions = particle_positions(w.soft);
  return s;
}

/// Two mirrored fingers close on a clay block (the grasp scene).
inline GoldenScene pinch_mini() {
  GoldenScene s;
  s.name = "pinch-mini";
  World& w = s.world;
  detail::common_soft_setup(w);
  std::mt19937_64 rng(103);
  seed_particles_box(w.soft, Vec3(0.125, 0.125, 0.021), Vec3(0.155, 0.155, 0.061), 0,
                     kSoftClayParticleVolume, rng);

  Robot r;
  r.chain = lift_chain();
  r.q = VecX::Zero(1);
  r.gripper.present = true;
  r.gripper.axis = Vec3(1, 0, 0);
  r.gripper.upper = 0.045;
  r.gripper.finger_half_extents = Vec3(0.004, 0.012, 0.018);
  r.gripper.finger_offset = Vec3(0, 0, 0.02);
  r.gripper.friction = 0.8;
  r.init(Pose::from_translation(Vec3(0.14, 0.14, 0.02)));
  r.finger_q = 0.045;
  detail::soften_contact(r.finger_left.shapes[0]);
  detail::soften_contact(r.finger_right.shapes[0]);
  r.update_link_poses(0.0);
  w.robot = r;

  ControllerConfig arm = ControllerConfig::make(ControllerVariant::JointPos, r.chain);
  ControllerConfig grip = ControllerConfig::make(ControllerVariant::GripperPos, r.chain, r.gripper);
  Pose tcp = forward_kinematics(r.chain, r.q).tcp;
  w.controller.components.push_back({arm, ControllerState::reset(arm, r.q, tcp)});
  w.controller.components.push_back({grip, ControllerState::reset(grip, r.q, tcp)});

  // Close the fingers from 45 mm to 12 mm, then hold the pinch.
  auto grip_action = [&](double target) {
    return 2.0 * (target - grip.lower[0]) / (grip.upper[0] - grip.lower[0]) - 1.0;
  };
  for (int i = 0; i < 60; ++i) {
    VecX a(2);
    a[0] = 0.0;
    double t = std::min(1.0, i / 35.0);
    a[1] = grip_action(0.045 + t * (0.012 - 0.045));
    s.script.push_back(a);
  }
  w.init();
  s.initial_positions = particle_positions(w.soft);
  // Target shape: the block squeezed to half width along the finger axis.
  for (const Vec3& p : s.initial_positions)
    s.pinch_target.push_back(Vec3(0.14 + 0.5 * (p.x() - 0.14), p.y(), p.z()));
  return s;
}

/// A block settling on the sticky floor with no rigid bodies; used for the
/// energy-settling and determinism checks.
inline GoldenScene press_plane() {
  GoldenScene s;
  s.name = "press-plane";
  World& w = s.world;
  detail::common_soft_setup(w);
  std::mt19937_64 rng(104);
  seed_particles_box(w.soft, Vec3(0.13, 0.13, 0.022), Vec3(0.16, 0.16, 0.052), 0,
                     kSoftClayParticleVolume, rng);
  for (int i = 0; i < 100; ++i) s.script.push_back(VecX());
  w.init();
  s.initial_positions = particle_positions(w.soft);
  return s;
}

inline std::vector<std::string> golden_scene_names() {
  return {"fill-mini", "write-mini", "pinch-mini", "press-plane"};
}

inline GoldenScene make_golden_scene(const std::string& name) {
  if (name == "fill-mini") return fill_mini();
  if (name == "write-mini") return write_mini();
  if (name == "pinch-mini") return pinch_mini();
  if (name == "press-plane") return press_plane();
  throw std::invalid_argument("unknown golden scene: " + name);
}

}  // namespace msim
