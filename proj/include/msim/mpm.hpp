#pragma once

// MLS-MPM elasto-plastic solver: quadratic B-spline transfers with APIC
// affine velocities and the fused stress force term, Hencky-strain
// elasticity, von Mises radial return plasticity.
//
// Particle-to-grid runs as a node-major gather over per-cell particle bins,
// so results are bitwise independent of the worker thread count.

#include "msim/geometry.hpp"
#include "msim/parallel.hpp"

#include <array>
#include <functional>

namespace msim {

struct SimulationDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Elasto-plastic material. Parameter envelope follows the simulator's
/// clay presets; validation warns rather than throws outside it.
struct Material {
  double density = 1000.0;      // kg/m^3, expected 300..3000
  double youngs = 1e4;          // Pa
  double poisson = 0.3;         // (0, 0.5)
  double yield_stress = 2e3;    // Pa

  double mu() const { return youngs / (2.0 * (1.0 + poisson)); }
  double lambda() const {
    return youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  }

  void validate() const {
    if (youngs <= 0.0) throw std::invalid_argument("Material: E must be > 0");
    if (poisson <= 0.0 || poisson >= 0.5)
      throw std::invalid_argument("Material: nu must be in (0, 0.5)");
    if (yield_stress <= 0.0) throw std::invalid_argument("Material: yield stress must be > 0");
    if (density <= 0.0) throw std::invalid_argument("Material: density must be > 0");
  }
};

/// Named presets for the slash-separated parameter pairs.
inline Material soft_clay() { return Material{1000.0, 1e4, 0.3, 2e3}; }
inline Material stiff_clay() { return Material{1000.0, 3e5, 0.3, 1e4}; }
inline constexpr double kSoftClayParticleVolume = 6.2e-8;
inline constexpr double kStiffClayParticleVolume = 1.2e-7;

struct Particle {
  Vec3 x = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double mass = 0.0;
  double volume0 = kSoftClayParticleVolume;
  Mat3 F = Mat3::Identity();
  Mat3 C = Mat3::Zero();
  int material = 0;
};

enum class BoundaryKind : std::uint8_t { Sticky, Slip };

/// Background Eulerian grid. dims counts nodes per axis; node i sits at
/// origin + h*i. The outermost kBoundaryWidth node layers carry the
/// per-face boundary condition.
struct MpmGrid {
  static constexpr int kBoundaryWidth = 2;

  double h = 0.01;
  Eigen::Vector3i dims = Eigen::Vector3i(64, 64, 64);
  Vec3 origin = Vec3::Zero();
  std::array<BoundaryKind, 6> boundary = {BoundaryKind::Sticky, BoundaryKind::Sticky,
                                          BoundaryKind::Sticky, BoundaryKind::Sticky,
                                          BoundaryKind::Sticky, BoundaryKind::Sticky};
  // face order: x-, x+, y-, y+, z-, z+

  std::vector<double> mass;
  std::vector<Vec3> momentum;
  std::vector<Vec3> force;
  std::vector<Vec3> velocity;

  std::size_t node_count() const {
    return static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  }
  std::size_t node_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims.y() + j) * dims.x() + i;
  }
  Vec3 node_pos(int i, int j, int k) const { return origin + h * Vec3(i, j, k); }

  void allocate() {
    mass.assign(node_count(), 0.0);
    momentum.assign(node_count(), Vec3::Zero());
    force.assign(node_count(), Vec3::Zero());
    velocity.assign(node_count(), Vec3::Zero());
  }

  void clear() {
    std::fill(mass.begin(), mass.end(), 0.0);
    std::fill(momentum.begin(), momentum.end(), Vec3::Zero());
    std::fill(force.begin(), force.end(), Vec3::Zero());
    std::fill(velocity.begin(), velocity.end(), Vec3::Zero());
  }

  void validate() const {
    if (dims.minCoeff() < 4) throw std::invalid_argument("MpmGrid: dims must be >= 4 per axis");
    if (h <= 0.0) throw std::invalid_argument("MpmGrid: cell length must be > 0");
  }
};

/// Complete soft-body state: particles + grid + stepping parameters plus
/// transfer scratch. Single-owner; distinct states may step in parallel.
struct SoftState {
  std::vector<Particle> particles;
  std::vector<Material> materials;
  MpmGrid grid;
  Vec3 gravity = Vec3(0, 0, -9.81);
  double dt = 5e-4;

  double cfl_factor = 0.4;
  int max_cfl_halvings = 4;
  double lost_fraction_threshold = 0.01;

  std::vector<Vec3> ext_force;      // per-particle contact forces, cleared per substep
  std::vector<std::uint8_t> lost;   // frozen particles that left the domain
  std::size_t lost_count = 0;

  // Transfer scratch, rebuilt by p2g.
  struct Scratch {
    std::vector<Eigen::Vector3i> base;
    std::vector<std::array<std::array<double, 3>, 3>> w;  // [axis][offset]
    std::vector<Mat3> affine;  // m_p * C_p, momentum transfer
    std::vector<Mat3> stress;  // -(4/h^2) * V0 * tau, force transfer
    std::vector<int> cell_start;
    std::vector<int> cell_particles;
    std::vector<std::size_t> active_nodes;
  } scratch;

  void init_buffers() {
    grid.allocate();
    ext_force.assign(particles.size(), Vec3::Zero());
    lost.assign(particles.size(), 0);
    lost_count = 0;
  }

  const Material& material_of(const Particle& p) const { return materials.at(p.material); }
};

// ---------------------------------------------------------------------------
// Constitutive model.

/// Hencky-strain elasticity in principal space: with F = U S V^T and
/// eps = log S, tau = U diag(2*mu*eps + lambda*tr(eps)) U^T.
inline Mat3 kirchhoff_stress(const Mat3& F, const Material& m) {
  if (!(F.determinant() > 0.0))
    throw std::invalid_argument("kirchhoff_stress: det(F) must be > 0");
  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sig = svd.singularValues();
  Vec3 eps = sig.array().log();
  double tr = eps.sum();
  Vec3 principal = 2.0 * m.mu() * eps + Vec3::Constant(m.lambda() * tr);
  return svd.matrixU() * principal.asDiagonal() * svd.matrixU().transpose();
}

/// Von Mises radial return in principal Hencky space. Volumetric part (and
/// therefore det F) is preserved; the deviatoric Hencky strain is scaled so
/// the deviatoric Kirchhoff stress lands on the yield surface.
inline Mat3 von_mises_return_map(const Mat3& F_trial, const Material& m) {
  if (!(F_trial.determinant() > 0.0))
    throw std::invalid_argument("von_mises_return_map: det(F) must be > 0");
  Eigen::JacobiSVD<Mat3> svd(F_trial, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sig = svd.singularValues();
  Vec3 eps = sig.array().log();
  double mean = eps.sum() / 3.0;
  Vec3 dev = eps - Vec3::Constant(mean);
  double dev_norm = dev.norm();
  double stress_dev_norm = 2.0 * m.mu() * dev_norm;  // ||dev(tau)||
  double threshold = std::sqrt(2.0 / 3.0) * m.yield_stress;
  if (stress_dev_norm <= threshold) return F_trial;
  Vec3 eps_proj = Vec3::Constant(mean) + dev * (threshold / stress_dev_norm);
  Vec3 sig_proj = eps_proj.array().exp();
  return svd.matrixU() * sig_proj.asDiagonal() * svd.matrixV().transpose();
}

// ---------------------------------------------------------------------------
// Transfers.

namespace detail {

inline void bspline_weights(double fx, std::array<double, 3>& w) {
  // Quadratic B-spline evaluated at fx, fx-1, fx-2 with fx in [0.5, 1.5).
  w[0] = 0.5 * (1.5 - fx) * (1.5 - fx);
  w[1] = 0.75 - (fx - 1.0) * (fx - 1.0);
  w[2] = 0.5 * (fx - 0.5) * (fx - 0.5);
}

}  // namespace detail

/// Particle-to-grid: mass, APIC momentum, fused MLS-MPM stress forces and
/// per-particle external forces. Grid must be cleared beforehand.
inline void p2g(SoftState& st) {
  MpmGrid& g = st.grid;
  const double inv_h = 1.0 / g.h;
  const double d_inv = 4.0 * inv_h * inv_h;  // quadratic B-spline D^-1
  const std::size_t n = st.particles.size();
  auto& sc = st.scratch;
  sc.base.resize(n);
  sc.w.resize(n);
  sc.affine.resize(n);
  sc.stress.resize(n);

  // Base cells live on [0, dims-3] per axis; the bin grid matches that range.
  const Eigen::Vector3i bins(g.dims.x() - 2, g.dims.y() - 2, g.dims.z() - 2);
  const std::size_t bin_count = static_cast<std::size_t>(bins.x()) * bins.y() * bins.z();

  // Prepass: weights, fused affine term, lost-particle detection.
  std::vector<std::uint8_t> newly_lost(n, 0);
  parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t ip) {
    Particle& p = st.particles[ip];
    if (st.lost[ip]) {
      sc.base[ip] = Eigen::Vector3i(-10, -10, -10);
      return;
    }
    Vec3 local = (p.x - g.origin) * inv_h;
    Eigen::Vector3i base(static_cast<int>(std::floor(local.x() - 0.5)),
                         static_cast<int>(std::floor(local.y() - 0.5)),
                         static_cast<int>(std::floor(local.z() - 0.5)));
    if (base.x() < 0 || base.y() < 0 || base.z() < 0 || base.x() > g.dims.x() - 3 ||
        base.y() > g.dims.y() - 3 || base.z() > g.dims.z() - 3) {
      newly_lost[ip] = 1;
      sc.base[ip] = Eigen::Vector3i(-10, -10, -10);
      return;
    }
    sc.base[ip] = base;
    for (int ax = 0; ax < 3; ++ax)
      detail::bspline_weights(local[ax] - base[ax], sc.w[ip][ax]);
    Mat3 tau = kirchhoff_stress(p.F, st.material_of(p));
    sc.affine[ip] = p.mass * p.C;
    sc.stress[ip] = -(d_inv * p.volume0) * tau;
  });
  for (std::size_t ip = 0; ip < n; ++ip) {
    if (newly_lost[ip] && !st.lost[ip]) {
      st.lost[ip] = 1;
      st.particles[ip].v.setZero();
      ++st.lost_count;
    }
  }
  if (!st.particles.empty() &&
      static_cast<double>(st.lost_count) / static_cast<double>(n) >
          st.lost_fraction_threshold)
    throw SimulationDiverged("lost particle fraction exceeds threshold");

  // Counting sort of particles into base-cell bins (stable: index order).
  sc.cell_start.assign(bin_count + 1, 0);
  auto bin_of = [&](const Eigen::Vector3i& b) {
    return (static_cast<std::size_t>(b.z()) * bins.y() + b.y()) * bins.x() + b.x();
  };
  for (std::size_t ip = 0; ip < n; ++ip)
    if (!st.lost[ip]) ++sc.cell_start[bin_of(sc.base[ip]) + 1];
  for (std::size_t c = 0; c < bin_count; ++c) sc.cell_start[c + 1] += sc.cell_start[c];
  sc.cell_particles.resize(sc.cell_start[bin_count]);
  {
    std::vector<int> cursor(sc.cell_start.begin(), sc.cell_start.end() - 1);
    for (std::size_t ip = 0; ip < n; ++ip)
      if (!st.lost[ip]) sc.cell_particles[cursor[bin_of(sc.base[ip])]++] = static_cast<int>(ip);
  }

  // Active nodes: nodes reachable from any occupied base cell.
  std::vector<std::uint8_t> node_active(g.node_count(), 0);
  for (std::size_t c = 0; c < bin_count; ++c) {
    if (sc.cell_start[c] == sc.cell_start[c + 1]) continue;
    int bx = static_cast<int>(c % bins.x());
    int by = static_cast<int>((c / bins.x()) % bins.y());
    int bz = static_cast<int>(c / (static_cast<std::size_t>(bins.x()) * bins.y()));
    for (int dk = 0; dk < 3; ++dk)
      for (int dj = 0; dj < 3; ++dj)
        for (int di = 0; di < 3; ++di)
          node_active[g.node_index(bx + di, by + dj, bz + dk)] = 1;
  }
  sc.active_nodes.clear();
  for (std::size_t i = 0; i < node_active.size(); ++i)
    if (node_active[i]) sc.active_nodes.push_back(i);

  // Node-major gather: each node accumulates from the 27 base cells whose
  // kernel support covers it, particles in index order.
  parallel_for(static_cast<std::int64_t>(sc.active_nodes.size()), [&](std::int64_t a) {
    std::size_t ni = sc.active_nodes[a];
    int i = static_cast<int>(ni % g.dims.x());
    int j = static_cast<int>((ni / g.dims.x()) % g.dims.y());
    int k = static_cast<int>(ni / (static_cast<std::size_t>(g.dims.x()) * g.dims.y()));
    Vec3 xi = g.node_pos(i, j, k);
    double m_acc = 0.0;
    Vec3 mom_acc = Vec3::Zero();
    Vec3 f_acc = Vec3::Zero();
    for (int bz = std::max(k - 2, 0); bz <= std::min(k, bins.z() - 1); ++bz)
      for (int by = std::max(j - 2, 0); by <= std::min(j, bins.y() - 1); ++by)
        for (int bx = std::max(i - 2, 0); bx <= std::min(i, bins.x() - 1); ++bx) {
          std::size_t c = (static_cast<std::size_t>(bz) * bins.y() + by) * bins.x() + bx;
          for (int s = sc.cell_start[c]; s < sc.cell_start[c + 1]; ++s) {
            int ip = sc.cell_particles[s];
            const Particle& p = st.particles[ip];
            double w = sc.w[ip][0][i - bx] * sc.w[ip][1][j - by] * sc.w[ip][2][k - bz];
            Vec3 dpos = xi - p.x;
            m_acc += w * p.mass;
            mom_acc += w * (p.mass * p.v + sc.affine[ip] * dpos);
            f_acc += w * (sc.stress[ip] * dpos + st.ext_force[ip]);
          }
        }
    g.mass[ni] = m_acc;
    g.momentum[ni] = mom_acc;
    g.force[ni] = f_acc;
  });
}

/// Node velocities from momentum, forces and gravity, then boundary
/// conditions on the outer node layers. Zero-mass nodes stay at rest.
inline void grid_update(SoftState& st) {
  MpmGrid& g = st.grid;
  const int bw = MpmGrid::kBoundaryWidth;
  parallel_for(static_cast<std::int64_t>(st.scratch.active_nodes.size()), [&](std::int64_t a) {
    std::size_t ni = st.scratch.active_nodes[a];
    if (g.mass[ni] <= 0.0) return;
    Vec3 v = g.momentum[ni] / g.mass[ni] + st.dt * (st.gravity + g.force[ni] / g.mass[ni]);
    int i = static_cast<int>(ni % g.dims.x());
    int j = static_cast<int>((ni / g.dims.x()) % g.dims.y());
    int k = static_cast<int>(ni / (static_cast<std::size_t>(g.dims.x()) * g.dims.y()));
    const int idx[3] = {i, j, k};
    for (int ax = 0; ax < 3; ++ax) {
      if (idx[ax] < bw) {
        if (g.boundary[2 * ax] == BoundaryKind::Sticky)
          v.setZero();
        else if (v[ax] < 0.0)
          v[ax] = 0.0;  // slip: kill the into-the-wall component
      }
      if (idx[ax] >= g.dims[ax] - bw) {
        if (g.boundary[2 * ax + 1] == BoundaryKind::Sticky)
          v.setZero();
        else if (v[ax] > 0.0)
          v[ax] = 0.0;
      }
    }
    g.velocity[ni] = v;
  });
}

/// Grid-to-particle APIC transfer, advection, MLS-MPM deformation gradient
/// update and plastic projection.
inline void g2p_advect(SoftState& st) {
  MpmGrid& g = st.grid;
  const double inv_h = 1.0 / g.h;
  const double d_inv = 4.0 * inv_h * inv_h;
  auto& sc = st.scratch;
  std::vector<std::int64_t> bad(st.particles.size(), 0);
  parallel_for(static_cast<std::int64_t>(st.particles.size()), [&](std::int64_t ip) {
    if (st.lost[ip]) return;
    Particle& p = st.particles[ip];
    const Eigen::Vector3i& base = sc.base[ip];
    Vec3 v_new = Vec3::Zero();
    Mat3 c_new = Mat3::Zero();
    for (int dk = 0; dk < 3; ++dk)
      for (int dj = 0; dj < 3; ++dj)
        for (int di = 0; di < 3; ++di) {
          double w = sc.w[ip][0][di] * sc.w[ip][1][dj] * sc.w[ip][2][dk];
          std::size_t ni = g.node_index(base.x() + di, base.y() + dj, base.z() + dk);
          Vec3 dpos = g.node_pos(base.x() + di, base.y() + dj, base.z() + dk) - p.x;
          v_new += w * g.velocity[ni];
          c_new += (w * d_inv) * (g.velocity[ni] * dpos.transpose());
        }
    p.v = v_new;
    p.C = c_new;
    p.x += st.dt * p.v;
    if (st.dt != 0.0) {
      Mat3 f_trial = (Mat3::Identity() + st.dt * p.C) * p.F;
      p.F = von_mises_return_map(f_trial, st.material_of(p));
    }
    if (!p.x.allFinite() || !p.v.allFinite() || !p.F.allFinite()) bad[ip] = 1;
  });
  for (std::size_t ip = 0; ip < bad.size(); ++ip)
    if (bad[ip])
      throw SimulationDiverged("NaN/Inf in particle " + std::to_string(ip));
}

/// Penalty hooks: the particle hook runs before p2g and fills ext_force;
/// the grid hook runs after p2g and adds node forces.
using ParticleForceHook = std::function<void(SoftState&)>;
using GridForceHook = std::function<void(SoftState&)>;

inline double max_particle_speed(const SoftState& st) {
  double vmax = 0.0;
  for (std::size_t ip = 0; ip < st.particles.size(); ++ip)
    if (!st.lost[ip]) vmax = std::max(vmax, st.particles[ip].v.norm());
  return vmax;
}

/// One soft substep: clear grid, penalty hooks, p2g, grid update, g2p.
/// A CFL violation halves the internal step (up to max_cfl_halvings) and
/// runs the cycle multiple times; the advanced time is always st.dt.
/// Returns the number of internal cycles executed.
inline int soft_substep(SoftState& st, const ParticleForceHook& particle_hook = nullptr,
                        const GridForceHook& grid_hook = nullptr) {
  int halvings = 0;
  double vmax = max_particle_speed(st);
  while (halvings < st.max_cfl_halvings &&
         vmax * st.dt / (1 << halvings) > st.cfl_factor * st.grid.h)
    ++halvings;
  if (vmax * st.dt / (1 << halvings) > st.cfl_factor * st.grid.h)
    throw SimulationDiverged("CFL violation persists after max substep halvings");

  int cycles = 1 << halvings;
  double dt_full = st.dt;
  st.dt = dt_full / cycles;
  for (int c = 0; c < cycles; ++c) {
    st.grid.clear();
    std::fill(st.ext_force.begin(), st.ext_force.end(), Vec3::Zero());
    if (particle_hook) particle_hook(st);
    p2g(st);
    if (grid_hook) grid_hook(st);
    grid_update(st);
    g2p_advect(st);
  }
  st.dt = dt_full;
  return cycles;
}

}  // namespace msim
