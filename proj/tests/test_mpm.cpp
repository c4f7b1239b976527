#include "msim/mpm.hpp"

#include <gtest/gtest.h>

#include "msim/seeding.hpp"
#include "test_util.hpp"

using namespace msim;
namespace tu = msim::testutil;

namespace {

// Direct quadratic B-spline evaluation, the weight oracle.
double bspline(double x) {
  double a = std::abs(x);
  if (a < 0.5) return 0.75 - a * a;
  if (a < 1.5) return 0.5 * (1.5 - a) * (1.5 - a);
  return 0.0;
}

SoftState make_state(int dims = 32, double h = 0.01) {
  SoftState st;
  st.grid.h = h;
  st.grid.dims = Eigen::Vector3i(dims, dims, dims);
  st.grid.origin = Vec3::Zero();
  st.materials = {soft_clay(), stiff_clay()};
  st.gravity = Vec3::Zero();
  st.dt = 1e-4;
  return st;
}

void add_particle(SoftState& st, const Vec3& x, const Vec3& v = Vec3::Zero(),
                  double mass = 1e-4, int mat = 0) {
  Particle p;
  p.x = x;
  p.v = v;
  p.mass = mass;
  p.volume0 = kSoftClayParticleVolume;
  p.material = mat;
  st.particles.push_back(p);
}

void seed_random_cloud(SoftState& st, int n, std::mt19937_64& g) {
  double lo = 4 * st.grid.h, hi = (st.grid.dims.x() - 5) * st.grid.h;
  for (int i = 0; i < n; ++i)
    add_particle(st, tu::random_vec3(g, lo, hi), tu::random_vec3(g, -0.5, 0.5),
                 tu::uniform(g, 1e-5, 1e-3));
}

double total_grid_mass(const SoftState& st) {
  double m = 0;
  for (double v : st.grid.mass) m += v;
  return m;
}

Vec3 total_grid_momentum(const SoftState& st) {
  Vec3 p = Vec3::Zero();
  for (const Vec3& v : st.grid.momentum) p += v;
  return p;
}

}  // namespace

TEST(P2g, RestMassAndMomentum) {
  SoftState st = make_state();
  auto g = tu::rng(20);
  seed_random_cloud(st, 500, g);
  for (Particle& p : st.particles) p.v.setZero();
  st.init_buffers();
  p2g(st);
  double mp = 0;
  for (const Particle& p : st.particles) mp += p.mass;
  EXPECT_NEAR(total_grid_mass(st), mp, 1e-12 * mp);
  EXPECT_LT(total_grid_momentum(st).norm(), 1e-14);
}

TEST(P2g, SingleParticleOnNodeMomentum) {
  SoftState st = make_state();
  Vec3 node = st.grid.node_pos(10, 10, 10);
  add_particle(st, node, Vec3(1, 0, 0), 2e-4);
  st.init_buffers();
  p2g(st);
  Vec3 mom = total_grid_momentum(st);
  EXPECT_LT((mom - Vec3(2e-4, 0, 0)).norm(), 1e-16);
}

TEST(P2g, WeightsMatchBsplineOracle) {
  SoftState st = make_state();
  double h = st.grid.h;
  Vec3 node = st.grid.node_pos(12, 12, 12);
  // Two particles symmetric about the node.
  Vec3 off(0.3 * h, 0.12 * h, -0.2 * h);
  add_particle(st, node + off, Vec3::Zero(), 1e-4);
  add_particle(st, node - off, Vec3::Zero(), 1e-4);
  st.init_buffers();
  p2g(st);
  std::size_t ni = st.grid.node_index(12, 12, 12);
  double w_oracle = 1.0;
  for (int ax = 0; ax < 3; ++ax) w_oracle *= bspline(off[ax] / h);
  EXPECT_NEAR(st.grid.mass[ni], 2 * 1e-4 * w_oracle, 1e-15);
}

TEST(P2g, PartitionOfUnity) {
  SoftState st = make_state();
  auto g = tu::rng(21);
  seed_random_cloud(st, 200, g);
  st.init_buffers();
  p2g(st);
  // Partition of unity implies exact mass conservation node-wise.
  double mp = 0;
  for (const Particle& p : st.particles) mp += p.mass;
  EXPECT_NEAR(total_grid_mass(st), mp, 1e-12 * mp);
  // And direct weight sums for a few particles.
  for (int ip = 0; ip < 10; ++ip) {
    const auto& w = st.scratch.w[ip];
    double sum = 0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) sum += w[0][a] * w[1][b] * w[2][c];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(P2g, MomentumConservation) {
  SoftState st = make_state(48);
  auto g = tu::rng(22);
  seed_random_cloud(st, 1000, g);
  st.init_buffers();
  Vec3 pp = Vec3::Zero();
  for (const Particle& p : st.particles) pp += p.mass * p.v;
  p2g(st);
  EXPECT_LT((total_grid_momentum(st) - pp).norm(), 1e-10 * pp.norm());
}

TEST(P2g, LostParticleFlagged) {
  SoftState st = make_state();
  st.lost_fraction_threshold = 1.0;  // count, don't throw
  add_particle(st, Vec3(-1, 0, 0));
  add_particle(st, st.grid.node_pos(10, 10, 10));
  st.init_buffers();
  p2g(st);
  EXPECT_EQ(st.lost_count, 1u);
  EXPECT_TRUE(st.lost[0]);
  EXPECT_FALSE(st.lost[1]);
}

TEST(P2g, LostFractionThresholdThrows) {
  SoftState st = make_state();
  st.lost_fraction_threshold = 0.01;
  add_particle(st, Vec3(-1, 0, 0));
  add_particle(st, st.grid.node_pos(10, 10, 10));
  st.init_buffers();
  EXPECT_THROW(p2g(st), SimulationDiverged);
}

TEST(GridUpdate, ZeroMassNodeStaysZero) {
  SoftState st = make_state();
  add_particle(st, st.grid.node_pos(10, 10, 10));
  st.init_buffers();
  p2g(st);
  grid_update(st);
  EXPECT_LT(st.grid.velocity[st.grid.node_index(20, 20, 20)].norm(), 1e-300);
}

TEST(GridUpdate, AnalyticIntegration) {
  SoftState st = make_state();
  st.gravity = Vec3(0, 0, -9.81);
  st.dt = 2e-4;
  Vec3 node = st.grid.node_pos(10, 10, 10);
  add_particle(st, node, Vec3(0.3, 0, 0), 5e-4);
  st.init_buffers();
  p2g(st);
  grid_update(st);
  std::size_t ni = st.grid.node_index(10, 10, 10);
  // v = p/m + g*dt (no internal force for F = I).
  Vec3 oracle = st.grid.momentum[ni] / st.grid.mass[ni] + st.gravity * st.dt;
  EXPECT_LT((st.grid.velocity[ni] - oracle).norm(), 1e-15);
}

TEST(GridUpdate, StickyFloorZeroesVelocity) {
  SoftState st = make_state();
  st.grid.boundary[4] = BoundaryKind::Sticky;  // z-
  add_particle(st, st.grid.node_pos(10, 10, 1), Vec3(0, 0, -1.0), 1e-4);
  st.init_buffers();
  p2g(st);
  grid_update(st);
  EXPECT_LT(st.grid.velocity[st.grid.node_index(10, 10, 1)].norm(), 1e-300);
}

TEST(GridUpdate, SlipFloorKeepsTangential) {
  SoftState st = make_state();
  st.grid.boundary[4] = BoundaryKind::Slip;
  add_particle(st, st.grid.node_pos(10, 10, 1), Vec3(0.7, 0, -1.0), 1e-4);
  st.init_buffers();
  p2g(st);
  grid_update(st);
  Vec3 v = st.grid.velocity[st.grid.node_index(10, 10, 1)];
  EXPECT_GT(v.x(), 0.0);
  EXPECT_DOUBLE_EQ(v.z(), 0.0);
}

TEST(G2p, UniformFieldReproduced) {
  SoftState st = make_state();
  auto g = tu::rng(23);
  seed_random_cloud(st, 100, g);
  st.init_buffers();
  p2g(st);
  Vec3 v0(0.3, -0.2, 0.15);
  for (auto& v : st.grid.velocity) v = v0;
  double dt = st.dt;
  st.dt = 0.0;  // isolate the transfer
  g2p_advect(st);
  st.dt = dt;
  for (const Particle& p : st.particles) {
    EXPECT_LT((p.v - v0).norm(), 1e-12);
    EXPECT_LT(p.C.norm(), 1e-10);
  }
}

TEST(G2p, LinearFieldRecoversGradient) {
  SoftState st = make_state(48);
  auto g = tu::rng(24);
  // Interior particles only.
  double lo = 8 * st.grid.h, hi = (st.grid.dims.x() - 9) * st.grid.h;
  for (int i = 0; i < 100; ++i) add_particle(st, tu::random_vec3(g, lo, hi));
  st.init_buffers();
  p2g(st);
  Mat3 a;
  a << 0.1, 0.3, -0.2, 0.0, -0.1, 0.25, 0.4, 0.05, 0.2;
  for (int k = 0; k < st.grid.dims.z(); ++k)
    for (int j = 0; j < st.grid.dims.y(); ++j)
      for (int i = 0; i < st.grid.dims.x(); ++i)
        st.grid.velocity[st.grid.node_index(i, j, k)] = a * st.grid.node_pos(i, j, k);
  double dt = st.dt;
  st.dt = 0.0;
  g2p_advect(st);
  st.dt = dt;
  for (const Particle& p : st.particles) EXPECT_LT((p.C - a).norm(), 1e-8);
}

TEST(G2p, ZeroDtLeavesPositionsAndF) {
  SoftState st = make_state();
  auto g = tu::rng(25);
  seed_random_cloud(st, 50, g);
  st.init_buffers();
  std::vector<Vec3> x0;
  for (const Particle& p : st.particles) x0.push_back(p.x);
  p2g(st);
  grid_update(st);
  st.dt = 0.0;
  g2p_advect(st);
  for (std::size_t i = 0; i < st.particles.size(); ++i) {
    EXPECT_EQ(st.particles[i].x, x0[i]);
    EXPECT_EQ(st.particles[i].F, Mat3::Identity());
  }
}

TEST(Stress, IdentityAndRotationGiveZero) {
  Material m = soft_clay();
  EXPECT_LT(kirchhoff_stress(Mat3::Identity(), m).norm(), 1e-12);
  auto g = tu::rng(26);
  Mat3 r = tu::random_quat(g).toRotationMatrix();
  EXPECT_LT(kirchhoff_stress(r, m).norm(), 1e-9);
}

TEST(Stress, SmallStrainMatchesLinearElasticity) {
  Material m;
  m.youngs = 1e4;
  m.poisson = 0.3;
  double e = 1e-3;
  Mat3 f = Mat3::Identity();
  f(0, 0) = 1.0 + e;
  Mat3 tau = kirchhoff_stress(f, m);
  double oracle = (2.0 * m.mu() + m.lambda()) * e;
  EXPECT_NEAR(tau(0, 0), oracle, 0.01 * std::abs(oracle));
}

TEST(Stress, NonInvertibleThrows) {
  Mat3 f = Mat3::Identity();
  f(2, 2) = 0.0;
  EXPECT_THROW(kirchhoff_stress(f, soft_clay()), std::invalid_argument);
}

TEST(ReturnMap, InsideYieldUnchanged) {
  Material m = soft_clay();
  m.yield_stress = 1e4;
  Mat3 f = Mat3::Identity();
  f(0, 1) = 1e-4;
  EXPECT_EQ(von_mises_return_map(f, m), f);
}

TEST(ReturnMap, PureDilationUnchanged) {
  for (double sy : {2e3, 1e4}) {
    Material m = soft_clay();
    m.yield_stress = sy;
    Mat3 f = 1.3 * Mat3::Identity();
    EXPECT_EQ(von_mises_return_map(f, m), f);
  }
}

TEST(ReturnMap, ProjectsOntoYieldSurface) {
  auto g = tu::rng(27);
  for (double sy : {2e3, 1e4}) {
    Material m = soft_clay();
    m.yield_stress = sy;
    for (int i = 0; i < 200; ++i) {
      // Large random shear/stretch trial, well past yield.
      Mat3 f = Mat3::Identity() + 0.2 * Mat3::Random();
      if (f.determinant() <= 0.1) continue;
      Mat3 fp = von_mises_return_map(f, m);
      Mat3 tau = kirchhoff_stress(fp, m);
      Mat3 dev = tau - (tau.trace() / 3.0) * Mat3::Identity();
      double threshold = std::sqrt(2.0 / 3.0) * sy;
      if (kirchhoff_stress(f, m).norm() > 0) {
        Mat3 tau_trial = kirchhoff_stress(f, m);
        Mat3 dev_trial = tau_trial - (tau_trial.trace() / 3.0) * Mat3::Identity();
        if (dev_trial.norm() > threshold) {
          // Closed-form radial return: projected deviatoric norm = threshold.
          EXPECT_NEAR(dev.norm(), threshold, 1e-6 * threshold);
        }
        // Projection never increases the deviatoric norm.
        EXPECT_LE(dev.norm(), dev_trial.norm() * (1 + 1e-12));
      }
      // Volume preserved.
      EXPECT_NEAR(fp.determinant(), f.determinant(), 1e-9 * std::abs(f.determinant()));
    }
  }
}

TEST(Substep, FreeFallOracle) {
  SoftState st = make_state();
  st.gravity = Vec3(0, 0, -9.81);
  st.dt = 1e-4;
  add_particle(st, st.grid.node_pos(16, 16, 24));
  st.init_buffers();
  int n = 50;
  for (int i = 0; i < n; ++i) soft_substep(st);
  Vec3 oracle = st.gravity * (n * st.dt);
  EXPECT_LT((st.particles[0].v - oracle).norm(), 1e-10);
}

TEST(Substep, RestStateUnchangedWithoutGravity) {
  SoftState st = make_state();
  auto g = tu::rng(28);
  double lo = 6 * st.grid.h, hi = (st.grid.dims.x() - 7) * st.grid.h;
  for (int i = 0; i < 100; ++i) add_particle(st, tu::random_vec3(g, lo, hi));
  st.init_buffers();
  std::vector<Vec3> x0;
  for (const Particle& p : st.particles) x0.push_back(p.x);
  for (int i = 0; i < 5; ++i) soft_substep(st);
  for (std::size_t i = 0; i < st.particles.size(); ++i) {
    EXPECT_LT((st.particles[i].x - x0[i]).norm(), 1e-12);
    EXPECT_LT(st.particles[i].v.norm(), 1e-12);
  }
}

TEST(Substep, FullCycleMomentumConservation) {
  // Force-free transfer cycle away from boundaries preserves momentum.
  SoftState st = make_state(48);
  auto g = tu::rng(29);
  double lo = 10 * st.grid.h, hi = (st.grid.dims.x() - 11) * st.grid.h;
  for (int i = 0; i < 500; ++i) {
    Particle p;
    p.x = tu::random_vec3(g, lo, hi);
    p.v = tu::random_vec3(g, -0.1, 0.1);
    p.mass = tu::uniform(g, 1e-5, 1e-4);
    st.particles.push_back(p);
  }
  st.init_buffers();
  Vec3 before = Vec3::Zero();
  for (const Particle& p : st.particles) before += p.mass * p.v;
  // Disable internal forces by keeping F = I: single transfer cycle, dt tiny.
  st.dt = 1e-8;
  soft_substep(st);
  Vec3 after = Vec3::Zero();
  for (const Particle& p : st.particles) after += p.mass * p.v;
  EXPECT_LT((after - before).norm(), 1e-8 * before.norm());
}

TEST(Substep, CflHalvesInternally) {
  SoftState st = make_state();
  add_particle(st, st.grid.node_pos(16, 16, 16), Vec3(10.0, 0, 0));  // fast
  st.init_buffers();
  st.dt = 1e-3;  // vmax*dt = 1e-2 > 0.4*h = 4e-3
  int cycles = soft_substep(st);
  EXPECT_GE(cycles, 2);
}

TEST(Substep, CflErrorAfterMaxHalvings) {
  SoftState st = make_state();
  add_particle(st, st.grid.node_pos(16, 16, 16), Vec3(500.0, 0, 0));
  st.init_buffers();
  st.dt = 1e-3;
  EXPECT_THROW(soft_substep(st), SimulationDiverged);
}

TEST(Substep, DeterministicAcrossThreadCounts) {
  auto run = [](int threads) {
    worker_threads() = threads;
    SoftState st = make_state();
    st.gravity = Vec3(0, 0, -9.81);
    std::mt19937_64 g(7);
    st.materials = {soft_clay()};
    seed_particles_box(st, Vec3(0.1, 0.1, 0.05), Vec3(0.16, 0.16, 0.11), 0,
                       kStiffClayParticleVolume, g);
    st.init_buffers();
    for (int i = 0; i < 20; ++i) soft_substep(st);
    worker_threads() = 1;
    return st;
  };
  SoftState a = run(1), b = run(3), c = run(8);
  ASSERT_EQ(a.particles.size(), b.particles.size());
  for (std::size_t i = 0; i < a.particles.size(); ++i) {
    EXPECT_EQ(a.particles[i].x, b.particles[i].x);
    EXPECT_EQ(a.particles[i].x, c.particles[i].x);
    EXPECT_EQ(a.particles[i].F, b.particles[i].F);
  }
}

TEST(Material, Table5RangeValidation) {
  Material m = soft_clay();
  EXPECT_NO_THROW(m.validate());
  m.poisson = 0.5;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  Material bad = stiff_clay();
  bad.youngs = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
