#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "msim/scenario.hpp"
#include "test_util.hpp"

namespace msim {
namespace {

Particle particle_at(const Vec3& x, const Vec3& v = Vec3::Zero()) {
  Particle p;
  p.x = x;
  p.v = v;
  p.mass = 1e-4;
  p.volume0 = 1e-7;
  return p;
}

const RegionBox kUnitRegion{Vec3::Zero(), Vec3::Ones()};

// ---------------------------------------------------------------------------
// Fill metric.

TEST(Fill, AllInsideAtRestSucceeds) {
  std::vector<Particle> ps;
  for (int i = 0; i < 10; ++i) ps.push_back(particle_at(Vec3(0.1 * i + 0.05, 0.5, 0.5)));
  FillResult r = metric_fill(ps, kUnitRegion);
  EXPECT_DOUBLE_EQ(r.fraction, 1.0);
  EXPECT_DOUBLE_EQ(r.max_speed, 0.0);
  EXPECT_TRUE(r.success);
}

TEST(Fill, NoneInsideFails) {
  std::vector<Particle> ps = {particle_at(Vec3(2, 2, 2)), particle_at(Vec3(-1, 0, 0))};
  FillResult r = metric_fill(ps, kUnitRegion);
  EXPECT_DOUBLE_EQ(r.fraction, 0.0);
  EXPECT_FALSE(r.success);
}

TEST(Fill, NinetyOnePercentInsideIsSuccessAtTheBoundary) {
  std::vector<Particle> ps;
  for (int i = 0; i < 91; ++i) ps.push_back(particle_at(Vec3(0.5, 0.5, 0.5)));
  for (int i = 0; i < 9; ++i) ps.push_back(particle_at(Vec3(5, 5, 5)));
  FillResult r = metric_fill(ps, kUnitRegion);
  EXPECT_DOUBLE_EQ(r.fraction, 0.91);
  EXPECT_TRUE(r.success);
  // One fewer inside sits exactly at 0.9, which the strict > rejects.
  ps[0].x = Vec3(5, 5, 5);
  EXPECT_FALSE(metric_fill(ps, kUnitRegion).success);
}

TEST(Fill, FastParticleBreaksSuccess) {
  std::vector<Particle> ps = {particle_at(Vec3(0.5, 0.5, 0.5), Vec3(0.06, 0, 0))};
  FillResult r = metric_fill(ps, kUnitRegion);
  EXPECT_DOUBLE_EQ(r.fraction, 1.0);
  EXPECT_NEAR(r.max_speed, 0.06, 1e-15);
  EXPECT_FALSE(r.success);
}

TEST(Fill, FractionInvariantUnderReordering) {
  auto g = testutil::rng(7);
  std::vector<Particle> ps;
  for (int i = 0; i < 200; ++i) ps.push_back(particle_at(testutil::random_vec3(g, -0.5, 1.5)));
  FillResult a = metric_fill(ps, kUnitRegion);
  std::reverse(ps.begin(), ps.end());
  FillResult b = metric_fill(ps, kUnitRegion);
  EXPECT_DOUBLE_EQ(a.fraction, b.fraction);
  EXPECT_DOUBLE_EQ(a.max_speed, b.max_speed);
}

TEST(Fill, EmptyInputThrows) {
  EXPECT_THROW(metric_fill({}, kUnitRegion), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Heightmap rasterizer.

TEST(Heightmap, NoParticlesAllZeros) {
  DepthMap m = render_heightmap({}, kUnitRegion, 4, 4);
  EXPECT_EQ(m.samples.size(), 16u);
  for (double s : m.samples) EXPECT_DOUBLE_EQ(s, 0.0);
}

TEST(Heightmap, SingleParticleFillsExactlyItsCell) {
  // Direct-binning oracle: cell index recomputed by hand from the layout.
  Vec3 x(0.30, 0.77, 0.42);
  DepthMap m = render_heightmap({particle_at(x)}, kUnitRegion, 5, 4);
  int ci = static_cast<int>(x.x() / 0.2), cj = static_cast<int>(x.y() / 0.25);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 5; ++i)
      EXPECT_DOUBLE_EQ(m.at(i, j), (i == ci && j == cj) ? 0.42 : 0.0);
}

TEST(Heightmap, SameCellTakesMaxHeight) {
  std::vector<Particle> ps = {particle_at(Vec3(0.1, 0.1, 0.3)), particle_at(Vec3(0.12, 0.11, 0.8))};
  DepthMap m = render_heightmap(ps, kUnitRegion, 4, 4);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 0.8);
}

TEST(Heightmap, PermutationInvariantAndMonotone) {
  auto g = testutil::rng(11);
  std::vector<Particle> ps;
  for (int i = 0; i < 300; ++i) ps.push_back(particle_at(testutil::random_vec3(g, 0.0, 1.0)));
  DepthMap a = render_heightmap(ps, kUnitRegion, 6, 6);
  std::shuffle(ps.begin(), ps.end(), g);
  DepthMap b = render_heightmap(ps, kUnitRegion, 6, 6);
  EXPECT_EQ(a.samples, b.samples);
  // Adding a particle never lowers any cell.
  ps.push_back(particle_at(Vec3(0.5, 0.5, 0.99)));
  DepthMap c = render_heightmap(ps, kUnitRegion, 6, 6);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_GE(c.samples[i], b.samples[i]);
}

TEST(Heightmap, ParticlesOutsideRegionIgnored) {
  DepthMap m = render_heightmap({particle_at(Vec3(1.5, 0.5, 0.5))}, kUnitRegion, 4, 4);
  for (double s : m.samples) EXPECT_DOUBLE_EQ(s, 0.0);
}

TEST(Heightmap, TooCoarseResolutionThrows) {
  EXPECT_THROW(render_heightmap({}, kUnitRegion, 1, 4), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Write IoU.

DepthMap map_from(std::initializer_list<double> vals, int nx, int ny, double threshold) {
  DepthMap m;
  m.nx = nx;
  m.ny = ny;
  m.cell = 0.01;
  m.threshold = threshold;
  m.samples.assign(vals);
  return m;
}

TEST(WriteIou, IdenticalMapsScoreOne) {
  DepthMap m = map_from({0.1, 0.0, 0.2, 0.0, 0.1, 0.2}, 3, 2, 0.05);
  IouResult r = metric_write_iou(m, m);
  EXPECT_DOUBLE_EQ(r.iou, 1.0);
  EXPECT_TRUE(r.success);
}

TEST(WriteIou, DisjointOccupancyScoresZero) {
  DepthMap a = map_from({0.0, 0.1, 0.0, 0.1}, 2, 2, 0.05);
  DepthMap b = map_from({0.1, 0.0, 0.1, 0.0}, 2, 2, 0.05);
  IouResult r = metric_write_iou(a, b);
  EXPECT_DOUBLE_EQ(r.iou, 0.0);
  EXPECT_FALSE(r.success);
}

TEST(WriteIou, BothEmptyDefinedAsOne) {
  DepthMap a = map_from({0.1, 0.1, 0.1, 0.1}, 2, 2, 0.05);
  IouResult r = metric_write_iou(a, a);
  EXPECT_DOUBLE_EQ(r.iou, 1.0);
}

TEST(WriteIou, MatchesBruteForceCountingOracle) {
  auto g = testutil::rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    DepthMap a, b;
    a.nx = b.nx = 7;
    a.ny = b.ny = 5;
    a.threshold = b.threshold = 0.5;
    for (int i = 0; i < 35; ++i) {
      a.samples.push_back(testutil::uniform(g, 0.0, 1.0));
      b.samples.push_back(testutil::uniform(g, 0.0, 1.0));
    }
    std::size_t inter = 0, uni = 0;
    for (int i = 0; i < 35; ++i) {
      bool oa = a.samples[i] < 0.5, ob = b.samples[i] < 0.5;
      if (oa && ob) ++inter;
      if (oa || ob) ++uni;
    }
    double expect = uni == 0 ? 1.0 : double(inter) / double(uni);
    EXPECT_DOUBLE_EQ(metric_write_iou(a, b).iou, expect);
  }
}

TEST(WriteIou, ResolutionMismatchThrows) {
  DepthMap a = map_from({0, 0, 0, 0}, 2, 2, 0.5);
  DepthMap b = map_from({0, 0, 0, 0, 0, 0}, 3, 2, 0.5);
  EXPECT_THROW(metric_write_iou(a, b), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Chamfer distance.

double chamfer_brute(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  auto side = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).norm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return side(a, b) + side(b, a);
}

TEST(Chamfer, EqualSetsAreZero) {
  auto g = testutil::rng(17);
  std::vector<Vec3> a;
  for (int i = 0; i < 50; ++i) a.push_back(testutil::random_vec3(g));
  EXPECT_DOUBLE_EQ(chamfer_distance(a, a), 0.0);
}

TEST(Chamfer, UnitSeparationSumsToTwo) {
  std::vector<Vec3> a = {Vec3(0, 0, 0)}, b = {Vec3(0, 0, 1)};
  EXPECT_DOUBLE_EQ(chamfer_distance(a, b), 2.0);
}

TEST(Chamfer, MatchesBruteForceOracle) {
  auto g = testutil::rng(19);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(testutil::random_vec3(g, 0.0, 0.2));
    b.push_back(testutil::random_vec3(g, 0.05, 0.25));
  }
  EXPECT_NEAR(chamfer_distance(a, b), chamfer_brute(a, b), 1e-12);
}

TEST(Chamfer, SymmetricAndNonNegative) {
  auto g = testutil::rng(23);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 80; ++i) a.push_back(testutil::random_vec3(g));
  for (int i = 0; i < 120; ++i) b.push_back(testutil::random_vec3(g));
  double ab = chamfer_distance(a, b);
  EXPECT_DOUBLE_EQ(ab, chamfer_distance(b, a));
  EXPECT_GT(ab, 0.0);
}

TEST(Chamfer, EmptySetThrows) {
  EXPECT_THROW(chamfer_distance({}, {Vec3::Zero()}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Pinch metric.

TEST(Pinch, CurrentEqualsTargetSucceeds) {
  std::vector<Vec3> init = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  std::vector<Vec3> target = {Vec3(0, 0, 1), Vec3(1, 0, 1)};
  PinchResult r = metric_pinch(target, init, target);
  EXPECT_DOUBLE_EQ(r.ratio, 0.0);
  EXPECT_TRUE(r.success);
}

TEST(Pinch, CurrentEqualsInitialFails) {
  std::vector<Vec3> init = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  std::vector<Vec3> target = {Vec3(0, 0, 1), Vec3(1, 0, 1)};
  PinchResult r = metric_pinch(init, init, target);
  EXPECT_DOUBLE_EQ(r.ratio, 1.0);
  EXPECT_FALSE(r.success);
}

TEST(Pinch, HalfwayInterpolationMatchesBruteForceRatio) {
  auto g = testutil::rng(29);
  std::vector<Vec3> init, target, current;
  for (int i = 0; i < 60; ++i) {
    Vec3 a = testutil::random_vec3(g, 0.0, 0.1);
    Vec3 b = a + Vec3(0.05, 0.0, 0.02);
    init.push_back(a);
    target.push_back(b);
    current.push_back(0.5 * (a + b));
  }
  PinchResult r = metric_pinch(current, init, target);
  double expect = chamfer_brute(current, target) / chamfer_brute(init, target);
  EXPECT_NEAR(r.ratio, expect, 1e-12);
  EXPECT_EQ(r.success, r.ratio < 0.3);
}

// ---------------------------------------------------------------------------
// Depth-map file I/O.

TEST(DepthMapIo, BinaryRoundTrip) {
  auto g = testutil::rng(31);
  DepthMap m;
  m.nx = 6;
  m.ny = 4;
  m.cell = 0.0125;
  m.threshold = 0.033;
  for (int i = 0; i < 24; ++i)
    m.samples.push_back(static_cast<float>(testutil::uniform(g, 0.0, 0.1)));
  std::string path = testing::TempDir() + "/roundtrip.msdep";
  save_depth_map(m, path);
  DepthMap r = load_depth_map(path);
  EXPECT_EQ(r.nx, m.nx);
  EXPECT_EQ(r.ny, m.ny);
  EXPECT_DOUBLE_EQ(r.cell, m.cell);
  EXPECT_DOUBLE_EQ(r.threshold, m.threshold);
  EXPECT_EQ(r.samples, m.samples);  // f32 payload survives exactly
  std::remove(path.c_str());
}

TEST(DepthMapIo, BadMagicRejected) {
  std::string path = testing::TempDir() + "/bad.msdep";
  std::ofstream(path, std::ios::binary) << "NOTDEPxxxxxxxxxxxxxxxxxxxxxxxx";
  EXPECT_THROW(load_depth_map(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(DepthMapIo, TruncatedFileRejected) {
  DepthMap m = map_from({0.1, 0.2, 0.3, 0.4}, 2, 2, 0.05);
  std::string path = testing::TempDir() + "/trunc.msdep";
  save_depth_map(m, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(load_depth_map(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(DepthMapIo, PgmHeaderAndDims) {
  DepthMap m = map_from({0.0, 0.1, 0.2, 0.3, 0.4, 0.5}, 3, 2, 0.05);
  std::string path = testing::TempDir() + "/map.pgm";
  save_depth_map_pgm(m, path);
  std::ifstream f(path);
  std::string magic;
  int nx = 0, ny = 0, maxval = 0;
  f >> magic >> nx >> ny >> maxval;
  EXPECT_EQ(magic, "P2");
  EXPECT_EQ(nx, 3);
  EXPECT_EQ(ny, 2);
  EXPECT_EQ(maxval, 255);
  std::remove(path.c_str());
}

// ---------------------------------------------------------------------------
// Golden scenes. Full scripted metric runs live in the acceptance binary;
// here each scene is smoked for a prefix of its script.

TEST(GoldenScenes, NamesMatchDispatcher) {
  for (const std::string& name : golden_scene_names())
    EXPECT_EQ(make_golden_scene(name).name, name);
  EXPECT_THROW(make_golden_scene("no-such-scene"), std::invalid_argument);
}

TEST(GoldenScenes, SmokePrefixStaysFinite) {
  for (const std::string& name : golden_scene_names()) {
    SCOPED_TRACE(name);
    GoldenScene s = make_golden_scene(name);
    ASSERT_FALSE(s.world.soft.particles.empty());
    std::size_t steps = std::min<std::size_t>(s.script.size(), 20);
    for (std::size_t i = 0; i < steps; ++i) {
      StepReport rep = env_step(s.world, s.script[i]);
      EXPECT_EQ(rep.lost_particles, 0u);
    }
    for (const Particle& p : s.world.soft.particles) {
      ASSERT_TRUE(p.x.allFinite());
      ASSERT_TRUE(p.v.allFinite());
    }
  }
}

TEST(GoldenScenes, ConstructionIsDeterministic) {
  for (const std::string& name : golden_scene_names()) {
    GoldenScene a = make_golden_scene(name);
    GoldenScene b = make_golden_scene(name);
    EXPECT_EQ(state_hash(a.world), state_hash(b.world)) << name;
  }
}

TEST(GoldenScenes, WriteTargetPatternIsANonTrivialBar) {
  GoldenScene s = make_golden_scene("write-mini");
  std::size_t occ = 0;
  for (std::size_t i = 0; i < s.write_target.samples.size(); ++i)
    occ += s.write_target.occupied(i);
  EXPECT_GT(occ, 0u);
  EXPECT_LT(occ, s.write_target.samples.size());
}

TEST(KineticEnergy, SumsHalfMvSquared) {
  SoftState st;
  st.particles = {particle_at(Vec3::Zero(), Vec3(1, 0, 0)), particle_at(Vec3::Zero(), Vec3(0, 2, 0))};
  EXPECT_DOUBLE_EQ(kinetic_energy(st), 0.5 * 1e-4 * 1.0 + 0.5 * 1e-4 * 4.0);
}

}  // namespace
}  // namespace msim
