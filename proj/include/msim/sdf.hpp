#pragma once

// Signed distance functions for analytic shapes and baked mesh volumes.
// Negative inside, positive outside. All queries are reentrant; shapes and
// volumes are immutable after construction.

#include "msim/geometry.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <variant>

namespace msim {

/// Dense SDF sample grid. Samples are stored x-fastest as f32 (file format
/// precision); interpolation is done in double.
struct SdfVolume {
  Vec3 origin = Vec3::Zero();
  double voxel = 0.01;
  Eigen::Vector3i dims = Eigen::Vector3i::Zero();  // sample counts per axis
  std::vector<float> samples;

  double at(int i, int j, int k) const {
    return samples[static_cast<std::size_t>((k * dims.y() + j)) * dims.x() + i];
  }

  Vec3 max_corner() const {
    return origin + voxel * Vec3(dims.x() - 1, dims.y() - 1, dims.z() - 1);
  }

  void validate() const {
    if (dims.minCoeff() < 2) throw std::invalid_argument("SdfVolume: dims must be >= 2 per axis");
    if (samples.size() != static_cast<std::size_t>(dims.x()) * dims.y() * dims.z())
      throw std::invalid_argument("SdfVolume: sample count mismatch");
    for (float s : samples)
      if (!std::isfinite(s)) throw std::invalid_argument("SdfVolume: non-finite sample");
  }

  /// Trilinear interpolation with clamped cell indices. Points outside the
  /// sampled box additionally pay the distance to the box.
  double interpolate(const Vec3& p) const {
    Vec3 local = (p - origin) / voxel;
    Vec3 cl = local.cwiseMax(Vec3::Zero()).cwiseMin(
        Vec3(dims.x() - 1.0, dims.y() - 1.0, dims.z() - 1.0));
    double outside = voxel * (local - cl).norm();
    int i0 = std::min(static_cast<int>(cl.x()), dims.x() - 2);
    int j0 = std::min(static_cast<int>(cl.y()), dims.y() - 2);
    int k0 = std::min(static_cast<int>(cl.z()), dims.z() - 2);
    double fx = cl.x() - i0, fy = cl.y() - j0, fz = cl.z() - k0;
    double c00 = at(i0, j0, k0) * (1 - fx) + at(i0 + 1, j0, k0) * fx;
    double c10 = at(i0, j0 + 1, k0) * (1 - fx) + at(i0 + 1, j0 + 1, k0) * fx;
    double c01 = at(i0, j0, k0 + 1) * (1 - fx) + at(i0 + 1, j0, k0 + 1) * fx;
    double c11 = at(i0, j0 + 1, k0 + 1) * (1 - fx) + at(i0 + 1, j0 + 1, k0 + 1) * fx;
    double c0 = c00 * (1 - fy) + c10 * fy;
    double c1 = c01 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz + outside;
  }
};

struct PlaneGeom {
  Vec3 normal{0, 0, 1};  // unit; solid fills the half-space below
  double offset = 0.0;   // signed distance of the surface from the origin
};
struct SphereGeom {
  double radius = 0.1;
};
struct BoxGeom {
  Vec3 half_extents{0.1, 0.1, 0.1};
};
struct CapsuleGeom {
  double half_length = 0.1;  // along local z
  double radius = 0.05;
};
struct VolumeGeom {
  std::shared_ptr<const SdfVolume> volume;
};

using ShapeGeom = std::variant<PlaneGeom, SphereGeom, BoxGeom, CapsuleGeom, VolumeGeom>;

/// Collision shape with contact material parameters, attached to a body at a
/// local pose.
struct Shape {
  ShapeGeom geom;
  Pose local_pose;
  double friction = 0.5;   // Coulomb mu
  double k_n = 1e3;        // normal contact stiffness, N/m
  double k_t = 10.0;       // tangential viscous stiffness, N*s/m

  void validate() const {
    if (friction < 0.0) throw std::invalid_argument("Shape: friction must be >= 0");
    if (k_n <= 0.0 || k_t <= 0.0) throw std::invalid_argument("Shape: stiffness must be > 0");
    if (const auto* s = std::get_if<SphereGeom>(&geom)) {
      if (s->radius <= 0.0) throw std::invalid_argument("Shape: sphere radius must be > 0");
    } else if (const auto* b = std::get_if<BoxGeom>(&geom)) {
      if (b->half_extents.minCoeff() <= 0.0)
        throw std::invalid_argument("Shape: box half-extents must be > 0");
    } else if (const auto* c = std::get_if<CapsuleGeom>(&geom)) {
      if (c->radius <= 0.0 || c->half_length <= 0.0)
        throw std::invalid_argument("Shape: capsule dimensions must be > 0");
    } else if (const auto* v = std::get_if<VolumeGeom>(&geom)) {
      if (!v->volume) throw std::invalid_argument("Shape: null volume");
      v->volume->validate();
    }
  }
};

namespace detail {

inline double sdf_local(const ShapeGeom& geom, const Vec3& p) {
  return std::visit(
      [&p](const auto& g) -> double {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, PlaneGeom>) {
          return g.normal.dot(p) - g.offset;
        } else if constexpr (std::is_same_v<T, SphereGeom>) {
          return p.norm() - g.radius;
        } else if constexpr (std::is_same_v<T, BoxGeom>) {
          Vec3 q = p.cwiseAbs() - g.half_extents;
          double outside = q.cwiseMax(0.0).norm();
          double inside = std::min(q.maxCoeff(), 0.0);
          return outside + inside;
        } else if constexpr (std::is_same_v<T, CapsuleGeom>) {
          Vec3 q(p.x(), p.y(), p.z() - std::clamp(p.z(), -g.half_length, g.half_length));
          return q.norm() - g.radius;
        } else {
          return g.volume->interpolate(p);
        }
      },
      geom);
}

/// Analytic gradients where cheap; central differences for volumes.
/// Gradient-ambiguous points (medial axis) resolve toward +x.
inline Vec3 sdf_gradient_local(const ShapeGeom& geom, const Vec3& p) {
  const Vec3 tie_break(1, 0, 0);
  return std::visit(
      [&](const auto& g) -> Vec3 {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, PlaneGeom>) {
          return g.normal;
        } else if constexpr (std::is_same_v<T, SphereGeom>) {
          double n = p.norm();
          return n < 1e-12 ? tie_break : Vec3(p / n);
        } else if constexpr (std::is_same_v<T, BoxGeom>) {
          Vec3 q = p.cwiseAbs() - g.half_extents;
          Vec3 sign(p.x() < 0 ? -1.0 : 1.0, p.y() < 0 ? -1.0 : 1.0, p.z() < 0 ? -1.0 : 1.0);
          Vec3 qpos = q.cwiseMax(0.0);
          double outside = qpos.norm();
          if (outside > 1e-12) return (sign.array() * qpos.array()).matrix() / outside;
          // Inside: gradient points through the nearest face; +x-most wins ties.
          int ax = 0;
          for (int k = 1; k < 3; ++k)
            if (q[k] > q[ax]) ax = k;
          Vec3 n = Vec3::Zero();
          n[ax] = sign[ax];
          return n;
        } else if constexpr (std::is_same_v<T, CapsuleGeom>) {
          Vec3 q(p.x(), p.y(), p.z() - std::clamp(p.z(), -g.half_length, g.half_length));
          double n = q.norm();
          return n < 1e-12 ? tie_break : Vec3(q / n);
        } else {
          double h = 0.5 * g.volume->voxel;
          Vec3 grad;
          for (int k = 0; k < 3; ++k) {
            Vec3 dp = Vec3::Zero();
            dp[k] = h;
            grad[k] = (g.volume->interpolate(p + dp) - g.volume->interpolate(p - dp)) / (2 * h);
          }
          double n = grad.norm();
          return n < 1e-12 ? tie_break : Vec3(grad / n);
        }
      },
      geom);
}

}  // namespace detail

/// Signed distance of a world point to a shape posed at `shape_world_pose`
/// (the composition of the owning body pose and the shape's local pose).
inline double sdf_eval(const Shape& shape, const Pose& shape_world_pose, const Vec3& p) {
  return detail::sdf_local(shape.geom, inverse(shape_world_pose).apply(p));
}

/// Canonical-frame evaluation.
inline double sdf_eval(const Shape& shape, const Vec3& p) {
  return sdf_eval(shape, shape.local_pose, p);
}

inline Vec3 sdf_gradient(const Shape& shape, const Pose& shape_world_pose, const Vec3& p) {
  Vec3 local = detail::sdf_gradient_local(shape.geom, inverse(shape_world_pose).apply(p));
  return shape_world_pose.rotation * local;
}

inline Vec3 sdf_gradient(const Shape& shape, const Vec3& p) {
  return sdf_gradient(shape, shape.local_pose, p);
}

// ---------------------------------------------------------------------------
// Triangle meshes and SDF baking.

struct Triangle {
  Vec3 a, b, c;
};

using TriangleMesh = std::vector<Triangle>;

namespace detail {

inline double point_triangle_distance(const Vec3& p, const Triangle& t) {
  // Ericson, Real-Time Collision Detection, closest point on triangle.
  Vec3 ab = t.b - t.a, ac = t.c - t.a, ap = p - t.a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return (p - t.a).norm();
  Vec3 bp = p - t.b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return (p - t.b).norm();
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (t.a + ab * (d1 / (d1 - d3)))).norm();
  Vec3 cp = p - t.c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return (p - t.c).norm();
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (t.a + ac * (d2 / (d2 - d6)))).norm();
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (t.b + (t.c - t.b) * w)).norm();
  }
  double denom = 1.0 / (va + vb + vc);
  Vec3 closest = t.a + ab * (vb * denom) + ac * (vc * denom);
  return (p - closest).norm();
}

inline bool ray_hits_triangle(const Vec3& orig, const Vec3& dir, const Triangle& t) {
  // Moller-Trumbore.
  Vec3 e1 = t.b - t.a, e2 = t.c - t.a;
  Vec3 pv = dir.cross(e2);
  double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return false;
  double inv = 1.0 / det;
  Vec3 tv = orig - t.a;
  double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return false;
  Vec3 qv = tv.cross(e1);
  double v = dir.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  double dist = e2.dot(qv) * inv;
  return dist > 0.0;
}

inline bool inside_by_parity(const TriangleMesh& mesh, const Vec3& p) {
  // Three-ray vote around +x to ride out near-degenerate hits.
  static const std::array<Vec3, 3> dirs = {
      Vec3(1.0, 0.0, 0.0).normalized(),
      Vec3(1.0, 0.137, 0.071).normalized(),
      Vec3(1.0, -0.083, 0.143).normalized(),
  };
  int votes = 0;
  for (const Vec3& d : dirs) {
    int crossings = 0;
    for (const Triangle& t : mesh)
      if (ray_hits_triangle(p, d, t)) ++crossings;
    if (crossings % 2 == 1) ++votes;
  }
  return votes >= 2;
}

}  // namespace detail

/// Bake a watertight triangle mesh into a dense SDF volume. Distances are
/// exact point-triangle distances; sign comes from ray-crossing parity.
inline SdfVolume bake_mesh_sdf(const TriangleMesh& mesh, double voxel, double padding) {
  if (mesh.empty()) throw std::invalid_argument("bake_mesh_sdf: empty mesh");
  if (voxel <= 0.0) throw std::invalid_argument("bake_mesh_sdf: voxel size must be > 0");
  bool degenerate = true;
  Vec3 lo = mesh[0].a, hi = mesh[0].a;
  for (const Triangle& t : mesh) {
    for (const Vec3* v : {&t.a, &t.b, &t.c}) {
      lo = lo.cwiseMin(*v);
      hi = hi.cwiseMax(*v);
    }
    if ((t.b - t.a).cross(t.c - t.a).norm() > 1e-14) degenerate = false;
  }
  if (degenerate) throw std::invalid_argument("bake_mesh_sdf: mesh has only zero-area triangles");

  SdfVolume vol;
  vol.voxel = voxel;
  vol.origin = lo - Vec3::Constant(padding);
  Vec3 span = hi - lo + Vec3::Constant(2.0 * padding);
  for (int k = 0; k < 3; ++k)
    vol.dims[k] = std::max(2, static_cast<int>(std::ceil(span[k] / voxel)) + 1);
  vol.samples.resize(static_cast<std::size_t>(vol.dims.x()) * vol.dims.y() * vol.dims.z());

  std::size_t idx = 0;
  for (int k = 0; k < vol.dims.z(); ++k)
    for (int j = 0; j < vol.dims.y(); ++j)
      for (int i = 0; i < vol.dims.x(); ++i, ++idx) {
        Vec3 p = vol.origin + voxel * Vec3(i, j, k);
        double d = std::numeric_limits<double>::max();
        for (const Triangle& t : mesh) d = std::min(d, detail::point_triangle_distance(p, t));
        vol.samples[idx] = static_cast<float>(detail::inside_by_parity(mesh, p) ? -d : d);
      }
  return vol;
}

// ---------------------------------------------------------------------------
// Mesh ingestion (STL ascii/binary, OBJ vertices+triangles) and volume cache.

namespace detail {

inline TriangleMesh load_stl_ascii(std::istream& in) {
  TriangleMesh mesh;
  std::string tok;
  std::vector<Vec3> verts;
  while (in >> tok) {
    if (tok == "vertex") {
      Vec3 v;
      in >> v.x() >> v.y() >> v.z();
      verts.push_back(v);
      if (verts.size() == 3) {
        mesh.push_back({verts[0], verts[1], verts[2]});
        verts.clear();
      }
    }
  }
  return mesh;
}

inline TriangleMesh load_stl_binary(std::istream& in) {
  char header[80];
  in.read(header, 80);
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  TriangleMesh mesh;
  mesh.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    float buf[12];
    in.read(reinterpret_cast<char*>(buf), sizeof(buf));
    if (!in) throw std::runtime_error("STL: truncated binary file");
    mesh.push_back({Vec3(buf[3], buf[4], buf[5]), Vec3(buf[6], buf[7], buf[8]),
                    Vec3(buf[9], buf[10], buf[11])});
    char attr[2];
    in.read(attr, 2);
  }
  return mesh;
}

}  // namespace detail

inline TriangleMesh load_stl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open STL file: " + path);
  char probe[6] = {};
  in.read(probe, 5);
  in.seekg(0);
  if (std::strncmp(probe, "solid", 5) == 0) {
    TriangleMesh mesh = detail::load_stl_ascii(in);
    if (!mesh.empty()) return mesh;
    in.clear();
    in.seekg(0);  // "solid"-prefixed binary file
  }
  return detail::load_stl_binary(in);
}

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open OBJ file: " + path);
  std::vector<Vec3> verts;
  TriangleMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      verts.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string f;
      while (ls >> f) idx.push_back(std::stoi(f.substr(0, f.find('/'))) - 1);
      for (std::size_t k = 2; k < idx.size(); ++k)  // fan triangulation
        mesh.push_back({verts.at(idx[0]), verts.at(idx[k - 1]), verts.at(idx[k])});
    }
  }
  return mesh;
}

inline TriangleMesh load_mesh(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "obj") return load_obj(path);
  return load_stl(path);
}

inline constexpr char kSdfVolumeMagic[] = "MSSDF1";

inline void save_sdf_volume(const SdfVolume& vol, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kSdfVolumeMagic, 6);
  std::uint32_t d[3] = {static_cast<std::uint32_t>(vol.dims.x()),
                        static_cast<std::uint32_t>(vol.dims.y()),
                        static_cast<std::uint32_t>(vol.dims.z())};
  out.write(reinterpret_cast<const char*>(d), sizeof(d));
  float hdr[4] = {static_cast<float>(vol.origin.x()), static_cast<float>(vol.origin.y()),
                  static_cast<float>(vol.origin.z()), static_cast<float>(vol.voxel)};
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(vol.samples.data()),
            static_cast<std::streamsize>(vol.samples.size() * sizeof(float)));
}

inline SdfVolume load_sdf_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::strncmp(magic, kSdfVolumeMagic, 6) != 0)
    throw std::runtime_error("bad SDF volume magic in " + path);
  std::uint32_t d[3];
  float hdr[4];
  in.read(reinterpret_cast<char*>(d), sizeof(d));
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  SdfVolume vol;
  vol.dims = Eigen::Vector3i(d[0], d[1], d[2]);
  vol.origin = Vec3(hdr[0], hdr[1], hdr[2]);
  vol.voxel = hdr[3];
  vol.samples.resize(static_cast<std::size_t>(d[0]) * d[1] * d[2]);
  in.read(reinterpret_cast<char*>(vol.samples.data()),
          static_cast<std::streamsize>(vol.samples.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated SDF volume file: " + path);
  vol.validate();
  return vol;
}

/// 12-triangle axis-aligned box mesh, handy for tests and scenes.
inline TriangleMesh make_box_mesh(const Vec3& half_extents, const Vec3& center = Vec3::Zero()) {
  const Vec3& h = half_extents;
  std::array<Vec3, 8> v;
  for (int i = 0; i < 8; ++i)
    v[i] = center + Vec3((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(),
                         (i & 4) ? h.z() : -h.z());
  // Outward-facing winding per face.
  const int f[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                        {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  TriangleMesh mesh;
  for (auto& tri : f) mesh.push_back({v[tri[0]], v[tri[1]], v[tri[2]]});
  return mesh;
}

}  // namespace msim
