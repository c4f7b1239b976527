#pragma once

// Particle seeding on a jittered lattice inside axis-aligned source boxes.

#include "msim/mpm.hpp"

#include <random>

namespace msim {

/// Fills `box` with particles on a lattice of spacing V0^(1/3), jittered by
/// 0.25*spacing. Deterministic given the RNG state.
inline void seed_particles_box(SoftState& st, const Vec3& box_min, const Vec3& box_max,
                               int material_id, double particle_volume,
                               std::mt19937_64& rng) {
  const Material& mat = st.materials.at(material_id);
  double spacing = std::cbrt(particle_volume);
  std::uniform_real_distribution<double> jitter(-0.25 * spacing, 0.25 * spacing);
  Vec3 span = box_max - box_min;
  Eigen::Vector3i counts;
  for (int ax = 0; ax < 3; ++ax)
    counts[ax] = std::max(1, static_cast<int>(std::floor(span[ax] / spacing)));
  for (int k = 0; k < counts.z(); ++k)
    for (int j = 0; j < counts.y(); ++j)
      for (int i = 0; i < counts.x(); ++i) {
        Vec3 p = box_min + spacing * (Vec3(i, j, k) + Vec3::Constant(0.5));
        p += Vec3(jitter(rng), jitter(rng), jitter(rng));
        Particle pt;
        pt.x = p.cwiseMax(box_min).cwiseMin(box_max);
        pt.volume0 = particle_volume;
        pt.mass = mat.density * particle_volume;
        pt.material = material_id;
        st.particles.push_back(pt);
      }
}

/// Expected lattice particle count for a box, for config validation.
inline std::size_t lattice_count(const Vec3& box_min, const Vec3& box_max,
                                 double particle_volume) {
  double spacing = std::cbrt(particle_volume);
  Vec3 span = box_max - box_min;
  std::size_t n = 1;
  for (int ax = 0; ax < 3; ++ax)
    n *= static_cast<std::size_t>(std::max(1, static_cast<int>(std::floor(span[ax] / spacing))));
  return n;
}

}  // namespace msim
