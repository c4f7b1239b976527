#pragma once

// Built-in kinematic chains used by the scripted scenes and tests.

#include "msim/geometry.hpp"

namespace msim {

/// 7-DoF arm with alternating joint axes, roughly the proportions of a
/// desk-scale collaborative arm. Reach is about 0.85 m from the base.
inline KinematicChain default_arm_chain() {
  KinematicChain c;
  auto add = [&c](JointType t, const Vec3& off, const Vec3& axis, double lo, double hi) {
    Joint j;
    j.type = t;
    j.offset = Pose::from_translation(off);
    j.axis = axis;
    j.lower = lo;
    j.upper = hi;
    c.joints.push_back(j);
  };
  add(JointType::Revolute, {0.0, 0.0, 0.333}, {0, 0, 1}, -2.8973, 2.8973);
  add(JointType::Revolute, {0.0, 0.0, 0.0}, {0, 1, 0}, -1.7628, 1.7628);
  add(JointType::Revolute, {0.0, 0.0, 0.316}, {0, 0, 1}, -2.8973, 2.8973);
  add(JointType::Revolute, {0.0825, 0.0, 0.0}, {0, 1, 0}, -3.0718, -0.0698);
  add(JointType::Revolute, {-0.0825, 0.0, 0.384}, {0, 0, 1}, -2.8973, 2.8973);
  add(JointType::Revolute, {0.0, 0.0, 0.0}, {0, 1, 0}, -0.0175, 3.7525);
  add(JointType::Revolute, {0.088, 0.0, 0.0}, {0, 0, 1}, -2.8973, 2.8973);
  c.tcp_offset = Pose::from_translation({0.0, 0.0, 0.107});
  c.validate();
  return c;
}

/// Home configuration away from limits and singularities.
inline VecX default_arm_home() {
  VecX q(7);
  q << 0.0, -0.3, 0.0, -2.0, 0.0, 2.0, 0.8;
  return q;
}

/// Single vertical prismatic joint carrying a tool, used by the stamp and
/// pinch scenes.
inline KinematicChain lift_chain(double lo = -0.5, double hi = 0.5) {
  KinematicChain c;
  Joint j;
  j.type = JointType::Prismatic;
  j.offset = Pose::identity();
  j.axis = Vec3(0, 0, 1);
  j.lower = lo;
  j.upper = hi;
  c.joints.push_back(j);
  c.validate();
  return c;
}

/// Single prismatic joint along an arbitrary axis, used by the pouring scene.
inline KinematicChain slide_chain(const Vec3& axis, double lo = -0.5, double hi = 0.5) {
  KinematicChain c;
  Joint j;
  j.type = JointType::Prismatic;
  j.offset = Pose::identity();
  j.axis = axis.normalized();
  j.lower = lo;
  j.upper = hi;
  c.joints.push_back(j);
  c.validate();
  return c;
}

}  // namespace msim
