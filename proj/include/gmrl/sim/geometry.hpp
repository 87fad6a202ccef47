#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace gmrl::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

// Waypoint track: an optional leading straight, an optional
// counter-clockwise circular arc and a trailing straight. Progress outside
// [0, length] extrapolates along the end tangents.
class Track {
 public:
  Track() = default;

  static Track straight(Vec2 start, Vec2 direction, double length) {
    Track t;
    t.start_ = start;
    t.dir0_ = unit(direction);
    t.len0_ = length;
    t.radius_ = 0.0;
    t.sweep_ = 0.0;
    t.len2_ = 0.0;
    t.finish_setup();
    return t;
  }

  // Straight of `approach` metres, then a left turn of `radius` through
  // `sweep` radians, then `exit` metres straight.
  static Track left_turn(Vec2 start, Vec2 direction, double approach,
                         double radius, double sweep, double exit) {
    Track t;
    t.start_ = start;
    t.dir0_ = unit(direction);
    t.len0_ = approach;
    t.radius_ = radius;
    t.sweep_ = sweep;
    t.len2_ = exit;
    t.finish_setup();
    return t;
  }

  double length() const { return len0_ + radius_ * sweep_ + len2_; }

  Vec2 point(double s) const {
    if (s <= len0_) return start_ + dir0_ * s;
    const double arc = radius_ * sweep_;
    if (s <= len0_ + arc) {
      const double theta = (s - len0_) / radius_;
      // Rotate the radius vector (arc start - center) by theta.
      const Vec2 r0 = arc_start_ - center_;
      return center_ + rotate(r0, theta);
    }
    return arc_end_ + dir2_ * (s - len0_ - arc);
  }

  Vec2 tangent(double s) const {
    if (s <= len0_) return dir0_;
    const double arc = radius_ * sweep_;
    if (s <= len0_ + arc) return rotate(dir0_, (s - len0_) / radius_);
    return dir2_;
  }

 private:
  static Vec2 unit(Vec2 v) {
    const double n = v.norm();
    return {v.x / n, v.y / n};
  }
  static Vec2 rotate(Vec2 v, double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
  }
  void finish_setup() {
    arc_start_ = start_ + dir0_ * len0_;
    const Vec2 left_normal{-dir0_.y, dir0_.x};
    center_ = arc_start_ + left_normal * radius_;
    arc_end_ = radius_ > 0.0 ? center_ + rotate(arc_start_ - center_, sweep_)
                             : arc_start_;
    dir2_ = rotate(dir0_, sweep_);
  }

  Vec2 start_{};
  Vec2 dir0_{1.0, 0.0};
  double len0_ = 0.0;
  double radius_ = 0.0;
  double sweep_ = 0.0;
  double len2_ = 0.0;
  Vec2 arc_start_{};
  Vec2 center_{};
  Vec2 arc_end_{};
  Vec2 dir2_{1.0, 0.0};
};

// Rectangle of given length along `heading` and width across it.
struct OrientedBox {
  Vec2 center;
  Vec2 heading;  // unit vector
  double length = 0.0;
  double width = 0.0;

  std::array<Vec2, 4> corners() const {
    const Vec2 along = heading * (length / 2.0);
    const Vec2 across = Vec2{-heading.y, heading.x} * (width / 2.0);
    return {center + along + across, center + along - across,
            center - along - across, center - along + across};
  }
};

// Separating-axis test. Boxes that only touch do not overlap.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes = {a.heading, Vec2{-a.heading.y, a.heading.x},
                                    b.heading, Vec2{-b.heading.y, b.heading.x}};
  for (const Vec2& axis : axes) {
    double amin = INFINITY, amax = -INFINITY, bmin = INFINITY, bmax = -INFINITY;
    for (const Vec2& p : ca) {
      const double d = p.dot(axis);
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const Vec2& p : cb) {
      const double d = p.dot(axis);
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax <= bmin || bmax <= amin) return false;
  }
  return true;
}

}  // namespace gmrl::sim
