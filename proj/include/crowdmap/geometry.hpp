#pragma once

// Planar frame algebra on the East-North plane.
//
// Conventions: East is +x, North is +y, headings are measured clockwise from
// North (compass bearings). A frame with heading 0 looks North; its local +y
// axis points forward and its local +x axis points to the right.

#include "crowdmap/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numbers>

namespace crowdmap {

using Point2 = Eigen::Vector2d;  // (east, north) in meters

inline constexpr double kPi = std::numbers::pi;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double angle) {
  double r = std::remainder(angle, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

/// Unit vector pointing along a compass bearing.
inline Point2 bearing_vector(double heading) {
  return {std::sin(heading), std::cos(heading)};
}

/// Compass bearing of a vector, in (-pi, pi].
inline double bearing_of(const Point2& v) { return std::atan2(v.x(), v.y()); }

/// Clockwise rotation of a point by `angle` radians.
inline Point2 rotate(double angle, const Point2& p) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * p.x() + s * p.y(), -s * p.x() + c * p.y()};
}

/// z-component of the planar cross product.
inline double cross(const Point2& a, const Point2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

/// Maps points of a child frame into its parent: p_parent = R(rotation) p + t.
/// The rotation is kept unwrapped so that inversion is an exact involution.
struct RigidTransform {
  Point2 translation = Point2::Zero();
  double rotation = 0.0;

  static RigidTransform identity() { return {}; }

  Point2 apply(const Point2& p) const { return rotate(rotation, p) + translation; }

  RigidTransform inverse() const {
    return {-rotate(-rotation, translation), -rotation};
  }

  /// (this * other).apply(p) == this->apply(other.apply(p))
  RigidTransform operator*(const RigidTransform& other) const {
    return {apply(other.translation), rotation + other.rotation};
  }
};

inline Point2 transform_point(const RigidTransform& t, const Point2& p) { return t.apply(p); }

/// Geo-position plus compass heading of a vehicle, receiver or camera.
class Pose {
 public:
  Pose() = default;
  Pose(double east, double north, double heading)
      : east_(east), north_(north), heading_(wrap_angle(heading)) {}
  Pose(const Point2& position, double heading)
      : Pose(position.x(), position.y(), heading) {}

  static Pose identity() { return {}; }

  double east() const noexcept { return east_; }
  double north() const noexcept { return north_; }
  double heading() const noexcept { return heading_; }
  Point2 position() const { return {east_, north_}; }

  /// World-from-local transform described by this pose.
  RigidTransform as_transform() const { return {position(), heading_}; }

  /// Pose of a child frame given its placement relative to this one.
  Pose compose(const RigidTransform& child) const {
    return {as_transform().apply(child.translation), heading_ + child.rotation};
  }
  Pose compose(const Pose& child) const { return compose(child.as_transform()); }

  Pose inverse() const {
    const auto t = as_transform().inverse();
    return {t.translation, t.rotation};
  }

  friend bool operator==(const Pose&, const Pose&) = default;

 private:
  double east_ = 0.0;
  double north_ = 0.0;
  double heading_ = 0.0;
};

/// Horizontal-axis pinhole intrinsics: u = principal + focal * tan(angle).
class CameraIntrinsics {
 public:
  CameraIntrinsics(double focal, double principal, double image_width)
      : focal_(focal), principal_(principal), image_width_(image_width) {
    if (!(focal > 0.0)) throw InputDomainError("camera focal length must be positive");
    if (!(image_width > 0.0)) throw InputDomainError("image width must be positive");
    if (!(principal >= 0.0 && principal <= image_width))
      throw InputDomainError("principal point must lie within the image");
  }

  double focal() const noexcept { return focal_; }
  double principal() const noexcept { return principal_; }
  double image_width() const noexcept { return image_width_; }

  bool contains(double u) const { return u >= 0.0 && u <= image_width_; }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;

 private:
  double focal_;
  double principal_;
  double image_width_;
};

/// Infinite line through `anchor` (the camera center, point A) with a unit
/// `direction`. Point B is anchor + direction.
class ProjectionLine {
 public:
  ProjectionLine(Point2 anchor, const Point2& direction) : anchor_(std::move(anchor)) {
    const double n = direction.norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw DegenerateGeometryError("projection line direction must be a nonzero finite vector");
    // Already-unit directions are kept bit-exact so that serialized lines
    // round-trip unchanged.
    direction_ = std::abs(n - 1.0) <= 1e-14 ? direction : Point2(direction / n);
  }

  static ProjectionLine through(const Point2& a, const Point2& b) { return {a, b - a}; }
  static ProjectionLine at_bearing(const Point2& anchor, double heading) {
    return {anchor, bearing_vector(heading)};
  }

  const Point2& anchor() const noexcept { return anchor_; }
  const Point2& direction() const noexcept { return direction_; }
  Point2 point_b() const { return anchor_ + direction_; }
  double heading() const { return bearing_of(direction_); }
  /// Unit normal (direction rotated a quarter turn counter-clockwise).
  Point2 normal() const { return {-direction_.y(), direction_.x()}; }

  ProjectionLine transformed(const RigidTransform& t) const {
    return {t.apply(anchor_), rotate(t.rotation, direction_)};
  }
  ProjectionLine translated(const Point2& offset) const { return {anchor_ + offset, direction_}; }

  friend bool operator==(const ProjectionLine& a, const ProjectionLine& b) {
    return a.anchor_ == b.anchor_ && a.direction_ == b.direction_;
  }

 private:
  Point2 anchor_;
  Point2 direction_;
};

/// Back-projects a horizontal pixel coordinate into a world line through the
/// camera center.
inline ProjectionLine pixel_to_ray(const Pose& camera, const CameraIntrinsics& k, double u) {
  if (!k.contains(u)) throw InputDomainError("pixel column outside the image");
  const double offset = std::atan((u - k.principal()) / k.focal());
  return ProjectionLine::at_bearing(camera.position(), camera.heading() + offset);
}

/// Distance from a point to the full (two-sided) line.
inline double orthogonal_distance(const Point2& p, const ProjectionLine& line) {
  return std::abs(cross(line.direction(), p - line.anchor()));
}

/// Signed, wrapped difference between the bearing camera->p and the line
/// heading. Used by the solver; see heading_residual for the magnitude.
inline double signed_heading_residual(const Point2& p, const ProjectionLine& line,
                                      const Point2& camera_pos) {
  const Point2 d = p - camera_pos;
  if (d.norm() == 0.0) throw DegenerateGeometryError("point coincides with the camera position");
  return wrap_angle(bearing_of(d) - line.heading());
}

/// Gradient of signed_heading_residual with respect to p.
inline Point2 heading_residual_gradient(const Point2& p, const Point2& camera_pos) {
  const Point2 d = p - camera_pos;
  const double r2 = d.squaredNorm();
  if (r2 == 0.0) throw DegenerateGeometryError("point coincides with the camera position");
  return {d.y() / r2, -d.x() / r2};
}

/// |wrap(head(camera -> p) - head(line))|, in [0, pi].
inline double heading_residual(const Point2& p, const ProjectionLine& line,
                               const Point2& camera_pos) {
  return std::abs(signed_heading_residual(p, line, camera_pos));
}

}  // namespace crowdmap
