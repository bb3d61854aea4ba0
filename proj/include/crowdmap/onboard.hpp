#pragma once

// Vehicle-side geolocalization: GNSS fix + sign detection -> world-frame
// projection line, buffered until the uplink is available.

#include "crowdmap/errors.hpp"
#include "crowdmap/geometry.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace crowdmap {

/// Semantic description of a detected sign. Two descriptors match when both
/// the class and the payload are equal.
class SignDescriptor {
 public:
  explicit SignDescriptor(std::string sign_class, std::optional<std::string> text_payload = {})
      : sign_class_(std::move(sign_class)), text_payload_(std::move(text_payload)) {
    if (sign_class_.empty()) throw InputDomainError("sign class must be nonempty");
  }

  const std::string& sign_class() const noexcept { return sign_class_; }
  const std::optional<std::string>& text_payload() const noexcept { return text_payload_; }

  std::string to_string() const {
    return text_payload_ ? sign_class_ + ":" + *text_payload_ : sign_class_;
  }

  friend bool operator==(const SignDescriptor&, const SignDescriptor&) = default;
  friend auto operator<=>(const SignDescriptor&, const SignDescriptor&) = default;

 private:
  std::string sign_class_;
  std::optional<std::string> text_payload_;
};

struct GnssObservation {
  Pose pose;  // receiver position and heading
  double timestamp = 0.0;
};

struct DetectionRecord {
  double u = 0.0;  // horizontal box center, pixels
  double v = 0.0;  // vertical box center; carried but unused in the plane
  SignDescriptor descriptor;
};

struct LandmarkObservation {
  ProjectionLine line;
  SignDescriptor descriptor;
  std::string vehicle_id;
  std::int64_t passing_id = 0;
  double timestamp = 0.0;

  /// The camera center the line was cast from.
  const Point2& camera_position() const { return line.anchor(); }

  friend bool operator==(const LandmarkObservation&, const LandmarkObservation&) = default;
};

struct ObservationIds {
  std::string vehicle_id;
  std::int64_t passing_id = 0;
};

/// Extrinsics are expressed as the pose of each sensor in the vehicle frame.
struct RigConfig {
  RigidTransform t_vehicle_from_gnss;
  RigidTransform t_vehicle_from_camera;
  CameraIntrinsics intrinsics{800.0, 640.0, 1280.0};
};

inline Pose estimate_vehicle_state(const GnssObservation& z, const RigConfig& rig) {
  return z.pose.compose(rig.t_vehicle_from_gnss.inverse());
}

inline Pose estimate_camera_state(const Pose& vehicle, const RigConfig& rig) {
  return vehicle.compose(rig.t_vehicle_from_camera);
}

inline LandmarkObservation build_observation(const GnssObservation& z, const DetectionRecord& det,
                                             const RigConfig& rig, const ObservationIds& ids) {
  const Pose vehicle = estimate_vehicle_state(z, rig);
  const Pose camera = estimate_camera_state(vehicle, rig);
  return {pixel_to_ray(camera, rig.intrinsics, det.u), det.descriptor, ids.vehicle_id,
          ids.passing_id, z.timestamp};
}

/// One vehicle's pipeline. Observations accumulate locally and leave only on
/// a successful flush, so an uplink outage just grows the queue.
class OnboardPipeline {
 public:
  /// Returns true when the batch was accepted by the server.
  using Uplink = std::function<bool(std::span<const LandmarkObservation>)>;

  OnboardPipeline(std::string vehicle_id, RigConfig rig)
      : vehicle_id_(std::move(vehicle_id)), rig_(std::move(rig)) {}

  const LandmarkObservation& observe(const GnssObservation& z, const DetectionRecord& det,
                                     std::int64_t passing_id) {
    queue_.push_back(build_observation(z, det, rig_, {vehicle_id_, passing_id}));
    return queue_.back();
  }

  std::size_t pending() const noexcept { return queue_.size(); }

  /// Sends everything queued as one batch. Returns the number of observations
  /// delivered (0 if the queue was empty or the uplink refused).
  std::size_t flush(const Uplink& uplink) {
    if (queue_.empty()) return 0;
    std::vector<LandmarkObservation> batch(queue_.begin(), queue_.end());
    if (!uplink(batch)) return 0;
    queue_.clear();
    return batch.size();
  }

  const std::string& vehicle_id() const noexcept { return vehicle_id_; }
  const RigConfig& rig() const noexcept { return rig_; }

 private:
  std::string vehicle_id_;
  RigConfig rig_;
  std::deque<LandmarkObservation> queue_;
};

}  // namespace crowdmap
