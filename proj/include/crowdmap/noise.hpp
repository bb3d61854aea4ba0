#pragma once

// Synthetic scenes and sensor noise: true vehicle passings along a straight
// road, true sign pixels, and white Gaussian GNSS / pixel perturbations.

#include "crowdmap/errors.hpp"
#include "crowdmap/geometry.hpp"
#include "crowdmap/onboard.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace crowdmap {

using Rng = std::mt19937_64;

struct NoiseParams {
  double gnss_pos_sigma = 5.0;       // m, per axis
  double gnss_heading_sigma = 0.35;  // rad
  double pixel_sigma = 5.0;          // px
  double passing_bias_sigma = 0.0;   // m, constant per passing, per axis
  std::uint64_t seed = 0;

  static NoiseParams noiseless(std::uint64_t seed = 0) { return {0.0, 0.0, 0.0, 0.0, seed}; }

  void validate() const {
    if (!(gnss_pos_sigma >= 0.0 && gnss_heading_sigma >= 0.0 && pixel_sigma >= 0.0 &&
          passing_bias_sigma >= 0.0))
      throw ConfigError("noise sigmas must be non-negative");
  }
};

struct SignSpec {
  Point2 position;
  SignDescriptor descriptor;
};

struct Road {
  Point2 start = Point2::Zero();
  Point2 end{0.0, 100.0};

  double heading() const { return bearing_of(end - start); }
};

struct Scenario {
  std::vector<SignSpec> signs;
  int passing_count = 1;
  int poses_per_passing = 5;
  Road road;
  RigConfig rig;
  double pose_interval = 1.0;       // s between images of one passing
  double passing_interval = 3600.0; // s between passings

  void validate() const {
    if (passing_count < 1) throw ConfigError("passing_count must be >= 1");
    if (poses_per_passing < 1) throw ConfigError("poses_per_passing must be >= 1");
    if ((road.end - road.start).norm() == 0.0) throw ConfigError("road endpoints coincide");
  }
};

/// True vehicle poses of one passing, evenly spaced from road start to end.
inline std::vector<Pose> vehicle_poses(const Scenario& s) {
  std::vector<Pose> poses;
  poses.reserve(static_cast<std::size_t>(s.poses_per_passing));
  const double heading = s.road.heading();
  for (int i = 0; i < s.poses_per_passing; ++i) {
    const double t = s.poses_per_passing == 1 ? 0.5 : double(i) / double(s.poses_per_passing - 1);
    poses.emplace_back(s.road.start + t * (s.road.end - s.road.start), heading);
  }
  return poses;
}

inline bool is_visible(const Pose& camera, const CameraIntrinsics& k, const Point2& sign) {
  const Point2 d = sign - camera.position();
  if (!(d.dot(bearing_vector(camera.heading())) > 0.0)) return false;
  const double angle = wrap_angle(bearing_of(d) - camera.heading());
  return k.contains(k.principal() + k.focal() * std::tan(angle));
}

/// True pixel column of a sign; the inverse of pixel_to_ray.
inline double project_landmark(const Pose& camera, const CameraIntrinsics& k, const Point2& sign) {
  if (!is_visible(camera, k, sign)) throw NotVisibleError("sign is not visible from the camera");
  const double angle = wrap_angle(bearing_of(sign - camera.position()) - camera.heading());
  return k.principal() + k.focal() * std::tan(angle);
}

inline GnssObservation perturb_gnss(const Pose& true_state, const NoiseParams& params, Rng& rng,
                                    const Point2& passing_bias = Point2::Zero(),
                                    double timestamp = 0.0) {
  std::normal_distribution<double> unit(0.0, 1.0);
  const double de = params.gnss_pos_sigma * unit(rng);
  const double dn = params.gnss_pos_sigma * unit(rng);
  const double dh = params.gnss_heading_sigma * unit(rng);
  if (params.gnss_pos_sigma == 0.0 && params.gnss_heading_sigma == 0.0 && passing_bias.isZero())
    return {true_state, timestamp};
  return {Pose(true_state.east() + de + passing_bias.x(), true_state.north() + dn + passing_bias.y(),
               true_state.heading() + dh),
          timestamp};
}

inline double perturb_pixel(double u_true, const NoiseParams& params, Rng& rng, double image_width) {
  std::normal_distribution<double> unit(0.0, 1.0);
  const double noise = params.pixel_sigma * unit(rng);
  if (params.pixel_sigma == 0.0) return u_true;
  return std::clamp(u_true + noise, 0.0, image_width);
}

/// Independent, reproducible stream for one passing (splitmix64 of the base
/// seed and the passing index).
inline Rng passing_rng(std::uint64_t seed, std::uint64_t passing_index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (passing_index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

inline std::vector<LandmarkObservation> generate_passing(const Scenario& s, int passing_index,
                                                         const NoiseParams& params, Rng& rng) {
  if (passing_index < 0 || passing_index >= s.passing_count)
    throw InputDomainError("passing index out of range");

  Point2 bias = Point2::Zero();
  if (params.passing_bias_sigma > 0.0) {
    std::normal_distribution<double> unit(0.0, 1.0);
    bias = {params.passing_bias_sigma * unit(rng), params.passing_bias_sigma * unit(rng)};
  }

  const ObservationIds ids{"veh-" + std::to_string(passing_index), passing_index};
  const auto& k = s.rig.intrinsics;
  std::vector<LandmarkObservation> out;
  const auto poses = vehicle_poses(s);
  for (std::size_t p = 0; p < poses.size(); ++p) {
    const Pose& vehicle = poses[p];
    const Pose camera = estimate_camera_state(vehicle, s.rig);
    const Pose receiver = vehicle.compose(s.rig.t_vehicle_from_gnss);
    const double t = passing_index * s.passing_interval + double(p) * s.pose_interval;
    const GnssObservation z = perturb_gnss(receiver, params, rng, bias, t);
    for (const auto& sign : s.signs) {
      if (!is_visible(camera, k, sign.position)) continue;
      const double u = perturb_pixel(project_landmark(camera, k, sign.position), params, rng,
                                     k.image_width());
      out.push_back(build_observation(z, {u, 0.0, sign.descriptor}, s.rig, ids));
    }
  }
  return out;
}

/// All passings of a scenario, each drawn from its own derived stream.
inline std::vector<std::vector<LandmarkObservation>> generate_all_passings(const Scenario& s,
                                                                           const NoiseParams& params) {
  std::vector<std::vector<LandmarkObservation>> passings;
  passings.reserve(static_cast<std::size_t>(s.passing_count));
  for (int i = 0; i < s.passing_count; ++i) {
    Rng rng = passing_rng(params.seed, static_cast<std::uint64_t>(i));
    passings.push_back(generate_passing(s, i, params, rng));
  }
  return passings;
}

}  // namespace crowdmap
