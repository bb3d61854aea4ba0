#pragma once

// Server-side association of observations with map landmarks: equal
// descriptor, then nearest initialized estimate within a gate around the line.

#include "crowdmap/geometry.hpp"
#include "crowdmap/log.hpp"
#include "crowdmap/onboard.hpp"
#include "crowdmap/triangulate.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

namespace crowdmap {

using LandmarkId = std::uint64_t;

inline constexpr double kDefaultGateRadius = 20.0;  // m

struct MapLandmark {
  LandmarkId id = 0;
  SignDescriptor descriptor;
  /// Seeded landmarks start from their seed position with zero observations.
  std::optional<LandmarkEstimate> estimate;
  std::vector<LandmarkObservation> observations;  // append-only
};

using LandmarkTable = std::map<LandmarkId, MapLandmark>;

inline std::optional<LandmarkId> match_observation(const LandmarkObservation& obs,
                                                   const LandmarkTable& landmarks,
                                                   double gate_radius = kDefaultGateRadius) {
  if (!(gate_radius > 0.0)) throw InputDomainError("gate radius must be positive");
  std::optional<LandmarkId> best;
  double best_distance = std::numeric_limits<double>::infinity();
  bool tied = false;
  // Ascending id order, so a strict comparison keeps the lowest id on ties.
  for (const auto& [id, lm] : landmarks) {
    if (!lm.estimate || !(lm.descriptor == obs.descriptor)) continue;
    const double d = orthogonal_distance(lm.estimate->position, obs.line);
    if (d > gate_radius) continue;
    if (d < best_distance) {
      best = id;
      best_distance = d;
      tied = false;
    } else if (d == best_distance) {
      tied = true;
    }
  }
  if (tied)
    log().warn("equidistant match candidates for {} at {:.3f} m; chose landmark {}",
               obs.descriptor.to_string(), best_distance, *best);
  return best;
}

inline LandmarkId register_landmark(const SignDescriptor& descriptor, const Point2& initial_position,
                                    LandmarkTable& landmarks) {
  const LandmarkId id = landmarks.empty() ? 0 : landmarks.rbegin()->first + 1;
  LandmarkEstimate seed;
  seed.position = initial_position;
  seed.n_observations = 0;
  landmarks.emplace(id, MapLandmark{id, descriptor, seed, {}});
  return id;
}

}  // namespace crowdmap
