#pragma once

// Flat key/value scenario files.
//
//   # comment
//   road.start = 0 0                  # east north, m
//   road.end = 0 260
//   sign = speed_limit:50 60 300      # class[:payload] east north; repeatable
//   passings = 100
//   poses_per_passing = 5
//   pose_interval = 1.0               # s
//   passing_interval = 3600           # s
//   camera.focal = 300                # px
//   camera.principal = 640            # px
//   camera.image_width = 1280         # px
//   rig.gnss = 0 0 0                  # receiver pose in vehicle frame: right forward rotation
//   rig.camera = 0 0 0                # camera pose in vehicle frame
//   noise.gnss_pos_sigma = 5.0        # m
//   noise.gnss_heading_sigma = 0.35   # rad
//   noise.pixel_sigma = 5.0           # px
//   noise.passing_bias_sigma = 0      # m
//   noise.seed = 1
//
// Keys not given keep the defaults of default_scenario().

#include "crowdmap/errors.hpp"
#include "crowdmap/io.hpp"
#include "crowdmap/noise.hpp"

#include <fstream>
#include <istream>
#include <sstream>
#include <string>

namespace crowdmap {

struct ScenarioConfig {
  Scenario scenario;
  NoiseParams noise;
};

/// Sign ~300 m ahead and 60 m right of a 260 m straight road, wide-angle camera.
inline ScenarioConfig default_scenario() {
  ScenarioConfig c;
  c.scenario.signs = {{{60.0, 300.0}, SignDescriptor("speed_limit", "50")}};
  c.scenario.passing_count = 100;
  c.scenario.poses_per_passing = 5;
  c.scenario.road = {{0.0, 0.0}, {0.0, 260.0}};
  c.scenario.rig.intrinsics = CameraIntrinsics(300.0, 640.0, 1280.0);
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename... T>
void read_values(const std::string& key, const std::string& value, std::size_t lineno, T&... out) {
  std::istringstream is(value);
  std::string extra;
  if (!((is >> out) && ...) || (is >> extra))
    throw ConfigError("scenario line " + std::to_string(lineno) + ": bad value for '" + key + "'");
}

}  // namespace detail

inline ScenarioConfig parse_scenario(std::istream& in) {
  ScenarioConfig c = default_scenario();
  bool signs_given = false;
  double focal = c.scenario.rig.intrinsics.focal();
  double principal = c.scenario.rig.intrinsics.principal();
  double width = c.scenario.rig.intrinsics.image_width();

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("scenario line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    auto& s = c.scenario;
    auto& n = c.noise;
    if (key == "sign") {
      std::string token;
      double e = 0, no = 0;
      detail::read_values(key, value, lineno, token, e, no);
      if (!signs_given) s.signs.clear();
      signs_given = true;
      try {
        s.signs.push_back({{e, no}, parse_descriptor(token)});
      } catch (const InputDomainError& err) {
        throw ConfigError("scenario line " + std::to_string(lineno) + ": " + err.what());
      }
    } else if (key == "road.start") {
      detail::read_values(key, value, lineno, s.road.start.x(), s.road.start.y());
    } else if (key == "road.end") {
      detail::read_values(key, value, lineno, s.road.end.x(), s.road.end.y());
    } else if (key == "passings") {
      detail::read_values(key, value, lineno, s.passing_count);
    } else if (key == "poses_per_passing") {
      detail::read_values(key, value, lineno, s.poses_per_passing);
    } else if (key == "pose_interval") {
      detail::read_values(key, value, lineno, s.pose_interval);
    } else if (key == "passing_interval") {
      detail::read_values(key, value, lineno, s.passing_interval);
    } else if (key == "camera.focal") {
      detail::read_values(key, value, lineno, focal);
    } else if (key == "camera.principal") {
      detail::read_values(key, value, lineno, principal);
    } else if (key == "camera.image_width") {
      detail::read_values(key, value, lineno, width);
    } else if (key == "rig.gnss") {
      auto& t = s.rig.t_vehicle_from_gnss;
      detail::read_values(key, value, lineno, t.translation.x(), t.translation.y(), t.rotation);
    } else if (key == "rig.camera") {
      auto& t = s.rig.t_vehicle_from_camera;
      detail::read_values(key, value, lineno, t.translation.x(), t.translation.y(), t.rotation);
    } else if (key == "noise.gnss_pos_sigma") {
      detail::read_values(key, value, lineno, n.gnss_pos_sigma);
    } else if (key == "noise.gnss_heading_sigma") {
      detail::read_values(key, value, lineno, n.gnss_heading_sigma);
    } else if (key == "noise.pixel_sigma") {
      detail::read_values(key, value, lineno, n.pixel_sigma);
    } else if (key == "noise.passing_bias_sigma") {
      detail::read_values(key, value, lineno, n.passing_bias_sigma);
    } else if (key == "noise.seed") {
      detail::read_values(key, value, lineno, n.seed);
    } else {
      throw ConfigError("scenario line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }

  try {
    c.scenario.rig.intrinsics = CameraIntrinsics(focal, principal, width);
  } catch (const InputDomainError& e) {
    throw ConfigError(std::string("scenario camera: ") + e.what());
  }
  c.scenario.validate();
  c.noise.validate();
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario '" + path + "'");
  return parse_scenario(in);
}

}  // namespace crowdmap
