#pragma once

// JSON encodings of observations and estimates, newline-delimited observation
// batch files, and the plain-text sign list used for landmark seeds and
// ground truth.
//
// Observation record (one JSON object per line):
//   {"vehicle_id": "...", "passing_id": 3, "timestamp": 12.5,
//    "anchor_e": ..., "anchor_n": ..., "dir_e": ..., "dir_n": ...,
//    "sign_class": "...", "text_payload": "..." | null}
// Doubles are written in shortest round-trip form, so parsing a record
// reproduces the original bits.

#include "crowdmap/errors.hpp"
#include "crowdmap/noise.hpp"
#include "crowdmap/onboard.hpp"
#include "crowdmap/triangulate.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace crowdmap {

using json = nlohmann::json;

inline json to_json(const LandmarkObservation& o) {
  return json{{"vehicle_id", o.vehicle_id},
              {"passing_id", o.passing_id},
              {"timestamp", o.timestamp},
              {"anchor_e", o.line.anchor().x()},
              {"anchor_n", o.line.anchor().y()},
              {"dir_e", o.line.direction().x()},
              {"dir_n", o.line.direction().y()},
              {"sign_class", o.descriptor.sign_class()},
              {"text_payload", o.descriptor.text_payload() ? json(*o.descriptor.text_payload()) : json(nullptr)}};
}

namespace detail {

inline double number_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number()) throw ParseError(std::string("missing numeric field '") + key + "'");
  return it->get<double>();
}

inline std::string string_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw ParseError(std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

inline std::optional<std::string> optional_string_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string or null");
  return it->get<std::string>();
}

}  // namespace detail

inline LandmarkObservation observation_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("observation record must be a JSON object");
  const auto pid = j.find("passing_id");
  if (pid == j.end() || !pid->is_number_integer()) throw ParseError("missing integer field 'passing_id'");
  try {
    return {ProjectionLine({detail::number_field(j, "anchor_e"), detail::number_field(j, "anchor_n")},
                           {detail::number_field(j, "dir_e"), detail::number_field(j, "dir_n")}),
            SignDescriptor(detail::string_field(j, "sign_class"),
                           detail::optional_string_field(j, "text_payload")),
            detail::string_field(j, "vehicle_id"), pid->get<std::int64_t>(),
            detail::number_field(j, "timestamp")};
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("invalid observation: ") + e.what());
  }
}

inline json to_json(const LandmarkEstimate& e) {
  json j{{"east", e.position.x()},
         {"north", e.position.y()},
         {"n_observations", e.n_observations},
         {"objective", std::string(to_string(e.objective))}};
  if (e.covariance) {
    const auto& c = e.covariance->matrix;
    j["covariance"] = json::array({c(0, 0), c(0, 1), c(1, 0), c(1, 1)});
    j["sigma_e"] = e.covariance->deviations.x();
    j["sigma_n"] = e.covariance->deviations.y();
  } else {
    j["covariance"] = nullptr;
  }
  return j;
}

inline LandmarkEstimate estimate_from_json(const json& j) {
  LandmarkEstimate e;
  e.position = {detail::number_field(j, "east"), detail::number_field(j, "north")};
  e.n_observations = j.at("n_observations").get<std::size_t>();
  e.objective = objective_from_string(detail::string_field(j, "objective"));
  const auto& c = j.at("covariance");
  if (!c.is_null()) {
    Covariance cov;
    cov.matrix << c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>(), c.at(3).get<double>();
    cov.deviations = {detail::number_field(j, "sigma_e"), detail::number_field(j, "sigma_n")};
    e.covariance = cov;
  }
  return e;
}

inline void write_observations(std::ostream& out, std::span<const LandmarkObservation> obs) {
  for (const auto& o : obs) out << to_json(o).dump() << '\n';
}

inline void write_observations(const std::string& path, std::span<const LandmarkObservation> obs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_observations(out, obs);
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Parses a newline-delimited observation stream. Blank lines are skipped;
/// any malformed line rejects the whole stream.
inline std::vector<LandmarkObservation> read_observations(std::istream& in) {
  std::vector<LandmarkObservation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(observation_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<LandmarkObservation> read_observations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_observations(in);
}

/// "class[:payload]" -> descriptor.
inline SignDescriptor parse_descriptor(const std::string& token) {
  const auto colon = token.find(':');
  if (colon == std::string::npos) return SignDescriptor(token);
  return SignDescriptor(token.substr(0, colon), token.substr(colon + 1));
}

/// Sign list: one sign per line as `class[:payload] east north`; `#` starts
/// a comment. Used for landmark seed files and ground-truth files (whose
/// first entry is the superposition reference).
inline std::vector<SignSpec> read_sign_list(std::istream& in) {
  std::vector<SignSpec> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    double e = 0.0;
    double n = 0.0;
    std::string extra;
    if (!(ls >> e >> n) || (ls >> extra))
      throw ParseError("sign list line " + std::to_string(lineno) + ": expected 'class[:payload] east north'");
    try {
      out.push_back({{e, n}, parse_descriptor(token)});
    } catch (const InputDomainError& err) {
      throw ParseError("sign list line " + std::to_string(lineno) + ": " + err.what());
    }
  }
  return out;
}

inline std::vector<SignSpec> read_sign_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_sign_list(in);
}

inline void write_sign_list(std::ostream& out, std::span<const SignSpec> signs) {
  const auto old_precision = out.precision(17);
  for (const auto& s : signs)
    out << s.descriptor.to_string() << ' ' << s.position.x() << ' ' << s.position.y() << '\n';
  out.precision(old_precision);
}

}  // namespace crowdmap
