#pragma once

// Convergence studies: per-passing single vs. collaborative estimates, the
// multi-sign superposition trick, and permutation averaging. Output is CSV.

#include "crowdmap/errors.hpp"
#include "crowdmap/io.hpp"
#include "crowdmap/noise.hpp"
#include "crowdmap/triangulate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace crowdmap {

/// One row of an error curve. Absent values (no usable estimate) stay empty.
struct ErrorCurvePoint {
  int passing_index = 0;  // 1-based
  std::optional<double> single_e, single_n, single_dist;
  std::optional<double> collab_e, collab_n, collab_dist;
  std::optional<double> sigma_e, sigma_n;

  friend bool operator==(const ErrorCurvePoint&, const ErrorCurvePoint&) = default;
};

/// Observations of one landmark grouped by passing, in passing order.
using PassingSet = std::vector<std::vector<HeadingObservation>>;

struct ConvergenceResult {
  std::vector<ErrorCurvePoint> points;
  std::size_t excluded_single = 0;  // passings whose own estimate was unusable
  std::size_t excluded_collab = 0;
};

namespace detail {

inline std::optional<LandmarkEstimate> try_triangulate(std::span<const HeadingObservation> obs) {
  if (obs.size() < 2) return std::nullopt;
  try {
    return triangulate(obs, Objective::heading);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Single-passing and cumulative collaborative errors against `truth`, one
/// point per passing.
inline ConvergenceResult convergence_curve(const PassingSet& passings, const Point2& truth) {
  ConvergenceResult result;
  std::vector<HeadingObservation> cumulative;
  for (std::size_t k = 0; k < passings.size(); ++k) {
    ErrorCurvePoint p;
    p.passing_index = static_cast<int>(k) + 1;

    if (const auto single = detail::try_triangulate(passings[k])) {
      const Point2 err = single->position - truth;
      p.single_e = err.x();
      p.single_n = err.y();
      p.single_dist = std::hypot(err.x(), err.y());
    } else {
      ++result.excluded_single;
    }

    cumulative.insert(cumulative.end(), passings[k].begin(), passings[k].end());
    if (const auto collab = detail::try_triangulate(cumulative)) {
      const Point2 err = collab->position - truth;
      p.collab_e = err.x();
      p.collab_n = err.y();
      p.collab_dist = std::hypot(err.x(), err.y());
      if (collab->covariance) {
        p.sigma_e = collab->covariance->deviations.x();
        p.sigma_n = collab->covariance->deviations.y();
      }
    } else if (cumulative.size() >= 2) {
      ++result.excluded_collab;
    }
    result.points.push_back(p);
  }
  return result;
}

/// Groups one landmark's observations by passing_id (ascending).
inline PassingSet group_by_passing(std::span<const LandmarkObservation> observations) {
  std::map<std::int64_t, std::vector<HeadingObservation>> groups;
  for (const auto& o : observations) groups[o.passing_id].push_back(to_heading_observation(o));
  PassingSet out;
  out.reserve(groups.size());
  for (auto& [id, obs] : groups) out.push_back(std::move(obs));
  return out;
}

/// Simulates every passing of `s` and tracks the sign at `sign_index`.
inline ConvergenceResult run_convergence(const Scenario& s, const NoiseParams& params,
                                         std::size_t sign_index = 0) {
  s.validate();
  params.validate();
  if (s.signs.empty()) throw ConfigError("scenario has no signs");
  if (sign_index >= s.signs.size()) throw ConfigError("sign index out of range");
  const auto& sign = s.signs[sign_index];

  PassingSet passings;
  for (const auto& passing : generate_all_passings(s, params)) {
    std::vector<HeadingObservation> obs;
    for (const auto& o : passing)
      if (o.descriptor == sign.descriptor) obs.push_back(to_heading_observation(o));
    passings.push_back(std::move(obs));
  }
  return convergence_curve(passings, sign.position);
}

/// Ordinary least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputDomainError("slope fit needs >= 2 paired samples");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw InputDomainError("log-log fit needs positive samples");
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw InputDomainError("log-log fit needs distinct x values");
  return (n * sxy - sx * sy) / denom;
}

// ---------------------------------------------------------------------------
// Superposition

/// Translates every sign's observations onto the reference sign (the first
/// ground-truth entry) and relabels passings 1..L*n, sign by sign.
inline std::vector<LandmarkObservation> superpose(std::span<const LandmarkObservation> dataset,
                                                  std::span<const SignSpec> groundtruth) {
  if (groundtruth.empty()) throw ConfigError("ground truth must list at least the reference sign");
  const SignSpec& reference = groundtruth.front();

  std::map<SignDescriptor, std::size_t> sign_index;
  for (std::size_t i = 0; i < groundtruth.size(); ++i) sign_index.emplace(groundtruth[i].descriptor, i);

  // (sign, original passing) -> observations, ordered by sign then passing.
  std::map<std::pair<std::size_t, std::int64_t>, std::vector<const LandmarkObservation*>> buckets;
  for (const auto& o : dataset) {
    const auto it = sign_index.find(o.descriptor);
    if (it == sign_index.end())
      throw ConfigError("no ground truth for sign '" + o.descriptor.to_string() + "'");
    buckets[{it->second, o.passing_id}].push_back(&o);
  }

  std::vector<LandmarkObservation> out;
  out.reserve(dataset.size());
  std::int64_t passing = 0;
  for (const auto& [key, obs] : buckets) {
    ++passing;
    const Point2 shift = reference.position - groundtruth[key.first].position;
    for (const auto* o : obs) {
      LandmarkObservation t = *o;
      t.line = o->line.translated(shift);
      t.descriptor = reference.descriptor;
      t.passing_id = passing;
      out.push_back(std::move(t));
    }
  }
  return out;
}

/// Synthetic stand-in for a multi-sign loop: `sign_count` copies of the
/// scenario's first sign and road, spaced `spacing` meters apart along East,
/// each observed on every passing.
struct LoopDataset {
  std::vector<LandmarkObservation> observations;
  std::vector<SignSpec> groundtruth;
};

inline LoopDataset make_loop_dataset(const Scenario& base, const NoiseParams& params, int sign_count,
                                     double spacing = 5000.0) {
  base.validate();
  if (base.signs.empty()) throw ConfigError("scenario has no signs");
  LoopDataset data;
  for (int l = 0; l < sign_count; ++l) {
    const Point2 offset{spacing * l, 0.0};
    Scenario s = base;
    s.signs = {{base.signs.front().position + offset,
                SignDescriptor(base.signs.front().descriptor.sign_class(), "sign-" + std::to_string(l + 1))}};
    s.road.start += offset;
    s.road.end += offset;
    NoiseParams p = params;
    p.seed = passing_rng(params.seed, 1000003ULL * static_cast<std::uint64_t>(l + 1))();
    for (auto& passing : generate_all_passings(s, p))
      data.observations.insert(data.observations.end(), passing.begin(), passing.end());
    data.groundtruth.push_back(s.signs.front());
  }
  return data;
}

// ---------------------------------------------------------------------------
// Permutation averaging

struct PermutationResult {
  /// Per passing index (1-based position in the shuffled order): mean
  /// collaborative distance error and mean single-passing distance error.
  std::vector<ErrorCurvePoint> points;
  std::vector<std::size_t> collab_samples;  // permutations contributing per index
  std::vector<std::size_t> single_samples;
  std::size_t excluded_single_passings = 0;  // passings with no usable own estimate
  /// Collaborative estimate after all passings, identical for every order.
  std::optional<Point2> final_estimate;
};

inline PermutationResult permutation_average(const PassingSet& passings, const Point2& truth, int n_perm,
                                             Rng& rng) {
  if (n_perm < 1) throw InputDomainError("n_perm must be >= 1");
  const std::size_t n = passings.size();

  // A passing's own estimate does not depend on the order it is drawn in.
  std::vector<std::optional<double>> single_error(n);
  PermutationResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (const auto e = detail::try_triangulate(passings[i]))
      single_error[i] = std::hypot(e->position.x() - truth.x(), e->position.y() - truth.y());
    else
      ++result.excluded_single_passings;
  }

  std::vector<double> collab_sum(n, 0.0), single_sum(n, 0.0);
  result.collab_samples.assign(n, 0);
  result.single_samples.assign(n, 0);

  std::vector<std::size_t> order(n);
  std::vector<HeadingObservation> cumulative;
  for (int perm = 0; perm < n_perm; ++perm) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (perm > 0 || n_perm > 1) std::shuffle(order.begin(), order.end(), rng);
    cumulative.clear();
    for (std::size_t k = 0; k < n; ++k) {
      const auto& passing = passings[order[k]];
      cumulative.insert(cumulative.end(), passing.begin(), passing.end());
      if (single_error[order[k]]) {
        single_sum[k] += *single_error[order[k]];
        ++result.single_samples[k];
      }
      if (const auto e = detail::try_triangulate(cumulative)) {
        collab_sum[k] += std::hypot(e->position.x() - truth.x(), e->position.y() - truth.y());
        ++result.collab_samples[k];
        if (k + 1 == n) result.final_estimate = e->position;
      }
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    ErrorCurvePoint p;
    p.passing_index = static_cast<int>(k) + 1;
    if (result.collab_samples[k]) p.collab_dist = collab_sum[k] / double(result.collab_samples[k]);
    if (result.single_samples[k]) p.single_dist = single_sum[k] / double(result.single_samples[k]);
    result.points.push_back(p);
  }
  return result;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCurveHeader =
    "passing,single_e,single_n,single_dist,collab_e,collab_n,collab_dist,sigma_e,sigma_n";

namespace detail {

inline void put_field(std::string& out, const std::optional<double>& v) {
  out += ',';
  if (!v) return;
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, *v);
  out.append(buf, r.ptr);
}

inline std::optional<double> get_field(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw ParseError("invalid number '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline void emit_curves(std::ostream& out, std::span<const ErrorCurvePoint> points) {
  out << kCurveHeader << '\n';
  for (const auto& p : points) {
    std::string row = std::to_string(p.passing_index);
    for (const auto* f : {&p.single_e, &p.single_n, &p.single_dist, &p.collab_e, &p.collab_n, &p.collab_dist,
                          &p.sigma_e, &p.sigma_n})
      detail::put_field(row, *f);
    out << row << '\n';
  }
}

inline void emit_curves(std::span<const ErrorCurvePoint> points, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  emit_curves(out, points);
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<ErrorCurvePoint> parse_curves(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw ParseError("missing or unexpected CSV header");
  std::vector<ErrorCurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 9) throw ParseError("expected 9 CSV fields, got " + std::to_string(fields.size()));
    ErrorCurvePoint p;
    const auto idx = detail::get_field(fields[0]);
    if (!idx) throw ParseError("missing passing index");
    p.passing_index = static_cast<int>(*idx);
    std::optional<double>* targets[] = {&p.single_e, &p.single_n, &p.single_dist, &p.collab_e,
                                        &p.collab_n, &p.collab_dist, &p.sigma_e, &p.sigma_n};
    for (std::size_t i = 0; i < 8; ++i) *targets[i] = detail::get_field(fields[i + 1]);
    out.push_back(p);
  }
  return out;
}

inline std::vector<ErrorCurvePoint> parse_curves(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_curves(in);
}

}  // namespace crowdmap
