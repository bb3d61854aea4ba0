#pragma once

// Batch least-squares triangulation of one landmark from its projection lines.
//
// Two objectives are provided:
//  * orthogonal: sum of squared point-to-line distances, solved in closed form
//    from the normal equations. Also serves as the warm start for the other.
//  * heading: sum of squared wrapped differences between the bearing
//    camera->X and each line's heading, solved by Gauss-Newton. This is the
//    production objective; its covariance is s^2 (J^T J)^-1.
//
// Both solvers sort their input canonically before accumulating, so any
// permutation of the same observations yields a bitwise identical estimate.

#include "crowdmap/errors.hpp"
#include "crowdmap/geometry.hpp"
#include "crowdmap/onboard.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace crowdmap {

enum class Objective { orthogonal, heading };

inline std::string_view to_string(Objective o) {
  return o == Objective::orthogonal ? "orthogonal" : "heading";
}

inline Objective objective_from_string(std::string_view s) {
  if (s == "orthogonal") return Objective::orthogonal;
  if (s == "heading") return Objective::heading;
  throw ParseError("unknown objective '" + std::string(s) + "'");
}

struct Covariance {
  Eigen::Matrix2d matrix = Eigen::Matrix2d::Zero();  // m^2
  Eigen::Vector2d deviations = Eigen::Vector2d::Zero();  // (sigma_E, sigma_N), m
};

struct LandmarkEstimate {
  Point2 position = Point2::Zero();
  /// Absent when fewer than three observations leave no residual degrees of
  /// freedom.
  std::optional<Covariance> covariance;
  std::size_t n_observations = 0;
  Objective objective = Objective::heading;
};

/// A projection line together with the camera center it was cast from.
struct HeadingObservation {
  ProjectionLine line;
  Point2 camera;
};

inline HeadingObservation to_heading_observation(const LandmarkObservation& obs) {
  return {obs.line, obs.camera_position()};
}

inline constexpr double kMaxConditionNumber = 1e12;

namespace detail {

inline double condition_number(const Eigen::Matrix2d& symmetric) {
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(symmetric, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(1);
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

inline void require_well_conditioned(const Eigen::Matrix2d& normal, const char* what) {
  if (!(condition_number(normal) <= kMaxConditionNumber))
    throw DegenerateGeometryError(std::string(what) + ": normal matrix is singular or ill-conditioned");
}

inline auto line_key(const ProjectionLine& l) {
  return std::make_tuple(l.anchor().x(), l.anchor().y(), l.direction().x(), l.direction().y());
}

inline std::vector<ProjectionLine> sorted_lines(std::span<const ProjectionLine> lines) {
  std::vector<ProjectionLine> out(lines.begin(), lines.end());
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return line_key(a) < line_key(b); });
  return out;
}

inline std::vector<HeadingObservation> sorted_observations(std::span<const HeadingObservation> obs) {
  std::vector<HeadingObservation> out(obs.begin(), obs.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tuple_cat(line_key(a.line), std::make_tuple(a.camera.x(), a.camera.y())) <
           std::tuple_cat(line_key(b.line), std::make_tuple(b.camera.x(), b.camera.y()));
  });
  return out;
}

}  // namespace detail

/// Least-squares covariance s^2 (J^T J)^-1 with s^2 = sum(r^2) / (m - 2).
inline Covariance estimate_covariance(const Eigen::Matrix<double, Eigen::Dynamic, 2>& jacobian,
                                      const Eigen::VectorXd& residuals) {
  const auto m = jacobian.rows();
  if (m < 3) throw InsufficientDataError("covariance needs at least three residuals");
  if (residuals.size() != m) throw InputDomainError("jacobian and residual sizes differ");

  const Eigen::Matrix2d jtj = jacobian.transpose() * jacobian;
  detail::require_well_conditioned(jtj, "estimate_covariance");

  const double s2 = residuals.squaredNorm() / static_cast<double>(m - 2);
  Eigen::Matrix2d cov = s2 * jtj.inverse();
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {cov, cov.diagonal().cwiseMax(0.0).cwiseSqrt()};
}

inline LandmarkEstimate triangulate_orthogonal(std::span<const ProjectionLine> observations) {
  if (observations.size() < 2)
    throw InsufficientDataError("triangulation needs at least two projection lines");
  const auto lines = detail::sorted_lines(observations);

  Eigen::Matrix2d normal = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (const auto& l : lines) {
    const Point2 n = l.normal();
    const Eigen::Matrix2d nnt = n * n.transpose();
    normal += nnt;
    rhs += nnt * l.anchor();
  }
  detail::require_well_conditioned(normal, "triangulate_orthogonal");

  LandmarkEstimate est;
  est.position = normal.inverse() * rhs;
  est.n_observations = lines.size();
  est.objective = Objective::orthogonal;

  if (lines.size() >= 3) {
    const auto m = static_cast<Eigen::Index>(lines.size());
    Eigen::Matrix<double, Eigen::Dynamic, 2> jac(m, 2);
    Eigen::VectorXd res(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Point2 n = lines[i].normal();
      jac.row(i) = n.transpose();
      res(i) = n.dot(est.position - lines[i].anchor());
    }
    est.covariance = estimate_covariance(jac, res);
  }
  return est;
}

struct GaussNewtonOptions {
  int max_iterations = 100;
  double step_tolerance = 1e-9;      // meters
  double camera_clearance = 1e-6;    // meters
};

inline double heading_cost(std::span<const HeadingObservation> obs, const Point2& x) {
  double c = 0.0;
  for (const auto& o : obs) {
    const double r = signed_heading_residual(x, o.line, o.camera);
    c += r * r;
  }
  return c;
}

inline LandmarkEstimate triangulate_heading(std::span<const HeadingObservation> observations,
                                            const Point2& init,
                                            const GaussNewtonOptions& options = {}) {
  if (observations.size() < 2)
    throw InsufficientDataError("triangulation needs at least two projection lines");
  const auto obs = detail::sorted_observations(observations);
  const auto m = static_cast<Eigen::Index>(obs.size());

  auto check_clearance = [&](const Point2& x) {
    for (const auto& o : obs)
      if ((x - o.camera).norm() < options.camera_clearance)
        throw DegenerateGeometryError("iterate collides with a camera position");
  };

  Eigen::Matrix<double, Eigen::Dynamic, 2> jac(m, 2);
  Eigen::VectorXd res(m);
  auto linearize = [&](const Point2& x) {
    for (Eigen::Index i = 0; i < m; ++i) {
      res(i) = signed_heading_residual(x, obs[i].line, obs[i].camera);
      jac.row(i) = heading_residual_gradient(x, obs[i].camera).transpose();
    }
  };

  Point2 x = init;
  check_clearance(x);
  bool converged = false;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    linearize(x);
    const Eigen::Matrix2d jtj = jac.transpose() * jac;
    detail::require_well_conditioned(jtj, "triangulate_heading");
    const Point2 step = -jtj.ldlt().solve(jac.transpose() * res);

    // Backtrack only when the full step increases the cost.
    const double cost = res.squaredNorm();
    double scale = 1.0;
    Point2 candidate = x + step;
    while (scale > 1e-6) {
      check_clearance(candidate);
      if (heading_cost(obs, candidate) <= cost) break;
      scale *= 0.5;
      candidate = x + scale * step;
    }
    x = candidate;
    if ((scale * step).norm() < options.step_tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw NonConvergenceError("heading triangulation did not converge", x);

  LandmarkEstimate est;
  est.position = x;
  est.n_observations = obs.size();
  est.objective = Objective::heading;
  if (m >= 3) {
    linearize(x);
    est.covariance = estimate_covariance(jac, res);
  }
  return est;
}

/// Midpoint of the closest-approach points of two lines. For crossing lines
/// this is their intersection; for parallel ones, the midpoint between the
/// second anchor and its foot on the first line.
inline Point2 closest_approach_midpoint(const ProjectionLine& a, const ProjectionLine& b) {
  const double denom = cross(a.direction(), b.direction());
  if (std::abs(denom) > 1e-12) {
    const double t = cross(b.anchor() - a.anchor(), b.direction()) / denom;
    return a.anchor() + t * a.direction();
  }
  const Point2 foot = a.anchor() + a.direction() * a.direction().dot(b.anchor() - a.anchor());
  return 0.5 * (foot + b.anchor());
}

/// Warm start for the heading solver: the orthogonal closed form, falling
/// back to the first two lines' closest approach when that is degenerate.
inline Point2 heading_initialization(std::span<const HeadingObservation> observations) {
  if (observations.size() < 2)
    throw InsufficientDataError("triangulation needs at least two projection lines");
  std::vector<ProjectionLine> lines;
  lines.reserve(observations.size());
  for (const auto& o : observations) lines.push_back(o.line);
  try {
    return triangulate_orthogonal(lines).position;
  } catch (const DegenerateGeometryError&) {
    const auto sorted = detail::sorted_observations(observations);
    return closest_approach_midpoint(sorted[0].line, sorted[1].line);
  }
}

inline LandmarkEstimate triangulate(std::span<const HeadingObservation> observations,
                                    Objective objective = Objective::heading,
                                    const GaussNewtonOptions& options = {}) {
  if (objective == Objective::orthogonal) {
    std::vector<ProjectionLine> lines;
    lines.reserve(observations.size());
    for (const auto& o : observations) lines.push_back(o.line);
    return triangulate_orthogonal(lines);
  }
  return triangulate_heading(observations, heading_initialization(observations), options);
}

inline LandmarkEstimate triangulate(std::span<const LandmarkObservation> observations,
                                    Objective objective = Objective::heading,
                                    const GaussNewtonOptions& options = {}) {
  std::vector<HeadingObservation> obs;
  obs.reserve(observations.size());
  for (const auto& o : observations) obs.push_back(to_heading_observation(o));
  return triangulate(std::span<const HeadingObservation>(obs), objective, options);
}

}  // namespace crowdmap
