#pragma once

#include <Eigen/Core>
#include <array>
#include <utility>
#include <vector>

namespace apap {

struct CdtOptions {
  /// Input coordinates are snapped to multiples of this value so that the
  /// orientation and in-circle predicates can run in exact integer arithmetic.
  /// |coordinate| / grid must stay below 2^24.
  double grid = 1.0 / 256.0;
  /// Discard triangles outside the constraint loops (flood fill from the
  /// exterior across unconstrained edges). When false only the helper
  /// super-triangle is removed.
  bool remove_outside = true;
};

struct CdtResult {
  std::vector<Eigen::Vector2d> points;  // snapped input points, same order
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise
};

/// Constrained Delaunay triangulation: incremental insertion with Lawson
/// flips, constraint recovery by edge flips, then a final Delaunay pass over
/// unconstrained edges. Every constraint appears as an edge of the output.
/// Throws InvalidInputError on duplicate points or a point lying in the
/// interior of a constraint segment.
CdtResult constrained_delaunay(const std::vector<Eigen::Vector2d>& points,
                               const std::vector<std::pair<int, int>>& constraints,
                               const CdtOptions& options = {});

}  // namespace apap
