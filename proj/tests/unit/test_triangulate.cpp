#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "apap/error.hpp"
#include "apap/triangulate.hpp"

namespace apap {
namespace {

using Point = Eigen::Vector2d;
using Edge = std::pair<int, int>;

constexpr double kGrid = 1.0 / 256.0;

struct IPoint {
  long long x, y;
};

IPoint to_grid(const Point& p) {
  return {std::llround(p.x() / kGrid), std::llround(p.y() / kGrid)};
}

__int128 orient(IPoint a, IPoint b, IPoint c) {
  return static_cast<__int128>(b.x - a.x) * (c.y - a.y) -
         static_cast<__int128>(b.y - a.y) * (c.x - a.x);
}

// > 0 when d is strictly inside the circumcircle of the CCW triangle abc.
__int128 in_circle(IPoint a, IPoint b, IPoint c, IPoint d) {
  const __int128 adx = a.x - d.x, ady = a.y - d.y;
  const __int128 bdx = b.x - d.x, bdy = b.y - d.y;
  const __int128 cdx = c.x - d.x, cdy = c.y - d.y;
  return (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) -
         (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady) +
         (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
}

double area2(const CdtResult& r) {
  double sum = 0.0;
  for (const auto& t : r.triangles) {
    const Point e1 = r.points[t[1]] - r.points[t[0]];
    const Point e2 = r.points[t[2]] - r.points[t[0]];
    sum += e1.x() * e2.y() - e1.y() * e2.x();
  }
  return sum;
}

double polygon_area2(const std::vector<Point>& loop) {
  double sum = 0.0;
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const Point& a = loop[i];
    const Point& b = loop[(i + 1) % loop.size()];
    sum += a.x() * b.y() - a.y() * b.x();
  }
  return sum;
}

std::vector<Point> convex_hull(std::vector<Point> p) {
  std::sort(p.begin(), p.end(), [](const Point& a, const Point& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  std::vector<Point> h(2 * p.size());
  std::size_t k = 0;
  auto cross = [](const Point& o, const Point& a, const Point& b) {
    return (a - o).x() * (b - o).y() - (a - o).y() * (b - o).x();
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i - 1]) <= 0) --k;
    h[k++] = p[i - 1];
  }
  h.resize(k - 1);
  return h;
}

std::set<Edge> edge_set(const CdtResult& r) {
  std::set<Edge> edges;
  for (const auto& t : r.triangles)
    for (int k = 0; k < 3; ++k)
      edges.insert(std::minmax(t[k], t[(k + 1) % 3]));
  return edges;
}

std::vector<Point> random_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coord(0, 2048);
  std::set<std::pair<int, int>> seen;
  std::vector<Point> points;
  while (static_cast<int>(points.size()) < n) {
    const int x = coord(rng), y = coord(rng);
    if (seen.insert({x, y}).second) points.emplace_back(x * kGrid, y * kGrid);
  }
  return points;
}

class Unconstrained : public ::testing::TestWithParam<int> {};

TEST_P(Unconstrained, EmptyCircumcircleAndHullCoverage) {
  const auto points = random_points(150, static_cast<std::uint64_t>(GetParam()));
  CdtOptions options;
  options.remove_outside = false;
  const CdtResult r = constrained_delaunay(points, {}, options);
  ASSERT_EQ(r.points.size(), points.size());
  // Euler: a triangulation of n points with h on the hull has 2n - h - 2 faces.
  const auto hull = convex_hull(points);
  EXPECT_EQ(r.triangles.size(), 2 * points.size() - hull.size() - 2);
  EXPECT_NEAR(area2(r), polygon_area2(hull), 1e-9);
  for (const auto& t : r.triangles) {
    const IPoint a = to_grid(r.points[t[0]]), b = to_grid(r.points[t[1]]),
                 c = to_grid(r.points[t[2]]);
    ASSERT_GT(orient(a, b, c), 0);
    for (std::size_t d = 0; d < points.size(); ++d)
      EXPECT_LE(in_circle(a, b, c, to_grid(r.points[d])), 0)
          << "point " << d << " inside circumcircle";
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, Unconstrained, ::testing::Values(1, 2, 3, 4));

TEST(Unconstrained, CocircularGridIsHandled) {
  std::vector<Point> points;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) points.emplace_back(i * 0.125, j * 0.125);
  CdtOptions options;
  options.remove_outside = false;
  const CdtResult r = constrained_delaunay(points, {}, options);
  EXPECT_EQ(r.triangles.size(), 2u * 7 * 7);
  EXPECT_NEAR(area2(r), 2 * 0.875 * 0.875, 1e-12);
}

bool segments_cross(IPoint p, IPoint q, IPoint a, IPoint b) {
  const __int128 d1 = orient(a, b, p), d2 = orient(a, b, q);
  const __int128 d3 = orient(p, q, a), d4 = orient(p, q, b);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
         ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

// A star-shaped boundary loop plus interior points.
struct Polygon {
  std::vector<Point> points;
  std::vector<Edge> constraints;
  std::vector<Point> loop;
};

Polygon star_polygon(int spikes, int interior, std::uint64_t seed) {
  Polygon poly;
  const int n = 2 * spikes;
  for (int i = 0; i < n; ++i) {
    const double angle = 2 * M_PI * i / n;
    const double radius = i % 2 == 0 ? 3.5 : 1.8;
    const Point p(std::round((4 + radius * std::cos(angle)) / kGrid) * kGrid,
                  std::round((4 + radius * std::sin(angle)) / kGrid) * kGrid);
    poly.points.push_back(p);
    poly.loop.push_back(p);
    poly.constraints.emplace_back(i, (i + 1) % n);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  std::set<std::pair<long long, long long>> seen;
  for (const Point& p : poly.points) seen.insert({to_grid(p).x, to_grid(p).y});
  while (static_cast<int>(poly.points.size()) < n + interior) {
    const Point p(std::round(u(rng) / kGrid) * kGrid, std::round(u(rng) / kGrid) * kGrid);
    // Keep points inside the inner radius so they never touch the boundary.
    if ((p - Point(4, 4)).norm() > 1.5) continue;
    if (!seen.insert({to_grid(p).x, to_grid(p).y}).second) continue;
    poly.points.push_back(p);
  }
  return poly;
}

TEST(Constrained, KeepsConstraintsAndIsConstrainedDelaunay) {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    Polygon poly = star_polygon(7, 120, seed);
    // An interior chord that cuts across many Delaunay edges.
    poly.points.emplace_back(3.0, 4.0 + kGrid * 3);
    poly.points.emplace_back(5.0, 4.0 - kGrid * 5);
    const int a = static_cast<int>(poly.points.size()) - 2;
    poly.constraints.emplace_back(a, a + 1);

    const CdtResult r = constrained_delaunay(poly.points, poly.constraints);
    const std::set<Edge> edges = edge_set(r);
    for (const Edge& c : poly.constraints)
      EXPECT_TRUE(edges.count(std::minmax(c.first, c.second))) << c.first << "-" << c.second;
    EXPECT_NEAR(area2(r), polygon_area2(poly.loop), 1e-9);

    std::vector<std::pair<IPoint, IPoint>> segments;
    for (const Edge& c : poly.constraints)
      segments.emplace_back(to_grid(r.points[c.first]), to_grid(r.points[c.second]));
    for (const auto& t : r.triangles) {
      const IPoint p0 = to_grid(r.points[t[0]]), p1 = to_grid(r.points[t[1]]),
                   p2 = to_grid(r.points[t[2]]);
      ASSERT_GT(orient(p0, p1, p2), 0);
      // Scaled by 3 so the centroid stays on the integer lattice.
      const IPoint centroid{p0.x + p1.x + p2.x, p0.y + p1.y + p2.y};
      for (std::size_t d = 0; d < r.points.size(); ++d) {
        const IPoint q = to_grid(r.points[d]);
        if (in_circle(p0, p1, p2, q) <= 0) continue;
        const IPoint q3{3 * q.x, 3 * q.y};
        bool blocked = false;
        for (const auto& [s0, s1] : segments)
          blocked |= segments_cross(centroid, q3, {3 * s0.x, 3 * s0.y}, {3 * s1.x, 3 * s1.y});
        EXPECT_TRUE(blocked) << "visible point " << d << " inside a circumcircle";
      }
    }
  }
}

TEST(Constrained, SnapsInputToTheGrid) {
  const std::vector<Point> points = {{0.001, 0.0}, {1.0, 0.001}, {0.0, 1.0}};
  CdtOptions options;
  options.remove_outside = false;
  const CdtResult r = constrained_delaunay(points, {}, options);
  ASSERT_EQ(r.triangles.size(), 1u);
  EXPECT_EQ(r.points[0], Point(0.0, 0.0));
  EXPECT_EQ(r.points[1], Point(1.0, 0.0));
}

TEST(Constrained, WithoutLoopsEverythingIsOutside) {
  EXPECT_TRUE(constrained_delaunay(random_points(20, 5), {}).triangles.empty());
}

TEST(Constrained, RejectsBadInput) {
  EXPECT_THROW(constrained_delaunay({{0, 0}, {1, 0}, {0, 1}, {0, 0}}, {}), InvalidInputError);
  // (0.5, 0) lies in the interior of the constraint from (0,0) to (1,0).
  EXPECT_THROW(constrained_delaunay({{0, 0}, {1, 0}, {0, 1}, {0.5, 0}}, {{0, 1}}),
               InvalidInputError);
  EXPECT_THROW(constrained_delaunay({{0, 0}, {1, 0}, {0, 1}}, {{0, 3}}), InvalidInputError);
}

}  // namespace
}  // namespace apap
