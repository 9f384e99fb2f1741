#include "apap/triangulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <unordered_map>
#include <unordered_set>

#include "apap/error.hpp"

namespace apap {
namespace {

using i128 = __int128;

struct IPoint {
  std::int64_t x, y;
};

int sign(i128 v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

int orient(const IPoint& a, const IPoint& b, const IPoint& c) {
  const i128 abx = b.x - a.x, aby = b.y - a.y;
  const i128 acx = c.x - a.x, acy = c.y - a.y;
  return sign(abx * acy - aby * acx);
}

/// > 0 when d lies strictly inside the circle through counter-clockwise a, b, c.
int incircle(const IPoint& a, const IPoint& b, const IPoint& c, const IPoint& d) {
  const i128 adx = a.x - d.x, ady = a.y - d.y;
  const i128 bdx = b.x - d.x, bdy = b.y - d.y;
  const i128 cdx = c.x - d.x, cdy = c.y - d.y;
  const i128 alift = adx * adx + ady * ady;
  const i128 blift = bdx * bdx + bdy * bdy;
  const i128 clift = cdx * cdx + cdy * cdy;
  return sign(alift * (bdx * cdy - cdx * bdy) + blift * (cdx * ady - adx * cdy) +
              clift * (adx * bdy - bdx * ady));
}

std::uint64_t key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

std::uint64_t undirected(int a, int b) { return a < b ? key(a, b) : key(b, a); }

class Mesh {
 public:
  explicit Mesh(std::vector<IPoint> pts) : pts_(std::move(pts)) {}

  const IPoint& p(int i) const { return pts_[i]; }
  int num_points() const { return static_cast<int>(pts_.size()); }

  int add(int a, int b, int c) {
    const int t = static_cast<int>(tris_.size());
    tris_.push_back({a, b, c});
    alive_.push_back(1);
    half_[key(a, b)] = t;
    half_[key(b, c)] = t;
    half_[key(c, a)] = t;
    last_ = t;
    return t;
  }

  void remove(int t) {
    const auto& v = tris_[t];
    for (int k = 0; k < 3; ++k) {
      const auto it = half_.find(key(v[k], v[(k + 1) % 3]));
      if (it != half_.end() && it->second == t) half_.erase(it);
    }
    alive_[t] = 0;
  }

  /// Triangle containing the directed edge a->b, or -1.
  int face(int a, int b) const {
    const auto it = half_.find(key(a, b));
    return it == half_.end() ? -1 : it->second;
  }

  /// Vertex of triangle t that is not a or b.
  int apex(int t, int a, int b) const {
    for (int v : tris_[t])
      if (v != a && v != b) return v;
    return -1;
  }

  /// Replaces a->b (in a,b,c) and b->a (in b,a,d) by c-d. Returns false if
  /// the edge is not shared by two triangles.
  bool flip(int a, int b) {
    const int t1 = face(a, b), t2 = face(b, a);
    if (t1 < 0 || t2 < 0) return false;
    const int c = apex(t1, a, b), d = apex(t2, b, a);
    remove(t1);
    remove(t2);
    add(a, d, c);
    add(d, b, c);
    return true;
  }

  /// Triangle containing q (or with q on its boundary).
  int locate(const IPoint& q) const {
    int t = last_;
    if (t < 0 || !alive_[t]) t = any_alive();
    const std::size_t limit = 4 * tris_.size() + 16;
    for (std::size_t step = 0; step < limit; ++step) {
      const auto& v = tris_[t];
      int next = -1;
      for (int k = 0; k < 3; ++k) {
        const int a = v[(k + step) % 3], b = v[(k + step + 1) % 3];
        if (orient(pts_[a], pts_[b], q) < 0) {
          next = face(b, a);
          break;
        }
      }
      if (next < 0) return t;
      t = next;
    }
    for (std::size_t s = 0; s < tris_.size(); ++s) {
      if (!alive_[s]) continue;
      const auto& v = tris_[s];
      if (orient(pts_[v[0]], pts_[v[1]], q) >= 0 && orient(pts_[v[1]], pts_[v[2]], q) >= 0 &&
          orient(pts_[v[2]], pts_[v[0]], q) >= 0)
        return static_cast<int>(s);
    }
    throw NumericalError("triangulation point location failed");
  }

  int any_alive() const {
    for (std::size_t t = 0; t < tris_.size(); ++t)
      if (alive_[t]) return static_cast<int>(t);
    return -1;
  }

  const std::vector<std::array<int, 3>>& tris() const { return tris_; }
  bool alive(int t) const { return alive_[t] != 0; }

 private:
  std::vector<IPoint> pts_;
  std::vector<std::array<int, 3>> tris_;
  std::vector<char> alive_;
  std::unordered_map<std::uint64_t, int> half_;
  int last_ = -1;
};

class Builder {
 public:
  Builder(Mesh& mesh, const std::unordered_set<std::uint64_t>& constrained)
      : m_(mesh), constrained_(constrained) {}

  /// Restores the Delaunay property around edges a->b whose left triangle
  /// contains the freshly changed vertex.
  void legalize(std::vector<std::pair<int, int>> stack) {
    while (!stack.empty()) {
      const auto [a, b] = stack.back();
      stack.pop_back();
      if (constrained_.count(undirected(a, b))) continue;
      const int t1 = m_.face(a, b), t2 = m_.face(b, a);
      if (t1 < 0 || t2 < 0) continue;
      const int c = m_.apex(t1, a, b), d = m_.apex(t2, b, a);
      if (incircle(m_.p(a), m_.p(b), m_.p(c), m_.p(d)) > 0) {
        m_.flip(a, b);
        stack.emplace_back(a, d);
        stack.emplace_back(d, b);
      }
    }
  }

  void insert(int index) {
    const IPoint& q = m_.p(index);
    const int t = m_.locate(q);
    const auto v = m_.tris()[t];
    int on_edge = -1;
    for (int k = 0; k < 3; ++k) {
      const IPoint& a = m_.p(v[k]);
      if (a.x == q.x && a.y == q.y)
        throw InvalidInputError("duplicate triangulation point " + std::to_string(index));
      if (orient(a, m_.p(v[(k + 1) % 3]), q) == 0) on_edge = k;
    }
    if (on_edge < 0) {
      m_.remove(t);
      m_.add(v[0], v[1], index);
      m_.add(v[1], v[2], index);
      m_.add(v[2], v[0], index);
      legalize({{v[0], v[1]}, {v[1], v[2]}, {v[2], v[0]}});
      return;
    }
    const int a = v[on_edge], b = v[(on_edge + 1) % 3], c = v[(on_edge + 2) % 3];
    const int t2 = m_.face(b, a);
    m_.remove(t);
    if (t2 < 0) {
      m_.add(b, c, index);
      m_.add(c, a, index);
      legalize({{b, c}, {c, a}});
      return;
    }
    const int d = m_.apex(t2, b, a);
    m_.remove(t2);
    m_.add(b, c, index);
    m_.add(c, a, index);
    m_.add(a, d, index);
    m_.add(d, b, index);
    legalize({{b, c}, {c, a}, {a, d}, {d, b}});
  }

  bool crosses(int a, int b, int u, int v) const {
    if (u == a || u == b || v == a || v == b) return false;
    const IPoint &pa = m_.p(a), &pb = m_.p(b), &pu = m_.p(u), &pv = m_.p(v);
    return orient(pa, pb, pu) * orient(pa, pb, pv) < 0 &&
           orient(pu, pv, pa) * orient(pu, pv, pb) < 0;
  }

  void recover(int a, int b) {
    if (m_.face(a, b) >= 0 || m_.face(b, a) >= 0) return;
    const IPoint &pa = m_.p(a), &pb = m_.p(b);
    for (int w = 0; w < m_.num_points(); ++w) {
      if (w == a || w == b) continue;
      const IPoint& pw = m_.p(w);
      if (orient(pa, pb, pw) != 0) continue;
      const i128 dot = static_cast<i128>(pw.x - pa.x) * (pb.x - pa.x) +
                       static_cast<i128>(pw.y - pa.y) * (pb.y - pa.y);
      const i128 len = static_cast<i128>(pb.x - pa.x) * (pb.x - pa.x) +
                       static_cast<i128>(pb.y - pa.y) * (pb.y - pa.y);
      if (dot > 0 && dot < len)
        throw InvalidInputError("point " + std::to_string(w) +
                                " lies on constraint segment " + std::to_string(a) + "-" +
                                std::to_string(b));
    }

    std::deque<std::pair<int, int>> crossing;
    for (std::size_t t = 0; t < m_.tris().size(); ++t) {
      if (!m_.alive(static_cast<int>(t))) continue;
      const auto& v = m_.tris()[t];
      for (int k = 0; k < 3; ++k) {
        const int u = v[k], w = v[(k + 1) % 3];
        if (u < w && crosses(a, b, u, w)) crossing.emplace_back(u, w);
      }
    }

    std::size_t guard = 0;
    const std::size_t limit = 64 * (crossing.size() + 4) * (crossing.size() + 4);
    while (!crossing.empty()) {
      if (++guard > limit) throw NumericalError("constraint recovery did not converge");
      const auto [u, v] = crossing.front();
      crossing.pop_front();
      const int t1 = m_.face(u, v), t2 = m_.face(v, u);
      if (t1 < 0 || t2 < 0)
        throw NumericalError("constraint crosses the triangulation boundary");
      const int c = m_.apex(t1, u, v), d = m_.apex(t2, v, u);
      const bool convex =
          orient(m_.p(c), m_.p(d), m_.p(u)) * orient(m_.p(c), m_.p(d), m_.p(v)) < 0;
      if (!convex) {
        crossing.emplace_back(u, v);
        continue;
      }
      m_.flip(u, v);
      if (crosses(a, b, c, d)) crossing.emplace_back(c, d);
    }
  }


  /// Lawson pass over every unconstrained edge until all are locally Delaunay.
  void finalize() {
    std::vector<std::pair<int, int>> stack;
    for (std::size_t t = 0; t < m_.tris().size(); ++t) {
      if (!m_.alive(static_cast<int>(t))) continue;
      const auto& v = m_.tris()[t];
      for (int k = 0; k < 3; ++k) stack.emplace_back(v[k], v[(k + 1) % 3]);
    }
    legalize_general(std::move(stack));
  }

 private:
  void legalize_general(std::vector<std::pair<int, int>> stack) {
    while (!stack.empty()) {
      const auto [a, b] = stack.back();
      stack.pop_back();
      if (constrained_.count(undirected(a, b))) continue;
      const int t1 = m_.face(a, b), t2 = m_.face(b, a);
      if (t1 < 0 || t2 < 0) continue;
      const int c = m_.apex(t1, a, b), d = m_.apex(t2, b, a);
      if (incircle(m_.p(a), m_.p(b), m_.p(c), m_.p(d)) > 0) {
        m_.flip(a, b);
        stack.emplace_back(a, d);
        stack.emplace_back(d, b);
        stack.emplace_back(b, c);
        stack.emplace_back(c, a);
      }
    }
  }

  Mesh& m_;
  const std::unordered_set<std::uint64_t>& constrained_;
};

/// Convex hull as a counter-clockwise index loop that keeps collinear
/// boundary points, so every hull edge is empty. Empty when all points are
/// collinear.
std::vector<int> convex_hull(const std::vector<IPoint>& pts, int n) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return pts[a].x < pts[b].x || (pts[a].x == pts[b].x && pts[a].y < pts[b].y);
  });
  bool flat = true;
  for (int i = 2; i < n && flat; ++i)
    flat = orient(pts[order[0]], pts[order[1]], pts[order[i]]) == 0;
  if (flat) return {};
  std::vector<int> hull;
  auto chain = [&](auto begin, auto end) {
    const std::size_t base = hull.size();
    for (auto it = begin; it != end; ++it) {
      while (hull.size() >= base + 2 &&
             orient(pts[hull[hull.size() - 2]], pts[hull.back()], pts[*it]) < 0)
        hull.pop_back();
      hull.push_back(*it);
    }
    hull.pop_back();
  };
  chain(order.begin(), order.end());
  chain(order.rbegin(), order.rend());
  return hull;
}

}  // namespace

CdtResult constrained_delaunay(const std::vector<Eigen::Vector2d>& points,
                               const std::vector<std::pair<int, int>>& constraints,
                               const CdtOptions& options) {
  if (!(options.grid > 0.0)) throw InvalidInputError("triangulation grid must be positive");
  const int n = static_cast<int>(points.size());
  if (n < 3) throw InvalidInputError("triangulation needs at least 3 points");

  constexpr double kMaxCoord = 16777216.0;  // 2^24
  std::vector<IPoint> ipts(n + 3);
  CdtResult result;
  result.points.resize(n);
  std::int64_t min_x = INT64_MAX, min_y = INT64_MAX, max_x = INT64_MIN, max_y = INT64_MIN;
  for (int i = 0; i < n; ++i) {
    const double sx = std::round(points[i].x() / options.grid);
    const double sy = std::round(points[i].y() / options.grid);
    if (!(std::abs(sx) < kMaxCoord && std::abs(sy) < kMaxCoord))
      throw InvalidInputError("triangulation point " + std::to_string(i) +
                              " is out of range for the snapping grid");
    ipts[i] = {static_cast<std::int64_t>(sx), static_cast<std::int64_t>(sy)};
    result.points[i] = Eigen::Vector2d(sx * options.grid, sy * options.grid);
    min_x = std::min(min_x, ipts[i].x);
    max_x = std::max(max_x, ipts[i].x);
    min_y = std::min(min_y, ipts[i].y);
    max_y = std::max(max_y, ipts[i].y);
  }
  const std::int64_t cx = (min_x + max_x) / 2, cy = (min_y + max_y) / 2;
  const std::int64_t span = std::max(max_x - min_x, max_y - min_y) + 1;
  ipts[n] = {cx - 4 * span, cy - 4 * span};
  ipts[n + 1] = {cx + 4 * span, cy - 4 * span};
  ipts[n + 2] = {cx, cy + 4 * span};

  std::unordered_set<std::uint64_t> constrained;
  for (const auto& [a, b] : constraints) {
    if (a < 0 || b < 0 || a >= n || b >= n || a == b)
      throw InvalidInputError("invalid constraint " + std::to_string(a) + "-" +
                              std::to_string(b));
    constrained.insert(undirected(a, b));
  }

  // With a finite super-triangle, Lawson flips can leave a super vertex on
  // the Delaunay side of a hull edge. Hull edges lie in every triangulation,
  // so they are recovered and locked before the super-triangle is stripped.
  const std::vector<int> hull = convex_hull(ipts, n);
  std::unordered_set<std::uint64_t> locked = constrained;
  for (std::size_t i = 0; i < hull.size(); ++i)
    locked.insert(undirected(hull[i], hull[(i + 1) % hull.size()]));

  Mesh mesh(std::move(ipts));
  mesh.add(n, n + 1, n + 2);
  Builder builder(mesh, locked);
  for (int i = 0; i < n; ++i) builder.insert(i);
  for (std::size_t i = 0; i < hull.size(); ++i)
    builder.recover(hull[i], hull[(i + 1) % hull.size()]);
  for (const auto& [a, b] : constraints) builder.recover(a, b);
  builder.finalize();

  const auto& tris = mesh.tris();
  std::vector<char> outside(tris.size(), 0);
  std::vector<int> stack;
  for (std::size_t t = 0; t < tris.size(); ++t) {
    if (!mesh.alive(static_cast<int>(t))) continue;
    for (int v : tris[t])
      if (v >= n) {
        outside[t] = 1;
        stack.push_back(static_cast<int>(t));
        break;
      }
  }
  if (options.remove_outside) {
    while (!stack.empty()) {
      const int t = stack.back();
      stack.pop_back();
      const auto& v = tris[t];
      for (int k = 0; k < 3; ++k) {
        const int a = v[k], b = v[(k + 1) % 3];
        if (a < n && b < n && constrained.count(undirected(a, b))) continue;
        const int nb = mesh.face(b, a);
        if (nb >= 0 && !outside[nb]) {
          outside[nb] = 1;
          stack.push_back(nb);
        }
      }
    }
  }
  for (std::size_t t = 0; t < tris.size(); ++t)
    if (mesh.alive(static_cast<int>(t)) && !outside[t]) result.triangles.push_back(tris[t]);
  std::sort(result.triangles.begin(), result.triangles.end());
  return result;
}

}  // namespace apap
