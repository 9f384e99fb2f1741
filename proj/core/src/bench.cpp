#include "apap/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "apap/error.hpp"
#include "apap/render.hpp"
#include "apap/triangulate.hpp"

namespace apap {

using nlohmann::json;

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), 1));
}

BinaryMask mask_from_image(const Image& image, float threshold) {
  BinaryMask mask(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      float sum = 0.0f;
      for (int c = 0; c < image.channels; ++c) sum += image.at(x, y, c);
      mask.at(x, y) = sum / image.channels > threshold ? 1 : 0;
    }
  return mask;
}

BinaryMask load_mask(const std::filesystem::path& path) {
  return mask_from_image(read_png(path));
}

namespace {

BinaryMask erode_or_dilate(const BinaryMask& in, bool erode) {
  BinaryMask out(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      bool value = erode;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          const bool v = xx >= 0 && yy >= 0 && xx < in.width && yy < in.height &&
                         in.at(xx, yy) != 0;
          value = erode ? (value && v) : (value || v);
        }
      out.at(x, y) = value ? 1 : 0;
    }
  return out;
}

/// 4-connected labels of pixels equal to `value`; returns component count.
int label_components(const BinaryMask& mask, std::uint8_t value, std::vector<int>& labels) {
  labels.assign(mask.pixels.size(), -1);
  int count = 0;
  std::vector<int> stack;
  for (std::size_t start = 0; start < mask.pixels.size(); ++start) {
    if (mask.pixels[start] != value || labels[start] >= 0) continue;
    labels[start] = count;
    stack.push_back(static_cast<int>(start));
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int x = p % mask.width, y = p / mask.width;
      const int nbrs[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= mask.width || n[1] >= mask.height) continue;
        const int q = n[1] * mask.width + n[0];
        if (mask.pixels[q] == value && labels[q] < 0) {
          labels[q] = count;
          stack.push_back(q);
        }
      }
    }
    ++count;
  }
  return count;
}

}  // namespace

BinaryMask clean_mask(const BinaryMask& mask) {
  if (mask.width <= 0 || mask.height <= 0 ||
      mask.pixels.size() != static_cast<std::size_t>(mask.width) * mask.height)
    throw InvalidInputError("mask has an invalid shape");
  const BinaryMask opened = erode_or_dilate(erode_or_dilate(mask, true), false);

  std::vector<int> labels;
  const int count = label_components(opened, 1, labels);
  if (count == 0) throw InvalidInputError("mask has no foreground after cleaning");
  std::vector<std::size_t> sizes(count, 0);
  for (int l : labels)
    if (l >= 0) ++sizes[l];
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  BinaryMask out(mask.width, mask.height);
  for (std::size_t i = 0; i < labels.size(); ++i) out.pixels[i] = labels[i] == keep ? 1 : 0;

  // Fill background regions that do not touch the border.
  std::vector<int> bg;
  const int bg_count = label_components(out, 0, bg);
  std::vector<char> touches(bg_count, 0);
  for (int x = 0; x < out.width; ++x) {
    if (bg[x] >= 0) touches[bg[x]] = 1;
    const int q = (out.height - 1) * out.width + x;
    if (bg[q] >= 0) touches[bg[q]] = 1;
  }
  for (int y = 0; y < out.height; ++y) {
    const int a = y * out.width, b = y * out.width + out.width - 1;
    if (bg[a] >= 0) touches[bg[a]] = 1;
    if (bg[b] >= 0) touches[bg[b]] = 1;
  }
  for (std::size_t i = 0; i < bg.size(); ++i)
    if (bg[i] >= 0 && !touches[bg[i]]) out.pixels[i] = 1;
  return out;
}

double polygon_signed_area(const std::vector<Eigen::Vector2d>& polygon) {
  double area = 0.0;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const auto& a = polygon[i];
    const auto& b = polygon[(i + 1) % polygon.size()];
    area += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * area;
}

std::vector<Eigen::Vector2d> trace_contour(const BinaryMask& mask) {
  auto value = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < mask.width && y < mask.height && mask.at(x, y) != 0;
  };
  // Crossing points live on the half-integer lattice; store them doubled.
  using Key = std::pair<int, int>;
  std::map<Key, std::vector<Key>> adjacency;
  auto link = [&](Key a, Key b) {
    adjacency[a].push_back(b);
    adjacency[b].push_back(a);
  };
  for (int j = -1; j < mask.height; ++j) {
    for (int i = -1; i < mask.width; ++i) {
      const bool tl = value(i, j), tr = value(i + 1, j);
      const bool br = value(i + 1, j + 1), bl = value(i, j + 1);
      const Key top{2 * i + 2, 2 * j + 1}, right{2 * i + 3, 2 * j + 2};
      const Key bottom{2 * i + 2, 2 * j + 3}, left{2 * i + 1, 2 * j + 2};
      std::vector<Key> crossing;
      if (tl != tr) crossing.push_back(top);
      if (tr != br) crossing.push_back(right);
      if (br != bl) crossing.push_back(bottom);
      if (bl != tl) crossing.push_back(left);
      if (crossing.size() == 2) {
        link(crossing[0], crossing[1]);
      } else if (crossing.size() == 4) {
        // Saddle: keep the two foreground corners apart.
        if (tl) {
          link(top, left);
          link(right, bottom);
        } else {
          link(top, right);
          link(bottom, left);
        }
      }
    }
  }
  if (adjacency.empty()) throw InvalidInputError("mask has no contour");

  std::set<Key> visited;
  std::vector<Eigen::Vector2d> best;
  double best_area = 0.0;
  for (const auto& [start, nbrs] : adjacency) {
    if (visited.count(start)) continue;
    std::vector<Eigen::Vector2d> loop;
    Key prev = start, cur = start;
    do {
      visited.insert(cur);
      loop.emplace_back(0.5 * cur.first + 0.5, 0.5 * cur.second + 0.5);
      const auto& n = adjacency[cur];
      const Key next = (n[0] != prev || cur == start) ? n[0] : n[1];
      prev = cur;
      cur = next;
    } while (cur != start && loop.size() <= adjacency.size());
    const double area = std::abs(polygon_signed_area(loop));
    if (area > best_area) {
      best_area = area;
      best = std::move(loop);
    }
  }
  if (polygon_signed_area(best) < 0.0) std::reverse(best.begin(), best.end());
  return best;
}

namespace {

double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

void douglas_peucker(const std::vector<Eigen::Vector2d>& pts, std::size_t first,
                     std::size_t last, double tolerance, std::vector<char>& keep) {
  std::vector<std::pair<std::size_t, std::size_t>> stack{{first, last}};
  while (!stack.empty()) {
    const auto [i, j] = stack.back();
    stack.pop_back();
    if (j <= i + 1) continue;
    double worst = -1.0;
    std::size_t index = i;
    for (std::size_t k = i + 1; k < j; ++k) {
      const double d = point_segment_distance(pts[k], pts[i], pts[j % pts.size()]);
      if (d > worst) {
        worst = d;
        index = k;
      }
    }
    if (worst > tolerance) {
      keep[index] = 1;
      stack.emplace_back(i, index);
      stack.emplace_back(index, j);
    }
  }
}

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

bool segments_intersect(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                        const Eigen::Vector2d& c, const Eigen::Vector2d& d) {
  const double d1 = cross2(b - a, c - a), d2 = cross2(b - a, d - a);
  const double d3 = cross2(d - c, a - c), d4 = cross2(d - c, b - c);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  auto on_segment = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q,
                       const Eigen::Vector2d& r) {
    return std::min(p.x(), q.x()) <= r.x() && r.x() <= std::max(p.x(), q.x()) &&
           std::min(p.y(), q.y()) <= r.y() && r.y() <= std::max(p.y(), q.y());
  };
  return (d1 == 0 && on_segment(a, b, c)) || (d2 == 0 && on_segment(a, b, d)) ||
         (d3 == 0 && on_segment(c, d, a)) || (d4 == 0 && on_segment(c, d, b));
}

}  // namespace

std::vector<Eigen::Vector2d> simplify_closed(const std::vector<Eigen::Vector2d>& polygon,
                                             double tolerance) {
  const std::size_t n = polygon.size();
  if (n < 4) return polygon;
  std::size_t far = 0;
  double far_d = -1.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double d = (polygon[i] - polygon[0]).squaredNorm();
    if (d > far_d) {
      far_d = d;
      far = i;
    }
  }
  std::vector<char> keep(n, 0);
  keep[0] = keep[far] = 1;
  douglas_peucker(polygon, 0, far, tolerance, keep);
  // Second half wraps around to index 0, addressed as n.
  std::vector<Eigen::Vector2d> wrapped(polygon.begin(), polygon.end());
  std::vector<char> keep_wrapped(n + 1, 0);
  douglas_peucker(wrapped, far, n, tolerance, keep_wrapped);
  for (std::size_t i = far + 1; i < n; ++i) keep[i] = keep[i] || keep_wrapped[i];

  std::vector<Eigen::Vector2d> out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(polygon[i]);
  return out;
}

bool polygon_self_intersects(const std::vector<Eigen::Vector2d>& polygon) {
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // adjacent edges
      if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j],
                             polygon[(j + 1) % n]))
        return true;
    }
  }
  return false;
}

bool point_in_polygon(const std::vector<Eigen::Vector2d>& polygon, const Eigen::Vector2d& p) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = polygon[i];
    const auto& b = polygon[j];
    if ((a.y() > p.y()) != (b.y() > p.y()) &&
        p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
      inside = !inside;
  }
  return inside;
}

namespace {

double distance_to_polygon(const std::vector<Eigen::Vector2d>& polygon,
                           const Eigen::Vector2d& p) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < polygon.size(); ++i)
    best = std::min(best, point_segment_distance(p, polygon[i],
                                                 polygon[(i + 1) % polygon.size()]));
  return best;
}

std::vector<Eigen::Vector2d> subdivide(const std::vector<Eigen::Vector2d>& polygon,
                                       double spacing) {
  std::vector<Eigen::Vector2d> out;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const auto& a = polygon[i];
    const auto& b = polygon[(i + 1) % polygon.size()];
    const int pieces = std::max(1, static_cast<int>(std::ceil((b - a).norm() / spacing - 1e-9)));
    for (int k = 0; k < pieces; ++k) out.push_back(a + (b - a) * (double(k) / pieces));
  }
  return out;
}

/// Bridson sampling inside the polygon, at least `radius` apart and at least
/// radius / 2 from the boundary.
std::vector<Eigen::Vector2d> poisson_disk(const std::vector<Eigen::Vector2d>& polygon,
                                          double radius, std::mt19937_64& rng) {
  Eigen::Vector2d lo = polygon.front(), hi = polygon.front();
  for (const auto& p : polygon) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double cell = radius / std::sqrt(2.0);
  const int gw = static_cast<int>(std::ceil((hi.x() - lo.x()) / cell)) + 1;
  const int gh = static_cast<int>(std::ceil((hi.y() - lo.y()) / cell)) + 1;
  std::vector<int> grid(static_cast<std::size_t>(gw) * gh, -1);
  std::vector<Eigen::Vector2d> samples;

  auto valid = [&](const Eigen::Vector2d& p) {
    if (p.x() < lo.x() || p.y() < lo.y() || p.x() > hi.x() || p.y() > hi.y()) return false;
    const int gx = static_cast<int>((p.x() - lo.x()) / cell);
    const int gy = static_cast<int>((p.y() - lo.y()) / cell);
    for (int y = std::max(0, gy - 2); y <= std::min(gh - 1, gy + 2); ++y)
      for (int x = std::max(0, gx - 2); x <= std::min(gw - 1, gx + 2); ++x) {
        const int s = grid[static_cast<std::size_t>(y) * gw + x];
        if (s >= 0 && (samples[s] - p).squaredNorm() < radius * radius) return false;
      }
    return point_in_polygon(polygon, p) && distance_to_polygon(polygon, p) >= 0.5 * radius;
  };
  auto add = [&](const Eigen::Vector2d& p) {
    const int gx = static_cast<int>((p.x() - lo.x()) / cell);
    const int gy = static_cast<int>((p.y() - lo.y()) / cell);
    grid[static_cast<std::size_t>(gy) * gw + gx] = static_cast<int>(samples.size());
    samples.push_back(p);
  };

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> active;
  auto grow = [&]() {
    while (!active.empty()) {
      const std::size_t pick = static_cast<std::size_t>(unit(rng) * active.size()) % active.size();
      const Eigen::Vector2d origin = samples[active[pick]];
      bool placed = false;
      for (int attempt = 0; attempt < 30; ++attempt) {
        const double angle = 2.0 * std::numbers::pi * unit(rng);
        const double dist = radius * (1.0 + unit(rng));
        const Eigen::Vector2d cand = origin + dist * Eigen::Vector2d(std::cos(angle), std::sin(angle));
        if (valid(cand)) {
          active.push_back(static_cast<int>(samples.size()));
          add(cand);
          placed = true;
          break;
        }
      }
      if (!placed) {
        active[pick] = active.back();
        active.pop_back();
      }
    }
  };
  // Seed every region the growth front cannot reach (narrow necks).
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const Eigen::Vector2d cand = lo + cell * Eigen::Vector2d(gx + unit(rng), gy + unit(rng));
      if (!valid(cand)) continue;
      active.push_back(static_cast<int>(samples.size()));
      add(cand);
      grow();
    }
  return samples;
}

}  // namespace

MaskTriangulation triangulate_mask(const BinaryMask& raw_mask,
                                   const MeshFromMaskOptions& options) {
  if (options.interior_samples < 0)
    throw InvalidInputError("interior sample count must be non-negative");
  const BinaryMask mask = clean_mask(raw_mask);
  const std::vector<Eigen::Vector2d> contour =
      simplify_closed(trace_contour(mask), options.simplify_tolerance_px);
  if (contour.size() < 3) throw InvalidInputError("too few contour samples after simplification");
  if (polygon_self_intersects(contour))
    throw InvalidInputError("mask contour self-intersects after simplification");

  const double area = polygon_signed_area(contour);
  std::vector<Eigen::Vector2d> interior;
  std::vector<Eigen::Vector2d> boundary = contour;
  if (options.interior_samples > 0) {
    double radius = std::sqrt(0.7 * area / options.interior_samples);
    for (int round = 0; round < 3; ++round) {
      std::mt19937_64 attempt_rng(options.seed + round);
      interior = poisson_disk(contour, radius, attempt_rng);
      const double ratio = static_cast<double>(interior.size()) / options.interior_samples;
      if (std::abs(ratio - 1.0) < 0.15 || interior.empty()) break;
      radius *= std::sqrt(ratio);
    }
    boundary = subdivide(contour, radius);
  }

  MaskTriangulation out;
  out.points = boundary;
  out.points.insert(out.points.end(), interior.begin(), interior.end());
  const int nb = static_cast<int>(boundary.size());
  for (int i = 0; i < nb; ++i) out.constraints.emplace_back(i, (i + 1) % nb);
  out.cdt = constrained_delaunay(out.points, out.constraints);
  if (out.cdt.triangles.empty()) throw InvalidInputError("triangulation of the mask is empty");
  return out;
}

TexturedMesh mesh_from_mask(const BinaryMask& raw_mask, const Image& image,
                            const MeshFromMaskOptions& options) {
  if (image.width != raw_mask.width || image.height != raw_mask.height)
    throw InvalidInputError("mask and image sizes differ");
  const CdtResult cdt = triangulate_mask(raw_mask, options).cdt;

  std::vector<int> remap(cdt.points.size(), -1);
  int nv = 0;
  for (const auto& t : cdt.triangles)
    for (int v : t)
      if (remap[v] < 0) remap[v] = nv++;

  TexturedMesh mesh;
  mesh.vertices.resize(nv, 3);
  for (std::size_t i = 0; i < cdt.points.size(); ++i) {
    if (remap[i] < 0) continue;
    mesh.vertices.row(remap[i]) << cdt.points[i].x(), image.height - cdt.points[i].y(), 0.0;
  }
  mesh.faces.resize(static_cast<Eigen::Index>(cdt.triangles.size()), 3);
  mesh.uvs.resize(3 * mesh.faces.rows(), 2);
  for (std::size_t f = 0; f < cdt.triangles.size(); ++f) {
    // Flipping y reverses the winding; swap two corners to stay CCW.
    const std::array<int, 3> tri = {cdt.triangles[f][0], cdt.triangles[f][2],
                                    cdt.triangles[f][1]};
    for (int k = 0; k < 3; ++k) {
      mesh.faces(static_cast<Eigen::Index>(f), k) = remap[tri[k]];
      const Eigen::Vector2d& p = cdt.points[tri[k]];
      mesh.uvs.row(3 * static_cast<Eigen::Index>(f) + k)
          << p.x() / image.width, 1.0 - p.y() / image.height;
    }
  }
  mesh.texture = image;
  normalize_planar_unit_square(mesh);
  update_planarity(mesh);
  validate(mesh);
  return mesh;
}

std::vector<std::vector<int>> boundary_loops(const TexturedMesh& mesh) {
  std::unordered_map<int, int> next;
  for (const auto& [a, b] : boundary_edges(mesh.faces)) next[a] = b;
  std::vector<int> starts;
  for (const auto& [a, b] : next) starts.push_back(a);
  std::sort(starts.begin(), starts.end());
  std::set<int> used;
  std::vector<std::vector<int>> loops;
  for (int s : starts) {
    if (used.count(s)) continue;
    std::vector<int> loop;
    int v = s;
    while (!used.count(v)) {
      used.insert(v);
      loop.push_back(v);
      const auto it = next.find(v);
      if (it == next.end()) break;
      v = it->second;
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

DeformationSpec assign_handles(const TexturedMesh& mesh, const HandleAssignment& assignment) {
  if (!mesh.is_planar) throw InvalidInputError("handle assignment needs a planar mesh");
  if (assignment.n_pairs <= 0) throw InvalidInputError("n_pairs must be positive");
  const auto loops = boundary_loops(mesh);
  if (loops.empty()) throw InvalidInputError("mesh has no boundary");
  auto loop_length = [&](const std::vector<int>& loop) {
    double len = 0.0;
    for (std::size_t i = 0; i < loop.size(); ++i)
      len += (mesh.vertices.row(loop[(i + 1) % loop.size()]) - mesh.vertices.row(loop[i])).norm();
    return len;
  };
  const std::vector<int>& loop = *std::max_element(
      loops.begin(), loops.end(),
      [&](const auto& a, const auto& b) { return loop_length(a) < loop_length(b); });
  const int n = static_cast<int>(loop.size());
  if (n < assignment.n_pairs)
    throw InvalidInputError("boundary has " + std::to_string(n) + " vertices, fewer than " +
                            std::to_string(assignment.n_pairs) + " handles");

  Eigen::RowVector3d centroid = Eigen::RowVector3d::Zero();
  double total_area = 0.0;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const double a = face_area(mesh, f);
    centroid += a * (mesh.vertices.row(mesh.faces(f, 0)) + mesh.vertices.row(mesh.faces(f, 1)) +
                     mesh.vertices.row(mesh.faces(f, 2))) / 3.0;
    total_area += a;
  }
  centroid /= total_area;
  int anchor = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const double d = (mesh.vertices.row(v) - centroid).squaredNorm();
    if (d < best) {
      best = d;
      anchor = v;
    }
  }

  std::vector<double> arc(n + 1, 0.0);
  for (int i = 0; i < n; ++i)
    arc[i + 1] = arc[i] + (mesh.vertices.row(loop[(i + 1) % n]) - mesh.vertices.row(loop[i])).norm();
  const double perimeter = arc[n];
  int start = 0;
  double far = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (mesh.vertices.row(loop[i]) - centroid).squaredNorm();
    if (d > far) {
      far = d;
      start = i;
    }
  }

  DeformationSpec spec;
  std::set<int> chosen;
  for (int k = 0; k < assignment.n_pairs; ++k) {
    const double target = std::fmod(arc[start] + k * perimeter / assignment.n_pairs, perimeter);
    int pick = 0;
    double pick_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (chosen.count(i)) continue;
      const double d = std::min(std::abs(arc[i] - target), perimeter - std::abs(arc[i] - target));
      if (d < pick_d) {
        pick_d = d;
        pick = i;
      }
    }
    chosen.insert(pick);
    const int v = loop[pick];
    if (v == anchor) continue;
    Eigen::Vector3d direction;
    if (assignment.direction) {
      direction = assignment.direction->normalized();
    } else {
      const Eigen::Vector3d prev = mesh.vertices.row(loop[(pick + n - 1) % n]).transpose();
      const Eigen::Vector3d cur = mesh.vertices.row(v).transpose();
      const Eigen::Vector3d next = mesh.vertices.row(loop[(pick + 1) % n]).transpose();
      const Eigen::Vector3d e1 = (cur - prev).normalized(), e2 = (next - cur).normalized();
      // Faces lie to the left of a counter-clockwise boundary walk.
      direction = Eigen::Vector3d(e1.y() + e2.y(), -(e1.x() + e2.x()), 0.0);
      if (direction.norm() < 1e-12) direction = Eigen::Vector3d(e1.y(), -e1.x(), 0.0);
      direction.normalize();
    }
    spec.handle_indices.push_back(v);
    spec.handle_displacements.conservativeResize(spec.handle_displacements.rows() + 1, 3);
    spec.handle_displacements.row(spec.handle_displacements.rows() - 1) =
        assignment.magnitude * direction.transpose();
  }
  if (spec.handle_indices.empty()) throw InvalidInputError("no boundary handle available");
  spec.anchor_indices = {anchor};
  return spec;
}

std::vector<int> region_expand(const TexturedMesh& mesh, const std::vector<int>& seeds,
                               double radius) {
  if (!(radius > 0.0)) throw InvalidInputError("region radius must be positive");
  const int nv = mesh.num_vertices();
  std::unordered_map<std::int64_t, std::vector<int>> cells;
  auto cell_of = [&](double x) { return static_cast<std::int64_t>(std::floor(x / radius)); };
  auto cell_key = [](std::int64_t x, std::int64_t y, std::int64_t z) {
    return (x * 73856093) ^ (y * 19349663) ^ (z * 83492791);
  };
  for (int v = 0; v < nv; ++v)
    cells[cell_key(cell_of(mesh.vertices(v, 0)), cell_of(mesh.vertices(v, 1)),
                   cell_of(mesh.vertices(v, 2)))]
        .push_back(v);
  std::set<int> out;
  for (int s : seeds) {
    if (s < 0 || s >= nv) throw InvalidInputError("seed " + std::to_string(s) + " out of range");
    out.insert(s);
    const Eigen::RowVector3d p = mesh.vertices.row(s);
    const std::int64_t cx = cell_of(p.x()), cy = cell_of(p.y()), cz = cell_of(p.z());
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells.find(cell_key(cx + dx, cy + dy, cz + dz));
          if (it == cells.end()) continue;
          for (int v : it->second)
            if ((mesh.vertices.row(v) - p).norm() <= radius) out.insert(v);
        }
  }
  return {out.begin(), out.end()};
}

DeformationSpec expand_spec(const TexturedMesh& mesh, const DeformationSpec& spec,
                            double radius) {
  spec.validate(mesh.num_vertices());
  const std::vector<int> anchors = region_expand(mesh, spec.anchor_indices, radius);
  const std::set<int> anchor_set(anchors.begin(), anchors.end());
  const Vertices anchor_targets = spec.resolved_anchor_targets(mesh.vertices);

  auto nearest_seed = [&](int v, const std::vector<int>& seeds) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const double d = (mesh.vertices.row(v) - mesh.vertices.row(seeds[k])).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    return best;
  };

  DeformationSpec out;
  out.lambda = spec.lambda;
  for (int v : region_expand(mesh, spec.handle_indices, radius)) {
    if (anchor_set.count(v)) continue;
    const int k = nearest_seed(v, spec.handle_indices);
    out.handle_indices.push_back(v);
    out.handle_displacements.conservativeResize(out.handle_displacements.rows() + 1, 3);
    out.handle_displacements.row(out.handle_displacements.rows() - 1) =
        spec.handle_displacements.row(k);
  }
  if (out.handle_indices.empty()) throw InvalidInputError("every handle lies inside an anchor region");
  out.anchor_indices = anchors;
  if (spec.anchor_targets.rows() > 0) {
    out.anchor_targets.resize(static_cast<Eigen::Index>(anchors.size()), 3);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const int k = nearest_seed(anchors[i], spec.anchor_indices);
      out.anchor_targets.row(static_cast<Eigen::Index>(i)) =
          mesh.vertices.row(anchors[i]) + anchor_targets.row(k) -
          mesh.vertices.row(spec.anchor_indices[k]);
    }
  }
  return out;
}

DeformationSpec select_pair(const DeformationSpec& spec, int pair) {
  if (pair < 0 || pair >= static_cast<int>(spec.handle_indices.size()))
    throw InvalidInputError("handle pair " + std::to_string(pair) + " does not exist");
  DeformationSpec out = spec;
  out.handle_indices = {spec.handle_indices[pair]};
  out.handle_displacements = spec.handle_displacements.row(pair);
  return out;
}

double giqa_knn(const std::vector<float>& edited,
                const std::vector<std::vector<float>>& reference, int k) {
  const int n = static_cast<int>(reference.size());
  if (k <= 0) throw InvalidInputError("k must be positive");
  if (k > n)
    throw InvalidInputError("k = " + std::to_string(k) + " exceeds the reference set size " +
                            std::to_string(n));
  if (n < 2) throw InvalidInputError("k-NN scoring needs at least two reference features");
  for (const auto& r : reference)
    if (r.size() != edited.size()) throw InvalidInputError("feature dimensions differ");

  auto distance = [](const std::vector<float>& a, const std::vector<float>& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      sum += d * d;
    }
    return std::sqrt(sum);
  };

  const int kk = std::min(k, n - 1);
  double bandwidth = 0.0;
  std::vector<double> d(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> others;
    for (int j = 0; j < n; ++j)
      if (j != i) others.push_back(distance(reference[i], reference[j]));
    std::partial_sort(others.begin(), others.begin() + kk, others.end());
    bandwidth += std::accumulate(others.begin(), others.begin() + kk, 0.0) / kk;
  }
  bandwidth /= n;
  if (!(bandwidth > 0.0)) throw InvalidInputError("reference features are all identical");

  for (int j = 0; j < n; ++j) d[j] = distance(edited, reference[j]);
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  double score = 0.0;
  for (int j = 0; j < k; ++j) score += std::exp(-d[j] * d[j] / (2.0 * bandwidth * bandwidth));
  return score / k;
}

Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("manifest must be a JSON object");
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  Manifest m;
  try {
    if (j.contains("config")) m.config = parse_config(j["config"].dump());
    m.interior_samples = j.value("interior_samples", m.interior_samples);
    m.handle_pairs = j.value("handle_pairs", m.handle_pairs);
    m.handle_magnitude = j.value("handle_magnitude", m.handle_magnitude);
    m.region_radius = j.value("region_radius", m.region_radius);
    m.giqa_k = j.value("giqa_k", m.giqa_k);
    m.reference_features = resolve(j.value("reference_features", std::string()));
    std::set<std::string> names;
    const json instances = j.value("instances", json::array());
    if (!instances.is_array()) throw ParseError("manifest \"instances\" must be an array");
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const json& e = instances[i];
      ManifestInstance inst;
      inst.mesh_path = resolve(e.value("mesh_path", std::string()));
      inst.mask_path = resolve(e.value("mask_path", std::string()));
      inst.image_path = resolve(e.value("image_path", std::string()));
      inst.spec_path = resolve(e.value("spec_path", std::string()));
      inst.category = e.value("category", std::string());
      inst.prompt = e.value("prompt", std::string());
      if (e.contains("handle_pair")) inst.handle_pair = e["handle_pair"].get<int>();
      inst.name = e.value("name", std::string());
      if (inst.name.empty()) {
        const auto& source = inst.mesh_path.empty() ? inst.mask_path : inst.mesh_path;
        inst.name = source.stem().string() + "_" + std::to_string(i);
      }
      if (inst.mesh_path.empty() == inst.mask_path.empty())
        throw ParseError("instance " + inst.name + " needs exactly one of mesh_path or mask_path");
      if (!inst.mask_path.empty() && inst.image_path.empty())
        throw ParseError("instance " + inst.name + " has a mask but no image_path");
      if (!names.insert(inst.name).second)
        throw ParseError("duplicate instance name " + inst.name);
      m.instances.push_back(std::move(inst));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest has a field of the wrong type: ") + e.what());
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

int ExperimentSummary::failed() const {
  return static_cast<int>(std::count_if(instances.begin(), instances.end(),
                                        [](const auto& o) { return o.status == "failed"; }));
}

namespace {

std::string format_double(double value) {
  char buffer[64];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, end);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::map<std::string, std::vector<std::vector<float>>> load_reference_features(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open reference features " + path.string());
  try {
    return json::parse(in).get<std::map<std::string, std::vector<std::vector<float>>>>();
  } catch (const json::exception& e) {
    throw ParseError("reference features " + path.string() + ": " + e.what());
  }
}

InstanceOutcome run_instance(
    const Manifest& manifest, const ManifestInstance& inst, const ExperimentOptions& options,
    const std::map<std::string, std::vector<std::vector<float>>>* references) {
  InstanceOutcome outcome{inst.name, inst.category, "failed", "", 0.0, std::nullopt};
  const std::filesystem::path dir = options.output_dir / inst.name;
  const std::filesystem::path meta_path = dir / "meta.json";

  if (options.resume && std::filesystem::exists(meta_path)) {
    try {
      std::ifstream in(meta_path);
      const json meta = json::parse(in);
      if (meta.value("status", "") == "ok" &&
          meta.value("variant", "") == to_string(options.variant)) {
        outcome.status = "resumed";
        outcome.handle_loss = meta.value("handle_loss", 0.0);
        if (meta.contains("giqa") && meta["giqa"].is_number())
          outcome.giqa = meta["giqa"].get<double>();
        return outcome;
      }
    } catch (const std::exception&) {
      // Unreadable metadata: run the instance again.
    }
  }

  std::filesystem::create_directories(dir);
  APAPConfig config = manifest.config;
  config.variant = options.variant;
  if (!options.endpoint.empty()) config.endpoint = options.endpoint;
  if (options.seed) config.seed = *options.seed;
  if (!inst.prompt.empty()) config.prompt = inst.prompt;

  json meta = {{"name", inst.name},
               {"category", inst.category},
               {"variant", to_string(options.variant)},
               {"seed", config.seed},
               {"config", json::parse(config_to_json(config))}};
  std::vector<TraceRecord> trace;
  try {
    TexturedMesh mesh;
    if (!inst.mesh_path.empty()) {
      mesh = load_mesh(inst.mesh_path);
    } else {
      MeshFromMaskOptions mopts;
      mopts.interior_samples = manifest.interior_samples;
      mopts.seed = static_cast<std::uint64_t>(config.seed);
      mesh = mesh_from_mask(load_mask(inst.mask_path), read_png(inst.image_path), mopts);
    }
    DeformationSpec spec;
    if (!inst.spec_path.empty()) {
      spec = load_deformation_spec(inst.spec_path);
    } else {
      HandleAssignment assignment;
      assignment.n_pairs = manifest.handle_pairs;
      assignment.magnitude = manifest.handle_magnitude;
      spec = assign_handles(mesh, assignment);
      if (inst.handle_pair) spec = select_pair(spec, *inst.handle_pair);
      spec = expand_spec(mesh, spec, manifest.region_radius);
    }
    save_deformation_spec(spec, dir / "spec.json");

    DeformationResult result;
    try {
      result = deform(mesh, spec, config);
    } catch (const DeformationAborted& e) {
      trace = e.trace();
      throw;
    }
    trace = result.trace;
    save_mesh(result.mesh, dir / "mesh.obj");
    const auto cameras = canonical_cameras(config.resolved_viewpoints(mesh.is_planar),
                                           config.resolution);
    RenderOptions ropts;
    ropts.sigma_px = config.sigma_px;
    const RenderOutput render = rasterize(result.mesh, cameras.front(), ropts);
    write_png(render.image, dir / "render.png");

    outcome.handle_loss = handle_loss(result.mesh.vertices, mesh.vertices, spec).value;
    if (references && !config.endpoint.empty()) {
      const auto it = references->find(inst.category);
      if (it != references->end())
        outcome.giqa = giqa_knn(request_giqa_features(config.endpoint, render.image),
                                it->second, manifest.giqa_k);
    }
    outcome.status = "ok";
    meta["first_stage_iters"] = result.first_stage_iters;
    meta["second_stage_iters"] = result.second_stage_iters;
    meta["skipped_guidance"] = result.skipped_guidance;
    meta["num_vertices"] = mesh.num_vertices();
    meta["num_faces"] = mesh.num_faces();
    if (result.finetune) {
      meta["adapter_id"] = result.finetune->adapter_id;
      meta["finetune_loss"] = result.finetune->loss_trace;
    }
  } catch (const std::exception& e) {
    outcome.status = "failed";
    outcome.error = e.what();
    meta["error"] = e.what();
  }
  meta["status"] = outcome.status;
  meta["handle_loss"] = outcome.handle_loss;
  meta["giqa"] = outcome.giqa ? json(*outcome.giqa) : json(nullptr);
  try {
    write_trace_csv(trace, dir / "trace.csv");
    write_text(meta_path, meta.dump(2) + "\n");
  } catch (const std::exception& e) {
    outcome.status = "failed";
    outcome.error = e.what();
  }
  return outcome;
}

}  // namespace

ExperimentSummary run_experiment(const Manifest& manifest, const ExperimentOptions& options) {
  if (options.output_dir.empty()) throw InvalidInputError("experiment needs an output directory");
  if (options.workers <= 0) throw InvalidInputError("worker count must be positive");
  std::filesystem::create_directories(options.output_dir);

  std::optional<std::map<std::string, std::vector<std::vector<float>>>> references;
  if (!manifest.reference_features.empty())
    references = load_reference_features(manifest.reference_features);

  ExperimentSummary summary;
  summary.instances.resize(manifest.instances.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < manifest.instances.size(); i = next++) {
      summary.instances[i] = run_instance(manifest, manifest.instances[i], options,
                                          references ? &*references : nullptr);
      std::lock_guard<std::mutex> lock(log_mutex);
      const auto& o = summary.instances[i];
      std::cerr << "[bench] " << o.name << ": " << o.status
                << (o.error.empty() ? "" : " (" + o.error + ")") << '\n';
    }
  };
  const int threads = std::min<int>(options.workers,
                                    std::max<std::size_t>(1, manifest.instances.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::ostringstream csv;
  csv << "name,category,variant,status,handle_loss,giqa\n";
  for (const auto& o : summary.instances)
    csv << o.name << ',' << o.category << ',' << to_string(options.variant) << ',' << o.status
        << ',' << format_double(o.handle_loss) << ',' << (o.giqa ? format_double(*o.giqa) : "")
        << '\n';
  write_text(options.output_dir / "scores.csv", csv.str());
  return summary;
}

}  // namespace apap
