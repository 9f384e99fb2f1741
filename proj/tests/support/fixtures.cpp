#include "fixtures.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "apap/triangulate.hpp"

namespace apap::testing {
namespace {

constexpr double kPi = std::numbers::pi;

void planar_uvs(TexturedMesh& mesh) {
  const BoundingBox box = mesh.bounding_box();
  const Eigen::Vector3d extent = box.extent().cwiseMax(1e-12);
  mesh.uvs.resize(3 * mesh.num_faces(), 2);
  for (int f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d p = mesh.vertices.row(mesh.faces(f, k)).transpose();
      mesh.uvs.row(3 * f + k) << (p.x() - box.min.x()) / extent.x(),
          (p.y() - box.min.y()) / extent.y();
    }
  mesh.texture = checker_texture();
}

std::uint8_t inside_star(double x, double y, double cx, double cy, double outer, double inner,
                         int points) {
  const double angle = std::atan2(y - cy, x - cx);
  const double r = std::hypot(x - cx, y - cy);
  const double sector = 2.0 * kPi / points;
  double a = std::fmod(angle + 2.0 * kPi, sector) / sector;  // 0..1 within a spike
  a = std::abs(a - 0.5) * 2.0;                                // 1 at the spike tip
  return r <= inner + (outer - inner) * a ? 1 : 0;
}

}  // namespace

Image checker_texture(int size, int cells) {
  Image image(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool odd = ((x * cells / size) + (y * cells / size)) % 2;
      const float u = static_cast<float>(x) / size, v = static_cast<float>(y) / size;
      image.at(x, y, 0) = odd ? 0.9f : 0.2f + 0.5f * u;
      image.at(x, y, 1) = odd ? 0.3f + 0.4f * v : 0.7f;
      image.at(x, y, 2) = odd ? 0.2f : 0.8f - 0.4f * u;
    }
  return image;
}

TexturedMesh grid_mesh(int nx, int ny, double jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  TexturedMesh mesh;
  mesh.vertices.resize(nx * ny, 3);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      double px = static_cast<double>(x) / (nx - 1), py = static_cast<double>(y) / (ny - 1);
      if (x > 0 && x + 1 < nx && y > 0 && y + 1 < ny) {
        px += jitter * unit(rng) / (nx - 1);
        py += jitter * unit(rng) / (ny - 1);
      }
      mesh.vertices.row(y * nx + x) << px, py, 0.0;
    }
  mesh.faces.resize(2 * (nx - 1) * (ny - 1), 3);
  int f = 0;
  for (int y = 0; y + 1 < ny; ++y)
    for (int x = 0; x + 1 < nx; ++x) {
      const int a = y * nx + x, b = a + 1, c = a + nx, d = c + 1;
      // Alternate the diagonal so the mesh has no preferred direction.
      if ((x + y) % 2) {
        mesh.faces.row(f++) << a, b, d;
        mesh.faces.row(f++) << a, d, c;
      } else {
        mesh.faces.row(f++) << a, b, c;
        mesh.faces.row(f++) << b, d, c;
      }
    }
  planar_uvs(mesh);
  mesh.is_planar = true;
  return mesh;
}

TexturedMesh height_field(int n, double amplitude, std::uint64_t seed) {
  TexturedMesh mesh = grid_mesh(n, n, 0.25, seed);
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const double x = mesh.vertices(i, 0), y = mesh.vertices(i, 1);
    mesh.vertices(i, 2) =
        amplitude * (std::sin(2.0 * kPi * x) * std::cos(3.0 * kPi * y) + 0.5 * x * y);
  }
  mesh.is_planar = false;
  return mesh;
}

TexturedMesh uv_sphere(int rings, int segments, double radius) {
  TexturedMesh mesh;
  const int nv = (rings - 1) * segments + 2;
  mesh.vertices.resize(nv, 3);
  mesh.vertices.row(0) << 0, 0, radius;
  for (int r = 1; r < rings; ++r) {
    const double theta = kPi * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double phi = 2.0 * kPi * s / segments;
      mesh.vertices.row(1 + (r - 1) * segments + s) << radius * std::sin(theta) * std::cos(phi),
          radius * std::sin(theta) * std::sin(phi), radius * std::cos(theta);
    }
  }
  const int south = nv - 1;
  mesh.vertices.row(south) << 0, 0, -radius;
  auto ring = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
  std::vector<Eigen::Vector3i> faces;
  for (int s = 0; s < segments; ++s) faces.emplace_back(0, ring(1, s), ring(1, s + 1));
  for (int r = 1; r + 1 < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      faces.emplace_back(ring(r, s), ring(r + 1, s), ring(r + 1, s + 1));
      faces.emplace_back(ring(r, s), ring(r + 1, s + 1), ring(r, s + 1));
    }
  for (int s = 0; s < segments; ++s)
    faces.emplace_back(south, ring(rings - 1, s + 1), ring(rings - 1, s));
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    mesh.faces.row(static_cast<Eigen::Index>(f)) = faces[f].transpose();
  planar_uvs(mesh);
  return mesh;
}

TexturedMesh torus(int major_segments, int minor_segments, double major, double minor) {
  TexturedMesh mesh;
  mesh.vertices.resize(major_segments * minor_segments, 3);
  auto id = [&](int i, int j) {
    return (i % major_segments) * minor_segments + (j % minor_segments);
  };
  for (int i = 0; i < major_segments; ++i)
    for (int j = 0; j < minor_segments; ++j) {
      const double u = 2.0 * kPi * i / major_segments, v = 2.0 * kPi * j / minor_segments;
      mesh.vertices.row(id(i, j)) << (major + minor * std::cos(v)) * std::cos(u),
          (major + minor * std::cos(v)) * std::sin(u), minor * std::sin(v);
    }
  mesh.faces.resize(2 * major_segments * minor_segments, 3);
  int f = 0;
  for (int i = 0; i < major_segments; ++i)
    for (int j = 0; j < minor_segments; ++j) {
      mesh.faces.row(f++) << id(i, j), id(i + 1, j), id(i + 1, j + 1);
      mesh.faces.row(f++) << id(i, j), id(i + 1, j + 1), id(i, j + 1);
    }
  planar_uvs(mesh);
  return mesh;
}

TexturedMesh random_planar_mesh(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int corners = 12 + static_cast<int>(unit(rng) * 12);
  std::vector<Eigen::Vector2d> polygon;
  for (int i = 0; i < corners; ++i) {
    const double angle = 2.0 * kPi * i / corners;
    const double radius = 0.3 + 0.15 * unit(rng);
    polygon.emplace_back(0.5 + radius * std::cos(angle), 0.5 + radius * std::sin(angle));
  }
  const double area = polygon_signed_area(polygon);
  const double spacing = std::sqrt(area / n);

  // Boundary resampled at roughly the interior spacing.
  std::vector<Eigen::Vector2d> points;
  for (int i = 0; i < corners; ++i) {
    const Eigen::Vector2d a = polygon[i], b = polygon[(i + 1) % corners];
    const int pieces = std::max(1, static_cast<int>(std::ceil((b - a).norm() / spacing)));
    for (int k = 0; k < pieces; ++k) points.push_back(a + (b - a) * (double(k) / pieces));
  }
  const int nb = static_cast<int>(points.size());
  auto near_boundary = [&](const Eigen::Vector2d& p) {
    for (int i = 0; i < nb; ++i) {
      const Eigen::Vector2d a = points[i], b = points[(i + 1) % nb];
      const double t = std::clamp((p - a).dot(b - a) / (b - a).squaredNorm(), 0.0, 1.0);
      if ((a + t * (b - a) - p).norm() < 0.5 * spacing) return true;
    }
    return false;
  };
  // Dart throwing with a minimum distance keeps triangles well shaped.
  const double min_dist = 0.6 * spacing;
  const int target = nb + n;
  for (int attempt = 0; attempt < 40 * n && static_cast<int>(points.size()) < target; ++attempt) {
    const Eigen::Vector2d p(unit(rng), unit(rng));
    if (!point_in_polygon(polygon, p) || near_boundary(p)) continue;
    bool ok = true;
    for (std::size_t i = static_cast<std::size_t>(nb); i < points.size() && ok; ++i)
      ok = (points[i] - p).norm() >= min_dist;
    if (ok) points.push_back(p);
  }

  std::vector<std::pair<int, int>> constraints;
  for (int i = 0; i < nb; ++i) constraints.emplace_back(i, (i + 1) % nb);
  CdtOptions options;
  options.grid = 1.0 / (1 << 20);
  const CdtResult cdt = constrained_delaunay(points, constraints, options);

  TexturedMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(cdt.points.size()), 3);
  for (std::size_t i = 0; i < cdt.points.size(); ++i)
    mesh.vertices.row(static_cast<Eigen::Index>(i)) << cdt.points[i].x(), cdt.points[i].y(), 0.0;
  mesh.faces.resize(static_cast<Eigen::Index>(cdt.triangles.size()), 3);
  for (std::size_t f = 0; f < cdt.triangles.size(); ++f)
    mesh.faces.row(static_cast<Eigen::Index>(f)) << cdt.triangles[f][0], cdt.triangles[f][1],
        cdt.triangles[f][2];
  planar_uvs(mesh);
  mesh.is_planar = true;
  return mesh;
}

TexturedMesh random_surface_mesh(int n, std::uint64_t seed) {
  TexturedMesh mesh = random_planar_mesh(n, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.5, 2.0);
  const double fx = unit(rng), fy = unit(rng);
  for (int i = 0; i < mesh.num_vertices(); ++i)
    mesh.vertices(i, 2) =
        0.15 * std::sin(fx * kPi * mesh.vertices(i, 0)) * std::cos(fy * kPi * mesh.vertices(i, 1));
  mesh.is_planar = false;
  return mesh;
}

std::vector<TexturedMesh> identity_corpus() {
  std::vector<TexturedMesh> corpus;
  corpus.push_back(grid_mesh(60, 60));
  corpus.push_back(grid_mesh(70, 50, 0.3, 1));
  corpus.push_back(grid_mesh(55, 80, 0.35, 2));
  corpus.push_back(height_field(60, 0.2, 3));
  corpus.push_back(height_field(64, 0.35, 4));
  corpus.push_back(uv_sphere(50, 80));
  corpus.push_back(torus(80, 48));
  corpus.push_back(random_planar_mesh(3500, 5));
  corpus.push_back(random_planar_mesh(4300, 6));
  corpus.push_back(random_surface_mesh(3200, 7));
  corpus.push_back(random_surface_mesh(4000, 8));
  return corpus;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("apap_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<MaskFixture> mask_fixtures(int size) {
  const double c = size / 2.0, s = size / 128.0;
  auto make = [&](const std::string& name, auto inside) {
    MaskFixture fixture{name, BinaryMask(size, size)};
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) fixture.mask.at(x, y) = inside(x + 0.5, y + 0.5) ? 1 : 0;
    return fixture;
  };
  std::vector<MaskFixture> out;
  out.push_back(make("disk", [&](double x, double y) { return std::hypot(x - c, y - c) < 40 * s; }));
  out.push_back(make("star", [&](double x, double y) {
    return inside_star(x, y, c, c, 52 * s, 24 * s, 5) != 0;
  }));
  out.push_back(make("ell", [&](double x, double y) {
    const bool stem = x > 28 * s && x < 56 * s && y > 16 * s && y < 112 * s;
    const bool foot = x > 28 * s && x < 104 * s && y > 84 * s && y < 112 * s;
    return stem || foot;
  }));
  out.push_back(make("crescent", [&](double x, double y) {
    return std::hypot(x - c, y - c) < 46 * s && std::hypot(x - c - 22 * s, y - c + 6 * s) > 34 * s;
  }));
  out.push_back(make("blob", [&](double x, double y) {
    const double angle = std::atan2(y - c, x - c);
    const double r = (38 + 9 * std::sin(3 * angle) + 5 * std::cos(5 * angle + 0.4)) * s;
    return std::hypot(x - c, y - c) < r;
  }));
  return out;
}

std::pair<std::filesystem::path, std::filesystem::path> write_mask_fixture(
    const MaskFixture& fixture, const std::filesystem::path& dir) {
  const int w = fixture.mask.width, h = fixture.mask.height;
  Image mask(w, h, 3), image(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float m = fixture.mask.at(x, y) ? 1.0f : 0.0f;
      for (int ch = 0; ch < 3; ++ch) mask.at(x, y, ch) = m;
      const bool stripe = ((x / 8) + (y / 8)) % 2;
      image.at(x, y, 0) = m > 0 ? (stripe ? 0.85f : 0.35f) : 1.0f;
      image.at(x, y, 1) = m > 0 ? static_cast<float>(y) / h : 1.0f;
      image.at(x, y, 2) = m > 0 ? static_cast<float>(x) / w : 1.0f;
    }
  const auto mask_path = dir / (fixture.name + "_mask.png");
  const auto image_path = dir / (fixture.name + "_image.png");
  write_png(mask, mask_path);
  write_png(image, image_path);
  return {mask_path, image_path};
}

DeformationSpec single_handle_spec(const TexturedMesh& mesh,
                                   const Eigen::RowVector3d& displacement) {
  const BoundingBox box = mesh.bounding_box();
  const Eigen::RowVector3d handle_target(box.max.x(), box.center().y(), box.center().z());
  const Eigen::RowVector3d anchor_target(box.min.x() + 0.2 * box.extent().x(),
                                         box.center().y(), box.center().z());
  int handle = 0, anchor = 0;
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    if ((mesh.vertices.row(i) - handle_target).squaredNorm() <
        (mesh.vertices.row(handle) - handle_target).squaredNorm())
      handle = i;
    if ((mesh.vertices.row(i) - anchor_target).squaredNorm() <
        (mesh.vertices.row(anchor) - anchor_target).squaredNorm())
      anchor = i;
  }
  DeformationSpec spec;
  spec.handle_indices = {handle};
  spec.handle_displacements = displacement;
  spec.anchor_indices = {anchor};
  return spec;
}

double min_signed_area(const Vertices& vertices, const Faces& faces) {
  double lowest = std::numeric_limits<double>::infinity();
  for (int f = 0; f < faces.rows(); ++f)
    lowest = std::min(lowest, signed_area_xy(vertices, faces, f));
  return lowest;
}

}  // namespace apap::testing
