#include "apap/render.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <tuple>

#include "apap/error.hpp"

namespace apap {

void Camera::validate() const {
  if (width <= 0 || height <= 0)
    throw InvalidInputError("camera resolution must be positive");
  const double orthonormality =
      (rotation * rotation.transpose() - Eigen::Matrix3d::Identity())
          .cwiseAbs()
          .maxCoeff();
  if (!(orthonormality <= 1e-10))
    throw InvalidInputError("camera rotation is not orthonormal");
  if (!(focal_x > 0.0) || !(focal_y > 0.0))
    throw InvalidInputError("camera focal lengths must be positive");
}

Eigen::Vector3d Camera::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d c = rotation * world + translation;
  if (projection == Projection::kOrthographic)
    return {focal_x * c.x() + principal_x, focal_y * c.y() + principal_y, c.z()};
  return {focal_x * c.x() / c.z() + principal_x,
          focal_y * c.y() / c.z() + principal_y, c.z()};
}

Eigen::Matrix<double, 2, 3> Camera::project_jacobian(
    const Eigen::Vector3d& world) const {
  Eigen::Matrix<double, 2, 3> d_camera;
  if (projection == Projection::kOrthographic) {
    d_camera << focal_x, 0.0, 0.0, 0.0, focal_y, 0.0;
  } else {
    const Eigen::Vector3d c = rotation * world + translation;
    const double iz = 1.0 / c.z();
    d_camera << focal_x * iz, 0.0, -focal_x * c.x() * iz * iz, 0.0,
        focal_y * iz, -focal_y * c.y() * iz * iz;
  }
  return d_camera * rotation;
}

std::vector<Camera> canonical_cameras(CameraRig rig, int resolution) {
  if (resolution <= 0) throw InvalidInputError("resolution must be positive");
  std::vector<Camera> cameras;
  if (rig == CameraRig::kPlanar) {
    // Looks down -z; world y up maps to image rows going up.
    constexpr double margin = 0.05;
    Camera cam;
    cam.projection = Projection::kOrthographic;
    cam.rotation = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
    cam.translation = Eigen::Vector3d(0.0, 0.0, 1.0);
    cam.width = cam.height = resolution;
    cam.focal_x = cam.focal_y = resolution / (1.0 + 2.0 * margin);
    cam.principal_x = cam.focal_x * margin;
    cam.principal_y = cam.focal_y * (1.0 + margin);
    cameras.push_back(cam);
    return cameras;
  }

  constexpr double distance = 2.5;
  constexpr double fov = std::numbers::pi / 4.0;
  const Eigen::Vector3d up(0.0, 1.0, 0.0);
  for (int i = 0; i < 4; ++i) {
    const double azimuth = i * std::numbers::pi / 2.0;
    const Eigen::Vector3d eye(distance * std::sin(azimuth), 0.0,
                              distance * std::cos(azimuth));
    const Eigen::Vector3d forward = (-eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Camera cam;
    cam.projection = Projection::kPerspective;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.width = cam.height = resolution;
    cam.focal_x = cam.focal_y = 0.5 * resolution / std::tan(0.5 * fov);
    cam.principal_x = cam.principal_y = 0.5 * resolution;
    cameras.push_back(cam);
  }
  return cameras;
}

namespace {

struct TexelSample {
  Eigen::Vector3f color;
  Eigen::Matrix<double, 3, 2> d_uv;  // dColor / d(u, v)
};

TexelSample sample_with_gradient(const Image& texture, double u, double v) {
  TexelSample out;
  out.d_uv.setZero();
  const bool u_clamped = u < 0.0 || u > 1.0;
  const bool v_clamped = v < 0.0 || v > 1.0;
  u = std::clamp(u, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const double x = u * texture.width - 0.5;
  const double y = (1.0 - v) * texture.height - 0.5;
  const double xf = std::floor(x), yf = std::floor(y);
  const double fx = x - xf, fy = y - yf;
  const int x0 = std::clamp(static_cast<int>(xf), 0, texture.width - 1);
  const int x1 = std::clamp(static_cast<int>(xf) + 1, 0, texture.width - 1);
  const int y0 = std::clamp(static_cast<int>(yf), 0, texture.height - 1);
  const int y1 = std::clamp(static_cast<int>(yf) + 1, 0, texture.height - 1);
  for (int c = 0; c < 3; ++c) {
    const double t00 = texture.at(x0, y0, c), t10 = texture.at(x1, y0, c);
    const double t01 = texture.at(x0, y1, c), t11 = texture.at(x1, y1, c);
    out.color[c] = static_cast<float>((1 - fx) * (1 - fy) * t00 + fx * (1 - fy) * t10 +
                                      (1 - fx) * fy * t01 + fx * fy * t11);
    const double dx = (1 - fy) * (t10 - t00) + fy * (t11 - t01);
    const double dy = (1 - fx) * (t01 - t00) + fx * (t11 - t10);
    if (!u_clamped) out.d_uv(c, 0) = dx * texture.width;
    if (!v_clamped) out.d_uv(c, 1) = -dy * texture.height;
  }
  return out;
}

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Projected {
  std::vector<Eigen::Vector2d> screen;
  std::vector<double> depth;
  std::vector<char> valid;  // in front of a perspective camera
};

Projected project_all(const Vertices& vertices, const Camera& camera) {
  Projected p;
  const auto n = static_cast<std::size_t>(vertices.rows());
  p.screen.resize(n);
  p.depth.resize(n);
  p.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d world = vertices.row(static_cast<Eigen::Index>(i)).transpose();
    const Eigen::Vector3d c = camera.rotation * world + camera.translation;
    p.valid[i] = camera.projection == Projection::kOrthographic || c.z() > 1e-6;
    const Eigen::Vector3d s = p.valid[i] ? camera.project(world)
                                         : Eigen::Vector3d(0.0, 0.0, c.z());
    p.screen[i] = s.head<2>();
    p.depth[i] = s.z();
  }
  return p;
}

Eigen::Vector2d corner_uv(const TexturedMesh& mesh, int face, int corner) {
  return mesh.uvs.row(3 * face + corner).transpose();
}

bool shaded_by_texture(const TexturedMesh& mesh) {
  return mesh.has_texture() && mesh.has_uvs();
}

Eigen::Vector3f face_color(const TexturedMesh& mesh, const RenderOptions& options,
                           int face, const double* bary) {
  if (!shaded_by_texture(mesh)) return options.base_color;
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();
  for (int k = 0; k < 3; ++k) uv += bary[k] * corner_uv(mesh, face, k);
  return sample_with_gradient(mesh.texture, uv.x(), uv.y()).color;
}

Eigen::Vector3f edge_color(const TexturedMesh& mesh, const RenderOptions& options,
                           const RenderOutput::SilhouetteEdge& edge, double t) {
  if (!shaded_by_texture(mesh)) return options.base_color;
  const Eigen::Vector2d uv = (1.0 - t) * corner_uv(mesh, edge.face, edge.corner0) +
                             t * corner_uv(mesh, edge.face, edge.corner1);
  return sample_with_gradient(mesh.texture, uv.x(), uv.y()).color;
}

std::vector<RenderOutput::SilhouetteEdge> find_silhouette_edges(
    const TexturedMesh& mesh, const Projected& proj) {
  const int nf = mesh.num_faces();
  std::vector<double> screen_area(nf, 0.0);
  for (int f = 0; f < nf; ++f) {
    const int a = mesh.faces(f, 0), b = mesh.faces(f, 1), c = mesh.faces(f, 2);
    if (!proj.valid[a] || !proj.valid[b] || !proj.valid[c]) continue;
    screen_area[f] = cross2(proj.screen[b] - proj.screen[a],
                            proj.screen[c] - proj.screen[a]);
  }

  // (min vertex, max vertex, face, corner of first vertex in face order)
  std::vector<std::tuple<int, int, int, int>> half_edges;
  half_edges.reserve(static_cast<std::size_t>(nf) * 3);
  for (int f = 0; f < nf; ++f)
    for (int k = 0; k < 3; ++k) {
      const int a = mesh.faces(f, k), b = mesh.faces(f, (k + 1) % 3);
      half_edges.emplace_back(std::min(a, b), std::max(a, b), f, k);
    }
  std::sort(half_edges.begin(), half_edges.end());

  std::vector<RenderOutput::SilhouetteEdge> edges;
  auto make_edge = [&](int face, int corner) {
    RenderOutput::SilhouetteEdge e;
    e.face = face;
    e.corner0 = corner;
    e.corner1 = (corner + 1) % 3;
    e.v0 = mesh.faces(face, e.corner0);
    e.v1 = mesh.faces(face, e.corner1);
    return e;
  };
  // Front-facing faces have negative screen area in the y-down image frame.
  auto front = [&](int f) { return screen_area[f] < 0.0; };
  std::size_t i = 0;
  while (i < half_edges.size()) {
    std::size_t j = i + 1;
    while (j < half_edges.size() &&
           std::get<0>(half_edges[j]) == std::get<0>(half_edges[i]) &&
           std::get<1>(half_edges[j]) == std::get<1>(half_edges[i]))
      ++j;
    if (j - i == 1) {
      const int f = std::get<2>(half_edges[i]);
      if (screen_area[f] != 0.0) edges.push_back(make_edge(f, std::get<3>(half_edges[i])));
    } else if (j - i == 2) {
      const int f0 = std::get<2>(half_edges[i]), f1 = std::get<2>(half_edges[i + 1]);
      if (screen_area[f0] != 0.0 && screen_area[f1] != 0.0 && front(f0) != front(f1)) {
        const std::size_t owner = front(f0) ? i : i + 1;
        edges.push_back(make_edge(std::get<2>(half_edges[owner]),
                                  std::get<3>(half_edges[owner])));
      }
    }
    i = j;
  }
  return edges;
}

void check_inputs(const TexturedMesh& mesh, const Vertices& vertices,
                  const Camera& camera) {
  camera.validate();
  if (vertices.rows() != mesh.vertices.rows())
    throw InvalidInputError("vertex array does not match mesh");
  if (mesh.num_faces() == 0) throw InvalidInputError("mesh has no faces");
}

}  // namespace

Eigen::Vector3f sample_texture(const Image& texture, double u, double v) {
  return sample_with_gradient(texture, u, v).color;
}

RenderOutput rasterize(const TexturedMesh& mesh, const Camera& camera,
                       const RenderOptions& options) {
  return rasterize(mesh, mesh.vertices, camera, options);
}

RenderOutput rasterize(const TexturedMesh& mesh, const Vertices& vertices,
                       const Camera& camera, const RenderOptions& options) {
  check_inputs(mesh, vertices, camera);
  if (!(options.sigma_px > 0.0)) throw InvalidInputError("sigma_px must be positive");

  const int W = camera.width, H = camera.height;
  const std::size_t npix = static_cast<std::size_t>(W) * H;
  RenderOutput out;
  out.options = options;
  out.num_vertices = static_cast<int>(vertices.rows());
  out.num_faces = mesh.num_faces();
  out.image = Image(W, H, 3);
  out.face_id.assign(npix, -1);
  out.barycentrics.assign(3 * npix, 0.0);
  out.depth.assign(npix, std::numeric_limits<double>::infinity());
  out.coverage.assign(npix, 0.0f);
  out.edge_id.assign(npix, -1);
  out.edge_t.assign(npix, 0.0);
  out.signed_distance.assign(npix, 0.0);

  const Projected proj = project_all(vertices, camera);

  // Hard z-buffered pass.
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const int idx[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    if (!proj.valid[idx[0]] || !proj.valid[idx[1]] || !proj.valid[idx[2]]) continue;
    const Eigen::Vector2d s[3] = {proj.screen[idx[0]], proj.screen[idx[1]],
                                  proj.screen[idx[2]]};
    const double area = cross2(s[1] - s[0], s[2] - s[0]);
    if (std::abs(area) < 1e-12) continue;
    const double min_x = std::min({s[0].x(), s[1].x(), s[2].x()});
    const double max_x = std::max({s[0].x(), s[1].x(), s[2].x()});
    const double min_y = std::min({s[0].y(), s[1].y(), s[2].y()});
    const double max_y = std::max({s[0].y(), s[1].y(), s[2].y()});
    const int x0 = std::max(0, static_cast<int>(std::ceil(min_x - 0.5)));
    const int x1 = std::min(W - 1, static_cast<int>(std::floor(max_x - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(min_y - 0.5)));
    const int y1 = std::min(H - 1, static_cast<int>(std::floor(max_y - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x + 0.5, y + 0.5);
        double b[3];
        bool inside = true;
        for (int k = 0; k < 3; ++k) {
          b[k] = cross2(s[(k + 1) % 3] - p, s[(k + 2) % 3] - p) / area;
          if (b[k] < 0.0) inside = false;
        }
        if (!inside) continue;
        const double z = b[0] * proj.depth[idx[0]] + b[1] * proj.depth[idx[1]] +
                         b[2] * proj.depth[idx[2]];
        const std::size_t pix = static_cast<std::size_t>(y) * W + x;
        if (z < out.depth[pix]) {
          out.depth[pix] = z;
          out.face_id[pix] = f;
          for (int k = 0; k < 3; ++k) out.barycentrics[3 * pix + k] = b[k];
        }
      }
    }
  }

  // Closest visible silhouette edge within the soft band.
  out.silhouette_edges = find_silhouette_edges(mesh, proj);
  const double band = options.band_sigmas * options.sigma_px;
  std::vector<double> best(npix, std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < out.silhouette_edges.size(); ++e) {
    const auto& edge = out.silhouette_edges[e];
    const Eigen::Vector2d a = proj.screen[edge.v0];
    const Eigen::Vector2d b = proj.screen[edge.v1];
    const double za = proj.depth[edge.v0], zb = proj.depth[edge.v1];
    const Eigen::Vector2d dir = b - a;
    const double len2 = dir.squaredNorm();
    if (len2 < 1e-18) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - band)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + band)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - band)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + band)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x + 0.5, y + 0.5);
        const double t = std::clamp((p - a).dot(dir) / len2, 0.0, 1.0);
        const double d = (p - (a + t * dir)).norm();
        const std::size_t pix = static_cast<std::size_t>(y) * W + x;
        if (!(d < band) || !(d < best[pix])) continue;
        if (out.face_id[pix] >= 0) {
          const double z_edge = (1.0 - t) * za + t * zb;
          if (z_edge > out.depth[pix] + 0.02 * std::abs(out.depth[pix]) + 1e-9)
            continue;
        }
        best[pix] = d;
        out.edge_id[pix] = static_cast<int>(e);
        out.edge_t[pix] = t;
      }
    }
  }

  bool any_visible = false;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * W + x;
      const bool covered = out.face_id[pix] >= 0;
      Eigen::Vector3f color = options.background;
      float alpha = 0.0f;
      if (out.edge_id[pix] >= 0) {
        const double s = covered ? best[pix] : -best[pix];
        out.signed_distance[pix] = s;
        const double a = sigmoid(s / options.sigma_px);
        const Eigen::Vector3f front =
            covered ? face_color(mesh, options, out.face_id[pix], &out.barycentrics[3 * pix])
                    : edge_color(mesh, options, out.silhouette_edges[out.edge_id[pix]],
                                 out.edge_t[pix]);
        color = static_cast<float>(a) * front +
                static_cast<float>(1.0 - a) * options.background;
        alpha = static_cast<float>(a);
        any_visible = true;
      } else if (covered) {
        color = face_color(mesh, options, out.face_id[pix], &out.barycentrics[3 * pix]);
        alpha = 1.0f;
        any_visible = true;
      }
      out.coverage[pix] = alpha;
      for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = color[c];
    }
  }
  if (!any_visible) out.warnings.push_back("mesh lies entirely outside the view");
  return out;
}

Vertices rasterize_backward(const RenderOutput& output, const TexturedMesh& mesh,
                            const Camera& camera, const Image& upstream) {
  return rasterize_backward(output, mesh, mesh.vertices, camera, upstream);
}

Vertices rasterize_backward(const RenderOutput& output, const TexturedMesh& mesh,
                            const Vertices& vertices, const Camera& camera,
                            const Image& upstream) {
  check_inputs(mesh, vertices, camera);
  if (output.num_vertices != vertices.rows() || output.num_faces != mesh.num_faces() ||
      output.image.width != camera.width || output.image.height != camera.height)
    throw InvalidInputError("render output does not match mesh / camera inputs");
  if (!upstream.same_shape(output.image))
    throw InvalidInputError("upstream gradient shape " + std::to_string(upstream.width) +
                            "x" + std::to_string(upstream.height) + "x" +
                            std::to_string(upstream.channels) +
                            " does not match image");

  const int W = camera.width, H = camera.height;
  const RenderOptions& options = output.options;
  const Projected proj = project_all(vertices, camera);
  const bool textured = shaded_by_texture(mesh);
  std::vector<Eigen::Vector2d> screen_grad(static_cast<std::size_t>(vertices.rows()),
                                           Eigen::Vector2d::Zero());

  // Interior term: color = tex(sum_k b_k uv_k) with screen-space barycentrics.
  auto accumulate_interior = [&](int face, const double* bary, const Eigen::Vector2d& p,
                                 const Eigen::Vector3d& weight) {
    if (!textured) return;
    const int idx[3] = {mesh.faces(face, 0), mesh.faces(face, 1), mesh.faces(face, 2)};
    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
    for (int k = 0; k < 3; ++k) uv += bary[k] * corner_uv(mesh, face, k);
    const TexelSample ts = sample_with_gradient(mesh.texture, uv.x(), uv.y());
    const Eigen::Vector2d d_uv = ts.d_uv.transpose() * weight;  // dL/d(u,v)
    double d_bary[3];
    for (int k = 0; k < 3; ++k) d_bary[k] = d_uv.dot(corner_uv(mesh, face, k));

    const Eigen::Vector2d s[3] = {proj.screen[idx[0]], proj.screen[idx[1]],
                                  proj.screen[idx[2]]};
    const double area = cross2(s[1] - s[0], s[2] - s[0]);
    // dN_k/ds_m for N_k = cross(s_{k+1} - p, s_{k+2} - p).
    Eigen::Vector2d dN[3][3];
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector2d a = s[(k + 1) % 3] - p;
      const Eigen::Vector2d c = s[(k + 2) % 3] - p;
      dN[k][k].setZero();
      dN[k][(k + 1) % 3] = Eigen::Vector2d(c.y(), -c.x());
      dN[k][(k + 2) % 3] = Eigen::Vector2d(-a.y(), a.x());
    }
    for (int m = 0; m < 3; ++m) {
      const Eigen::Vector2d d_area = dN[0][m] + dN[1][m] + dN[2][m];
      Eigen::Vector2d g = Eigen::Vector2d::Zero();
      for (int k = 0; k < 3; ++k)
        g += d_bary[k] * (dN[k][m] - bary[k] * d_area) / area;
      screen_grad[idx[m]] += g;
    }
  };

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * W + x;
      const Eigen::Vector3d g(upstream.at(x, y, 0), upstream.at(x, y, 1),
                              upstream.at(x, y, 2));
      if (g.isZero(0.0)) continue;
      const Eigen::Vector2d p(x + 0.5, y + 0.5);
      const int face = output.face_id[pix];
      const bool covered = face >= 0;
      const int e = output.edge_id[pix];
      if (e < 0) {
        if (covered) accumulate_interior(face, &output.barycentrics[3 * pix], p, g);
        continue;
      }

      const auto& edge = output.silhouette_edges[e];
      const double s = output.signed_distance[pix];
      const double alpha = sigmoid(s / options.sigma_px);
      const double t = output.edge_t[pix];
      const Eigen::Vector3f front_f =
          covered ? face_color(mesh, options, face, &output.barycentrics[3 * pix])
                  : edge_color(mesh, options, edge, t);
      const Eigen::Vector3d front = front_f.cast<double>();
      const Eigen::Vector3d bg = options.background.cast<double>();

      // Color term.
      if (covered) {
        accumulate_interior(face, &output.barycentrics[3 * pix], p, alpha * g);
      } else if (textured && t > 0.0 && t < 1.0) {
        const Eigen::Vector2d uv0 = corner_uv(mesh, edge.face, edge.corner0);
        const Eigen::Vector2d uv1 = corner_uv(mesh, edge.face, edge.corner1);
        const Eigen::Vector2d uv = (1.0 - t) * uv0 + t * uv1;
        const TexelSample ts = sample_with_gradient(mesh.texture, uv.x(), uv.y());
        const double d_t = (alpha * g).dot(ts.d_uv * (uv1 - uv0));
        const Eigen::Vector2d a = proj.screen[edge.v0];
        const Eigen::Vector2d dir = proj.screen[edge.v1] - a;
        const double len2 = dir.squaredNorm();
        const Eigen::Vector2d dt_db = (p - a) / len2 - 2.0 * t * dir / len2;
        const Eigen::Vector2d dt_da = -dir / len2 - dt_db;
        screen_grad[edge.v0] += d_t * dt_da;
        screen_grad[edge.v1] += d_t * dt_db;
      }

      // Coverage term through the signed distance to the edge.
      const double d = std::abs(s);
      if (d <= 0.0) continue;
      const double d_alpha = g.dot(front - bg);
      const double d_s = d_alpha * alpha * (1.0 - alpha) / options.sigma_px;
      const double d_d = covered ? d_s : -d_s;
      const Eigen::Vector2d a = proj.screen[edge.v0];
      const Eigen::Vector2d b = proj.screen[edge.v1];
      const Eigen::Vector2d q = a + t * (b - a);
      const Eigen::Vector2d n = (p - q) / d;
      screen_grad[edge.v0] += d_d * (-(1.0 - t) * n);
      screen_grad[edge.v1] += d_d * (-t * n);
    }
  }

  Vertices grad = Vertices::Zero(vertices.rows(), 3);
  for (Eigen::Index v = 0; v < vertices.rows(); ++v) {
    const auto i = static_cast<std::size_t>(v);
    if (!proj.valid[i] || screen_grad[i].isZero(0.0)) continue;
    const Eigen::Vector3d world = vertices.row(v).transpose();
    grad.row(v) = (camera.project_jacobian(world).transpose() * screen_grad[i]).transpose();
  }
  return grad;
}

}  // namespace apap
