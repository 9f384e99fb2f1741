#include "apap/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>

#include "apap/error.hpp"

namespace apap {

BoundingBox TexturedMesh::bounding_box() const {
  BoundingBox box;
  if (vertices.rows() == 0) return box;
  box.min = vertices.colwise().minCoeff().transpose();
  box.max = vertices.colwise().maxCoeff().transpose();
  return box;
}

double face_area(const TexturedMesh& mesh, int face) {
  const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(face, 0));
  const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(face, 1));
  const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(face, 2));
  return 0.5 * (b - a).cross(c - a).norm();
}

double signed_area_xy(const Vertices& vertices, const Faces& faces, int face) {
  const auto a = vertices.row(faces(face, 0));
  const auto b = vertices.row(faces(face, 1));
  const auto c = vertices.row(faces(face, 2));
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) -
                (b.y() - a.y()) * (c.x() - a.x()));
}

void update_planarity(TexturedMesh& mesh) {
  mesh.is_planar = mesh.vertices.rows() > 0 &&
                   (mesh.vertices.col(2).array() == 0.0).all();
}

void validate(const TexturedMesh& mesh) {
  const int nv = mesh.num_vertices();
  if (nv == 0 || mesh.num_faces() == 0)
    throw InvalidInputError("mesh has no vertices or no faces");
  if (!mesh.vertices.allFinite())
    throw InvalidInputError("mesh has non-finite vertex coordinates");
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int v = mesh.faces(f, k);
      if (v < 0 || v >= nv)
        throw InvalidInputError("face " + std::to_string(f) +
                                " references vertex " + std::to_string(v) +
                                " (vertex count " + std::to_string(nv) + ")");
    }
    const double area = face_area(mesh, f);
    if (!(area > kMinFaceArea)) throw DegenerateFaceError(f, area);
  }
  if (mesh.is_planar && !(mesh.vertices.col(2).array() == 0.0).all())
    throw InvalidInputError("planar mesh has non-zero z coordinates");
  if (mesh.has_texture() && mesh.has_uvs() &&
      mesh.uvs.rows() != 3 * mesh.faces.rows())
    throw InvalidInputError("uv count " + std::to_string(mesh.uvs.rows()) +
                            " != 3 x face count " +
                            std::to_string(3 * mesh.faces.rows()));
}

void normalize_to_unit_cube(TexturedMesh& mesh, NormalizeOptions options) {
  const BoundingBox box = mesh.bounding_box();
  if (options.center) {
    Eigen::RowVector3d shift = box.center().transpose();
    if (mesh.is_planar) shift.z() = 0.0;
    mesh.vertices.rowwise() -= shift;
  }
  if (options.scale) {
    const double extent = box.extent().maxCoeff();
    if (extent > 0.0) mesh.vertices /= extent;
  }
}

void normalize_planar_unit_square(TexturedMesh& mesh) {
  const BoundingBox box = mesh.bounding_box();
  const double extent = std::max(box.extent().x(), box.extent().y());
  if (!(extent > 0.0)) throw InvalidInputError("planar mesh has zero extent");
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    mesh.vertices(i, 0) = (mesh.vertices(i, 0) - box.min.x()) / extent;
    mesh.vertices(i, 1) = (mesh.vertices(i, 1) - box.min.y()) / extent;
    mesh.vertices(i, 2) = 0.0;
  }
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])))
      ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

double parse_double(std::string_view token, int line_no) {
  double value = 0.0;
  const auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" +
                     std::string(token) + "'");
  return value;
}

int parse_index(std::string_view token, int count, int line_no) {
  int value = 0;
  const auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || value == 0)
    throw ParseError("line " + std::to_string(line_no) + ": bad index '" +
                     std::string(token) + "'");
  const int resolved = value > 0 ? value - 1 : count + value;
  if (resolved < 0 || resolved >= count)
    throw ParseError("line " + std::to_string(line_no) + ": index " +
                     std::to_string(value) + " out of range");
  return resolved;
}

std::string rest_of_line(std::string_view line, std::string_view keyword) {
  auto pos = line.find(keyword);
  std::string_view rest = line.substr(pos + keyword.size());
  while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.front())))
    rest.remove_prefix(1);
  while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.back())))
    rest.remove_suffix(1);
  return std::string(rest);
}

std::filesystem::path find_texture_in_mtl(const std::filesystem::path& mtl) {
  std::ifstream in(mtl);
  if (!in) throw IoError("missing material file " + mtl.string());
  std::string line;
  while (std::getline(in, line)) {
    const auto tokens = split_ws(line);
    if (!tokens.empty() && tokens[0] == "map_Kd" && tokens.size() >= 2)
      return mtl.parent_path() / rest_of_line(line, "map_Kd");
  }
  return {};
}

void append_number(std::string& out, double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, ptr);
}

}  // namespace

TexturedMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh " + path.string());

  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector2d> texcoords;
  std::vector<Eigen::Vector3i> tris;
  std::vector<Eigen::Vector3i> tri_uvs;
  int faces_with_uv = 0;
  std::filesystem::path mtl_path;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    const std::string_view key = tokens[0];
    if (key == "v") {
      if (tokens.size() < 4)
        throw ParseError("line " + std::to_string(line_no) +
                         ": vertex needs 3 coordinates");
      positions.emplace_back(parse_double(tokens[1], line_no),
                             parse_double(tokens[2], line_no),
                             parse_double(tokens[3], line_no));
    } else if (key == "vt") {
      if (tokens.size() < 3)
        throw ParseError("line " + std::to_string(line_no) +
                         ": texcoord needs 2 values");
      texcoords.emplace_back(parse_double(tokens[1], line_no),
                             parse_double(tokens[2], line_no));
    } else if (key == "f") {
      if (tokens.size() != 4)
        throw ParseError("line " + std::to_string(line_no) +
                         ": only triangular faces are supported");
      Eigen::Vector3i tri, uv;
      bool has_uv = true;
      for (int k = 0; k < 3; ++k) {
        const std::string_view token = tokens[k + 1];
        const auto slash = token.find('/');
        tri[k] = parse_index(token.substr(0, slash),
                             static_cast<int>(positions.size()), line_no);
        if (slash == std::string_view::npos) {
          has_uv = false;
          continue;
        }
        const auto rest = token.substr(slash + 1);
        const auto slash2 = rest.find('/');
        const auto uv_token = rest.substr(0, slash2);
        if (uv_token.empty()) {
          has_uv = false;
        } else {
          uv[k] = parse_index(uv_token, static_cast<int>(texcoords.size()),
                              line_no);
        }
      }
      tris.push_back(tri);
      tri_uvs.push_back(has_uv ? uv : Eigen::Vector3i(-1, -1, -1));
      faces_with_uv += has_uv ? 1 : 0;
    } else if (key == "mtllib" && tokens.size() >= 2) {
      mtl_path = path.parent_path() / rest_of_line(line, "mtllib");
    }
  }

  if (faces_with_uv != 0 && faces_with_uv != static_cast<int>(tris.size()))
    throw ParseError("some faces carry texture coordinates and some do not");

  TexturedMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(positions.size()), 3);
  for (std::size_t i = 0; i < positions.size(); ++i)
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = positions[i].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t f = 0; f < tris.size(); ++f)
    mesh.faces.row(static_cast<Eigen::Index>(f)) = tris[f].transpose();
  if (faces_with_uv > 0) {
    mesh.uvs.resize(static_cast<Eigen::Index>(3 * tris.size()), 2);
    for (std::size_t f = 0; f < tris.size(); ++f)
      for (int k = 0; k < 3; ++k)
        mesh.uvs.row(static_cast<Eigen::Index>(3 * f + k)) =
            texcoords[tri_uvs[f][k]].transpose();
  }
  update_planarity(mesh);

  if (!mtl_path.empty()) {
    const bool uvs_present = mesh.has_uvs();
    if (!std::filesystem::exists(mtl_path)) {
      if (uvs_present)
        throw IoError("material file " + mtl_path.string() +
                      " referenced by " + path.string() + " is missing");
    } else {
      const auto texture = find_texture_in_mtl(mtl_path);
      if (!texture.empty()) {
        if (!std::filesystem::exists(texture))
          throw IoError("texture file " + texture.string() + " is missing");
        mesh.texture = read_png(texture);
      }
    }
  }

  validate(mesh);
  return mesh;
}

void save_mesh(const TexturedMesh& mesh, const std::filesystem::path& path) {
  const bool textured = mesh.has_texture() && mesh.has_uvs();
  const std::string stem = path.stem().string();
  const std::filesystem::path mtl_path =
      path.parent_path() / (stem + ".mtl");
  const std::string texture_name = stem + "_texture.png";

  std::string out;
  out.reserve(static_cast<std::size_t>(mesh.num_vertices()) * 48 +
              static_cast<std::size_t>(mesh.num_faces()) * 40);
  if (textured) out += "mtllib " + stem + ".mtl\n";
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    out += "v ";
    append_number(out, mesh.vertices(i, 0));
    out += ' ';
    append_number(out, mesh.vertices(i, 1));
    out += ' ';
    append_number(out, mesh.vertices(i, 2));
    out += '\n';
  }
  const bool write_uvs = mesh.has_uvs();
  if (write_uvs) {
    for (Eigen::Index r = 0; r < mesh.uvs.rows(); ++r) {
      out += "vt ";
      append_number(out, mesh.uvs(r, 0));
      out += ' ';
      append_number(out, mesh.uvs(r, 1));
      out += '\n';
    }
  }
  if (textured) out += "usemtl material0\n";
  for (int f = 0; f < mesh.num_faces(); ++f) {
    out += 'f';
    for (int k = 0; k < 3; ++k) {
      out += ' ';
      out += std::to_string(mesh.faces(f, k) + 1);
      if (write_uvs) {
        out += '/';
        out += std::to_string(3 * f + k + 1);
      }
    }
    out += '\n';
  }

  std::ofstream obj(path, std::ios::binary);
  if (!obj) throw IoError("cannot write mesh " + path.string());
  obj << out;
  if (!obj) throw IoError("write failed for " + path.string());

  if (textured) {
    std::ofstream mtl(mtl_path);
    if (!mtl) throw IoError("cannot write material " + mtl_path.string());
    mtl << "newmtl material0\nKa 1 1 1\nKd 1 1 1\nmap_Kd " << texture_name
        << "\n";
    write_png(mesh.texture, path.parent_path() / texture_name);
  }
}

std::vector<std::pair<int, int>> unique_edges(const Faces& faces) {
  std::vector<std::pair<int, int>> edges;
  edges.reserve(static_cast<std::size_t>(faces.rows()) * 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      edges.emplace_back(a, b);
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

std::vector<std::pair<int, int>> boundary_edges(const Faces& faces) {
  std::map<std::pair<int, int>, std::pair<int, std::pair<int, int>>> count;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces(f, k), b = faces(f, (k + 1) % 3);
      auto& entry = count[{std::min(a, b), std::max(a, b)}];
      entry.first += 1;
      entry.second = {a, b};
    }
  }
  std::vector<std::pair<int, int>> result;
  for (const auto& [key, entry] : count)
    if (entry.first == 1) result.push_back(entry.second);
  return result;
}

std::vector<int> connected_components(int num_vertices, const Faces& faces,
                                      int* num_components) {
  std::vector<int> parent(num_vertices);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 1; k < 3; ++k) {
      const int a = find(faces(f, 0)), b = find(faces(f, k));
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::vector<int> label(num_vertices, -1);
  std::vector<int> root_label(num_vertices, -1);
  int next = 0;
  for (int v = 0; v < num_vertices; ++v) {
    const int r = find(v);
    if (root_label[r] < 0) root_label[r] = next++;
    label[v] = root_label[r];
  }
  if (num_components) *num_components = next;
  return label;
}

}  // namespace apap
