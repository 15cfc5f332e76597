#include "sunet/icosphere.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <utility>

#include "binio.hpp"
#include "sunet/errors.hpp"

namespace sunet {

int64_t vertex_count(int level) {
  if (level < 0) throw UsageError("subdivision level must be >= 0");
  return 10 * (int64_t{1} << (2 * level)) + 2;
}

namespace {

int64_t triangle_count(int level) { return 20 * (int64_t{1} << (2 * level)); }

}  // namespace

IcoSphere icosahedron() {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  const double s = 1.0 / std::sqrt(1.0 + p * p);
  const double raw[12][3] = {
      {0, 1, p},  {0, 1, -p},  {0, -1, p}, {0, -1, -p}, {1, p, 0},  {1, -p, 0},
      {-1, p, 0}, {-1, -p, 0}, {p, 0, 1},  {-p, 0, 1},  {p, 0, -1}, {-p, 0, -1},
  };

  IcoSphere mesh;
  mesh.level = 0;
  mesh.vertices = Tensor<double>({12, 3});
  for (int i = 0; i < 12; ++i)
    for (int k = 0; k < 3; ++k) mesh.vertices.at(i, k) = raw[i][k] * s;

  // Edges connect vertex pairs at the icosahedron's edge length; on the raw
  // coordinates that squared chord length is exactly 4.
  bool adj[12][12] = {};
  for (int i = 0; i < 12; ++i) {
    for (int j = i + 1; j < 12; ++j) {
      double d2 = 0;
      for (int k = 0; k < 3; ++k) {
        double d = raw[i][k] - raw[j][k];
        d2 += d * d;
      }
      adj[i][j] = adj[j][i] = std::abs(d2 - 4.0) < 1e-9;
    }
  }

  std::vector<std::array<uint32_t, 3>> faces;
  for (uint32_t i = 0; i < 12; ++i)
    for (uint32_t j = i + 1; j < 12; ++j)
      for (uint32_t k = j + 1; k < 12; ++k)
        if (adj[i][j] && adj[j][k] && adj[i][k]) faces.push_back({i, j, k});

  mesh.triangles = IndexMatrix(static_cast<int64_t>(faces.size()), 3);
  for (size_t t = 0; t < faces.size(); ++t) {
    auto [a, b, c] = faces[t];
    // Orient outward: the face normal must point away from the origin.
    double e1[3], e2[3], n[3], ctr[3];
    for (int k = 0; k < 3; ++k) {
      e1[k] = mesh.vertices.at(b, k) - mesh.vertices.at(a, k);
      e2[k] = mesh.vertices.at(c, k) - mesh.vertices.at(a, k);
      ctr[k] = mesh.vertices.at(a, k) + mesh.vertices.at(b, k) + mesh.vertices.at(c, k);
    }
    n[0] = e1[1] * e2[2] - e1[2] * e2[1];
    n[1] = e1[2] * e2[0] - e1[0] * e2[2];
    n[2] = e1[0] * e2[1] - e1[1] * e2[0];
    if (n[0] * ctr[0] + n[1] * ctr[1] + n[2] * ctr[2] < 0) std::swap(b, c);
    mesh.triangles.at(t, 0) = a;
    mesh.triangles.at(t, 1) = b;
    mesh.triangles.at(t, 2) = c;
  }
  return mesh;
}

IcoSphere subdivide(const IcoSphere& mesh) {
  const int64_t np = mesh.num_vertices();
  const int64_t nt = mesh.num_triangles();

  // Assign midpoint indices in ascending (min,max) edge order so the output
  // is independent of triangle traversal order.
  std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoint;
  for (int64_t t = 0; t < nt; ++t) {
    for (int e = 0; e < 3; ++e) {
      uint32_t a = mesh.triangles.at(t, e);
      uint32_t b = mesh.triangles.at(t, (e + 1) % 3);
      midpoint.emplace(std::minmax(a, b), 0);
    }
  }
  uint32_t next = static_cast<uint32_t>(np);
  for (auto& [edge, idx] : midpoint) idx = next++;
  const int64_t n = np + static_cast<int64_t>(midpoint.size());

  IcoSphere out;
  out.level = mesh.level + 1;
  out.vertices = Tensor<double>({n, 3});
  for (int64_t v = 0; v < np; ++v)
    for (int k = 0; k < 3; ++k) out.vertices.at(v, k) = mesh.vertices.at(v, k);

  out.edge_parents = IndexMatrix(n - np, 2);
  for (const auto& [edge, idx] : midpoint) {
    auto [a, b] = edge;
    double m[3], norm = 0;
    for (int k = 0; k < 3; ++k) {
      m[k] = 0.5 * (mesh.vertices.at(a, k) + mesh.vertices.at(b, k));
      norm += m[k] * m[k];
    }
    norm = std::sqrt(norm);
    for (int k = 0; k < 3; ++k) out.vertices.at(idx, k) = m[k] / norm;
    out.edge_parents.at(idx - np, 0) = a;
    out.edge_parents.at(idx - np, 1) = b;
  }

  out.triangles = IndexMatrix(4 * nt, 3);
  for (int64_t t = 0; t < nt; ++t) {
    uint32_t a = mesh.triangles.at(t, 0);
    uint32_t b = mesh.triangles.at(t, 1);
    uint32_t c = mesh.triangles.at(t, 2);
    uint32_t ab = midpoint.at(std::minmax(a, b));
    uint32_t bc = midpoint.at(std::minmax(b, c));
    uint32_t ca = midpoint.at(std::minmax(c, a));
    const uint32_t kids[4][3] = {{a, ab, ca}, {b, bc, ab}, {c, ca, bc}, {ab, bc, ca}};
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 3; ++k) out.triangles.at(4 * t + j, k) = kids[j][k];
  }
  return out;
}

IcoSphere generate(int level) {
  if (level < 0) throw UsageError("subdivision level must be >= 0");
  IcoSphere mesh = icosahedron();
  for (int i = 0; i < level; ++i) mesh = subdivide(mesh);
  return mesh;
}

std::vector<std::vector<uint32_t>> vertex_adjacency(const IcoSphere& mesh) {
  std::vector<std::set<uint32_t>> nbr(static_cast<size_t>(mesh.num_vertices()));
  for (int64_t t = 0; t < mesh.num_triangles(); ++t) {
    for (int e = 0; e < 3; ++e) {
      uint32_t a = mesh.triangles.at(t, e);
      uint32_t b = mesh.triangles.at(t, (e + 1) % 3);
      nbr[a].insert(b);
      nbr[b].insert(a);
    }
  }
  std::vector<std::vector<uint32_t>> out(nbr.size());
  for (size_t v = 0; v < nbr.size(); ++v) out[v].assign(nbr[v].begin(), nbr[v].end());
  return out;
}

void save_mesh(const IcoSphere& mesh, const std::string& path) {
  auto os = binio::open_out(path);
  binio::write_magic(os, "ICOS");
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<uint32_t>(mesh.level));
  binio::write_u32(os, static_cast<uint32_t>(mesh.num_vertices()));
  binio::write_u32(os, static_cast<uint32_t>(mesh.num_triangles()));
  for (int64_t v = 0; v < mesh.num_vertices(); ++v)
    for (int k = 0; k < 3; ++k) binio::write_f64(os, mesh.vertices.at(v, k));
  for (int64_t t = 0; t < mesh.num_triangles(); ++t)
    for (int k = 0; k < 3; ++k) binio::write_u32(os, mesh.triangles.at(t, k));
  for (int64_t r = 0; r < mesh.edge_parents.rows; ++r)
    for (int k = 0; k < 2; ++k) binio::write_u32(os, mesh.edge_parents.at(r, k));
  if (!os) throw DataFormatError("write failed: " + path);
}

IcoSphere load_mesh(const std::string& path) {
  auto is = binio::open_in(path);
  binio::expect_magic(is, "ICOS", path);
  uint32_t version = binio::read_u32(is, "version");
  if (version != 1) throw DataFormatError("unsupported mesh version in " + path);
  uint32_t level = binio::read_u32(is, "level");
  int64_t n = binio::read_u32(is, "vertex count");
  int64_t t = binio::read_u32(is, "triangle count");
  if (level > 30 || n != vertex_count(static_cast<int>(level)) ||
      t != triangle_count(static_cast<int>(level)))
    throw DataFormatError("inconsistent mesh header in " + path);
  int64_t np = level == 0 ? n : vertex_count(static_cast<int>(level) - 1);

  IcoSphere mesh;
  mesh.level = static_cast<int>(level);
  mesh.vertices = Tensor<double>({n, 3});
  for (int64_t v = 0; v < n; ++v) {
    double norm = 0;
    for (int k = 0; k < 3; ++k) {
      double x = binio::read_f64(is, "vertex coordinates");
      mesh.vertices.at(v, k) = x;
      norm += x * x;
    }
    if (std::abs(std::sqrt(norm) - 1.0) > 1e-9)
      throw DataFormatError("off-sphere vertex in " + path);
  }
  mesh.triangles = IndexMatrix(t, 3);
  for (int64_t i = 0; i < t; ++i)
    for (int k = 0; k < 3; ++k) {
      uint32_t idx = binio::read_u32(is, "triangle indices");
      if (idx >= n) throw DataFormatError("triangle index out of range in " + path);
      mesh.triangles.at(i, k) = idx;
    }
  mesh.edge_parents = IndexMatrix(level == 0 ? 0 : n - np, 2);
  for (int64_t r = 0; r < mesh.edge_parents.rows; ++r)
    for (int k = 0; k < 2; ++k) {
      uint32_t idx = binio::read_u32(is, "edge parents");
      if (idx >= np) throw DataFormatError("edge parent out of range in " + path);
      mesh.edge_parents.at(r, k) = idx;
    }
  return mesh;
}

}  // namespace sunet
