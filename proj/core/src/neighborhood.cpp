#include "sunet/neighborhood.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <utility>

#include "binio.hpp"
#include "sunet/errors.hpp"
#include "sunet/parallel.hpp"

namespace sunet {

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 vertex_of(const IcoSphere& mesh, uint32_t v) {
  return {mesh.vertices.at(v, 0), mesh.vertices.at(v, 1), mesh.vertices.at(v, 2)};
}

}  // namespace

void tangent_frame(const Vec3& center, Vec3& e1, Vec3& e2) {
  Vec3 axis = {1, 0, 0};
  if (std::abs(center[0]) > 1.0 - 1e-6) axis = {0, 1, 0};
  double ca = dot(center, axis);
  e1 = {axis[0] - ca * center[0], axis[1] - ca * center[1], axis[2] - ca * center[2]};
  double n = std::sqrt(dot(e1, e1));
  for (int k = 0; k < 3; ++k) e1[k] /= n;
  e2 = cross(center, e1);
}

double tangent_angle(const Vec3& center, const Vec3& neighbor) {
  double cn = dot(center, neighbor);
  if (std::abs(cn) > 1.0 - 1e-12)
    throw NumericalError("tangent angle undefined for equal or antipodal points");
  Vec3 d = {neighbor[0] - cn * center[0], neighbor[1] - cn * center[1],
            neighbor[2] - cn * center[2]};
  Vec3 e1, e2;
  tangent_frame(center, e1, e2);
  double a = std::atan2(dot(d, e2), dot(d, e1));
  if (a < 0) a += 2.0 * std::numbers::pi;
  // A direction within 1e-7 of the full turn is the 0 direction. Without the
  // snap, a neighbor sitting exactly on the reference axis would flip between
  // the first and last slot under sub-nanoradian coordinate noise.
  if (a >= 2.0 * std::numbers::pi - 1e-7) a = 0;
  return a;
}

NeighborTable build_dine_table(const IcoSphere& mesh) {
  const int64_t n = mesh.num_vertices();
  auto adj = vertex_adjacency(mesh);

  NeighborTable table;
  table.level = mesh.level;
  table.slots = IndexMatrix(n, 7);
  table.pentagon.assign(static_cast<size_t>(n), 0);

  std::atomic<bool> bad_degree{false};
  parallel_for(n, [&](int64_t begin, int64_t end) {
    for (int64_t v = begin; v < end; ++v) {
      const auto& nbrs = adj[static_cast<size_t>(v)];
      size_t deg = nbrs.size();
      if (deg != 5 && deg != 6) {
        bad_degree.store(true);
        continue;
      }
      Vec3 c = vertex_of(mesh, static_cast<uint32_t>(v));
      std::vector<std::pair<double, uint32_t>> order;
      order.reserve(deg);
      for (uint32_t u : nbrs) order.emplace_back(tangent_angle(c, vertex_of(mesh, u)), u);
      std::sort(order.begin(), order.end());

      int slot = 0;
      table.slots.at(v, slot++) = static_cast<uint32_t>(v);
      if (deg == 5) {
        table.pentagon[static_cast<size_t>(v)] = 1;
        table.slots.at(v, slot++) = static_cast<uint32_t>(v);
      }
      for (auto [angle, u] : order) table.slots.at(v, slot++) = u;
    }
  });
  if (bad_degree.load())
    throw DataFormatError("mesh has a vertex whose degree is not 5 or 6");
  return table;
}

double mean_edge_arc(const IcoSphere& mesh) {
  std::set<std::pair<uint32_t, uint32_t>> edges;
  for (int64_t t = 0; t < mesh.num_triangles(); ++t)
    for (int e = 0; e < 3; ++e) {
      uint32_t a = mesh.triangles.at(t, e);
      uint32_t b = mesh.triangles.at(t, (e + 1) % 3);
      edges.insert(std::minmax(a, b));
    }
  double sum = 0;
  for (auto [a, b] : edges) {
    double d = std::clamp(dot(vertex_of(mesh, a), vertex_of(mesh, b)), -1.0, 1.0);
    sum += std::acos(d);
  }
  return sum / static_cast<double>(edges.size());
}

IndexMatrix edge_parent_table(const IcoSphere& mesh) {
  if (mesh.level < 1) throw UsageError("edge parents are undefined for a level-0 mesh");
  int64_t expected = mesh.num_vertices() - vertex_count(mesh.level - 1);
  if (mesh.edge_parents.rows != expected || mesh.edge_parents.cols != 2)
    throw DataFormatError("mesh is missing its edge-parent table");
  return mesh.edge_parents;
}

namespace {

// Point location support: per-vertex starting triangle plus the two
// triangles flanking each edge, for walking toward a query point.
struct TriangleIndex {
  std::vector<int64_t> vertex_tri;                            // one incident triangle per vertex
  std::map<std::pair<uint32_t, uint32_t>, std::array<int64_t, 2>> edge_tri;

  explicit TriangleIndex(const IcoSphere& mesh) {
    vertex_tri.assign(static_cast<size_t>(mesh.num_vertices()), -1);
    for (int64_t t = 0; t < mesh.num_triangles(); ++t) {
      for (int e = 0; e < 3; ++e) {
        uint32_t a = mesh.triangles.at(t, e);
        uint32_t b = mesh.triangles.at(t, (e + 1) % 3);
        if (vertex_tri[a] < 0) vertex_tri[a] = t;
        auto [it, fresh] = edge_tri.try_emplace(std::minmax(a, b), std::array<int64_t, 2>{t, -1});
        if (!fresh) it->second[1] = t;
      }
    }
  }

  int64_t across(uint32_t a, uint32_t b, int64_t from) const {
    const auto& pair = edge_tri.at(std::minmax(a, b));
    return pair[0] == from ? pair[1] : pair[0];
  }
};

struct Located {
  int64_t tri;
  std::array<double, 3> bary;
};

// Barycentric coordinates of the central projection of s onto triangle t's
// plane. Valid for s on the same hemisphere as the triangle, which holds for
// all local patch points.
std::array<double, 3> central_barycentric(const IcoSphere& mesh, int64_t t, const Vec3& s) {
  Vec3 a = vertex_of(mesh, mesh.triangles.at(t, 0));
  Vec3 b = vertex_of(mesh, mesh.triangles.at(t, 1));
  Vec3 c = vertex_of(mesh, mesh.triangles.at(t, 2));
  Vec3 n = cross(sub(b, a), sub(c, a));
  double sn = dot(s, n);
  if (std::abs(sn) < 1e-15) return {-1, -1, -1};
  double lambda = dot(a, n) / sn;
  Vec3 p = {lambda * s[0], lambda * s[1], lambda * s[2]};
  double nn = dot(n, n);
  double wa = dot(cross(sub(c, b), sub(p, b)), n) / nn;
  double wb = dot(cross(sub(a, c), sub(p, c)), n) / nn;
  double wc = dot(cross(sub(b, a), sub(p, a)), n) / nn;
  return {wa, wb, wc};
}

Located locate(const IcoSphere& mesh, const TriangleIndex& index, int64_t start, const Vec3& s) {
  int64_t t = start;
  for (int step = 0; step < 64; ++step) {
    auto bary = central_barycentric(mesh, t, s);
    int worst = 0;
    for (int k = 1; k < 3; ++k)
      if (bary[k] < bary[worst]) worst = k;
    if (bary[worst] >= -1e-12) return {t, bary};
    // exit across the edge opposite the most negative coordinate
    uint32_t u = mesh.triangles.at(t, (worst + 1) % 3);
    uint32_t v = mesh.triangles.at(t, (worst + 2) % 3);
    t = index.across(u, v, t);
  }
  // The walk can in principle cycle on degenerate ties; fall back to a scan.
  int64_t best = -1;
  double best_min = -1e30;
  std::array<double, 3> best_bary{};
  for (int64_t cand = 0; cand < mesh.num_triangles(); ++cand) {
    auto bary = central_barycentric(mesh, cand, s);
    double mn = std::min({bary[0], bary[1], bary[2]});
    if (mn > best_min) {
      best_min = mn;
      best = cand;
      best_bary = bary;
    }
  }
  if (best < 0 || best_min < -1e-6)
    throw NumericalError("patch sample point could not be located in any triangle");
  return {best, best_bary};
}

}  // namespace

RePaSampler build_repa_sampler(const IcoSphere& mesh, int rows, int cols, double spacing) {
  if (rows < 1 || cols < 1 || rows % 2 == 0 || cols % 2 == 0)
    throw UsageError("patch rows and cols must be odd and >= 1");
  if (!(spacing > 0)) throw UsageError("patch spacing must be positive");

  const int64_t n = mesh.num_vertices();
  const int64_t patch = int64_t{rows} * cols;
  TriangleIndex index(mesh);

  RePaSampler sampler;
  sampler.level = mesh.level;
  sampler.rows = rows;
  sampler.cols = cols;
  sampler.spacing = spacing;
  sampler.anchors = IndexMatrix(n * patch, 3);
  sampler.weights = Tensor<double>({n * patch, 3});

  const double step = std::tan(spacing);
  const double cx = (cols - 1) / 2.0;
  const double cy = (rows - 1) / 2.0;

  parallel_for(n, [&](int64_t begin, int64_t end) {
    for (int64_t v = begin; v < end; ++v) {
      Vec3 c = vertex_of(mesh, static_cast<uint32_t>(v));
      Vec3 e1, e2;
      tangent_frame(c, e1, e2);
      for (int r = 0; r < rows; ++r) {
        for (int col = 0; col < cols; ++col) {
          double u = (col - cx) * step;
          double w = (cy - r) * step;
          Vec3 s = {c[0] + u * e1[0] + w * e2[0], c[1] + u * e1[1] + w * e2[1],
                    c[2] + u * e1[2] + w * e2[2]};
          double norm = std::sqrt(dot(s, s));
          for (int k = 0; k < 3; ++k) s[k] /= norm;

          Located loc = locate(mesh, index, index.vertex_tri[static_cast<size_t>(v)], s);
          double sum = 0;
          std::array<double, 3> wgt;
          for (int k = 0; k < 3; ++k) {
            wgt[k] = std::max(loc.bary[k], 0.0);
            sum += wgt[k];
          }
          for (int k = 0; k < 3; ++k) wgt[k] /= sum;
          for (int k = 0; k < 3; ++k)
            if (wgt[k] > 1.0 - 1e-9) {
              wgt = {0, 0, 0};
              wgt[k] = 1;
            }

          int64_t row = v * patch + r * cols + col;
          for (int k = 0; k < 3; ++k) {
            sampler.anchors.at(row, k) = mesh.triangles.at(loc.tri, k);
            sampler.weights.at(row, k) = wgt[k];
          }
        }
      }
    }
  });
  return sampler;
}

void save_dine_table(const NeighborTable& table, const std::string& path) {
  auto os = binio::open_out(path);
  binio::write_magic(os, "DINE");
  binio::write_u32(os, static_cast<uint32_t>(table.slots.rows));
  for (int64_t v = 0; v < table.slots.rows; ++v)
    for (int s = 0; s < 7; ++s) binio::write_u32(os, table.slots.at(v, s));
  if (!os) throw DataFormatError("write failed: " + path);
}

IndexMatrix load_dine_table(const std::string& path) {
  auto is = binio::open_in(path);
  binio::expect_magic(is, "DINE", path);
  int64_t n = binio::read_u32(is, "row count");
  IndexMatrix slots(n, 7);
  for (int64_t v = 0; v < n; ++v)
    for (int s = 0; s < 7; ++s) {
      uint32_t idx = binio::read_u32(is, "slot entries");
      if (idx >= n) throw DataFormatError("slot index out of range in " + path);
      slots.at(v, s) = idx;
    }
  return slots;
}

}  // namespace sunet
