#include "sunet/icosphere.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "doctest.h"
#include "sunet/errors.hpp"

using namespace sunet;

namespace {

// Edge set recomputed from scratch, independent of vertex_adjacency.
std::set<std::pair<uint32_t, uint32_t>> edge_set(const IcoSphere& m) {
  std::set<std::pair<uint32_t, uint32_t>> edges;
  for (int64_t t = 0; t < m.num_triangles(); ++t)
    for (int e = 0; e < 3; ++e) {
      uint32_t a = m.triangles.at(t, e);
      uint32_t b = m.triangles.at(t, (e + 1) % 3);
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  return edges;
}

double chord(const IcoSphere& m, uint32_t a, uint32_t b) {
  double d2 = 0;
  for (int k = 0; k < 3; ++k) {
    double d = m.vertices.at(a, k) - m.vertices.at(b, k);
    d2 += d * d;
  }
  return std::sqrt(d2);
}

}  // namespace

TEST_CASE("vertex_count closed form and pooling inverse") {
  const int64_t expected[8] = {12, 42, 162, 642, 2562, 10242, 40962, 163842};
  for (int l = 0; l < 8; ++l) CHECK(vertex_count(l) == expected[l]);
  for (int l = 0; l < 7; ++l) CHECK(vertex_count(l + 1) == 4 * vertex_count(l) - 6);
  // inverse of the coarsening relation n' = (n+6)/4
  for (int l = 1; l < 8; ++l) CHECK((vertex_count(l) + 6) / 4 == vertex_count(l - 1));
  CHECK_THROWS_AS(vertex_count(-1), UsageError);
  CHECK_THROWS_AS(generate(-2), UsageError);
}

TEST_CASE("level-0 icosahedron geometry") {
  IcoSphere m = icosahedron();
  REQUIRE(m.num_vertices() == 12);
  REQUIRE(m.num_triangles() == 20);
  CHECK(m.edge_parents.rows == 0);

  auto edges = edge_set(m);
  CHECK(edges.size() == 30);

  // all edges identical length, all vertices on the sphere
  double ref = chord(m, edges.begin()->first, edges.begin()->second);
  for (auto [a, b] : edges) CHECK(chord(m, a, b) == doctest::Approx(ref).epsilon(1e-12));
  for (int v = 0; v < 12; ++v) {
    double n2 = 0;
    for (int k = 0; k < 3; ++k) n2 += m.vertices.at(v, k) * m.vertices.at(v, k);
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-12);
  }

  // every vertex has exactly five neighbors
  auto adj = vertex_adjacency(m);
  for (const auto& nb : adj) CHECK(nb.size() == 5);

  // outward orientation: triangle normal points away from the origin
  for (int64_t t = 0; t < 20; ++t) {
    uint32_t a = m.triangles.at(t, 0), b = m.triangles.at(t, 1), c = m.triangles.at(t, 2);
    double e1[3], e2[3];
    for (int k = 0; k < 3; ++k) {
      e1[k] = m.vertices.at(b, k) - m.vertices.at(a, k);
      e2[k] = m.vertices.at(c, k) - m.vertices.at(a, k);
    }
    double nx = e1[1] * e2[2] - e1[2] * e2[1];
    double ny = e1[2] * e2[0] - e1[0] * e2[2];
    double nz = e1[0] * e2[1] - e1[1] * e2[0];
    double dot = 0;
    for (int k = 0; k < 3; ++k)
      dot += (k == 0 ? nx : k == 1 ? ny : nz) * m.vertices.at(a, k);
    CHECK(dot > 0);
  }
}

TEST_CASE("hierarchy invariants through level 7") {
  IcoSphere prev;
  for (int level = 0; level <= 7; ++level) {
    IcoSphere m = level == 0 ? generate(0) : subdivide(prev);
    CAPTURE(level);
    REQUIRE(m.level == level);
    REQUIRE(m.num_vertices() == vertex_count(level));
    REQUIRE(m.num_triangles() == 20 * (int64_t{1} << (2 * level)));

    // Euler characteristic with an independently recomputed edge set
    auto edges = edge_set(m);
    CHECK(m.num_vertices() - int64_t(edges.size()) + m.num_triangles() == 2);

    for (int64_t v = 0; v < m.num_vertices(); ++v) {
      double n2 = 0;
      for (int k = 0; k < 3; ++k) n2 += m.vertices.at(v, k) * m.vertices.at(v, k);
      if (std::abs(std::sqrt(n2) - 1.0) > 1e-12) {
        CAPTURE(v);
        REQUIRE(std::abs(std::sqrt(n2) - 1.0) <= 1e-12);
      }
    }

    // degree histogram: exactly the 12 original vertices keep degree 5
    auto adj = vertex_adjacency(m);
    int64_t fives = 0;
    for (size_t v = 0; v < adj.size(); ++v) {
      if (adj[v].size() == 5) {
        ++fives;
        CHECK(v < 12);
      } else {
        CHECK(adj[v].size() == 6);
      }
    }
    CHECK(fives == 12);

    // adjacency symmetry
    for (size_t v = 0; v < adj.size(); ++v)
      for (uint32_t u : adj[v]) {
        const auto& back = adj[u];
        CHECK(std::find(back.begin(), back.end(), uint32_t(v)) != back.end());
      }

    // near-uniform edge lengths
    double lo = 1e30, hi = 0;
    for (auto [a, b] : edges) {
      double c = chord(m, a, b);
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    CHECK(hi / lo < 1.3);

    if (level > 0) {
      // prefix property, bitwise
      REQUIRE(std::memcmp(prev.vertices.data(), m.vertices.data(),
                          sizeof(double) * 3 * size_t(prev.num_vertices())) == 0);

      // every appended vertex is the renormalized midpoint of its parents
      int64_t np = prev.num_vertices();
      REQUIRE(m.edge_parents.rows == m.num_vertices() - np);
      for (int64_t r = 0; r < m.edge_parents.rows; ++r) {
        uint32_t a = m.edge_parents.at(r, 0), b = m.edge_parents.at(r, 1);
        REQUIRE(a < np);
        REQUIRE(b < np);
        double mid[3], n2 = 0;
        for (int k = 0; k < 3; ++k) {
          mid[k] = 0.5 * (m.vertices.at(a, k) + m.vertices.at(b, k));
          n2 += mid[k] * mid[k];
        }
        double nrm = std::sqrt(n2);
        for (int k = 0; k < 3; ++k)
          CHECK(std::abs(mid[k] / nrm - m.vertices.at(np + r, k)) < 1e-14);
      }
    }
    prev = std::move(m);
  }
}

TEST_CASE("iterated subdivision equals direct generation") {
  for (int k = 0; k <= 3; ++k) {
    IcoSphere a = subdivide(generate(k));
    IcoSphere b = generate(k + 1);
    REQUIRE(a.num_vertices() == b.num_vertices());
    CHECK(std::memcmp(a.vertices.data(), b.vertices.data(),
                      sizeof(double) * 3 * size_t(a.num_vertices())) == 0);
    CHECK(a.triangles.data == b.triangles.data);
    CHECK(a.edge_parents.data == b.edge_parents.data);
  }
}

TEST_CASE("level-1 edge parents cover the 30 icosahedron edges") {
  IcoSphere m = generate(1);
  REQUIRE(m.edge_parents.rows == 30);
  std::set<std::pair<uint32_t, uint32_t>> seen;
  for (int64_t r = 0; r < 30; ++r) {
    uint32_t a = m.edge_parents.at(r, 0), b = m.edge_parents.at(r, 1);
    CHECK(a < 12);
    CHECK(b < 12);
    seen.insert({std::min(a, b), std::max(a, b)});
  }
  CHECK(seen == edge_set(icosahedron()));
}

TEST_CASE("mesh file roundtrip") {
  IcoSphere m = generate(3);
  const std::string path = "roundtrip.icomesh";
  save_mesh(m, path);
  IcoSphere r = load_mesh(path);
  CHECK(r.level == 3);
  REQUIRE(r.num_vertices() == m.num_vertices());
  CHECK(std::memcmp(r.vertices.data(), m.vertices.data(),
                    sizeof(double) * 3 * size_t(m.num_vertices())) == 0);
  CHECK(r.triangles.data == m.triangles.data);
  CHECK(r.edge_parents.data == m.edge_parents.data);

  SUBCASE("corrupted magic is rejected") {
    FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f);
    std::fputc('X', f);
    std::fclose(f);
    CHECK_THROWS_AS(load_mesh(path), DataFormatError);
  }
  SUBCASE("truncated file is rejected") {
    IcoSphere small = generate(1);
    save_mesh(small, path);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_mesh(path), DataFormatError);
  }
  std::remove(path.c_str());
}
