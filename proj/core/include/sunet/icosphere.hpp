#pragma once

#include <string>
#include <vector>

#include "sunet/tensor.hpp"

namespace sunet {

// One resolution of the icosahedral sphere hierarchy. Vertices of the parent
// mesh form a bitwise-identical prefix of this mesh's vertex array, which is
// what lets pooling and upsampling address coarse vertices by index alone.
struct IcoSphere {
  int level = 0;
  Tensor<double> vertices;   // N x 3, unit norm
  IndexMatrix triangles;     // T x 3, outward-oriented
  IndexMatrix edge_parents;  // (N - N_prev) x 2; empty at level 0

  int64_t num_vertices() const { return vertices.rows(); }
  int64_t num_triangles() const { return triangles.rows; }
};

// 10 * 4^level + 2. Rejects negative level.
int64_t vertex_count(int level);

// The canonical regular icosahedron: the twelve cyclic permutations of
// (0, +-1, +-phi) / sqrt(1 + phi^2), indexed as
//   0:(0, 1, p)   1:(0, 1,-p)   2:(0,-1, p)   3:(0,-1,-p)
//   4:(1, p, 0)   5:(1,-p, 0)   6:(-1, p, 0)  7:(-1,-p, 0)
//   8:(p, 0, 1)   9:(-p, 0, 1) 10:(p, 0,-1)  11:(-p, 0,-1)
// with p the golden ratio. Faces are derived from the adjacency structure and
// oriented outward.
IcoSphere icosahedron();

// Bisect every edge, project midpoints onto the unit sphere, split each
// triangle into four. Coarse vertices keep their indices; midpoints are
// appended in ascending (min,max) edge order so the result is reproducible
// bit for bit.
IcoSphere subdivide(const IcoSphere& mesh);

// icosahedron() subdivided `level` times.
IcoSphere generate(int level);

// Neighbor lists in ascending vertex-index order, derived from triangles.
std::vector<std::vector<uint32_t>> vertex_adjacency(const IcoSphere& mesh);

// Binary mesh file ("ICOS" magic, little-endian). load_mesh validates counts,
// norms, and index ranges and throws DataFormatError on any mismatch.
void save_mesh(const IcoSphere& mesh, const std::string& path);
IcoSphere load_mesh(const std::string& path);

}  // namespace sunet
