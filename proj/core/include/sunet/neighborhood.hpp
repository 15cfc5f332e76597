#pragma once

#include <array>
#include <string>
#include <vector>

#include "sunet/icosphere.hpp"
#include "sunet/tensor.hpp"

namespace sunet {

using Vec3 = std::array<double, 3>;

// Ordered 7-slot filter support for one mesh level. Hexagon rows hold
// [v, n1..n6]; the 12 pentagon rows repeat the center, [v, v, n1..n5].
// Neighbors are sorted by ascending tangent-plane angle, ties by index.
struct NeighborTable {
  int level = 0;
  IndexMatrix slots;              // N x 7
  std::vector<uint8_t> pentagon;  // N flags, exactly 12 set
};

// Orthonormal tangent basis at a unit vector c. e1 is the projection of
// global +x onto the tangent plane (global +y when c is within 1e-6 of the
// x axis); e2 = c x e1, so (e1, e2, c) is right-handed and angles measured
// from e1 toward e2 run counterclockwise seen from outside the sphere.
void tangent_frame(const Vec3& center, Vec3& e1, Vec3& e2);

// Angle in [0, 2pi) of `neighbor`'s tangent-plane direction at `center`,
// measured from e1 counterclockwise from outside. Angles within 1e-7 of the
// full turn are reported as 0 so that directions on the reference axis order
// stably. Both inputs unit length; equal or antipodal points are rejected.
double tangent_angle(const Vec3& center, const Vec3& neighbor);

NeighborTable build_dine_table(const IcoSphere& mesh);

// Tangent-plane rectangular resampler: for each vertex a rows x cols grid
// in the (e1, e2) frame, columns along e1 and rows along -e2 (row 0 on the
// +e2 side), grid step chosen so the first off-center point along an axis
// sits exactly `spacing` radians of arc away. Grid points map to the sphere
// by inverse gnomonic projection and are expressed as barycentric weights
// over the vertices of the containing triangle. Sample s of vertex v lives
// at flat row v * rows * cols + s.
struct RePaSampler {
  int level = 0;
  int rows = 0, cols = 0;
  double spacing = 0;      // radians of arc between adjacent grid points
  IndexMatrix anchors;     // (N * rows * cols) x 3 vertex indices
  Tensor<double> weights;  // same shape, nonnegative, each row sums to 1
};

RePaSampler build_repa_sampler(const IcoSphere& mesh, int rows, int cols, double spacing);

// Mean great-circle arc length over the mesh's unique edges; the default
// RePa spacing for a level.
double mean_edge_arc(const IcoSphere& mesh);

// The (N - N_prev) x 2 coarse-parent table of a subdivided mesh; rejects
// level-0 input.
IndexMatrix edge_parent_table(const IcoSphere& mesh);

// Binary slot-table dump: magic "DINE", u32 N, then N x 7 u32, little-endian.
void save_dine_table(const NeighborTable& table, const std::string& path);
IndexMatrix load_dine_table(const std::string& path);

}  // namespace sunet
