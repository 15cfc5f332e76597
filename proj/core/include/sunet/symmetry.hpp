#pragma once

// The rotation group of the canonical icosahedron and the exact vertex
// permutations it induces on every subdivision level.

#include <array>
#include <cstdint>
#include <vector>

#include "sunet/icosphere.hpp"
#include "sunet/tensor.hpp"

namespace sunet {

using Mat3 = std::array<double, 9>;  // row-major

// All 60 orientation-preserving symmetries, identity first, in the
// deterministic order produced by breadth-first closure over a fixed
// generator set.
const std::vector<Mat3>& icosahedral_rotations();

// perm[i] = index of the mesh vertex nearest R * v_i. Every image must land
// within 1e-9 of a vertex, otherwise the mesh lacks the symmetry and a
// NumericalError is raised.
std::vector<uint32_t> rotation_permutation(const IcoSphere& mesh, const Mat3& rot);

// Applies a rotation's permutation to per-vertex data: out[perm[i]] = in[i].
template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<uint32_t>& perm);

std::vector<int32_t> permute_labels(const std::vector<int32_t>& labels,
                                    const std::vector<uint32_t>& perm);

}  // namespace sunet
