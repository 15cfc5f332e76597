#include "sunet/symmetry.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "sunet/errors.hpp"

namespace sunet {

namespace {

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[size_t(i * 3 + j)] += a[size_t(i * 3 + k)] * b[size_t(k * 3 + j)];
  return c;
}

// rotation by angle about a unit axis (Rodrigues form)
Mat3 axis_angle(double ux, double uy, double uz, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return Mat3{t * ux * ux + c,      t * ux * uy - s * uz, t * ux * uz + s * uy,
              t * ux * uy + s * uz, t * uy * uy + c,      t * uy * uz - s * ux,
              t * ux * uz - s * uy, t * uy * uz + s * ux, t * uz * uz + c};
}

// entries quantized to 1e-6 form the dedup key; group elements differ by
// far more than that
std::array<int64_t, 9> quantize(const Mat3& m) {
  std::array<int64_t, 9> q;
  for (size_t i = 0; i < 9; ++i) q[i] = int64_t(std::llround(m[i] * 1e6));
  return q;
}

}  // namespace

const std::vector<Mat3>& icosahedral_rotations() {
  static const std::vector<Mat3> group = [] {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    const double vn = std::sqrt(1.0 + phi * phi);

    std::vector<Mat3> gens;
    // five-fold rotation about the first icosahedron vertex (0, 1, phi)/|.|
    gens.push_back(axis_angle(0.0, 1.0 / vn, phi / vn, 2.0 * M_PI / 5.0));
    // three-fold coordinate cycle x -> y -> z -> x, a symmetry of the
    // cyclic-permutation vertex construction
    gens.push_back(Mat3{0, 0, 1, 1, 0, 0, 0, 1, 0});
    // two-fold rotation about the y axis (through the midpoint of the edge
    // joining the first two vertices)
    gens.push_back(Mat3{-1, 0, 0, 0, 1, 0, 0, 0, -1});

    const Mat3 identity{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::vector<Mat3> elements{identity};
    std::map<std::array<int64_t, 9>, size_t> seen;
    seen.emplace(quantize(identity), 0);

    for (size_t head = 0; head < elements.size(); ++head) {
      const Mat3 base = elements[head];
      for (const Mat3& g : gens) {
        const Mat3 next = matmul3(g, base);
        if (seen.emplace(quantize(next), elements.size()).second) elements.push_back(next);
      }
    }
    if (elements.size() != 60)
      throw NumericalError("icosahedral rotation closure did not reach 60 elements");
    return elements;
  }();
  return group;
}

std::vector<uint32_t> rotation_permutation(const IcoSphere& mesh, const Mat3& rot) {
  const int64_t n = mesh.num_vertices();
  const auto& v = mesh.vertices;

  // spatial hash with cells far wider than the matching tolerance
  const double cell = 1e-3;
  const auto key_of = [cell](double x, double y, double z) {
    const auto q = [cell](double a) { return int64_t(std::floor(a / cell)); };
    return std::array<int64_t, 3>{q(x), q(y), q(z)};
  };
  struct ArrayHash {
    size_t operator()(const std::array<int64_t, 3>& k) const {
      size_t h = 1469598103934665603ull;
      for (int64_t x : k) {
        h ^= size_t(x);
        h *= 1099511628211ull;
      }
      return h;
    }
  };
  std::unordered_map<std::array<int64_t, 3>, std::vector<uint32_t>, ArrayHash> grid;
  grid.reserve(size_t(n) * 2);
  for (int64_t i = 0; i < n; ++i)
    grid[key_of(v.at(i, 0), v.at(i, 1), v.at(i, 2))].push_back(uint32_t(i));

  std::vector<uint32_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double p[3] = {v.at(i, 0), v.at(i, 1), v.at(i, 2)};
    double r[3];
    for (int a = 0; a < 3; ++a)
      r[a] = rot[size_t(a * 3)] * p[0] + rot[size_t(a * 3 + 1)] * p[1] +
             rot[size_t(a * 3 + 2)] * p[2];

    int64_t found = -1;
    const auto base = key_of(r[0], r[1], r[2]);
    for (int64_t dx = -1; dx <= 1 && found < 0; ++dx)
      for (int64_t dy = -1; dy <= 1 && found < 0; ++dy)
        for (int64_t dz = -1; dz <= 1 && found < 0; ++dz) {
          const auto it = grid.find({base[0] + dx, base[1] + dy, base[2] + dz});
          if (it == grid.end()) continue;
          for (uint32_t cand : it->second) {
            const double ex = v.at(cand, 0) - r[0];
            const double ey = v.at(cand, 1) - r[1];
            const double ez = v.at(cand, 2) - r[2];
            if (ex * ex + ey * ey + ez * ez <= 1e-18) {
              found = cand;
              break;
            }
          }
        }
    if (found < 0) {
      char msg[96];
      std::snprintf(msg, sizeof(msg),
                    "rotation image of vertex %lld matches no mesh vertex within 1e-9",
                    static_cast<long long>(i));
      throw NumericalError(msg);
    }
    perm[size_t(i)] = uint32_t(found);
  }
  return perm;
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<uint32_t>& perm) {
  if (x.rows() != int64_t(perm.size()))
    throw UsageError("permute_rows: permutation length does not match row count");
  Tensor<T> out(x.shape());
  const int64_t c = x.cols();
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < c; ++j) out.at(perm[size_t(i)], j) = x.at(i, j);
  return out;
}

std::vector<int32_t> permute_labels(const std::vector<int32_t>& labels,
                                    const std::vector<uint32_t>& perm) {
  if (labels.size() != perm.size())
    throw UsageError("permute_labels: permutation length does not match label count");
  std::vector<int32_t> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) out[perm[i]] = labels[i];
  return out;
}

template Tensor<float> permute_rows<float>(const Tensor<float>&, const std::vector<uint32_t>&);
template Tensor<double> permute_rows<double>(const Tensor<double>&, const std::vector<uint32_t>&);

}  // namespace sunet
