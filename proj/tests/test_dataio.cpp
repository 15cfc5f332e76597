#include "sunet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "sunet/errors.hpp"
#include "sunet/metrics.hpp"
#include "sunet/rng.hpp"

using namespace sunet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("sunet_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(bool(is));
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

bool identical_trees(const fs::path& a, const fs::path& b) {
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a)) names_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) names_b.insert(e.path().filename().string());
  if (names_a != names_b) return false;
  for (const std::string& name : names_a)
    if (slurp(a / name) != slurp(b / name)) return false;
  return true;
}

}  // namespace

TEST_CASE("parcellation generator: determinism down to the bytes on disk") {
  Dataset a = synth_parcellation(3, 12, 4, 5);
  Dataset b = synth_parcellation(3, 12, 4, 5);
  a.folds = make_folds(4, 2);
  b.folds = make_folds(4, 2);
  fs::path da = temp_dir("parc_a"), db = temp_dir("parc_b");
  save_dataset(a, da.string());
  save_dataset(b, db.string());
  CHECK(identical_trees(da, db));

  Dataset c = synth_parcellation(3, 12, 4, 6);  // different seed
  c.folds = make_folds(4, 2);
  fs::path dc = temp_dir("parc_c");
  save_dataset(c, dc.string());
  CHECK(!identical_trees(da, dc));
}

TEST_CASE("parcellation generator: single region makes constant labels") {
  Dataset ds = synth_parcellation(2, 1, 2, 9);
  for (const Sample& s : ds.samples)
    for (int32_t l : s.labels) CHECK(l == 0);
  std::vector<int32_t> constant(size_t(vertex_count(2)), 0);
  CHECK(dice(constant, ds.samples[0].labels, 1).mean == 1.0);
}

TEST_CASE("parcellation generator: every region populated and connected at level 3") {
  const int k = 36, level = 3;
  Dataset ds = synth_parcellation(level, k, 2, 7);
  IcoSphere mesh = generate(level);
  auto adj = vertex_adjacency(mesh);

  for (const Sample& s : ds.samples) {
    std::vector<int64_t> count(size_t(k), 0);
    for (int32_t l : s.labels) {
      REQUIRE(l >= 0);
      REQUIRE(l < k);
      ++count[size_t(l)];
    }
    for (int r = 0; r < k; ++r) CHECK(count[size_t(r)] > 0);

    // each region is one connected component of the mesh graph
    const int64_t n = vertex_count(level);
    std::vector<uint8_t> seen(size_t(n), 0);
    for (int r = 0; r < k; ++r) {
      int64_t start = -1;
      for (int64_t v = 0; v < n; ++v)
        if (s.labels[size_t(v)] == r) {
          start = v;
          break;
        }
      REQUIRE(start >= 0);
      std::queue<int64_t> q;
      q.push(start);
      seen[size_t(start)] = 1;
      int64_t reached = 0;
      while (!q.empty()) {
        const int64_t v = q.front();
        q.pop();
        ++reached;
        for (uint32_t w : adj[size_t(v)])
          if (!seen[w] && s.labels[w] == r) {
            seen[w] = 1;
            q.push(int64_t(w));
          }
      }
      CHECK(reached == count[size_t(r)]);
    }
  }
}

TEST_CASE("parcellation generator: finite features and per-sample rotation variety") {
  Dataset ds = synth_parcellation(3, 8, 6, 11);
  for (const Sample& s : ds.samples) {
    REQUIRE(s.features.rows() == vertex_count(3));
    REQUIRE(s.features.cols() == 3);
    for (int64_t i = 0; i < s.features.numel(); ++i)
      CHECK(std::isfinite(s.features.data()[i]));
  }
  // rotations make the label fields differ across samples
  int distinct = 0;
  for (size_t i = 1; i < ds.samples.size(); ++i)
    if (ds.samples[i].labels != ds.samples[0].labels) ++distinct;
  CHECK(distinct > 0);
  // but every sample keeps the same region sizes (rotation is a permutation)
  std::vector<int64_t> ref(8, 0);
  for (int32_t l : ds.samples[0].labels) ++ref[size_t(l)];
  std::sort(ref.begin(), ref.end());
  for (const Sample& s : ds.samples) {
    std::vector<int64_t> h(8, 0);
    for (int32_t l : s.labels) ++h[size_t(l)];
    std::sort(h.begin(), h.end());
    CHECK(h == ref);
  }
}

TEST_CASE("parcellation generator: class count cannot exceed vertices") {
  CHECK_THROWS_AS(synth_parcellation(0, 13, 1, 1), UsageError);
}

TEST_CASE("regression generator: target rule and bounds") {
  const int level = 3;
  Dataset ds = synth_regression(level, 4, 13);
  for (const Sample& s : ds.samples) {
    REQUIRE(s.features.rows() == vertex_count(level));
    REQUIRE(s.features.cols() == 2);
    REQUIRE(s.target.rows() == vertex_count(level));
    REQUIRE(s.target.cols() == 1);
    double diff = 0;
    for (int64_t v = 0; v < s.target.rows(); ++v) {
      CHECK(s.target.at(v, 0) >= 0.2f);
      CHECK(std::isfinite(s.target.at(v, 0)));
      diff += std::abs(double(s.target.at(v, 0)) - double(s.features.at(v, 1)));
    }
    CHECK(diff > 0);  // the target is not just a copy of the thickness input
  }

  SUBCASE("noise-free rule with flat inputs is the identity") {
    IcoSphere mesh = generate(2);
    NeighborTable table = build_dine_table(mesh);
    const int64_t n = vertex_count(2);
    Tensor<float> s({n, 1});                         // zeros
    Tensor<float> t0 = Tensor<float>::full({n, 1}, 3.0f);
    Tensor<float> t1 = regression_target(s, t0, table, nullptr);
    for (int64_t v = 0; v < n; ++v) CHECK(t1.at(v, 0) == 3.0f);
  }

  SUBCASE("determinism") {
    Dataset a = synth_regression(2, 3, 21), b = synth_regression(2, 3, 21);
    a.folds = make_folds(3, 3);
    b.folds = make_folds(3, 3);
    fs::path da = temp_dir("reg_a"), db = temp_dir("reg_b");
    save_dataset(a, da.string());
    save_dataset(b, db.string());
    CHECK(identical_trees(da, db));
  }
}

TEST_CASE("fold construction partitions the samples evenly") {
  auto folds = make_folds(10, 3);
  REQUIRE(folds.size() == 3);
  CHECK(folds[0].size() == 4);
  CHECK(folds[1].size() == 3);
  CHECK(folds[2].size() == 3);
  std::set<int> all;
  for (const auto& f : folds) all.insert(f.begin(), f.end());
  CHECK(all.size() == 10);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 9);
  CHECK_THROWS_AS(make_folds(2, 3), UsageError);
}

TEST_CASE("feature files: round trip and corruption detection") {
  fs::path dir = temp_dir("sfmp");
  Rng rng(3);
  Tensor<float> f = Tensor<float>::normal({42, 3}, rng);
  const std::string path = (dir / "x.sfmp").string();
  write_features(path, f);
  Tensor<float> g = read_features(path);
  REQUIRE(g.rows() == 42);
  REQUIRE(g.cols() == 3);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(f.data()[i] == g.data()[i]);

  SUBCASE("corrupted magic names the file") {
    std::fstream fix(path, std::ios::in | std::ios::out | std::ios::binary);
    fix.write("XXXX", 4);
    fix.close();
    try {
      read_features(path);
      FAIL("expected a format error");
    } catch (const DataFormatError& e) {
      CHECK(std::string(e.what()).find("x.sfmp") != std::string::npos);
    }
  }
  SUBCASE("truncation is detected") {
    fs::resize_file(path, 20);
    CHECK_THROWS_AS(read_features(path), DataFormatError);
  }
  SUBCASE("future versions are rejected") {
    std::fstream fix(path, std::ios::in | std::ios::out | std::ios::binary);
    fix.seekp(4);
    const unsigned char two[4] = {2, 0, 0, 0};
    fix.write(reinterpret_cast<const char*>(two), 4);
    fix.close();
    CHECK_THROWS_AS(read_features(path), DataFormatError);
  }
}

TEST_CASE("label files: round trip and corruption detection") {
  fs::path dir = temp_dir("slbl");
  std::vector<int32_t> labels{0, 3, 1, 2, 2, 0, 35};
  const std::string path = (dir / "y.slbl").string();
  write_labels(path, labels);
  CHECK(read_labels(path) == labels);

  std::fstream fix(path, std::ios::in | std::ios::out | std::ios::binary);
  fix.write("YYYY", 4);
  fix.close();
  CHECK_THROWS_AS(read_labels(path), DataFormatError);
}

TEST_CASE("dataset directory: save, load, and manifest validation") {
  Dataset ds = synth_parcellation(2, 6, 5, 17);
  ds.folds = make_folds(5, 2);
  fs::path dir = temp_dir("roundtrip");
  save_dataset(ds, dir.string());

  SUBCASE("round trip preserves everything") {
    Dataset back = load_dataset(dir.string());
    CHECK(back.task == Task::Parcellation);
    CHECK(back.level == 2);
    CHECK(back.num_classes == 6);
    CHECK(back.folds == ds.folds);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      CHECK(back.samples[i].id == ds.samples[i].id);
      CHECK(back.samples[i].labels == ds.samples[i].labels);
      for (int64_t j = 0; j < ds.samples[i].features.numel(); ++j)
        CHECK(back.samples[i].features.data()[j] == ds.samples[i].features.data()[j]);
    }
  }

  SUBCASE("missing referenced file is listed") {
    fs::remove(dir / "s0002.sfmp");
    try {
      load_dataset(dir.string());
      FAIL("expected a format error");
    } catch (const DataFormatError& e) {
      CHECK(std::string(e.what()).find("s0002.sfmp") != std::string::npos);
    }
  }

  SUBCASE("folds that do not partition are rejected") {
    std::string m = slurp(dir / "manifest.json");
    const std::string needle = "\"folds\": [";
    auto at = m.find(needle);
    REQUIRE(at != std::string::npos);
    // duplicate sample 0 into both folds
    Dataset bad = ds;
    bad.folds = {{0, 1, 2}, {0, 3, 4}};
    save_dataset(bad, dir.string());
    CHECK_THROWS_AS(load_dataset(dir.string()), DataFormatError);
  }

  SUBCASE("labels beyond the declared class range are rejected") {
    Dataset bad = ds;
    bad.num_classes = 3;  // labels go up to 5
    save_dataset(bad, dir.string());
    CHECK_THROWS_AS(load_dataset(dir.string()), DataFormatError);
  }

  SUBCASE("regression datasets round trip too") {
    Dataset reg = synth_regression(2, 3, 23);
    reg.folds = make_folds(3, 3);
    fs::path rdir = temp_dir("roundtrip_reg");
    save_dataset(reg, rdir.string());
    Dataset back = load_dataset(rdir.string());
    CHECK(back.task == Task::Regression);
    REQUIRE(back.samples.size() == 3);
    for (size_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < reg.samples[i].target.numel(); ++j)
        CHECK(back.samples[i].target.data()[j] == reg.samples[i].target.data()[j]);
  }
}

TEST_CASE("vtk export: structure, typed scalars, and round trip") {
  IcoSphere mesh = icosahedron();
  fs::path dir = temp_dir("vtk");
  const std::string path = (dir / "mesh.vtk").string();

  std::vector<float> curv(12);
  for (size_t i = 0; i < 12; ++i) curv[i] = 0.25f * float(i) - 1.0f;
  std::vector<int32_t> labels(12);
  for (size_t i = 0; i < 12; ++i) labels[i] = int32_t(i % 5);

  export_vtk(mesh, {{"curv", curv}}, {{"roi", labels}}, path);

  const std::string text = slurp(path);
  CHECK(text.find("POINTS 12 float") != std::string::npos);
  CHECK(text.find("POLYGONS 20 80") != std::string::npos);
  CHECK(text.find("SCALARS curv float 1") != std::string::npos);
  CHECK(text.find("SCALARS roi int 1") != std::string::npos);

  VtkData back = read_vtk(path);
  REQUIRE(back.points.rows() == 12);
  REQUIRE(back.polygons.rows == 20);
  for (int64_t v = 0; v < 12; ++v)
    for (int64_t c = 0; c < 3; ++c)
      CHECK(back.points.at(v, c) == doctest::Approx(mesh.vertices.at(v, c)).epsilon(1e-6));
  for (int64_t f = 0; f < 20; ++f)
    for (int64_t j = 0; j < 3; ++j) CHECK(back.polygons.at(f, j) == mesh.triangles.at(f, j));
  REQUIRE(back.scalars.size() == 1);
  CHECK(back.scalars[0].first == "curv");
  for (size_t i = 0; i < 12; ++i) CHECK(back.scalars[0].second[i] == curv[i]);
  REQUIRE(back.labels.size() == 1);
  CHECK(back.labels[0].first == "roi");
  CHECK(back.labels[0].second == labels);

  SUBCASE("length mismatch is rejected") {
    std::vector<float> sh(11);
    CHECK_THROWS_AS(export_vtk(mesh, {{"bad", sh}}, {}, path), UsageError);
  }
}
