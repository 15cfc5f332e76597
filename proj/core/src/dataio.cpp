#include "sunet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "sunet/errors.hpp"
#include "sunet/symmetry.hpp"

namespace sunet {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

[[noreturn]] void bad_file(const std::string& path, const std::string& what) {
  throw DataFormatError(path + ": " + what);
}

double great_circle(const double* u, const double* v) {
  const double dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  const double cx = u[1] * v[2] - u[2] * v[1];
  const double cy = u[2] * v[0] - u[0] * v[2];
  const double cz = u[0] * v[1] - u[1] * v[0];
  return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot);
}

// mean/stddev normalization helper used by the regression generator
void normalize_field(Tensor<float>& x) {
  double mean = 0;
  for (int64_t i = 0; i < x.numel(); ++i) mean += x.data()[i];
  mean /= double(x.numel());
  double var = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = x.data()[i] - mean;
    var += d * d;
  }
  var /= double(x.numel());
  const double sd = std::sqrt(var);
  if (sd < 1e-12) throw NumericalError("synthetic field degenerated to a constant");
  for (int64_t i = 0; i < x.numel(); ++i)
    x.data()[i] = float((x.data()[i] - mean) / sd);
}

// little-endian scalar I/O
void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) bad_file(path, "truncated");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is, const std::string& path) {
  const uint32_t u = get_u32(is, path);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

const std::vector<uint32_t>& cached_permutation(const IcoSphere& mesh, size_t rot_index) {
  // one permutation table per (level, rotation), shared across samples
  static std::map<std::pair<int64_t, size_t>, std::vector<uint32_t>> cache;
  auto key = std::make_pair(mesh.num_vertices(), rot_index);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache
             .emplace(key,
                      rotation_permutation(mesh, icosahedral_rotations()[rot_index]))
             .first;
  return it->second;
}

}  // namespace

std::string task_name(Task t) {
  return t == Task::Parcellation ? "parcellation" : "regression";
}

Task parse_task(const std::string& name) {
  if (name == "parcellation") return Task::Parcellation;
  if (name == "regression") return Task::Regression;
  throw UsageError("unknown task: " + name);
}

Tensor<float> smooth_field(const Tensor<float>& x, const NeighborTable& table, int rounds) {
  require(x.rank() == 2 && x.rows() == table.slots.rows,
          "smooth_field: field rows must match the neighbor table");
  require(rounds >= 0, "smooth_field: negative round count");
  Tensor<float> cur = x;
  const int64_t n = x.rows(), c = x.cols();
  for (int r = 0; r < rounds; ++r) {
    Tensor<float> next({n, c});
    for (int64_t v = 0; v < n; ++v)
      for (int64_t ch = 0; ch < c; ++ch) {
        float acc = 0;
        for (int64_t s = 0; s < 7; ++s) acc += cur.at(int64_t(table.slots.at(v, s)), ch);
        next.at(v, ch) = acc / 7.0f;
      }
    cur = std::move(next);
  }
  return cur;
}

std::vector<int64_t> farthest_point_seeds(const IcoSphere& mesh, int k, Rng& rng) {
  const int64_t n = mesh.num_vertices();
  require(k >= 1 && int64_t(k) <= n, "farthest_point_seeds: need 1 <= k <= vertex count");
  std::vector<int64_t> seeds;
  seeds.reserve(size_t(k));
  seeds.push_back(int64_t(rng.uniform_index(uint64_t(n))));

  std::vector<double> min_dist(size_t(n), std::numeric_limits<double>::infinity());
  while (int64_t(seeds.size()) < k) {
    const double* s = mesh.vertices.data() + seeds.back() * 3;
    int64_t best = -1;
    double best_dist = -1;
    for (int64_t v = 0; v < n; ++v) {
      const double d = great_circle(s, mesh.vertices.data() + v * 3);
      if (d < min_dist[size_t(v)]) min_dist[size_t(v)] = d;
      if (min_dist[size_t(v)] > best_dist) {
        best_dist = min_dist[size_t(v)];
        best = v;  // strict > keeps the lowest index on ties
      }
    }
    seeds.push_back(best);
  }
  return seeds;
}

std::vector<int32_t> voronoi_labels(const IcoSphere& mesh, const std::vector<int64_t>& seeds) {
  const int64_t n = mesh.num_vertices();
  require(!seeds.empty(), "voronoi_labels: no seeds");
  std::vector<int32_t> labels(static_cast<size_t>(n));
  for (int64_t v = 0; v < n; ++v) {
    const double* p = mesh.vertices.data() + v * 3;
    double best = std::numeric_limits<double>::infinity();
    int32_t who = 0;
    for (size_t s = 0; s < seeds.size(); ++s) {
      const double d = great_circle(p, mesh.vertices.data() + seeds[s] * 3);
      if (d < best) {  // strict < keeps the lowest seed index on ties
        best = d;
        who = int32_t(s);
      }
    }
    labels[size_t(v)] = who;
  }
  return labels;
}

Dataset synth_parcellation(int level, int k, int n_samples, uint64_t seed) {
  require(level >= 0, "synth_parcellation: negative level");
  require(n_samples >= 1, "synth_parcellation: need at least one sample");
  const int64_t n = vertex_count(level);
  require(k >= 1 && int64_t(k) <= n, "synth_parcellation: class count exceeds vertex count");

  IcoSphere mesh = generate(level);
  NeighborTable table = build_dine_table(mesh);
  Rng master(seed);

  const std::vector<int64_t> seeds = farthest_point_seeds(mesh, k, master);
  const std::vector<int32_t> base_labels = voronoi_labels(mesh, seeds);

  // one 3-channel prototype per region, drawn once per dataset
  Tensor<float> proto({int64_t(k), 3});
  for (int64_t i = 0; i < proto.numel(); ++i) proto.data()[i] = float(master.normal());
  float spread[3];
  for (int c = 0; c < 3; ++c) {
    float lo = proto.at(0, c), hi = proto.at(0, c);
    for (int64_t r = 1; r < k; ++r) {
      lo = std::min(lo, proto.at(r, c));
      hi = std::max(hi, proto.at(r, c));
    }
    spread[c] = hi - lo;
  }

  Dataset ds;
  ds.task = Task::Parcellation;
  ds.level = level;
  ds.num_classes = k;
  ds.samples.resize(size_t(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = master.split("sample", uint64_t(i));
    Tensor<float> field({n, 3});
    for (int64_t v = 0; v < n; ++v)
      for (int64_t c = 0; c < 3; ++c)
        field.at(v, c) = proto.at(int64_t(base_labels[size_t(v)]), c);
    field = smooth_field(field, table, 10);
    for (int64_t v = 0; v < n; ++v)
      for (int64_t c = 0; c < 3; ++c)
        field.at(v, c) += float(rng.normal()) * 0.2f * spread[c];

    const size_t rot = size_t(rng.uniform_index(60));
    const auto& perm = cached_permutation(mesh, rot);

    Sample& s = ds.samples[size_t(i)];
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", i);
    s.id = id;
    s.features = permute_rows(field, perm);
    s.labels = permute_labels(base_labels, perm);
  }
  return ds;
}

Tensor<float> regression_target(const Tensor<float>& s, const Tensor<float>& t0,
                                const NeighborTable& table, Rng* noise_rng) {
  require(s.rank() == 2 && s.cols() == 1 && t0.rank() == 2 && t0.cols() == 1 &&
              s.rows() == t0.rows() && s.rows() == table.slots.rows,
          "regression_target: s and t0 must be N x 1 on the table's mesh");
  Tensor<float> nbr = smooth_field(t0, table, 1);
  const int64_t n = s.rows();
  Tensor<float> t1({n, 1});
  for (int64_t v = 0; v < n; ++v) {
    float val = t0.at(v, 0) + 0.5f * std::tanh(s.at(v, 0)) +
                0.1f * (nbr.at(v, 0) - t0.at(v, 0));
    if (noise_rng) val += float(noise_rng->normal()) * 0.05f;
    t1.at(v, 0) = std::max(val, 0.2f);
  }
  return t1;
}

Dataset synth_regression(int level, int n_samples, uint64_t seed) {
  require(level >= 0, "synth_regression: negative level");
  require(n_samples >= 1, "synth_regression: need at least one sample");
  const int64_t n = vertex_count(level);

  IcoSphere mesh = generate(level);
  NeighborTable table = build_dine_table(mesh);
  Rng master(seed);

  Dataset ds;
  ds.task = Task::Regression;
  ds.level = level;
  ds.samples.resize(size_t(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = master.split("sample", uint64_t(i));

    Tensor<float> s({n, 1});
    for (int64_t v = 0; v < n; ++v) s.at(v, 0) = float(rng.normal());
    s = smooth_field(s, table, 10);
    normalize_field(s);
    for (int64_t v = 0; v < n; ++v) s.at(v, 0) *= 2.0f;

    Tensor<float> t0({n, 1});
    for (int64_t v = 0; v < n; ++v) t0.at(v, 0) = float(rng.normal());
    t0 = smooth_field(t0, table, 10);
    normalize_field(t0);
    for (int64_t v = 0; v < n; ++v)
      t0.at(v, 0) = std::clamp(3.0f + 0.5f * t0.at(v, 0), 1.0f, 5.0f);

    Sample& smp = ds.samples[size_t(i)];
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", i);
    smp.id = id;
    smp.features = Tensor<float>({n, 2});
    for (int64_t v = 0; v < n; ++v) {
      smp.features.at(v, 0) = s.at(v, 0);
      smp.features.at(v, 1) = t0.at(v, 0);
    }
    smp.target = regression_target(s, t0, table, &rng);
  }
  return ds;
}

std::vector<std::vector<int>> make_folds(int n_samples, int n_folds) {
  require(n_samples >= 1, "make_folds: no samples");
  require(n_folds >= 1 && n_folds <= n_samples, "make_folds: need 1 <= folds <= samples");
  std::vector<std::vector<int>> folds(static_cast<size_t>(n_folds));
  const int base = n_samples / n_folds, extra = n_samples % n_folds;
  int at = 0;
  for (int f = 0; f < n_folds; ++f) {
    const int len = base + (f < extra ? 1 : 0);
    for (int j = 0; j < len; ++j) folds[size_t(f)].push_back(at++);
  }
  return folds;
}

void write_features(const std::string& path, const Tensor<float>& f) {
  require(f.rank() == 2, "write_features: rank-2 tensor required");
  std::ofstream os(path, std::ios::binary);
  if (!os) bad_file(path, "cannot open for writing");
  os.write("SFMP", 4);
  put_u32(os, 1);
  put_u32(os, uint32_t(f.rows()));
  put_u32(os, uint32_t(f.cols()));
  for (int64_t i = 0; i < f.numel(); ++i) put_f32(os, f.data()[i]);
  if (!os) bad_file(path, "write failed");
}

Tensor<float> read_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) bad_file(path, "cannot open");
  char magic[4];
  if (!is.read(magic, 4)) bad_file(path, "truncated");
  if (std::memcmp(magic, "SFMP", 4) != 0) bad_file(path, "bad magic, expected SFMP");
  const uint32_t version = get_u32(is, path);
  if (version != 1) bad_file(path, "unsupported version " + std::to_string(version));
  const uint32_t n = get_u32(is, path);
  const uint32_t c = get_u32(is, path);
  if (n == 0 || c == 0) bad_file(path, "empty dimensions");
  Tensor<float> f({int64_t(n), int64_t(c)});
  for (int64_t i = 0; i < f.numel(); ++i) f.data()[i] = get_f32(is, path);
  return f;
}

void write_labels(const std::string& path, const std::vector<int32_t>& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) bad_file(path, "cannot open for writing");
  os.write("SLBL", 4);
  put_u32(os, uint32_t(labels.size()));
  for (int32_t l : labels) {
    if (l < 0) throw UsageError("write_labels: negative label");
    put_u32(os, uint32_t(l));
  }
  if (!os) bad_file(path, "write failed");
}

std::vector<int32_t> read_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) bad_file(path, "cannot open");
  char magic[4];
  if (!is.read(magic, 4)) bad_file(path, "truncated");
  if (std::memcmp(magic, "SLBL", 4) != 0) bad_file(path, "bad magic, expected SLBL");
  const uint32_t n = get_u32(is, path);
  std::vector<int32_t> labels(n);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t v = get_u32(is, path);
    if (v > uint32_t(INT32_MAX)) bad_file(path, "label out of range");
    labels[i] = int32_t(v);
  }
  return labels;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  require(!ds.samples.empty(), "save_dataset: empty dataset");
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "sunet-dataset";
  manifest["version"] = 1;
  manifest["task"] = task_name(ds.task);
  manifest["level"] = ds.level;
  if (ds.task == Task::Parcellation) manifest["classes"] = ds.num_classes;
  manifest["folds"] = ds.folds;

  nlohmann::json entries = nlohmann::json::array();
  for (const Sample& s : ds.samples) {
    nlohmann::json e;
    e["id"] = s.id;
    const std::string feat = s.id + ".sfmp";
    write_features((fs::path(dir) / feat).string(), s.features);
    e["features"] = feat;
    if (ds.task == Task::Parcellation) {
      const std::string lbl = s.id + ".slbl";
      write_labels((fs::path(dir) / lbl).string(), s.labels);
      e["labels"] = lbl;
    } else {
      const std::string tgt = s.id + "_target.sfmp";
      write_features((fs::path(dir) / tgt).string(), s.target);
      e["target"] = tgt;
    }
    entries.push_back(e);
  }
  manifest["samples"] = entries;

  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  std::ofstream os(mpath, std::ios::binary);
  if (!os) bad_file(mpath, "cannot open for writing");
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  std::ifstream is(mpath, std::ios::binary);
  if (!is) bad_file(mpath, "cannot open");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    bad_file(mpath, std::string("invalid JSON: ") + e.what());
  }

  Dataset ds;
  try {
    if (manifest.at("format") != "sunet-dataset") bad_file(mpath, "not a dataset manifest");
    ds.task = parse_task(manifest.at("task").get<std::string>());
    ds.level = manifest.at("level").get<int>();
    if (ds.task == Task::Parcellation) ds.num_classes = manifest.at("classes").get<int>();
    ds.folds = manifest.at("folds").get<std::vector<std::vector<int>>>();

    const int64_t n = vertex_count(ds.level);
    int64_t channels = -1;
    for (const auto& e : manifest.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::string>();
      const std::string feat = (fs::path(dir) / e.at("features").get<std::string>()).string();
      if (!fs::exists(feat)) bad_file(mpath, "manifest references missing file: " + feat);
      s.features = read_features(feat);
      if (s.features.rows() != n)
        bad_file(feat, "vertex count does not match level " + std::to_string(ds.level));
      if (channels < 0) channels = s.features.cols();
      if (s.features.cols() != channels) bad_file(feat, "inconsistent channel count");

      if (ds.task == Task::Parcellation) {
        const std::string lbl = (fs::path(dir) / e.at("labels").get<std::string>()).string();
        if (!fs::exists(lbl)) bad_file(mpath, "manifest references missing file: " + lbl);
        s.labels = read_labels(lbl);
        if (int64_t(s.labels.size()) != n) bad_file(lbl, "vertex count mismatch");
        for (int32_t l : s.labels)
          if (l >= ds.num_classes) bad_file(lbl, "label outside the declared class range");
      } else {
        const std::string tgt = (fs::path(dir) / e.at("target").get<std::string>()).string();
        if (!fs::exists(tgt)) bad_file(mpath, "manifest references missing file: " + tgt);
        s.target = read_features(tgt);
        if (s.target.rows() != n || s.target.cols() != 1)
          bad_file(tgt, "target must be N x 1");
      }
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    bad_file(mpath, std::string("manifest field error: ") + e.what());
  }

  // folds must partition the samples
  std::vector<int> hit(ds.samples.size(), 0);
  for (const auto& fold : ds.folds)
    for (int idx : fold) {
      if (idx < 0 || size_t(idx) >= ds.samples.size())
        bad_file(mpath, "fold entry " + std::to_string(idx) + " out of range");
      ++hit[size_t(idx)];
    }
  for (size_t i = 0; i < hit.size(); ++i)
    if (hit[i] != 1)
      bad_file(mpath, "folds do not partition the samples (index " + std::to_string(i) +
                          " appears " + std::to_string(hit[i]) + " times)");
  return ds;
}

void export_vtk(const IcoSphere& mesh,
                const std::vector<std::pair<std::string, std::vector<float>>>& scalars,
                const std::vector<std::pair<std::string, std::vector<int32_t>>>& labels,
                const std::string& path) {
  const int64_t n = mesh.num_vertices();
  for (const auto& [name, v] : scalars)
    require(int64_t(v.size()) == n, "export_vtk: scalar array '" + name + "' length mismatch");
  for (const auto& [name, v] : labels)
    require(int64_t(v.size()) == n, "export_vtk: label array '" + name + "' length mismatch");

  std::ofstream os(path, std::ios::binary);
  if (!os) bad_file(path, "cannot open for writing");
  char buf[128];
  os << "# vtk DataFile Version 3.0\n";
  os << "spherical surface\n";
  os << "ASCII\n";
  os << "DATASET POLYDATA\n";
  os << "POINTS " << n << " float\n";
  for (int64_t v = 0; v < n; ++v) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", float(mesh.vertices.at(v, 0)),
                  float(mesh.vertices.at(v, 1)), float(mesh.vertices.at(v, 2)));
    os << buf;
  }
  const int64_t t = mesh.num_triangles();
  os << "POLYGONS " << t << " " << 4 * t << "\n";
  for (int64_t f = 0; f < t; ++f)
    os << "3 " << mesh.triangles.at(f, 0) << " " << mesh.triangles.at(f, 1) << " "
       << mesh.triangles.at(f, 2) << "\n";

  if (!scalars.empty() || !labels.empty()) {
    os << "POINT_DATA " << n << "\n";
    for (const auto& [name, v] : scalars) {
      os << "SCALARS " << name << " float 1\nLOOKUP_TABLE default\n";
      for (float x : v) {
        std::snprintf(buf, sizeof buf, "%.9g\n", x);
        os << buf;
      }
    }
    for (const auto& [name, v] : labels) {
      os << "SCALARS " << name << " int 1\nLOOKUP_TABLE default\n";
      for (int32_t x : v) os << x << "\n";
    }
  }
  if (!os) bad_file(path, "write failed");
}

VtkData read_vtk(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) bad_file(path, "cannot open");

  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) bad_file(path, std::string("truncated before ") + what);
    return line;
  };
  if (next_line("header").rfind("# vtk DataFile Version", 0) != 0)
    bad_file(path, "missing VTK header");
  next_line("title");
  if (next_line("format") != "ASCII") bad_file(path, "only ASCII files are supported");
  if (next_line("dataset") != "DATASET POLYDATA") bad_file(path, "not a POLYDATA dataset");

  VtkData out;
  std::string kw;
  int64_t n = 0;
  {
    std::istringstream ls(next_line("POINTS"));
    std::string type;
    if (!(ls >> kw >> n >> type) || kw != "POINTS") bad_file(path, "expected POINTS");
  }
  out.points = Tensor<double>({n, 3});
  for (int64_t i = 0; i < 3 * n; ++i)
    if (!(is >> out.points.data()[i])) bad_file(path, "truncated point list");

  int64_t t = 0, total = 0;
  if (!(is >> kw >> t >> total) || kw != "POLYGONS") bad_file(path, "expected POLYGONS");
  if (total != 4 * t) bad_file(path, "only triangle polygons are supported");
  out.polygons = IndexMatrix(t, 3);
  for (int64_t f = 0; f < t; ++f) {
    int64_t arity;
    if (!(is >> arity) || arity != 3) bad_file(path, "only triangle polygons are supported");
    for (int64_t j = 0; j < 3; ++j) {
      int64_t v;
      if (!(is >> v) || v < 0 || v >= n) bad_file(path, "polygon vertex out of range");
      out.polygons.at(f, j) = uint32_t(v);
    }
  }

  if (is >> kw) {
    int64_t pn = 0;
    if (kw != "POINT_DATA" || !(is >> pn) || pn != n) bad_file(path, "expected POINT_DATA");
    while (is >> kw) {
      std::string name, type;
      int comps = 0;
      if (kw != "SCALARS" || !(is >> name >> type >> comps) || comps != 1)
        bad_file(path, "expected a single-component SCALARS block");
      std::string lut, lut_name;
      if (!(is >> lut >> lut_name) || lut != "LOOKUP_TABLE")
        bad_file(path, "expected LOOKUP_TABLE");
      if (type == "float") {
        std::vector<float> vals(static_cast<size_t>(n));
        for (auto& v : vals)
          if (!(is >> v)) bad_file(path, "truncated scalar block " + name);
        out.scalars.emplace_back(name, std::move(vals));
      } else if (type == "int") {
        std::vector<int32_t> vals(static_cast<size_t>(n));
        for (auto& v : vals)
          if (!(is >> v)) bad_file(path, "truncated scalar block " + name);
        out.labels.emplace_back(name, std::move(vals));
      } else {
        bad_file(path, "unsupported scalar type " + type);
      }
    }
  }
  return out;
}

}  // namespace sunet
