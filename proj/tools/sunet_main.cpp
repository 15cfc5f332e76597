// sunet: one binary driving every stage of the pipeline — mesh generation,
// neighbor tables, synthetic data, training, evaluation, layer benchmarks,
// and VTK export.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sunet/checkpoint.hpp"
#include "sunet/dataio.hpp"
#include "sunet/errors.hpp"
#include "sunet/icosphere.hpp"
#include "sunet/layers.hpp"
#include "sunet/models.hpp"
#include "sunet/neighborhood.hpp"
#include "sunet/parallel.hpp"
#include "sunet/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sunet;

namespace {

// ---- config-file overlay ----------------------------------------------------
//
// A JSON object whose keys are flag names (no dashes). Keys fill in values
// the command line did not set explicitly; explicit flags always win;
// unknown keys are rejected.
struct Overlay {
  std::map<std::string, std::function<void(const json&)>> setters;

  template <typename T>
  void bind(CLI::Option* opt, const std::string& key, T* target) {
    setters[key] = [opt, target](const json& v) {
      if (opt->count() == 0) *target = v.get<T>();
    };
  }

  void apply(const json& cfg, const std::string& path) const {
    if (!cfg.is_object()) throw DataFormatError(path + ": config must be a JSON object");
    for (const auto& [k, v] : cfg.items()) {
      auto it = setters.find(k);
      if (it == setters.end()) throw UsageError("unknown config key: " + k);
      try {
        it->second(v);
      } catch (const json::exception& e) {
        throw DataFormatError(path + ": bad value for '" + k + "': " + e.what());
      }
    }
  }
};

json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataFormatError(path + ": cannot open");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataFormatError(path + ": invalid JSON: " + e.what());
  }
  return j;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  size_t at = 0;
  while (at < text.size()) {
    size_t comma = text.find(',', at);
    if (comma == std::string::npos) comma = text.size();
    const std::string tok = text.substr(at, comma - at);
    try {
      size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad integer list entry: '" + tok + "'");
    }
    at = comma + 1;
  }
  return out;
}

std::vector<int> fold_samples(const Dataset& ds, const std::vector<int>& folds) {
  std::vector<int> idx;
  for (int f : folds) {
    if (f < 0 || size_t(f) >= ds.folds.size())
      throw UsageError("fold " + std::to_string(f) + " out of range (dataset has " +
                       std::to_string(ds.folds.size()) + ")");
    idx.insert(idx.end(), ds.folds[size_t(f)].begin(), ds.folds[size_t(f)].end());
  }
  return idx;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataFormatError(dir + ": cannot create directory");
}

void check_model_data(const Model<float>& model, const Dataset& ds) {
  const int64_t model_n = model.hier->meshes[size_t(model.spec.top_level)].num_vertices();
  if (model_n != vertex_count(ds.level))
    throw UsageError("model operates on " + std::to_string(model_n) + " vertices, dataset level " +
                     std::to_string(ds.level) + " has " + std::to_string(vertex_count(ds.level)));
  const int in_ch = int(ds.samples.at(0).features.cols());
  if (model.spec.in_channels != in_ch)
    throw UsageError("model expects " + std::to_string(model.spec.in_channels) +
                     " input channels, dataset provides " + std::to_string(in_ch));
  if (ds.task == Task::Parcellation && model.spec.out_channels != ds.num_classes)
    throw UsageError("model emits " + std::to_string(model.spec.out_channels) +
                     " classes, dataset declares " + std::to_string(ds.num_classes));
  if (ds.task == Task::Regression && model.spec.out_channels != 1)
    throw UsageError("regression needs a single output channel");
}

// ---- subcommand state ---------------------------------------------------

struct GlobalFlags {
  uint64_t seed = 0;
  int threads = 1;
  std::string config;
};

struct IcosphereCmd {
  int level = 0;
  std::string out, vtk;
};

struct NeighborsCmd {
  int level = 1;
  std::string out;
};

struct DataCmd {
  std::string task = "parcellation";
  int level = 3;
  int n = 10;
  int classes = 36;
  int folds = 0;  // 0 = task default (3 parcellation / 5 regression)
  std::string out;
};

struct TrainCmd {
  std::string task = "parcellation";
  std::string data, out;
  std::string model = "unet";
  int channels = 64;
  int steps = 0;
  std::string pooling = "mean";
  std::string optimizer, schedule;  // empty = task default
  double lr = -1.0, momentum = -1.0, wd = -1.0, factor = -1.0;
  int patience = -1, every = -1, epochs = -1, batch = -1;
  bool augment = false;
  std::string train_folds, val_folds;
};

struct EvalCmd {
  std::string checkpoint, data, folds, vtk, out;
};

struct BenchCmd {
  std::string op;
  int level = 5;
  int in_ch = 64;
  int out_ch = 64;
  int iters = 30;
  std::string csv;
};

struct ExportVtkCmd {
  std::string mesh, out;
  std::vector<std::string> scalars, labels;
};

// ---- handlers -------------------------------------------------------------

void run_icosphere(const IcosphereCmd& c) {
  if (c.level < 0) throw UsageError("icosphere: level must be non-negative");
  if (c.out.empty() && c.vtk.empty())
    throw UsageError("icosphere: pass --out and/or --vtk");
  IcoSphere mesh = generate(c.level);
  if (!c.out.empty()) {
    save_mesh(mesh, c.out);
    std::printf("level %d: %lld vertices, %lld triangles -> %s\n", c.level,
                (long long)mesh.num_vertices(), (long long)mesh.num_triangles(), c.out.c_str());
  }
  if (!c.vtk.empty()) {
    export_vtk(mesh, {}, {}, c.vtk);
    std::printf("level %d mesh -> %s\n", c.level, c.vtk.c_str());
  }
}

void run_neighbors(const NeighborsCmd& c) {
  if (c.level < 0) throw UsageError("neighbors: level must be non-negative");
  if (c.out.empty()) throw UsageError("neighbors: --out is required");
  IcoSphere mesh = generate(c.level);
  NeighborTable table = build_dine_table(mesh);
  save_dine_table(table, c.out);
  int64_t pentagons = 0;
  for (uint8_t p : table.pentagon) pentagons += p;
  std::printf("level %d: %lld rows, %lld pentagons -> %s\n", c.level,
              (long long)table.slots.rows, (long long)pentagons, c.out.c_str());
}

void run_data(const DataCmd& c, uint64_t seed) {
  if (c.out.empty()) throw UsageError("data synth: --out is required");
  if (c.n < 1) throw UsageError("data synth: need at least one sample");
  const Task task = parse_task(c.task);
  Dataset ds = task == Task::Parcellation ? synth_parcellation(c.level, c.classes, c.n, seed)
                                          : synth_regression(c.level, c.n, seed);
  int folds = c.folds;
  if (folds == 0) folds = task == Task::Parcellation ? 3 : 5;
  ds.folds = make_folds(c.n, folds);
  save_dataset(ds, c.out);
  std::printf("wrote %s: task=%s level=%d n=%d%s folds=%d\n", c.out.c_str(), c.task.c_str(),
              c.level, c.n,
              task == Task::Parcellation ? (" k=" + std::to_string(c.classes)).c_str() : "",
              folds);
}

void run_train(const TrainCmd& c, uint64_t seed) {
  if (c.data.empty()) throw UsageError("train: --data is required");
  if (c.out.empty()) throw UsageError("train: --out is required");
  Dataset ds = load_dataset(c.data);
  const Task task = parse_task(c.task);
  if (task != ds.task) throw UsageError("train: --task disagrees with the dataset manifest");

  TrainConfig cfg = TrainConfig::defaults(task);
  cfg.seed = seed;
  cfg.augment = c.augment;
  if (!c.optimizer.empty()) cfg.optimizer = parse_optimizer(c.optimizer);
  if (!c.schedule.empty()) cfg.schedule = parse_schedule(c.schedule);
  if (c.lr >= 0) cfg.lr = c.lr;
  if (c.momentum >= 0) cfg.momentum = c.momentum;
  if (c.wd >= 0) cfg.weight_decay = c.wd;
  if (c.factor >= 0) cfg.factor = c.factor;
  if (c.patience >= 0) cfg.patience = c.patience;
  if (c.every >= 0) cfg.every = c.every;
  if (c.epochs >= 0) cfg.epochs = c.epochs;
  if (c.batch >= 0) cfg.batch = c.batch;
  cfg.pooling = parse_pool_mode(c.pooling);
  cfg.validate();

  ModelSpec spec;
  spec.variant = parse_variant(c.model);
  spec.top_level = ds.level;
  spec.base_channels = c.channels;
  spec.steps = c.steps;
  spec.pooling = cfg.pooling;
  spec.in_channels = int(ds.samples.at(0).features.cols());
  spec.out_channels = ds.task == Task::Parcellation ? ds.num_classes : 1;

  auto hier = Hierarchy::build(ds.level, spec.variant == Variant::Unet18Repa);
  Rng init_rng(seed);
  Model<float> model = build_model<float>(spec, hier, init_rng);
  check_model_data(model, ds);

  std::vector<int> train_idx, val_idx;
  if (!c.train_folds.empty()) {
    train_idx = fold_samples(ds, parse_int_list(c.train_folds));
  } else {
    // default: every fold but the last
    std::vector<int> f;
    for (size_t i = 0; i + 1 < ds.folds.size(); ++i) f.push_back(int(i));
    if (f.empty()) f.push_back(0);
    train_idx = fold_samples(ds, f);
  }
  if (!c.val_folds.empty()) val_idx = fold_samples(ds, parse_int_list(c.val_folds));

  TrainResult res = train(model, ds, train_idx, val_idx, cfg);

  ensure_dir(c.out);
  {
    std::ofstream log(fs::path(c.out) / "log.jsonl", std::ios::trunc);
    for (const std::string& line : res.log_lines) {
      log << line << "\n";
      std::printf("%s\n", line.c_str());
    }
  }
  save_checkpoint(model, (fs::path(c.out) / "model.sunw").string());
  const std::string report = metric_report_json(res.report);
  {
    std::ofstream rep(fs::path(c.out) / "report.json", std::ios::trunc);
    rep << report << "\n";
  }
  std::printf("best epoch %d; %s\n", res.best_epoch, report.c_str());
}

void run_eval(const EvalCmd& c) {
  if (c.checkpoint.empty()) throw UsageError("eval: --checkpoint is required");
  if (c.data.empty()) throw UsageError("eval: --data is required");
  Dataset ds = load_dataset(c.data);
  Model<float> model = load_checkpoint(c.checkpoint);
  check_model_data(model, ds);

  std::vector<int> idx;
  if (!c.folds.empty()) {
    idx = fold_samples(ds, parse_int_list(c.folds));
  } else {
    for (size_t i = 0; i < ds.samples.size(); ++i) idx.push_back(int(i));
  }

  MetricReport rep = evaluate(model, ds, idx);
  const std::string report = metric_report_json(rep);
  std::printf("%s\n", report.c_str());
  if (!c.out.empty()) {
    std::ofstream os(c.out, std::ios::trunc);
    if (!os) throw DataFormatError(c.out + ": cannot open for writing");
    os << report << "\n";
  }

  if (!c.vtk.empty()) {
    ensure_dir(c.vtk);
    const IcoSphere& mesh = model.hier->meshes[size_t(model.spec.top_level)];
    for (int i : idx) {
      const Sample& s = ds.samples[size_t(i)];
      Tensor<float> pred = forward_eval(model, s);
      std::vector<std::pair<std::string, std::vector<float>>> scalars;
      std::vector<std::pair<std::string, std::vector<int32_t>>> labels;
      if (ds.task == Task::Parcellation) {
        std::vector<int32_t> hard = argmax_rows(pred);
        std::vector<float> mismatch(hard.size());
        for (size_t v = 0; v < hard.size(); ++v)
          mismatch[v] = hard[v] == s.labels[v] ? 0.0f : 1.0f;
        labels.push_back({"pred", std::move(hard)});
        labels.push_back({"truth", s.labels});
        scalars.push_back({"mismatch", std::move(mismatch)});
      } else {
        std::vector<float> phat(size_t(pred.rows())), truth(size_t(pred.rows())),
            err(size_t(pred.rows()));
        for (int64_t v = 0; v < pred.rows(); ++v) {
          phat[size_t(v)] = pred.at(v, 0);
          truth[size_t(v)] = s.target.at(v, 0);
          err[size_t(v)] = std::abs(phat[size_t(v)] - truth[size_t(v)]);
        }
        scalars.push_back({"pred", std::move(phat)});
        scalars.push_back({"truth", std::move(truth)});
        scalars.push_back({"abs_error", std::move(err)});
      }
      export_vtk(mesh, scalars, labels, (fs::path(c.vtk) / (s.id + ".vtk")).string());
    }
    std::printf("wrote %zu vtk files to %s\n", idx.size(), c.vtk.c_str());
  }
}

void run_bench(const BenchCmd& c, uint64_t seed) {
  if (c.op != "dine" && c.op != "repa")
    throw UsageError("bench: --op must be 'dine' or 'repa'");
  if (c.iters < 1) throw UsageError("bench: need at least one iteration");
  if (c.level < 0) throw UsageError("bench: level must be non-negative");
  if (c.in_ch < 1 || c.out_ch < 1) throw UsageError("bench: channel counts must be positive");

  IcoSphere mesh = generate(c.level);
  const int64_t n = mesh.num_vertices();
  Rng rng(seed);

  NeighborTable table;
  RePaSampler sampler;
  Tensor<float> interp;
  int64_t win = 7;
  if (c.op == "dine") {
    table = build_dine_table(mesh);
  } else {
    sampler = build_repa_sampler(mesh, 3, 3, mean_edge_arc(mesh));
    win = int64_t(sampler.rows) * sampler.cols;
    interp = Tensor<float>({sampler.weights.rows(), sampler.weights.cols()});
    for (int64_t i = 0; i < interp.numel(); ++i)
      interp.data()[i] = float(sampler.weights.data()[i]);
  }

  Value<float> w = Value<float>::leaf(xavier_uniform<float>(win * c.in_ch, c.out_ch, rng));
  Value<float> b = Value<float>::leaf(Tensor<float>::zeros({1, c.out_ch}));
  Value<float> x = Value<float>::leaf(Tensor<float>::normal({n, c.in_ch}, rng));

  auto forward = [&]() -> Value<float> {
    if (c.op == "dine") return dine_conv_rows(x, w, b, table.slots);
    return repa_conv_rows(x, w, b, sampler.anchors, interp, win);
  };

  for (int i = 0; i < 3; ++i) forward();  // warmup

  workset::reset_peak();
  forward();
  const int64_t workset_bytes = workset::peak_bytes();

  std::vector<double> ms(size_t(c.iters));
  for (int i = 0; i < c.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Value<float> out = forward();
    const auto t1 = std::chrono::steady_clock::now();
    ms[size_t(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());
  const double median = c.iters % 2 ? ms[size_t(c.iters / 2)]
                                    : 0.5 * (ms[size_t(c.iters / 2 - 1)] + ms[size_t(c.iters / 2)]);
  const double verts_per_s = double(n) / (median * 1e-3);

  std::printf("%s level=%d n=%lld in=%d out=%d iters=%d median=%.3f ms  %.3g vertices/s  workset=%lld bytes\n",
              c.op.c_str(), c.level, (long long)n, c.in_ch, c.out_ch, c.iters, median,
              verts_per_s, (long long)workset_bytes);

  if (!c.csv.empty()) {
    std::ofstream os(c.csv, std::ios::trunc);
    if (!os) throw DataFormatError(c.csv + ": cannot open for writing");
    os << "op,level,vertices,in_channels,out_channels,iterations,median_ms,vertices_per_s,"
          "workset_bytes\n";
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%d,%lld,%d,%d,%d,%.6f,%.6g,%lld\n", c.op.c_str(), c.level,
                  (long long)n, c.in_ch, c.out_ch, c.iters, median, verts_per_s,
                  (long long)workset_bytes);
    os << row;
  }
}

void run_export_vtk(const ExportVtkCmd& c) {
  if (c.mesh.empty()) throw UsageError("export vtk: --mesh is required");
  if (c.out.empty()) throw UsageError("export vtk: --out is required");
  IcoSphere mesh = load_mesh(c.mesh);

  std::vector<std::pair<std::string, std::vector<float>>> scalars;
  for (const std::string& path : c.scalars) {
    Tensor<float> f = read_features(path);
    if (f.rows() != mesh.num_vertices())
      throw UsageError(path + ": " + std::to_string(f.rows()) + " rows for a mesh of " +
                       std::to_string(mesh.num_vertices()) + " vertices");
    const std::string stem = fs::path(path).stem().string();
    for (int64_t ch = 0; ch < f.cols(); ++ch) {
      std::vector<float> col(size_t(f.rows()));
      for (int64_t v = 0; v < f.rows(); ++v) col[size_t(v)] = f.at(v, ch);
      scalars.push_back({f.cols() == 1 ? stem : stem + "_c" + std::to_string(ch), std::move(col)});
    }
  }
  std::vector<std::pair<std::string, std::vector<int32_t>>> labels;
  for (const std::string& path : c.labels) {
    std::vector<int32_t> l = read_labels(path);
    if (int64_t(l.size()) != mesh.num_vertices())
      throw UsageError(path + ": " + std::to_string(l.size()) + " labels for a mesh of " +
                       std::to_string(mesh.num_vertices()) + " vertices");
    labels.push_back({fs::path(path).stem().string(), std::move(l)});
  }

  export_vtk(mesh, scalars, labels, c.out);
  std::printf("wrote %s (%lld points, %zu scalar + %zu label arrays)\n", c.out.c_str(),
              (long long)mesh.num_vertices(), scalars.size(), labels.size());
}

int run(int argc, char** argv) {
  CLI::App app{"spherical surface networks: meshes, data, training, evaluation"};
  app.require_subcommand(1);

  GlobalFlags g;
  auto* seed_opt = app.add_option("--seed", g.seed, "master random seed");
  auto* threads_opt = app.add_option("--threads", g.threads, "worker thread cap");
  app.add_option("--config", g.config, "JSON file of flag-name keys filling unset flags");

  std::map<const CLI::App*, Overlay> overlays;
  const auto global_binds = [&](CLI::App* cmd) -> Overlay& {
    Overlay& o = overlays[cmd];
    o.bind(seed_opt, "seed", &g.seed);
    o.bind(threads_opt, "threads", &g.threads);
    return o;
  };

  IcosphereCmd ico;
  CLI::App* ico_cmd = app.add_subcommand("icosphere", "generate a subdivided icosahedron mesh");
  ico_cmd->fallthrough();
  {
    Overlay& o = global_binds(ico_cmd);
    o.bind(ico_cmd->add_option("--level", ico.level, "subdivision level"), "level",
           &ico.level);
    o.bind(ico_cmd->add_option("--out", ico.out, "mesh file to write"), "out", &ico.out);
    o.bind(ico_cmd->add_option("--vtk", ico.vtk, "also write an ASCII VTK copy"), "vtk", &ico.vtk);
  }

  NeighborsCmd nbr;
  CLI::App* nbr_cmd = app.add_subcommand("neighbors", "build and dump a 7-slot neighbor table");
  nbr_cmd->fallthrough();
  {
    Overlay& o = global_binds(nbr_cmd);
    o.bind(nbr_cmd->add_option("--level", nbr.level, "subdivision level"), "level",
           &nbr.level);
    o.bind(nbr_cmd->add_option("--out", nbr.out, "table file to write"), "out",
           &nbr.out);
  }

  DataCmd data;
  CLI::App* data_cmd = app.add_subcommand("data", "synthetic dataset generation");
  data_cmd->fallthrough();
  CLI::App* synth_cmd = data_cmd->add_subcommand("synth", "generate a dataset directory");
  synth_cmd->fallthrough();
  data_cmd->require_subcommand(1);
  {
    Overlay& o = global_binds(synth_cmd);
    o.bind(synth_cmd->add_option("--task", data.task, "parcellation or regression"), "task",
           &data.task);
    o.bind(synth_cmd->add_option("--level", data.level, "mesh level"), "level", &data.level);
    o.bind(synth_cmd->add_option("--n", data.n, "number of samples"), "n", &data.n);
    o.bind(synth_cmd->add_option("--classes", data.classes, "region count (parcellation)"),
           "classes", &data.classes);
    o.bind(synth_cmd->add_option("--folds", data.folds, "fold count (0 = task default)"), "folds",
           &data.folds);
    o.bind(synth_cmd->add_option("--out", data.out, "dataset directory"), "out",
           &data.out);
  }

  TrainCmd tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a network on a dataset directory");
  train_cmd->fallthrough();
  {
    Overlay& o = global_binds(train_cmd);
    o.bind(train_cmd->add_option("--task", tr.task, "parcellation or regression"), "task",
           &tr.task);
    o.bind(train_cmd->add_option("--data", tr.data, "dataset directory"), "data",
           &tr.data);
    o.bind(train_cmd->add_option("--out", tr.out, "output directory"), "out", &tr.out);
    o.bind(train_cmd->add_option("--model", tr.model,
                                 "unet | unet18_dine | unet18_repa | naive_dine | segnet_basic | "
                                 "segnet_inter"),
           "model", &tr.model);
    o.bind(train_cmd->add_option("--channels", tr.channels, "channels of the finest step"),
           "channels", &tr.channels);
    o.bind(train_cmd->add_option("--steps", tr.steps,
                                 "resolution steps (0 = variant default; shallow meshes need "
                                 "fewer)"),
           "steps", &tr.steps);
    o.bind(train_cmd->add_option("--pooling", tr.pooling, "mean or max"), "pooling", &tr.pooling);
    o.bind(train_cmd->add_option("--optimizer", tr.optimizer, "sgd or adam"), "optimizer",
           &tr.optimizer);
    o.bind(train_cmd->add_option("--schedule", tr.schedule, "plateau or step"), "schedule",
           &tr.schedule);
    o.bind(train_cmd->add_option("--lr", tr.lr, "initial learning rate"), "lr", &tr.lr);
    o.bind(train_cmd->add_option("--momentum", tr.momentum, "sgd momentum"), "momentum",
           &tr.momentum);
    o.bind(train_cmd->add_option("--wd", tr.wd, "weight decay"), "wd", &tr.wd);
    o.bind(train_cmd->add_option("--factor", tr.factor, "schedule divisor"), "factor", &tr.factor);
    o.bind(train_cmd->add_option("--patience", tr.patience, "plateau patience"), "patience",
           &tr.patience);
    o.bind(train_cmd->add_option("--every", tr.every, "step schedule interval"), "every",
           &tr.every);
    o.bind(train_cmd->add_option("--epochs", tr.epochs, "epoch count"), "epochs", &tr.epochs);
    o.bind(train_cmd->add_option("--batch", tr.batch, "surfaces per step"), "batch", &tr.batch);
    o.bind(train_cmd->add_flag("--augment", tr.augment, "random icosahedral rotations"), "augment",
           &tr.augment);
    o.bind(train_cmd->add_option("--train-folds", tr.train_folds,
                                 "comma list of training fold indices (default: all but last)"),
           "train-folds", &tr.train_folds);
    o.bind(train_cmd->add_option("--val-folds", tr.val_folds, "comma list of validation folds"),
           "val-folds", &tr.val_folds);
  }

  EvalCmd ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->fallthrough();
  {
    Overlay& o = global_binds(eval_cmd);
    o.bind(eval_cmd->add_option("--checkpoint", ev.checkpoint, "weight file"),
           "checkpoint", &ev.checkpoint);
    o.bind(eval_cmd->add_option("--data", ev.data, "dataset directory"), "data",
           &ev.data);
    o.bind(eval_cmd->add_option("--folds", ev.folds, "comma list of folds (default: all samples)"),
           "folds", &ev.folds);
    o.bind(eval_cmd->add_option("--vtk", ev.vtk, "directory for per-subject VTK dumps"), "vtk",
           &ev.vtk);
    o.bind(eval_cmd->add_option("--out", ev.out, "also write the report JSON here"), "out",
           &ev.out);
  }

  BenchCmd bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "time one convolution layer's forward pass");
  bench_cmd->fallthrough();
  {
    Overlay& o = global_binds(bench_cmd);
    o.bind(bench_cmd->add_option("--op", bench.op, "dine or repa"), "op", &bench.op);
    o.bind(bench_cmd->add_option("--level", bench.level, "mesh level"), "level", &bench.level);
    o.bind(bench_cmd->add_option("--in", bench.in_ch, "input channels"), "in", &bench.in_ch);
    o.bind(bench_cmd->add_option("--out", bench.out_ch, "output channels"), "out", &bench.out_ch);
    o.bind(bench_cmd->add_option("--iters", bench.iters, "timed iterations"), "iters",
           &bench.iters);
    o.bind(bench_cmd->add_option("--csv", bench.csv, "write one CSV row here"), "csv", &bench.csv);
  }

  ExportVtkCmd ex;
  CLI::App* export_cmd = app.add_subcommand("export", "convert artifacts for external viewers");
  export_cmd->fallthrough();
  CLI::App* vtk_cmd = export_cmd->add_subcommand("vtk", "mesh plus per-vertex arrays to ASCII VTK");
  vtk_cmd->fallthrough();
  export_cmd->require_subcommand(1);
  {
    Overlay& o = global_binds(vtk_cmd);
    o.bind(vtk_cmd->add_option("--mesh", ex.mesh, "mesh file"), "mesh", &ex.mesh);
    o.bind(vtk_cmd->add_option("--scalars", ex.scalars, "feature files (repeatable)"), "scalars",
           &ex.scalars);
    o.bind(vtk_cmd->add_option("--labels", ex.labels, "label files (repeatable)"), "labels",
           &ex.labels);
    o.bind(vtk_cmd->add_option("--out", ex.out, "VTK file to write"), "out", &ex.out);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (!g.config.empty()) {
    const json cfg = load_config(g.config);
    CLI::App* active = nullptr;
    for (CLI::App* sub : {ico_cmd, nbr_cmd, synth_cmd, train_cmd, eval_cmd, bench_cmd, vtk_cmd})
      if (sub->parsed()) active = sub;
    if (active) overlays.at(active).apply(cfg, g.config);
  }

  if (g.threads < 1) throw UsageError("--threads must be at least 1");
  set_thread_count(g.threads);

  if (ico_cmd->parsed()) run_icosphere(ico);
  if (nbr_cmd->parsed()) run_neighbors(nbr);
  if (synth_cmd->parsed()) run_data(data, g.seed);
  if (train_cmd->parsed()) run_train(tr, g.seed);
  if (eval_cmd->parsed()) run_eval(ev);
  if (bench_cmd->parsed()) run_bench(bench, g.seed);
  if (vtk_cmd->parsed()) run_export_vtk(ex);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataFormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}
