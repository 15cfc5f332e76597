#include "sunet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <utility>

#include "json.hpp"
#include "sunet/errors.hpp"
#include "sunet/symmetry.hpp"

namespace sunet {

namespace {

using json = nlohmann::json;

void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

}  // namespace

std::string optimizer_name(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw UsageError("unknown optimizer: " + name);
}

std::string schedule_name(Schedule s) { return s == Schedule::Plateau ? "plateau" : "step"; }

Schedule parse_schedule(const std::string& name) {
  if (name == "plateau") return Schedule::Plateau;
  if (name == "step") return Schedule::Step;
  throw UsageError("unknown schedule: " + name);
}

void TrainConfig::validate() const {
  require(lr > 0.0, "train config: lr must be positive");
  require(factor > 1.0, "train config: schedule factor must exceed 1");
  require(patience >= 1, "train config: plateau patience must be at least 1");
  require(every >= 1, "train config: step interval must be at least 1");
  require(epochs >= 1, "train config: need at least one epoch");
  require(batch >= 1, "train config: batch size must be at least 1");
  require(momentum >= 0.0 && momentum < 1.0, "train config: momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, "train config: weight decay must be non-negative");
}

TrainConfig TrainConfig::defaults(Task task) {
  TrainConfig cfg;
  cfg.task = task;
  if (task == Task::Parcellation) {
    cfg.optimizer = Optimizer::Sgd;
    cfg.lr = 0.1;
    cfg.momentum = 0.99;
    cfg.weight_decay = 1e-4;
    cfg.schedule = Schedule::Plateau;
    cfg.factor = 5.0;
    cfg.patience = 2;
    cfg.epochs = 20;
  } else {
    cfg.optimizer = Optimizer::Adam;
    cfg.lr = 1e-4;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.schedule = Schedule::Step;
    cfg.factor = 10.0;
    cfg.every = 3;
    cfg.epochs = 15;
  }
  return cfg;
}

std::string metric_report_json(const MetricReport& r) {
  json j;
  j["task"] = task_name(r.task);
  if (r.task == Task::Parcellation) {
    j["dice"] = r.dice;
    j["per_roi"] = r.per_roi;
  } else {
    j["mae"] = r.mae;
    j["mre"] = r.mre;
  }
  if (!r.loss_curve.empty()) j["loss_curve"] = r.loss_curve;
  return j.dump();
}

const std::vector<std::vector<uint32_t>>& level_permutations(const IcoSphere& mesh) {
  static std::mutex mu;
  static std::map<int64_t, std::vector<std::vector<uint32_t>>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(mesh.num_vertices());
  if (it == cache.end()) {
    const auto& rots = icosahedral_rotations();
    std::vector<std::vector<uint32_t>> perms;
    perms.reserve(rots.size());
    for (const Mat3& r : rots) perms.push_back(rotation_permutation(mesh, r));
    it = cache.emplace(mesh.num_vertices(), std::move(perms)).first;
  }
  return it->second;
}

Sample icosahedral_rotation_augment(const Sample& s, const IcoSphere& mesh, Rng& rng) {
  require(s.features.rank() == 2 && s.features.rows() == mesh.num_vertices(),
          "augment: sample does not live on the given mesh");
  const auto& perms = level_permutations(mesh);
  const auto& perm = perms[rng.uniform_index(perms.size())];
  Sample out;
  out.id = s.id;
  out.features = permute_rows(s.features, perm);
  if (!s.labels.empty()) out.labels = permute_labels(s.labels, perm);
  if (s.target.numel() > 0) out.target = permute_rows(s.target, perm);
  return out;
}

Tensor<float> forward_eval(Model<float>& model, const Sample& s) {
  Value<float> x = Value<float>::leaf(s.features);
  return model.forward(x, 1, false).data();
}

std::vector<int32_t> argmax_rows(const Tensor<float>& logits) {
  const int64_t n = logits.rows(), k = logits.cols();
  std::vector<int32_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * k;
    int32_t best = 0;
    for (int64_t c = 1; c < k; ++c)
      if (row[c] > row[best]) best = int32_t(c);
    out[size_t(i)] = best;
  }
  return out;
}

namespace {

// Accumulates per-subject Dice into a running per-ROI average that only
// counts subjects where the ROI is present.
struct DiceAccum {
  std::vector<double> roi_sum;
  std::vector<int64_t> roi_count;
  double mean_sum = 0.0;
  int64_t subjects = 0;

  void add(const DiceReport& d) {
    if (roi_sum.empty()) {
      roi_sum.assign(d.per_roi.size(), 0.0);
      roi_count.assign(d.per_roi.size(), 0);
    }
    for (size_t k = 0; k < d.per_roi.size(); ++k)
      if (d.present[k]) {
        roi_sum[k] += d.per_roi[k];
        ++roi_count[k];
      }
    mean_sum += d.mean;
    ++subjects;
  }

  void fill(MetricReport* r) const {
    r->dice = subjects ? mean_sum / double(subjects) : 0.0;
    r->per_roi.assign(roi_sum.size(), 0.0);
    for (size_t k = 0; k < roi_sum.size(); ++k)
      if (roi_count[k]) r->per_roi[k] = roi_sum[k] / double(roi_count[k]);
  }
};

}  // namespace

MetricReport evaluate(Model<float>& model, const Dataset& data, const std::vector<int>& idx) {
  require(!idx.empty(), "evaluate: no samples selected");
  MetricReport rep;
  rep.task = data.task;
  if (data.task == Task::Parcellation) {
    DiceAccum acc;
    for (int i : idx) {
      const Sample& s = data.samples.at(size_t(i));
      acc.add(dice(argmax_rows(forward_eval(model, s)), s.labels, data.num_classes));
    }
    acc.fill(&rep);
  } else {
    double mae = 0.0, mre = 0.0;
    for (int i : idx) {
      const Sample& s = data.samples.at(size_t(i));
      Tensor<float> pred = forward_eval(model, s);
      RegressionErrors e = mae_mre(pred, s.target);
      mae += e.mae;
      mre += e.mre;
    }
    rep.mae = mae / double(idx.size());
    rep.mre = mre / double(idx.size());
  }
  return rep;
}

namespace {

void check_compat(const Model<float>& model, const Dataset& data) {
  require(vertex_count(data.level) == model.hier->meshes[size_t(model.spec.top_level)].num_vertices(),
          "train: dataset level does not match the model's input level");
  const int want_in = int(data.samples.at(0).features.cols());
  require(model.spec.in_channels == want_in, "train: model input channels do not match dataset");
  if (data.task == Task::Parcellation)
    require(model.spec.out_channels == data.num_classes,
            "train: model output channels must equal the class count");
  else
    require(model.spec.out_channels == 1, "train: regression model must have one output channel");
}

}  // namespace

TrainResult train(Model<float>& model, const Dataset& data, const std::vector<int>& train_idx,
                  const std::vector<int>& val_idx, const TrainConfig& cfg) {
  cfg.validate();
  require(cfg.task == data.task, "train: config task does not match dataset task");
  require(!train_idx.empty(), "train: no training samples selected");
  for (int i : train_idx)
    require(i >= 0 && size_t(i) < data.samples.size(), "train: training index out of range");
  for (int i : val_idx)
    require(i >= 0 && size_t(i) < data.samples.size(), "train: validation index out of range");
  check_compat(model, data);

  const IcoSphere& mesh = model.hier->meshes[size_t(model.spec.top_level)];
  const int64_t n_verts = mesh.num_vertices();
  const int64_t n_ch = data.samples[0].features.cols();
  const Rng master(cfg.seed);
  auto params = model.parameters();
  auto state = model.state();

  PlateauSchedule plateau(cfg.factor, cfg.patience);
  TrainResult result;
  std::vector<Tensor<float>> best_state;

  std::vector<int> order(train_idx);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double mult = cfg.schedule == Schedule::Step
                            ? step_lr_multiplier(epoch, cfg.factor, cfg.every)
                            : plateau.multiplier();
    const double lr = cfg.lr * mult;

    Rng shuffle_rng = master.split("shuffle", uint64_t(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_index(i))]);

    double loss_sum = 0.0;
    int64_t loss_n = 0;
    DiceAccum train_dice;
    double train_l1 = 0.0;

    for (size_t at = 0; at < order.size(); at += size_t(cfg.batch)) {
      const size_t b = std::min(size_t(cfg.batch), order.size() - at);
      Tensor<float> x({int64_t(b) * n_verts, n_ch});
      std::vector<int32_t> labels;
      Tensor<float> target;
      if (data.task == Task::Parcellation)
        labels.reserve(b * size_t(n_verts));
      else
        target = Tensor<float>({int64_t(b) * n_verts, 1});

      std::vector<Sample> staged(b);
      for (size_t j = 0; j < b; ++j) {
        const int idx = order[at + j];
        if (cfg.augment) {
          Rng ar = master.split("augment",
                                uint64_t(epoch) * data.samples.size() + uint64_t(idx));
          staged[j] = icosahedral_rotation_augment(data.samples[size_t(idx)], mesh, ar);
        } else {
          staged[j] = data.samples[size_t(idx)];
        }
        std::memcpy(x.data() + int64_t(j) * n_verts * n_ch, staged[j].features.data(),
                    size_t(n_verts * n_ch) * sizeof(float));
        if (data.task == Task::Parcellation)
          labels.insert(labels.end(), staged[j].labels.begin(), staged[j].labels.end());
        else
          std::memcpy(target.data() + int64_t(j) * n_verts, staged[j].target.data(),
                      size_t(n_verts) * sizeof(float));
      }

      Value<float> input = Value<float>::leaf(std::move(x));
      Value<float> out = model.forward(input, int(b), true);
      Value<float> loss = data.task == Task::Parcellation ? cross_entropy(out, labels)
                                                          : l1_loss(out, target);
      const double loss_val = double(loss.data().at(0, 0));
      if (!std::isfinite(loss_val)) {
        char msg[96];
        std::snprintf(msg, sizeof(msg), "training diverged: non-finite loss at epoch %d", epoch);
        throw NumericalError(msg);
      }
      loss_sum += loss_val * double(b);
      loss_n += int64_t(b);

      if (data.task == Task::Parcellation) {
        const Tensor<float>& logits = out.data();
        const int64_t k = logits.cols();
        for (size_t j = 0; j < b; ++j) {
          Tensor<float> one({n_verts, k});
          std::memcpy(one.data(), logits.data() + int64_t(j) * n_verts * k,
                      size_t(n_verts * k) * sizeof(float));
          train_dice.add(dice(argmax_rows(one), staged[j].labels, data.num_classes));
        }
      } else {
        train_l1 += loss_val * double(b);
      }

      for (auto* p : params) p->value.zero_grad();
      loss.backward();
      if (cfg.optimizer == Optimizer::Sgd)
        sgd_step<float>(params, float(lr), float(cfg.momentum), float(cfg.weight_decay));
      else
        adam_step<float>(params, float(lr));
    }

    const double train_loss = loss_sum / double(loss_n);
    MetricReport train_rep;
    train_rep.task = data.task;
    if (data.task == Task::Parcellation)
      train_dice.fill(&train_rep);
    else
      train_rep.mae = train_l1 / double(loss_n);

    // Model selection score, higher is better.
    MetricReport val_rep;
    bool have_val = !val_idx.empty();
    if (have_val) val_rep = evaluate(model, data, val_idx);
    const MetricReport& sel = have_val ? val_rep : train_rep;
    const double score = data.task == Task::Parcellation ? sel.dice : -sel.mae;
    if (result.best_epoch < 0 || score > result.best_metric) {
      result.best_metric = score;
      result.best_epoch = epoch;
      best_state.clear();
      for (auto& [name, t] : state) best_state.push_back(*t);
    }

    json line;
    line["epoch"] = epoch;
    line["lr"] = lr;
    line["train_loss"] = train_loss;
    if (data.task == Task::Parcellation) {
      line["train_dice"] = train_rep.dice;
      if (have_val) line["val_dice"] = val_rep.dice;
    } else {
      if (have_val) {
        line["val_mae"] = val_rep.mae;
        line["val_mre"] = val_rep.mre;
      }
    }
    result.log_lines.push_back(line.dump());
    result.report.loss_curve.push_back(train_loss);

    // Plateau watches the training metric (training Dice for parcellation,
    // negative training loss for regression).
    if (cfg.schedule == Schedule::Plateau)
      plateau.observe(data.task == Task::Parcellation ? train_rep.dice : -train_loss);
  }

  for (size_t i = 0; i < state.size(); ++i) *state[i].second = best_state[i];

  std::vector<double> curve = std::move(result.report.loss_curve);
  result.report = evaluate(model, data, val_idx.empty() ? train_idx : val_idx);
  result.report.loss_curve = std::move(curve);
  return result;
}

}  // namespace sunet
