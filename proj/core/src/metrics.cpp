#include "sunet/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "sunet/errors.hpp"

namespace sunet {

DiceReport dice(const std::vector<int32_t>& pred, const std::vector<int32_t>& gt, int k) {
  if (k <= 0) throw UsageError("dice: region count must be positive");
  if (pred.size() != gt.size()) throw UsageError("dice: prediction/truth length mismatch");
  if (pred.empty()) throw UsageError("dice: empty label vectors");

  std::vector<int64_t> np(size_t(k), 0), ng(size_t(k), 0), ni(size_t(k), 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    int32_t p = pred[i], g = gt[i];
    if (p < 0 || p >= k) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "dice: predicted label %d outside [0, %d)", p, k);
      throw DataFormatError(buf);
    }
    if (g < 0 || g >= k) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "dice: reference label %d outside [0, %d)", g, k);
      throw DataFormatError(buf);
    }
    ++np[size_t(p)];
    ++ng[size_t(g)];
    if (p == g) ++ni[size_t(p)];
  }

  DiceReport rep;
  rep.per_roi.assign(size_t(k), 0.0);
  rep.present.assign(size_t(k), 0);
  double sum = 0;
  int n_present = 0;
  for (int r = 0; r < k; ++r) {
    int64_t denom = np[size_t(r)] + ng[size_t(r)];
    if (denom == 0) continue;  // region absent everywhere: not scored
    rep.present[size_t(r)] = 1;
    rep.per_roi[size_t(r)] = 2.0 * double(ni[size_t(r)]) / double(denom);
    sum += rep.per_roi[size_t(r)];
    ++n_present;
  }
  rep.mean = sum / double(n_present);
  return rep;
}

template <typename T>
RegressionErrors mae_mre(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.rank() != gt.rank() || pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw UsageError("mae_mre: prediction/truth shape mismatch");
  if (pred.numel() == 0) throw UsageError("mae_mre: empty tensors");

  double abs_sum = 0;
  double rel_sum = 0;
  int64_t rel_count = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    double p = double(pred.data()[i]);
    double g = double(gt.data()[i]);
    double d = std::abs(p - g);
    abs_sum += d;
    if (g > 1e-5) {
      rel_sum += d / g;
      ++rel_count;
    }
  }
  if (rel_count == 0)
    throw NumericalError("mae_mre: no reference values above 1e-5; relative error undefined");

  RegressionErrors e;
  e.mae = abs_sum / double(pred.numel());
  e.mre = 100.0 * rel_sum / double(rel_count);
  return e;
}

template RegressionErrors mae_mre<float>(const Tensor<float>&, const Tensor<float>&);
template RegressionErrors mae_mre<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace sunet
