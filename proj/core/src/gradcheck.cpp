#include "sunet/gradcheck.hpp"

#include <cmath>
#include <set>

#include "sunet/errors.hpp"

namespace sunet {

namespace {

double eval_scalar(const GradFn& fn, const std::vector<Tensor<double>>& inputs) {
  std::vector<Value<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Value<double>::leaf(t, false));
  Value<double> out = fn(leaves);
  if (!out.defined() || out.data().numel() != 1)
    throw UsageError("gradcheck function must return a scalar");
  return double(out.data()[0]);
}

}  // namespace

GradCheckReport gradcheck(const GradFn& fn, const std::vector<Tensor<double>>& inputs,
                          double eps, double tol, uint64_t seed, int coords_per_input) {
  // analytic pass
  std::vector<Value<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Value<double>::leaf(t, true));
  Value<double> out = fn(leaves);
  if (!out.defined() || out.data().numel() != 1)
    throw UsageError("gradcheck function must return a scalar");
  out.backward();
  const double f0 = double(out.data()[0]);

  Rng rng(seed);
  GradCheckReport report;

  std::vector<Tensor<double>> probe = inputs;
  for (size_t which = 0; which < inputs.size(); ++which) {
    const int64_t numel = inputs[which].numel();
    if (numel == 0) continue;
    const int target = static_cast<int>(std::min<int64_t>(coords_per_input, numel));

    std::set<int64_t> used;
    int counted = 0, attempts = 0;
    while (counted < target && attempts < 60 * target) {
      ++attempts;
      int64_t coord = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(numel)));
      if (numel >= 2 * target && used.count(coord)) continue;

      const double saved = probe[which][coord];
      probe[which][coord] = saved + eps;
      const double fp = eval_scalar(fn, probe);
      probe[which][coord] = saved - eps;
      const double fm = eval_scalar(fn, probe);
      probe[which][coord] = saved;

      const double gp = (fp - f0) / eps;
      const double gm = (f0 - fm) / eps;
      // one-sided derivatives disagree -> probe straddles a kink; resample
      if (std::abs(gp - gm) > 0.1 * (std::abs(gp) + std::abs(gm)) + tol) continue;

      used.insert(coord);
      ++counted;
      ++report.coords_checked;

      const double fd = (fp - fm) / (2 * eps);
      const double analytic = leaves[which].grad()[coord];
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
      const double rel = std::abs(analytic - fd) / denom;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      if (rel > tol)
        report.failures.push_back("input " + std::to_string(which) + " coord " +
                                  std::to_string(coord) + ": analytic " +
                                  std::to_string(analytic) + " vs fd " + std::to_string(fd));
    }
  }
  return report;
}

}  // namespace sunet
