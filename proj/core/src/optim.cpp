#include "sunet/optim.hpp"

#include <cmath>
#include <limits>

#include "sunet/errors.hpp"

namespace sunet {

namespace {

template <typename T>
T* checked_grad(Parameter<T>& p) {
  Tensor<T>& g = p.value.node()->grad;
  if (g.numel() != p.value.data().numel())
    throw UsageError("optimizer: parameter '" + p.name + "' has no gradient");
  return g.data();
}

template <typename T>
void ensure_buffer(Tensor<T>& buf, const Tensor<T>& like) {
  if (buf.numel() != like.numel()) buf = Tensor<T>(like.shape());
}

}  // namespace

template <typename T>
void sgd_step(const std::vector<Parameter<T>*>& params, T lr, T momentum, T weight_decay) {
  for (Parameter<T>* p : params) {
    T* grad = checked_grad(*p);
    Tensor<T>& data = p->value.data();
    ensure_buffer(p->momentum, data);
    T* m = p->momentum.data();
    T* w = data.data();
    const int64_t n = data.numel();
    for (int64_t i = 0; i < n; ++i) {
      const T g = grad[i] + weight_decay * w[i];
      m[i] = momentum * m[i] + g;
      w[i] -= lr * m[i];
    }
  }
}

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, T lr, T beta1, T beta2, T eps) {
  for (Parameter<T>* p : params) {
    T* grad = checked_grad(*p);
    Tensor<T>& data = p->value.data();
    ensure_buffer(p->m, data);
    ensure_buffer(p->v, data);
    p->step += 1;
    const T c1 = T(1) - T(std::pow(double(beta1), double(p->step)));
    const T c2 = T(1) - T(std::pow(double(beta2), double(p->step)));
    T* m = p->m.data();
    T* v = p->v.data();
    T* w = data.data();
    const int64_t n = data.numel();
    for (int64_t i = 0; i < n; ++i) {
      const T g = grad[i];
      m[i] = beta1 * m[i] + (T(1) - beta1) * g;
      v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      w[i] -= lr * mhat / (T(std::sqrt(double(vhat))) + eps);
    }
  }
}

PlateauSchedule::PlateauSchedule(double factor, int patience)
    : factor_(factor), patience_(patience), best_(-std::numeric_limits<double>::infinity()) {
  if (factor <= 1.0) throw UsageError("plateau schedule: factor must exceed 1");
  if (patience < 1) throw UsageError("plateau schedule: patience must be at least 1");
}

double PlateauSchedule::observe(double metric) {
  if (metric > best_ + 1e-4) {
    best_ = metric;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    mult_ /= factor_;
    stale_ = 0;
  }
  return mult_;
}

double step_lr_multiplier(int epoch, double factor, int every) {
  if (factor <= 1.0) throw UsageError("step schedule: factor must exceed 1");
  if (every < 1) throw UsageError("step schedule: period must be at least 1");
  if (epoch < 0) throw UsageError("step schedule: negative epoch");
  return std::pow(factor, -double(epoch / every));
}

template void sgd_step<float>(const std::vector<Parameter<float>*>&, float, float, float);
template void sgd_step<double>(const std::vector<Parameter<double>*>&, double, double, double);
template void adam_step<float>(const std::vector<Parameter<float>*>&, float, float, float, float);
template void adam_step<double>(const std::vector<Parameter<double>*>&, double, double, double,
                                double);

}  // namespace sunet
