#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "advrank/error.hpp"
#include "advrank/params.hpp"
#include "advrank/tensor.hpp"

namespace advrank {

/// Adam with bias correction. One instance per parameter group; moments and
/// the step count are serialized with checkpoints so training can resume.
class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// grads must align with the ParamSet's registration order.
  void step(ParamSet& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.size()) {
      throw Error("optimizer: got " + std::to_string(grads.size()) + " gradients for " +
                  std::to_string(params.size()) + " parameters");
    }
    if (m_.empty()) init_state(params);
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      ParamSet::Entry& e = params.entry(i);
      const Tensor& grad = grads[i];
      if (!grad.same_shape(e.value)) {
        throw ShapeError("optimizer: gradient shape " + Tensor::shape_str(grad.shape) +
                         " does not match parameter '" + e.name + "' " + Tensor::shape_str(e.value.shape));
      }
      if (!grad.all_finite()) {
        throw NumericError("optimizer: non-finite gradient for parameter '" + e.name + "'");
      }
      for (std::size_t j = 0; j < grad.numel(); ++j) {
        double gj = grad.data[j];
        double& mj = m_[i].data[j];
        double& vj = v_[i].data[j];
        mj = beta1_ * mj + (1.0 - beta1_) * gj;
        vj = beta2_ * vj + (1.0 - beta2_) * gj * gj;
        e.value.data[j] -= lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }
  std::uint64_t step_count() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  /// Restore serialized state; moments must align with the param group.
  void restore(std::uint64_t step_count, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != v.size()) throw Error("optimizer: moment group size mismatch");
    t_ = step_count;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;

  void init_state(const ParamSet& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(Tensor::zeros(params.entry(i).value.shape));
      v_.push_back(Tensor::zeros(params.entry(i).value.shape));
    }
  }
};

}  // namespace advrank
