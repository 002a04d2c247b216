#ifndef TWIST_PARAMS_HPP_
#define TWIST_PARAMS_HPP_

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "twist/common.hpp"

namespace twist {

// Named trainable tensor with its gradient accumulator and Adam state.
// grad is lazily sized; empty means "no gradient accumulated yet".
template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  Mat<S> adam_m;
  Mat<S> adam_v;
  bool frozen = false;

  Eigen::Index size() const { return value.size(); }

  void zero_grad() {
    if (grad.size() > 0) grad.setZero();
  }
};

// Insertion-ordered collection of parameters with stable addresses.
template <typename S>
class ParameterSet {
 public:
  Parameter<S>& add(const std::string& name, Mat<S> init) {
    require(index_.find(name) == index_.end(), ErrorKind::config,
            "duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->value = std::move(init);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  const Parameter<S>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Parameter<S>& at(const std::string& name) {
    Parameter<S>* p = find(name);
    require(p != nullptr, ErrorKind::config, "unknown parameter: " + name);
    return *p;
  }

  const Parameter<S>& at(const std::string& name) const {
    const Parameter<S>* p = find(name);
    require(p != nullptr, ErrorKind::config, "unknown parameter: " + name);
    return *p;
  }

  size_t count() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  void freeze_all() {
    for (auto& p : params_) p->frozen = true;
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  // Copies values from another set; shapes and names must match one-to-one.
  void copy_values_from(const ParameterSet<S>& other) {
    require(count() == other.count(), ErrorKind::dimension,
            "copy_values_from: parameter count mismatch");
    for (auto& p : params_) {
      const Parameter<S>* q = other.find(p->name);
      require(q != nullptr, ErrorKind::dimension,
              "copy_values_from: missing parameter " + p->name);
      require(q->value.rows() == p->value.rows() &&
                  q->value.cols() == p->value.cols(),
              ErrorKind::dimension,
              "copy_values_from: shape mismatch for " + p->name);
      p->value = q->value;
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Adam with optional global gradient-norm clipping. Frozen parameters are
// skipped entirely: value, moments and step count stay bit-identical.
template <typename S>
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8, double clip_norm = 100.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        clip_norm_(clip_norm) {}

  void step(ParameterSet<S>& params) {
    double sq_norm = 0.0;
    for (auto& p : params) {
      if (p->frozen || p->grad.size() == 0) continue;
      require(p->grad.allFinite(), ErrorKind::divergence,
              "non-finite gradient in parameter " + p->name);
      sq_norm += static_cast<double>(
          p->grad.template cast<double>().squaredNorm());
    }
    double scale = 1.0;
    if (clip_norm_ > 0.0 && sq_norm > clip_norm_ * clip_norm_)
      scale = clip_norm_ / std::sqrt(sq_norm);

    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    S step_scale = static_cast<S>(lr_ / bc1);
    S vnorm = static_cast<S>(1.0 / std::sqrt(bc2));
    S eps = static_cast<S>(eps_);
    S gs = static_cast<S>(scale);

    for (auto& p : params) {
      if (p->frozen || p->grad.size() == 0) continue;
      if (p->adam_m.size() == 0) {
        p->adam_m = Mat<S>::Zero(p->value.rows(), p->value.cols());
        p->adam_v = Mat<S>::Zero(p->value.rows(), p->value.cols());
      }
      auto g = (p->grad.array() * gs).eval();
      p->adam_m.array() = b1 * p->adam_m.array() + (S(1) - b1) * g;
      p->adam_v.array() = b2 * p->adam_v.array() + (S(1) - b2) * g.square();
      p->value.array() -=
          step_scale * p->adam_m.array() /
          ((p->adam_v.array().sqrt() * vnorm) + eps);
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, clip_norm_;
  int64_t t_ = 0;
};

// Glorot-uniform dense init, deterministic under the given rng.
template <typename S>
Mat<S> glorot_uniform(Eigen::Index in, Eigen::Index out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Mat<S> w(in, out);
  for (Eigen::Index i = 0; i < in; ++i)
    for (Eigen::Index j = 0; j < out; ++j)
      w(i, j) = static_cast<S>(rng.uniform(-limit, limit));
  return w;
}

}  // namespace twist

#endif  // TWIST_PARAMS_HPP_
