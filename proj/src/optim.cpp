#include "pcqa/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pcqa {

Adam::Adam(ParamList params, AdamConfig cfg) : cfg_(cfg) {
  for (auto& p : params)
    if (p.tensor.requires_grad()) params_.push_back(p);
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

double Adam::lr(bool pretrained, int epoch) const {
  const double base = pretrained ? cfg_.lr_pretrained : cfg_.lr_rest;
  return base * std::pow(cfg_.decay, epoch / cfg_.decay_every);
}

void Adam::step(int epoch) {
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    if (!t.has_grad()) continue;
    const double rate = lr(params_[i].pretrained, epoch);
    auto w = t.data();
    auto g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] + cfg_.weight_decay * w[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      w[j] -= rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

TensorArchive Adam::state() const {
  TensorArchive a;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    a["adam.m." + params_[i].name] = Tensor(params_[i].tensor.shape(), m_[i]);
    a["adam.v." + params_[i].name] = Tensor(params_[i].tensor.shape(), v_[i]);
  }
  a["adam.steps"] = Tensor::scalar(static_cast<double>(steps_));
  return a;
}

void Adam::load_state(const TensorArchive& archive) {
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = archive.find(name);
    if (it == archive.end()) throw std::runtime_error("optimizer state " + name + " missing");
    return it->second;
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& m = get("adam.m." + params_[i].name);
    const auto& v = get("adam.v." + params_[i].name);
    if (m.numel() != params_[i].tensor.numel() || v.numel() != params_[i].tensor.numel())
      throw std::runtime_error("optimizer state for " + params_[i].name + " has the wrong size");
    m_[i].assign(m.data().begin(), m.data().end());
    v_[i].assign(v.data().begin(), v.data().end());
  }
  steps_ = static_cast<long>(get("adam.steps").item());
}

}  // namespace pcqa
