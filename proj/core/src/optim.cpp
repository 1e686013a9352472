#include "maskdepth/optim.hpp"

#include <cmath>

namespace maskdepth {

void AdamConfig::validate() const {
  if (!(lr_encoder > 0.0 && lr_decoder > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

void Adam::step(const std::vector<nn::Param<float>*>& params) {
  if (m.empty()) {
    for (const auto* p : params) {
      m.push_back(Matrix<float>::Zero(p->value.rows(), p->value.cols()));
      v.push_back(Matrix<float>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m.size() != params.size()) throw ShapeError("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Param<float>& p = *params[i];
    if (m[i].rows() != p.value.rows() || m[i].cols() != p.value.cols()) {
      throw ShapeError("Adam: moment shape mismatch for " + p.name);
    }
    m[i] = b1 * m[i] + (1.0f - b1) * p.grad;
    v[i].array() = b2 * v[i].array() + (1.0f - b2) * p.grad.array().square();
    const auto step_size = static_cast<float>(cfg_.lr(p.group) / c1);
    const auto eps = static_cast<float>(cfg_.eps);
    const auto root_c2 = static_cast<float>(std::sqrt(c2));
    p.value.array() -= step_size * m[i].array() / (v[i].array().sqrt() / root_c2 + eps);
  }
}

void Adam::restore(std::uint64_t t, std::vector<Matrix<float>> first, std::vector<Matrix<float>> second) {
  if (first.size() != second.size()) throw ShapeError("Adam: moment lists differ in length");
  t_ = t;
  m = std::move(first);
  v = std::move(second);
}

}  // namespace maskdepth
