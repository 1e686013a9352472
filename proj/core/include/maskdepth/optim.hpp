#pragma once

#include <cstdint>
#include <vector>

#include "maskdepth/nn.hpp"

namespace maskdepth {

struct AdamConfig {
  double lr_encoder = 1e-5;
  double lr_decoder = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  [[nodiscard]] double lr(nn::ParamGroup group) const {
    return group == nn::ParamGroup::encoder ? lr_encoder : lr_decoder;
  }
};

/// Adam with one learning rate per parameter group. Moments are kept in
/// the order of the parameter list handed to step().
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void step(const std::vector<nn::Param<float>*>& params);

  [[nodiscard]] const AdamConfig& config() const { return cfg_; }
  [[nodiscard]] std::uint64_t steps() const { return t_; }

  // Exposed for checkpointing.
  std::vector<Matrix<float>> m;
  std::vector<Matrix<float>> v;
  void restore(std::uint64_t t, std::vector<Matrix<float>> first, std::vector<Matrix<float>> second);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

}  // namespace maskdepth
