#pragma once

#include <json.hpp>

#include "samri/grid.hpp"
#include "samri/tensor.hpp"

namespace samri {

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  double focal_weight = 20.0;
  double prob_eps = 1e-7;  // probabilities are clamped to [eps, 1 - eps]
  double dice_eps = 1e-7;  // added to the Dice denominator
  /// Weight foreground pixels by alpha and background pixels by 1 - alpha.
  bool class_conditional_alpha = false;

  /// Throws InvalidArgument.
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j);

/// Mask as a constant tensor of 0/1 values, shape [h, w].
tensor::Tensor mask_tensor(const BinaryMask& mask);

/// -(1/N) sum a (1 - p)^gamma log p, p = s where g = 1 and 1 - s elsewhere.
/// The clamp has zero gradient where it is active. Throws ShapeMismatch.
tensor::Tensor focal_loss(const tensor::Tensor& probs, const tensor::Tensor& mask, const LossConfig& cfg = {});
/// 1 - 2 sum(s g) / (sum s^2 + sum g^2 + eps). Throws ShapeMismatch.
tensor::Tensor dice_loss(const tensor::Tensor& probs, const tensor::Tensor& mask, double eps = 1e-7);
/// focal_weight * focal + dice.
tensor::Tensor samri_loss(const tensor::Tensor& probs, const tensor::Tensor& mask, const LossConfig& cfg = {});

}  // namespace samri
