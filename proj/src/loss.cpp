#include "samri/loss.hpp"

#include <algorithm>
#include <cmath>

#include "samri/error.hpp"

namespace samri {

using tensor::Node;
using tensor::Tensor;

void LossConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "loss config: " + m); };
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  // gamma = 0 is the cross-entropy limit and is allowed
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be non-negative");
  if (!(focal_weight >= 0.0) || !std::isfinite(focal_weight)) fail("focal_weight must be non-negative");
  if (!(prob_eps > 0.0 && prob_eps < 0.5)) fail("prob_eps must lie in (0, 0.5)");
  if (!(dice_eps >= 0.0)) fail("dice_eps must be non-negative");
}

nlohmann::json to_json(const LossConfig& c) {
  return {{"alpha", c.alpha},
          {"gamma", c.gamma},
          {"focal_weight", c.focal_weight},
          {"prob_eps", c.prob_eps},
          {"dice_eps", c.dice_eps},
          {"class_conditional_alpha", c.class_conditional_alpha}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.gamma = j.value("gamma", c.gamma);
  c.focal_weight = j.value("focal_weight", c.focal_weight);
  c.prob_eps = j.value("prob_eps", c.prob_eps);
  c.dice_eps = j.value("dice_eps", c.dice_eps);
  c.class_conditional_alpha = j.value("class_conditional_alpha", c.class_conditional_alpha);
  c.validate();
  return c;
}

Tensor mask_tensor(const BinaryMask& mask) {
  std::vector<double> v(mask.data.begin(), mask.data.end());
  for (auto& x : v) x = x != 0 ? 1.0 : 0.0;
  return Tensor::constant({mask.height, mask.width}, std::move(v));
}

namespace {

void check_pair(const Tensor& probs, const Tensor& mask, const char* op) {
  if (probs.shape() != mask.shape())
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + tensor::shape_str(probs.shape()) + " vs " + tensor::shape_str(mask.shape()));
  if (probs.numel() == 0) throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": empty input");
}

}  // namespace

Tensor focal_loss(const Tensor& probs, const Tensor& mask, const LossConfig& cfg) {
  check_pair(probs, mask, "focal_loss");
  cfg.validate();
  const std::size_t n = probs.numel();
  const auto s = probs.values(), g = mask.values();
  const double lo = cfg.prob_eps, hi = 1.0 - cfg.prob_eps, gamma = cfg.gamma;
  auto dlds = std::make_shared<std::vector<double>>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool fg = g[i] > 0.5;
    const double sc = std::clamp(s[i], lo, hi);
    const double p = fg ? sc : 1.0 - sc;
    const double a = cfg.class_conditional_alpha ? (fg ? cfg.alpha : 1.0 - cfg.alpha) : cfg.alpha;
    const double q = 1.0 - p;
    const double lp = std::log(p);
    total += -a * std::pow(q, gamma) * lp;
    // d/dp of -a q^gamma log p
    const double dq = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * lp;
    const double dldp = -a * (std::pow(q, gamma) / p - dq);
    const bool clamped = s[i] < lo || s[i] > hi;
    (*dlds)[i] = clamped ? 0.0 : (fg ? dldp : -dldp) / static_cast<double>(n);
  }
  return tensor::make_op({1}, {total / static_cast<double>(n)}, {probs, mask}, [dlds](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[0] * (*dlds)[i];
  });
}

Tensor dice_loss(const Tensor& probs, const Tensor& mask, double eps) {
  check_pair(probs, mask, "dice_loss");
  const auto s = probs.values(), g = mask.values();
  double inter = 0, ss = 0, gg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    inter += s[i] * g[i];
    ss += s[i] * s[i];
    gg += g[i] * g[i];
  }
  const double den = ss + gg + eps;
  const double loss = 1.0 - 2.0 * inter / den;
  return tensor::make_op({1}, {loss}, {probs, mask}, [inter, den](Node& self) {
    Node& p = *self.parents[0];
    Node& m = *self.parents[1];
    if (!p.requires_grad) return;
    auto& gp = p.ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < gp.size(); ++i)
      gp[i] += up * (-2.0 * m.value[i] / den + 4.0 * inter * p.value[i] / (den * den));
  });
}

Tensor samri_loss(const Tensor& probs, const Tensor& mask, const LossConfig& cfg) {
  return tensor::add(tensor::scale(focal_loss(probs, mask, cfg), cfg.focal_weight), dice_loss(probs, mask, cfg.dice_eps));
}

}  // namespace samri
