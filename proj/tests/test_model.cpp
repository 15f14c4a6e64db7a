#include <doctest.h>

#include <cmath>

#include "samri/error.hpp"
#include "samri/loss.hpp"
#include "samri/model.hpp"
#include "samri/rng.hpp"

using namespace samri;
using tensor::Tensor;

namespace {

RgbImage random_image(std::size_t size, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  RgbImage im{size, size, std::vector<std::uint8_t>(size * size * 3)};
  for (std::size_t i = 0; i < size * size; ++i) {
    const auto v = static_cast<std::uint8_t>(rng.below(256));
    im.data[3 * i] = im.data[3 * i + 1] = im.data[3 * i + 2] = v;
  }
  return im;
}

PromptSet box_prompt(int x0, int y0, int x1, int y1) {
  PromptSet p;
  p.box = {x0, y0, x1, y1};
  return p;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config validation and derived geometry") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.grid() == 8);
    CHECK(c.lowres() == 16);
    CHECK(c.upscale_stages() == 1);
    ModelConfig bad = c;
    bad.patch = 7;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.heads = 5;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK(model_config_from_json(to_json(c)) == c);
  }

  TEST_CASE("encoder output geometry and determinism") {
    SamModel m(ModelConfig{});
    const auto im = random_image(64, 1);
    const auto a = m.encode_image(im);
    const auto b = m.encode_image(im);
    CHECK(a.grid_h == 8);
    CHECK(a.grid_w == 8);
    CHECK(a.dim == 32);
    CHECK(a.data.size() == 8 * 8 * 32);
    CHECK(a == b);
    CHECK(m.encoder_invocations() == 2);
    for (float v : a.data) REQUIRE(std::isfinite(v));
    CHECK_THROWS_AS(m.encode_image(random_image(32, 1)), Error);
  }

  TEST_CASE("same seed builds identical models") {
    SamModel a(ModelConfig{}), b(ModelConfig{});
    CHECK(a.frozen_hash() == b.frozen_hash());
    CHECK(a.params().hash(false) == b.params().hash(false));
    ModelConfig other;
    other.seed = 1;
    CHECK(SamModel(other).frozen_hash() != a.frozen_hash());
  }

  TEST_CASE("prompt token counts and roles") {
    SamModel m(ModelConfig{});
    auto p = box_prompt(10, 10, 30, 40);
    auto t = m.encode_prompts(p, 64, 64);
    CHECK(t.tokens.dim(0) == 2);
    CHECK(t.roles == std::vector<TokenRole>{TokenRole::BoxMin, TokenRole::BoxMax});
    p.points.push_back({20, 20, PointLabel::Foreground});
    p.regime = PromptRegime::BoxPoint;
    t = m.encode_prompts(p, 64, 64);
    CHECK(t.tokens.dim(0) == 3);
    CHECK(t.roles[2] == TokenRole::PointFg);
    p.points.push_back({20, 20, PointLabel::Foreground});
    p.points.push_back({5, 5, PointLabel::Background});
    t = m.encode_prompts(p, 64, 64);
    REQUIRE(t.tokens.dim(0) == 5);
    CHECK(t.roles[4] == TokenRole::PointBg);
    for (std::size_t j = 0; j < 32; ++j) CHECK(t.tokens[2 * 32 + j] == t.tokens[3 * 32 + j]);
    CHECK_THROWS_AS(m.encode_prompts(box_prompt(10, 10, 64, 20), 64, 64), Error);
    auto off = box_prompt(1, 1, 5, 5);
    off.points.push_back({-1, 3, PointLabel::Foreground});
    CHECK_THROWS_AS(m.encode_prompts(off, 64, 64), Error);
  }

  TEST_CASE("prompt coordinates are relative to the image size") {
    SamModel m(ModelConfig{});
    // pixel centres (x + 0.5) / w coincide when x' = 3x + 1 on a 3x larger image
    const auto a = m.encode_prompts(box_prompt(0, 2, 31, 40), 64, 64);
    const auto b = m.encode_prompts(box_prompt(1, 7, 94, 121), 192, 192);
    for (std::size_t i = 0; i < a.tokens.numel(); ++i) CHECK(a.tokens[i] == doctest::Approx(b.tokens[i]).epsilon(1e-12));
  }

  TEST_CASE("decoder output geometry, finiteness and upsampling relation") {
    SamModel m(ModelConfig{});
    const auto emb = m.encode_image(random_image(64, 2));
    const auto tok = m.encode_prompts(box_prompt(8, 8, 40, 30), 64, 64);
    const auto out = m.decode_mask(emb, tok, 64, 64);
    CHECK(out.lowres.shape() == tensor::Shape{16, 16});
    CHECK(out.upsampled.shape() == tensor::Shape{64, 64});
    for (double v : out.upsampled.values()) REQUIRE(std::isfinite(v));
    const auto re = tensor::bilinear_resize(out.lowres, 64, 64);
    for (std::size_t i = 0; i < re.numel(); ++i) REQUIRE(re[i] == out.upsampled[i]);
    // arbitrary output size
    const auto odd = m.decode_mask(emb, tok, 50, 70);
    CHECK(odd.upsampled.shape() == tensor::Shape{50, 70});
    CHECK_THROWS_AS(m.decode_mask(Tensor::zeros({4, 32}), tok, 64, 64), Error);
  }

  TEST_CASE("decoder is equivariant to swapping same-role point tokens") {
    SamModel m(ModelConfig{});
    const auto emb = m.encode_image(random_image(64, 3));
    auto p = box_prompt(5, 5, 50, 50);
    p.points = {{10, 12, PointLabel::Foreground}, {40, 33, PointLabel::Foreground}};
    const auto a = m.decode_mask(emb, m.encode_prompts(p, 64, 64), 64, 64);
    std::swap(p.points[0], p.points[1]);
    const auto b = m.decode_mask(emb, m.encode_prompts(p, 64, 64), 64, 64);
    for (std::size_t i = 0; i < a.lowres.numel(); ++i) CHECK(a.lowres[i] == doctest::Approx(b.lowres[i]).epsilon(1e-12));
  }

  TEST_CASE("trainable side is much smaller than the frozen encoder") {
    SamModel m(ModelConfig{});
    const auto enc = m.param_count("encoder."), dec = m.param_count("decoder.");
    CHECK(dec > 0);
    CHECK(static_cast<double>(dec) < 0.25 * static_cast<double>(enc));
    for (const auto& p : m.params().items()) CHECK(p.frozen == !p.name.starts_with("decoder."));
  }

  TEST_CASE("full decoder grad_check on a 16x16 toy input") {
    ModelConfig c;
    c.img_size = 16;
    c.patch = 8;
    c.embed_dim = 16;
    c.encoder_width = 16;
    c.decoder_mlp_dim = 16;
    SamModel m(c);
    const auto emb = embedding_tensor(m.encode_image(random_image(16, 4)));
    auto p = box_prompt(2, 3, 12, 13);
    p.points = {{7, 8, PointLabel::Foreground}};
    const auto tok = m.encode_prompts(p, 16, 16);
    BinaryMask gt(16, 16);
    for (std::size_t y = 4; y < 12; ++y)
      for (std::size_t x = 3; x < 11; ++x) gt.at(y, x) = 1;
    const auto g = mask_tensor(gt);
    auto f = [&] { return samri_loss(tensor::sigmoid(m.decode_mask(emb, tok, 16, 16).upsampled), g); };
    const auto r = tensor::grad_check(f, m.decoder_tensors());
    INFO(r.worst_tensor);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.entries == m.param_count("decoder."));
  }

  TEST_CASE("predict_mask threshold rule") {
    CHECK(foreground_count(predict_mask(Tensor::full({4, 4}, -10.0))) == 0);
    CHECK(foreground_count(predict_mask(Tensor::full({2, 2}, 0.0))) == 4);
    const auto m = predict_mask(Tensor::constant({1, 4}, {3, -3, -3, 3}));
    CHECK(m.data == std::vector<std::uint8_t>{1, 0, 0, 1});
    CHECK(foreground_count(predict_mask(Tensor::constant({1, 2}, {0.1, 2.0}), 0.6)) == 1);
  }

  TEST_CASE("embedding tensor round trip") {
    SamModel m(ModelConfig{});
    const auto e = m.encode_image(random_image(64, 5));
    const auto t = embedding_tensor(e);
    CHECK(t.shape() == tensor::Shape{64, 32});
    CHECK(t[100] == static_cast<double>(e.data[100]));
  }
}
