#include "samri/model.hpp"

#include <cmath>
#include <numbers>

#include "samri/error.hpp"
#include "samri/rng.hpp"

namespace samri {

using tensor::Shape;
using tensor::Tensor;

namespace {

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::vector<double> normal_values(Xoshiro256& rng, std::size_t n, double sd) {
  std::vector<double> v(n);
  for (auto& x : v) x = sd * rng.normal();
  return v;
}

Tensor lin(const Tensor& x, const Tensor& w, const Tensor& b) { return tensor::linear(x, w, b); }

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "model config: " + m); };
  if (img_size == 0 || patch == 0 || embed_dim == 0 || heads == 0 || lowres_factor == 0) fail("zero dimension");
  if (img_size % patch) fail("img_size must be divisible by patch");
  if (img_size % lowres_factor) fail("img_size must be divisible by lowres_factor");
  if (embed_dim % heads) fail("embed_dim must be divisible by heads");
  if (embed_dim % 2 || (embed_dim / 2) % heads) fail("embed_dim/2 must be divisible by heads");
  if (encoder_width == 0 || encoder_width % heads) fail("encoder_width must be divisible by heads");
  if (patch < lowres_factor || patch % lowres_factor || !is_pow2(patch / lowres_factor))
    fail("patch/lowres_factor must be a power of two");
  if (embed_dim / 4 >> (upscale_stages() > 0 ? upscale_stages() - 1 : 0) == 0) fail("too many upscaling stages");
  if (decoder_depth == 0) fail("decoder_depth must be positive");
}

std::size_t ModelConfig::upscale_stages() const {
  std::size_t s = 0;
  for (std::size_t r = patch / lowres_factor; r > 1; r /= 2) ++s;
  return s;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"img_size", c.img_size},           {"patch", c.patch},
          {"embed_dim", c.embed_dim},         {"encoder_depth", c.encoder_depth},
          {"heads", c.heads},                 {"decoder_depth", c.decoder_depth},
          {"lowres_factor", c.lowres_factor}, {"encoder_width", c.encoder_width},
          {"decoder_mlp_dim", c.decoder_mlp_dim}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.img_size = j.value("img_size", c.img_size);
  c.patch = j.value("patch", c.patch);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
  c.heads = j.value("heads", c.heads);
  c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
  c.lowres_factor = j.value("lowres_factor", c.lowres_factor);
  c.encoder_width = j.value("encoder_width", c.encoder_width);
  c.decoder_mlp_dim = j.value("decoder_mlp_dim", c.decoder_mlp_dim);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Tensor embedding_tensor(const ImageEmbedding& e) {
  std::vector<double> v(e.data.begin(), e.data.end());
  return Tensor::constant({e.grid_h * e.grid_w, e.dim}, std::move(v));
}

// ---- construction -----------------------------------------------------------

SamModel::Linear SamModel::make_linear(const std::string& name, std::size_t in, std::size_t out, bool frozen,
                                       Xoshiro256& rng) {
  Linear l;
  l.w = params_.add(name + ".w", {in, out}, normal_values(rng, in * out, 1.0 / std::sqrt(static_cast<double>(in))),
                    frozen);
  l.b = params_.add(name + ".b", {out}, std::vector<double>(out, 0.0), frozen);
  return l;
}

SamModel::Norm SamModel::make_norm(const std::string& name, std::size_t d, bool frozen) {
  Norm n;
  n.g = params_.add(name + ".g", {d}, std::vector<double>(d, 1.0), frozen);
  n.b = params_.add(name + ".b", {d}, std::vector<double>(d, 0.0), frozen);
  return n;
}

SamModel::Attention SamModel::make_attention(const std::string& name, std::size_t d, std::size_t inner, bool frozen,
                                             Xoshiro256& rng) {
  Attention a;
  a.q = make_linear(name + ".q", d, inner, frozen, rng);
  a.k = make_linear(name + ".k", d, inner, frozen, rng);
  a.v = make_linear(name + ".v", d, inner, frozen, rng);
  a.o = make_linear(name + ".o", inner, d, frozen, rng);
  return a;
}

SamModel::SamModel(const ModelConfig& config) : cfg_(config) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim, w = cfg_.encoder_width, g = cfg_.grid();
  const std::size_t patch_in = cfg_.patch * cfg_.patch * 3;

  Xoshiro256 enc_rng(derive_seed(cfg_.seed, stream_tag("model.encoder")));
  patch_embed_ = make_linear("encoder.patch_embed", patch_in, w, true, enc_rng);
  pos_embed_ = params_.add("encoder.pos_embed", {g * g, w}, normal_values(enc_rng, g * g * w, 0.1), true);
  for (std::size_t i = 0; i < cfg_.encoder_depth; ++i) {
    const std::string p = "encoder.block" + std::to_string(i);
    EncoderBlock b;
    b.n1 = make_norm(p + ".norm1", w, true);
    b.attn = make_attention(p + ".attn", w, w, true, enc_rng);
    b.n2 = make_norm(p + ".norm2", w, true);
    b.fc1 = make_linear(p + ".mlp1", w, 4 * w, true, enc_rng);
    b.fc2 = make_linear(p + ".mlp2", 4 * w, w, true, enc_rng);
    enc_blocks_.push_back(std::move(b));
  }
  neck_ = make_linear("encoder.neck", w, d, true, enc_rng);
  neck_norm_ = make_norm("encoder.neck_norm", d, true);

  Xoshiro256 prompt_rng(derive_seed(cfg_.seed, stream_tag("model.prompt")));
  fourier_ = params_.add("prompt.fourier", {2, d / 2}, normal_values(prompt_rng, d, 1.0), true);
  roles_ = params_.add("prompt.roles", {4, d}, normal_values(prompt_rng, 4 * d, 1.0), true);
  no_mask_ = params_.add("prompt.no_mask", {d}, normal_values(prompt_rng, d, 1.0), true);
  {
    std::vector<double> pe;
    pe.reserve(g * g * d);
    for (std::size_t y = 0; y < g; ++y)
      for (std::size_t x = 0; x < g; ++x) {
        auto f = fourier((static_cast<double>(x) + 0.5) / static_cast<double>(g),
                         (static_cast<double>(y) + 0.5) / static_cast<double>(g));
        pe.insert(pe.end(), f.begin(), f.end());
      }
    image_pe_ = Tensor::constant({g * g, d}, std::move(pe));
  }

  Xoshiro256 dec_rng(derive_seed(cfg_.seed, stream_tag("model.decoder")));
  mask_token_ = params_.add("decoder.mask_token", {1, d}, normal_values(dec_rng, d, 1.0), false);
  for (std::size_t i = 0; i < cfg_.decoder_depth; ++i) {
    const std::string p = "decoder.block" + std::to_string(i);
    DecoderBlock b;
    b.self_attn = make_attention(p + ".self_attn", d, d, false, dec_rng);
    b.n1 = make_norm(p + ".norm1", d, false);
    b.t2i = make_attention(p + ".token_to_image", d, d / 2, false, dec_rng);
    b.n2 = make_norm(p + ".norm2", d, false);
    b.fc1 = make_linear(p + ".mlp1", d, cfg_.decoder_mlp_dim, false, dec_rng);
    b.fc2 = make_linear(p + ".mlp2", cfg_.decoder_mlp_dim, d, false, dec_rng);
    b.n3 = make_norm(p + ".norm3", d, false);
    b.i2t = make_attention(p + ".image_to_token", d, d / 2, false, dec_rng);
    b.n4 = make_norm(p + ".norm4", d, false);
    dec_blocks_.push_back(std::move(b));
  }
  final_attn_ = make_attention("decoder.final_attn", d, d / 2, false, dec_rng);
  final_norm_ = make_norm("decoder.final_norm", d, false);
  std::size_t c = d;
  for (std::size_t s = 0; s < cfg_.upscale_stages(); ++s) {
    const std::size_t out = s == 0 ? d / 4 : c / 2;
    const std::string p = "decoder.upscale" + std::to_string(s);
    UpStage u;
    u.w = params_.add(p + ".w", {c, 2, 2, out},
                      normal_values(dec_rng, c * 4 * out, 1.0 / std::sqrt(static_cast<double>(c))), false);
    u.b = params_.add(p + ".b", {out}, std::vector<double>(out, 0.0), false);
    u.norm = make_norm(p + ".norm", out, false);
    up_.push_back(std::move(u));
    c = out;
  }
  hyper1_ = make_linear("decoder.hyper1", d, d, false, dec_rng);
  hyper2_ = make_linear("decoder.hyper2", d, d, false, dec_rng);
  hyper3_ = make_linear("decoder.hyper3", d, c, false, dec_rng);
}

// ---- encoder ------------------------------------------------------------------

Tensor SamModel::prepare_image(const RgbImage& image) const {
  const std::size_t s = cfg_.img_size, p = cfg_.patch, g = cfg_.grid();
  if (image.height != s || image.width != s)
    throw Error(ErrorCode::DimMismatch, "encoder expects " + std::to_string(s) + "x" + std::to_string(s) + ", got " +
                                            std::to_string(image.height) + "x" + std::to_string(image.width));
  const std::size_t row = p * p * 3;
  std::vector<double> out(g * g * row);
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t c = 0; c < 3; ++c) {
            const double v = image.at(gy * p + py, gx * p + px, c) / 255.0;
            out[(gy * g + gx) * row + (py * p + px) * 3 + c] = (v - 0.5) / 0.25;
          }
  return Tensor::constant({g * g, row}, std::move(out));
}

Tensor SamModel::attend(const Attention& a, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in) const {
  const Tensor q = lin(q_in, a.q.w, a.q.b);
  const Tensor k = lin(k_in, a.k.w, a.k.b);
  const Tensor v = lin(v_in, a.v.w, a.v.b);
  const std::size_t inner = q.dim(1), dh = inner / cfg_.heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(cfg_.heads);
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    const Tensor qh = tensor::slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = tensor::slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = tensor::slice(v, 1, h * dh, (h + 1) * dh);
    const Tensor att = tensor::softmax(tensor::scale(tensor::matmul_nt(qh, kh), sc));
    heads.push_back(tensor::matmul(att, vh));
  }
  const Tensor merged = cfg_.heads == 1 ? heads[0] : tensor::concat(heads, 1);
  return lin(merged, a.o.w, a.o.b);
}

ImageEmbedding SamModel::encode_prepared(const Tensor& patches) const {
  tensor::NoGradGuard no_grad;
  ++invocations_;
  Tensor x = tensor::add(lin(patches, patch_embed_.w, patch_embed_.b), pos_embed_);
  for (const auto& b : enc_blocks_) {
    const Tensor h = tensor::layer_norm(x, b.n1.g, b.n1.b);
    x = tensor::add(x, attend(b.attn, h, h, h));
    const Tensor m = tensor::layer_norm(x, b.n2.g, b.n2.b);
    x = tensor::add(x, lin(tensor::gelu(lin(m, b.fc1.w, b.fc1.b)), b.fc2.w, b.fc2.b));
  }
  x = tensor::layer_norm(lin(x, neck_.w, neck_.b), neck_norm_.g, neck_norm_.b);

  ImageEmbedding e;
  e.grid_h = e.grid_w = cfg_.grid();
  e.dim = cfg_.embed_dim;
  e.data.reserve(x.numel());
  for (double v : x.values()) e.data.push_back(static_cast<float>(v));
  return e;
}

// ---- prompt encoder -------------------------------------------------------------

std::vector<double> SamModel::fourier(double xn, double yn) const {
  const std::size_t half = cfg_.embed_dim / 2;
  const auto gm = fourier_.values();
  const double cx = 2.0 * xn - 1.0, cy = 2.0 * yn - 1.0;
  std::vector<double> out(cfg_.embed_dim);
  for (std::size_t j = 0; j < half; ++j) {
    const double proj = 2.0 * std::numbers::pi * (cx * gm[j] + cy * gm[half + j]);
    out[j] = std::sin(proj);
    out[half + j] = std::cos(proj);
  }
  return out;
}

PromptTokens SamModel::encode_prompts(const PromptSet& prompts, std::size_t width, std::size_t height) const {
  if (!prompts.box.valid_in(width, height))
    throw Error(ErrorCode::OutOfBounds, "box (" + std::to_string(prompts.box.x_min) + "," +
                                            std::to_string(prompts.box.y_min) + ")-(" +
                                            std::to_string(prompts.box.x_max) + "," +
                                            std::to_string(prompts.box.y_max) + ") outside " + std::to_string(width) +
                                            "x" + std::to_string(height));
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  std::vector<double> pos;
  std::vector<std::size_t> role_idx;
  PromptTokens out;
  auto push = [&](int x, int y, TokenRole role) {
    auto f = fourier((x + 0.5) / w, (y + 0.5) / h);
    pos.insert(pos.end(), f.begin(), f.end());
    role_idx.push_back(static_cast<std::size_t>(role));
    out.roles.push_back(role);
  };
  push(prompts.box.x_min, prompts.box.y_min, TokenRole::BoxMin);
  push(prompts.box.x_max, prompts.box.y_max, TokenRole::BoxMax);
  for (const auto& p : prompts.points) {
    if (p.x < 0 || p.y < 0 || p.x >= static_cast<int>(width) || p.y >= static_cast<int>(height))
      throw Error(ErrorCode::OutOfBounds, "point (" + std::to_string(p.x) + "," + std::to_string(p.y) + ") outside " +
                                              std::to_string(width) + "x" + std::to_string(height));
    push(p.x, p.y, p.label == PointLabel::Foreground ? TokenRole::PointFg : TokenRole::PointBg);
  }
  const std::size_t t = role_idx.size();
  out.tokens = tensor::add(Tensor::constant({t, cfg_.embed_dim}, std::move(pos)),
                           tensor::embedding_lookup(roles_, role_idx));
  return out;
}

// ---- decoder ----------------------------------------------------------------------

MaskLogits SamModel::decode_mask(const Tensor& embedding, const PromptTokens& tokens, std::size_t out_h,
                                 std::size_t out_w) const {
  const std::size_t g = cfg_.grid(), d = cfg_.embed_dim;
  if (embedding.shape() != Shape{g * g, d})
    throw Error(ErrorCode::ShapeMismatch, "embedding " + tensor::shape_str(embedding.shape()) + ", expected " +
                                              tensor::shape_str({g * g, d}));
  if (tokens.tokens.rank() != 2 || tokens.tokens.dim(1) != d)
    throw Error(ErrorCode::ShapeMismatch, "prompt tokens " + tensor::shape_str(tokens.tokens.shape()));

  const Tensor query_pe = tensor::concat({mask_token_, tokens.tokens}, 0);
  Tensor queries = query_pe;
  Tensor keys = tensor::add(embedding, no_mask_);
  const Tensor& key_pe = image_pe_;

  for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
    const auto& b = dec_blocks_[i];
    if (i == 0) {
      queries = attend(b.self_attn, queries, queries, queries);
    } else {
      const Tensor q = tensor::add(queries, query_pe);
      queries = tensor::add(queries, attend(b.self_attn, q, q, queries));
    }
    queries = tensor::layer_norm(queries, b.n1.g, b.n1.b);

    Tensor q = tensor::add(queries, query_pe);
    Tensor k = tensor::add(keys, key_pe);
    queries = tensor::layer_norm(tensor::add(queries, attend(b.t2i, q, k, keys)), b.n2.g, b.n2.b);

    const Tensor mlp = lin(tensor::gelu(lin(queries, b.fc1.w, b.fc1.b)), b.fc2.w, b.fc2.b);
    queries = tensor::layer_norm(tensor::add(queries, mlp), b.n3.g, b.n3.b);

    q = tensor::add(queries, query_pe);
    k = tensor::add(keys, key_pe);
    keys = tensor::layer_norm(tensor::add(keys, attend(b.i2t, k, q, queries)), b.n4.g, b.n4.b);
  }
  {
    const Tensor q = tensor::add(queries, query_pe);
    const Tensor k = tensor::add(keys, key_pe);
    queries = tensor::layer_norm(tensor::add(queries, attend(final_attn_, q, k, keys)), final_norm_.g, final_norm_.b);
  }

  const Tensor mask_out = tensor::slice(queries, 0, 0, 1);
  Tensor hyper = tensor::gelu(lin(mask_out, hyper1_.w, hyper1_.b));
  hyper = tensor::gelu(lin(hyper, hyper2_.w, hyper2_.b));
  hyper = lin(hyper, hyper3_.w, hyper3_.b);

  Tensor feat = tensor::reshape(keys, {g, g, d});
  for (const auto& u : up_) {
    feat = tensor::conv2d_transpose(feat, u.w, u.b, 2);
    feat = tensor::gelu(tensor::layer_norm(feat, u.norm.g, u.norm.b));
  }
  const std::size_t l = feat.dim(0), c = feat.dim(2);
  const Tensor flat = tensor::reshape(feat, {l * l, c});

  MaskLogits out;
  out.lowres = tensor::reshape(tensor::matmul_nt(flat, hyper), {l, l});
  out.upsampled = tensor::bilinear_resize(out.lowres, out_h, out_w);
  return out;
}

std::vector<Tensor> SamModel::decoder_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_.items())
    if (!p.frozen) out.push_back(p.tensor);
  return out;
}

std::size_t SamModel::param_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_.items())
    if (p.name.starts_with(prefix)) n += p.tensor.numel();
  return n;
}

void SamModel::round_decoder_to_f32() {
  for (auto& p : params_.items()) {
    if (p.frozen) continue;
    for (auto& v : p.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }
}

BinaryMask predict_mask(const Tensor& logits, double threshold) {
  if (logits.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "predict_mask on " + tensor::shape_str(logits.shape()));
  BinaryMask m(logits.dim(0), logits.dim(1));
  const auto v = logits.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    m.data[i] = p >= threshold ? 1 : 0;
  }
  return m;
}

}  // namespace samri
