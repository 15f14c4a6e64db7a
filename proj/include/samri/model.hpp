#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "samri/grid.hpp"
#include "samri/prompts.hpp"
#include "samri/tensor.hpp"

namespace samri {

/// Toy SAM geometry. The encoder runs at `encoder_width` and a linear neck
/// maps it to `embed_dim`, so the frozen side stays several times larger
/// than the decoder.
struct ModelConfig {
  std::size_t img_size = 64;
  std::size_t patch = 8;
  std::size_t embed_dim = 32;
  std::size_t encoder_depth = 2;
  std::size_t heads = 4;
  std::size_t decoder_depth = 2;
  std::size_t lowres_factor = 4;
  std::size_t encoder_width = 96;
  std::size_t decoder_mlp_dim = 64;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument.
  void validate() const;
  std::size_t grid() const { return img_size / patch; }
  std::size_t lowres() const { return img_size / lowres_factor; }
  /// Number of stride-2 transposed convolutions from grid() to lowres().
  std::size_t upscale_stages() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Encoder output stored at 32 bits: grid_h * grid_w rows of `dim` values.
struct ImageEmbedding {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t dim = 0;
  std::vector<float> data;
  std::string key;

  bool operator==(const ImageEmbedding&) const = default;
};

/// [grid_h * grid_w, dim] constant tensor.
tensor::Tensor embedding_tensor(const ImageEmbedding& e);

enum class TokenRole : std::uint8_t { BoxMin = 0, BoxMax = 1, PointFg = 2, PointBg = 3 };

struct PromptTokens {
  tensor::Tensor tokens;  // [T, D]
  std::vector<TokenRole> roles;
};

struct MaskLogits {
  tensor::Tensor lowres;     // [img/lowres_factor, img/lowres_factor]
  tensor::Tensor upsampled;  // [out_h, out_w]
};

class SamModel {
 public:
  explicit SamModel(const ModelConfig& config);
  SamModel(const SamModel&) = delete;
  SamModel& operator=(const SamModel&) = delete;

  const ModelConfig& config() const { return cfg_; }

  /// Pixel normalization and patchify: [grid^2, patch*patch*3].
  /// Throws DimMismatch unless the image is img_size square.
  tensor::Tensor prepare_image(const RgbImage& image) const;
  ImageEmbedding encode_prepared(const tensor::Tensor& patches) const;
  ImageEmbedding encode_image(const RgbImage& image) const { return encode_prepared(prepare_image(image)); }
  std::size_t encoder_invocations() const { return invocations_.load(); }
  void reset_invocations() { invocations_ = 0; }

  /// Coordinates are taken relative to an image of the given size, so
  /// prompts on a slice of any resolution map onto the same unit square.
  /// Throws OutOfBounds.
  PromptTokens encode_prompts(const PromptSet& prompts, std::size_t width, std::size_t height) const;
  /// Dense positional encoding of the embedding grid, [grid^2, D].
  const tensor::Tensor& image_pe() const { return image_pe_; }

  /// Records a graph through the decoder parameters unless gradients are off.
  MaskLogits decode_mask(const tensor::Tensor& embedding, const PromptTokens& tokens, std::size_t out_h,
                         std::size_t out_w) const;
  MaskLogits decode_mask(const ImageEmbedding& embedding, const PromptTokens& tokens, std::size_t out_h,
                         std::size_t out_w) const {
    return decode_mask(embedding_tensor(embedding), tokens, out_h, out_w);
  }

  tensor::ParameterSet& params() { return params_; }
  const tensor::ParameterSet& params() const { return params_; }
  std::vector<tensor::Tensor> decoder_tensors() const;
  /// XXH64 over every frozen parameter (encoder and prompt encoder).
  std::uint64_t frozen_hash() const { return params_.hash(true); }
  std::size_t param_count(const std::string& prefix) const;

  /// Rounds nonfrozen parameter values to f32, as a snapshot reload would.
  void round_decoder_to_f32();

 private:
  struct Linear {
    tensor::Tensor w, b;
  };
  struct Norm {
    tensor::Tensor g, b;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct EncoderBlock {
    Norm n1, n2;
    Attention attn;
    Linear fc1, fc2;
  };
  struct DecoderBlock {
    Attention self_attn, t2i, i2t;
    Norm n1, n2, n3, n4;
    Linear fc1, fc2;
  };
  struct UpStage {
    tensor::Tensor w, b;
    Norm norm;
  };

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, bool frozen, Xoshiro256& rng);
  Norm make_norm(const std::string& name, std::size_t d, bool frozen);
  Attention make_attention(const std::string& name, std::size_t d, std::size_t inner, bool frozen,
                           Xoshiro256& rng);
  tensor::Tensor attend(const Attention& a, const tensor::Tensor& q, const tensor::Tensor& k,
                        const tensor::Tensor& v) const;
  std::vector<double> fourier(double xn, double yn) const;

  ModelConfig cfg_;
  tensor::ParameterSet params_;
  mutable std::atomic<std::size_t> invocations_{0};

  // encoder (frozen)
  Linear patch_embed_;
  tensor::Tensor pos_embed_;
  std::vector<EncoderBlock> enc_blocks_;
  Linear neck_;
  Norm neck_norm_;
  // prompt encoder (frozen)
  tensor::Tensor fourier_;  // [2, D/2]
  tensor::Tensor roles_;    // [4, D]
  tensor::Tensor no_mask_;  // [D]
  tensor::Tensor image_pe_;
  // decoder (trainable)
  tensor::Tensor mask_token_;
  std::vector<DecoderBlock> dec_blocks_;
  Attention final_attn_;
  Norm final_norm_;
  std::vector<UpStage> up_;
  Linear hyper1_, hyper2_, hyper3_;
};

/// Foreground iff sigmoid(logit) >= threshold.
BinaryMask predict_mask(const tensor::Tensor& logits, double threshold = 0.5);

}  // namespace samri
