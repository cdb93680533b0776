#pragma once

// Miniature promptable segmenter: ViT-style image encoder with optional
// LoRA on the attention projections, a box prompt encoder, and a mask
// decoder producing a low-res mask, a high-res mask and a predicted IoU.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "samtta/tensor.hpp"

namespace samtta {

enum class LoraTargets : std::uint32_t { QV = 0, QKVO = 1 };

struct ModelConfig {
  std::uint32_t image_size = 64;
  std::uint32_t patch_size = 8;
  std::uint32_t embed_dim = 32;
  std::uint32_t encoder_blocks = 2;
  std::uint32_t attention_heads = 4;
  std::uint32_t lowres_size = 16;
  std::uint32_t highres_size = 64;
  std::uint32_t lora_rank = 4;
  std::uint32_t mlp_hidden = 64;
  LoraTargets lora_targets = LoraTargets::QV;

  // Reduced model (16x16 input) used by gradient checks.
  static ModelConfig tiny();

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  // Number of 2x upsampling stages from the low-res to the high-res mask.
  std::size_t highres_stages() const;

  bool operator==(const ModelConfig&) const = default;
};

// Pixel coordinates, exclusive upper corner.
struct BoxPrompt {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const BoxPrompt&) const = default;
};

struct SegOutputs {
  Tensor mask_low;   // [lowres, lowres] logits
  Tensor mask_high;  // [highres, highres] logits
  Tensor iou;        // scalar in (0,1)
  Tensor embedding;  // [tokens, embed_dim]
  double s_iou() const { return iou.item(); }
};

// W + scaling * A * B with A:[in,rank], B:[rank,out].
Tensor lora_delta(const Tensor& w_base, const Tensor& a, const Tensor& b, double scaling);

enum class TrainMode {
  Frozen,    // nothing trainable
  Pretrain,  // everything except fixed Fourier buffers and LoRA
  Adapt,     // LoRA A/B and the prompt encoder only
};

class SegModel {
 public:
  SegModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Adds zero-effect adapters: A small random, B zero.
  void attach_lora(std::uint64_t seed);
  bool has_lora() const;

  Tensor encode(const Tensor& image, bool lora_enabled = true) const;
  Tensor encode_prompt(const BoxPrompt& box) const;
  SegOutputs decode(const Tensor& embedding, const Tensor& prompt) const;
  SegOutputs forward(const Tensor& image, const BoxPrompt& box) const;

  void set_train_mode(TrainMode mode);
  std::vector<std::string> trainable_names() const;
  std::vector<Tensor> trainable() const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);

  // Deep copy sharing no storage.
  SegModel clone() const;

  static bool is_buffer(const std::string& name);
  static bool is_lora(const std::string& name);
  static bool is_prompt_encoder(const std::string& name);
  static bool is_mask_decoder(const std::string& name);
  static bool is_iou_head(const std::string& name);
  static bool is_encoder(const std::string& name);

 private:
  SegModel() = default;
  void add_param(const std::string& name, Shape shape, double scale, std::uint64_t seed);
  Tensor dense_positional() const;
  Tensor projection(const std::string& block, char which, const Tensor& x, bool lora_enabled) const;

  ModelConfig config_;
  std::map<std::string, Tensor> params_;
};

// Permutation taking [g*g, 4*c] sub-pixel features to [(2g)*(2g), c].
std::vector<std::size_t> pixel_shuffle_index(std::size_t grid, std::size_t channels);
// [3,S,S] image to [tokens, 3*P*P] patch rows.
std::vector<std::size_t> patchify_index(std::size_t image_size, std::size_t patch_size);

}  // namespace samtta
