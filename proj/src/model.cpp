#include "samtta/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "samtta/rng.hpp"

namespace samtta {

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.encoder_blocks = 1;
  c.attention_heads = 2;
  c.lowres_size = 8;
  c.highres_size = 16;
  c.lora_rank = 4;
  c.mlp_hidden = 16;
  return c;
}

std::size_t ModelConfig::highres_stages() const {
  std::size_t stages = 0;
  for (std::size_t s = lowres_size; s < highres_size; s *= 2) ++stages;
  return stages;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw ShapeError("model config: " + why); };
  if (patch_size == 0 || image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (lowres_size == 0 || highres_size % lowres_size != 0) fail("lowres_size must divide highres_size");
  if (lowres_size != 2 * grid()) fail("lowres_size must be twice the token grid");
  if (highres_size != image_size) fail("highres_size must equal image_size");
  if ((lowres_size << highres_stages()) != highres_size) fail("highres_size / lowres_size must be a power of two");
  if (attention_heads == 0 || embed_dim % attention_heads != 0) fail("embed_dim must be divisible by attention_heads");
  if (embed_dim % 4 != 0) fail("embed_dim must be a multiple of 4");
  if (lora_rank != 4) fail("lora_rank must be 4");
  if (mlp_hidden == 0 || encoder_blocks == 0) fail("mlp_hidden and encoder_blocks must be positive");
}

std::vector<std::size_t> pixel_shuffle_index(std::size_t grid, std::size_t channels) {
  const std::size_t out_grid = 2 * grid;
  std::vector<std::size_t> index(out_grid * out_grid * channels);
  for (std::size_t y = 0; y < grid; ++y) {
    for (std::size_t x = 0; x < grid; ++x) {
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const std::size_t out_row = (2 * y + dy) * out_grid + (2 * x + dx);
          for (std::size_t c = 0; c < channels; ++c) {
            index[out_row * channels + c] = (y * grid + x) * 4 * channels + (dy * 2 + dx) * channels + c;
          }
        }
      }
    }
  }
  return index;
}

std::vector<std::size_t> patchify_index(std::size_t image_size, std::size_t patch_size) {
  const std::size_t grid = image_size / patch_size;
  const std::size_t cols = 3 * patch_size * patch_size;
  std::vector<std::size_t> index(grid * grid * cols);
  for (std::size_t py = 0; py < grid; ++py) {
    for (std::size_t px = 0; px < grid; ++px) {
      const std::size_t row = py * grid + px;
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t iy = 0; iy < patch_size; ++iy) {
          for (std::size_t ix = 0; ix < patch_size; ++ix) {
            const std::size_t col = (c * patch_size + iy) * patch_size + ix;
            const std::size_t y = py * patch_size + iy, x = px * patch_size + ix;
            index[row * cols + col] = (c * image_size + y) * image_size + x;
          }
        }
      }
    }
  }
  return index;
}

Tensor lora_delta(const Tensor& w_base, const Tensor& a, const Tensor& b, double scaling) {
  if (w_base.rank() != 2 || a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) ||
      a.dim(0) != w_base.dim(0) || b.dim(1) != w_base.dim(1)) {
    throw ShapeError("lora: rank mismatch between A " + shape_str(a.shape()) + ", B " + shape_str(b.shape()) +
                     " and W " + shape_str(w_base.shape()));
  }
  return add(w_base, mul(matmul(a, b), scaling));
}

namespace {

std::size_t upsample_channels(std::size_t embed_dim, std::size_t stage) {
  std::size_t c = embed_dim / 2;
  for (std::size_t s = 0; s < stage; ++s) c = std::max<std::size_t>(c / 2, 4);
  return c;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

// [sin(2*pi*p*G), cos(2*pi*p*G)] for coordinates already mapped to [-1,1].
std::vector<double> fourier_features(double px, double py, std::span<const double> freq, std::size_t nfreq) {
  std::vector<double> f(2 * nfreq);
  for (std::size_t k = 0; k < nfreq; ++k) {
    const double arg = 2.0 * std::numbers::pi * (px * freq[k] + py * freq[nfreq + k]);
    f[k] = std::sin(arg);
    f[nfreq + k] = std::cos(arg);
  }
  return f;
}

}  // namespace

void SegModel::add_param(const std::string& name, Shape shape, double scale, std::uint64_t seed) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n, 0.0);
  if (scale != 0.0) {
    auto rng = make_rng(seed, name);
    std::normal_distribution<double> normal(0.0, scale);
    for (auto& v : data) v = normal(rng);
  }
  params_.emplace(name, Tensor::parameter(std::move(shape), std::move(data)));
}

SegModel::SegModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim, hid = config_.mlp_hidden, t = config_.tokens();
  const std::size_t patch_in = 3 * config_.patch_size * config_.patch_size;
  auto w = [&](const std::string& name, std::size_t in, std::size_t out) {
    add_param(name + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), seed);
    add_param(name + ".b", {out}, 0.0, seed);
  };
  auto ln = [&](const std::string& name) {
    params_.emplace(name + ".g", Tensor::parameter({d}, std::vector<double>(d, 1.0)));
    add_param(name + ".b", {d}, 0.0, seed);
  };

  w("enc.patch", patch_in, d);
  add_param("enc.pos", {t, d}, 0.1, seed);
  for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
    const std::string p = "enc.blk" + std::to_string(b);
    ln(p + ".ln1");
    for (char which : {'q', 'k', 'v', 'o'}) w(p + ".attn." + which, d, d);
    ln(p + ".ln2");
    w(p + ".mlp.fc1", d, hid);
    w(p + ".mlp.fc2", hid, d);
  }
  ln("enc.ln_out");

  add_param("prompt.freq", {2, d / 4}, 1.5, seed);
  w("prompt.fc1", d, d);
  w("prompt.fc2", d, d);

  add_param("dec.freq", {2, d / 2}, 1.5, seed);
  for (char which : {'q', 'k', 'v', 'o'}) w(std::string("dec.xattn.") + which, d, d);
  ln("dec.ln1");
  w("dec.mlp.fc1", d, hid);
  w("dec.mlp.fc2", hid, d);
  ln("dec.ln2");
  add_param("dec.fuse.img.w", {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), seed);
  add_param("dec.fuse.pe.w", {d, d}, 1.0 / std::sqrt(static_cast<double>(d)), seed);
  w("dec.fuse.tok", d, d);
  w("dec.fuse2", d, d);
  const std::size_t c0 = upsample_channels(d, 0);
  w("dec.up0", d, 4 * c0);
  w("dec.mask_low", c0, 1);
  const std::size_t stages = config_.highres_stages();
  for (std::size_t s = 1; s <= stages; ++s) {
    const std::size_t cin = upsample_channels(d, s - 1);
    const std::size_t cout = s == stages ? 1 : upsample_channels(d, s);
    w("dec.up" + std::to_string(s), cin, 4 * cout);
  }

  w("iou.fc1", 2 * d, d);
  w("iou.fc2", d, 1);

  set_train_mode(TrainMode::Pretrain);
}

void SegModel::attach_lora(std::uint64_t seed) {
  if (has_lora()) return;
  const std::size_t d = config_.embed_dim, r = config_.lora_rank;
  std::string targets = config_.lora_targets == LoraTargets::QV ? "qv" : "qkvo";
  for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
    for (char which : targets) {
      const std::string p = "lora.blk" + std::to_string(b) + "." + which;
      add_param(p + ".a", {d, r}, 1.0 / std::sqrt(static_cast<double>(d)), seed);
      add_param(p + ".b", {r, d}, 0.0, seed);
    }
  }
}

bool SegModel::has_lora() const {
  return std::any_of(params_.begin(), params_.end(), [](const auto& kv) { return is_lora(kv.first); });
}

const Tensor& SegModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("model has no tensor named '" + name + "'");
  return it->second;
}

Tensor& SegModel::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("model has no tensor named '" + name + "'");
  return it->second;
}

bool SegModel::is_buffer(const std::string& n) { return n == "prompt.freq" || n == "dec.freq"; }
bool SegModel::is_lora(const std::string& n) { return n.rfind("lora.", 0) == 0; }
bool SegModel::is_prompt_encoder(const std::string& n) { return n.rfind("prompt.", 0) == 0; }
bool SegModel::is_mask_decoder(const std::string& n) { return n.rfind("dec.", 0) == 0; }
bool SegModel::is_iou_head(const std::string& n) { return n.rfind("iou.", 0) == 0; }
bool SegModel::is_encoder(const std::string& n) { return n.rfind("enc.", 0) == 0; }

void SegModel::set_train_mode(TrainMode mode) {
  for (auto& [name, tensor] : params_) {
    bool trainable = false;
    switch (mode) {
      case TrainMode::Frozen:
        break;
      case TrainMode::Pretrain:
        trainable = !is_buffer(name) && !is_lora(name);
        break;
      case TrainMode::Adapt:
        trainable = is_lora(name) || (is_prompt_encoder(name) && !is_buffer(name));
        break;
    }
    tensor.set_requires_grad(trainable);
  }
}

std::vector<std::string> SegModel::trainable_names() const {
  std::vector<std::string> names;
  for (const auto& [name, tensor] : params_) {
    if (tensor.requires_grad()) names.push_back(name);
  }
  return names;
}

std::vector<Tensor> SegModel::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [name, tensor] : params_) {
    if (tensor.requires_grad()) out.push_back(tensor);
  }
  return out;
}

SegModel SegModel::clone() const {
  SegModel copy;
  copy.config_ = config_;
  for (const auto& [name, tensor] : params_) copy.params_.emplace(name, tensor.clone());
  return copy;
}

Tensor SegModel::projection(const std::string& block, char which, const Tensor& x, bool lora_enabled) const {
  const std::string base = "enc." + block + ".attn." + which;
  Tensor weight = param(base + ".w");
  const std::string lora = "lora." + block + "." + which;
  if (lora_enabled && params_.count(lora + ".a")) {
    weight = lora_delta(weight, param(lora + ".a"), param(lora + ".b"),
                        1.0 / static_cast<double>(config_.lora_rank));
  }
  return linear(x, weight, param(base + ".b"));
}

Tensor SegModel::encode(const Tensor& image, bool lora_enabled) const {
  const std::size_t s = config_.image_size;
  if (image.shape() != Shape{3, s, s}) {
    throw ShapeError("encode: expected image of shape " + shape_str({3, s, s}) + ", got " + shape_str(image.shape()));
  }
  const std::size_t d = config_.embed_dim, t = config_.tokens();
  const std::size_t heads = config_.attention_heads, dh = d / heads;
  const std::size_t patch_in = 3 * config_.patch_size * config_.patch_size;
  Tensor patches = gather(image, patchify_index(s, config_.patch_size), {t, patch_in});
  Tensor x = add(linear(patches, param("enc.patch.w"), param("enc.patch.b")), param("enc.pos"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
    const std::string blk = "blk" + std::to_string(b);
    const std::string p = "enc." + blk;
    Tensor h = layer_norm(x, param(p + ".ln1.g"), param(p + ".ln1.b"));
    Tensor q = projection(blk, 'q', h, lora_enabled);
    Tensor k = projection(blk, 'k', h, lora_enabled);
    Tensor v = projection(blk, 'v', h, lora_enabled);
    std::vector<Tensor> head_out;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tensor qh = slice(q, 1, hd * dh, dh);
      Tensor kh = slice(k, 1, hd * dh, dh);
      Tensor vh = slice(v, 1, hd * dh, dh);
      Tensor att = softmax(mul(matmul(qh, transpose(kh)), scale), 1);
      head_out.push_back(matmul(att, vh));
    }
    Tensor attn = projection(blk, 'o', concat(head_out, 1), lora_enabled);
    x = add(x, attn);
    Tensor h2 = layer_norm(x, param(p + ".ln2.g"), param(p + ".ln2.b"));
    Tensor mlp = linear(gelu(linear(h2, param(p + ".mlp.fc1.w"), param(p + ".mlp.fc1.b"))), param(p + ".mlp.fc2.w"),
                        param(p + ".mlp.fc2.b"));
    x = add(x, mlp);
  }
  return layer_norm(x, param("enc.ln_out.g"), param("enc.ln_out.b"));
}

Tensor SegModel::encode_prompt(const BoxPrompt& box) const {
  const double s = config_.image_size;
  if (!(box.x0 < box.x1 && box.y0 < box.y1)) throw DomainError("encode_prompt: degenerate box (zero area)");
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > s || box.y1 > s) throw DomainError("encode_prompt: box outside image");
  const std::size_t d = config_.embed_dim, nfreq = d / 4;
  const auto freq = param("prompt.freq").data();
  auto to_unit = [s](double v) { return 2.0 * (v / s) - 1.0; };
  auto f0 = fourier_features(to_unit(box.x0), to_unit(box.y0), freq, nfreq);
  auto f1 = fourier_features(to_unit(box.x1), to_unit(box.y1), freq, nfreq);
  f0.insert(f0.end(), f1.begin(), f1.end());
  Tensor features = Tensor::from({1, d}, std::move(f0));
  Tensor h = gelu(linear(features, param("prompt.fc1.w"), param("prompt.fc1.b")));
  return linear(h, param("prompt.fc2.w"), param("prompt.fc2.b"));
}

Tensor SegModel::dense_positional() const {
  const std::size_t g = config_.grid(), d = config_.embed_dim, nfreq = d / 2;
  const auto freq = param("dec.freq").data();
  std::vector<double> pe;
  pe.reserve(g * g * d);
  for (std::size_t y = 0; y < g; ++y) {
    for (std::size_t x = 0; x < g; ++x) {
      const double px = 2.0 * ((static_cast<double>(x) + 0.5) / static_cast<double>(g)) - 1.0;
      const double py = 2.0 * ((static_cast<double>(y) + 0.5) / static_cast<double>(g)) - 1.0;
      auto f = fourier_features(px, py, freq, nfreq);
      pe.insert(pe.end(), f.begin(), f.end());
    }
  }
  return Tensor::from({g * g, d}, std::move(pe));
}

SegOutputs SegModel::decode(const Tensor& embedding, const Tensor& prompt) const {
  const std::size_t d = config_.embed_dim, t = config_.tokens(), g = config_.grid();
  if (embedding.shape() != Shape{t, d}) {
    throw ShapeError("decode: embedding must be " + shape_str({t, d}) + ", got " + shape_str(embedding.shape()));
  }
  if (prompt.shape() != Shape{1, d}) {
    throw ShapeError("decode: prompt must be " + shape_str({1, d}) + ", got " + shape_str(prompt.shape()));
  }
  const Tensor pe = dense_positional();

  // Prompt token attends to the image tokens.
  Tensor q = linear(prompt, param("dec.xattn.q.w"), param("dec.xattn.q.b"));
  Tensor k = linear(add(embedding, pe), param("dec.xattn.k.w"), param("dec.xattn.k.b"));
  Tensor v = linear(embedding, param("dec.xattn.v.w"), param("dec.xattn.v.b"));
  Tensor att = softmax(mul(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d))), 1);
  Tensor tok = add(prompt, linear(matmul(att, v), param("dec.xattn.o.w"), param("dec.xattn.o.b")));
  tok = layer_norm(tok, param("dec.ln1.g"), param("dec.ln1.b"));
  tok = add(tok, linear(gelu(linear(tok, param("dec.mlp.fc1.w"), param("dec.mlp.fc1.b"))), param("dec.mlp.fc2.w"),
                        param("dec.mlp.fc2.b")));
  tok = layer_norm(tok, param("dec.ln2.g"), param("dec.ln2.b"));

  // Per-token fusion of image features, position and prompt.
  Tensor bias = add(reshape(matmul(tok, param("dec.fuse.tok.w")), {d}), param("dec.fuse.tok.b"));
  Tensor fused = gelu(add_row(add(matmul(embedding, param("dec.fuse.img.w")), matmul(pe, param("dec.fuse.pe.w"))), bias));
  fused = add(fused, gelu(linear(fused, param("dec.fuse2.w"), param("dec.fuse2.b"))));

  const std::size_t c0 = upsample_channels(d, 0);
  Tensor feat = gelu(gather(linear(fused, param("dec.up0.w"), param("dec.up0.b")), pixel_shuffle_index(g, c0),
                            {4 * t, c0}));
  const std::size_t low = config_.lowres_size;
  Tensor mask_low = reshape(linear(feat, param("dec.mask_low.w"), param("dec.mask_low.b")), {low, low});

  std::size_t grid = low;
  const std::size_t stages = config_.highres_stages();
  for (std::size_t s = 1; s <= stages; ++s) {
    const std::string name = "dec.up" + std::to_string(s);
    const std::size_t cout = s == stages ? 1 : upsample_channels(d, s);
    feat = gather(linear(feat, param(name + ".w"), param(name + ".b")), pixel_shuffle_index(grid, cout),
                  {4 * grid * grid, cout});
    if (s != stages) feat = gelu(feat);
    grid *= 2;
  }
  Tensor mask_high = reshape(feat, {grid, grid});

  Tensor pooled = reshape(mul(sum_axis(fused, 0), 1.0 / static_cast<double>(t)), {1, d});
  Tensor head_in = concat({tok, pooled}, 1);
  Tensor iou_logit = linear(gelu(linear(head_in, param("iou.fc1.w"), param("iou.fc1.b"))), param("iou.fc2.w"),
                            param("iou.fc2.b"));
  Tensor iou = reshape(sigmoid(iou_logit), {});
  return SegOutputs{mask_low, mask_high, iou, embedding};
}

SegOutputs SegModel::forward(const Tensor& image, const BoxPrompt& box) const {
  return decode(encode(image), encode_prompt(box));
}

}  // namespace samtta
