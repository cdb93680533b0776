#include "samtta/pretrain.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "samtta/error.hpp"
#include "samtta/losses.hpp"
#include "samtta/optim.hpp"
#include "samtta/rng.hpp"

namespace samtta {

namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DomainError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::string show(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_number(v);
  } else {
    return std::to_string(v);
  }
}

}  // namespace

std::vector<std::string> PretrainConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : PretrainConfig{}.entries()) out.push_back(k);
  return out;
}

std::vector<std::pair<std::string, std::string>> PretrainConfig::entries() const {
  return {
      {"epochs", show(epochs)},
      {"lr", show(lr)},
      {"seed", show(seed)},
      {"n_train", show(n_train)},
      {"n_val", show(n_val)},
      {"w_dice", show(w_dice)},
      {"w_bce", show(w_bce)},
      {"w_low", show(w_low)},
      {"w_iou", show(w_iou)},
      {"box_jitter", show(box_jitter)},
      {"image_size", show(model.image_size)},
      {"patch_size", show(model.patch_size)},
      {"embed_dim", show(model.embed_dim)},
      {"encoder_blocks", show(model.encoder_blocks)},
      {"attention_heads", show(model.attention_heads)},
      {"lowres_size", show(model.lowres_size)},
      {"highres_size", show(model.highres_size)},
      {"lora_rank", show(model.lora_rank)},
      {"mlp_hidden", show(model.mlp_hidden)},
  };
}

void PretrainConfig::set(const std::string& key, const std::string& value) {
  using U = std::uint32_t;
  if (key == "epochs") epochs = parse_value<std::size_t>(key, value);
  else if (key == "lr") lr = parse_value<double>(key, value);
  else if (key == "seed") seed = parse_value<std::uint64_t>(key, value);
  else if (key == "n_train") n_train = parse_value<std::size_t>(key, value);
  else if (key == "n_val") n_val = parse_value<std::size_t>(key, value);
  else if (key == "w_dice") w_dice = parse_value<double>(key, value);
  else if (key == "w_bce") w_bce = parse_value<double>(key, value);
  else if (key == "w_low") w_low = parse_value<double>(key, value);
  else if (key == "w_iou") w_iou = parse_value<double>(key, value);
  else if (key == "box_jitter") box_jitter = parse_value<double>(key, value);
  else if (key == "image_size") model.image_size = parse_value<U>(key, value);
  else if (key == "patch_size") model.patch_size = parse_value<U>(key, value);
  else if (key == "embed_dim") model.embed_dim = parse_value<U>(key, value);
  else if (key == "encoder_blocks") model.encoder_blocks = parse_value<U>(key, value);
  else if (key == "attention_heads") model.attention_heads = parse_value<U>(key, value);
  else if (key == "lowres_size") model.lowres_size = parse_value<U>(key, value);
  else if (key == "highres_size") model.highres_size = parse_value<U>(key, value);
  else if (key == "lora_rank") model.lora_rank = parse_value<U>(key, value);
  else if (key == "mlp_hidden") model.mlp_hidden = parse_value<U>(key, value);
  else throw DomainError("unknown config key '" + key + "'");
}

void PretrainConfig::validate() const {
  if (epochs == 0) throw DomainError("epochs must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw DomainError("lr must be positive");
  if (n_train == 0) throw DomainError("n_train must be positive");
  if (n_val == 0) throw DomainError("n_val must be positive");
  for (double w : {w_dice, w_bce, w_low, w_iou}) {
    if (!(w > 0) || !std::isfinite(w)) throw DomainError("loss weights must be positive");
  }
  if (!(box_jitter >= 0)) throw DomainError("box_jitter must be non-negative");
  model.validate();
  if (model.image_size != kCanvas) {
    throw DomainError("image_size must equal the synthetic canvas (" + std::to_string(kCanvas) + ")");
  }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DomainError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw DomainError("config line " + std::to_string(lineno) + ": empty key");
    if (out.count(key)) throw DomainError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

PretrainConfig parse_pretrain_config(const std::string& text) {
  PretrainConfig config;
  for (const auto& [k, v] : parse_key_values(text)) config.set(k, v);
  return config;
}

Tensor downsample_mask(const Tensor& gt, std::size_t size) {
  if (gt.rank() != 2 || gt.shape()[0] != gt.shape()[1] || gt.shape()[0] % size != 0) {
    throw ShapeError("downsample_mask: expected a square mask divisible by " + std::to_string(size));
  }
  const std::size_t n = gt.shape()[0], f = n / size;
  std::vector<double> out(size * size, 0.0);
  const auto d = gt.data();
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) out[(y / f) * size + x / f] += d[y * n + x];
  }
  for (auto& v : out) v /= static_cast<double>(f * f);
  return Tensor::from({size, size}, std::move(out));
}

PretrainLoss pretrain_loss(const SegOutputs& out, const Tensor& gt, const PretrainConfig& config) {
  const Tensor gt_low = downsample_mask(gt, out.mask_low.shape()[0]);
  PretrainLoss l;
  const Tensor dh = soft_dice(sigmoid(out.mask_high), gt);
  const Tensor bh = bce_with_logits(out.mask_high, gt);
  const Tensor dl = soft_dice(sigmoid(out.mask_low), gt_low);
  const Tensor iou = iou_head_loss(out.iou, out.mask_high, gt);
  l.dice_high = dh.item();
  l.bce_high = bh.item();
  l.dice_low = dl.item();
  l.iou = iou.item();
  l.total = dh * config.w_dice + bh * config.w_bce + dl * config.w_low + iou * config.w_iou;
  return l;
}

Tensor plain_input(const Image& image) {
  if (image.channels == 3) return image.tensor();
  if (image.channels == 1) return replicate_channels(image).tensor();
  throw ShapeError("expected a 1- or 3-channel image, got " + std::to_string(image.channels));
}

std::vector<MetricsRow> frozen_rows(const SegModel& model, const std::vector<StreamSample>& samples) {
  if (samples.empty()) throw DomainError("validate: empty sample set");
  NoGradGuard guard;
  std::vector<MetricsRow> rows;
  rows.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const SegOutputs out = model.forward(plain_input(s.image), s.box);
    const auto bin = binarize_logits(out.mask_high.data());
    MetricsRow r;
    r.index = i;
    r.dice = dice(bin, s.gt);
    const auto h = hd95(bin, s.gt, s.image.height, s.image.width);
    r.hd95_defined = h.has_value();
    r.hd95 = h ? *h : hd95_sentinel(s.image.height, s.image.width);
    r.pred_iou = out.s_iou();
    r.true_iou = mask_iou(bin, s.gt);
    r.l_icm = 1.0 - r.pred_iou;
    r.l_dpc = r.l_ifc = r.lambda_dpc = std::numeric_limits<double>::quiet_NaN();
    rows.push_back(r);
  }
  return rows;
}

MetricsSummary validate(const SegModel& model, const std::vector<StreamSample>& samples) {
  return summarize(frozen_rows(model, samples));
}

namespace {

BoxPrompt jitter_box(const BoxPrompt& box, double amount, double canvas, Rng& rng) {
  if (amount <= 0) return box;
  std::uniform_real_distribution<double> u(-amount, amount);
  BoxPrompt b{box.x0 + u(rng), box.y0 + u(rng), box.x1 + u(rng), box.y1 + u(rng)};
  b.x0 = std::clamp(b.x0, 0.0, canvas - 1.0);
  b.y0 = std::clamp(b.y0, 0.0, canvas - 1.0);
  b.x1 = std::clamp(b.x1, b.x0 + 1.0, canvas);
  b.y1 = std::clamp(b.y1, b.y0 + 1.0, canvas);
  return b;
}

}  // namespace

std::vector<StreamSample> pretrain_train_set(const PretrainConfig& config) {
  return gen_source(derive_seed(config.seed, "pretrain-data"), config.n_train);
}

std::vector<StreamSample> pretrain_val_set(const PretrainConfig& config) {
  return gen_source(derive_seed(config.seed, "pretrain-data"), config.n_val, config.n_train);
}

PretrainResult pretrain(const PretrainConfig& config, const std::function<void(const EpochReport&)>& on_epoch) {
  config.validate();
  const auto train = pretrain_train_set(config);
  const auto val = pretrain_val_set(config);

  SegModel model(config.model, derive_seed(config.seed, "init"));
  model.set_train_mode(TrainMode::Pretrain);
  Adam optimizer({{"all", model.trainable(), AdamOptions{config.lr, 0.0}}});

  std::vector<Tensor> inputs, targets;
  for (const auto& s : train) {
    inputs.push_back(plain_input(s.image));
    targets.push_back(Tensor::from({s.image.height, s.image.width}, s.gt));
  }

  PretrainResult result{model.clone(), 0, -1.0, {}};
  std::vector<std::size_t> order(train.size());
  Rng jitter_rng = make_rng(config.seed, "box-jitter");
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(config.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    for (std::size_t i : order) {
      const BoxPrompt box = jitter_box(train[i].box, config.box_jitter, config.model.image_size, jitter_rng);
      const SegOutputs out = model.forward(inputs[i], box);
      const PretrainLoss loss = pretrain_loss(out, targets[i], config);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        current_graph().clear();
        throw Error("pretraining diverged at epoch " + std::to_string(epoch) + " (non-finite loss on sample " +
                    std::to_string(i) + ")");
      }
      loss_sum += value;
      backward(loss.total);
      optimizer.step();
    }
    model.set_train_mode(TrainMode::Frozen);
    EpochReport report{epoch, loss_sum / static_cast<double>(train.size()), validate(model, val).mean_dice, false};
    model.set_train_mode(TrainMode::Pretrain);
    if (report.val_dice > result.best_val_dice) {
      report.improved = true;
      result.best_val_dice = report.val_dice;
      result.best_epoch = epoch;
      result.model = model.clone();
    }
    result.epochs.push_back(report);
    if (on_epoch) on_epoch(report);
  }
  result.model.set_train_mode(TrainMode::Frozen);
  return result;
}

}  // namespace samtta
