#include "samtta/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "samtta/checkpoint.hpp"
#include "samtta/error.hpp"
#include "samtta/rng.hpp"

namespace samtta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

LossBreakdown nan_breakdown() {
  LossBreakdown b;
  b.l_icm = b.l_dpc = b.l_ifc = b.lambda_dpc = b.total = b.s_iou = kNaN;
  return b;
}

bool uses_sbct(Strategy s) { return s == Strategy::SamTta || s == Strategy::SbctOnly; }
bool uses_lora(Strategy s) { return s == Strategy::SamTta || s == Strategy::Tent || s == Strategy::MeanTeacher; }

void check_unit_range(const Image& image) {
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const double v = image.data[i];
    if (std::isfinite(v) && (v < 0.0 || v > 1.0)) {
      throw DomainError("input pixel " + std::to_string(i) + " = " + std::to_string(v) +
                        " lies outside [0,1]; normalize the image first");
    }
  }
}

Image tensor_image(const Tensor& t) {
  const auto& s = t.shape();
  Image out(s.size() == 3 ? s[0] : 1, s[s.size() - 2], s[s.size() - 1]);
  const auto d = t.data();
  std::copy(d.begin(), d.end(), out.data.begin());
  return out;
}

}  // namespace

Strategy parse_strategy(const std::string& name) {
  if (name == "sam-tta") return Strategy::SamTta;
  if (name == "tent") return Strategy::Tent;
  if (name == "mean-teacher") return Strategy::MeanTeacher;
  if (name == "none") return Strategy::None;
  if (name == "sbct-only") return Strategy::SbctOnly;
  throw DomainError("unknown strategy '" + name + "' (expected sam-tta, tent, mean-teacher or none)");
}

std::string strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::SamTta: return "sam-tta";
    case Strategy::Tent: return "tent";
    case Strategy::MeanTeacher: return "mean-teacher";
    case Strategy::None: return "none";
    case Strategy::SbctOnly: return "sbct-only";
  }
  return "unknown";
}

void AdaptConfig::validate() const {
  if (!(lr_sbct > 0) || !(lr_lora_prompt > 0)) throw DomainError("learning rates must be positive");
  if (!(weight_decay >= 0)) throw DomainError("weight_decay must be non-negative");
  if (!(ema_alpha > 0 && ema_alpha < 1)) throw DomainError("ema_alpha must lie in (0,1)");
  if (steps_per_image == 0) throw DomainError("steps_per_image must be at least 1");
  if (!(lambda_ifc >= 0) || !std::isfinite(lambda_ifc)) throw DomainError("lambda_ifc must be finite and non-negative");
}

namespace {

void ema_tensor(Tensor& teacher, const Tensor& student, double alpha, const std::string& name) {
  if (teacher.shape() != student.shape()) throw ShapeError("ema_update: shape mismatch for '" + name + "'");
  const auto s = student.data();
  auto t = teacher.mutable_data();
  if (std::equal(t.begin(), t.end(), s.begin())) return;
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
}

}  // namespace

void ema_update(SegModel& teacher, const SegModel& student, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw DomainError("ema_update: alpha must lie in [0,1]");
  auto& tp = teacher.params();
  const auto& sp = student.params();
  if (tp.size() != sp.size()) throw ShapeError("ema_update: teacher and student parameter trees differ in size");
  for (auto& [name, tensor] : tp) {
    auto it = sp.find(name);
    if (it == sp.end()) throw ShapeError("ema_update: student has no parameter '" + name + "'");
    ema_tensor(tensor, it->second, alpha, name);
  }
}

void ema_update(Sbct& teacher, const Sbct& student, double alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw DomainError("ema_update: alpha must lie in [0,1]");
  ema_tensor(teacher.logits(), student.logits(), alpha, "sbct");
}

Adapter::Adapter(const SegModel& pretrained, AdaptConfig config)
    : config_(config),
      student_(pretrained.clone()),
      teacher_(pretrained.clone()),
      sbct_(Sbct::identity()),
      teacher_sbct_(Sbct::identity()) {
  config_.validate();
  if (pretrained.has_lora()) throw DomainError("adapt: checkpoint already carries LoRA adapters");
  if (uses_lora(config_.strategy)) {
    student_.attach_lora(derive_seed(config_.seed, "lora"));
    student_.set_train_mode(TrainMode::Adapt);
  } else {
    student_.set_train_mode(TrainMode::Frozen);
  }
  teacher_ = student_.clone();
  teacher_.set_train_mode(TrainMode::Frozen);
  teacher_sbct_ = sbct_.clone();
  teacher_sbct_.logits().set_requires_grad(false);

  const AdamOptions model_opts{config_.lr_lora_prompt, config_.weight_decay};
  const AdamOptions sbct_opts{config_.lr_sbct, 0.0};
  std::vector<ParamGroup> groups;
  switch (config_.strategy) {
    case Strategy::SamTta:
      groups.push_back({"sbct", {sbct_.logits()}, sbct_opts});
      groups.push_back({"lora+prompt", student_.trainable(), model_opts});
      break;
    case Strategy::Tent:
    case Strategy::MeanTeacher:
      groups.push_back({"lora+prompt", student_.trainable(), model_opts});
      break;
    case Strategy::SbctOnly:
      groups.push_back({"sbct", {sbct_.logits()}, sbct_opts});
      break;
    case Strategy::None:
      break;
  }
  if (!uses_sbct(config_.strategy)) sbct_.logits().set_requires_grad(false);
  if (!groups.empty()) optimizer_ = std::make_unique<Adam>(std::move(groups));
}

Tensor Adapter::remap(const Sbct& sbct, const Tensor& image) const {
  if (uses_sbct(config_.strategy)) return sbct.transform(image);
  if (image.shape().size() == 3) return image;
  return replicate_channels(tensor_image(image)).tensor();
}

Tensor Adapter::model_input(const Image& image) const {
  NoGradGuard guard;
  return remap(sbct_, image.tensor());
}

StepResult Adapter::final_prediction(const Tensor& image, const BoxPrompt& box, StepResult result) const {
  NoGradGuard guard;
  const SegOutputs out = student_.forward(remap(sbct_, image), box);
  const auto d = out.mask_high.data();
  result.prediction.assign(d.begin(), d.end());
  result.s_iou = out.s_iou();
  return result;
}

StepResult Adapter::step(const Image& image, const BoxPrompt& box) {
  ++images_;
  if (!all_finite(image.data)) {
    StepResult r;
    r.prediction.assign(image.height * image.width, kNaN);
    r.s_iou = kNaN;
    r.loss = nan_breakdown();
    r.skipped = true;
    r.note = "non-finite input pixels; update skipped";
    return r;
  }
  check_unit_range(image);
  const Tensor x = image.tensor();
  StepResult result;
  result.loss = nan_breakdown();

  if (config_.strategy == Strategy::None) return final_prediction(x, box, result);
  if (config_.reset_optimizer) optimizer_->reset();

  for (std::size_t k = 0; k < config_.steps_per_image; ++k) {
    Tensor loss;
    LossBreakdown parts = nan_breakdown();
    const Tensor x_hat = remap(sbct_, x);
    const SegOutputs student = student_.forward(x_hat, box);
    const double s_iou = student.s_iou();
    parts.s_iou = s_iou;
    parts.l_icm = 1.0 - s_iou;

    if (config_.strategy == Strategy::Tent) {
      loss = entropy_loss(student.mask_high);
      parts.total = loss.item();
    } else {
      SegOutputs teacher;
      {
        NoGradGuard guard;
        const Tensor teacher_input =
            config_.strategy == Strategy::SbctOnly ? remap(teacher_sbct_, x) : x_hat.detach();
        teacher = teacher_.forward(teacher_input, box);
      }
      if (config_.strategy == Strategy::MeanTeacher) {
        loss = l_dpc(student, teacher);
        parts.l_dpc = loss.item();
        parts.total = parts.l_dpc;
      } else if (std::isfinite(s_iou)) {
        if (k == 0 || config_.update_max_every_step) running_max_.update(s_iou);
        const double lam = lambda_dpc(s_iou, running_max_);
        if (config_.strategy == Strategy::SamTta) {
          TtaLoss tl = tta_loss(student, teacher, lam, config_.lambda_ifc);
          loss = tl.total;
          parts = tl.parts;
        } else {
          const Tensor dpc = l_dpc(student, teacher);
          loss = l_icm(student.iou) + dpc * lam;
          parts.l_dpc = dpc.item();
          parts.l_ifc = 0.0;
          parts.lambda_dpc = lam;
          parts.lambda_ifc = 0.0;
          parts.total = loss.item();
        }
      }
    }

    if (!loss.defined() || !std::isfinite(loss.item())) {
      current_graph().clear();
      result.loss = parts;
      result.skipped = true;
      result.note = "non-finite loss at step " + std::to_string(k) + "; update skipped";
      break;
    }
    backward(loss);
    optimizer_->step();
    if (config_.strategy == Strategy::SbctOnly) {
      ema_update(teacher_sbct_, sbct_, config_.ema_alpha);
    } else if (config_.strategy != Strategy::Tent) {
      ema_update(teacher_, student_, config_.ema_alpha);
    }
    result.loss = parts;
  }
  return final_prediction(x, box, result);
}

MetricsRow score_prediction(std::size_t index, const StepResult& step, std::span<const double> gt,
                            std::size_t height, std::size_t width) {
  const auto bin = binarize_logits(step.prediction);
  MetricsRow row;
  row.index = index;
  row.dice = dice(bin, gt);
  const auto h = hd95(bin, gt, height, width);
  row.hd95_defined = h.has_value();
  row.hd95 = h ? *h : hd95_sentinel(height, width);
  row.pred_iou = step.s_iou;
  row.true_iou = mask_iou(bin, gt);
  row.l_icm = step.loss.l_icm;
  row.l_dpc = step.loss.l_dpc;
  row.l_ifc = step.loss.l_ifc;
  row.lambda_dpc = step.loss.lambda_dpc;
  return row;
}

std::string sbct_curve_csv(const Sbct& sbct) {
  const auto heights = sbct.heights();
  std::ostringstream os;
  os << "t,c1,c2,c3\n";
  for (int i = 0; i <= 64; ++i) {
    const double t = i / 64.0;
    os << format_number(t);
    for (const auto& h : heights) os << ',' << format_number(eval_curve(t, h));
    os << '\n';
  }
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

class StreamWriter {
 public:
  explicit StreamWriter(const StreamOutputs* outputs) : outputs_(outputs) {
    if (!outputs_) return;
    std::filesystem::create_directories(outputs_->out_dir);
    if (outputs_->dump_sbct) std::filesystem::create_directories(*outputs_->dump_sbct);
  }

  void image(std::size_t index, const Adapter& adapter, const Image& input, const StepResult& step) {
    if (!outputs_) return;
    Image mask(1, input.height, input.width);
    const auto bin = binarize_logits(step.prediction);
    std::copy(bin.begin(), bin.end(), mask.data.begin());
    write_pnm(outputs_->out_dir / indexed_name("pred", index, "pgm"), mask);
    if (outputs_->dump_sbct) {
      write_text(*outputs_->dump_sbct / indexed_name("sbct", index, "csv"), sbct_curve_csv(adapter.sbct()));
      if (all_finite(input.data)) {
        write_pnm(*outputs_->dump_sbct / indexed_name("sbct", index, "ppm"),
                  tensor_image(adapter.model_input(input)));
      }
    }
  }

  void finish(const Adapter& adapter, const StreamResult& result) {
    if (!outputs_) return;
    write_text(outputs_->out_dir / "metrics.csv", metrics_csv(result.rows));
    save_checkpoint(adapter.student(), outputs_->out_dir / "adapted.ckpt");
  }

 private:
  const StreamOutputs* outputs_;
};

void record(StreamResult& result, std::size_t index, StepResult step, std::span<const double> gt, const Image& image) {
  if (step.skipped) result.warnings.push_back("image " + std::to_string(index) + ": " + step.note);
  result.rows.push_back(score_prediction(index, step, gt, image.height, image.width));
  result.steps.push_back(std::move(step));
}

}  // namespace

StreamResult adapt_stream(Adapter& adapter, const std::vector<StreamSample>& samples, const StreamOutputs* outputs) {
  if (samples.empty()) throw DomainError("adapt: empty stream");
  StreamWriter writer(outputs);
  StreamResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    StepResult step = adapter.step(s.image, s.box);
    writer.image(i, adapter, s.image, step);
    record(result, i, std::move(step), s.gt, s.image);
  }
  writer.finish(adapter, result);
  return result;
}

StreamResult adapt_manifest(Adapter& adapter, const std::filesystem::path& manifest, const StreamOutputs& outputs,
                            bool minmax_normalize) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw DomainError("adapt: manifest '" + manifest.string() + "' lists no samples");
  StreamWriter writer(&outputs);
  StreamResult result;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    StreamSample s;
    try {
      s = load_sample(entries[i]);
      if (minmax_normalize) normalize_minmax(s.image);
    } catch (const std::exception& e) {
      throw Error("sample " + std::to_string(i) + " unreadable: " + e.what());
    }
    if (std::none_of(s.gt.begin(), s.gt.end(), [](double v) { return v > 0.5; })) {
      result.warnings.push_back("image " + std::to_string(i) + ": empty ground-truth mask; full-canvas box prompt");
    }
    StepResult step = adapter.step(s.image, s.box);
    writer.image(i, adapter, s.image, step);
    record(result, i, std::move(step), s.gt, s.image);
  }
  writer.finish(adapter, result);
  return result;
}

}  // namespace samtta
