#pragma once

// Online test-time adaptation over a stream of images, one image at a time.
//
// sam-tta: SBCT remap -> student forward -> detached teacher forward on the
// same remapped image -> running-max update -> lambda_DPC -> L_TTA -> Adam on
// {SBCT} and {LoRA, prompt encoder} -> EMA teacher -> fresh student forward
// whose high-res mask is the saved prediction.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "samtta/image_io.hpp"
#include "samtta/losses.hpp"
#include "samtta/metrics.hpp"
#include "samtta/model.hpp"
#include "samtta/optim.hpp"
#include "samtta/sbct.hpp"
#include "samtta/synthdata.hpp"

namespace samtta {

enum class Strategy {
  SamTta,
  Tent,
  MeanTeacher,
  None,
  // Model fully frozen; only the 12 SBCT scalars adapt, against a teacher
  // whose SBCT is an EMA of the student's (calibration experiment).
  SbctOnly,
};

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy strategy);

struct AdaptConfig {
  double lr_sbct = 0.01;
  double lr_lora_prompt = 0.001;
  double weight_decay = 1e-4;
  double ema_alpha = 0.95;
  std::size_t steps_per_image = 1;
  double lambda_ifc = 1.0;
  Strategy strategy = Strategy::SamTta;
  std::uint64_t seed = 0;
  // Clear Adam moments before each image instead of carrying them over.
  bool reset_optimizer = false;
  // Fold S_IoU into the running max at every gradient step, not only the first.
  bool update_max_every_step = false;

  void validate() const;
};

struct StepResult {
  std::vector<double> prediction;  // high-res logits after the update
  double s_iou = 0;                // predicted IoU of that final forward
  LossBreakdown loss;              // from the last gradient step taken
  bool skipped = false;
  std::string note;
};

// theta_T <- alpha * theta_T + (1 - alpha) * theta_S for every tensor whose
// values differ; identical tensors are fixed points and are left untouched.
void ema_update(SegModel& teacher, const SegModel& student, double alpha);
void ema_update(Sbct& teacher, const Sbct& student, double alpha);

class Adapter {
 public:
  Adapter(const SegModel& pretrained, AdaptConfig config);

  StepResult step(const Image& image, const BoxPrompt& box);

  const SegModel& student() const { return student_; }
  const SegModel& teacher() const { return teacher_; }
  const Sbct& sbct() const { return sbct_; }
  const Sbct& teacher_sbct() const { return teacher_sbct_; }
  const RunningMax& running_max() const { return running_max_; }
  const AdaptConfig& config() const { return config_; }
  std::size_t images_seen() const { return images_; }

  // Input the model sees for `image` under the current state (no gradient).
  Tensor model_input(const Image& image) const;

 private:
  Tensor remap(const Sbct& sbct, const Tensor& image) const;
  StepResult final_prediction(const Tensor& image, const BoxPrompt& box, StepResult result) const;

  AdaptConfig config_;
  SegModel student_;
  SegModel teacher_;
  Sbct sbct_;
  Sbct teacher_sbct_;
  std::unique_ptr<Adam> optimizer_;
  RunningMax running_max_;
  std::size_t images_ = 0;
};

struct StreamResult {
  std::vector<MetricsRow> rows;
  std::vector<StepResult> steps;
  std::vector<std::string> warnings;
};

struct StreamOutputs {
  std::filesystem::path out_dir;                  // pred_%05d.pgm, metrics.csv, adapted.ckpt
  std::optional<std::filesystem::path> dump_sbct;  // sbct_%05d.csv / .ppm
};

// Evaluates one prediction against ground truth. The loss columns come from
// `step`; ground truth is only read here.
MetricsRow score_prediction(std::size_t index, const StepResult& step, std::span<const double> gt,
                            std::size_t height, std::size_t width);

// Runs the adapter over `samples` in order. When `outputs` is given the
// per-image masks, metrics.csv and the adapted student are written there.
StreamResult adapt_stream(Adapter& adapter, const std::vector<StreamSample>& samples,
                          const StreamOutputs* outputs = nullptr);

// Same, reading samples lazily from a manifest; an unreadable sample aborts
// with its index.
StreamResult adapt_manifest(Adapter& adapter, const std::filesystem::path& manifest, const StreamOutputs& outputs,
                            bool minmax_normalize = false);

// 65 samples of each SBCT curve as CSV "t,c1,c2,c3".
std::string sbct_curve_csv(const Sbct& sbct);

}  // namespace samtta
