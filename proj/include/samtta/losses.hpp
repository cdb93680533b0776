#pragma once

#include <cstddef>

#include "samtta/model.hpp"
#include "samtta/tensor.hpp"

namespace samtta {

inline constexpr double kEps = 1e-6;

struct LossBreakdown {
  double l_icm = 0;
  double l_dpc = 0;
  double l_ifc = 0;
  double lambda_dpc = 0;
  double lambda_ifc = 1;
  double total = 0;
  double s_iou = 0;
};

// Running maximum of -log(1 - S_IoU + eps) over the stream so far.
class RunningMax {
 public:
  // Folds in one sample and returns the new maximum.
  double update(double s_iou);
  double value() const { return m_; }
  std::size_t count() const { return count_; }

 private:
  double m_ = 0.0;
  std::size_t count_ = 0;
};

// -log(1 - S_IoU + eps).
double iou_confidence(double s_iou);

// |A and B| / |A or B| of binary masks; 1 when both are empty.
double mask_iou(std::span<const double> a, std::span<const double> b);
// Threshold logits at 0 (equivalently sigmoid > 0.5).
std::vector<double> binarize_logits(std::span<const double> logits);

// (S_IoU - IoU(bin(M_h), Y))^2 with the IoU target treated as a constant.
Tensor iou_head_loss(const Tensor& s_iou, const Tensor& mask_high_logits, const Tensor& gt);

// 1 - S_IoU.
Tensor l_icm(const Tensor& s_iou);

// 1 - (2 sum(AB) + eps) / (sum(A) + sum(B) + eps).
Tensor soft_dice(const Tensor& a, const Tensor& b, double eps = kEps);

// Soft Dice between sigmoid masks at both resolutions; no gradient reaches the teacher.
Tensor l_dpc(const SegOutputs& student, const SegOutputs& teacher);

// Weight for L_DPC; `running_max` must already include the current sample.
double lambda_dpc(double s_iou, const RunningMax& running_max);

// Channel-wise spatial-softmax KL(teacher || student) at temperature tau+eps,
// averaged over D*H*W. Embeddings are [tokens, D]; tokens form the spatial grid.
Tensor l_ifc(const Tensor& z_student, const Tensor& z_teacher, double tau);

struct TtaLoss {
  Tensor total;
  LossBreakdown parts;
};

// L_ICM + lambda_dpc * L_DPC + lambda_ifc * L_IFC, with tau = student S_IoU.
TtaLoss tta_loss(const SegOutputs& student, const SegOutputs& teacher, double lambda_dpc, double lambda_ifc = 1.0);

// Updates `running_max` with the student's S_IoU, then evaluates tta_loss.
TtaLoss total_tta_loss(const SegOutputs& student, const SegOutputs& teacher, RunningMax& running_max,
                       double lambda_ifc = 1.0);

// Mean binary entropy of sigmoid(logits), p clamped to [eps, 1-eps].
Tensor entropy_loss(const Tensor& logits, double eps = kEps);

}  // namespace samtta
