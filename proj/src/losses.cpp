#include "samtta/losses.hpp"

#include <algorithm>
#include <cmath>

namespace samtta {

double iou_confidence(double s_iou) { return -std::log(1.0 - s_iou + kEps); }

double RunningMax::update(double s_iou) {
  m_ = std::max(m_, iou_confidence(s_iou));
  ++count_;
  return m_;
}

double lambda_dpc(double s_iou, const RunningMax& running_max) {
  if (running_max.count() == 0) {
    throw GraphError("lambda_dpc: running maximum has not been updated with this sample");
  }
  // Every S_IoU seen so far was <= eps: all confidences are equal (zero).
  if (running_max.value() <= 0.0) return 1.0;
  return iou_confidence(s_iou) / running_max.value();
}

double mask_iou(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("mask_iou: masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] > 0.5, pb = b[i] > 0.5;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> binarize_logits(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

Tensor iou_head_loss(const Tensor& s_iou, const Tensor& mask_high_logits, const Tensor& gt) {
  if (mask_high_logits.shape() != gt.shape()) {
    throw ShapeError("iou_head_loss: mask " + shape_str(mask_high_logits.shape()) + " vs ground truth " +
                     shape_str(gt.shape()));
  }
  const double target = mask_iou(binarize_logits(mask_high_logits.data()), gt.data());
  return pow(add(s_iou, -target), 2.0);
}

Tensor l_icm(const Tensor& s_iou) { return 1.0 - s_iou; }

Tensor soft_dice(const Tensor& a, const Tensor& b, double eps) {
  if (a.shape() != b.shape()) {
    throw ShapeError("soft_dice: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor inter = mul(sum(mul(a, b)), 2.0);
  Tensor denom = add(add(sum(a), sum(b)), eps);
  return 1.0 - div(add(inter, eps), denom);
}

Tensor l_dpc(const SegOutputs& student, const SegOutputs& teacher) {
  if (student.mask_high.shape() != teacher.mask_high.shape() ||
      student.mask_low.shape() != teacher.mask_low.shape()) {
    throw ShapeError("l_dpc: student and teacher mask resolutions differ");
  }
  return add(soft_dice(sigmoid(student.mask_high), sigmoid(teacher.mask_high.detach())),
             soft_dice(sigmoid(student.mask_low), sigmoid(teacher.mask_low.detach())));
}

Tensor l_ifc(const Tensor& z_student, const Tensor& z_teacher, double tau) {
  if (z_student.shape() != z_teacher.shape() || z_student.rank() != 2) {
    throw ShapeError("l_ifc: embeddings " + shape_str(z_student.shape()) + " and " + shape_str(z_teacher.shape()) +
                     " must be matching [tokens, D]");
  }
  const double temperature = tau + kEps;
  // Softmax over the token axis normalises every channel independently.
  Tensor log_ps = log_softmax(z_student, 0, temperature);
  Tensor log_pt = log_softmax(z_teacher.detach(), 0, temperature);
  Tensor pt = exp(log_pt);
  return mul(sum(mul(pt, sub(log_pt, log_ps))), 1.0 / static_cast<double>(z_student.numel()));
}

TtaLoss tta_loss(const SegOutputs& student, const SegOutputs& teacher, double lambda_dpc_value,
                 double lambda_ifc) {
  const double tau = student.s_iou();
  Tensor icm = l_icm(student.iou);
  Tensor dpc = l_dpc(student, teacher);
  Tensor ifc = l_ifc(student.embedding, teacher.embedding, tau);
  Tensor total = add(add(icm, mul(dpc, lambda_dpc_value)), mul(ifc, lambda_ifc));
  LossBreakdown parts;
  parts.l_icm = icm.item();
  parts.l_dpc = dpc.item();
  parts.l_ifc = ifc.item();
  parts.lambda_dpc = lambda_dpc_value;
  parts.lambda_ifc = lambda_ifc;
  parts.total = total.item();
  parts.s_iou = tau;
  return {total, parts};
}

TtaLoss total_tta_loss(const SegOutputs& student, const SegOutputs& teacher, RunningMax& running_max,
                       double lambda_ifc) {
  running_max.update(student.s_iou());
  return tta_loss(student, teacher, lambda_dpc(student.s_iou(), running_max), lambda_ifc);
}

Tensor entropy_loss(const Tensor& logits, double eps) {
  Tensor p = clamp(sigmoid(logits), eps, 1.0 - eps);
  Tensor q = 1.0 - p;
  return neg(mean(add(mul(p, log(p)), mul(q, log(q)))));
}

}  // namespace samtta
