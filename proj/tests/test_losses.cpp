#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "samtta/error.hpp"
#include "samtta/losses.hpp"
#include "support.hpp"

using namespace samtta;
using samtta::test::random_values;

namespace {

SegOutputs outputs(std::uint64_t seed, double scale = 1.0, std::size_t low = 4, std::size_t high = 8) {
  auto lv = random_values(low * low, seed);
  auto hv = random_values(high * high, seed + 1);
  for (auto& v : lv) v *= scale;
  for (auto& v : hv) v *= scale;
  SegOutputs o;
  o.mask_low = Tensor::parameter({low, low}, lv);
  o.mask_high = Tensor::parameter({high, high}, hv);
  o.iou = Tensor::parameter({}, {0.3 + 0.4 * (seed % 7) / 7.0});
  o.embedding = Tensor::parameter({16, 3}, random_values(48, seed + 2));
  return o;
}

// Logits pushed to +-30 so that sigmoid masks are numerically binary.
SegOutputs saturate(SegOutputs o) {
  for (Tensor* t : {&o.mask_low, &o.mask_high}) {
    std::vector<double> v(t->data().begin(), t->data().end());
    for (auto& x : v) x = x >= 0 ? 30.0 : -30.0;
    *t = Tensor::parameter(t->shape(), v);
  }
  return o;
}

}  // namespace

TEST_CASE("iou head loss") {
  const Tensor logits = Tensor::from({2, 2}, {5, 5, -5, -5});
  const Tensor gt = Tensor::from({2, 2}, {0, 1, 0, 1});
  CHECK(iou_head_loss(Tensor::scalar(0.5), logits, gt).item() == doctest::Approx(std::pow(0.5 - 1.0 / 3, 2)).epsilon(1e-15));
  CHECK(std::abs(iou_head_loss(Tensor::scalar(0.5), logits, gt).item() - 0.02778) <= 1e-5);
  CHECK(iou_head_loss(Tensor::scalar(1.0 / 3), logits, gt).item() == doctest::Approx(0.0));
  CHECK(iou_head_loss(Tensor::scalar(1.0), logits, Tensor::from({2, 2}, {0, 0, 1, 1})).item() == 1.0);
  CHECK_THROWS_AS(iou_head_loss(Tensor::scalar(0.5), logits, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("iou head loss target is constant") {
  Tensor logits = Tensor::parameter({2, 2}, {5, 5, -5, -5});
  Tensor s = Tensor::parameter({}, {0.5});
  backward(iou_head_loss(s, logits, Tensor::from({2, 2}, {0, 1, 0, 1})));
  for (double g : logits.grad_or_zeros()) CHECK(g == 0.0);
  CHECK(s.grad()[0] == doctest::Approx(2 * (0.5 - 1.0 / 3)));
}

TEST_CASE("mask iou") {
  CHECK(mask_iou(std::vector<double>{0, 0}, std::vector<double>{0, 0}) == 1.0);
  CHECK(mask_iou(std::vector<double>{1, 1, 0, 0}, std::vector<double>{0, 1, 0, 1}) == doctest::Approx(1.0 / 3));
}

TEST_CASE("confidence loss") {
  CHECK(l_icm(Tensor::scalar(1.0)).item() == 0.0);
  CHECK(l_icm(Tensor::scalar(0.8)).item() == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("soft dice") {
  CHECK(std::abs(soft_dice(Tensor::from({2, 2}, {1, 1, 0, 0}), Tensor::from({2, 2}, {0, 1, 0, 1})).item() - 0.5) <= 1e-6);
  CHECK(soft_dice(Tensor::zeros({3, 3}), Tensor::zeros({3, 3})).item() == 0.0);
  const Tensor a = Tensor::from({4}, {1, 0, 1, 1});
  CHECK(soft_dice(a, a).item() <= 1e-6);
  CHECK_THROWS_AS(soft_dice(a, Tensor::zeros({5})), ShapeError);
}

TEST_CASE("dual-scale consistency") {
  const SegOutputs s = saturate(outputs(1));
  SegOutputs t = s;
  t.mask_low = s.mask_low.detach();
  t.mask_high = s.mask_high.detach();
  CHECK(l_dpc(s, t).item() <= 1e-6);
  for (std::uint64_t seed = 2; seed < 12; ++seed) {
    const double v = l_dpc(outputs(seed), outputs(seed + 100)).item();
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
  CHECK_THROWS_AS(l_dpc(outputs(1), outputs(2, 1.0, 4, 16)), ShapeError);
}

TEST_CASE("running max and dpc weight") {
  RunningMax rm;
  CHECK_THROWS_AS(lambda_dpc(0.5, rm), GraphError);
  rm.update(0.9);
  CHECK(lambda_dpc(0.9, rm) == 1.0);
  rm.update(0.5);
  const double expected = -std::log(1 - 0.5 + kEps) / -std::log(1 - 0.9 + kEps);
  CHECK(lambda_dpc(0.5, rm) == expected);
  CHECK(std::abs(lambda_dpc(0.5, rm) - std::log(2.0) / std::log(10.0)) <= 1e-6);
  CHECK(std::abs(lambda_dpc(0.5, rm) - 0.3010) <= 1e-4);
  rm.update(0.9);
  CHECK(lambda_dpc(0.9, rm) == 1.0);
}

TEST_CASE("running max is nondecreasing and weights lie in (0,1]") {
  RunningMax rm;
  double prev = 0;
  for (double s : random_values(200, 31, 1e-3, 1.0 - 1e-3)) {
    rm.update(s);
    CHECK(rm.value() >= prev);
    prev = rm.value();
    const double lam = lambda_dpc(s, rm);
    CHECK(lam > 0.0);
    CHECK(lam <= 1.0);
  }
  // Higher confidence gives a larger weight for a fixed maximum.
  CHECK(lambda_dpc(0.6, rm) < lambda_dpc(0.7, rm));
}

TEST_CASE("feature consistency") {
  const Tensor zt = Tensor::from({2, 1}, {0.0, std::log(3.0)});
  const Tensor zs = Tensor::from({2, 1}, {0.0, 0.0});
  const double v = l_ifc(zs, zt, 1.0 - kEps).item();
  CHECK(std::abs(v - 0.06540) <= 1e-5);
  CHECK(v == doctest::Approx((0.25 * std::log(0.5) + 0.75 * std::log(1.5)) / 2).epsilon(1e-12));
  const Tensor z = Tensor::from({16, 3}, random_values(48, 40));
  CHECK(std::abs(l_ifc(z, z, 0.4).item()) <= 1e-15);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor a = Tensor::from({16, 3}, random_values(48, 50 + seed, -3, 3));
    const Tensor b = Tensor::from({16, 3}, random_values(48, 80 + seed, -3, 3));
    CHECK(l_ifc(a, b, 0.05 + seed * 0.05).item() >= 0.0);
  }
  CHECK_THROWS_AS(l_ifc(zs, Tensor::zeros({3, 1}), 0.5), ShapeError);
}

TEST_CASE("feature softmax normalises each channel over tokens") {
  const Tensor z = Tensor::from({16, 3}, random_values(48, 41, -4, 4));
  const Tensor p = softmax(z, 0, 0.3 + kEps);
  for (std::size_t d = 0; d < 3; ++d) {
    double total = 0;
    for (std::size_t i = 0; i < 16; ++i) total += p.data()[i * 3 + d];
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("combined objective decomposes exactly") {
  RunningMax rm;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SegOutputs s = outputs(seed);
    SegOutputs t = outputs(seed + 50);
    t.mask_low = t.mask_low.detach();
    t.mask_high = t.mask_high.detach();
    t.embedding = t.embedding.detach();
    const TtaLoss loss = total_tta_loss(s, t, rm, 1.0);
    const auto& p = loss.parts;
    CHECK(std::abs(p.total - (p.l_icm + p.lambda_dpc * p.l_dpc + p.lambda_ifc * p.l_ifc)) <= 1e-12);
    CHECK(p.total == loss.total.item());
    CHECK(p.lambda_dpc > 0.0);
    CHECK(p.lambda_dpc <= 1.0);
    CHECK(p.s_iou == s.s_iou());
    if (seed == 0) CHECK(p.lambda_dpc == 1.0);
    current_graph().clear();
  }
  CHECK(rm.count() == 10);
}

TEST_CASE("objective vanishes for a confident self-consistent model") {
  SegOutputs s = saturate(outputs(3));
  s.iou = Tensor::parameter({}, {1.0 - 1e-9});
  SegOutputs t = s;
  t.mask_low = s.mask_low.detach();
  t.mask_high = s.mask_high.detach();
  t.embedding = s.embedding.detach();
  RunningMax rm;
  CHECK(total_tta_loss(s, t, rm).parts.total <= 1e-5);
  current_graph().clear();
}

TEST_CASE("teacher receives no gradient") {
  const SegOutputs s = outputs(4);
  SegOutputs t = outputs(5);
  RunningMax rm;
  rm.update(s.s_iou());
  backward(tta_loss(s, t, lambda_dpc(s.s_iou(), rm)).total);
  for (const Tensor* p : {&t.mask_low, &t.mask_high, &t.embedding}) {
    for (double g : p->grad_or_zeros()) CHECK(g == 0.0);
  }
  bool any = false;
  for (double g : s.mask_high.grad_or_zeros()) any = any || g != 0.0;
  CHECK(any);
}

TEST_CASE("loss gradients match finite differences") {
  SegOutputs s = outputs(6);
  SegOutputs t = outputs(7);
  t.mask_low = t.mask_low.detach();
  t.mask_high = t.mask_high.detach();
  t.embedding = t.embedding.detach();
  const double tau = s.s_iou();
  using samtta::test::gradient_error;
  CHECK(gradient_error({s.iou}, [&] { return l_icm(s.iou); }) <= 1e-6);
  CHECK(gradient_error({s.mask_low, s.mask_high}, [&] { return l_dpc(s, t); }) <= 1e-6);
  CHECK(gradient_error({s.embedding}, [&] { return l_ifc(s.embedding, t.embedding, tau); }) <= 1e-6);
  CHECK(gradient_error({s.mask_high}, [&] { return entropy_loss(s.mask_high); }) <= 1e-6);
}

TEST_CASE("entropy") {
  CHECK(entropy_loss(Tensor::zeros({4, 4})).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(entropy_loss(Tensor::from({2}, {20.0, -20.0})).item() <= 2e-5);
  const double v = entropy_loss(Tensor::full({3, 3}, std::log(3.0))).item();
  CHECK(std::abs(v - 0.5623) <= 1e-4);
  CHECK(v == doctest::Approx(-(0.75 * std::log(0.75) + 0.25 * std::log(0.25))).epsilon(1e-12));
}
