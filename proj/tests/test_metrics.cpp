#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "samtta/error.hpp"
#include "samtta/metrics.hpp"

using namespace samtta;

namespace {

std::vector<double> square(int n, int y0, int x0, int y1, int x1) {
  std::vector<double> m(n * n, 0.0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m[y * n + x] = 1.0;
  return m;
}

}  // namespace

TEST_CASE("dice and hd95 match brute force on random pairs") {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 200; ++k) {
    const auto p = oracle::random_mask(rng, 256);
    const auto g = oracle::random_mask(rng, 256);
    CHECK(dice(p, g) == oracle::dice(p, g));
    CHECK(dice(p, g) == dice(g, p));
    const auto fast = hd95(p, g, 16, 16);
    const auto slow = oracle::hd95(p, g, 16, 16);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) {
      CHECK(*fast == *slow);
      CHECK(*fast == *hd95(g, p, 16, 16));
      CHECK(*fast <= oracle::hausdorff(p, g, 16, 16));
    }
  }
}

TEST_CASE("dice edge cases") {
  const std::vector<double> empty(16, 0.0), full(16, 1.0);
  CHECK(dice(empty, empty) == 1.0);
  CHECK(dice(full, empty) == 0.0);
  CHECK(dice(full, full) == 1.0);
  CHECK_THROWS_AS(dice(full, std::vector<double>(15, 1.0)), ShapeError);
}

TEST_CASE("hd95 of shifted squares") {
  const auto a = square(16, 4, 4, 10, 10);
  const auto b = square(16, 4, 6, 10, 12);
  CHECK(*hd95(a, a, 16, 16) == 0.0);
  CHECK(*hd95(a, b, 16, 16) == doctest::Approx(2.0));
  CHECK_FALSE(hd95(a, std::vector<double>(256, 0.0), 16, 16).has_value());
  CHECK(hd95_sentinel(3, 4) == 5.0);
}

TEST_CASE("boundary includes image-edge pixels") {
  const std::vector<double> full(9, 1.0);
  CHECK(mask_boundary(full, 3, 3).size() == 8);
}

TEST_CASE("percentile interpolates inclusively") {
  CHECK(percentile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(percentile({0, 10}, 0.95) == doctest::Approx(9.5));
  CHECK(percentile({7}, 0.95) == 7.0);
  CHECK_THROWS_AS(percentile({}, 0.5), DomainError);
}

TEST_CASE("pearson") {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8}, z{4, 3, 2, 1}, c{1, 1, 1, 1};
  CHECK(*pearson_r(x, y) == doctest::Approx(1.0));
  CHECK(*pearson_r(x, z) == doctest::Approx(-1.0));
  CHECK_FALSE(pearson_r(x, c).has_value());
}

TEST_CASE("csv round trip and summary") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<MetricsRow> rows(3);
  for (std::size_t i = 0; i < 3; ++i) {
    rows[i].index = i;
    rows[i].dice = 0.1 * static_cast<double>(i + 1);
    rows[i].hd95 = 1.5 + static_cast<double>(i);
    rows[i].pred_iou = 0.2 * static_cast<double>(i + 1);
    rows[i].true_iou = 0.25 * static_cast<double>(i + 1);
    rows[i].l_icm = 1 - rows[i].pred_iou;
    rows[i].l_dpc = 0.3;
    rows[i].l_ifc = 0.1;
    rows[i].lambda_dpc = 1.0;
  }
  rows[1].hd95_defined = false;
  rows[1].hd95 = hd95_sentinel(64, 64);
  rows[2].pred_iou = nan;
  const std::string text = metrics_csv(rows);
  CHECK(text.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  const auto back = parse_metrics_csv(text, hd95_sentinel(64, 64));
  REQUIRE(back.size() == 3);
  CHECK(back[0].dice == rows[0].dice);
  CHECK(back[0].hd95 == rows[0].hd95);
  CHECK_FALSE(back[1].hd95_defined);
  CHECK(std::isnan(back[2].pred_iou));
  CHECK(metrics_csv(back) == text);

  const auto s = summarize(rows);
  CHECK(s.rows == 3);
  CHECK(s.mean_dice == doctest::Approx(0.2));
  CHECK(s.mean_hd95 == doctest::Approx(2.5));
  CHECK(s.hd95_excluded == 1);
  CHECK(s.pearson_excluded == 1);
  CHECK(*s.pearson == doctest::Approx(1.0));
  CHECK(format_summary(s).find("excluded 1") != std::string::npos);
}

TEST_CASE("number formatting round trips") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}
