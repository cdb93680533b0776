#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace samtta {

// Binary masks are flat H*W arrays; entries > 0.5 are foreground.

// 2|P & G| / (|P| + |G|); 1 when both are empty.
double dice(std::span<const double> pred, std::span<const double> gt);

// Foreground pixels 4-adjacent to background or to the image edge.
std::vector<std::size_t> mask_boundary(std::span<const double> mask, std::size_t height, std::size_t width);

// Inclusive linear-interpolation percentile, q in [0,1]; sorts `values`.
double percentile(std::vector<double> values, double q);

// Symmetric 95th-percentile boundary distance in pixels, or nullopt when
// either mask is empty.
std::optional<double> hd95(std::span<const double> pred, std::span<const double> gt, std::size_t height,
                           std::size_t width);

// Pearson correlation; nullopt when either series has zero variance.
std::optional<double> pearson_r(std::span<const double> x, std::span<const double> y);

struct MetricsRow {
  std::size_t index = 0;
  double dice = 0;
  double hd95 = 0;  // sentinel value when !hd95_defined
  bool hd95_defined = true;
  double pred_iou = 0;
  double true_iou = 0;
  double l_icm = 0;
  double l_dpc = 0;
  double l_ifc = 0;
  double lambda_dpc = 0;
};

struct MetricsSummary {
  std::size_t rows = 0;
  double mean_dice = 0;
  double mean_hd95 = 0;
  std::size_t hd95_excluded = 0;
  std::optional<double> pearson;  // r(pred_iou, true_iou) over finite rows
  std::size_t pearson_excluded = 0;
};

inline const char* kMetricsHeader = "index,dice,hd95,pred_iou,true_iou,l_icm,l_dpc,l_ifc,lambda_dpc";

// Image diagonal, used as the HD95 value of rows where it is undefined.
double hd95_sentinel(std::size_t height, std::size_t width);

// Shortest round-trip decimal form; "nan"/"inf" for non-finite values.
std::string format_number(double v);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
std::string metrics_csv(const std::vector<MetricsRow>& rows);
// Rows whose hd95 >= sentinel are marked undefined.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text, double sentinel);

MetricsSummary summarize(const std::vector<MetricsRow>& rows);
std::string format_summary(const MetricsSummary& summary);

}  // namespace samtta
