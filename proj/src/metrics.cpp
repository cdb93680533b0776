#include "samtta/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "samtta/error.hpp"

namespace samtta {

namespace {

bool on(double v) { return v > 0.5; }

void check_same(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": masks differ in size (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] < kInf) {
      first = q;
      break;
    }
  }
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    auto meet = [&](std::size_t p) {
      const double qd = static_cast<double>(q), pd = static_cast<double>(p);
      return ((f[q] + qd * qd) - (f[p] + pd * pd)) / (2.0 * qd - 2.0 * pd);
    };
    double s = meet(v[k]);
    while (s <= z[k]) {
      --k;
      s = meet(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

// Squared Euclidean distance from every pixel to the nearest seed pixel.
std::vector<double> squared_distance_map(const std::vector<std::size_t>& seeds, std::size_t h, std::size_t w) {
  std::vector<double> grid(h * w, kInf);
  for (auto s : seeds) grid[s] = 0.0;
  std::vector<double> f, d;
  f.resize(h);
  d.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
    edt_1d(f, d);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
    edt_1d(f, d);
    for (std::size_t x = 0; x < w; ++x) grid[y * w + x] = d[x];
  }
  return grid;
}

std::vector<double> directed_distances(const std::vector<std::size_t>& from, const std::vector<std::size_t>& to,
                                       std::size_t h, std::size_t w) {
  const auto sq = squared_distance_map(to, h, w);
  std::vector<double> out;
  out.reserve(from.size());
  for (auto p : from) out.push_back(std::sqrt(sq[p]));
  return out;
}

}  // namespace

double dice(std::span<const double> pred, std::span<const double> gt) {
  check_same(pred, gt, "dice");
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    np += on(pred[i]);
    ng += on(gt[i]);
    inter += on(pred[i]) && on(gt[i]);
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<std::size_t> mask_boundary(std::span<const double> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw ShapeError("mask_boundary: mask size does not match canvas");
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      if (!on(mask[i])) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == height || x + 1 == width;
      if (edge || !on(mask[i - width]) || !on(mask[i + width]) || !on(mask[i - 1]) || !on(mask[i + 1])) {
        out.push_back(i);
      }
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(std::span<const double> pred, std::span<const double> gt, std::size_t height,
                           std::size_t width) {
  check_same(pred, gt, "hd95");
  const auto bp = mask_boundary(pred, height, width);
  const auto bg = mask_boundary(gt, height, width);
  if (bp.empty() || bg.empty()) return std::nullopt;
  const double a = percentile(directed_distances(bp, bg, height, width), 0.95);
  const double b = percentile(directed_distances(bg, bp, height, width), 0.95);
  return std::max(a, b);
}

std::optional<double> pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson_r: series differ in length");
  if (x.size() < 2) throw DomainError("pearson_r: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double hd95_sentinel(std::size_t height, std::size_t width) {
  return std::sqrt(static_cast<double>(height * height + width * width));
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.index << ',' << format_number(r.dice) << ',' << format_number(r.hd95) << ','
        << format_number(r.pred_iou) << ',' << format_number(r.true_iou) << ',' << format_number(r.l_icm) << ','
        << format_number(r.l_dpc) << ',' << format_number(r.l_ifc) << ',' << format_number(r.lambda_dpc) << '\n';
  }
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  write_metrics_csv(os, rows);
  return os.str();
}

namespace {

double parse_number(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("metrics csv: bad number '" + s + "'");
  return v;
}

}  // namespace

std::vector<MetricsRow> parse_metrics_csv(const std::string& text, double sentinel) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("metrics csv: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw FormatError("metrics csv: expected 9 columns in '" + line + "'");
    MetricsRow r;
    r.index = static_cast<std::size_t>(parse_number(cells[0]));
    r.dice = parse_number(cells[1]);
    r.hd95 = parse_number(cells[2]);
    r.hd95_defined = r.hd95 < sentinel;
    r.pred_iou = parse_number(cells[3]);
    r.true_iou = parse_number(cells[4]);
    r.l_icm = parse_number(cells[5]);
    r.l_dpc = parse_number(cells[6]);
    r.l_ifc = parse_number(cells[7]);
    r.lambda_dpc = parse_number(cells[8]);
    rows.push_back(r);
  }
  return rows;
}

MetricsSummary summarize(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw DomainError("summarize: no metrics rows");
  MetricsSummary s;
  s.rows = rows.size();
  double dsum = 0, hsum = 0;
  std::size_t hn = 0;
  std::vector<double> px, py;
  for (const auto& r : rows) {
    dsum += r.dice;
    if (r.hd95_defined) {
      hsum += r.hd95;
      ++hn;
    } else {
      ++s.hd95_excluded;
    }
    if (std::isfinite(r.pred_iou) && std::isfinite(r.true_iou)) {
      px.push_back(r.pred_iou);
      py.push_back(r.true_iou);
    } else {
      ++s.pearson_excluded;
    }
  }
  s.mean_dice = dsum / static_cast<double>(rows.size());
  s.mean_hd95 = hn ? hsum / static_cast<double>(hn) : std::numeric_limits<double>::quiet_NaN();
  if (px.size() >= 2) s.pearson = pearson_r(px, py);
  return s;
}

std::string format_summary(const MetricsSummary& s) {
  std::ostringstream os;
  os << "images: " << s.rows << '\n'
     << "mean_dice: " << format_number(s.mean_dice) << '\n'
     << "mean_hd95: " << format_number(s.mean_hd95) << " (excluded " << s.hd95_excluded << ")\n"
     << "pearson_r(pred_iou,true_iou): " << (s.pearson ? format_number(*s.pearson) : std::string("undefined"))
     << " (excluded " << s.pearson_excluded << ")\n";
  return os.str();
}

}  // namespace samtta
