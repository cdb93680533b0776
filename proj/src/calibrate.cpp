#include "samtta/calibrate.hpp"

#include "samtta/error.hpp"

namespace samtta {

CalibrationMode parse_calibration_mode(const std::string& name) {
  if (name == "off") return CalibrationMode::Off;
  if (name == "sbct-only") return CalibrationMode::SbctOnly;
  throw DomainError("unknown calibration mode '" + name + "' (expected off or sbct-only)");
}

std::string calibration_mode_name(CalibrationMode mode) {
  return mode == CalibrationMode::Off ? "off" : "sbct-only";
}

CalibrationReport calibrate(const SegModel& model, const std::vector<StreamSample>& samples, CalibrationMode mode,
                            const AdaptConfig& base) {
  AdaptConfig config = base;
  config.strategy = mode == CalibrationMode::Off ? Strategy::None : Strategy::SbctOnly;
  Adapter adapter(model, config);
  CalibrationReport report;
  report.mode = mode;
  report.rows = adapt_stream(adapter, samples).rows;
  report.summary = summarize(report.rows);
  return report;
}

std::optional<double> calibration_gain(const CalibrationReport& off, const CalibrationReport& sbct_only) {
  if (!off.summary.pearson || !sbct_only.summary.pearson) return std::nullopt;
  return *sbct_only.summary.pearson - *off.summary.pearson;
}

}  // namespace samtta
