#pragma once

// IoU-predictor calibration on a target stream: frozen inference versus
// adapting only the SBCT scalars while every model weight stays frozen.

#include <optional>
#include <string>
#include <vector>

#include "samtta/adapt.hpp"

namespace samtta {

enum class CalibrationMode { Off, SbctOnly };

CalibrationMode parse_calibration_mode(const std::string& name);
std::string calibration_mode_name(CalibrationMode mode);

struct CalibrationReport {
  CalibrationMode mode = CalibrationMode::Off;
  std::vector<MetricsRow> rows;
  MetricsSummary summary;
};

// `base` supplies learning rates, EMA rate and seed; its strategy is ignored.
CalibrationReport calibrate(const SegModel& model, const std::vector<StreamSample>& samples, CalibrationMode mode,
                            const AdaptConfig& base = {});

// r(sbct-only) - r(off), when both are defined.
std::optional<double> calibration_gain(const CalibrationReport& off, const CalibrationReport& sbct_only);

}  // namespace samtta
