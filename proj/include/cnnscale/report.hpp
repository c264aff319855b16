#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cnnscale/calibration.hpp"
#include "cnnscale/cost.hpp"
#include "cnnscale/model.hpp"
#include "cnnscale/strategy.hpp"

namespace cnnscale {

// ---------------------------------------------------------------------------
// Breakdown output

enum class Format { Table, Csv, Json };
std::optional<Format> format_from_string(std::string_view name);

/// Row labels in output order: FB-compute, WU, the comm phases, IO.
const std::vector<std::string>& breakdown_rows();

/// Per-epoch seconds for each breakdown row, scaled by `epochs`.
std::vector<std::pair<std::string, double>> breakdown(const Prediction& prediction, double epochs = 1.0);

std::string emit_breakdown(const Prediction& prediction, Format format, double epochs = 1.0);

// ---------------------------------------------------------------------------
// Measured runs

struct MeasuredRun {
  std::string config;
  std::map<std::string, double> phases;  // breakdown rows present in the file
  double measured_comp = 0.0;
  double measured_comm = 0.0;
  double measured_total = 0.0;
};

/// CSV `phase,seconds`. `total` sets the total explicitly (otherwise the
/// phase sum); `mem_bytes` is skipped; unknown rows are skipped with a
/// warning. A `# config: <strategy>` comment names the configuration. A
/// JSON breakdown as written by emit_breakdown is accepted too.
MeasuredRun parse_measured(std::string_view text, std::vector<std::string>* warnings = nullptr);

/// 1 - |predicted - measured| / measured, unclamped. Throws ZeroMeasured.
double projection_accuracy_raw(double predicted_total, double measured_total);
/// Same, clamped to [0, 1].
double projection_accuracy(double predicted_total, double measured_total);

// ---------------------------------------------------------------------------
// Recommendation

struct RecommendOptions {
  std::int64_t budget = 1;
  bool dense = false;                       // every p in [2, budget], not just powers of two
  std::optional<double> memory_capacity;    // overrides the system value
};

struct Rejection {
  std::string config;
  std::vector<Violation> violations;
  std::string error;  // set when the prediction itself failed
};

struct Recommendation {
  std::vector<Prediction> ranked;
  std::vector<Rejection> rejected;
};

/// Candidate configurations for a budget, each listed once.
std::vector<StrategyConfig> enumerate_configs(const ModelDescriptor& model, const RecommendOptions& options);

/// Ranks feasible configurations by total time, then peak memory, then PE
/// count, then configuration string.
Recommendation recommend(const ModelDescriptor& model, const SystemDescriptor& system,
                         const CalibrationProfile& profile, const RecommendOptions& options);

std::string emit_recommendation(const Recommendation& rec, Format format);

}  // namespace cnnscale
