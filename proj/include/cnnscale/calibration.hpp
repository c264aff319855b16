#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cnnscale/cost.hpp"
#include "cnnscale/model.hpp"

namespace cnnscale {

enum class CommPattern { Allreduce, Allgather, P2p };

std::string_view to_string(CommPattern pattern);
std::optional<CommPattern> comm_pattern_from_string(std::string_view name);

/// One measured collective. For Allgather `bytes` is the per-PE segment.
struct BenchmarkSample {
  CommPattern pattern = CommPattern::P2p;
  std::int64_t p = 2;
  double bytes = 0.0;
  double seconds = 0.0;
};

struct LayerTiming {
  double fw = 0.0;  // s per sample
  double bw = 0.0;  // s per sample
  double wu = 0.0;  // s per iteration

  bool operator==(const LayerTiming&) const = default;
};

struct AlphaBeta {
  double alpha = 0.0;
  double beta = 0.0;
};

struct PeRange {
  std::int64_t min = 1;
  std::int64_t max = std::numeric_limits<std::int64_t>::max();
  bool contains(std::int64_t p) const { return p >= min && p <= max; }
};

struct CalibrationProfile {
  std::map<std::string, LayerTiming> timings;
  std::optional<LayerTiming> default_timing;  // the "*" row of a timings file
  std::vector<NetworkTier> fitted_tiers;

  /// Throws MissingTiming when neither an entry nor a default exists.
  const LayerTiming& timing_for(const std::string& layer) const;
  /// Throws MissingTiming naming the first uncovered layer.
  void check_covers(const ModelDescriptor& model) const;
};

/// Least-squares fit of measured times against the pattern's closed form
/// with unknowns (alpha, beta). Samples outside `pes` are ignored.
AlphaBeta fit_alpha_beta(std::span<const BenchmarkSample> samples, CommPattern pattern,
                         PeRange pes = {});

struct TimingTable {
  std::map<std::string, LayerTiming> timings;
  std::optional<LayerTiming> default_timing;
  std::vector<std::string> warnings;
};

/// `layer,fw_s_per_sample,bw_s_per_sample,wu_s_per_iter` rows; a layer named
/// "*" sets the default. A missing WU column reads as 0 with a warning.
TimingTable load_layer_timings(std::string_view text);
CalibrationProfile load_profile_file(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// `pattern,p,bytes,seconds` rows.
std::vector<BenchmarkSample> parse_benchmarks(std::string_view text);

}  // namespace cnnscale
