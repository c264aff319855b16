#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cnnscale/calibration.hpp"
#include "cnnscale/cost.hpp"
#include "cnnscale/model.hpp"

namespace cnnscale {

// ---------------------------------------------------------------------------
// Configurations

/// PE grid over the spatial axes (W, H, D).
struct SpatialSplit {
  std::int64_t pw = 1;
  std::int64_t ph = 1;
  std::int64_t pd = 1;

  std::int64_t total() const { return pw * ph * pd; }
  std::int64_t along(std::size_t axis) const { return axis == 0 ? pw : axis == 1 ? ph : pd; }
  bool operator==(const SpatialSplit&) const = default;
};

namespace strategy {

struct Serial {
  bool operator==(const Serial&) const = default;
};
struct Data {
  std::int64_t p = 1;
  bool operator==(const Data&) const = default;
};
/// `prefix`: number of leading layers decomposed spatially; the rest run
/// replicated after one gather. Unset means up to the last convolution
/// before the first fully-connected layer.
struct Spatial {
  SpatialSplit split;
  std::optional<std::size_t> prefix;
  bool operator==(const Spatial&) const = default;
};
/// Groups are contiguous inclusive layer ranges; empty means balanced.
struct LayerPure {
  std::int64_t p = 1;
  std::vector<LayerRange> groups;
  bool operator==(const LayerPure&) const = default;
};
struct Pipeline {
  std::int64_t p = 1;
  std::int64_t segments = 1;  // S
  std::vector<LayerRange> groups;
  bool operator==(const Pipeline&) const = default;
};
struct Filter {
  std::int64_t p = 1;
  bool operator==(const Filter&) const = default;
};
/// `first_layer` (0-based) is where channel decomposition starts; the
/// scaling limit only looks at layers from there on.
struct Channel {
  std::int64_t p = 1;
  std::size_t first_layer = 1;
  bool operator==(const Channel&) const = default;
};
/// p1 data-parallel groups of p2 filter-parallel PEs.
struct DataFilter {
  std::int64_t p1 = 1;
  std::int64_t p2 = 1;
  std::optional<double> phi;  // contention on the inter-group Allreduce
  bool operator==(const DataFilter&) const = default;
};
struct DataSpatial {
  std::int64_t p1 = 1;
  SpatialSplit split;
  std::optional<std::size_t> prefix;
  bool operator==(const DataSpatial&) const = default;
};

}  // namespace strategy

using StrategyConfig =
    std::variant<strategy::Serial, strategy::Data, strategy::Spatial, strategy::LayerPure, strategy::Pipeline,
                 strategy::Filter, strategy::Channel, strategy::DataFilter, strategy::DataSpatial>;

enum class StrategyKind { Serial, Data, Spatial, LayerPure, Pipeline, Filter, Channel, DataFilter, DataSpatial };

StrategyKind kind_of(const StrategyConfig& cfg);
std::string_view to_string(StrategyKind kind);
std::int64_t pe_count(const StrategyConfig& cfg);

/// Grammar: serial | data:p=N | spatial:pw=N,ph=N[,pd=N][,prefix=N]
///   | layer:p=N[,groups=a-b/c-d] | pipeline:p=N,S=N[,groups=a-b/c-d]
///   | filter:p=N | channel:p=N[,from=N] | df:p1=N,p2=N[,phi=X]
///   | ds:p1=N,pw=N,ph=N[,pd=N][,prefix=N]
/// Group bounds and `from` are 1-based layer indices.
StrategyConfig parse_strategy(std::string_view text);
std::string to_string(const StrategyConfig& cfg);

// ---------------------------------------------------------------------------
// Exact element counts

/// Non-negative rational number of elements: num / den, den > 0, reduced.
class ElementCount {
 public:
  ElementCount() = default;
  ElementCount(std::int64_t num, std::int64_t den = 1);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  ElementCount& operator+=(const ElementCount& rhs);
  friend ElementCount operator+(ElementCount a, const ElementCount& b) { return a += b; }
  friend bool operator==(const ElementCount&, const ElementCount&) = default;
  friend bool operator<(const ElementCount& a, const ElementCount& b);

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

/// gamma * delta * elements, the one conversion every memory path uses.
double memory_bytes(const ElementCount& elements, const SystemDescriptor& system);

// ---------------------------------------------------------------------------
// Predictions

enum class Phase { GeAllreduce, FbAllgather, FbAllreduce, FbHalo, FbP2p };
inline constexpr std::array<Phase, 5> kCommPhases = {Phase::GeAllreduce, Phase::FbAllgather, Phase::FbAllreduce,
                                                     Phase::FbHalo, Phase::FbP2p};
std::string_view to_string(Phase phase);
std::optional<Phase> phase_from_string(std::string_view name);

struct PhaseTimes {
  std::array<double, kCommPhases.size()> seconds{};

  double& operator[](Phase p) { return seconds[static_cast<std::size_t>(p)]; }
  double operator[](Phase p) const { return seconds[static_cast<std::size_t>(p)]; }
  double total() const;
  bool operator==(const PhaseTimes&) const = default;
};

enum class Constraint { ScalingLimit, Memory, SplitTooFine };
std::string_view to_string(Constraint c);

struct Violation {
  Constraint constraint = Constraint::ScalingLimit;
  std::string detail;
};

struct Verdict {
  bool feasible = true;
  std::vector<Violation> violations;

  bool cites(Constraint c) const;
};

/// Per-epoch times; memory is the peak over PEs.
struct Prediction {
  StrategyConfig config;
  double iterations = 0.0;
  double t_fb = 0.0;  // forward + backward compute
  double t_wu = 0.0;  // weight update
  PhaseTimes comm;
  ElementCount mem_elements;
  double mem_peak = 0.0;  // bytes
  std::int64_t p_used = 1;
  std::int64_t pe_limit = 1;
  // Configuration-level limits found while predicting (p1 <= B, split
  // granularity, ...); check_feasibility adds the PE limit and memory.
  std::vector<Violation> structural;
  Verdict verdict;

  double t_comp() const { return t_fb + t_wu; }
  double t_comm() const { return comm.total(); }
  double total() const { return t_comp() + t_comm(); }
};

/// Options shared by the PE-limit rows that depend on the decomposition.
struct LimitOptions {
  std::optional<std::size_t> spatial_prefix;
  std::size_t channel_first_layer = 1;
};

std::int64_t max_pe_limit(const ModelDescriptor& model, StrategyKind kind, const LimitOptions& options = {});
Verdict check_feasibility(const Prediction& prediction, const SystemDescriptor& system);

/// Number of leading layers a spatial decomposition covers by default.
std::size_t default_spatial_prefix(const ModelDescriptor& model);

enum class HaloPosition { Interior, Edge };

/// Elements a PE receives for one sample's input halo of `layer`.
/// Throws SplitTooFine when a local extent is narrower than the halo.
std::int64_t halo_elements(const LayerDescriptor& layer, const SpatialSplit& split,
                           HaloPosition position = HaloPosition::Interior);
/// Same, for the output-gradient halo (F channels over the output shape).
std::int64_t halo_output_grad_elements(const LayerDescriptor& layer, const SpatialSplit& split,
                                       HaloPosition position = HaloPosition::Interior);
/// Per-axis halo widths: the layer override, else floor(K/2); 0 without a kernel.
std::vector<std::int64_t> halo_widths(const LayerDescriptor& layer);

/// Contiguous partition of `costs` into `parts` runs minimizing the largest
/// run sum; ties go to the earliest split points. Returns run lengths.
std::vector<std::size_t> partition_contiguous(std::span<const double> costs, std::size_t parts);

/// Balanced pipeline groups over partition units (see partition_units).
std::vector<LayerRange> partition_pipeline_balanced(const ModelDescriptor& model,
                                                    const CalibrationProfile& profile, std::int64_t p);

Prediction predict_serial(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&);
Prediction predict_data(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                        const strategy::Data&);
Prediction predict_spatial(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                           const strategy::Spatial&);
Prediction predict_layer_pure(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                              const strategy::LayerPure&);
Prediction predict_pipeline(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                            const strategy::Pipeline&);
Prediction predict_filter(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                          const strategy::Filter&);
Prediction predict_channel(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                           const strategy::Channel&);
Prediction predict_data_filter(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                               const strategy::DataFilter&);
Prediction predict_data_spatial(const ModelDescriptor&, const SystemDescriptor&, const CalibrationProfile&,
                                const strategy::DataSpatial&);

Prediction predict(const ModelDescriptor& model, const SystemDescriptor& system,
                   const CalibrationProfile& profile, const StrategyConfig& cfg);

/// Contention factor applied to the inter-group Allreduce of data+filter.
double data_filter_phi(const strategy::DataFilter& cfg);

/// Groups a layer-pure or pipeline config resolves to (explicit or balanced).
std::vector<LayerRange> resolve_groups(const ModelDescriptor& model, const CalibrationProfile& profile,
                                       std::int64_t p, const std::vector<LayerRange>& groups);

}  // namespace cnnscale
