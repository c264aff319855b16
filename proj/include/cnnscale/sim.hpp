#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnnscale/calibration.hpp"
#include "cnnscale/cost.hpp"
#include "cnnscale/model.hpp"
#include "cnnscale/strategy.hpp"

// Step-level simulators used to cross-check the closed forms. They share
// parameter selection with cost-core but none of its formulas.
namespace cnnscale::sim {

/// One synchronous communication step of a collective.
struct StepEvent {
  std::size_t step = 0;
  std::vector<std::int64_t> senders;
  double bytes = 0.0;    // per sender
  double elapsed = 0.0;  // alpha + bytes * beta
};

struct CollectiveTrace {
  std::vector<StepEvent> steps;
  double seconds = 0.0;
};

/// Ring collective with explicit segment bookkeeping. For Allreduce `bytes`
/// is the full message; for Allgather it is the per-PE segment; P2p is one
/// transfer. Throws std::logic_error if the ring fails to complete.
CollectiveTrace trace_ring_collective(CommPattern pattern, std::int64_t p, double bytes, double alpha, double beta);
double simulate_ring_collective(CommPattern pattern, std::int64_t p, double bytes, double alpha, double beta);

/// Pipelined tree Allreduce: two trees each carry half the message in
/// `chunks` pieces through ceil(log2 p)+1 levels, reduce then broadcast.
double simulate_tree_allreduce(std::int64_t p, double bytes, int chunks, double alpha, double beta);

/// Threshold dispatch between the two simulators, as the system dictates.
double simulate_allreduce(const SystemDescriptor& system, const CommParams& cp, std::int64_t p, double bytes);

/// Makespan of jobs flowing through stages in order; durations[stage][job].
/// A job starts on a stage once it left the previous stage and the stage
/// finished the previous job.
double flow_shop_makespan(const std::vector<std::vector<double>>& durations);

struct ScheduleCell {
  std::size_t stage = 0;  // time step the cell starts in, for equal stages
  std::size_t pe = 0;
  std::size_t segment = 0;
  bool forward = true;
  double start = 0.0;
  double duration = 0.0;
};

struct PipelineSchedule {
  std::vector<ScheduleCell> cells;  // one iteration
  double forward = 0.0;             // per-iteration forward makespan
  double backward = 0.0;
  double per_iteration = 0.0;
  double total = 0.0;  // times iterations
  // With boundary transfers: added after the compute makespan, and as
  // extra stages that overlap with compute.
  double summed_with_comm = 0.0;
  double overlapped_with_comm = 0.0;
};

/// Forward wavefront over groups 0..p-1 then backward over p-1..0, S
/// segments of B/S samples, `iterations` times. `transfer` (optional, p-1
/// entries) gives the per-segment boundary transfer times for each direction.
PipelineSchedule simulate_pipeline_schedule(const std::vector<double>& group_fw, const std::vector<double>& group_bw,
                                            std::int64_t segments, std::int64_t batch, double iterations,
                                            const std::vector<double>& transfer = {});

/// Per-axis peak halo volume found by enumerating the PE blocks.
std::int64_t enumerate_halo(std::int64_t channels, const std::vector<std::int64_t>& extents,
                            const std::vector<std::int64_t>& widths, const SpatialSplit& split);

struct Buffer {
  std::string layer;
  std::string kind;  // x, dx, y, dy, w, dw, bias
  ElementCount elements;
};

struct BufferListing {
  std::vector<Buffer> buffers;  // for the PE holding the most
  ElementCount elements;
  double bytes = 0.0;
};

BufferListing enumerate_buffers(const ModelDescriptor& model, const SystemDescriptor& system,
                                const CalibrationProfile& profile, const StrategyConfig& cfg);

/// Per-epoch communication time per phase assembled from the simulators.
PhaseTimes simulate_comm(const ModelDescriptor& model, const SystemDescriptor& system,
                         const CalibrationProfile& profile, const StrategyConfig& cfg);

}  // namespace cnnscale::sim
