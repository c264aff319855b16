#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cnnscale {

struct NetworkTier {
  std::string name;
  std::int64_t max_pes = 1;  // largest communicator fully inside this tier
  double alpha = 0.0;        // s
  double beta = 0.0;         // s/B

  bool operator==(const NetworkTier&) const = default;
};

/// Point-to-point patterns that may carry their own (alpha, beta) instead of
/// the tier values, e.g. an MPI halo path next to an NCCL collective path.
enum class Transport { Halo, P2p };

struct TransportParams {
  double alpha = 0.0;
  double beta = 0.0;
  bool operator==(const TransportParams&) const = default;
};

struct SystemDescriptor {
  std::vector<NetworkTier> tiers;
  double pe_memory_capacity = 0.0;  // bytes
  int delta = 4;                    // bytes per element
  double gamma = 1.0;               // memory reuse factor in (0, 1]
  double ring_tree_threshold = 512.0 * 1024.0;  // bytes; ring at or above
  int tree_chunks = 1;
  double contention_phi = 1.0;
  std::map<Transport, TransportParams> transports;

  bool operator==(const SystemDescriptor&) const = default;
};

/// Hockney parameters after tier selection and contention.
struct CommParams {
  double alpha = 0.0;
  double beta_eff = 0.0;

  bool operator==(const CommParams&) const = default;
};

void validate(const SystemDescriptor& system);

/// Parameters of the smallest tier containing `p` PEs, beta scaled by `phi`.
CommParams select_params(const SystemDescriptor& system, std::int64_t p, double phi = 1.0);

/// As select_params, but a configured transport override wins over the tier.
CommParams select_transport_params(const SystemDescriptor& system, Transport transport,
                                   std::int64_t p, double phi = 1.0);

double t_p2p(const CommParams& cp, double bytes);
double t_allreduce_ring(const CommParams& cp, std::int64_t p, double bytes);
/// `segment_bytes` is the per-PE contribution; every PE ends with p segments.
double t_allgather_ring(const CommParams& cp, std::int64_t p, double segment_bytes);
double t_allreduce_tree(const CommParams& cp, std::int64_t p, double bytes, int chunks);
/// Tree below `system.ring_tree_threshold`, ring at or above it.
double t_allreduce(const SystemDescriptor& system, const CommParams& cp, std::int64_t p, double bytes);
/// Intra-group reduce to a leader PE; costed like a ring Allreduce.
double t_reduce_to_leader(const CommParams& cp, std::int64_t p, double bytes);

/// ceil(log2 p) for p >= 1.
int ceil_log2(std::int64_t p);

SystemDescriptor parse_system(std::string_view text);
std::string serialize_system(const SystemDescriptor& system);
SystemDescriptor load_system_file(const std::string& path);

}  // namespace cnnscale
