#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cnnscale/calibration.hpp"
#include "cnnscale/cost.hpp"
#include "cnnscale/model.hpp"
#include "cnnscale/strategy.hpp"

namespace cnnscale::verify {

/// A small random model, system and timing profile plus one configuration
/// of every strategy kind that fits it.
struct Instance {
  ModelDescriptor model;
  SystemDescriptor system;
  CalibrationProfile profile;
  std::vector<StrategyConfig> configs;
};

struct InstanceOptions {
  std::int64_t max_pes = 64;
  std::size_t max_layers = 60;
};

Instance random_instance(std::mt19937_64& rng, const InstanceOptions& options = {});

struct Mismatch {
  std::size_t instance = 0;
  std::string config;
  std::string what;
  double expected = 0.0;
  double actual = 0.0;
};

struct Report {
  std::size_t instances = 0;
  std::size_t checks = 0;
  double worst_relative = 0.0;
  std::vector<Mismatch> mismatches;

  bool ok() const { return mismatches.empty(); }
};

/// Closed-form communication phases against simulate_comm.
Report check_comm(std::size_t instances, std::uint64_t seed, double tolerance = 1e-9,
                  const InstanceOptions& options = {});
/// Closed-form memory against enumerate_buffers (exact).
Report check_memory(std::size_t instances, std::uint64_t seed, const InstanceOptions& options = {});

double relative_error(double expected, double actual);

}  // namespace cnnscale::verify
