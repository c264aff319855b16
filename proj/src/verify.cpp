#include "cnnscale/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cnnscale/errors.hpp"
#include "cnnscale/sim.hpp"

namespace cnnscale::verify {

namespace {

std::int64_t uniform(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
}

bool chance(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

ModelDescriptor random_model(std::mt19937_64& rng, std::size_t max_layers) {
  ModelDescriptor m;
  const auto g = static_cast<std::size_t>(uniform(rng, 1, static_cast<std::int64_t>(max_layers)));
  const std::size_t rank = chance(rng, 0.6) ? 2 : chance(rng, 0.5) ? 3 : 1;
  const std::int64_t hi = rank == 3 ? 12 : rank == 2 ? 32 : 64;
  std::vector<std::int64_t> shape(rank);
  for (auto& e : shape) e = uniform(rng, 4, hi);
  std::int64_t channels = uniform(rng, 1, 4);
  bool flat = false;

  for (std::size_t i = 0; i < g; ++i) {
    LayerDescriptor l;
    l.name = "l" + std::to_string(i + 1);
    l.in_channels = channels;
    l.input_shape.dims = shape;
    l.has_bias = chance(rng, 0.5);
    const bool can_pool = std::all_of(shape.begin(), shape.end(), [](auto e) { return e >= 2; });
    const double roll = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (i == 0 || (!flat && roll < 0.45)) {
      l.kind = LayerKind::Conv;
      l.out_channels = uniform(rng, 1, 16);
      const std::int64_t k = std::array<std::int64_t, 3>{1, 3, 5}[static_cast<std::size_t>(uniform(rng, 0, 2))];
      const std::int64_t stride = chance(rng, 0.2) ? 2 : 1;
      l.kernel.dims.assign(rank, k);
      l.stride.assign(rank, stride);
      l.padding.assign(rank, k / 2);
    } else if (!flat && roll < 0.6 && can_pool) {
      l.kind = LayerKind::Pool;
      l.out_channels = channels;
      l.kernel.dims.assign(rank, 2);
      l.stride.assign(rank, 2);
      l.padding.assign(rank, 0);
      l.has_bias = false;
    } else if (roll < 0.75) {
      l.kind = LayerKind::ElementWise;
      l.out_channels = channels;
      l.has_bias = false;
    } else if (!flat && roll < 0.85) {
      l.kind = LayerKind::Norm;
      l.out_channels = channels;
    } else {
      l.kind = LayerKind::FullyConnected;
      l.out_channels = uniform(rng, 1, 32);
      flat = true;
    }
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Pool) {
      l.stride.assign(rank, 1);
      l.padding.assign(rank, 0);
    }
    const auto adapted = adapt_layer(l);
    shape = infer_output_shape(adapted).dims;
    channels = adapted.out_channels;
    m.layers.push_back(std::move(l));
  }
  m.batch_size = uniform(rng, 1, 64);
  m.dataset_size = m.batch_size * uniform(rng, 1, 20) + (chance(rng, 0.3) ? uniform(rng, 0, m.batch_size - 1) : 0);
  m.epochs = 1;
  validate(m);
  return m;
}

SystemDescriptor random_system(std::mt19937_64& rng, std::int64_t max_pes) {
  SystemDescriptor s;
  const std::int64_t node = std::array<std::int64_t, 3>{2, 4, 8}[static_cast<std::size_t>(uniform(rng, 0, 2))];
  s.tiers.push_back({"node", node, log_uniform(rng, 1e-7, 1e-5), log_uniform(rng, 1e-11, 1e-9)});
  if (max_pes > node)
    s.tiers.push_back({"fabric", max_pes, log_uniform(rng, 1e-6, 5e-5), log_uniform(rng, 5e-11, 5e-9)});
  s.pe_memory_capacity = 1e15;
  s.delta = std::array<int, 4>{1, 2, 4, 8}[static_cast<std::size_t>(uniform(rng, 0, 3))];
  s.gamma = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
  switch (uniform(rng, 0, 2)) {
    case 0:
      s.ring_tree_threshold = 0.0;
      break;
    case 1:
      s.ring_tree_threshold = 1e18;
      break;
    default:
      s.ring_tree_threshold = log_uniform(rng, 1e2, 1e6);
  }
  s.tree_chunks = static_cast<int>(uniform(rng, 1, 4));
  s.contention_phi = static_cast<double>(uniform(rng, 1, 3));
  if (chance(rng, 0.5)) s.transports[Transport::Halo] = {log_uniform(rng, 1e-6, 1e-4), log_uniform(rng, 1e-10, 1e-8)};
  if (chance(rng, 0.5)) s.transports[Transport::P2p] = {log_uniform(rng, 1e-6, 1e-4), log_uniform(rng, 1e-10, 1e-8)};
  validate(s);
  return s;
}

CalibrationProfile random_profile(std::mt19937_64& rng, const ModelDescriptor& model) {
  CalibrationProfile prof;
  auto timing = [&] {
    return LayerTiming{log_uniform(rng, 1e-6, 1e-3), log_uniform(rng, 1e-6, 1e-3),
                       chance(rng, 0.3) ? 0.0 : log_uniform(rng, 1e-7, 1e-4)};
  };
  if (chance(rng, 0.2)) prof.default_timing = timing();
  for (const auto& l : model.layers)
    if (!prof.default_timing || chance(rng, 0.7)) prof.timings[l.name] = timing();
  return prof;
}

// Random split with product <= budget over `rank` axes.
SpatialSplit random_split(std::mt19937_64& rng, std::size_t rank, std::int64_t budget) {
  SpatialSplit s;
  std::int64_t left = budget;
  for (std::size_t a = 0; a < rank; ++a) {
    const auto n = uniform(rng, 1, std::max<std::int64_t>(1, std::min<std::int64_t>(left, 8)));
    (a == 0 ? s.pw : a == 1 ? s.ph : s.pd) = n;
    left /= n;
  }
  return s;
}

std::vector<LayerRange> random_groups(std::mt19937_64& rng, std::size_t n, std::int64_t p) {
  std::vector<std::size_t> cuts(n - 1);
  std::iota(cuts.begin(), cuts.end(), 1);
  std::shuffle(cuts.begin(), cuts.end(), rng);
  cuts.resize(static_cast<std::size_t>(p - 1));
  std::sort(cuts.begin(), cuts.end());
  std::vector<LayerRange> groups;
  std::size_t start = 0;
  for (auto c : cuts) {
    groups.push_back({start, c - 1});
    start = c;
  }
  groups.push_back({start, n - 1});
  return groups;
}

}  // namespace

Instance random_instance(std::mt19937_64& rng, const InstanceOptions& options) {
  Instance inst;
  inst.model = random_model(rng, options.max_layers);
  inst.system = random_system(rng, options.max_pes);
  inst.profile = random_profile(rng, inst.model);
  const auto n = inst.model.layers.size();
  const auto rank = inst.model.layers.front().input_shape.rank();
  const auto maxp = options.max_pes;
  auto pes = [&] { return uniform(rng, 1, maxp); };
  auto prefix = [&]() -> std::optional<std::size_t> {
    if (chance(rng, 0.5)) return std::nullopt;
    return static_cast<std::size_t>(uniform(rng, 1, static_cast<std::int64_t>(n)));
  };
  auto staged = [&](auto cfg) {
    cfg.p = uniform(rng, 1, std::min<std::int64_t>(static_cast<std::int64_t>(n), maxp));
    if (cfg.p > 1 && chance(rng, 0.5)) cfg.groups = random_groups(rng, n, cfg.p);
    return cfg;
  };

  inst.configs.push_back(strategy::Serial{});
  inst.configs.push_back(strategy::Data{pes()});
  inst.configs.push_back(strategy::Spatial{random_split(rng, rank, maxp), prefix()});
  inst.configs.push_back(staged(strategy::LayerPure{}));
  auto pipe = staged(strategy::Pipeline{});
  pipe.segments = uniform(rng, 1, 8);
  inst.configs.push_back(pipe);
  inst.configs.push_back(strategy::Filter{pes()});
  inst.configs.push_back(strategy::Channel{pes(), static_cast<std::size_t>(uniform(rng, 0, 1))});
  strategy::DataFilter df;
  df.p1 = pes();
  df.p2 = uniform(rng, 1, std::max<std::int64_t>(1, maxp / df.p1));
  if (chance(rng, 0.3)) df.phi = static_cast<double>(uniform(rng, 1, 4));
  inst.configs.push_back(df);
  strategy::DataSpatial ds;
  ds.p1 = pes();
  ds.split = random_split(rng, rank, std::max<std::int64_t>(1, maxp / ds.p1));
  ds.prefix = prefix();
  inst.configs.push_back(ds);
  return inst;
}

double relative_error(double expected, double actual) {
  const double scale = std::max(std::abs(expected), std::abs(actual));
  return scale == 0.0 ? 0.0 : std::abs(expected - actual) / scale;
}

Report check_comm(std::size_t instances, std::uint64_t seed, double tolerance, const InstanceOptions& options) {
  Report rep;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const auto inst = random_instance(rng, options);
    ++rep.instances;
    for (const auto& cfg : inst.configs) {
      const auto name = to_string(cfg);
      try {
        const auto pred = predict(inst.model, inst.system, inst.profile, cfg);
        const auto sim = sim::simulate_comm(inst.model, inst.system, inst.profile, cfg);
        for (auto phase : kCommPhases) {
          ++rep.checks;
          const double err = relative_error(pred.comm[phase], sim[phase]);
          rep.worst_relative = std::max(rep.worst_relative, err);
          if (!(err <= tolerance))
            rep.mismatches.push_back({i, name, std::string(to_string(phase)), pred.comm[phase], sim[phase]});
        }
      } catch (const std::exception& e) {
        rep.mismatches.push_back({i, name, std::string("error: ") + e.what(), 0.0, 0.0});
      }
    }
  }
  return rep;
}

Report check_memory(std::size_t instances, std::uint64_t seed, const InstanceOptions& options) {
  Report rep;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const auto inst = random_instance(rng, options);
    ++rep.instances;
    for (const auto& cfg : inst.configs) {
      const auto name = to_string(cfg);
      try {
        const auto pred = predict(inst.model, inst.system, inst.profile, cfg);
        const auto listing = sim::enumerate_buffers(inst.model, inst.system, inst.profile, cfg);
        ++rep.checks;
        if (!(pred.mem_elements == listing.elements) || pred.mem_peak != listing.bytes) {
          rep.mismatches.push_back({i, name, "memory", pred.mem_peak, listing.bytes});
          rep.worst_relative = std::max(rep.worst_relative, relative_error(pred.mem_peak, listing.bytes));
        }
      } catch (const std::exception& e) {
        rep.mismatches.push_back({i, name, std::string("error: ") + e.what(), 0.0, 0.0});
      }
    }
  }
  return rep;
}

}  // namespace cnnscale::verify
