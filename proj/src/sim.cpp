#include "cnnscale/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cnnscale/errors.hpp"

namespace cnnscale::sim {

namespace {

// Neumaier compensated sum.
class Accumulator {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

std::size_t wrap(std::int64_t i, std::int64_t p) { return static_cast<std::size_t>(((i % p) + p) % p); }

StepEvent step_event(std::size_t index, std::int64_t p, double bytes, double alpha, double beta) {
  StepEvent ev;
  ev.step = index;
  ev.bytes = bytes;
  ev.senders.resize(static_cast<std::size_t>(p));
  for (std::int64_t i = 0; i < p; ++i) ev.senders[static_cast<std::size_t>(i)] = i;
  // Every sender moves the same amount, so the step lasts one transfer.
  ev.elapsed = alpha + bytes * beta;
  return ev;
}

}  // namespace

CollectiveTrace trace_ring_collective(CommPattern pattern, std::int64_t p, double bytes, double alpha, double beta) {
  CollectiveTrace trace;
  if (p < 1) throw std::invalid_argument("ring needs p >= 1");
  if (pattern == CommPattern::P2p) {
    StepEvent ev;
    ev.senders = {0};
    ev.bytes = bytes;
    ev.elapsed = alpha + bytes * beta;
    trace.steps.push_back(ev);
    trace.seconds = ev.elapsed;
    return trace;
  }
  if (p == 1) return trace;

  const auto n = static_cast<std::size_t>(p);
  // full[pe][seg]: pe holds the finished segment.
  std::vector<std::vector<char>> full(n, std::vector<char>(n, 0));
  double segment = bytes;

  if (pattern == CommPattern::Allreduce) {
    segment = bytes / static_cast<double>(p);
    // count[pe][seg]: how many PEs' contributions pe has folded into seg.
    std::vector<std::vector<std::int64_t>> count(n, std::vector<std::int64_t>(n, 1));
    for (std::int64_t s = 0; s + 1 < p; ++s) {
      // Within a step no PE receives the segment it is sending, so the
      // update can happen in place.
      for (std::int64_t i = 0; i < p; ++i) {
        const auto seg = wrap(i - s, p);
        count[wrap(i + 1, p)][seg] += count[static_cast<std::size_t>(i)][seg];
      }
      trace.steps.push_back(step_event(trace.steps.size(), p, segment, alpha, beta));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t seg = 0; seg < n; ++seg) full[i][seg] = count[i][seg] == p;
  } else {
    for (std::size_t i = 0; i < n; ++i) full[i][i] = 1;
  }

  // Allgather ring: each PE forwards the newest finished segment it holds.
  std::vector<std::size_t> newest(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = std::find(full[i].begin(), full[i].end(), 1);
    if (it == full[i].end()) throw std::logic_error("reduce-scatter left a PE without a finished segment");
    newest[i] = static_cast<std::size_t>(it - full[i].begin());
  }
  for (std::int64_t s = 0; s + 1 < p; ++s) {
    const auto sent = newest;
    for (std::size_t i = 0; i < n; ++i) {
      const auto to = (i + 1) % n;
      full[to][sent[i]] = 1;
      newest[to] = sent[i];
    }
    trace.steps.push_back(step_event(trace.steps.size(), p, segment, alpha, beta));
  }
  for (const auto& row : full)
    if (std::find(row.begin(), row.end(), 0) != row.end()) throw std::logic_error("ring did not complete");

  Accumulator acc;
  for (const auto& ev : trace.steps) acc.add(ev.elapsed);
  trace.seconds = acc.value();
  return trace;
}

double simulate_ring_collective(CommPattern pattern, std::int64_t p, double bytes, double alpha, double beta) {
  return trace_ring_collective(pattern, p, bytes, alpha, beta).seconds;
}

namespace {

std::vector<std::vector<double>> flow_shop_starts(const std::vector<std::vector<double>>& d) {
  std::vector<std::vector<double>> start(d.size());
  for (std::size_t st = 0; st < d.size(); ++st) {
    start[st].resize(d[st].size());
    for (std::size_t j = 0; j < d[st].size(); ++j) {
      double ready = 0.0;
      if (st > 0) ready = start[st - 1][j] + d[st - 1][j];
      if (j > 0) ready = std::max(ready, start[st][j - 1] + d[st][j - 1]);
      start[st][j] = ready;
    }
  }
  return start;
}

}  // namespace

double flow_shop_makespan(const std::vector<std::vector<double>>& durations) {
  if (durations.empty() || durations.back().empty()) return 0.0;
  const auto start = flow_shop_starts(durations);
  return start.back().back() + durations.back().back();
}

double simulate_tree_allreduce(std::int64_t p, double bytes, int chunks, double alpha, double beta) {
  if (p <= 1) return 0.0;
  if (chunks < 1) throw std::invalid_argument("tree needs chunks >= 1");
  std::size_t levels = 1;
  for (std::int64_t reach = 1; reach < p; reach *= 2) ++levels;
  const double step = alpha + (bytes / (2.0 * chunks)) * beta;
  const std::vector<std::vector<double>> wave(levels, std::vector<double>(static_cast<std::size_t>(chunks), step));
  // Broadcast retraces the reduce wavefront in the other direction.
  return flow_shop_makespan(wave) + flow_shop_makespan(wave);
}

double simulate_allreduce(const SystemDescriptor& system, const CommParams& cp, std::int64_t p, double bytes) {
  if (bytes < system.ring_tree_threshold)
    return simulate_tree_allreduce(p, bytes, system.tree_chunks, cp.alpha, cp.beta_eff);
  return simulate_ring_collective(CommPattern::Allreduce, p, bytes, cp.alpha, cp.beta_eff);
}

// ---------------------------------------------------------------------------

PipelineSchedule simulate_pipeline_schedule(const std::vector<double>& group_fw, const std::vector<double>& group_bw,
                                            std::int64_t segments, std::int64_t batch, double iterations,
                                            const std::vector<double>& transfer) {
  if (segments < 1) throw std::invalid_argument("pipeline needs S >= 1");
  if (group_fw.size() != group_bw.size() || group_fw.empty())
    throw std::invalid_argument("pipeline needs matching non-empty fw/bw group costs");
  const std::size_t p = group_fw.size();
  const auto s = static_cast<std::size_t>(segments);
  const double seg_samples = static_cast<double>(batch) / static_cast<double>(segments);

  PipelineSchedule out;
  std::vector<std::vector<double>> fw(p), bw(p);
  for (std::size_t g = 0; g < p; ++g) {
    fw[g].assign(s, seg_samples * group_fw[g]);
    bw[g].assign(s, seg_samples * group_bw[p - 1 - g]);  // stage g of the backward wave is group p-1-g
  }
  const auto fw_start = flow_shop_starts(fw);
  const auto bw_start = flow_shop_starts(bw);
  out.forward = flow_shop_makespan(fw);
  out.backward = flow_shop_makespan(bw);
  for (std::size_t g = 0; g < p; ++g)
    for (std::size_t j = 0; j < s; ++j) {
      out.cells.push_back({g + j, g, j, true, fw_start[g][j], fw[g][j]});
      out.cells.push_back({g + j, p - 1 - g, j, false, out.forward + bw_start[g][j], bw[g][j]});
    }
  out.per_iteration = out.forward + out.backward;
  out.total = iterations * out.per_iteration;

  out.summed_with_comm = out.total;
  out.overlapped_with_comm = out.total;
  if (!transfer.empty()) {
    if (transfer.size() + 1 != p) throw std::invalid_argument("need p-1 boundary transfer times");
    std::vector<std::vector<double>> links, fwc, bwc;
    for (std::size_t g = 0; g < p; ++g) {
      fwc.push_back(fw[g]);
      bwc.push_back(bw[g]);
      if (g + 1 < p) {
        links.emplace_back(s, transfer[g]);
        fwc.emplace_back(s, transfer[g]);
        bwc.emplace_back(s, transfer[p - 2 - g]);
      }
    }
    out.summed_with_comm = iterations * (out.per_iteration + 2.0 * flow_shop_makespan(links));
    out.overlapped_with_comm = iterations * (flow_shop_makespan(fwc) + flow_shop_makespan(bwc));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Block extents of `extent` cells over n PEs; the first extent % n get one more.
std::vector<std::int64_t> blocks(std::int64_t extent, std::int64_t n) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(n), extent / n);
  for (std::int64_t i = 0; i < extent % n; ++i) ++out[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace

std::int64_t enumerate_halo(std::int64_t channels, const std::vector<std::int64_t>& extents,
                            const std::vector<std::int64_t>& widths, const SpatialSplit& split) {
  std::int64_t total = 0;
  for (std::size_t a = 0; a < extents.size(); ++a) {
    const auto n = split.along(a);
    if (n <= 1 || widths[a] == 0) continue;
    // The slab face is the largest local cross-section over the other axes.
    std::int64_t face = 1;
    for (std::size_t b = 0; b < extents.size(); ++b) {
      if (b == a) continue;
      const auto bl = blocks(extents[b], split.along(b));
      face *= *std::max_element(bl.begin(), bl.end());
    }
    std::int64_t peak = 0;
    for (std::int64_t pos = 0; pos < n; ++pos) {
      std::int64_t received = 0;
      for (std::int64_t nb : {pos - 1, pos + 1})
        if (nb >= 0 && nb < n) received += channels * widths[a] * face;
      peak = std::max(peak, received);
    }
    total += peak;
  }
  return total;
}

namespace {

std::vector<std::int64_t> widths_of(const LayerDescriptor& adapted) {
  std::vector<std::int64_t> w(adapted.input_shape.rank(), 0);
  if (adapted.kernel.rank() == 0) return w;
  for (std::size_t a = 0; a < w.size(); ++a)
    w[a] = adapted.halo_override ? *adapted.halo_override : adapted.kernel.dims[a] / 2;
  return w;
}

struct Shard {
  std::int64_t samples = 1;
  std::vector<std::int64_t> act_den;  // per layer
  std::int64_t weight_den = 1;
};

BufferListing list_buffers(const ModelDescriptor& model, const std::vector<LayerCounts>& counts, const Shard& shard,
                           std::size_t first, std::size_t last) {
  BufferListing out;
  for (std::size_t l = first; l <= last; ++l) {
    const auto& c = counts[l];
    const auto& name = model.layers[l].name;
    const ElementCount x(shard.samples * c.x_elems, shard.act_den[l]);
    const ElementCount y(shard.samples * c.y_elems, shard.act_den[l]);
    const ElementCount w(c.w_elems, shard.weight_den);
    out.buffers.push_back({name, "x", x});
    out.buffers.push_back({name, "dx", x});
    out.buffers.push_back({name, "y", y});
    out.buffers.push_back({name, "dy", y});
    out.buffers.push_back({name, "w", w});
    out.buffers.push_back({name, "dw", w});
    out.buffers.push_back({name, "bias", ElementCount(c.bias_elems)});
  }
  for (const auto& b : out.buffers) out.elements += b.elements;
  return out;
}

std::int64_t up(std::int64_t a, std::int64_t b) { return a / b + (a % b != 0); }

}  // namespace

BufferListing enumerate_buffers(const ModelDescriptor& model, const SystemDescriptor& system,
                                const CalibrationProfile& profile, const StrategyConfig& cfg) {
  const auto counts = layer_counts(model);
  const std::size_t n = counts.size();
  Shard shard;
  shard.samples = model.batch_size;
  shard.act_den.assign(n, 1);
  std::vector<LayerRange> groups{{0, n - 1}};

  auto spatial = [&](std::int64_t parts, std::optional<std::size_t> prefix) {
    const auto end = prefix.value_or(default_spatial_prefix(model));
    for (std::size_t l = 0; l < end && l < n; ++l) shard.act_den[l] = parts;
  };

  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, strategy::Data>) {
          shard.samples = up(model.batch_size, c.p);
        } else if constexpr (std::is_same_v<T, strategy::Spatial>) {
          spatial(c.split.total(), c.prefix);
        } else if constexpr (std::is_same_v<T, strategy::Filter> || std::is_same_v<T, strategy::Channel>) {
          shard.weight_den = c.p;
        } else if constexpr (std::is_same_v<T, strategy::DataFilter>) {
          shard.samples = up(model.batch_size, c.p1);
          shard.weight_den = c.p2;
        } else if constexpr (std::is_same_v<T, strategy::DataSpatial>) {
          shard.samples = up(model.batch_size, c.p1);
          spatial(c.split.total(), c.prefix);
        } else if constexpr (std::is_same_v<T, strategy::LayerPure> || std::is_same_v<T, strategy::Pipeline>) {
          groups = resolve_groups(model, profile, c.p, c.groups);
        }
      },
      cfg);

  BufferListing best;
  bool have = false;
  for (const auto& g : groups) {
    auto listing = list_buffers(model, counts, shard, g.first, g.last);
    if (!have || best.elements < listing.elements) {
      best = std::move(listing);
      have = true;
    }
  }
  best.bytes = memory_bytes(best.elements, system);
  return best;
}

// ---------------------------------------------------------------------------

namespace {

struct CommSim {
  const ModelDescriptor& model;
  const SystemDescriptor& system;
  std::vector<LayerCounts> counts;
  double iterations;
  double delta;
  double weight_bytes = 0.0;

  CommSim(const ModelDescriptor& m, const SystemDescriptor& s)
      : model(m), system(s), counts(layer_counts(m)), iterations(m.iterations()), delta(s.delta) {
    std::int64_t w = 0;
    for (const auto& c : counts) w += c.w_elems;
    weight_bytes = delta * static_cast<double>(w);
  }

  CommParams params(std::int64_t p, double extra = 1.0) const {
    return select_params(system, p, system.contention_phi * extra);
  }

  // Filter-style activation exchanges for every layer but the last.
  void layerwise(PhaseTimes& t, std::int64_t p, std::int64_t samples) const {
    if (p <= 1) return;
    const auto cp = params(p);
    Accumulator gather, reduce;
    for (std::size_t l = 0; l + 1 < counts.size(); ++l) {
      const double bytes = delta * static_cast<double>(samples) * static_cast<double>(counts[l].y_elems);
      gather.add(simulate_ring_collective(CommPattern::Allgather, p, bytes / static_cast<double>(p), cp.alpha,
                                          cp.beta_eff));
      reduce.add(simulate_allreduce(system, cp, p, bytes));
    }
    t[Phase::FbAllgather] = iterations * gather.value();
    t[Phase::FbAllreduce] = iterations * reduce.value();
  }

  void halo(PhaseTimes& t, const SpatialSplit& split, std::optional<std::size_t> prefix, std::int64_t samples) const {
    const auto p = split.total();
    if (p <= 1) return;
    const auto end = prefix.value_or(default_spatial_prefix(model));
    auto cp = select_transport_params(system, Transport::Halo, p, system.contention_phi);
    Accumulator acc;
    for (std::size_t l = 0; l < end; ++l) {
      const auto layer = adapt_layer(model.layers[l]);
      if (layer.kernel.rank() == 0) continue;
      const auto w = widths_of(layer);
      const auto hx = enumerate_halo(layer.in_channels, layer.input_shape.dims, w, split);
      const auto hdy = enumerate_halo(layer.out_channels, infer_output_shape(layer).dims, w, split);
      // Forward input halo and backward output-gradient halo, each one exchange.
      for (auto h : {hx, hdy})
        acc.add(simulate_ring_collective(CommPattern::P2p, 2,
                                         delta * static_cast<double>(samples) * static_cast<double>(h), cp.alpha,
                                         cp.beta_eff));
    }
    t[Phase::FbHalo] = iterations * (2.0 * acc.value());
    if (end < counts.size()) {
      const auto gcp = params(p);
      const double seg = delta * static_cast<double>(samples) * static_cast<double>(counts[end - 1].y_elems) /
                         static_cast<double>(p);
      t[Phase::FbAllgather] =
          iterations * simulate_ring_collective(CommPattern::Allgather, p, seg, gcp.alpha, gcp.beta_eff);
    }
  }
};

}  // namespace

PhaseTimes simulate_comm(const ModelDescriptor& model, const SystemDescriptor& system,
                         const CalibrationProfile& profile, const StrategyConfig& cfg) {
  const CommSim sim(model, system);
  PhaseTimes t;
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, strategy::Data>) {
          t[Phase::GeAllreduce] = sim.iterations * simulate_allreduce(system, sim.params(c.p), c.p, sim.weight_bytes);
        } else if constexpr (std::is_same_v<T, strategy::Spatial>) {
          const auto p = c.split.total();
          t[Phase::GeAllreduce] = sim.iterations * simulate_allreduce(system, sim.params(p), p, sim.weight_bytes);
          sim.halo(t, c.split, c.prefix, model.batch_size);
        } else if constexpr (std::is_same_v<T, strategy::Filter> || std::is_same_v<T, strategy::Channel>) {
          sim.layerwise(t, c.p, model.batch_size);
        } else if constexpr (std::is_same_v<T, strategy::DataFilter>) {
          const auto micro = up(model.batch_size, c.p1);
          sim.layerwise(t, c.p2, micro);
          const auto cp = sim.params(c.p1 * c.p2, data_filter_phi(c));
          t[Phase::GeAllreduce] =
              sim.iterations * simulate_allreduce(system, cp, c.p1, sim.weight_bytes / static_cast<double>(c.p2));
        } else if constexpr (std::is_same_v<T, strategy::DataSpatial>) {
          const auto p2 = c.split.total();
          const auto micro = up(model.batch_size, c.p1);
          const auto intra = sim.params(p2);
          const double leader =
              simulate_ring_collective(CommPattern::Allreduce, p2, sim.weight_bytes, intra.alpha, intra.beta_eff);
          const double across = simulate_allreduce(system, sim.params(c.p1 * p2), c.p1, sim.weight_bytes);
          t[Phase::GeAllreduce] = sim.iterations * (leader + across);
          sim.halo(t, c.split, c.prefix, micro);
        } else if constexpr (std::is_same_v<T, strategy::LayerPure>) {
          if (c.p <= 1) return;
          const auto groups = resolve_groups(model, profile, c.p, c.groups);
          const auto cp = select_transport_params(system, Transport::P2p, c.p, system.contention_phi);
          // Groups run one after another: each boundary is one forward send
          // and one backward send.
          Accumulator acc;
          for (std::size_t i = 0; i + 1 < groups.size(); ++i)
            acc.add(simulate_ring_collective(
                CommPattern::P2p, 2,
                sim.delta * static_cast<double>(model.batch_size) *
                    static_cast<double>(sim.counts[groups[i].last].y_elems),
                cp.alpha, cp.beta_eff));
          t[Phase::FbP2p] = 2.0 * sim.iterations * acc.value();
        } else if constexpr (std::is_same_v<T, strategy::Pipeline>) {
          if (c.p <= 1) return;
          const auto groups = resolve_groups(model, profile, c.p, c.groups);
          const auto cp = select_transport_params(system, Transport::P2p, c.p, system.contention_phi);
          const double seg = static_cast<double>(model.batch_size) / static_cast<double>(c.segments);
          double slowest = 0.0;
          for (std::size_t i = 0; i + 1 < groups.size(); ++i)
            slowest = std::max(slowest, simulate_ring_collective(
                                            CommPattern::P2p, 2,
                                            sim.delta * seg * static_cast<double>(sim.counts[groups[i].last].y_elems),
                                            cp.alpha, cp.beta_eff));
          // Synchronous stages: every boundary advances at the slowest link.
          const std::vector<std::vector<double>> links(static_cast<std::size_t>(c.p - 1),
                                                       std::vector<double>(static_cast<std::size_t>(c.segments),
                                                                           slowest));
          t[Phase::FbP2p] = sim.iterations * (flow_shop_makespan(links) + flow_shop_makespan(links));
        }
      },
      cfg);
  return t;
}

}  // namespace cnnscale::sim
