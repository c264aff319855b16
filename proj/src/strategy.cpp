#include "cnnscale/strategy.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cnnscale/errors.hpp"
#include "text_util.hpp"

namespace cnnscale {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

// ---------------------------------------------------------------------------
// Config naming and parsing

StrategyKind kind_of(const StrategyConfig& cfg) { return static_cast<StrategyKind>(cfg.index()); }

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Serial:
      return "serial";
    case StrategyKind::Data:
      return "data";
    case StrategyKind::Spatial:
      return "spatial";
    case StrategyKind::LayerPure:
      return "layer";
    case StrategyKind::Pipeline:
      return "pipeline";
    case StrategyKind::Filter:
      return "filter";
    case StrategyKind::Channel:
      return "channel";
    case StrategyKind::DataFilter:
      return "df";
    case StrategyKind::DataSpatial:
      return "ds";
  }
  return "?";
}

std::int64_t pe_count(const StrategyConfig& cfg) {
  return std::visit(Overloaded{
                        [](const strategy::Serial&) -> std::int64_t { return 1; },
                        [](const strategy::Data& c) { return c.p; },
                        [](const strategy::Spatial& c) { return c.split.total(); },
                        [](const strategy::LayerPure& c) { return c.p; },
                        [](const strategy::Pipeline& c) { return c.p; },
                        [](const strategy::Filter& c) { return c.p; },
                        [](const strategy::Channel& c) { return c.p; },
                        [](const strategy::DataFilter& c) { return c.p1 * c.p2; },
                        [](const strategy::DataSpatial& c) { return c.p1 * c.split.total(); },
                    },
                    cfg);
}

namespace {

std::string groups_to_string(const std::vector<LayerRange>& groups) {
  std::string out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (i) out += '/';
    out += std::to_string(groups[i].first + 1) + '-' + std::to_string(groups[i].last + 1);
  }
  return out;
}

std::string split_to_string(const SpatialSplit& s) {
  std::string out = "pw=" + std::to_string(s.pw) + ",ph=" + std::to_string(s.ph);
  if (s.pd != 1) out += ",pd=" + std::to_string(s.pd);
  return out;
}

}  // namespace

std::string to_string(const StrategyConfig& cfg) {
  return std::visit(
      Overloaded{
          [](const strategy::Serial&) -> std::string { return "serial"; },
          [](const strategy::Data& c) { return "data:p=" + std::to_string(c.p); },
          [](const strategy::Spatial& c) {
            std::string s = "spatial:" + split_to_string(c.split);
            if (c.prefix) s += ",prefix=" + std::to_string(*c.prefix);
            return s;
          },
          [](const strategy::LayerPure& c) {
            std::string s = "layer:p=" + std::to_string(c.p);
            if (!c.groups.empty()) s += ",groups=" + groups_to_string(c.groups);
            return s;
          },
          [](const strategy::Pipeline& c) {
            std::string s = "pipeline:p=" + std::to_string(c.p) + ",S=" + std::to_string(c.segments);
            if (!c.groups.empty()) s += ",groups=" + groups_to_string(c.groups);
            return s;
          },
          [](const strategy::Filter& c) { return "filter:p=" + std::to_string(c.p); },
          [](const strategy::Channel& c) {
            std::string s = "channel:p=" + std::to_string(c.p);
            if (c.first_layer != 1) s += ",from=" + std::to_string(c.first_layer + 1);
            return s;
          },
          [](const strategy::DataFilter& c) {
            std::string s = "df:p1=" + std::to_string(c.p1) + ",p2=" + std::to_string(c.p2);
            if (c.phi) s += ",phi=" + detail::format_double(*c.phi);
            return s;
          },
          [](const strategy::DataSpatial& c) {
            std::string s = "ds:p1=" + std::to_string(c.p1) + "," + split_to_string(c.split);
            if (c.prefix) s += ",prefix=" + std::to_string(*c.prefix);
            return s;
          },
      },
      cfg);
}

namespace {

class FieldReader {
 public:
  FieldReader(std::string_view text, std::string_view body) : text_(text) {
    if (body.empty()) return;
    for (auto part : detail::split(body, ',')) {
      auto [key, value] = detail::split_kv(detail::trim(part));
      if (key.empty()) fail("expected key=value, got '" + std::string(part) + "'");
      if (!fields_.emplace(std::string(key), std::string(value)).second)
        fail("duplicate field '" + std::string(key) + "'");
    }
  }

  std::optional<std::string> take(const std::string& key) {
    auto it = fields_.find(key);
    if (it == fields_.end()) return std::nullopt;
    auto v = it->second;
    fields_.erase(it);
    return v;
  }

  std::int64_t count(const std::string& key, std::optional<std::int64_t> fallback = std::nullopt) {
    auto v = take(key);
    if (!v) {
      if (fallback) return *fallback;
      fail("missing '" + key + "'");
    }
    auto n = detail::parse_int(*v);
    if (!n || *n < 1) fail("'" + key + "' must be a positive integer");
    return *n;
  }

  std::optional<std::size_t> optional_count(const std::string& key) {
    if (!fields_.count(key)) return std::nullopt;
    return static_cast<std::size_t>(count(key));
  }

  std::vector<LayerRange> groups() {
    std::vector<LayerRange> out;
    auto v = take("groups");
    if (!v) return out;
    for (auto part : detail::split(*v, '/')) {
      auto dash = part.find('-');
      auto a = detail::parse_int(part.substr(0, dash));
      auto b = dash == std::string_view::npos ? a : detail::parse_int(part.substr(dash + 1));
      if (!a || !b || *a < 1 || *b < *a) fail("bad group '" + std::string(part) + "'");
      out.push_back({static_cast<std::size_t>(*a - 1), static_cast<std::size_t>(*b - 1)});
    }
    return out;
  }

  SpatialSplit split() {
    SpatialSplit s;
    s.pw = count("pw", 1);
    s.ph = count("ph", 1);
    s.pd = count("pd", 1);
    return s;
  }

  void finish() {
    if (!fields_.empty()) fail("unknown field '" + fields_.begin()->first + "'");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("strategy '" + std::string(text_) + "': " + what);
  }

 private:
  std::string_view text_;
  std::map<std::string, std::string> fields_;
};

}  // namespace

StrategyConfig parse_strategy(std::string_view text) {
  text = detail::trim(text);
  const auto colon = text.find(':');
  const auto name = detail::to_lower(text.substr(0, colon));
  const auto body = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  FieldReader f(text, body);
  StrategyConfig cfg;
  if (name == "serial") {
    cfg = strategy::Serial{};
  } else if (name == "data") {
    cfg = strategy::Data{f.count("p")};
  } else if (name == "spatial") {
    strategy::Spatial c;
    c.split = f.split();
    c.prefix = f.optional_count("prefix");
    cfg = c;
  } else if (name == "layer") {
    strategy::LayerPure c;
    c.p = f.count("p");
    c.groups = f.groups();
    cfg = c;
  } else if (name == "pipeline") {
    strategy::Pipeline c;
    c.p = f.count("p");
    c.segments = f.count("S", 1);
    c.groups = f.groups();
    cfg = c;
  } else if (name == "filter") {
    cfg = strategy::Filter{f.count("p")};
  } else if (name == "channel") {
    strategy::Channel c;
    c.p = f.count("p");
    c.first_layer = static_cast<std::size_t>(f.count("from", 2) - 1);
    cfg = c;
  } else if (name == "df") {
    strategy::DataFilter c;
    c.p1 = f.count("p1");
    c.p2 = f.count("p2");
    if (auto phi = f.take("phi")) {
      auto v = detail::parse_double(*phi);
      if (!v || *v < 1.0) f.fail("phi must be >= 1");
      c.phi = *v;
    }
    cfg = c;
  } else if (name == "ds") {
    strategy::DataSpatial c;
    c.p1 = f.count("p1");
    c.split = f.split();
    c.prefix = f.optional_count("prefix");
    cfg = c;
  } else {
    f.fail("unknown strategy '" + name + "'");
  }
  f.finish();
  return cfg;
}


// ---------------------------------------------------------------------------
// ElementCount

namespace {
std::int64_t narrow(__int128 v) {
  if (v > std::numeric_limits<std::int64_t>::max() || v < std::numeric_limits<std::int64_t>::min())
    throw Error("element count overflow");
  return static_cast<std::int64_t>(v);
}
}  // namespace

ElementCount::ElementCount(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw Error("element count denominator must be positive");
  const auto g = std::gcd(num, den);
  num_ = g ? num / g : 0;
  den_ = g ? den / g : 1;
}

ElementCount& ElementCount::operator+=(const ElementCount& rhs) {
  const auto g = std::gcd(den_, rhs.den_);
  const __int128 den = static_cast<__int128>(den_ / g) * rhs.den_;
  const __int128 num = static_cast<__int128>(num_) * (rhs.den_ / g) + static_cast<__int128>(rhs.num_) * (den_ / g);
  *this = ElementCount(narrow(num), narrow(den));
  return *this;
}

bool operator<(const ElementCount& a, const ElementCount& b) {
  return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
}

double memory_bytes(const ElementCount& elements, const SystemDescriptor& system) {
  return system.gamma * (static_cast<double>(system.delta) * elements.value());
}

// ---------------------------------------------------------------------------
// Phases, verdicts

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::GeAllreduce:
      return "GE-Allreduce";
    case Phase::FbAllgather:
      return "FB-Allgather";
    case Phase::FbAllreduce:
      return "FB-Allreduce";
    case Phase::FbHalo:
      return "FB-Halo";
    case Phase::FbP2p:
      return "FB-P2P";
  }
  return "?";
}

std::optional<Phase> phase_from_string(std::string_view name) {
  for (auto p : kCommPhases)
    if (to_string(p) == name) return p;
  return std::nullopt;
}

double PhaseTimes::total() const {
  double t = 0.0;
  for (double s : seconds) t += s;
  return t;
}

std::string_view to_string(Constraint c) {
  switch (c) {
    case Constraint::ScalingLimit:
      return "ScalingLimit";
    case Constraint::Memory:
      return "Memory";
    case Constraint::SplitTooFine:
      return "SplitTooFine";
  }
  return "?";
}

bool Verdict::cites(Constraint c) const {
  return std::any_of(violations.begin(), violations.end(), [c](const Violation& v) { return v.constraint == c; });
}

Verdict check_feasibility(const Prediction& prediction, const SystemDescriptor& system) {
  Verdict v;
  v.violations = prediction.structural;
  if (prediction.p_used > prediction.pe_limit)
    v.violations.push_back({Constraint::ScalingLimit, "p=" + std::to_string(prediction.p_used) +
                                                          " exceeds the strategy limit " +
                                                          std::to_string(prediction.pe_limit)});
  if (prediction.mem_peak > system.pe_memory_capacity) {
    std::ostringstream msg;
    msg << "peak " << prediction.mem_peak << " B exceeds capacity " << system.pe_memory_capacity << " B";
    v.violations.push_back({Constraint::Memory, msg.str()});
  }
  v.feasible = v.violations.empty();
  return v;
}

// ---------------------------------------------------------------------------
// Halo

std::vector<std::int64_t> halo_widths(const LayerDescriptor& raw) {
  const LayerDescriptor layer = adapt_layer(raw);
  std::vector<std::int64_t> widths(layer.input_shape.rank(), 0);
  if (layer.kernel.rank() == 0) return widths;
  for (std::size_t a = 0; a < widths.size(); ++a)
    widths[a] = layer.halo_override ? *layer.halo_override : layer.kernel.dims[a] / 2;
  return widths;
}

namespace {

std::int64_t halo_volume(const std::string& name, std::int64_t channels, const std::vector<std::int64_t>& extents,
                         const std::vector<std::int64_t>& widths, const SpatialSplit& split, HaloPosition position,
                         bool check) {
  for (std::size_t a = extents.size(); a < 3; ++a)
    if (split.along(a) > 1) throw ConfigError("layer '" + name + "' has no spatial axis " + std::to_string(a));
  std::int64_t total = 0;
  for (std::size_t a = 0; a < extents.size(); ++a) {
    const auto n = split.along(a);
    if (n <= 1 || widths[a] == 0) continue;
    if (check && extents[a] / n < widths[a])
      throw SplitTooFine("layer '" + name + "': axis " + std::to_string(a) + " split " + std::to_string(n) +
                         " ways leaves local extent " + std::to_string(extents[a] / n) + " < halo " +
                         std::to_string(widths[a]));
    const std::int64_t neighbors = position == HaloPosition::Interior && n >= 3 ? 2 : 1;
    std::int64_t face = 1;
    for (std::size_t b = 0; b < extents.size(); ++b) {
      if (b == a) continue;
      const auto nb = split.along(b);
      face *= nb > 1 ? ceil_div(extents[b], nb) : extents[b];
    }
    total += channels * widths[a] * face * neighbors;
  }
  return total;
}

std::int64_t halo_in(const LayerDescriptor& layer, const SpatialSplit& split, HaloPosition pos, bool check) {
  return halo_volume(layer.name, layer.in_channels, layer.input_shape.dims, halo_widths(layer), split, pos, check);
}

std::int64_t halo_out(const LayerDescriptor& raw, const SpatialSplit& split, HaloPosition pos, bool check) {
  const LayerDescriptor layer = adapt_layer(raw);
  return halo_volume(layer.name, layer.out_channels, infer_output_shape(layer).dims, halo_widths(layer), split, pos,
                     check);
}

}  // namespace

std::int64_t halo_elements(const LayerDescriptor& layer, const SpatialSplit& split, HaloPosition position) {
  return halo_in(layer, split, position, true);
}

std::int64_t halo_output_grad_elements(const LayerDescriptor& layer, const SpatialSplit& split,
                                       HaloPosition position) {
  return halo_out(layer, split, position, true);
}

// ---------------------------------------------------------------------------
// Partitioning

namespace {
double run_sum(std::span<const double> costs, std::size_t first, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = first; i < end; ++i) s += costs[i];
  return s;
}
}  // namespace

std::vector<std::size_t> partition_contiguous(std::span<const double> costs, std::size_t parts) {
  const std::size_t n = costs.size();
  if (parts < 1 || parts > n) throw ConfigError("cannot split " + std::to_string(n) + " items into " +
                                                std::to_string(parts) + " non-empty runs");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // best[k][i]: minimal bottleneck splitting the first i items into k runs.
  std::vector<std::vector<double>> best(parts + 1, std::vector<double>(n + 1, kInf));
  best[0][0] = 0.0;
  for (std::size_t k = 1; k <= parts; ++k)
    for (std::size_t i = k; i <= n; ++i)
      for (std::size_t j = k - 1; j < i; ++j)
        best[k][i] = std::min(best[k][i], std::max(best[k - 1][j], run_sum(costs, j, i)));
  const double bottleneck = best[parts][n];

  // fits[k][i]: items i..n-1 split into k runs each within the bottleneck.
  std::vector<std::vector<char>> fits(parts + 1, std::vector<char>(n + 1, 0));
  fits[0][n] = 1;
  for (std::size_t k = 1; k <= parts; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = i + 1; e <= n; ++e)
        if (fits[k - 1][e] && run_sum(costs, i, e) <= bottleneck) {
          fits[k][i] = 1;
          break;
        }

  std::vector<std::size_t> lengths;
  std::size_t start = 0;
  for (std::size_t k = parts; k >= 1; --k) {
    for (std::size_t e = start + 1; e <= n; ++e) {
      if (run_sum(costs, start, e) <= bottleneck && fits[k - 1][e]) {
        lengths.push_back(e - start);
        start = e;
        break;
      }
    }
  }
  return lengths;
}

std::vector<LayerRange> partition_pipeline_balanced(const ModelDescriptor& model, const CalibrationProfile& profile,
                                                    std::int64_t p) {
  if (p < 1) throw ConfigError("pipeline needs p >= 1");
  auto units = partition_units(model);
  if (static_cast<std::size_t>(p) > units.size()) {
    // More stages than main-path layers: fall back to single-layer units.
    units.clear();
    for (std::size_t i = 0; i < model.layers.size(); ++i) units.push_back({i, i});
  }
  std::vector<double> costs;
  for (const auto& u : units) {
    double c = 0.0;
    for (std::size_t l = u.first; l <= u.last; ++l) {
      const auto& t = profile.timing_for(model.layers[l].name);
      c += t.fw + t.bw;
    }
    costs.push_back(c);
  }
  const auto lengths = partition_contiguous(costs, static_cast<std::size_t>(p));
  std::vector<LayerRange> groups;
  std::size_t u = 0;
  for (auto len : lengths) {
    groups.push_back({units[u].first, units[u + len - 1].last});
    u += len;
  }
  return groups;
}

std::vector<LayerRange> resolve_groups(const ModelDescriptor& model, const CalibrationProfile& profile,
                                       std::int64_t p, const std::vector<LayerRange>& groups) {
  if (groups.empty()) return partition_pipeline_balanced(model, profile, p);
  if (static_cast<std::int64_t>(groups.size()) != p)
    throw ConfigError("expected " + std::to_string(p) + " groups, got " + std::to_string(groups.size()));
  std::size_t next = 0;
  for (const auto& g : groups) {
    if (g.first != next || g.last < g.first) throw ConfigError("groups must be contiguous and ordered");
    next = g.last + 1;
  }
  if (next != model.layers.size()) throw ConfigError("groups must cover every layer exactly once");
  return groups;
}

// ---------------------------------------------------------------------------
// Limits

std::size_t default_spatial_prefix(const ModelDescriptor& model) {
  std::size_t first_fc = model.layers.size();
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].kind == LayerKind::FullyConnected) {
      first_fc = i;
      break;
    }
  std::optional<std::size_t> last_conv;
  for (std::size_t i = 0; i < first_fc; ++i)
    if (model.layers[i].kind == LayerKind::Conv && !model.layers[i].is_branch()) last_conv = i;
  if (!last_conv) return std::max<std::size_t>(first_fc, 1);
  std::size_t end = *last_conv + 1;
  while (end < first_fc && (model.layers[end].kind == LayerKind::ElementWise ||
                            model.layers[end].kind == LayerKind::Norm || model.layers[end].is_branch()))
    ++end;
  return end;
}

namespace {

std::size_t resolve_prefix(const ModelDescriptor& model, std::optional<std::size_t> prefix) {
  const std::size_t p = prefix.value_or(default_spatial_prefix(model));
  if (p < 1 || p > model.layers.size())
    throw ConfigError("spatial prefix must cover 1.." + std::to_string(model.layers.size()) + " layers");
  return p;
}

std::int64_t spatial_limit(const ModelDescriptor& model, std::size_t prefix) {
  std::int64_t limit = std::numeric_limits<std::int64_t>::max();
  for (std::size_t l = 0; l < prefix; ++l) {
    const auto adapted = adapt_layer(model.layers[l]);
    limit = std::min({limit, adapted.input_shape.elements(), infer_output_shape(adapted).elements()});
  }
  return limit;
}

std::int64_t min_filters(const ModelDescriptor& model) {
  std::int64_t m = std::numeric_limits<std::int64_t>::max();
  for (const auto& l : model.layers) m = std::min(m, adapt_layer(l).out_channels);
  return m;
}

std::int64_t min_channels(const ModelDescriptor& model, std::size_t first) {
  first = std::min(first, model.layers.size() - 1);
  std::int64_t m = std::numeric_limits<std::int64_t>::max();
  for (std::size_t i = first; i < model.layers.size(); ++i) m = std::min(m, model.layers[i].in_channels);
  return m;
}

}  // namespace

std::int64_t max_pe_limit(const ModelDescriptor& model, StrategyKind kind, const LimitOptions& options) {
  const auto depth = static_cast<std::int64_t>(model.depth());
  switch (kind) {
    case StrategyKind::Serial:
      return 1;
    case StrategyKind::Data:
      return model.batch_size;
    case StrategyKind::Spatial:
      return spatial_limit(model, resolve_prefix(model, options.spatial_prefix));
    case StrategyKind::LayerPure:
    case StrategyKind::Pipeline:
      return depth;
    case StrategyKind::Filter:
      return min_filters(model);
    case StrategyKind::Channel:
      return min_channels(model, options.channel_first_layer);
    case StrategyKind::DataFilter:
      return model.batch_size * min_filters(model);
    case StrategyKind::DataSpatial:
      return model.batch_size * spatial_limit(model, resolve_prefix(model, options.spatial_prefix));
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Predictors

namespace {

struct Context {
  const ModelDescriptor& model;
  const SystemDescriptor& system;
  std::vector<LayerCounts> counts;
  std::vector<LayerTiming> timing;
  double iterations;
  std::int64_t batch;
  double delta;
  std::int64_t weights = 0;

  Context(const ModelDescriptor& m, const SystemDescriptor& s, const CalibrationProfile& profile)
      : model(m), system(s), counts(layer_counts(m)), iterations(m.iterations()), batch(m.batch_size),
        delta(static_cast<double>(s.delta)) {
    if (m.layers.empty()) throw ValidationError("model has no layers");
    if (m.batch_size < 1) throw ValidationError("batch size B must be >= 1");
    timing.reserve(m.layers.size());
    for (const auto& l : m.layers) timing.push_back(profile.timing_for(l.name));
    for (const auto& c : counts) weights += c.w_elems;
  }

  std::size_t size() const { return counts.size(); }

  /// sum FW_l / div(l) + sum BW_l / div(l), accumulated separately.
  template <class Div>
  double fwbw(Div div) const {
    double fw = 0.0, bw = 0.0;
    for (std::size_t l = 0; l < size(); ++l) fw += timing[l].fw / div(l);
    for (std::size_t l = 0; l < size(); ++l) bw += timing[l].bw / div(l);
    return fw + bw;
  }
  double fwbw() const {
    return fwbw([](std::size_t) { return 1.0; });
  }
  double wu() const {
    double s = 0.0;
    for (const auto& t : timing) s += t.wu;
    return s;
  }

  CommParams params(std::int64_t p, double extra_phi = 1.0) const {
    return select_params(system, p, system.contention_phi * extra_phi);
  }
  CommParams transport(Transport t, std::int64_t p) const {
    return select_transport_params(system, t, p, system.contention_phi);
  }
};

Prediction start(const Context& ctx, StrategyConfig cfg, std::int64_t limit) {
  Prediction pred;
  pred.config = std::move(cfg);
  pred.iterations = ctx.iterations;
  pred.p_used = pe_count(pred.config);
  pred.pe_limit = limit;
  return pred;
}

// Compute time shared by all non-pipelined strategies:
// t_fb = I * (samples * fwbw / fb_div), t_wu = I * (wu / wu_div).
void set_compute(Prediction& pred, const Context& ctx, double samples, double fwbw, double fb_div, double wu_div) {
  pred.t_fb = ctx.iterations * (samples * fwbw / fb_div);
  pred.t_wu = ctx.iterations * (ctx.wu() / wu_div);
}

ElementCount activations(std::int64_t samples, const LayerCounts& c, std::int64_t den = 1) {
  return ElementCount(2 * samples * (c.x_elems + c.y_elems), den);
}

ElementCount parameters(const LayerCounts& c, std::int64_t den = 1) {
  return ElementCount(2 * c.w_elems, den) + ElementCount(c.bias_elems);
}

void finish(Prediction& pred, const Context& ctx) {
  pred.mem_peak = memory_bytes(pred.mem_elements, ctx.system);
  pred.verdict = check_feasibility(pred, ctx.system);
}

void require_positive(std::int64_t v, const char* what) {
  if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
}

// Spatial machinery shared by spatial and data+spatial.
struct SpatialTerms {
  double fwbw = 0.0;
  ElementCount memory;
  double halo_per_iter = 0.0;
  double gather_per_iter = 0.0;
  std::vector<Violation> violations;
};

SpatialTerms spatial_terms(const Context& ctx, const SpatialSplit& split, std::size_t prefix, std::int64_t samples) {
  SpatialTerms out;
  const auto p = split.total();
  require_positive(split.pw, "pw");
  require_positive(split.ph, "ph");
  require_positive(split.pd, "pd");
  const auto pd = static_cast<double>(p);

  out.fwbw = ctx.fwbw([&](std::size_t l) { return l < prefix ? pd : 1.0; });
  for (std::size_t l = 0; l < ctx.size(); ++l) {
    const auto& c = ctx.counts[l];
    out.memory += activations(samples, c, l < prefix ? p : 1) + parameters(c);
  }
  if (p == 1) return out;

  bool too_fine = false;
  auto flag = [&](const std::string& msg) {
    if (!too_fine) out.violations.push_back({Constraint::SplitTooFine, msg});
    too_fine = true;
  };
  const CommParams halo_cp = ctx.transport(Transport::Halo, p);
  double halo = 0.0;
  for (std::size_t l = 0; l < prefix; ++l) {
    const auto layer = adapt_layer(ctx.model.layers[l]);
    const auto out_shape = infer_output_shape(layer);
    for (std::size_t a = 0; a < 3; ++a) {
      const auto n = split.along(a);
      if (n <= 1) continue;
      if (a >= layer.input_shape.rank())
        throw ConfigError("layer '" + layer.name + "' has no spatial axis " + std::to_string(a));
      if (n > layer.input_shape.dims[a] || n > out_shape.dims[a])
        flag("layer '" + layer.name + "': axis " + std::to_string(a) + " has fewer cells than PEs");
    }
    if (layer.kernel.rank() == 0) continue;
    std::int64_t hx = 0, hdy = 0;
    try {
      hx = halo_in(layer, split, HaloPosition::Interior, true);
      hdy = halo_out(layer, split, HaloPosition::Interior, true);
    } catch (const SplitTooFine& e) {
      flag(e.what());
      hx = halo_in(layer, split, HaloPosition::Interior, false);
      hdy = halo_out(layer, split, HaloPosition::Interior, false);
    }
    const double s = static_cast<double>(samples);
    halo += t_p2p(halo_cp, ctx.delta * s * static_cast<double>(hx)) +
            t_p2p(halo_cp, ctx.delta * s * static_cast<double>(hdy));
  }
  out.halo_per_iter = 2.0 * halo;
  if (prefix < ctx.size()) {
    const double y = static_cast<double>(ctx.counts[prefix - 1].y_elems);
    out.gather_per_iter = t_allgather_ring(ctx.params(p), p, ctx.delta * static_cast<double>(samples) * y / pd);
  }
  return out;
}

}  // namespace

Prediction predict_serial(const ModelDescriptor& model, const SystemDescriptor& system,
                          const CalibrationProfile& profile) {
  const Context ctx(model, system, profile);
  Prediction pred = start(ctx, strategy::Serial{}, 1);
  set_compute(pred, ctx, static_cast<double>(ctx.batch), ctx.fwbw(), 1.0, 1.0);
  for (const auto& c : ctx.counts) pred.mem_elements += activations(ctx.batch, c) + parameters(c);
  finish(pred, ctx);
  return pred;
}

Prediction predict_data(const ModelDescriptor& model, const SystemDescriptor& system,
                        const CalibrationProfile& profile, const strategy::Data& cfg) {
  require_positive(cfg.p, "p");
  const Context ctx(model, system, profile);
  Prediction pred = start(ctx, cfg, model.batch_size);
  const auto micro = ceil_div(ctx.batch, cfg.p);
  set_compute(pred, ctx, static_cast<double>(micro), ctx.fwbw(), 1.0, 1.0);
  pred.comm[Phase::GeAllreduce] =
      ctx.iterations * t_allreduce(system, ctx.params(cfg.p), cfg.p, ctx.delta * static_cast<double>(ctx.weights));
  for (const auto& c : ctx.counts) pred.mem_elements += activations(micro, c) + parameters(c);
  finish(pred, ctx);
  return pred;
}

Prediction predict_spatial(const ModelDescriptor& model, const SystemDescriptor& system,
                           const CalibrationProfile& profile, const strategy::Spatial& cfg) {
  const Context ctx(model, system, profile);
  const auto prefix = resolve_prefix(model, cfg.prefix);
  Prediction pred = start(ctx, cfg, spatial_limit(model, prefix));
  const auto p = cfg.split.total();
  auto terms = spatial_terms(ctx, cfg.split, prefix, ctx.batch);
  set_compute(pred, ctx, static_cast<double>(ctx.batch), terms.fwbw, 1.0, 1.0);
  pred.comm[Phase::GeAllreduce] =
      ctx.iterations * t_allreduce(system, ctx.params(p), p, ctx.delta * static_cast<double>(ctx.weights));
  pred.comm[Phase::FbHalo] = ctx.iterations * terms.halo_per_iter;
  pred.comm[Phase::FbAllgather] = ctx.iterations * terms.gather_per_iter;
  pred.mem_elements = terms.memory;
  pred.structural = std::move(terms.violations);
  finish(pred, ctx);
  return pred;
}

namespace {

ElementCount max_group_memory(const Context& ctx, const std::vector<LayerRange>& groups) {
  ElementCount peak;
  for (const auto& g : groups) {
    ElementCount m;
    for (std::size_t l = g.first; l <= g.last; ++l)
      m += activations(ctx.batch, ctx.counts[l]) + parameters(ctx.counts[l]);
    if (peak < m) peak = m;
  }
  return peak;
}

}  // namespace

Prediction predict_layer_pure(const ModelDescriptor& model, const SystemDescriptor& system,
                              const CalibrationProfile& profile, const strategy::LayerPure& cfg) {
  require_positive(cfg.p, "p");
  const Context ctx(model, system, profile);
  strategy::LayerPure resolved = cfg;
  resolved.groups = resolve_groups(model, profile, cfg.p, cfg.groups);
  Prediction pred = start(ctx, resolved, static_cast<std::int64_t>(model.depth()));
  set_compute(pred, ctx, static_cast<double>(ctx.batch), ctx.fwbw(), 1.0, 1.0);
  if (cfg.p > 1) {
    const CommParams cp = ctx.transport(Transport::P2p, cfg.p);
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < resolved.groups.size(); ++i)
      sum += t_p2p(cp, ctx.delta * static_cast<double>(ctx.batch) *
                           static_cast<double>(ctx.counts[resolved.groups[i].last].y_elems));
    pred.comm[Phase::FbP2p] = 2.0 * ctx.iterations * sum;
  }
  pred.mem_elements = max_group_memory(ctx, resolved.groups);
  finish(pred, ctx);
  return pred;
}

Prediction predict_pipeline(const ModelDescriptor& model, const SystemDescriptor& system,
                            const CalibrationProfile& profile, const strategy::Pipeline& cfg) {
  require_positive(cfg.p, "p");
  require_positive(cfg.segments, "S");
  const Context ctx(model, system, profile);
  strategy::Pipeline resolved = cfg;
  resolved.groups = resolve_groups(model, profile, cfg.p, cfg.groups);
  Prediction pred = start(ctx, resolved, static_cast<std::int64_t>(model.depth()));
  if (cfg.segments > ctx.batch)
    pred.structural.push_back({Constraint::ScalingLimit, "S=" + std::to_string(cfg.segments) +
                                                             " segments exceed the mini-batch B=" +
                                                             std::to_string(ctx.batch)});

  double max_fw = 0.0, max_bw = 0.0, max_wu = 0.0;
  for (const auto& g : resolved.groups) {
    double fw = 0.0, bw = 0.0, wu = 0.0;
    for (std::size_t l = g.first; l <= g.last; ++l) fw += ctx.timing[l].fw;
    for (std::size_t l = g.first; l <= g.last; ++l) bw += ctx.timing[l].bw;
    for (std::size_t l = g.first; l <= g.last; ++l) wu += ctx.timing[l].wu;
    max_fw = std::max(max_fw, fw);
    max_bw = std::max(max_bw, bw);
    max_wu = std::max(max_wu, wu);
  }
  const double p = static_cast<double>(cfg.p);
  const double s = static_cast<double>(cfg.segments);
  const double segment = static_cast<double>(ctx.batch) / s;
  pred.t_fb = ctx.iterations * (segment * (p + s - 1.0) * (max_fw + max_bw));
  pred.t_wu = ctx.iterations * (max_wu / 1.0);

  if (cfg.p > 1) {
    const CommParams cp = ctx.transport(Transport::P2p, cfg.p);
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < resolved.groups.size(); ++i)
      worst = std::max(worst, t_p2p(cp, ctx.delta * segment *
                                            static_cast<double>(ctx.counts[resolved.groups[i].last].y_elems)));
    pred.comm[Phase::FbP2p] = 2.0 * ctx.iterations * (p + s - 2.0) * worst;
  }
  pred.mem_elements = max_group_memory(ctx, resolved.groups);
  finish(pred, ctx);
  return pred;
}

namespace {

// Per-layer Allgather + Allreduce of activations shared by filter, channel
// and the intra-group part of data+filter. Layer G is excluded.
void model_parallel_comm(Prediction& pred, const Context& ctx, std::int64_t p, std::int64_t samples,
                         const CommParams& cp) {
  if (p <= 1) return;
  const double pd = static_cast<double>(p);
  double gather = 0.0, reduce = 0.0;
  for (std::size_t l = 0; l + 1 < ctx.size(); ++l) {
    const double bytes = ctx.delta * static_cast<double>(samples) * static_cast<double>(ctx.counts[l].y_elems);
    gather += t_allgather_ring(cp, p, bytes / pd);
    reduce += t_allreduce(ctx.system, cp, p, bytes);
  }
  pred.comm[Phase::FbAllgather] = ctx.iterations * gather;
  pred.comm[Phase::FbAllreduce] = ctx.iterations * reduce;
}

Prediction predict_model_parallel(const Context& ctx, StrategyConfig cfg, std::int64_t p, std::int64_t limit) {
  require_positive(p, "p");
  Prediction pred = start(ctx, std::move(cfg), limit);
  set_compute(pred, ctx, static_cast<double>(ctx.batch), ctx.fwbw(), static_cast<double>(p), static_cast<double>(p));
  model_parallel_comm(pred, ctx, p, ctx.batch, ctx.params(p));
  for (const auto& c : ctx.counts) pred.mem_elements += activations(ctx.batch, c) + parameters(c, p);
  finish(pred, ctx);
  return pred;
}

}  // namespace

Prediction predict_filter(const ModelDescriptor& model, const SystemDescriptor& system,
                          const CalibrationProfile& profile, const strategy::Filter& cfg) {
  const Context ctx(model, system, profile);
  return predict_model_parallel(ctx, cfg, cfg.p, min_filters(model));
}

Prediction predict_channel(const ModelDescriptor& model, const SystemDescriptor& system,
                           const CalibrationProfile& profile, const strategy::Channel& cfg) {
  const Context ctx(model, system, profile);
  return predict_model_parallel(ctx, cfg, cfg.p, min_channels(model, cfg.first_layer));
}

double data_filter_phi(const strategy::DataFilter& cfg) {
  if (cfg.phi) return *cfg.phi;
  return cfg.p2 > 1 ? 2.0 : 1.0;
}

Prediction predict_data_filter(const ModelDescriptor& model, const SystemDescriptor& system,
                               const CalibrationProfile& profile, const strategy::DataFilter& cfg) {
  require_positive(cfg.p1, "p1");
  require_positive(cfg.p2, "p2");
  const Context ctx(model, system, profile);
  const auto filters = min_filters(model);
  Prediction pred = start(ctx, cfg, model.batch_size * filters);
  if (cfg.p1 > ctx.batch)
    pred.structural.push_back({Constraint::ScalingLimit, "p1=" + std::to_string(cfg.p1) + " exceeds B=" +
                                                             std::to_string(ctx.batch)});
  if (cfg.p2 > filters)
    pred.structural.push_back({Constraint::ScalingLimit, "p2=" + std::to_string(cfg.p2) +
                                                             " exceeds the minimum filter count " +
                                                             std::to_string(filters)});
  const auto p = cfg.p1 * cfg.p2;
  const auto micro = ceil_div(ctx.batch, cfg.p1);
  const double p2 = static_cast<double>(cfg.p2);
  set_compute(pred, ctx, static_cast<double>(micro), ctx.fwbw(), p2, p2);
  model_parallel_comm(pred, ctx, cfg.p2, micro, ctx.params(cfg.p2));
  pred.comm[Phase::GeAllreduce] =
      ctx.iterations * t_allreduce(system, ctx.params(p, data_filter_phi(cfg)), cfg.p1,
                                   ctx.delta * static_cast<double>(ctx.weights) / p2);
  for (const auto& c : ctx.counts) pred.mem_elements += activations(micro, c) + parameters(c, cfg.p2);
  finish(pred, ctx);
  return pred;
}

Prediction predict_data_spatial(const ModelDescriptor& model, const SystemDescriptor& system,
                                const CalibrationProfile& profile, const strategy::DataSpatial& cfg) {
  require_positive(cfg.p1, "p1");
  const Context ctx(model, system, profile);
  const auto prefix = resolve_prefix(model, cfg.prefix);
  const auto limit = spatial_limit(model, prefix);
  Prediction pred = start(ctx, cfg, model.batch_size * limit);
  const auto p2 = cfg.split.total();
  if (cfg.p1 > ctx.batch)
    pred.structural.push_back({Constraint::ScalingLimit, "p1=" + std::to_string(cfg.p1) + " exceeds B=" +
                                                             std::to_string(ctx.batch)});
  if (p2 > limit)
    pred.structural.push_back({Constraint::ScalingLimit, "spatial group of " + std::to_string(p2) +
                                                             " PEs exceeds the spatial limit " +
                                                             std::to_string(limit)});
  const auto micro = ceil_div(ctx.batch, cfg.p1);
  auto terms = spatial_terms(ctx, cfg.split, prefix, micro);
  set_compute(pred, ctx, static_cast<double>(micro), terms.fwbw, 1.0, 1.0);
  const double grad_bytes = ctx.delta * static_cast<double>(ctx.weights);
  pred.comm[Phase::GeAllreduce] =
      ctx.iterations * (t_reduce_to_leader(ctx.params(p2), p2, grad_bytes) +
                        t_allreduce(system, ctx.params(cfg.p1 * p2), cfg.p1, grad_bytes));
  pred.comm[Phase::FbHalo] = ctx.iterations * terms.halo_per_iter;
  pred.comm[Phase::FbAllgather] = ctx.iterations * terms.gather_per_iter;
  pred.mem_elements = terms.memory;
  for (auto& v : terms.violations) pred.structural.push_back(std::move(v));
  finish(pred, ctx);
  return pred;
}

Prediction predict(const ModelDescriptor& model, const SystemDescriptor& system, const CalibrationProfile& profile,
                   const StrategyConfig& cfg) {
  return std::visit(
      Overloaded{
          [&](const strategy::Serial&) { return predict_serial(model, system, profile); },
          [&](const strategy::Data& c) { return predict_data(model, system, profile, c); },
          [&](const strategy::Spatial& c) { return predict_spatial(model, system, profile, c); },
          [&](const strategy::LayerPure& c) { return predict_layer_pure(model, system, profile, c); },
          [&](const strategy::Pipeline& c) { return predict_pipeline(model, system, profile, c); },
          [&](const strategy::Filter& c) { return predict_filter(model, system, profile, c); },
          [&](const strategy::Channel& c) { return predict_channel(model, system, profile, c); },
          [&](const strategy::DataFilter& c) { return predict_data_filter(model, system, profile, c); },
          [&](const strategy::DataSpatial& c) { return predict_data_spatial(model, system, profile, c); },
      },
      cfg);
}

}  // namespace cnnscale
