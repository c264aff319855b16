#include "cnnscale/cost.hpp"

#include <cmath>
#include <sstream>

#include "cnnscale/errors.hpp"
#include "cnnscale/model.hpp"
#include "text_util.hpp"

namespace cnnscale {

int ceil_log2(std::int64_t p) {
  int l = 0;
  std::int64_t reach = 1;
  while (reach < p) {
    reach *= 2;
    ++l;
  }
  return l;
}

void validate(const SystemDescriptor& system) {
  if (system.tiers.empty()) throw ValidationError("system has no network tiers");
  std::int64_t prev = 0;
  for (const auto& t : system.tiers) {
    if (t.max_pes <= prev)
      throw ValidationError("tier '" + t.name + "': tiers must have strictly increasing pes");
    if (!(t.alpha >= 0.0)) throw ValidationError("tier '" + t.name + "': alpha must be >= 0");
    if (!(t.beta > 0.0)) throw ValidationError("tier '" + t.name + "': beta must be > 0");
    prev = t.max_pes;
  }
  if (system.delta != 1 && system.delta != 2 && system.delta != 4 && system.delta != 8)
    throw ValidationError("delta must be one of 1, 2, 4, 8");
  if (!(system.gamma > 0.0 && system.gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
  if (!(system.contention_phi >= 1.0)) throw ValidationError("phi must be >= 1");
  if (system.tree_chunks < 1) throw ValidationError("tree_chunks must be >= 1");
  if (!(system.ring_tree_threshold >= 0.0)) throw ValidationError("ring_tree_threshold must be >= 0");
  if (!(system.pe_memory_capacity >= 0.0)) throw ValidationError("memory must be >= 0");
  for (const auto& [kind, tp] : system.transports)
    if (!(tp.alpha >= 0.0) || !(tp.beta > 0.0))
      throw ValidationError("transport override needs alpha >= 0 and beta > 0");
}

CommParams select_params(const SystemDescriptor& system, std::int64_t p, double phi) {
  if (p < 1) throw Error("select_params: p must be >= 1");
  if (!(phi >= 1.0)) throw Error("select_params: phi must be >= 1");
  for (const auto& tier : system.tiers)
    if (tier.max_pes >= p) return {tier.alpha, tier.beta * phi};
  throw TierExhausted("no network tier holds " + std::to_string(p) + " PEs");
}

CommParams select_transport_params(const SystemDescriptor& system, Transport transport, std::int64_t p,
                                   double phi) {
  CommParams cp = select_params(system, p, phi);
  if (auto it = system.transports.find(transport); it != system.transports.end())
    cp = {it->second.alpha, it->second.beta * phi};
  return cp;
}

double t_p2p(const CommParams& cp, double bytes) { return cp.alpha + bytes * cp.beta_eff; }

double t_allreduce_ring(const CommParams& cp, std::int64_t p, double bytes) {
  if (p <= 1) return 0.0;
  const double pd = static_cast<double>(p);
  return 2.0 * (pd - 1.0) * (cp.alpha + (bytes / pd) * cp.beta_eff);
}

double t_allgather_ring(const CommParams& cp, std::int64_t p, double segment_bytes) {
  if (p <= 1) return 0.0;
  return (static_cast<double>(p) - 1.0) * (cp.alpha + segment_bytes * cp.beta_eff);
}

double t_allreduce_tree(const CommParams& cp, std::int64_t p, double bytes, int chunks) {
  if (p <= 1) return 0.0;
  const double k = chunks;
  return 2.0 * (ceil_log2(p) + k) * (cp.alpha + (bytes / (2.0 * k)) * cp.beta_eff);
}

double t_allreduce(const SystemDescriptor& system, const CommParams& cp, std::int64_t p, double bytes) {
  if (bytes < system.ring_tree_threshold) return t_allreduce_tree(cp, p, bytes, system.tree_chunks);
  return t_allreduce_ring(cp, p, bytes);
}

double t_reduce_to_leader(const CommParams& cp, std::int64_t p, double bytes) {
  return t_allreduce_ring(cp, p, bytes);
}

// ---------------------------------------------------------------------------

namespace {

double number(std::string_view value, std::size_t line, const std::string& field) {
  auto v = detail::parse_double(value);
  if (!v) throw ParseError(line, field, "expected number, got '" + std::string(value) + "'");
  return *v;
}

std::int64_t integer(std::string_view value, std::size_t line, const std::string& field) {
  auto v = detail::parse_int(value);
  if (!v) throw ParseError(line, field, "expected integer, got '" + std::string(value) + "'");
  return *v;
}

std::string_view transport_name(Transport t) { return t == Transport::Halo ? "halo" : "p2p"; }

}  // namespace

SystemDescriptor parse_system(std::string_view text) {
  SystemDescriptor sys;
  bool have_memory = false;
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto tokens = detail::split_ws(line);

    if (tokens.front() == "tier") {
      if (tokens.size() < 2) throw ParseError(line_no, "tier", "tier needs a name");
      NetworkTier tier;
      tier.name = std::string(tokens[1]);
      bool pes = false, alpha = false, beta = false;
      for (std::size_t t = 2; t < tokens.size(); ++t) {
        auto [key, value] = detail::split_kv(tokens[t]);
        const std::string k(key);
        if (k == "pes") {
          tier.max_pes = integer(value, line_no, k);
          pes = true;
        } else if (k == "alpha") {
          tier.alpha = number(value, line_no, k);
          alpha = true;
        } else if (k == "beta") {
          tier.beta = number(value, line_no, k);
          beta = true;
        } else {
          throw ParseError(line_no, k.empty() ? std::string(tokens[t]) : k, "unknown tier field");
        }
      }
      if (!pes || !alpha || !beta) throw ParseError(line_no, "tier", "tier needs pes=, alpha= and beta=");
      sys.tiers.push_back(std::move(tier));
      continue;
    }

    if (tokens.front() == "transport") {
      if (tokens.size() < 2) throw ParseError(line_no, "transport", "transport needs a pattern");
      Transport kind;
      if (tokens[1] == "halo")
        kind = Transport::Halo;
      else if (tokens[1] == "p2p")
        kind = Transport::P2p;
      else
        throw ParseError(line_no, "transport", "expected halo or p2p");
      TransportParams tp;
      bool alpha = false, beta = false;
      for (std::size_t t = 2; t < tokens.size(); ++t) {
        auto [key, value] = detail::split_kv(tokens[t]);
        const std::string k(key);
        if (k == "alpha") {
          tp.alpha = number(value, line_no, k);
          alpha = true;
        } else if (k == "beta") {
          tp.beta = number(value, line_no, k);
          beta = true;
        } else {
          throw ParseError(line_no, k, "unknown transport field");
        }
      }
      if (!alpha || !beta) throw ParseError(line_no, "transport", "transport needs alpha= and beta=");
      sys.transports[kind] = tp;
      continue;
    }

    for (auto token : tokens) {
      auto [key, value] = detail::split_kv(token);
      const std::string k(key);
      if (k == "memory") {
        sys.pe_memory_capacity = number(value, line_no, k);
        have_memory = true;
      } else if (k == "delta") {
        sys.delta = static_cast<int>(integer(value, line_no, k));
      } else if (k == "gamma") {
        sys.gamma = number(value, line_no, k);
      } else if (k == "ring_tree_threshold") {
        sys.ring_tree_threshold = number(value, line_no, k);
      } else if (k == "tree_chunks") {
        sys.tree_chunks = static_cast<int>(integer(value, line_no, k));
      } else if (k == "phi") {
        sys.contention_phi = number(value, line_no, k);
      } else {
        throw ParseError(line_no, k.empty() ? std::string(token) : k, "unknown system field");
      }
    }
  }
  if (!have_memory) throw ParseError(line_no, "memory", "missing memory=<bytes>");
  validate(sys);
  return sys;
}

std::string serialize_system(const SystemDescriptor& sys) {
  using detail::format_double;
  std::ostringstream out;
  for (const auto& t : sys.tiers)
    out << "tier " << t.name << " pes=" << t.max_pes << " alpha=" << format_double(t.alpha)
        << " beta=" << format_double(t.beta) << '\n';
  for (const auto& [kind, tp] : sys.transports)
    out << "transport " << transport_name(kind) << " alpha=" << format_double(tp.alpha)
        << " beta=" << format_double(tp.beta) << '\n';
  out << "memory=" << format_double(sys.pe_memory_capacity) << " delta=" << sys.delta
      << " gamma=" << format_double(sys.gamma)
      << " ring_tree_threshold=" << format_double(sys.ring_tree_threshold)
      << " tree_chunks=" << sys.tree_chunks << " phi=" << format_double(sys.contention_phi) << '\n';
  return out.str();
}

SystemDescriptor load_system_file(const std::string& path) { return parse_system(read_text_file(path)); }

}  // namespace cnnscale
