#include "cnnscale/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "cnnscale/errors.hpp"
#include "json.hpp"
#include "text_util.hpp"

namespace cnnscale {

using json = nlohmann::ordered_json;

std::optional<Format> format_from_string(std::string_view name) {
  const auto lower = detail::to_lower(name);
  if (lower == "table") return Format::Table;
  if (lower == "csv") return Format::Csv;
  if (lower == "json") return Format::Json;
  return std::nullopt;
}

const std::vector<std::string>& breakdown_rows() {
  static const std::vector<std::string> rows = [] {
    std::vector<std::string> r{"FB-compute", "WU"};
    for (auto p : kCommPhases) r.emplace_back(to_string(p));
    r.emplace_back("IO");
    return r;
  }();
  return rows;
}

std::vector<std::pair<std::string, double>> breakdown(const Prediction& pred, double epochs) {
  std::vector<std::pair<std::string, double>> rows;
  rows.emplace_back("FB-compute", epochs * pred.t_fb);
  rows.emplace_back("WU", epochs * pred.t_wu);
  for (auto p : kCommPhases) rows.emplace_back(std::string(to_string(p)), epochs * pred.comm[p]);
  rows.emplace_back("IO", 0.0);  // not modeled
  return rows;
}

namespace {

std::string human_seconds(double s) {
  char buf[32];
  if (s == 0.0)
    return "0";
  else if (s < 1e-3)
    std::snprintf(buf, sizeof buf, "%.3f us", s * 1e6);
  else if (s < 1.0)
    std::snprintf(buf, sizeof buf, "%.3f ms", s * 1e3);
  else
    std::snprintf(buf, sizeof buf, "%.3f s", s);
  return buf;
}

std::string human_bytes(double b) {
  char buf[32];
  const char* units[] = {"B", "KiB", "MiB", "GiB", "TiB"};
  int u = 0;
  while (b >= 1024.0 && u < 4) {
    b /= 1024.0;
    ++u;
  }
  std::snprintf(buf, sizeof buf, "%.2f %s", b, units[u]);
  return buf;
}

json violations_json(const std::vector<Violation>& vs) {
  json out = json::array();
  for (const auto& v : vs) out.push_back({{"constraint", std::string(to_string(v.constraint))}, {"detail", v.detail}});
  return out;
}

}  // namespace

std::string emit_breakdown(const Prediction& pred, Format format, double epochs) {
  const auto rows = breakdown(pred, epochs);
  const double total = epochs * pred.total();
  std::ostringstream out;
  switch (format) {
    case Format::Csv:
      out << "# config: " << to_string(pred.config) << '\n';
      out << "phase,seconds\n";
      for (const auto& [name, s] : rows) out << name << ',' << detail::format_double(s) << '\n';
      out << "total," << detail::format_double(total) << '\n';
      out << "mem_bytes," << detail::format_double(pred.mem_peak) << '\n';
      break;
    case Format::Json: {
      json j;
      j["config"] = to_string(pred.config);
      j["p"] = pred.p_used;
      j["pe_limit"] = pred.pe_limit;
      j["iterations"] = pred.iterations;
      j["epochs"] = epochs;
      json phases = json::object();
      for (const auto& [name, s] : rows) phases[name] = s;
      j["phases"] = phases;
      j["compute"] = epochs * pred.t_comp();
      j["comm"] = epochs * pred.t_comm();
      j["total"] = total;
      j["per_iteration"] = pred.iterations > 0.0 ? pred.total() / pred.iterations : 0.0;
      j["mem_bytes"] = pred.mem_peak;
      j["feasible"] = pred.verdict.feasible;
      j["violations"] = violations_json(pred.verdict.violations);
      out << j.dump(2) << '\n';
      break;
    }
    case Format::Table: {
      out << "strategy    " << to_string(pred.config) << "  (p=" << pred.p_used << ", limit " << pred.pe_limit
          << ")\n";
      out << "iterations  " << detail::format_double(pred.iterations) << " per epoch";
      if (epochs != 1.0) out << ", " << detail::format_double(epochs) << " epochs";
      out << "\n\n";
      out << std::left << std::setw(14) << "phase" << std::right << std::setw(16) << "total" << std::setw(16)
          << "per iter" << std::setw(9) << "share" << '\n';
      const double iters = epochs * pred.iterations;
      auto line = [&](const std::string& name, double s) {
        char share[16];
        std::snprintf(share, sizeof share, "%.1f%%", total > 0.0 ? 100.0 * s / total : 0.0);
        out << std::left << std::setw(14) << name << std::right << std::setw(16) << human_seconds(s) << std::setw(16)
            << human_seconds(iters > 0.0 ? s / iters : 0.0) << std::setw(9) << share << '\n';
      };
      for (const auto& [name, s] : rows) line(name, s);
      line("total", total);
      out << "\nmemory      " << human_bytes(pred.mem_peak) << " per PE (" << detail::format_double(pred.mem_peak)
          << " B)\n";
      if (pred.verdict.feasible) {
        out << "verdict     feasible\n";
      } else {
        out << "verdict     infeasible\n";
        for (const auto& v : pred.verdict.violations) out << "  " << to_string(v.constraint) << ": " << v.detail << '\n';
      }
      break;
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------

namespace {

bool is_comm_row(const std::string& name) { return phase_from_string(name).has_value(); }

void finish_run(MeasuredRun& run, std::optional<double> total) {
  for (const auto& [name, s] : run.phases) {
    if (name == "FB-compute" || name == "WU")
      run.measured_comp += s;
    else if (is_comm_row(name))
      run.measured_comm += s;
  }
  run.measured_total = total ? *total : run.measured_comp + run.measured_comm;
}

}  // namespace

MeasuredRun parse_measured(std::string_view text, std::vector<std::string>* warnings) {
  MeasuredRun run;
  std::optional<double> total;
  const auto& known = breakdown_rows();
  auto warn = [&](std::string w) {
    if (warnings) warnings->push_back(std::move(w));
  };

  if (!detail::trim(text).empty() && detail::trim(text).front() == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ParseError(1, "json", e.what());
    }
    if (j.contains("config")) run.config = j["config"].get<std::string>();
    if (j.contains("phases"))
      for (const auto& [name, v] : j["phases"].items()) {
        if (std::find(known.begin(), known.end(), name) == known.end()) {
          warn("unknown phase '" + name + "' ignored");
          continue;
        }
        run.phases[name] = v.get<double>();
      }
    if (j.contains("total")) total = j["total"].get<double>();
    finish_run(run, total);
    return run;
  }

  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = detail::trim(raw);
    if (line.rfind("# config:", 0) == 0) {
      run.config = std::string(detail::trim(line.substr(9)));
      continue;
    }
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    auto cols = detail::split(line, ',');
    if (cols.size() != 2) throw ParseError(line_no, "row", "expected phase,seconds");
    const std::string name(detail::trim(cols[0]));
    if (name == "phase") continue;
    auto v = detail::parse_double(cols[1]);
    if (!v || *v < 0.0) throw ParseError(line_no, name, "expected non-negative seconds");
    if (name == "total") {
      total = *v;
    } else if (name == "mem_bytes") {
      continue;
    } else if (std::find(known.begin(), known.end(), name) == known.end()) {
      warn("line " + std::to_string(line_no) + ": unknown phase '" + name + "' ignored");
    } else {
      run.phases[name] = *v;
    }
  }
  finish_run(run, total);
  return run;
}

double projection_accuracy_raw(double predicted_total, double measured_total) {
  if (!(measured_total > 0.0)) throw ZeroMeasured("measured total must be > 0");
  return 1.0 - std::abs(predicted_total - measured_total) / measured_total;
}

double projection_accuracy(double predicted_total, double measured_total) {
  return std::clamp(projection_accuracy_raw(predicted_total, measured_total), 0.0, 1.0);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::int64_t> sweep(const RecommendOptions& o) {
  std::vector<std::int64_t> ps;
  if (o.dense) {
    for (std::int64_t p = 2; p <= o.budget; ++p) ps.push_back(p);
  } else {
    for (std::int64_t p = 2; p <= o.budget; p *= 2) ps.push_back(p);
  }
  return ps;
}

// Every (pw, ph, pd) with product p over the first `rank` axes.
std::vector<SpatialSplit> factorizations(std::int64_t p, std::size_t rank) {
  std::vector<SpatialSplit> out;
  for (std::int64_t pw = 1; pw <= p; ++pw) {
    if (p % pw) continue;
    const auto rest = p / pw;
    if (rank == 1) {
      if (rest == 1) out.push_back({pw, 1, 1});
      continue;
    }
    for (std::int64_t ph = 1; ph <= rest; ++ph) {
      if (rest % ph) continue;
      const auto pd = rest / ph;
      if (rank == 2 && pd != 1) continue;
      out.push_back({pw, ph, pd});
    }
  }
  return out;
}

}  // namespace

std::vector<StrategyConfig> enumerate_configs(const ModelDescriptor& model, const RecommendOptions& options) {
  if (options.budget < 1) throw ConfigError("budget must be >= 1");
  std::vector<StrategyConfig> out{strategy::Serial{}};
  const auto ps = sweep(options);
  const auto rank = model.layers.front().input_shape.rank();
  const auto min_f = max_pe_limit(model, StrategyKind::Filter);
  const auto min_c = max_pe_limit(model, StrategyKind::Channel);
  const auto depth = static_cast<std::int64_t>(std::min(model.depth(), model.layers.size()));

  for (auto p : ps) out.push_back(strategy::Data{p});
  for (auto p : ps)
    for (const auto& s : factorizations(p, rank)) out.push_back(strategy::Spatial{s, std::nullopt});
  for (auto p : ps) {
    if (p > depth) continue;
    for (std::int64_t s = 1; s <= model.batch_size; s *= 2) {
      strategy::Pipeline c;
      c.p = p;
      c.segments = s;
      out.push_back(c);
    }
  }
  for (auto p : ps)
    if (min_f % p == 0) out.push_back(strategy::Filter{p});
  for (auto p : ps)
    if (min_c % p == 0) out.push_back(strategy::Channel{p, 1});
  for (auto p : ps)
    for (std::int64_t p1 = 2; p1 <= p / 2; ++p1) {
      if (p % p1) continue;
      strategy::DataFilter c;
      c.p1 = p1;
      c.p2 = p / p1;
      out.push_back(c);
    }
  for (auto p : ps)
    for (std::int64_t p1 = 2; p1 <= p / 2; ++p1) {
      if (p % p1) continue;
      for (const auto& s : factorizations(p / p1, rank)) out.push_back(strategy::DataSpatial{p1, s, std::nullopt});
    }
  return out;
}

Recommendation recommend(const ModelDescriptor& model, const SystemDescriptor& system,
                         const CalibrationProfile& profile, const RecommendOptions& options) {
  SystemDescriptor sys = system;
  if (options.memory_capacity) sys.pe_memory_capacity = *options.memory_capacity;
  Recommendation rec;
  for (const auto& cfg : enumerate_configs(model, options)) {
    try {
      auto pred = predict(model, sys, profile, cfg);
      if (pred.verdict.feasible)
        rec.ranked.push_back(std::move(pred));
      else
        rec.rejected.push_back({to_string(cfg), pred.verdict.violations, {}});
    } catch (const Error& e) {
      rec.rejected.push_back({to_string(cfg), {}, e.what()});
    }
  }
  std::stable_sort(rec.ranked.begin(), rec.ranked.end(), [](const Prediction& a, const Prediction& b) {
    if (a.total() != b.total()) return a.total() < b.total();
    if (a.mem_peak != b.mem_peak) return a.mem_peak < b.mem_peak;
    if (a.p_used != b.p_used) return a.p_used < b.p_used;
    return to_string(a.config) < to_string(b.config);
  });
  return rec;
}

std::string emit_recommendation(const Recommendation& rec, Format format) {
  std::ostringstream out;
  auto reasons = [](const Rejection& r) {
    std::string s;
    for (const auto& v : r.violations) {
      if (!s.empty()) s += "; ";
      s += std::string(to_string(v.constraint)) + ": " + v.detail;
    }
    if (!r.error.empty()) s += (s.empty() ? "" : "; ") + std::string("error: ") + r.error;
    return s;
  };
  switch (format) {
    case Format::Json: {
      json j;
      j["ranked"] = json::array();
      for (const auto& p : rec.ranked) {
        json phases = json::object();
        for (const auto& [name, s] : breakdown(p)) phases[name] = s;
        j["ranked"].push_back({{"config", to_string(p.config)},
                               {"p", p.p_used},
                               {"total", p.total()},
                               {"compute", p.t_comp()},
                               {"comm", p.t_comm()},
                               {"mem_bytes", p.mem_peak},
                               {"phases", phases}});
      }
      j["rejected"] = json::array();
      for (const auto& r : rec.rejected) {
        json item{{"config", r.config}, {"violations", violations_json(r.violations)}};
        if (!r.error.empty()) item["error"] = r.error;
        j["rejected"].push_back(item);
      }
      out << j.dump(2) << '\n';
      break;
    }
    case Format::Csv:
      out << "rank,config,p,total_s,compute_s,comm_s,mem_bytes,status,reason\n";
      for (std::size_t i = 0; i < rec.ranked.size(); ++i) {
        const auto& p = rec.ranked[i];
        out << i + 1 << ',' << to_string(p.config) << ',' << p.p_used << ',' << detail::format_double(p.total()) << ','
            << detail::format_double(p.t_comp()) << ',' << detail::format_double(p.t_comm()) << ','
            << detail::format_double(p.mem_peak) << ",ok,\n";
      }
      for (const auto& r : rec.rejected) {
        auto why = reasons(r);
        std::replace(why.begin(), why.end(), ',', ' ');
        out << ",\"" << r.config << "\",,,,,,rejected," << why << '\n';
      }
      break;
    case Format::Table: {
      if (rec.ranked.empty()) out << "no feasible configuration\n";
      else
        out << std::left << std::setw(6) << "rank" << std::setw(34) << "config" << std::right << std::setw(7) << "p"
            << std::setw(14) << "total" << std::setw(14) << "compute" << std::setw(14) << "comm" << std::setw(14)
            << "memory" << '\n';
      for (std::size_t i = 0; i < rec.ranked.size(); ++i) {
        const auto& p = rec.ranked[i];
        out << std::left << std::setw(6) << i + 1 << std::setw(34) << to_string(p.config) << std::right << std::setw(7)
            << p.p_used << std::setw(14) << human_seconds(p.total()) << std::setw(14) << human_seconds(p.t_comp())
            << std::setw(14) << human_seconds(p.t_comm()) << std::setw(14) << human_bytes(p.mem_peak) << '\n';
      }
      if (!rec.rejected.empty()) {
        out << "\nrejected (" << rec.rejected.size() << ")\n";
        for (const auto& r : rec.rejected) out << "  " << std::left << std::setw(32) << r.config << reasons(r) << '\n';
      }
      break;
    }
  }
  return out.str();
}

}  // namespace cnnscale
