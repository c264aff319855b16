#include "cnnscale/calibration.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "cnnscale/errors.hpp"
#include "text_util.hpp"

namespace cnnscale {

std::string_view to_string(CommPattern pattern) {
  switch (pattern) {
    case CommPattern::Allreduce:
      return "allreduce";
    case CommPattern::Allgather:
      return "allgather";
    case CommPattern::P2p:
      return "p2p";
  }
  return "?";
}

std::optional<CommPattern> comm_pattern_from_string(std::string_view name) {
  const auto lower = detail::to_lower(name);
  if (lower == "allreduce") return CommPattern::Allreduce;
  if (lower == "allgather") return CommPattern::Allgather;
  if (lower == "p2p") return CommPattern::P2p;
  return std::nullopt;
}

const LayerTiming& CalibrationProfile::timing_for(const std::string& layer) const {
  if (auto it = timings.find(layer); it != timings.end()) return it->second;
  if (default_timing) return *default_timing;
  throw MissingTiming("no timing for layer '" + layer + "' and no default");
}

void CalibrationProfile::check_covers(const ModelDescriptor& model) const {
  for (const auto& l : model.layers) timing_for(l.name);
}

namespace {

// Coefficients of (alpha, beta) in the closed form of each pattern.
Eigen::RowVector2d features(CommPattern pattern, std::int64_t p, double m) {
  const double pd = static_cast<double>(p);
  switch (pattern) {
    case CommPattern::Allreduce:
      return {2.0 * (pd - 1.0), 2.0 * (pd - 1.0) * m / pd};
    case CommPattern::Allgather:
      return {pd - 1.0, (pd - 1.0) * m};
    case CommPattern::P2p:
      break;
  }
  return {1.0, m};
}

}  // namespace

AlphaBeta fit_alpha_beta(std::span<const BenchmarkSample> samples, CommPattern pattern, PeRange pes) {
  std::vector<const BenchmarkSample*> used;
  for (const auto& s : samples)
    if (s.pattern == pattern && pes.contains(s.p)) used.push_back(&s);
  if (used.size() < 2)
    throw InsufficientSamples("need at least 2 " + std::string(to_string(pattern)) +
                              " samples in range, have " + std::to_string(used.size()));

  const auto n = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixX2d a(n, 2);
  Eigen::VectorXd t(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = *used[static_cast<std::size_t>(i)];
    if (!(s.seconds > 0.0)) throw ValidationError("benchmark time must be > 0");
    if (pattern != CommPattern::P2p && s.p < 2) throw ValidationError("collective samples need p >= 2");
    a.row(i) = features(pattern, s.p, s.bytes);
    t(i) = s.seconds;
  }

  // Latency and bandwidth columns differ by ~10 orders of magnitude; equilibrate.
  Eigen::Vector2d scale = a.colwise().norm().transpose();
  if (scale(0) == 0.0 || scale(1) == 0.0) throw DegenerateFit("a feature column is identically zero");
  const Eigen::MatrixX2d scaled = a * scale.cwiseInverse().asDiagonal();

  Eigen::ColPivHouseholderQR<Eigen::MatrixX2d> qr(scaled);
  qr.setThreshold(1e-10);
  if (qr.rank() < 2) throw DegenerateFit("collinear features: message terms do not vary");
  Eigen::Vector2d x = qr.solve(t).cwiseQuotient(scale);

  if (x(0) < 0.0) {
    // Clamp latency at zero and refit the bandwidth term alone.
    const Eigen::VectorXd f = a.col(1);
    x(0) = 0.0;
    x(1) = f.dot(t) / f.squaredNorm();
  }
  if (!(x(1) > 0.0)) throw DegenerateFit("fitted beta is not positive");
  return {x(0), x(1)};
}

// ---------------------------------------------------------------------------

TimingTable load_layer_timings(std::string_view text) {
  TimingTable table;
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto cols = detail::split(line, ',');
    for (auto& c : cols) c = detail::trim(c);
    if (cols.front() == "layer") continue;  // header
    if (cols.size() < 3 || cols.size() > 4)
      throw ParseError(line_no, "row", "expected layer,fw,bw[,wu]");
    const std::string name(cols[0]);
    if (name.empty()) throw ParseError(line_no, "layer", "empty layer name");
    LayerTiming timing;
    auto read = [&](std::size_t idx, const char* field) {
      auto v = detail::parse_double(cols[idx]);
      if (!v || *v < 0.0) throw ParseError(line_no, field, "expected non-negative seconds");
      return *v;
    };
    timing.fw = read(1, "fw_s_per_sample");
    timing.bw = read(2, "bw_s_per_sample");
    if (cols.size() == 4 && !cols[3].empty()) {
      timing.wu = read(3, "wu_s_per_iter");
    } else {
      table.warnings.push_back("line " + std::to_string(line_no) + ": layer '" + name +
                               "' has no weight-update time, using 0");
    }
    if (name == "*") {
      if (table.default_timing)
        table.warnings.push_back("line " + std::to_string(line_no) + ": default timing redefined");
      table.default_timing = timing;
      continue;
    }
    if (table.timings.count(name))
      table.warnings.push_back("line " + std::to_string(line_no) + ": duplicate layer '" + name +
                               "', keeping the last entry");
    table.timings[name] = timing;
  }
  return table;
}

CalibrationProfile load_profile_file(const std::string& path, std::vector<std::string>* warnings) {
  auto table = load_layer_timings(read_text_file(path));
  if (warnings) *warnings = table.warnings;
  CalibrationProfile profile;
  profile.timings = std::move(table.timings);
  profile.default_timing = table.default_timing;
  return profile;
}

std::vector<BenchmarkSample> parse_benchmarks(std::string_view text) {
  std::vector<BenchmarkSample> out;
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    auto cols = detail::split(line, ',');
    for (auto& c : cols) c = detail::trim(c);
    if (cols.front() == "pattern") continue;
    if (cols.size() != 4) throw ParseError(line_no, "row", "expected pattern,p,bytes,seconds");
    BenchmarkSample s;
    auto pattern = comm_pattern_from_string(cols[0]);
    if (!pattern) throw ParseError(line_no, "pattern", "unknown pattern '" + std::string(cols[0]) + "'");
    s.pattern = *pattern;
    auto p = detail::parse_int(cols[1]);
    if (!p || *p < 1) throw ParseError(line_no, "p", "expected PE count >= 1");
    if (s.pattern != CommPattern::P2p && *p < 2) throw ParseError(line_no, "p", "collectives need p >= 2");
    s.p = *p;
    auto bytes = detail::parse_double(cols[2]);
    if (!bytes || *bytes < 0.0) throw ParseError(line_no, "bytes", "expected non-negative byte count");
    s.bytes = *bytes;
    auto secs = detail::parse_double(cols[3]);
    if (!secs || !(*secs > 0.0)) throw ParseError(line_no, "seconds", "expected positive seconds");
    s.seconds = *secs;
    out.push_back(s);
  }
  return out;
}

}  // namespace cnnscale
