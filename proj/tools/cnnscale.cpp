// cnnscale: predict, rank and check CNN parallelization strategies.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cnnscale/calibration.hpp"
#include "cnnscale/cost.hpp"
#include "cnnscale/errors.hpp"
#include "cnnscale/model.hpp"
#include "cnnscale/report.hpp"
#include "cnnscale/sim.hpp"
#include "cnnscale/strategy.hpp"
#include "cnnscale/verify.hpp"

namespace {

using namespace cnnscale;

constexpr int kOk = 0;
constexpr int kInfeasible = 1;
constexpr int kInputError = 2;

struct Inputs {
  std::string model, system, timings;
};

struct Loaded {
  ModelDescriptor model;
  SystemDescriptor system;
  CalibrationProfile profile;
};

Loaded load(const Inputs& in) {
  Loaded l;
  l.model = load_model_file(in.model);
  l.system = load_system_file(in.system);
  std::vector<std::string> warnings;
  l.profile = load_profile_file(in.timings, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << in.timings << ": " << w << '\n';
  l.profile.check_covers(l.model);
  return l;
}

Format parse_format(const std::string& name) {
  auto f = format_from_string(name);
  if (!f) throw ConfigError("unknown format '" + name + "' (table, csv, json)");
  return *f;
}

void add_inputs(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--model", in.model, "model description file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--system", in.system, "system description file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--timings", in.timings, "per-layer timings CSV")->required()->check(CLI::ExistingFile);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int run_verify(std::size_t instances, std::uint64_t seed) {
  int status = kOk;
  auto show = [&](const char* name, const verify::Report& r) {
    std::cout << name << ": " << r.instances << " instances, " << r.checks << " checks, worst relative error "
              << fmt(r.worst_relative) << (r.ok() ? "  ok\n" : "  FAILED\n");
    for (std::size_t i = 0; i < r.mismatches.size() && i < 10; ++i) {
      const auto& m = r.mismatches[i];
      std::cout << "  instance " << m.instance << " " << m.config << " " << m.what << ": closed form "
                << fmt(m.expected) << ", simulated " << fmt(m.actual) << '\n';
    }
    if (!r.ok()) status = kInfeasible;
  };
  show("communication", verify::check_comm(instances, seed));
  show("memory", verify::check_memory(instances, seed + 1));

  // Pipeline: equal groups must match the schedule exactly.
  std::size_t pipe_checks = 0, pipe_bad = 0;
  for (std::int64_t p : {1, 2, 4, 8})
    for (std::int64_t s : {1, 2, 4, 8}) {
      const std::vector<double> fw(static_cast<std::size_t>(p), 0.25), bw(static_cast<std::size_t>(p), 0.5);
      const auto sched = sim::simulate_pipeline_schedule(fw, bw, s, 8, 3.0);
      const double closed = 3.0 * ((8.0 / static_cast<double>(s)) * static_cast<double>(p + s - 1) * (0.25 + 0.5));
      ++pipe_checks;
      if (verify::relative_error(closed, sched.total) > 1e-12) ++pipe_bad;
    }
  std::cout << "pipeline: " << pipe_checks << " equal-group schedules" << (pipe_bad ? "  FAILED\n" : "  ok\n");
  if (pipe_bad) status = kInfeasible;
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cnnscale: analytical time and memory model for parallel CNN training"};
  app.require_subcommand(1);

  Inputs in;
  std::string strategy_text, format = "table";
  double epochs = 1.0;
  auto* predict_cmd = app.add_subcommand("predict", "predict one configuration");
  add_inputs(predict_cmd, in);
  predict_cmd->add_option("--strategy", strategy_text, "e.g. data:p=8, df:p1=4,p2=2")->required();
  predict_cmd->add_option("--epochs", epochs, "scale per-epoch outputs")->check(CLI::PositiveNumber);
  predict_cmd->add_option("--format", format, "table, csv or json");

  RecommendOptions rec_opts;
  double memory_cap = 0.0;
  std::size_t top = 0;
  auto* recommend_cmd = app.add_subcommand("recommend", "rank every configuration within a PE budget");
  add_inputs(recommend_cmd, in);
  recommend_cmd->add_option("--budget", rec_opts.budget, "maximum PEs")->required()->check(CLI::PositiveNumber);
  recommend_cmd->add_flag("--dense", rec_opts.dense, "sweep every p instead of powers of two");
  auto* cap_opt = recommend_cmd->add_option("--memory-cap", memory_cap, "per-PE memory in bytes");
  recommend_cmd->add_option("--top", top, "only print the best N feasible entries");
  recommend_cmd->add_option("--format", format, "table, csv or json");

  std::string prediction_file, measured_file;
  auto* compare_cmd = app.add_subcommand("compare", "projection accuracy of a prediction against a measured run");
  compare_cmd->add_option("--prediction", prediction_file, "breakdown written by predict (csv or json)")
      ->required()
      ->check(CLI::ExistingFile);
  compare_cmd->add_option("--measured", measured_file, "measured per-phase seconds (csv)")
      ->required()
      ->check(CLI::ExistingFile);
  compare_cmd->add_option("--format", format, "table or json");

  std::string bench_file, pattern_name;
  PeRange pes;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "fit alpha and beta to benchmark samples");
  calibrate_cmd->add_option("--benchmarks", bench_file, "CSV pattern,p,bytes,seconds")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate_cmd->add_option("--pattern", pattern_name, "allreduce, allgather or p2p")->required();
  calibrate_cmd->add_option("--min-pes", pes.min, "ignore samples below this p");
  calibrate_cmd->add_option("--max-pes", pes.max, "ignore samples above this p");

  std::size_t instances = 200;
  std::uint64_t seed = 1;
  auto* verify_cmd = app.add_subcommand("verify", "check the closed forms against the simulators");
  verify_cmd->add_option("--instances", instances, "random instances");
  verify_cmd->add_option("--seed", seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (*predict_cmd) {
      const auto fmt_kind = parse_format(format);
      const auto cfg = parse_strategy(strategy_text);
      const auto l = load(in);
      const auto pred = predict(l.model, l.system, l.profile, cfg);
      std::cout << emit_breakdown(pred, fmt_kind, epochs);
      return pred.verdict.feasible ? kOk : kInfeasible;
    }
    if (*recommend_cmd) {
      const auto fmt_kind = parse_format(format);
      if (*cap_opt) rec_opts.memory_capacity = memory_cap;
      const auto l = load(in);
      auto rec = recommend(l.model, l.system, l.profile, rec_opts);
      const bool any = !rec.ranked.empty();
      if (top > 0 && rec.ranked.size() > top) rec.ranked.resize(top);
      std::cout << emit_recommendation(rec, fmt_kind);
      return any ? kOk : kInfeasible;
    }
    if (*compare_cmd) {
      const auto fmt_kind = parse_format(format);
      std::vector<std::string> warnings;
      const auto pred = parse_measured(read_text_file(prediction_file), &warnings);
      const auto meas = parse_measured(read_text_file(measured_file), &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      const double raw = projection_accuracy_raw(pred.measured_total, meas.measured_total);
      const double acc = projection_accuracy(pred.measured_total, meas.measured_total);
      if (fmt_kind == Format::Json) {
        std::cout << "{\"config\": \"" << pred.config << "\", \"predicted_total\": " << fmt(pred.measured_total)
                  << ", \"measured_total\": " << fmt(meas.measured_total) << ", \"accuracy\": " << fmt(acc)
                  << ", \"accuracy_raw\": " << fmt(raw) << "}\n";
      } else {
        if (!pred.config.empty()) std::cout << "config      " << pred.config << '\n';
        std::cout << "predicted   " << fmt(pred.measured_total) << " s (compute " << fmt(pred.measured_comp)
                  << ", comm " << fmt(pred.measured_comm) << ")\n";
        std::cout << "measured    " << fmt(meas.measured_total) << " s (compute " << fmt(meas.measured_comp)
                  << ", comm " << fmt(meas.measured_comm) << ")\n";
        std::cout << "accuracy    " << fmt(100.0 * acc) << "% (raw " << fmt(100.0 * raw) << "%)\n";
      }
      return kOk;
    }
    if (*calibrate_cmd) {
      const auto pattern = comm_pattern_from_string(pattern_name);
      if (!pattern) throw ConfigError("unknown pattern '" + pattern_name + "'");
      const auto samples = parse_benchmarks(read_text_file(bench_file));
      const auto fit = fit_alpha_beta(samples, *pattern, pes);
      char buf[128];
      std::snprintf(buf, sizeof buf, "alpha=%.17g beta=%.17g\n", fit.alpha, fit.beta);
      std::cout << buf;
      return kOk;
    }
    if (*verify_cmd) return run_verify(instances, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kOk;
}
