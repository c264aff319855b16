#include <numeric>
#include <random>

#include "cnnscale/sim.hpp"
#include "cnnscale/verify.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cnnscale;

TEST_CASE("ring trace structure") {
  const auto ar = sim::trace_ring_collective(CommPattern::Allreduce, 5, 100, 1, 0.5);
  REQUIRE(ar.steps.size() == 8);
  for (const auto& s : ar.steps) {
    CHECK(s.senders.size() == 5);
    CHECK(s.bytes == 20);
    CHECK(s.elapsed == 11);
  }
  CHECK(ar.seconds == 88);

  const auto ag = sim::trace_ring_collective(CommPattern::Allgather, 4, 3, 0, 1);
  CHECK(ag.steps.size() == 3);
  CHECK(ag.seconds == 9);

  const auto pp = sim::trace_ring_collective(CommPattern::P2p, 2, 4, 2, 3);
  CHECK(pp.steps.size() == 1);
  CHECK(pp.seconds == 14);

  CHECK(sim::simulate_ring_collective(CommPattern::Allreduce, 1, 100, 1, 1) == 0);
  CHECK(sim::simulate_ring_collective(CommPattern::Allreduce, 4, 8, 0, 1) == 12);
}

TEST_CASE("tree simulator examples") {
  CHECK(sim::simulate_tree_allreduce(2, 100, 1, 1, 0) == 4);
  CHECK(sim::simulate_tree_allreduce(4, 8, 2, 0, 1) == 16);
  CHECK(sim::simulate_tree_allreduce(2, 2, 1, 1, 1) == 8);
}

TEST_CASE("flow shop") {
  // Two stages, two jobs: stage 1 waits for stage 0.
  CHECK(sim::flow_shop_makespan({{1, 1}, {1, 1}}) == 3);
  CHECK(sim::flow_shop_makespan({{3, 1}, {1, 3}}) == 7);
  CHECK(sim::flow_shop_makespan({}) == 0);
}

TEST_CASE("pipeline schedule with equal groups matches the closed form") {
  for (std::int64_t p = 1; p <= 8; ++p)
    for (std::int64_t s : {1, 2, 4, 8}) {
      const std::vector<double> fw(static_cast<std::size_t>(p), 0.5), bw(static_cast<std::size_t>(p), 1.0);
      const auto sched = sim::simulate_pipeline_schedule(fw, bw, s, 16, 2.0);
      const double closed = 2.0 * (16.0 / s) * static_cast<double>(p + s - 1) * 1.5;
      CHECK(sched.total == doctest::Approx(closed).epsilon(1e-12));
      CHECK(sched.cells.size() == static_cast<std::size_t>(2 * p * s));
    }
}

TEST_CASE("pipeline schedule with unequal groups") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> cost(0.1, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = 2 + trial % 6;
    const std::int64_t s = 1 << (trial % 4);
    std::vector<double> fw(p), bw(p);
    for (auto& x : fw) x = cost(rng);
    for (auto& x : bw) x = cost(rng);
    const auto sched = sim::simulate_pipeline_schedule(fw, bw, s, 16, 1.0);
    const double seg = 16.0 / static_cast<double>(s);
    const double fmax = *std::max_element(fw.begin(), fw.end()), bmax = *std::max_element(bw.begin(), bw.end());
    const double closed = seg * static_cast<double>(p + s - 1) * (fmax + bmax);
    // Flow-shop bounds: every stage's work plus fill, never more than the max-stage bound.
    const double fill = seg * (std::accumulate(fw.begin(), fw.end(), 0.0) + std::accumulate(bw.begin(), bw.end(), 0.0));
    CHECK(sched.per_iteration <= closed * (1 + 1e-12));
    CHECK(sched.per_iteration >= fill * (1 - 1e-12));
  }
}

TEST_CASE("buffer enumeration") {
  const auto m = parse_model("dataset D=8 B=8 E=1\nl conv C=1 F=1 X=10,1 K=10,10 pad=2,5 bias=1\n");
  const auto sys = testutil::flat_system(0, 1);
  const auto listing = sim::enumerate_buffers(m, sys, testutil::uniform_profile(1, 1, 1), strategy::Serial{});
  CHECK(listing.bytes == 2084);
  CHECK(listing.elements == ElementCount(521));
  CHECK(listing.buffers.size() == 7);
}

TEST_CASE("simulated communication of the bundled models") {
  const auto sys = load_system_file(testutil::data_path("cluster.system"));
  for (const char* name : {"resnet50", "vgg16", "cosmoflow"}) {
    const auto m = load_model_file(testutil::data_path(std::string(name) + ".model"));
    const auto prof = load_profile_file(testutil::data_path(std::string(name) + ".timings.csv"));
    for (const char* text : {"data:p=16", "filter:p=4", "channel:p=4", "layer:p=4", "pipeline:p=4,S=4",
                             "df:p1=4,p2=4", "spatial:pw=2,ph=2", "ds:p1=4,pw=2,ph=2"}) {
      const auto cfg = parse_strategy(text);
      const auto pred = predict(m, sys, prof, cfg);
      const auto simulated = sim::simulate_comm(m, sys, prof, cfg);
      for (auto phase : kCommPhases) {
        INFO(name, " ", text, " ", to_string(phase));
        CHECK(verify::relative_error(pred.comm[phase], simulated[phase]) <= 1e-9);
      }
      CHECK(sim::enumerate_buffers(m, sys, prof, cfg).elements == pred.mem_elements);
    }
  }
}

TEST_CASE("random corpus smoke check") {
  const auto comm = verify::check_comm(40, 3);
  CHECK(comm.ok());
  CHECK(comm.checks > 0);
  const auto mem = verify::check_memory(40, 4);
  CHECK(mem.ok());
}
