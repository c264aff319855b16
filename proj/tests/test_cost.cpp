#include <cmath>

#include "cnnscale/cost.hpp"
#include "cnnscale/errors.hpp"
#include "cnnscale/sim.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cnnscale;

namespace {

SystemDescriptor two_tier() {
  SystemDescriptor s;
  s.tiers = {{"intra", 4, 5e-6, 0.05e-9}, {"inter", 1024, 15e-6, 0.08e-9}};
  s.pe_memory_capacity = 16e9;
  return s;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

}  // namespace

TEST_CASE("tier selection picks the smallest tier holding p") {
  const auto s = two_tier();
  auto cp = select_params(s, 4, 1.0);
  CHECK(cp.alpha == 5e-6);
  CHECK(cp.beta_eff == 0.05e-9);
  cp = select_params(s, 8, 2.0);
  CHECK(cp.alpha == 15e-6);
  CHECK(cp.beta_eff == doctest::Approx(0.16e-9).epsilon(1e-15));
  CHECK(select_params(s, 1, 1.0).alpha == 5e-6);
  CHECK_THROWS_AS(select_params(s, 1025, 1.0), TierExhausted);
}

TEST_CASE("point to point") {
  CHECK(t_p2p({1, 1}, 0) == 1);
  CHECK(t_p2p({2, 3}, 4) == 14);
  // 100 MB over a 12.5 GB/s link.
  CHECK(t_p2p({0, 8e-11}, 100e6) == doctest::Approx(100e6 / 12.5e9).epsilon(1e-12));
}

TEST_CASE("ring allreduce against the step simulator") {
  CHECK(t_allreduce_ring({1, 1}, 1, 123) == 0);
  CHECK(t_allreduce_ring({1, 1}, 2, 8) == 10);
  CHECK(sim::simulate_ring_collective(CommPattern::Allreduce, 2, 8, 1, 1) == 10);
  for (std::int64_t p = 2; p <= 64; ++p)
    for (double m : {1.0, 1e3, 1e6, 2.56e8}) {
      const CommParams cp{3e-6, 7e-11};
      CHECK(rel(t_allreduce_ring(cp, p, m),
                sim::simulate_ring_collective(CommPattern::Allreduce, p, m, cp.alpha, cp.beta_eff)) <= 1e-12);
    }
}

TEST_CASE("ring allgather against the step simulator") {
  CHECK(t_allgather_ring({0, 1}, 1, 3) == 0);
  CHECK(t_allgather_ring({0, 1}, 4, 3) == 9);
  CHECK(sim::simulate_ring_collective(CommPattern::Allgather, 4, 3, 0, 1) == 9);
  CHECK(t_allgather_ring({1, 0}, 5, 77) == 4);
  for (std::int64_t p = 2; p <= 64; ++p) {
    const CommParams cp{2e-6, 1e-10};
    CHECK(rel(t_allgather_ring(cp, p, 4096),
              sim::simulate_ring_collective(CommPattern::Allgather, p, 4096, cp.alpha, cp.beta_eff)) <= 1e-12);
  }
}

TEST_CASE("tree allreduce against the wavefront simulator") {
  CHECK(t_allreduce_tree({1, 0}, 2, 100, 1) == 4);
  CHECK(t_allreduce_tree({0, 1}, 4, 8, 2) == 16);
  CHECK(sim::simulate_tree_allreduce(4, 8, 2, 0, 1) == 16);
  CHECK(t_allreduce_tree({1, 1}, 2, 2, 1) == 8);
  CHECK(sim::simulate_tree_allreduce(2, 2, 1, 1, 1) == 8);
  // Non-powers of two round the depth up.
  CHECK(t_allreduce_tree({1, 0}, 5, 0, 1) == 2 * (3 + 1));
  for (std::int64_t p = 2; p <= 64; ++p)
    for (int k = 1; k <= 8; ++k)
      CHECK(rel(t_allreduce_tree({1e-6, 1e-10}, p, 65536, k), sim::simulate_tree_allreduce(p, 65536, k, 1e-6, 1e-10)) <=
            1e-12);
}

TEST_CASE("ring/tree dispatch") {
  auto s = two_tier();
  s.ring_tree_threshold = 1024;
  s.tree_chunks = 2;
  const CommParams cp{1e-6, 1e-9};
  CHECK(t_allreduce(s, cp, 8, 1023) == t_allreduce_tree(cp, 8, 1023, 2));
  CHECK(t_allreduce(s, cp, 8, 1025) == t_allreduce_ring(cp, 8, 1025));
  CHECK(t_allreduce(s, cp, 8, 1024) == t_allreduce_ring(cp, 8, 1024));
}

TEST_CASE("reduce to leader") {
  CHECK(t_reduce_to_leader({0, 1}, 1, 8) == 0);
  CHECK(t_reduce_to_leader({0, 1}, 4, 8) == 12);
  CHECK(t_reduce_to_leader({1e-6, 3e-10}, 7, 999) == t_allreduce_ring({1e-6, 3e-10}, 7, 999));
}

TEST_CASE("collective costs are monotone in message size and parameters") {
  for (std::int64_t p : {2, 3, 8, 33}) {
    double prev_r = -1, prev_g = -1, prev_t = -1;
    for (double m = 1; m <= 256e6; m *= 4) {
      const CommParams cp{1e-6, 1e-10};
      const double r = t_allreduce_ring(cp, p, m), g = t_allgather_ring(cp, p, m), t = t_allreduce_tree(cp, p, m, 2);
      CHECK(r >= prev_r);
      CHECK(g >= prev_g);
      CHECK(t >= prev_t);
      prev_r = r;
      prev_g = g;
      prev_t = t;
      CHECK(t_allreduce_ring({2e-6, 1e-10}, p, m) >= r);
      CHECK(t_allreduce_ring({1e-6, 2e-10}, p, m) >= r);
    }
  }
}

TEST_CASE("bandwidth term dominates for large messages") {
  const double beta = 1e-10, m = 1e9;
  for (std::int64_t p : {2, 4, 16, 64}) {
    const double per_byte = t_allreduce_ring({5e-6, beta}, p, m) / m;
    const double limit = 2.0 * (p - 1) / p * beta;
    CHECK(std::abs(per_byte - limit) / limit < 0.01);
  }
}

TEST_CASE("doubling phi doubles only the bandwidth term") {
  auto s = two_tier();
  for (std::int64_t p : {2, 4, 8, 64}) {
    const double m = 1e7;
    const auto c1 = select_params(s, p, 1.0), c2 = select_params(s, p, 2.0);
    const double latency = t_allreduce_ring({c1.alpha, 0.0}, p, m);
    CHECK(rel(t_allreduce_ring(c2, p, m) - latency, 2.0 * (t_allreduce_ring(c1, p, m) - latency)) < 1e-12);
  }
}

TEST_CASE("system file") {
  const auto s = parse_system(
      "# comment\n"
      "tier node pes=4 alpha=5e-6 beta=2e-11\n"
      "tier fabric pes=1024 alpha=1.5e-5 beta=8e-11\n"
      "transport halo alpha=2e-5 beta=1e-10\n"
      "memory=16e9 delta=2 gamma=0.75 ring_tree_threshold=1024 tree_chunks=3 phi=2\n");
  CHECK(s.tiers.size() == 2);
  CHECK(s.tiers[1].max_pes == 1024);
  CHECK(s.delta == 2);
  CHECK(s.gamma == 0.75);
  CHECK(s.tree_chunks == 3);
  CHECK(s.contention_phi == 2);
  CHECK(parse_system(serialize_system(s)).tiers == s.tiers);
  const auto halo = select_transport_params(s, Transport::Halo, 8, 1.0);
  CHECK(halo.alpha == 2e-5);
  CHECK(select_transport_params(s, Transport::P2p, 8, 1.0).alpha == 1.5e-5);

  CHECK_THROWS_AS(parse_system("tier a pes=4 alpha=1 beta=1\n"), ParseError);
  CHECK_THROWS_AS(parse_system("tier a pes=4 alpha=1 beta=1\nmemory=1 delta=3\n"), ValidationError);
  CHECK_THROWS_AS(parse_system("tier a pes=4 alpha=1 beta=1\ntier b pes=4 alpha=1 beta=1\nmemory=1\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse_system("tier a pes=4 alpha=1 beta=0\nmemory=1\n"), ValidationError);
  CHECK_THROWS_AS(parse_system("tier a pes=4 alpha=1 beta=1\nmemory=1 gamma=1.5\n"), ValidationError);
}
