#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <sstream>
#include <vector>

#include "moesim/experts.hpp"
#include "moesim/rng.hpp"

using namespace moesim;

namespace {

// Symmetric coactivation matrix from sparse upper-triangle entries.
ActivationStats stats_from(std::vector<long long> counts,
                           std::vector<std::array<long long, 3>> pairs) {
  size_t e_count = counts.size();
  std::vector<long long> coact(e_count * e_count, 0);
  for (auto [i, j, c] : pairs) {
    coact[i * e_count + j] = c;
    coact[j * e_count + i] = c;
  }
  return ActivationStats::from_totals(std::move(counts), std::move(coact));
}

}  // namespace

TEST_CASE("stats window retires old steps exactly") {
  ActivationStats s(4, 2);
  s.record_step({0, 1});
  s.record_step({1, 2});
  CHECK(s.count(1) == 2);
  CHECK(s.coactivation(0, 1) == 1);
  s.record_step({2, 3});  // evicts {0,1}
  CHECK(s.recorded_steps() == 2);
  CHECK(s.count(0) == 0);
  CHECK(s.count(1) == 1);
  CHECK(s.count(2) == 2);
  CHECK(s.count(3) == 1);
  CHECK(s.coactivation(0, 1) == 0);
  CHECK(s.coactivation(1, 2) == 1);
  CHECK(s.coactivation(2, 3) == 1);
  CHECK(s.coactivation(2, 2) == 0);

  CHECK_THROWS_AS(s.record_step({1, 1}), ValidationError);
  CHECK_THROWS_AS(s.record_step({4}), ValidationError);
}

TEST_CASE("water-filling replica allocation on worked examples") {
  Allocation a = allocate_replicas({9, 3, 1}, 6);
  CHECK(a.replicas == std::vector<int32_t>{4, 1, 1});
  CHECK(a.total() == 6);

  // all-zero counts still spread the budget, ties to the lowest id
  Allocation z = allocate_replicas({0, 0}, 4);
  CHECK(z.replicas == std::vector<int32_t>{3, 1});

  CHECK_THROWS_AS(allocate_replicas({1, 1}, 1), ValidationError);
  CHECK_THROWS_AS(allocate_replicas({-1, 1}, 4), ValidationError);
  CHECK_THROWS_AS(allocate_replicas({}, 4), ValidationError);
}

TEST_CASE("instance cap re-deals surplus replicas by load") {
  // skewed counts pour 4 replicas into expert 0; only 3 instances exist
  std::vector<long long> counts = {9, 3, 1};
  Allocation a = allocate_replicas(counts, 6);
  Allocation c = cap_allocation(a, counts, 3);
  CHECK(c.replicas == std::vector<int32_t>{3, 2, 1});
  CHECK(c.total() == a.total());

  // under the cap the allocation passes through untouched
  Allocation id = cap_allocation(a, counts, 4);
  CHECK(id.replicas == a.replicas);

  // every expert capped: the total genuinely shrinks
  Allocation tight = cap_allocation(Allocation{{5, 5}}, {1, 1}, 2);
  CHECK(tight.replicas == std::vector<int32_t>{2, 2});

  CHECK_THROWS_AS(cap_allocation(a, counts, 0), ValidationError);
}

TEST_CASE("allocation matches the exhaustive optimum") {
  for (uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(derive_seed(seed, "alloc/case"));
    int E = 1 + static_cast<int>(rng.next_below(5));
    int S = E + static_cast<int>(rng.next_below(10 - E + 1));
    std::vector<long long> counts(E);
    for (auto& c : counts) c = rng.next_below(100);

    Allocation fast = allocate_replicas(counts, S);
    Allocation opt = brute_force_allocate(counts, S);
    REQUIRE(fast.total() == S);
    REQUIRE(opt.total() == S);

    auto peak = [&](const Allocation& a) {
      double m = 0;
      for (int e = 0; e < E; ++e)
        m = std::max(m, static_cast<double>(counts[e]) / a.replicas[e]);
      return m;
    };
    REQUIRE(peak(fast) == doctest::Approx(peak(opt)));
  }
  CHECK_THROWS_AS(brute_force_allocate(std::vector<long long>(9, 1), 9), ValidationError);
}

TEST_CASE("greedy placement separates hot co-activated pairs") {
  // pair (0,1) and pair (2,3) co-activate heavily; optimal split puts the
  // members of each pair on different instances
  ActivationStats s = stats_from({10, 9, 8, 7}, {{0, 1, 10}, {2, 3, 8}, {0, 2, 1}});
  Allocation a;
  a.replicas = {1, 1, 1, 1};
  Placement p = place_replicas(a, s, 2, 2);
  p.validate(&a);
  CHECK(p.hosted[0] == std::vector<int32_t>{0, 3});
  CHECK(p.hosted[1] == std::vector<int32_t>{1, 2});
  CHECK(max_coactivation_load(p, s) == 0);

  Placement opt = brute_force_place(a, s, 2, 2);
  CHECK(max_coactivation_load(opt, s) == 0);
}

TEST_CASE("placement relocates a resident when an expert runs out of instances") {
  // expert 2 holds two replicas; greedy fills instance 0 with experts 1 and 0
  // first, so the second replica of 2 forces a relocation
  ActivationStats s = stats_from({9, 10, 16}, {{0, 1, 0}, {0, 2, 2}, {1, 2, 7}});
  Allocation a;
  a.replicas = {1, 1, 2};
  Placement p = place_replicas(a, s, 2, 2);
  p.validate(&a);
  CHECK(p.hosted[0] == std::vector<int32_t>{1, 2});
  CHECK(p.hosted[1] == std::vector<int32_t>{2, 0});
  CHECK(max_coactivation_load(p, s) == 7);
}

TEST_CASE("round-robin baseline places one replica per expert") {
  Placement p = place_round_robin(5, 2, 3);
  CHECK(p.hosted[0] == std::vector<int32_t>{0, 2, 4});
  CHECK(p.hosted[1] == std::vector<int32_t>{1, 3});
  CHECK_THROWS_AS(place_round_robin(7, 2, 3), ValidationError);
}

TEST_CASE("placement respects constraints on random instances") {
  for (uint64_t seed = 0; seed < 150; ++seed) {
    Rng rng(derive_seed(seed, "place/case"));
    int E = 2 + static_cast<int>(rng.next_below(5));  // 2..6
    int N = 2 + static_cast<int>(rng.next_below(3));  // 2..4
    std::vector<long long> counts(E);
    for (auto& c : counts) c = rng.next_below(50);
    std::vector<long long> coact(E * E, 0);
    for (int i = 0; i < E; ++i)
      for (int j = i + 1; j < E; ++j) {
        long long v = rng.next_below(20);
        coact[i * E + j] = coact[j * E + i] = v;
      }
    ActivationStats s =
        ActivationStats::from_totals(counts, std::move(coact));

    int budget = E + static_cast<int>(rng.next_below(E));
    Allocation a = allocate_replicas(counts, budget);
    for (auto& r : a.replicas) r = std::min(r, static_cast<int32_t>(N));
    int cap = std::max<int>(2, (a.total() + N - 1) / N + (seed % 2));

    Placement p = place_replicas(a, s, N, cap);
    CHECK_NOTHROW(p.validate(&a));

    if (a.total() <= 10) {
      Placement opt = brute_force_place(a, s, N, cap);
      REQUIRE(max_coactivation_load(opt, s) <= max_coactivation_load(p, s));
    }
  }
}

TEST_CASE("placement to replica map keeps slot identity") {
  ActivationStats s = stats_from({5, 5, 5}, {});
  Allocation a;
  a.replicas = {2, 1, 1};
  Placement p = place_replicas(a, s, 2, 2);
  ReplicaMap m = to_replica_map(p);
  CHECK(m.num_experts == 3);
  CHECK(m.hosts[0].size() == 2);
  CHECK(std::is_sorted(m.hosts[0].begin(), m.hosts[0].end()));
  // physical replica ids are instance * slots + slot index
  for (int e = 0; e < 3; ++e)
    for (size_t i = 0; i < m.hosts[e].size(); ++i) {
      int g = m.hosts[e][i];
      int rid = m.replica_ids[e][i];
      CHECK(rid / m.slots_per_instance == g);
      CHECK(p.hosted[g][rid % m.slots_per_instance] == e);
    }
}

TEST_CASE("stats, allocation and placement text round trips") {
  ActivationStats s = stats_from({3, 0, 7}, {{0, 2, 4}});
  std::ostringstream os;
  dump_stats(os, s);
  std::istringstream is(os.str());
  ActivationStats s2 = load_stats(is);
  CHECK(s2.counts() == s.counts());
  CHECK(s2.coactivation(0, 2) == 4);
  CHECK(s2.coactivation(2, 0) == 4);
  CHECK(s2.coactivation(0, 1) == 0);

  Allocation a;
  a.replicas = {2, 1, 3};
  std::ostringstream oa;
  dump_allocation(oa, a);
  std::istringstream ia(oa.str());
  Allocation a2 = load_allocation(ia);
  CHECK(a2.replicas == a.replicas);

  Placement p;
  p.num_experts = 3;
  p.num_instances = 2;
  p.slots_per_instance = 2;
  p.hosted = {{0, 1}, {2, 0}};
  std::ostringstream op;
  dump_placement(op, p);
  std::istringstream ip(op.str());
  Placement p2 = load_placement(ip);
  // loading normalizes slot order to ascending expert id; sets must match
  std::vector<std::vector<int32_t>> want = {{0, 1}, {0, 2}};
  CHECK(p2.hosted == want);

  std::istringstream bad("[counts]\n0 1\n0 2\n");
  CHECK_THROWS_AS(load_stats(bad), ParseError);
  std::istringstream neg("0 0\n1 -1\n");
  CHECK_THROWS_AS(load_allocation(neg), ValidationError);
}
