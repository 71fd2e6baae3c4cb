#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <algorithm>
#include <sstream>
#include <vector>

#include "moesim/aebs.hpp"
#include "moesim/rng.hpp"

using namespace moesim;

namespace {

ReplicaMap map_from(int num_instances, int slots, std::vector<std::vector<int32_t>> hosts) {
  ReplicaMap m;
  m.num_experts = static_cast<int>(hosts.size());
  m.num_instances = num_instances;
  m.slots_per_instance = slots;
  m.hosts = std::move(hosts);
  m.replica_ids.assign(m.num_experts, {});
  std::vector<int32_t> next(num_instances, 0);
  for (int e = 0; e < m.num_experts; ++e) {
    std::sort(m.hosts[e].begin(), m.hosts[e].end());
    for (int32_t g : m.hosts[e])
      m.replica_ids[e].push_back(g * slots + next[g]++);
  }
  m.validate();
  return m;
}

ActivationBatch batch_from(int top_k, std::vector<int32_t> experts) {
  ActivationBatch b;
  b.top_k = top_k;
  b.num_tokens = static_cast<int>(experts.size()) / top_k;
  b.experts = std::move(experts);
  return b;
}

// Random instance in the oracle's comfort zone.
struct SmallCase {
  ReplicaMap map;
  ActivationBatch batch;
};

SmallCase random_case(uint64_t seed) {
  Rng rng(derive_seed(seed, "aebs/case"));
  int E = 2 + static_cast<int>(rng.next_below(5));   // 2..6
  int N = 1 + static_cast<int>(rng.next_below(3));   // 1..3
  int T = 1 + static_cast<int>(rng.next_below(8));   // 1..8
  int k = 1 + static_cast<int>(rng.next_below(std::min(E, 3)));

  std::vector<std::vector<int32_t>> hosts(E);
  for (int e = 0; e < E; ++e) {
    int r = 1 + static_cast<int>(rng.next_below(N));
    std::vector<int32_t> all(N);
    for (int g = 0; g < N; ++g) all[g] = g;
    for (int i = 0; i < r; ++i)
      std::swap(all[i], all[i + rng.next_below(N - i)]);
    all.resize(r);
    hosts[e] = all;
  }
  SmallCase c;
  c.map = map_from(N, E + 2, std::move(hosts));

  std::vector<int32_t> ex;
  for (int t = 0; t < T; ++t) {
    std::vector<int32_t> all(E);
    for (int e = 0; e < E; ++e) all[e] = e;
    for (int j = 0; j < k; ++j) {
      std::swap(all[j], all[j + rng.next_below(E - j)]);
      ex.push_back(all[j]);
    }
  }
  c.batch = batch_from(k, std::move(ex));
  return c;
}

}  // namespace

TEST_CASE("worked two-instance example") {
  // experts: 0 only on g0, 2 only on g1, 1 and 3 on both
  ReplicaMap m = map_from(2, 4, {{0}, {0, 1}, {1}, {0, 1}});
  // tokens: (0,1) (2,1) (3,0)
  ActivationBatch b = batch_from(2, {0, 1, 2, 1, 3, 0});

  Assignment a = schedule(b, m);
  CHECK(a.expert_instance[0] == 0);  // pinned single
  CHECK(a.expert_instance[2] == 1);  // pinned single
  CHECK(a.expert_instance[1] == 0);  // tie at load 1 goes to the lower id
  CHECK(a.expert_instance[3] == 1);  // then g1 is lighter
  CHECK(a.max_load() == 2);
  CHECK(a.load == std::vector<int32_t>{2, 2});
  // token activations routed per instance: e0 x2, e1 x2 on g0; e2, e3 on g1
  CHECK(a.routed_tokens == std::vector<long long>{4, 2});

  // slot tables follow the per-expert pins
  for (int t = 0; t < b.num_tokens; ++t)
    for (int j = 0; j < b.top_k; ++j)
      CHECK(a.instance[t * b.top_k + j] == a.expert_instance[b.at(t, j)]);
}

TEST_CASE("greedy is not always optimal but stays within the proven gap") {
  // one expert everywhere, two experts sharing instances 0 and 1
  ReplicaMap m = map_from(3, 3, {{0, 1, 2}, {0, 1}, {0, 1}});
  ActivationBatch b = batch_from(1, {0, 1, 2});
  Assignment greedy = schedule(b, m);
  Assignment opt = brute_force_schedule(b, m);
  CHECK(greedy.max_load() == 2);
  CHECK(opt.max_load() == 1);  // 0 -> g2, 1 -> g0, 2 -> g1
  CHECK(greedy.max_load() <= opt.max_load() + 2);
}

TEST_CASE("kernel, reference and oracle agree over random instances") {
  int exact = 0;
  for (uint64_t s = 0; s < 300; ++s) {
    SmallCase c = random_case(s);
    Assignment fast = schedule(c.batch, c.map);
    Assignment ref = schedule_reference(c.batch, c.map);
    REQUIRE(fast.instance == ref.instance);
    REQUIRE(fast.replica == ref.replica);
    REQUIRE(fast.expert_instance == ref.expert_instance);
    REQUIRE(fast.load == ref.load);
    REQUIRE(fast.routed_tokens == ref.routed_tokens);

    Assignment opt = brute_force_schedule(c.batch, c.map);
    REQUIRE(fast.max_load() <= opt.max_load() + 2);
    if (fast.max_load() == opt.max_load()) ++exact;

    // every slot follows its expert's pin onto a genuine replica
    for (int t = 0; t < c.batch.num_tokens; ++t)
      for (int j = 0; j < c.batch.top_k; ++j) {
        int e = c.batch.at(t, j);
        int g = fast.instance[t * c.batch.top_k + j];
        REQUIRE(g == fast.expert_instance[e]);
        auto it = std::find(c.map.hosts[e].begin(), c.map.hosts[e].end(), g);
        REQUIRE(it != c.map.hosts[e].end());
        REQUIRE(fast.replica[t * c.batch.top_k + j] ==
                c.map.replica_ids[e][it - c.map.hosts[e].begin()]);
      }
  }
  CHECK(exact >= 240);  // at least 80% optimal
}

TEST_CASE("random policy is seed-deterministic and uses real replicas") {
  SmallCase c = random_case(77);
  Assignment a1 = schedule_random(c.batch, c.map, 5);
  Assignment a2 = schedule_random(c.batch, c.map, 5);
  CHECK(a1.instance == a2.instance);
  CHECK(a1.load == a2.load);
  for (int e = 0; e < c.map.num_experts; ++e) {
    if (a1.expert_instance[e] < 0) continue;
    auto& hs = c.map.hosts[e];
    CHECK(std::find(hs.begin(), hs.end(), a1.expert_instance[e]) != hs.end());
  }
}

TEST_CASE("unknown expert is rejected") {
  ReplicaMap m = map_from(2, 2, {{0}, {1}});
  ActivationBatch b = batch_from(1, {0, 3});
  CHECK_THROWS_WITH_AS(schedule(b, m), doctest::Contains("unknown-expert"), ValidationError);
  CHECK_THROWS_AS(schedule_reference(b, m), ValidationError);
  CHECK_THROWS_AS(schedule_random(b, m, 1), ValidationError);
  CHECK_THROWS_AS(brute_force_schedule(b, m), ValidationError);
}

TEST_CASE("oracle refuses oversized instances") {
  std::vector<std::vector<int32_t>> hosts(30);
  std::vector<int32_t> ex;
  for (int e = 0; e < 30; ++e) {
    hosts[e] = {0, 1};
    ex.push_back(e);
  }
  ReplicaMap m = map_from(2, 30, std::move(hosts));
  ActivationBatch b = batch_from(1, std::move(ex));
  CHECK_THROWS_WITH_AS(brute_force_schedule(b, m), doctest::Contains("enumeration"),
                       ValidationError);
}

TEST_CASE("scheduling is deterministic under concurrent invocation") {
  SmallCase c = random_case(123);
  Assignment base = schedule(c.batch, c.map);
  std::vector<Assignment> out(8);
#pragma omp parallel for num_threads(4)
  for (int i = 0; i < 8; ++i) out[i] = schedule(c.batch, c.map);
  for (const Assignment& a : out) {
    CHECK(a.instance == base.instance);
    CHECK(a.load == base.load);
  }
}

TEST_CASE("batch and replica map text round trips") {
  SmallCase c = random_case(5);
  std::ostringstream ob;
  dump_batch(ob, c.batch);
  std::istringstream ib(ob.str());
  ActivationBatch b2 = load_batch(ib);
  CHECK(b2.num_tokens == c.batch.num_tokens);
  CHECK(b2.top_k == c.batch.top_k);
  CHECK(b2.experts == c.batch.experts);

  std::ostringstream om;
  dump_replica_map(om, c.map);
  std::istringstream im(om.str());
  ReplicaMap m2 = load_replica_map(im);
  CHECK(m2.num_experts == c.map.num_experts);
  CHECK(m2.num_instances == c.map.num_instances);
  CHECK(m2.hosts == c.map.hosts);

  std::istringstream bad("1 2\n1 2 3\n");
  CHECK_THROWS_AS(load_batch(bad), ParseError);
  std::istringstream nohdr("0: 0\n");
  CHECK_THROWS_AS(load_replica_map(nohdr), ParseError);
}

TEST_CASE("batch validation catches duplicates and range") {
  ActivationBatch dup = batch_from(2, {3, 3});
  CHECK_THROWS_AS(dup.validate(8), ValidationError);
  ActivationBatch range = batch_from(1, {5});
  CHECK_THROWS_AS(range.validate(5), ValidationError);
  CHECK_NOTHROW(range.validate(6));
}
