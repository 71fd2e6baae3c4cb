// Times the parallel scheduling kernel against the serial reference on the
// same instances and checks they agree bit for bit.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <vector>

#include "moesim/aebs.hpp"
#include "moesim/rng.hpp"
#include "moesim/workload.hpp"

using namespace moesim;
using clk = std::chrono::steady_clock;

namespace {

ReplicaMap make_map(int num_experts, int num_instances, int replicas_per_expert) {
  ReplicaMap m;
  m.num_experts = num_experts;
  m.num_instances = num_instances;
  m.slots_per_instance =
      (num_experts * replicas_per_expert + num_instances - 1) / num_instances + 1;
  m.hosts.resize(num_experts);
  m.replica_ids.resize(num_experts);
  std::vector<int32_t> next_slot(num_instances, 0);
  int cursor = 0;
  for (int e = 0; e < num_experts; ++e) {
    for (int r = 0; r < replicas_per_expert; ++r) {
      int g = (cursor + r * (num_instances / replicas_per_expert)) % num_instances;
      m.hosts[e].push_back(g);
      m.replica_ids[e].push_back(next_slot[g]++);
    }
    std::sort(m.hosts[e].begin(), m.hosts[e].end());
    cursor = (cursor + 1) % num_instances;
  }
  m.validate();
  return m;
}

template <typename F>
double median_us(F&& f, int reps) {
  std::vector<double> t(reps);
  for (int i = 0; i < reps; ++i) {
    auto a = clk::now();
    f();
    t[i] = std::chrono::duration<double, std::micro>(clk::now() - a).count();
  }
  std::nth_element(t.begin(), t.begin() + reps / 2, t.end());
  return t[reps / 2];
}

}  // namespace

int main() {
  const int num_experts = 200, top_k = 8, instances = 16, reps = 200;
  ReplicaMap map = make_map(num_experts, instances, 2);
  RoutingPattern pat = RoutingPattern::gaussian(num_experts, 0.15);

  std::printf("%8s %14s %14s %8s %s\n", "tokens", "kernel_us", "reference_us", "ratio",
              "match");
  bool all_match = true;
  double us16 = 0, us512 = 0;
  for (int tokens : {16, 64, 128, 512}) {
    ActivationBatch batch = gen_batch(pat, tokens, top_k, 0xBE5C, tokens);
    Assignment fast = schedule(batch, map);
    Assignment slow = schedule_reference(batch, map);
    bool match = fast.instance == slow.instance && fast.load == slow.load &&
                 fast.expert_instance == slow.expert_instance;
    all_match = all_match && match;
    volatile int sink = 0;
    double fast_us = median_us([&] { sink = sink + schedule(batch, map).max_load(); }, reps);
    double slow_us =
        median_us([&] { sink = sink + schedule_reference(batch, map).max_load(); }, reps);
    if (tokens == 16) us16 = fast_us;
    if (tokens == 512) us512 = fast_us;
    std::printf("%8d %14.2f %14.2f %8.2f %s\n", tokens, fast_us, slow_us,
                slow_us / fast_us, match ? "yes" : "NO");
  }
  std::printf("kernel growth 16 -> 512 tokens: %.2fx\n", us512 / us16);
  return all_match ? 0 : 1;
}
