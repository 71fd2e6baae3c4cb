#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "moesim/types.hpp"

namespace moesim {

// One decode step's routing decisions for a batch of tokens: token i's j-th
// activation is experts[i*top_k + j]. The k experts of one token are
// distinct; loaders and generators enforce this at construction.
struct ActivationBatch {
  int num_tokens = 0;
  int top_k = 0;
  std::vector<int32_t> experts;

  int32_t at(int token, int j) const { return experts[static_cast<size_t>(token) * top_k + j]; }
  long long slots() const { return static_cast<long long>(num_tokens) * top_k; }
  // Range and per-token distinctness.
  void validate(int num_experts) const;
};

// Where each logical expert's replicas live. hosts[e] is ascending and
// duplicate-free; replica_ids[e][i] is the physical slot of e on hosts[e][i],
// unique per instance.
struct ReplicaMap {
  int num_experts = 0;
  int num_instances = 0;
  int slots_per_instance = 0;
  std::vector<std::vector<int32_t>> hosts;
  std::vector<std::vector<int32_t>> replica_ids;

  int replica_count(int e) const { return static_cast<int>(hosts[e].size()); }
  void validate() const;
};

// Output of a scheduling pass. Every activated logical expert is pinned to
// exactly one of its replicas for the whole step; token slots follow it.
struct Assignment {
  std::vector<int32_t> instance;        // per slot
  std::vector<int32_t> replica;         // per slot
  std::vector<int32_t> expert_instance; // per expert, -1 when inactive
  std::vector<int32_t> load;            // per instance: activated replicas hosted
  std::vector<long long> routed_tokens; // per instance: token activations routed

  int max_load() const;
};

inline int max_activated_load(const Assignment& a) { return a.max_load(); }

// Balanced scheduling pass. Single-replica experts are pinned first (their
// load is unavoidable), then multi-replica experts in ascending id order go
// to the least-loaded hosting instance, ties to the lowest instance id.
// Load counts activated replicas, not tokens: one activated expert costs one
// full weight read regardless of how many tokens hit it.
//
// Runs as a fixed-width parallel kernel over token slots; the outcome is
// identical at any team width. Throws ValidationError("unknown-expert...")
// when the batch names an expert the map has no replica for.
Assignment schedule(const ActivationBatch& batch, const ReplicaMap& map);

// Plain serial implementation of the same contract, kept as the reference
// the kernel is checked against.
Assignment schedule_reference(const ActivationBatch& batch, const ReplicaMap& map);

// Baseline policy: multi-replica experts pick a uniformly random hosting
// instance. Deterministic for a given seed.
Assignment schedule_random(const ActivationBatch& batch, const ReplicaMap& map, uint64_t seed);

// Exact minimum of max_load by enumeration, for small instances only:
// at most 20 activated experts and at most 1e6 choice combinations, else
// ValidationError. Ties resolve to the lexicographically smallest choice
// vector over ascending expert ids.
Assignment brute_force_schedule(const ActivationBatch& batch, const ReplicaMap& map);

ActivationBatch load_batch(std::istream& in);
ActivationBatch load_batch_file(const std::string& path);
void dump_batch(std::ostream& out, const ActivationBatch& b);

ReplicaMap load_replica_map(std::istream& in);
ReplicaMap load_replica_map_file(const std::string& path);
void dump_replica_map(std::ostream& out, const ReplicaMap& m);

void dump_assignment(std::ostream& out, const Assignment& a, const ActivationBatch& b);

}  // namespace moesim
