#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <string>
#include <vector>

#include "moesim/aebs.hpp"
#include "moesim/types.hpp"

namespace moesim {

// Sliding-window activation statistics over recorded scheduling steps:
// per-expert activation counts and pairwise co-activation counts. Entries
// older than the window are retired symmetrically, so counts always equal
// what a fresh scan of the retained steps would produce.
class ActivationStats {
 public:
  ActivationStats(int num_experts, int window_steps);

  // Read-only stats rebuilt from dumped totals (coact flattened E*E,
  // symmetric); no step history, so record_step must not be called on the
  // result.
  static ActivationStats from_totals(std::vector<long long> counts,
                                     std::vector<long long> coact);

  // activated must be ascending and duplicate-free.
  void record_step(const std::vector<int32_t>& activated);

  int num_experts() const { return num_experts_; }
  int recorded_steps() const { return static_cast<int>(steps_.size()); }
  long long count(int e) const { return counts_[e]; }
  long long coactivation(int i, int j) const;
  const std::vector<long long>& counts() const { return counts_; }

 private:
  int num_experts_;
  int window_;
  std::vector<long long> counts_;
  std::vector<long long> coact_;  // full symmetric matrix, zero diagonal
  std::deque<std::vector<int32_t>> steps_;
};

// replicas[e] >= 1 for every expert; sum equals the slot budget it was built
// for.
struct Allocation {
  std::vector<int32_t> replicas;
  long long total() const;
};

// Water-filling: start with one replica each, then repeatedly give the
// expert with the highest per-replica activation load (count/replicas)
// another replica, ties to the lowest expert id.
Allocation allocate_replicas(const std::vector<long long>& counts, int total_slots);

// Exhaustive minimum of max count/replicas, small inputs only (E <= 8,
// total_slots <= 16), else ValidationError. Ties resolve to the
// lexicographically smallest replica vector.
Allocation brute_force_allocate(const std::vector<long long>& counts, int total_slots);

// An expert cannot host two replicas on one instance, so callers that know
// the instance count clamp the allocation with this before placing. Freed
// slots are re-dealt by the water-filling rule to uncapped experts; the
// total shrinks only when every expert sits at the cap.
Allocation cap_allocation(const Allocation& a, const std::vector<long long>& counts,
                          int num_instances);

// Which experts sit on which instance. hosted[g] lists expert ids in slot
// order; an expert appears at most once per instance.
struct Placement {
  int num_experts = 0;
  int num_instances = 0;
  int slots_per_instance = 0;
  std::vector<std::vector<int32_t>> hosted;

  std::vector<std::vector<int32_t>> instances_of_expert() const;
  void validate(const Allocation* expected = nullptr) const;
};

// Co-activation load of one instance: sum of pairwise co-activation counts
// over the experts it hosts.
long long coactivation_load(const Placement& p, const ActivationStats& stats, int instance);
long long max_coactivation_load(const Placement& p, const ActivationStats& stats);

// Greedy placement: replicas in descending per-replica load order each take
// the feasible instance that adds the least co-activation; when an expert
// has no feasible instance left, one resident expert is relocated to open a
// slot, choosing the swap that least increases the touched instances' peak
// co-activation load. Throws InfeasibleError("placement-deadlock...") if no
// relocation exists (unreachable while replicas[e] <= instances).
Placement place_replicas(const Allocation& alloc, const ActivationStats& stats,
                         int num_instances, int slots_per_instance);

// Baseline: one replica per expert, dealt round-robin; surplus slots unused.
Placement place_round_robin(int num_experts, int num_instances, int slots_per_instance);

// Exact minimum of max_coactivation_load by exhaustive assignment, small
// inputs only (total replicas <= 14, instances <= 4), else ValidationError.
Placement brute_force_place(const Allocation& alloc, const ActivationStats& stats,
                            int num_instances, int slots_per_instance);

ReplicaMap to_replica_map(const Placement& p);

Allocation load_allocation(std::istream& in);
void dump_allocation(std::ostream& out, const Allocation& a);

// Placement text form is the replica-map format, so placements feed straight
// into the scheduler tools.
Placement load_placement(std::istream& in);
void dump_placement(std::ostream& out, const Placement& p);

// Stats interchange: [counts] then sparse [coactivation] entries. Window
// bookkeeping does not survive the round trip; loaded stats are read-only.
void dump_stats(std::ostream& out, const ActivationStats& s);
ActivationStats load_stats(std::istream& in);
ActivationStats load_stats_file(const std::string& path);

}  // namespace moesim
