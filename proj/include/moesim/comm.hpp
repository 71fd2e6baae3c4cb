#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "moesim/types.hpp"

namespace moesim {

// Cost model for moving one step's activations between the attention and
// expert sides. No bytes move; plans only carry enough structure to price
// per-NIC serialization. Gating runs on the expert side, so every scheme
// ships full activation payloads and none depends on the routing pattern.

enum class CommScheme { strawman, bulk_pairwise, one_to_one };

const char* scheme_name(CommScheme s);

struct StepTraffic {
  int attn_nodes = 1;
  int attn_per_node = 1;       // instances per attention node; last node may be partial
  int attn_instances = 1;
  int moe_nodes = 1;
  int moe_per_node = 1;
  int moe_instances = 1;
  long long tokens = 0;
  double token_bytes = 0;      // activation payload per token

  static StepTraffic make(int attn_nodes, int attn_per_node, int moe_nodes, int moe_per_node,
                          long long tokens, double token_bytes);
  // Uneven instance totals: nodes = ceil(instances / per_node).
  static StepTraffic from_counts(int attn_instances, int attn_per_node, int moe_instances,
                                 int moe_per_node, long long tokens, double token_bytes);

  int attn_node_size(int a) const;
  int moe_node_size(int d) const;
  void validate() const;
};

struct Transfer {
  int src = 0;       // global NIC index: attention instances, then MoE instances
  int dst = 0;
  double bytes = 0;
};

// Ring-style intra-node collective over `participants` NICs moving an
// aggregate of `bytes`: fixed latency + (p-1)/p * bytes / intra_node_bw.
struct Collective {
  int node = 0;
  int participants = 0;
  double bytes = 0;
};

struct CommPlan {
  CommScheme scheme = CommScheme::strawman;
  std::vector<Collective> aggregate;    // attention-side intra-node gather
  std::vector<Transfer> transfers;      // inter-node
  std::vector<Collective> distribute;   // MoE-side intra-node spread (one_to_one only)
  StepTraffic traffic;

  // Inter-node payload arriving at one MoE node.
  double delivered_to_moe_node(int d) const;
};

// Every attention instance sends its token shard to every MoE instance:
// m*n transfers.
CommPlan strawman_plan(const StepTraffic& t);

// Node-aggregated bulk exchange: one gather per attention node, then
// attn_nodes * moe_nodes bulk transfers.
CommPlan bulk_pairwise_plan(const StepTraffic& t);

// One transfer per attention instance to a designated MoE instance, then one
// intra-node spread per MoE node: attn_instances transfers.
CommPlan one_to_one_plan(const StepTraffic& t);

// Whether one_to_one can put every attention node's shard on every MoE node
// (needs attn_per_node >= moe_nodes on every full node).
bool one_to_one_covers(const StepTraffic& t);

// Scheme by node-count rule: bulk exchange while the MoE side spans at most
// node_threshold nodes (and always for a single MoE node), one-to-one
// beyond; falls back to bulk when one-to-one cannot cover.
CommPlan two_phase_plan(const StepTraffic& t, int node_threshold = 2);

// Phases run in sequence; within a phase, transfers sharing a NIC
// serialize and collectives on different nodes overlap.
double plan_latency(const CommPlan& p, const HardwareSpec& hw);

// Cheapest admissible scheme for this traffic; ties prefer bulk exchange,
// then one-to-one, then strawman.
CommScheme select_scheme(const StepTraffic& t, const HardwareSpec& hw);
CommPlan make_plan(const StepTraffic& t, CommScheme s);

// Mirror for expert outputs flowing back: same scheme family with the sides
// swapped and the MoE-side aggregation playing the all-reduce role.
StepTraffic reverse_traffic(const StepTraffic& t);

void dump_plan(std::ostream& out, const CommPlan& p, const HardwareSpec& hw);

}  // namespace moesim
