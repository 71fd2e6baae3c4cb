#include "moesim/comm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace moesim {

const char* scheme_name(CommScheme s) {
  switch (s) {
    case CommScheme::strawman: return "strawman";
    case CommScheme::bulk_pairwise: return "bulk-pairwise";
    case CommScheme::one_to_one: return "one-to-one";
  }
  return "?";
}

StepTraffic StepTraffic::make(int attn_nodes, int attn_per_node, int moe_nodes,
                              int moe_per_node, long long tokens, double token_bytes) {
  StepTraffic t;
  t.attn_nodes = attn_nodes;
  t.attn_per_node = attn_per_node;
  t.attn_instances = attn_nodes * attn_per_node;
  t.moe_nodes = moe_nodes;
  t.moe_per_node = moe_per_node;
  t.moe_instances = moe_nodes * moe_per_node;
  t.tokens = tokens;
  t.token_bytes = token_bytes;
  t.validate();
  return t;
}

StepTraffic StepTraffic::from_counts(int attn_instances, int attn_per_node, int moe_instances,
                                     int moe_per_node, long long tokens, double token_bytes) {
  StepTraffic t;
  t.attn_instances = attn_instances;
  t.attn_per_node = std::min(attn_per_node, attn_instances);
  t.attn_nodes = (attn_instances + attn_per_node - 1) / attn_per_node;
  t.moe_instances = moe_instances;
  t.moe_per_node = std::min(moe_per_node, moe_instances);
  t.moe_nodes = (moe_instances + moe_per_node - 1) / moe_per_node;
  t.tokens = tokens;
  t.token_bytes = token_bytes;
  t.validate();
  return t;
}

int StepTraffic::attn_node_size(int a) const {
  int first = a * attn_per_node;
  return std::min(attn_per_node, attn_instances - first);
}

int StepTraffic::moe_node_size(int d) const {
  int first = d * moe_per_node;
  return std::min(moe_per_node, moe_instances - first);
}

void StepTraffic::validate() const {
  if (attn_nodes < 1 || attn_per_node < 1 || moe_nodes < 1 || moe_per_node < 1)
    throw ValidationError("traffic: node shape must be positive");
  if (attn_instances < 1 || attn_instances > attn_nodes * attn_per_node)
    throw ValidationError("traffic: attention instance count inconsistent with nodes");
  if (moe_instances < 1 || moe_instances > moe_nodes * moe_per_node)
    throw ValidationError("traffic: MoE instance count inconsistent with nodes");
  if (attn_instances <= (attn_nodes - 1) * attn_per_node)
    throw ValidationError("traffic: attention node count too large for instances");
  if (moe_instances <= (moe_nodes - 1) * moe_per_node)
    throw ValidationError("traffic: MoE node count too large for instances");
  if (tokens < 0) throw ValidationError("traffic: negative token count");
  if (token_bytes < 0) throw ValidationError("traffic: negative token_bytes");
}

namespace {

// Tokens are dealt evenly over attention instances, remainder to the lowest
// indices.
double instance_shard_bytes(const StepTraffic& t, int i) {
  long long share = t.tokens / t.attn_instances + (i < t.tokens % t.attn_instances ? 1 : 0);
  return static_cast<double>(share) * t.token_bytes;
}

double node_shard_bytes(const StepTraffic& t, int a) {
  double sum = 0;
  for (int k = 0; k < t.attn_node_size(a); ++k)
    sum += instance_shard_bytes(t, a * t.attn_per_node + k);
  return sum;
}

int moe_nic(const StepTraffic& t, int inst) { return t.attn_instances + inst; }

void add_aggregates(const StepTraffic& t, CommPlan& p) {
  for (int a = 0; a < t.attn_nodes; ++a) {
    double bytes = node_shard_bytes(t, a);
    if (t.attn_node_size(a) > 1 && bytes > 0)
      p.aggregate.push_back({a, t.attn_node_size(a), bytes});
  }
}

}  // namespace

double CommPlan::delivered_to_moe_node(int d) const {
  double sum = 0;
  int first = traffic.attn_instances + d * traffic.moe_per_node;
  int last = first + traffic.moe_node_size(d);
  for (const Transfer& x : transfers)
    if (x.dst >= first && x.dst < last) sum += x.bytes;
  return sum;
}

CommPlan strawman_plan(const StepTraffic& t) {
  CommPlan p;
  p.scheme = CommScheme::strawman;
  p.traffic = t;
  for (int i = 0; i < t.attn_instances; ++i) {
    double bytes = instance_shard_bytes(t, i);
    if (bytes <= 0) continue;
    for (int j = 0; j < t.moe_instances; ++j) p.transfers.push_back({i, moe_nic(t, j), bytes});
  }
  return p;
}

CommPlan bulk_pairwise_plan(const StepTraffic& t) {
  CommPlan p;
  p.scheme = CommScheme::bulk_pairwise;
  p.traffic = t;
  add_aggregates(t, p);
  for (int a = 0; a < t.attn_nodes; ++a) {
    double bytes = node_shard_bytes(t, a);
    if (bytes <= 0) continue;
    int src = a * t.attn_per_node;  // aggregator NIC
    for (int d = 0; d < t.moe_nodes; ++d)
      p.transfers.push_back({src, moe_nic(t, d * t.moe_per_node), bytes});
  }
  return p;
}

CommPlan one_to_one_plan(const StepTraffic& t) {
  CommPlan p;
  p.scheme = CommScheme::one_to_one;
  p.traffic = t;
  add_aggregates(t, p);
  for (int a = 0; a < t.attn_nodes; ++a) {
    double bytes = node_shard_bytes(t, a);
    if (bytes <= 0) continue;
    for (int k = 0; k < t.attn_node_size(a); ++k) {
      int src = a * t.attn_per_node + k;
      int d = k % t.moe_nodes;
      // Receiver slot rotates with the attention node so different senders
      // land on different NICs of the same MoE node.
      int slot = (a + k / t.moe_nodes) % t.moe_node_size(d);
      p.transfers.push_back({src, moe_nic(t, d * t.moe_per_node + slot), bytes});
    }
  }
  for (int d = 0; d < t.moe_nodes; ++d) {
    double full = static_cast<double>(t.tokens) * t.token_bytes;
    if (t.moe_node_size(d) > 1 && full > 0)
      p.distribute.push_back({d, t.moe_node_size(d), full});
  }
  return p;
}

bool one_to_one_covers(const StepTraffic& t) {
  // Node a's instances hit MoE nodes round-robin; full coverage needs at
  // least one instance per MoE node.
  for (int a = 0; a < t.attn_nodes; ++a)
    if (t.attn_node_size(a) < t.moe_nodes) return false;
  return true;
}

CommPlan two_phase_plan(const StepTraffic& t, int node_threshold) {
  if (node_threshold < 1) throw ValidationError("two_phase_plan: node_threshold must be >= 1");
  if (t.moe_nodes <= node_threshold || !one_to_one_covers(t)) return bulk_pairwise_plan(t);
  return one_to_one_plan(t);
}

double plan_latency(const CommPlan& p, const HardwareSpec& hw) {
  auto collective_time = [&](const Collective& c) {
    return hw.msg_fixed_latency +
           (static_cast<double>(c.participants - 1) / c.participants) * c.bytes /
               hw.intra_node_bw;
  };

  double phase1 = 0;
  for (const Collective& c : p.aggregate) phase1 = std::max(phase1, collective_time(c));

  double phase2 = 0;
  if (!p.transfers.empty()) {
    std::vector<double> busy(p.traffic.attn_instances + p.traffic.moe_instances, 0);
    for (const Transfer& x : p.transfers) {
      double cost = hw.msg_fixed_latency + x.bytes / hw.inter_node_bw;
      busy[x.src] += cost;
      busy[x.dst] += cost;
    }
    phase2 = *std::max_element(busy.begin(), busy.end());
  }

  double phase3 = 0;
  for (const Collective& c : p.distribute) phase3 = std::max(phase3, collective_time(c));

  return phase1 + phase2 + phase3;
}

CommPlan make_plan(const StepTraffic& t, CommScheme s) {
  switch (s) {
    case CommScheme::strawman: return strawman_plan(t);
    case CommScheme::bulk_pairwise: return bulk_pairwise_plan(t);
    case CommScheme::one_to_one: return one_to_one_plan(t);
  }
  throw ValidationError("make_plan: bad scheme");
}

CommScheme select_scheme(const StepTraffic& t, const HardwareSpec& hw) {
  double bulk = plan_latency(bulk_pairwise_plan(t), hw);
  double o2o = one_to_one_covers(t) ? plan_latency(one_to_one_plan(t), hw)
                                    : std::numeric_limits<double>::infinity();
  double straw = plan_latency(strawman_plan(t), hw);

  CommScheme pick = CommScheme::bulk_pairwise;
  double best = bulk;
  if (o2o < best) {
    pick = CommScheme::one_to_one;
    best = o2o;
  }
  if (straw < best) pick = CommScheme::strawman;
  return pick;
}

StepTraffic reverse_traffic(const StepTraffic& t) {
  StepTraffic r = t;
  std::swap(r.attn_nodes, r.moe_nodes);
  std::swap(r.attn_per_node, r.moe_per_node);
  std::swap(r.attn_instances, r.moe_instances);
  return r;
}

void dump_plan(std::ostream& out, const CommPlan& p, const HardwareSpec& hw) {
  out << "scheme " << scheme_name(p.scheme) << "\n";
  out << "tokens " << p.traffic.tokens << " token_bytes " << p.traffic.token_bytes << "\n";
  for (const Collective& c : p.aggregate)
    out << "aggregate node=" << c.node << " participants=" << c.participants
        << " bytes=" << c.bytes << "\n";
  for (const Transfer& x : p.transfers)
    out << "transfer src=" << x.src << " dst=" << x.dst << " bytes=" << x.bytes << "\n";
  for (const Collective& c : p.distribute)
    out << "distribute node=" << c.node << " participants=" << c.participants
        << " bytes=" << c.bytes << "\n";
  out << "latency_s " << plan_latency(p, hw) << "\n";
}

}  // namespace moesim
