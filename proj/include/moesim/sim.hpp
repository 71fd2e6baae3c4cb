#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moesim/aebs.hpp"
#include "moesim/comm.hpp"
#include "moesim/experts.hpp"
#include "moesim/latency.hpp"
#include "moesim/types.hpp"
#include "moesim/workload.hpp"

namespace moesim {

enum class SchedPolicy { activation_balanced, random_replica };
enum class PlacePolicy { activation_aware, uniform_round_robin };
enum class CommPolicy { two_phase, strawman_only };

struct SimPolicies {
  SchedPolicy sched = SchedPolicy::activation_balanced;
  PlacePolicy place = PlacePolicy::activation_aware;
  CommPolicy comm = CommPolicy::two_phase;
};

// Cost of one decode step, per layer and total across layers.
struct StepCost {
  double attn_s = 0;
  double fwd_comm_s = 0;
  double moe_s = 0;
  double rev_comm_s = 0;
  double total_s = 0;  // num_layers * (attn + fwd + moe + rev)
  int max_load = 0;    // activated replicas on the busiest MoE instance
  int min_load = 0;
  CommScheme fwd_scheme = CommScheme::bulk_pairwise;
};

// Log-spaced latency histogram, wide enough for anything a decode step can
// produce. Quantiles come back as the geometric middle of their bin.
struct LatencyHistogram {
  static constexpr double kLo = 1e-7;
  static constexpr int kBinsPerDecade = 32;
  static constexpr int kDecades = 10;

  std::vector<long long> bins = std::vector<long long>(kBinsPerDecade * kDecades, 0);
  long long total = 0;
  double sum = 0;
  double max = 0;

  void add(double v, long long weight);
  double quantile(double q) const;
  double mean() const { return total ? sum / total : 0; }
};

// One serving side's shape plus the replica layout, with the cost model
// wired through. Attention instances are stateless data-parallel replicas;
// the MoE side owns the replica map and the activation statistics that
// drive replication and placement.
class DecodeEngine {
 public:
  DecodeEngine(const Config& cfg, SimPolicies pol, uint64_t seed);

  // Seeds the stats window with sampled steps at the given batch so the
  // first placement has something to work from.
  void warmup(int steps, int tokens_per_step);

  void resize(int attn_instances, int moe_instances);
  void rebuild_placement();

  // Samples one routing batch, schedules it, and prices the full step.
  StepCost eval_step(int active_tokens, double mean_context, uint64_t step_index);

  // Closed-form step estimate for a hypothetical shape: expected distinct
  // activated experts spread evenly over instances, tokens dealt evenly.
  double predict_tpot(int attn_instances, int moe_instances, double active_tokens,
                      double mean_context) const;
  // Largest batch the shape sustains within the latency bound.
  long long capacity_tokens(int attn_instances, int moe_instances, double mean_context,
                            double tpot_bound) const;

  double prefill_latency(int input_tokens) const;

  int attn_instances() const { return attn_; }
  int moe_instances() const { return moe_; }
  int gpu_count() const { return attn_ + moe_; }
  int min_moe_instances() const { return min_moe_; }
  const Config& config() const { return cfg_; }
  const SimPolicies& policies() const { return pol_; }
  const ReplicaMap& replicas() const { return map_; }
  ActivationStats& stats() { return stats_; }

 private:
  CommPlan forward_plan(const StepTraffic& t) const;
  StepTraffic traffic(long long tokens, int attn_instances, int moe_instances) const;

  Config cfg_;
  SimPolicies pol_;
  uint64_t seed_;
  int attn_ = 0;
  int moe_ = 0;
  int min_moe_ = 1;
  double token_bytes_ = 0;
  RoutingPattern pattern_;
  ActivationStats stats_;
  ReplicaMap map_;
};

struct WindowMetrics {
  double mean_active = 0;
  double mean_tpot = 0;
  double mean_context = 0;
};

struct ScalingAction {
  int d_attn = 0;
  int d_moe = 0;
  double predicted_tpot = 0;
  bool zero() const { return d_attn == 0 && d_moe == 0; }
};

// Fine-grained policy searches +-search_radius steps per side independently;
// the tier policy is restricted to lockstep pairs (8,8), (16,16), (32,32).
// Scale up when the window misses the target or demand exceeds capacity:
// cheapest candidate predicted to meet the target, best-effort lowest
// prediction when none does. Scale down when demand sits below the
// utilization threshold: largest reduction still predicted to meet target.
ScalingAction autoscale_tick(const DecodeEngine& eng, const SloSpec& slo,
                             const ScalingSpec& scaling, const WindowMetrics& w,
                             bool monolithic_tiers);

enum class AutoscalePolicy { off, fine_grained, monolithic_tiers };

struct ScaleEvent {
  double t = 0;
  int attn_before = 0, moe_before = 0;
  int attn_after = 0, moe_after = 0;
  double window_tpot = 0, predicted_tpot = 0;
};

struct SimReport {
  long long tokens = 0;
  long long requests = 0;
  long long steps = 0;
  long long evaluated_steps = 0;
  double wall_s = 0;
  double gpu_seconds = 0;
  double mean_tpot = 0, p50_tpot = 0, p99_tpot = 0, max_tpot = 0;
  double attainment = 0;        // fraction of tokens within the TPOT target
  double per_gpu_throughput = 0;  // tokens / gpu_seconds
  double mean_imbalance = 0;    // max-min activated load, evaluated steps
  int max_imbalance = 0;
  long long scheme_steps[3] = {0, 0, 0};  // indexed by CommScheme
  int final_attn = 0, final_moe = 0;
  std::vector<ScaleEvent> scale_events;

  double gpu_hours() const { return gpu_seconds / 3600.0; }
};

SimReport run_trace(DecodeEngine& eng, const RequestTrace& trace, const SloSpec& slo,
                    const ScalingSpec& scaling, AutoscalePolicy policy);

// Steady-state TPOT at a fixed batch: mean step cost over `samples` fresh
// routing draws.
double steady_tpot(DecodeEngine& eng, int batch, double mean_context, int samples);

}  // namespace moesim
