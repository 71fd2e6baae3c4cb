#include "moesim/latency.hpp"

#include <algorithm>
#include <cmath>

namespace moesim {

double arithmetic_intensity(double batch) { return batch; }

long long min_compute_bound_batch(const ModelSpec& m, const HardwareSpec& h) {
  // Dividing peak_flops/hbm_bandwidth first keeps clean ratios exact
  // (312e12/2e12 = 156) so the ceil does not pick up spurious ulps.
  double b = h.peak_flops / h.hbm_bandwidth * m.num_experts_per_layer / m.top_k;
  return static_cast<long long>(std::ceil(b));
}

double moe_instance_latency(int activated_experts, long long routed_tokens,
                            const ModelSpec& m, const HardwareSpec& h) {
  if (activated_experts <= 0) return 0;
  double mem_time = activated_experts * m.expert_weight_bytes() / h.hbm_bandwidth;
  double compute_time =
      2.0 * static_cast<double>(routed_tokens) * m.hidden_dim * m.expert_dim / h.peak_flops;
  return h.kernel_launch_overhead + std::max(mem_time, compute_time);
}

double moe_layer_latency(const std::vector<InstanceLoad>& loads, const ModelSpec& m,
                         const HardwareSpec& h) {
  double worst = 0;
  for (const InstanceLoad& l : loads)
    worst = std::max(worst, moe_instance_latency(l.activated_experts, l.routed_tokens, m, h));
  return worst;
}

double attn_instance_latency(long long batch, double mean_context, const ModelSpec& m,
                             const HardwareSpec& h) {
  if (batch <= 0) return 0;
  double weight_time = h.w_attn / h.hbm_bandwidth;
  double kv_time = static_cast<double>(batch) * mean_context * m.kv_bytes() / h.hbm_bandwidth;
  double saturation = std::max(0.0, static_cast<double>(batch) - h.b_sat) * h.c_compute;
  return h.t_fixed + weight_time + kv_time + saturation;
}

double attn_layer_latency(const std::vector<AttnLoad>& loads, const ModelSpec& m,
                          const HardwareSpec& h) {
  double worst = 0;
  for (const AttnLoad& l : loads)
    worst = std::max(worst, attn_instance_latency(l.batch, l.mean_context, m, h));
  return worst;
}

}  // namespace moesim
