#pragma once

#include <vector>

#include "moesim/types.hpp"

namespace moesim {

// Roofline cost model for one decode step. All results are seconds.
//
// Expert FFN accounting keeps the simplification that arithmetic intensity
// equals the per-expert token batch: 2*b*d_h*d_e FLOPs against 2*d_h*d_e
// weight bytes. Under that accounting an expert GEMM leaves the memory-bound
// regime once its batch reaches peak_flops / hbm_bandwidth tokens.

double arithmetic_intensity(double batch);

// Smallest layer batch at which expert compute can bind:
// ceil(peak_flops * E / (hbm_bandwidth * k)).
long long min_compute_bound_batch(const ModelSpec& m, const HardwareSpec& h);

// One MoE instance in one layer: weight reads for the activated experts vs
// GEMM FLOPs for the routed token activations, plus the dispatch overhead.
// An instance with nothing activated costs nothing.
double moe_instance_latency(int activated_experts, long long routed_tokens,
                            const ModelSpec& m, const HardwareSpec& h);

struct InstanceLoad {
  int activated_experts = 0;
  long long routed_tokens = 0;
};

// Layer completes when its slowest instance does.
double moe_layer_latency(const std::vector<InstanceLoad>& loads, const ModelSpec& m,
                         const HardwareSpec& h);

// One attention instance in one layer: weight reads, KV reads for the whole
// resident context, and a compute penalty once the batch saturates the SMs.
// mean_context is the average resident sequence length of the batch.
double attn_instance_latency(long long batch, double mean_context, const ModelSpec& m,
                             const HardwareSpec& h);

struct AttnLoad {
  long long batch = 0;
  double mean_context = 0;
};

double attn_layer_latency(const std::vector<AttnLoad>& loads, const ModelSpec& m,
                          const HardwareSpec& h);

}  // namespace moesim
