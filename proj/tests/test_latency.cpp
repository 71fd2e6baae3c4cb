#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "moesim/latency.hpp"

using namespace moesim;

namespace {

ModelSpec model_256_8() {
  ModelSpec m;
  m.num_experts_per_layer = 256;
  m.top_k = 8;
  return m;
}

}  // namespace

TEST_CASE("compute-bound batch threshold on reference hardware") {
  ModelSpec m = model_256_8();

  HardwareSpec a100;
  a100.peak_flops = 312e12;
  a100.hbm_bandwidth = 2e12;
  CHECK(min_compute_bound_batch(m, a100) == 4992);  // 156 * 256 / 8 exactly

  HardwareSpec h100;
  h100.peak_flops = 989e12;
  h100.hbm_bandwidth = 3.35e12;
  CHECK(min_compute_bound_batch(m, h100) == 9448);

  // scales linearly in E/k
  m.top_k = 4;
  CHECK(min_compute_bound_batch(m, a100) == 9984);
  m.num_experts_per_layer = 128;
  m.top_k = 8;
  CHECK(min_compute_bound_batch(m, a100) == 2496);
}

TEST_CASE("moe instance latency: regimes and the zero case") {
  ModelSpec m;
  m.hidden_dim = 4096;
  m.expert_dim = 1024;
  m.bytes_per_param = 2;
  HardwareSpec h;
  h.peak_flops = 100e12;
  h.hbm_bandwidth = 1e12;
  h.kernel_launch_overhead = 5e-6;

  CHECK(moe_instance_latency(0, 100, m, h) == 0.0);

  // weight bytes: 2 * 4096 * 1024 * 2 = 16 MiB per expert
  double w = m.expert_weight_bytes();
  CHECK(w == 2.0 * 4096 * 1024 * 2);

  // memory bound: few tokens, many activated experts
  double mem = moe_instance_latency(10, 1, m, h);
  CHECK(mem == doctest::Approx(5e-6 + 10 * w / 1e12));

  // compute bound: flood one expert with tokens
  double flops_per_tok = 2.0 * 4096 * 1024;
  long long toks = 2000000;
  double comp = moe_instance_latency(1, toks, m, h);
  CHECK(comp == doctest::Approx(5e-6 + toks * flops_per_tok / 100e12));

  // crossover at exactly peak/bandwidth tokens per activated expert when
  // weights are one byte per parameter
  m.bytes_per_param = 1;
  long long cross = static_cast<long long>(h.peak_flops / h.hbm_bandwidth);
  double at = moe_instance_latency(1, cross, m, h);
  CHECK(at == doctest::Approx(5e-6 + m.expert_weight_bytes() / 1e12));
}

TEST_CASE("moe layer latency is the slowest instance") {
  ModelSpec m;
  HardwareSpec h;
  std::vector<InstanceLoad> loads = {{1, 5}, {4, 2}, {0, 0}};
  double worst = 0;
  for (auto& l : loads)
    worst = std::max(worst, moe_instance_latency(l.activated_experts, l.routed_tokens, m, h));
  CHECK(moe_layer_latency(loads, m, h) == worst);
  CHECK(moe_layer_latency({}, m, h) == 0.0);
}

TEST_CASE("attention latency: fixed parts, KV scaling, saturation") {
  ModelSpec m;
  m.bytes_per_param = 2;  // kv bytes default: 576 * 2
  HardwareSpec h;
  h.hbm_bandwidth = 3.35e12;
  h.t_fixed = 20e-6;
  h.b_sat = 128;
  h.c_compute = 2e-7;
  h.w_attn = 2e8;

  CHECK(attn_instance_latency(0, 1000, m, h) == 0.0);
  CHECK(m.kv_bytes() == 1152.0);

  double base = h.t_fixed + h.w_attn / h.hbm_bandwidth;
  CHECK(attn_instance_latency(1, 0, m, h) == doctest::Approx(base));

  // below saturation: linear in batch * context via KV reads only
  double l64 = attn_instance_latency(64, 1000, m, h);
  CHECK(l64 == doctest::Approx(base + 64 * 1000 * 1152.0 / 3.35e12));

  // past saturation an extra per-token compute term appears
  double l256 = attn_instance_latency(256, 1000, m, h);
  CHECK(l256 == doctest::Approx(base + 256 * 1000 * 1152.0 / 3.35e12 + 128 * 2e-7));

  // kv override wins over the derived default
  m.kv_bytes_per_token = 100;
  CHECK(m.kv_bytes() == 100.0);
  CHECK(attn_instance_latency(1, 10, m, h) == doctest::Approx(base + 1000.0 / 3.35e12));

  std::vector<AttnLoad> loads = {{4, 100}, {64, 2000}};
  CHECK(attn_layer_latency(loads, m, h) == attn_instance_latency(64, 2000, m, h));
}
