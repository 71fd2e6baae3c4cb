#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <vector>

#include "moesim/scenarios.hpp"
#include "moesim/sim.hpp"

using namespace moesim;

namespace {

Config small_config() {
  Config c;
  c.model.num_layers = 4;
  c.model.num_experts_per_layer = 16;
  c.model.top_k = 2;
  c.model.hidden_dim = 1024;
  c.model.expert_dim = 512;
  c.model.bytes_per_param = 2;
  c.cluster = {1, 4, 1, 4, 6};
  c.slo.tpot_target = 0.05;
  c.workload.kind = "uniform";
  c.workload.seed = 99;
  c.scaling.stats_window = 64;
  return c;
}

}  // namespace

TEST_CASE("latency histogram quantiles and mean") {
  LatencyHistogram h;
  CHECK(h.quantile(0.5) == 0.0);
  for (int i = 0; i < 1000; ++i) h.add(1e-3, 1);
  h.add(1.0, 1);
  CHECK(h.total == 1001);
  CHECK(h.mean() == doctest::Approx((1000 * 1e-3 + 1.0) / 1001));
  CHECK(h.quantile(0.5) == doctest::Approx(1e-3).epsilon(0.1));
  // 1000/1001 entries sit in the small bin, so only a deeper quantile
  // reaches the outlier
  CHECK(h.quantile(0.9999) == doctest::Approx(1.0).epsilon(0.1));
  CHECK(h.max == 1.0);
  // weights count; a heavy tail entry moves the p50
  LatencyHistogram g;
  g.add(1e-4, 10);
  g.add(1e-2, 30);
  CHECK(g.quantile(0.5) == doctest::Approx(1e-2).epsilon(0.1));
}

TEST_CASE("engine constructs, places every expert and survives resize") {
  DecodeEngine eng(small_config(), SimPolicies{}, 7);
  CHECK(eng.attn_instances() == 4);
  CHECK(eng.moe_instances() == 4);
  CHECK(eng.gpu_count() == 8);
  CHECK(eng.min_moe_instances() == 3);  // 16 experts / 6 slots

  const ReplicaMap& m = eng.replicas();
  CHECK(m.num_experts == 16);
  CHECK(m.num_instances == 4);
  for (int e = 0; e < 16; ++e) CHECK(m.hosts[e].size() >= 1);

  eng.resize(2, 3);
  CHECK(eng.attn_instances() == 2);
  CHECK(eng.replicas().num_instances == 3);
  CHECK_THROWS_AS(eng.resize(0, 4), ValidationError);
  CHECK_THROWS_AS(eng.resize(2, 2), ValidationError);  // cannot host 16 experts
}

TEST_CASE("uniform round-robin placement spreads surplus replicas") {
  Config c = small_config();
  SimPolicies pol;
  pol.place = PlacePolicy::uniform_round_robin;
  DecodeEngine eng(c, pol, 7);
  const ReplicaMap& m = eng.replicas();
  // 24 slots over 16 experts: 8 experts get a second replica
  long long total = 0;
  for (int e = 0; e < 16; ++e) {
    total += m.replica_count(e);
    CHECK(m.replica_count(e) >= 1);
    CHECK(m.replica_count(e) <= 2);
  }
  CHECK(total == 24);
}

TEST_CASE("eval_step is deterministic and prices all four phases") {
  DecodeEngine a(small_config(), SimPolicies{}, 11);
  DecodeEngine b(small_config(), SimPolicies{}, 11);
  a.warmup(8, 32);
  b.warmup(8, 32);
  StepCost ca = a.eval_step(64, 500, 3);
  StepCost cb = b.eval_step(64, 500, 3);
  CHECK(ca.total_s == cb.total_s);
  CHECK(ca.max_load == cb.max_load);
  CHECK(ca.attn_s > 0);
  CHECK(ca.moe_s > 0);
  CHECK(ca.fwd_comm_s > 0);
  CHECK(ca.rev_comm_s > 0);
  CHECK(ca.total_s ==
        doctest::Approx(4 * (ca.attn_s + ca.fwd_comm_s + ca.moe_s + ca.rev_comm_s)));
  CHECK(a.eval_step(0, 100, 4).total_s == 0.0);
}

TEST_CASE("predict_tpot tracks shape changes the right way") {
  DecodeEngine eng(small_config(), SimPolicies{}, 3);
  double base = eng.predict_tpot(4, 4, 64, 500);
  CHECK(base > 0);
  // more tokens never price cheaper
  CHECK(eng.predict_tpot(4, 4, 256, 500) >= base);
  // a bigger attention side helps at attention-heavy load
  CHECK(eng.predict_tpot(8, 4, 256, 4000) < eng.predict_tpot(1, 4, 256, 4000));
  CHECK(eng.predict_tpot(0, 4, 64, 500) == std::numeric_limits<double>::infinity());

  // capacity is the largest batch within the bound
  double bound = eng.predict_tpot(4, 4, 100, 500);
  long long cap = eng.capacity_tokens(4, 4, 500, bound);
  CHECK(cap >= 100);
  CHECK(eng.predict_tpot(4, 4, static_cast<double>(cap), 500) <= bound);
  CHECK(eng.predict_tpot(4, 4, static_cast<double>(cap + 1), 500) > bound);
  CHECK(eng.capacity_tokens(4, 4, 500, 1e-12) == 0);
}

TEST_CASE("autoscale tick proposes sane actions in both directions") {
  Config c = small_config();
  c.scaling.search_radius = 2;
  DecodeEngine eng(c, SimPolicies{}, 5);
  eng.warmup(8, 32);

  // overloaded but a feasible shape exists: the proposal must meet the target
  WindowMetrics hot{400, c.slo.tpot_target * 3, 500};
  ScalingAction up = autoscale_tick(eng, c.slo, c.scaling, hot, false);
  CHECK(!up.zero());
  CHECK((up.predicted_tpot <= c.slo.tpot_target || up.d_attn + up.d_moe > 0));
  CHECK(eng.attn_instances() + up.d_attn >= 1);
  CHECK(eng.moe_instances() + up.d_moe >= eng.min_moe_instances());

  // overloaded with hopeless demand: only strict upsizes are allowed
  WindowMetrics crush{5e6, c.slo.tpot_target * 3, 500};
  ScalingAction grow = autoscale_tick(eng, c.slo, c.scaling, crush, false);
  CHECK(!grow.zero());
  CHECK(grow.d_attn + grow.d_moe > 0);

  // idle window: far under the target and nearly no load
  WindowMetrics idle{1, c.slo.tpot_target / 100, 50};
  ScalingAction down = autoscale_tick(eng, c.slo, c.scaling, idle, false);
  CHECK(down.d_attn + down.d_moe < 0);
  CHECK(down.predicted_tpot <= c.slo.tpot_target);
  CHECK(eng.moe_instances() + down.d_moe >= eng.min_moe_instances());

  // tier policy moves between lockstep pairs only
  eng.resize(16, 16);
  ScalingAction tier = autoscale_tick(eng, c.slo, c.scaling, idle, true);
  CHECK(!tier.zero());
  CHECK(16 + tier.d_attn == 8);
  CHECK(16 + tier.d_moe == 8);
}

TEST_CASE("run_trace conserves requests and reports a coherent summary") {
  Config c = small_config();
  c.workload.mean_input_len = 20;
  c.workload.mean_output_len = 30;
  RequestTrace trace = gen_trace(40, 30, 20, 30, 1);
  REQUIRE(trace.requests.size() > 100);
  long long out_tokens = 0;
  for (const Request& r : trace.requests) out_tokens += r.output_tokens;

  DecodeEngine eng(c, SimPolicies{}, 13);
  eng.warmup(8, 32);
  SimReport rep = run_trace(eng, trace, c.slo, c.scaling, AutoscalePolicy::off);

  CHECK(rep.requests == static_cast<long long>(trace.requests.size()));
  CHECK(rep.tokens == out_tokens);
  CHECK(rep.steps >= rep.evaluated_steps);
  CHECK(rep.wall_s > 0);
  CHECK(rep.gpu_seconds == doctest::Approx(rep.wall_s * 8));  // static fleet
  CHECK(rep.mean_tpot > 0);
  CHECK(rep.p99_tpot >= rep.p50_tpot);
  CHECK(rep.max_tpot >= rep.p99_tpot * 0.5);
  CHECK(rep.attainment >= 0);
  CHECK(rep.attainment <= 1);
  CHECK(rep.scale_events.empty());
  CHECK(rep.final_attn == 4);
  CHECK(rep.scheme_steps[0] + rep.scheme_steps[1] + rep.scheme_steps[2] ==
        rep.evaluated_steps);

  // bit-identical on a rerun
  DecodeEngine eng2(c, SimPolicies{}, 13);
  eng2.warmup(8, 32);
  SimReport rep2 = run_trace(eng2, trace, c.slo, c.scaling, AutoscalePolicy::off);
  CHECK(rep2.tokens == rep.tokens);
  CHECK(rep2.mean_tpot == rep.mean_tpot);
  CHECK(rep2.gpu_seconds == rep.gpu_seconds);
  CHECK(rep2.steps == rep.steps);
}

TEST_CASE("lazy re-evaluation trades evaluations for the same totals") {
  Config c = small_config();
  RequestTrace trace = gen_trace(40, 30, 20, 30, 2);
  DecodeEngine exact(c, SimPolicies{}, 17);
  exact.warmup(8, 32);
  SimReport r0 = run_trace(exact, trace, c.slo, c.scaling, AutoscalePolicy::off);

  Config lazy_cfg = c;
  lazy_cfg.scaling.reeval_tolerance = 0.2;
  DecodeEngine lazy(lazy_cfg, SimPolicies{}, 17);
  lazy.warmup(8, 32);
  SimReport r1 = run_trace(lazy, trace, lazy_cfg.slo, lazy_cfg.scaling, AutoscalePolicy::off);

  CHECK(r0.evaluated_steps == r0.steps);
  CHECK(r1.evaluated_steps < r1.steps);
  CHECK(r1.tokens == r0.tokens);
  CHECK(r1.requests == r0.requests);
  // costs drift only within the tolerance band
  CHECK(r1.mean_tpot == doctest::Approx(r0.mean_tpot).epsilon(0.25));
}

TEST_CASE("autoscaling trims gpu hours on a bursty day") {
  Config c = small_config();
  c.scaling.decision_interval = 20;
  c.scaling.search_radius = 2;
  RequestTrace trace = gen_diurnal_trace(2, 6, 600, 10, 20, 31);

  DecodeEngine fixed(c, SimPolicies{}, 19);
  fixed.warmup(8, 32);
  SimReport rf = run_trace(fixed, trace, c.slo, c.scaling, AutoscalePolicy::off);

  DecodeEngine autos(c, SimPolicies{}, 19);
  autos.warmup(8, 32);
  SimReport ra = run_trace(autos, trace, c.slo, c.scaling, AutoscalePolicy::fine_grained);

  CHECK(!ra.scale_events.empty());
  CHECK(ra.gpu_seconds < rf.gpu_seconds);
  CHECK(ra.requests == rf.requests);
  for (const ScaleEvent& ev : ra.scale_events) {
    CHECK(ev.attn_after >= 1);
    CHECK(ev.moe_after >= autos.min_moe_instances());
  }
}

TEST_CASE("steady tpot is positive and stable across invocations") {
  DecodeEngine eng(small_config(), SimPolicies{}, 23);
  eng.warmup(8, 32);
  double a = steady_tpot(eng, 64, 500, 8);
  DecodeEngine eng2(small_config(), SimPolicies{}, 23);
  eng2.warmup(8, 32);
  double b = steady_tpot(eng2, 64, 500, 8);
  CHECK(a == b);
  CHECK(a > 0);
}

TEST_CASE("scenario registry knows its fixtures") {
  std::vector<std::string> names = scenario_names();
  REQUIRE(names.size() == 4);
  CHECK(std::find(names.begin(), names.end(), "fig12-imbalance") != names.end());
  CHECK_THROWS_AS(run_scenario("nope"), ValidationError);
}

TEST_CASE("imbalance fixture favors balanced scheduling") {
  nlohmann::json j = run_scenario("fig12-imbalance");
  REQUIRE(j.contains("rows"));
  CHECK(j["gap_ratio_overall"].get<double>() < 0.6);
}
