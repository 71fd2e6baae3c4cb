#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "moesim/types.hpp"

using namespace moesim;

namespace {

Config parse_str(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

}  // namespace

TEST_CASE("defaults validate and survive a round trip") {
  Config c;
  CHECK_NOTHROW(c.validate());
  Config back = parse_str(serialize_config(c));
  CHECK(back == c);
}

TEST_CASE("round trip preserves every field including awkward doubles") {
  Config c;
  c.model.num_layers = 61;
  c.model.num_experts_per_layer = 257;
  c.model.top_k = 9;
  c.model.hidden_dim = 7168;
  c.model.expert_dim = 2048;
  c.model.bytes_per_param = 1;
  c.model.kv_bytes_per_token = 0.1234567890123456;
  c.hardware.peak_flops = 312.5e12;
  c.hardware.hbm_bandwidth = 2.039e12;
  c.hardware.intra_node_bw = 600e9;
  c.hardware.inter_node_bw = 25e9;
  c.hardware.msg_fixed_latency = 1e-6 / 3;
  c.hardware.kernel_launch_overhead = 7.7e-6;
  c.hardware.t_fixed = 1.9999999999999998e-05;
  c.hardware.b_sat = 96;
  c.hardware.c_compute = 3.33e-7;
  c.hardware.w_attn = 1.5e8;
  c.cluster = {3, 5, 2, 7, 31};
  c.slo = {0.123, 0.97};
  c.workload.kind = "uniform";
  c.workload.sigma = 0.33;
  c.workload.cover_all = true;
  c.workload.seed = 0xdeadbeefcafe1234ULL;
  c.workload.mean_input_len = 100.5;
  c.workload.mean_output_len = 333.25;
  c.scaling.decision_interval = 60.5;
  c.scaling.search_radius = 6;
  c.scaling.scaledown_utilization = 0.45;
  c.scaling.stats_window = 512;
  c.scaling.shared_replica_map = false;
  c.scaling.reeval_tolerance = 0.02;
  c.scaling.case_node_threshold = 3;
  Config back = parse_str(serialize_config(c));
  CHECK(back == c);
}

TEST_CASE("comments, blank lines and the t_launch alias") {
  Config c = parse_str(
      "# leading comment\n"
      "[hardware.calibration]\n"
      "t_launch = 4e-6   ; trailing comment\n"
      "\n"
      "[model]\n"
      "top_k = 4\n");
  CHECK(c.hardware.kernel_launch_overhead == 4e-6);
  CHECK(c.model.top_k == 4);
}

TEST_CASE("parse errors carry line numbers") {
  CHECK_THROWS_WITH_AS(parse_str("[model]\nnum_layers\n"),
                       doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_AS(parse_str("[model]\nnum_layers = abc\n"), ParseError);
  CHECK_THROWS_AS(parse_str("[nope]\n"), ParseError);
  CHECK_THROWS_AS(parse_str("key = 1\n"), ParseError);          // outside any section
  CHECK_THROWS_AS(parse_str("[model]\nwidth = 3\n"), ParseError);  // unknown key
  CHECK_THROWS_AS(parse_str("[model"), ParseError);
}

TEST_CASE("validation rejects out-of-range values") {
  CHECK_THROWS_AS(parse_str("[model]\ntop_k = 0\n"), ValidationError);
  CHECK_THROWS_AS(parse_str("[model]\ntop_k = 200\nnum_experts_per_layer = 100\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse_str("[model]\nbytes_per_param = 3\n"), ValidationError);
  CHECK_THROWS_AS(parse_str("[slo]\nattainment_target = 1.5\n"), ValidationError);
  CHECK_THROWS_AS(parse_str("[workload]\nkind = zipf\n"), ValidationError);
  CHECK_THROWS_AS(parse_str("[scaling]\nscaledown_utilization = 1\n"), ValidationError);
  CHECK_THROWS_AS(parse_str("[scaling]\ncase_node_threshold = 0\n"), ValidationError);
  // too few expert slots for one replica each
  CHECK_THROWS_AS(parse_str("[cluster]\nslots_per_instance = 1\n"), ValidationError);
  // both spellings of the launch overhead in one file
  CHECK_THROWS_AS(parse_str("[hardware]\nkernel_launch_overhead = 1e-6\n"
                            "[hardware.calibration]\nt_launch = 2e-6\n"),
                  ValidationError);
}

TEST_CASE("unreadable config file") {
  CHECK_THROWS_AS(parse_config_file("/nonexistent/moesim.cfg"), ParseError);
}
