#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace moesim {

// Malformed input text (config files, traces, maps). Messages carry line
// numbers where available.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally valid input with an out-of-range or inconsistent value.
// Messages name the offending key or field.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A solver could not produce a feasible result (e.g. placement deadlock).
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelSpec {
  int num_layers = 60;
  int num_experts_per_layer = 160;
  int top_k = 8;
  int hidden_dim = 5120;
  int expert_dim = 1024;
  int bytes_per_param = 2;
  // 0 means "derive": compressed KV of 576 elements per token per layer.
  double kv_bytes_per_token = 0;

  double kv_bytes() const {
    return kv_bytes_per_token > 0 ? kv_bytes_per_token : 576.0 * bytes_per_param;
  }
  // Bytes of one expert's weights: two d_h x d_e projection matrices.
  double expert_weight_bytes() const {
    return 2.0 * hidden_dim * expert_dim * bytes_per_param;
  }
  void validate() const;
};

struct HardwareSpec {
  double peak_flops = 989e12;           // FLOP/s per instance
  double hbm_bandwidth = 3.35e12;       // B/s per instance
  double intra_node_bw = 900e9;         // B/s, NVLink-class
  double inter_node_bw = 50e9;          // B/s per NIC (400 Gb/s)
  double msg_fixed_latency = 3e-6;      // s per message
  double kernel_launch_overhead = 5e-6; // s per MoE layer dispatch (t_launch)

  // Attention calibration constants ([hardware.calibration]).
  double t_fixed = 20e-6;        // fixed per-layer cost
  double b_sat = 128;            // batch beyond which compute saturates
  double c_compute = 2e-7;       // s per token past saturation
  double w_attn = 2e8;           // attention weight bytes per layer

  void validate() const;
};

struct ClusterLayout {
  int attn_nodes = 1;
  int attn_instances_per_node = 8;
  int moe_nodes = 1;
  int moe_instances_per_node = 8;
  int slots_per_instance = 24;

  int attn_instances() const { return attn_nodes * attn_instances_per_node; }
  int moe_instances() const { return moe_nodes * moe_instances_per_node; }
  int total_instances() const { return attn_instances() + moe_instances(); }
  int total_slots() const { return moe_instances() * slots_per_instance; }
  void validate() const;
};

struct SloSpec {
  double tpot_target = 0.2;        // s
  double attainment_target = 0.99; // fraction of tokens within target
  void validate() const;
};

struct WorkloadSpec {
  std::string kind = "gaussian";  // gaussian | uniform
  double sigma = 0.15;            // gaussian width as a fraction of E
  bool cover_all = false;
  uint64_t seed = 42;             // root seed for every stream in the run
  double mean_input_len = 16;
  double mean_output_len = 256;
  void validate() const;
};

struct ScalingSpec {
  double decision_interval = 1800; // s between autoscaler ticks
  int search_radius = 4;           // candidate actions per side, in instances
  double scaledown_utilization = 0.5; // shrink when tpot/target stays below this
  int stats_window = 256;          // recorded layer-steps kept for activation stats
  bool shared_replica_map = true;  // one replica map reused across layers
  double reeval_tolerance = 0;     // relative active-count drift before step cost re-eval
  int case_node_threshold = 2;     // MoE node count at which bulk transfers stop paying off
  void validate() const;
};

struct Config {
  ModelSpec model;
  HardwareSpec hardware;
  ClusterLayout cluster;
  SloSpec slo;
  WorkloadSpec workload;
  ScalingSpec scaling;

  void validate() const;
};

Config parse_config(std::istream& in);
Config parse_config_file(const std::string& path);
// Emits every key; parse_config(serialize_config(c)) == c.
std::string serialize_config(const Config& c);

bool operator==(const ModelSpec&, const ModelSpec&);
bool operator==(const HardwareSpec&, const HardwareSpec&);
bool operator==(const ClusterLayout&, const ClusterLayout&);
bool operator==(const SloSpec&, const SloSpec&);
bool operator==(const WorkloadSpec&, const WorkloadSpec&);
bool operator==(const ScalingSpec&, const ScalingSpec&);
bool operator==(const Config&, const Config&);

}  // namespace moesim
