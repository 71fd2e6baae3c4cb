#include "moesim/types.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace moesim {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_line(int line, const std::string& what) {
  throw ParseError("config line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& v, int line, const std::string& key) {
  char* end = nullptr;
  double d = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0' || !std::isfinite(d))
    bad_line(line, "key '" + key + "': expected a number, got '" + v + "'");
  return d;
}

long long parse_int(const std::string& v, int line, const std::string& key) {
  char* end = nullptr;
  long long i = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    bad_line(line, "key '" + key + "': expected an integer, got '" + v + "'");
  return i;
}

uint64_t parse_u64(const std::string& v, int line, const std::string& key) {
  char* end = nullptr;
  unsigned long long i = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    bad_line(line, "key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return i;
}

bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_line(line, "key '" + key + "': expected true/false, got '" + v + "'");
}

void positive(double v, const char* key) {
  if (!(v > 0)) throw ValidationError(std::string(key) + " must be > 0");
}
void positive(int v, const char* key) {
  if (v <= 0) throw ValidationError(std::string(key) + " must be > 0");
}
void nonneg(double v, const char* key) {
  if (!(v >= 0)) throw ValidationError(std::string(key) + " must be >= 0");
}

}  // namespace

void ModelSpec::validate() const {
  positive(num_layers, "model.num_layers");
  positive(num_experts_per_layer, "model.num_experts_per_layer");
  positive(top_k, "model.top_k");
  if (top_k > num_experts_per_layer)
    throw ValidationError("model.top_k must be <= model.num_experts_per_layer");
  positive(hidden_dim, "model.hidden_dim");
  positive(expert_dim, "model.expert_dim");
  if (bytes_per_param != 1 && bytes_per_param != 2 && bytes_per_param != 4)
    throw ValidationError("model.bytes_per_param must be 1, 2 or 4");
  nonneg(kv_bytes_per_token, "model.kv_bytes_per_token");
}

void HardwareSpec::validate() const {
  positive(peak_flops, "hardware.peak_flops");
  positive(hbm_bandwidth, "hardware.hbm_bandwidth");
  positive(intra_node_bw, "hardware.intra_node_bw");
  positive(inter_node_bw, "hardware.inter_node_bw");
  nonneg(msg_fixed_latency, "hardware.msg_fixed_latency");
  nonneg(kernel_launch_overhead, "hardware.kernel_launch_overhead");
  nonneg(t_fixed, "hardware.calibration.t_fixed");
  if (!(b_sat >= 1)) throw ValidationError("hardware.calibration.b_sat must be >= 1");
  nonneg(c_compute, "hardware.calibration.c_compute");
  nonneg(w_attn, "hardware.calibration.w_attn");
}

void ClusterLayout::validate() const {
  positive(attn_nodes, "cluster.attn_nodes");
  positive(attn_instances_per_node, "cluster.attn_instances_per_node");
  positive(moe_nodes, "cluster.moe_nodes");
  positive(moe_instances_per_node, "cluster.moe_instances_per_node");
  positive(slots_per_instance, "cluster.slots_per_instance");
}

void SloSpec::validate() const {
  positive(tpot_target, "slo.tpot_target");
  if (!(attainment_target > 0 && attainment_target <= 1))
    throw ValidationError("slo.attainment_target must be in (0, 1]");
}

void WorkloadSpec::validate() const {
  if (kind != "gaussian" && kind != "uniform")
    throw ValidationError("workload.kind must be 'gaussian' or 'uniform'");
  positive(sigma, "workload.sigma");
  if (!(mean_input_len >= 1)) throw ValidationError("workload.mean_input_len must be >= 1");
  if (!(mean_output_len >= 1)) throw ValidationError("workload.mean_output_len must be >= 1");
}

void ScalingSpec::validate() const {
  positive(decision_interval, "scaling.decision_interval");
  if (search_radius < 0) throw ValidationError("scaling.search_radius must be >= 0");
  if (!(scaledown_utilization > 0 && scaledown_utilization < 1))
    throw ValidationError("scaling.scaledown_utilization must be in (0, 1)");
  positive(stats_window, "scaling.stats_window");
  if (!(reeval_tolerance >= 0 && reeval_tolerance < 1))
    throw ValidationError("scaling.reeval_tolerance must be in [0, 1)");
  if (case_node_threshold < 1)
    throw ValidationError("scaling.case_node_threshold must be >= 1");
}

void Config::validate() const {
  model.validate();
  hardware.validate();
  cluster.validate();
  slo.validate();
  workload.validate();
  scaling.validate();
  // A replica map needs one slot per expert before any redundancy.
  if (static_cast<long long>(cluster.total_slots()) < model.num_experts_per_layer)
    throw ValidationError(
        "cluster.slots_per_instance * moe instances must cover model.num_experts_per_layer");
}

Config parse_config(std::istream& in) {
  Config c;
  std::string section;
  std::string raw;
  int line = 0;
  // Double assignment guard for the t_launch alias.
  bool saw_launch_hw = false, saw_launch_cal = false;

  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    size_t cut = s.find_first_of("#;");
    if (cut != std::string::npos) s = s.substr(0, cut);
    s = trim(s);
    if (s.empty()) continue;

    if (s.front() == '[') {
      if (s.back() != ']') bad_line(line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "model" && section != "hardware" && section != "hardware.calibration" &&
          section != "cluster" && section != "slo" && section != "workload" &&
          section != "scaling")
        bad_line(line, "unknown section [" + section + "]");
      continue;
    }

    size_t eq = s.find('=');
    if (eq == std::string::npos) bad_line(line, "expected 'key = value'");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (key.empty()) bad_line(line, "empty key");
    if (val.empty()) bad_line(line, "key '" + key + "': empty value");
    if (section.empty()) bad_line(line, "key '" + key + "' outside any section");

    auto as_int = [&](int& out) { out = static_cast<int>(parse_int(val, line, key)); };
    auto as_dbl = [&](double& out) { out = parse_double(val, line, key); };

    if (section == "model") {
      ModelSpec& m = c.model;
      if (key == "num_layers") as_int(m.num_layers);
      else if (key == "num_experts_per_layer") as_int(m.num_experts_per_layer);
      else if (key == "top_k") as_int(m.top_k);
      else if (key == "hidden_dim") as_int(m.hidden_dim);
      else if (key == "expert_dim") as_int(m.expert_dim);
      else if (key == "bytes_per_param") as_int(m.bytes_per_param);
      else if (key == "kv_bytes_per_token") as_dbl(m.kv_bytes_per_token);
      else bad_line(line, "unknown key '" + key + "' in [model]");
    } else if (section == "hardware") {
      HardwareSpec& h = c.hardware;
      if (key == "peak_flops") as_dbl(h.peak_flops);
      else if (key == "hbm_bandwidth") as_dbl(h.hbm_bandwidth);
      else if (key == "intra_node_bw") as_dbl(h.intra_node_bw);
      else if (key == "inter_node_bw") as_dbl(h.inter_node_bw);
      else if (key == "msg_fixed_latency") as_dbl(h.msg_fixed_latency);
      else if (key == "kernel_launch_overhead") {
        as_dbl(h.kernel_launch_overhead);
        saw_launch_hw = true;
      } else bad_line(line, "unknown key '" + key + "' in [hardware]");
    } else if (section == "hardware.calibration") {
      HardwareSpec& h = c.hardware;
      if (key == "t_fixed") as_dbl(h.t_fixed);
      else if (key == "b_sat") as_dbl(h.b_sat);
      else if (key == "c_compute") as_dbl(h.c_compute);
      else if (key == "w_attn") as_dbl(h.w_attn);
      else if (key == "t_launch") {
        as_dbl(h.kernel_launch_overhead);
        saw_launch_cal = true;
      } else bad_line(line, "unknown key '" + key + "' in [hardware.calibration]");
    } else if (section == "cluster") {
      ClusterLayout& k = c.cluster;
      if (key == "attn_nodes") as_int(k.attn_nodes);
      else if (key == "attn_instances_per_node") as_int(k.attn_instances_per_node);
      else if (key == "moe_nodes") as_int(k.moe_nodes);
      else if (key == "moe_instances_per_node") as_int(k.moe_instances_per_node);
      else if (key == "slots_per_instance") as_int(k.slots_per_instance);
      else bad_line(line, "unknown key '" + key + "' in [cluster]");
    } else if (section == "slo") {
      if (key == "tpot_target") as_dbl(c.slo.tpot_target);
      else if (key == "attainment_target") as_dbl(c.slo.attainment_target);
      else bad_line(line, "unknown key '" + key + "' in [slo]");
    } else if (section == "workload") {
      WorkloadSpec& w = c.workload;
      if (key == "kind") w.kind = val;
      else if (key == "sigma") as_dbl(w.sigma);
      else if (key == "cover_all") w.cover_all = parse_bool(val, line, key);
      else if (key == "seed") w.seed = parse_u64(val, line, key);
      else if (key == "mean_input_len") as_dbl(w.mean_input_len);
      else if (key == "mean_output_len") as_dbl(w.mean_output_len);
      else bad_line(line, "unknown key '" + key + "' in [workload]");
    } else if (section == "scaling") {
      ScalingSpec& g = c.scaling;
      if (key == "decision_interval") as_dbl(g.decision_interval);
      else if (key == "search_radius") as_int(g.search_radius);
      else if (key == "scaledown_utilization") as_dbl(g.scaledown_utilization);
      else if (key == "stats_window") as_int(g.stats_window);
      else if (key == "shared_replica_map") g.shared_replica_map = parse_bool(val, line, key);
      else if (key == "reeval_tolerance") as_dbl(g.reeval_tolerance);
      else if (key == "case_node_threshold") as_int(g.case_node_threshold);
      else bad_line(line, "unknown key '" + key + "' in [scaling]");
    }
  }

  if (saw_launch_hw && saw_launch_cal)
    throw ValidationError(
        "hardware.kernel_launch_overhead and hardware.calibration.t_launch both set");
  c.validate();
  return c;
}

Config parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open config file: " + path);
  return parse_config(f);
}

namespace {

std::string num(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace

std::string serialize_config(const Config& c) {
  std::ostringstream o;
  o << "[model]\n"
    << "num_layers = " << c.model.num_layers << "\n"
    << "num_experts_per_layer = " << c.model.num_experts_per_layer << "\n"
    << "top_k = " << c.model.top_k << "\n"
    << "hidden_dim = " << c.model.hidden_dim << "\n"
    << "expert_dim = " << c.model.expert_dim << "\n"
    << "bytes_per_param = " << c.model.bytes_per_param << "\n"
    << "kv_bytes_per_token = " << num(c.model.kv_bytes_per_token) << "\n"
    << "\n[hardware]\n"
    << "peak_flops = " << num(c.hardware.peak_flops) << "\n"
    << "hbm_bandwidth = " << num(c.hardware.hbm_bandwidth) << "\n"
    << "intra_node_bw = " << num(c.hardware.intra_node_bw) << "\n"
    << "inter_node_bw = " << num(c.hardware.inter_node_bw) << "\n"
    << "msg_fixed_latency = " << num(c.hardware.msg_fixed_latency) << "\n"
    << "kernel_launch_overhead = " << num(c.hardware.kernel_launch_overhead) << "\n"
    << "\n[hardware.calibration]\n"
    << "t_fixed = " << num(c.hardware.t_fixed) << "\n"
    << "b_sat = " << num(c.hardware.b_sat) << "\n"
    << "c_compute = " << num(c.hardware.c_compute) << "\n"
    << "w_attn = " << num(c.hardware.w_attn) << "\n"
    << "\n[cluster]\n"
    << "attn_nodes = " << c.cluster.attn_nodes << "\n"
    << "attn_instances_per_node = " << c.cluster.attn_instances_per_node << "\n"
    << "moe_nodes = " << c.cluster.moe_nodes << "\n"
    << "moe_instances_per_node = " << c.cluster.moe_instances_per_node << "\n"
    << "slots_per_instance = " << c.cluster.slots_per_instance << "\n"
    << "\n[slo]\n"
    << "tpot_target = " << num(c.slo.tpot_target) << "\n"
    << "attainment_target = " << num(c.slo.attainment_target) << "\n"
    << "\n[workload]\n"
    << "kind = " << c.workload.kind << "\n"
    << "sigma = " << num(c.workload.sigma) << "\n"
    << "cover_all = " << (c.workload.cover_all ? "true" : "false") << "\n"
    << "seed = " << c.workload.seed << "\n"
    << "mean_input_len = " << num(c.workload.mean_input_len) << "\n"
    << "mean_output_len = " << num(c.workload.mean_output_len) << "\n"
    << "\n[scaling]\n"
    << "decision_interval = " << num(c.scaling.decision_interval) << "\n"
    << "search_radius = " << c.scaling.search_radius << "\n"
    << "scaledown_utilization = " << num(c.scaling.scaledown_utilization) << "\n"
    << "stats_window = " << c.scaling.stats_window << "\n"
    << "shared_replica_map = " << (c.scaling.shared_replica_map ? "true" : "false") << "\n"
    << "reeval_tolerance = " << num(c.scaling.reeval_tolerance) << "\n"
    << "case_node_threshold = " << c.scaling.case_node_threshold << "\n";
  return o.str();
}

bool operator==(const ModelSpec& a, const ModelSpec& b) {
  return a.num_layers == b.num_layers &&
         a.num_experts_per_layer == b.num_experts_per_layer && a.top_k == b.top_k &&
         a.hidden_dim == b.hidden_dim && a.expert_dim == b.expert_dim &&
         a.bytes_per_param == b.bytes_per_param &&
         a.kv_bytes_per_token == b.kv_bytes_per_token;
}
bool operator==(const HardwareSpec& a, const HardwareSpec& b) {
  return a.peak_flops == b.peak_flops && a.hbm_bandwidth == b.hbm_bandwidth &&
         a.intra_node_bw == b.intra_node_bw && a.inter_node_bw == b.inter_node_bw &&
         a.msg_fixed_latency == b.msg_fixed_latency &&
         a.kernel_launch_overhead == b.kernel_launch_overhead && a.t_fixed == b.t_fixed &&
         a.b_sat == b.b_sat && a.c_compute == b.c_compute && a.w_attn == b.w_attn;
}
bool operator==(const ClusterLayout& a, const ClusterLayout& b) {
  return a.attn_nodes == b.attn_nodes &&
         a.attn_instances_per_node == b.attn_instances_per_node &&
         a.moe_nodes == b.moe_nodes &&
         a.moe_instances_per_node == b.moe_instances_per_node &&
         a.slots_per_instance == b.slots_per_instance;
}
bool operator==(const SloSpec& a, const SloSpec& b) {
  return a.tpot_target == b.tpot_target && a.attainment_target == b.attainment_target;
}
bool operator==(const WorkloadSpec& a, const WorkloadSpec& b) {
  return a.kind == b.kind && a.sigma == b.sigma && a.cover_all == b.cover_all &&
         a.seed == b.seed && a.mean_input_len == b.mean_input_len &&
         a.mean_output_len == b.mean_output_len;
}
bool operator==(const ScalingSpec& a, const ScalingSpec& b) {
  return a.decision_interval == b.decision_interval && a.search_radius == b.search_radius &&
         a.scaledown_utilization == b.scaledown_utilization &&
         a.stats_window == b.stats_window && a.shared_replica_map == b.shared_replica_map &&
         a.reeval_tolerance == b.reeval_tolerance &&
         a.case_node_threshold == b.case_node_threshold;
}
bool operator==(const Config& a, const Config& b) {
  return a.model == b.model && a.hardware == b.hardware && a.cluster == b.cluster &&
         a.slo == b.slo && a.workload == b.workload && a.scaling == b.scaling;
}

}  // namespace moesim
