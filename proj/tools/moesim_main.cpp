#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "moesim/scenarios.hpp"

namespace fs = std::filesystem;
using namespace moesim;

namespace {

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return in;
}

// Writes to the given path, or stdout when empty.
void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << text;
}

Config load_config(const std::string& path, uint64_t seed, bool seed_set) {
  Config cfg;
  if (!path.empty()) cfg = parse_config_file(path);
  if (seed_set) cfg.workload.seed = seed;
  cfg.validate();
  return cfg;
}

SimPolicies policies_from(const std::string& comm, const std::string& sched,
                          const std::string& place) {
  SimPolicies p;
  p.comm = comm == "strawman" ? CommPolicy::strawman_only : CommPolicy::two_phase;
  p.sched = sched == "random" ? SchedPolicy::random_replica : SchedPolicy::activation_balanced;
  p.place = place == "roundrobin" ? PlacePolicy::uniform_round_robin
                                  : PlacePolicy::activation_aware;
  return p;
}

int run(int argc, char** argv) {
  CLI::App app{"MoE serving simulator and scheduling toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "configuration file");
  app.add_option("--out", out_path, "output file (default stdout)");
  app.add_option("--seed", seed, "override workload seed")->each([&](const std::string&) {
    seed_set = true;
  });

  auto* c_sched = app.add_subcommand("schedule", "assign a routing batch to expert replicas");
  std::string batch_path, replica_path, sched_kind = "aebs";
  c_sched->add_option("--batch", batch_path, "activation batch file")->required();
  c_sched->add_option("--replicas", replica_path, "replica map file")->required();
  c_sched->add_option("--sched", sched_kind, "aebs|random")
      ->check(CLI::IsMember({"aebs", "random"}));

  auto* c_place = app.add_subcommand("place", "allocate and place expert replicas");
  std::string stats_path, place_kind = "activation-aware";
  c_place->add_option("--stats", stats_path, "activation stats file")->required();
  c_place->add_option("--place", place_kind, "roundrobin|activation-aware")
      ->check(CLI::IsMember({"roundrobin", "activation-aware"}));

  auto* c_plan = app.add_subcommand("plan", "price a dispatch communication plan");
  long long plan_tokens = 256;
  std::string scheme = "two-phase";
  c_plan->add_option("--tokens", plan_tokens, "tokens in the step");
  c_plan->add_option("--scheme", scheme, "strawman|bulk|one-to-one|two-phase|auto")
      ->check(CLI::IsMember({"strawman", "bulk", "one-to-one", "two-phase", "auto"}));

  auto* c_sim = app.add_subcommand("simulate", "run a trace or a named scenario");
  std::string trace_path, scenario, policy = "static";
  std::string f_comm = "two-phase", f_sched = "aebs", f_place = "activation-aware";
  c_sim->add_option("--trace", trace_path, "request trace file");
  c_sim->add_option("--scenario", scenario, "named fixture");
  c_sim->add_option("--policy", policy, "static|autoscale|tiers")
      ->check(CLI::IsMember({"static", "autoscale", "tiers"}));
  c_sim->add_option("--comm", f_comm, "strawman|two-phase")
      ->check(CLI::IsMember({"strawman", "two-phase"}));
  c_sim->add_option("--sched", f_sched, "random|aebs")
      ->check(CLI::IsMember({"random", "aebs"}));
  c_sim->add_option("--place", f_place, "roundrobin|activation-aware")
      ->check(CLI::IsMember({"roundrobin", "activation-aware"}));

  auto* c_sweep = app.add_subcommand("sweep", "run scenario sweeps, one json per scenario");
  std::vector<std::string> sweep_names;
  c_sweep->add_option("--scenario", sweep_names, "scenarios to run (default: all)");

  auto* c_report = app.add_subcommand("report", "tabulate metrics files");
  std::vector<std::string> report_paths;
  c_report->add_option("files", report_paths, "metrics json files")->required();

  // global --config/--out/--seed may appear after the subcommand name
  for (CLI::App* sc : {c_sched, c_place, c_plan, c_sim, c_sweep, c_report}) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (c_sched->parsed()) {
    auto bin = open_input(batch_path);
    ActivationBatch batch = load_batch(bin);
    auto rin = open_input(replica_path);
    ReplicaMap map = load_replica_map(rin);
    Assignment asg = sched_kind == "random"
                         ? schedule_random(batch, map, seed_set ? seed : 42)
                         : schedule(batch, map);
    std::ostringstream os;
    dump_assignment(os, asg, batch);
    emit(out_path, os.str());
    return 0;
  }

  if (c_place->parsed()) {
    Config cfg = load_config(config_path, seed, seed_set);
    auto sin = open_input(stats_path);
    ActivationStats stats = load_stats(sin);
    int n = cfg.cluster.moe_instances(), cap = cfg.cluster.slots_per_instance;
    Placement placed;
    if (place_kind == "roundrobin") {
      placed = place_round_robin(stats.num_experts(), n, cap);
    } else {
      Allocation alloc =
          cap_allocation(allocate_replicas(stats.counts(), n * cap), stats.counts(), n);
      placed = place_replicas(alloc, stats, n, cap);
    }
    std::ostringstream os;
    dump_placement(os, placed);
    emit(out_path, os.str());
    return 0;
  }

  if (c_plan->parsed()) {
    Config cfg = load_config(config_path, seed, seed_set);
    double token_bytes = static_cast<double>(cfg.model.hidden_dim) * cfg.model.bytes_per_param;
    StepTraffic t = StepTraffic::make(cfg.cluster.attn_nodes, cfg.cluster.attn_instances_per_node,
                                      cfg.cluster.moe_nodes, cfg.cluster.moe_instances_per_node,
                                      plan_tokens, token_bytes);
    CommPlan plan;
    if (scheme == "strawman")
      plan = strawman_plan(t);
    else if (scheme == "bulk")
      plan = bulk_pairwise_plan(t);
    else if (scheme == "one-to-one")
      plan = one_to_one_plan(t);
    else if (scheme == "auto")
      plan = make_plan(t, select_scheme(t, cfg.hardware));
    else
      plan = two_phase_plan(t, cfg.scaling.case_node_threshold);
    std::ostringstream os;
    dump_plan(os, plan, cfg.hardware);
    emit(out_path, os.str());
    return 0;
  }

  if (c_sim->parsed()) {
    if (!scenario.empty()) {
      emit(out_path, run_scenario(scenario).dump(2) + "\n");
      return 0;
    }
    if (trace_path.empty()) throw ValidationError("simulate needs --trace or --scenario");
    Config cfg = load_config(config_path, seed, seed_set);
    auto tin = open_input(trace_path);
    RequestTrace trace = load_trace(tin);
    DecodeEngine eng(cfg, policies_from(f_comm, f_sched, f_place), cfg.workload.seed);
    eng.warmup(32, 64);
    AutoscalePolicy pol = policy == "autoscale" ? AutoscalePolicy::fine_grained
                          : policy == "tiers"   ? AutoscalePolicy::monolithic_tiers
                                                : AutoscalePolicy::off;
    SimReport rep = run_trace(eng, trace, cfg.slo, cfg.scaling, pol);
    emit(out_path, report_to_json(rep).dump(2) + "\n");
    return 0;
  }

  if (c_sweep->parsed()) {
    std::vector<std::string> names = sweep_names.empty() ? scenario_names() : sweep_names;
    fs::path dir = out_path.empty() ? fs::path(".") : fs::path(out_path);
    fs::create_directories(dir);
    // Independent fixtures with disjoint output files, fanned out over a
    // worker pool sized to the machine. Workers are native threads rather
    // than an outer parallel region: nesting the kernels' regions would
    // respawn their teams on every step instead of reusing the pool.
    size_t workers = std::min(names.size(),
                              static_cast<size_t>(std::max(1u, std::thread::hardware_concurrency())));
    std::atomic<size_t> next{0};
    std::mutex mu;
    std::exception_ptr first_error;
    auto worker = [&] {
      for (size_t i = next.fetch_add(1); i < names.size(); i = next.fetch_add(1)) {
        try {
          nlohmann::json j = run_scenario(names[i]);
          fs::path file = dir / (names[i] + ".json");
          std::ofstream out(file);
          if (!out) throw std::runtime_error("cannot write into " + dir.string());
          out << j.dump(2) << "\n";
          std::lock_guard<std::mutex> lk(mu);
          std::cout << names[i] << " -> " << file.string() << "\n";
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return 0;
  }

  if (c_report->parsed()) {
    struct Line {
      std::string name;
      double mean = 0, p99 = 0, attain = 0, per_gpu = 0, hours = 0;
    };
    std::vector<Line> lines;
    std::ostringstream tables;
    for (const std::string& p : report_paths) {
      auto in = open_input(p);
      nlohmann::json j = nlohmann::json::parse(in);
      // scenario files carry nested reports or row tables; metrics are flat
      std::vector<std::pair<std::string, nlohmann::json>> picks;
      if (j.contains("mean_tpot"))
        picks.emplace_back(fs::path(p).stem().string(), j);
      else
        for (auto& [key, val] : j.items())
          if (val.is_object() && val.contains("mean_tpot")) picks.emplace_back(key, val);
      if (picks.empty() && j.contains("rows") && j["rows"].is_array() && !j["rows"].empty()) {
        tables << "# " << j.value("name", fs::path(p).stem().string()) << "\n";
        const auto& first = j["rows"][0];
        std::string sep;
        for (auto& [col, _] : first.items()) tables << sep << col, sep = "\t";
        tables << "\n";
        for (const auto& row : j["rows"]) {
          sep.clear();
          for (auto& [col, val] : row.items()) {
            tables << sep << (val.is_string() ? val.get<std::string>() : val.dump());
            sep = "\t";
          }
          tables << "\n";
        }
        tables << "\n";
        continue;
      }
      if (picks.empty()) throw ValidationError(p + ": no metrics found");
      for (auto& [name, v] : picks)
        lines.push_back({name, v.value("mean_tpot", 0.0), v.value("p99_tpot", 0.0),
                         v.value("attainment", 0.0), v.value("per_gpu_throughput", 0.0),
                         v.value("gpu_hours", 0.0)});
    }
    std::ostringstream os;
    os << tables.str();
    if (!lines.empty())
      os << "run\tmean_tpot_s\tp99_tpot_s\tattainment\ttokens_per_gpu_s\tgpu_hours\n";
    char buf[256];
    for (const Line& l : lines) {
      snprintf(buf, sizeof buf, "%s\t%.6g\t%.6g\t%.4f\t%.6g\t%.6g\n", l.name.c_str(), l.mean,
               l.p99, l.attain, l.per_gpu, l.hours);
      os << buf;
    }
    if (lines.size() == 2 && lines[1].mean > 0) {
      snprintf(buf, sizeof buf, "ratio\t%.4f\t%.4f\t%+.4f\t%.4f\t%.4f\n",
               lines[0].mean / lines[1].mean, lines[0].p99 / lines[1].p99,
               lines[0].attain - lines[1].attain,
               lines[1].per_gpu > 0 ? lines[0].per_gpu / lines[1].per_gpu : 0.0,
               lines[1].hours > 0 ? lines[0].hours / lines[1].hours : 0.0);
      os << buf;
    }
    emit(out_path, os.str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
