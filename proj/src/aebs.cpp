#include "moesim/aebs.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <limits>
#include <sstream>

#include "moesim/rng.hpp"

namespace moesim {

namespace {

// Worker team for the scheduling kernel. Fixed so the kernel's cost profile
// is launch-dominated and flat in batch size, like the device kernel it
// stands in for; results are width-independent.
constexpr int kKernelTeam = 4;

[[noreturn]] void unknown_expert(int e) {
  throw ValidationError("unknown-expert: batch references expert " + std::to_string(e) +
                        " with no replica in the map");
}

}  // namespace

void ActivationBatch::validate(int num_experts) const {
  if (num_tokens < 0 || top_k <= 0)
    throw ValidationError("batch: num_tokens must be >= 0 and top_k >= 1");
  if (experts.size() != static_cast<size_t>(slots()))
    throw ValidationError("batch: expert list length != num_tokens * top_k");
  for (int t = 0; t < num_tokens; ++t) {
    for (int j = 0; j < top_k; ++j) {
      int32_t e = at(t, j);
      if (e < 0 || e >= num_experts)
        throw ValidationError("batch: token " + std::to_string(t) + " names expert " +
                              std::to_string(e) + " outside [0, " +
                              std::to_string(num_experts) + ")");
      for (int i = 0; i < j; ++i)
        if (at(t, i) == e)
          throw ValidationError("batch: token " + std::to_string(t) +
                                " lists expert " + std::to_string(e) + " twice");
    }
  }
}

void ReplicaMap::validate() const {
  if (num_experts <= 0 || num_instances <= 0 || slots_per_instance <= 0)
    throw ValidationError("replica map: dimensions must be positive");
  if (hosts.size() != static_cast<size_t>(num_experts) || replica_ids.size() != hosts.size())
    throw ValidationError("replica map: per-expert tables sized wrong");
  std::vector<int> used(num_instances, 0);
  for (int e = 0; e < num_experts; ++e) {
    if (hosts[e].empty())
      throw ValidationError("replica map: expert " + std::to_string(e) + " has no replica");
    if (replica_ids[e].size() != hosts[e].size())
      throw ValidationError("replica map: expert " + std::to_string(e) +
                            " replica id list sized wrong");
    for (size_t i = 0; i < hosts[e].size(); ++i) {
      int g = hosts[e][i];
      if (g < 0 || g >= num_instances)
        throw ValidationError("replica map: expert " + std::to_string(e) +
                              " hosted on invalid instance " + std::to_string(g));
      if (i > 0 && hosts[e][i - 1] >= g)
        throw ValidationError("replica map: expert " + std::to_string(e) +
                              " host list not strictly ascending");
      ++used[g];
    }
  }
  for (int g = 0; g < num_instances; ++g)
    if (used[g] > slots_per_instance)
      throw ValidationError("replica map: instance " + std::to_string(g) + " holds " +
                            std::to_string(used[g]) + " replicas, capacity " +
                            std::to_string(slots_per_instance));
}

int Assignment::max_load() const {
  int m = 0;
  for (int32_t l : load) m = std::max(m, static_cast<int>(l));
  return m;
}

namespace {

// Shared tail of every scheduling policy: given the per-expert instance
// choice, fill slot tables and per-instance totals.
Assignment finish_assignment(const ActivationBatch& batch, const ReplicaMap& map,
                             const std::vector<int32_t>& choice_pos,
                             const std::vector<long long>& expert_tokens) {
  const int E = map.num_experts;
  const int N = map.num_instances;
  Assignment out;
  out.instance.resize(batch.slots());
  out.replica.resize(batch.slots());
  out.expert_instance.assign(E, -1);
  out.load.assign(N, 0);
  out.routed_tokens.assign(N, 0);

  std::vector<int32_t> slot_of_expert(E, -1);
  for (int e = 0; e < E; ++e) {
    if (choice_pos[e] < 0) continue;
    int g = map.hosts[e][choice_pos[e]];
    out.expert_instance[e] = g;
    slot_of_expert[e] = map.replica_ids[e][choice_pos[e]];
    out.load[g] += 1;
    out.routed_tokens[g] += expert_tokens[e];
  }

  const int32_t* experts = batch.experts.data();
  int32_t* inst = out.instance.data();
  int32_t* repl = out.replica.data();
  const long long S = batch.slots();
#pragma omp parallel for schedule(static) num_threads(kKernelTeam)
  for (long long s = 0; s < S; ++s) {
    int e = experts[s];
    inst[s] = out.expert_instance[e];
    repl[s] = slot_of_expert[e];
  }
  return out;
}

// Phase 1: per-expert activation histogram, parallel over token slots.
// Also flags out-of-range or replica-less experts.
void collect_activated(const ActivationBatch& batch, const ReplicaMap& map,
                       std::vector<long long>& expert_tokens,
                       std::vector<int32_t>& activated) {
  const int E = map.num_experts;
  expert_tokens.assign(E, 0);
  const long long S = batch.slots();
  const int32_t* experts = batch.experts.data();
  long long* counts = expert_tokens.data();
  std::atomic<int32_t> bad{std::numeric_limits<int32_t>::max()};

#pragma omp parallel num_threads(kKernelTeam)
  {
    int nt = omp_get_num_threads();
    int id = omp_get_thread_num();
    int32_t my_bad = std::numeric_limits<int32_t>::max();
    if (nt == 1) {
      for (long long s = 0; s < S; ++s) {
        int32_t e = experts[s];
        if (e < 0 || e >= E) my_bad = std::min(my_bad, e);
        else ++counts[e];
      }
    } else {
      for (long long s = id; s < S; s += nt) {
        int32_t e = experts[s];
        if (e < 0 || e >= E) my_bad = std::min(my_bad, e);
        else std::atomic_ref<long long>(counts[e]).fetch_add(1, std::memory_order_relaxed);
      }
    }
    if (my_bad != std::numeric_limits<int32_t>::max()) {
      int32_t cur = bad.load(std::memory_order_relaxed);
      while (my_bad < cur && !bad.compare_exchange_weak(cur, my_bad)) {
      }
    }
  }
  if (bad.load() != std::numeric_limits<int32_t>::max()) unknown_expert(bad.load());

  activated.clear();
  for (int e = 0; e < E; ++e) {
    if (expert_tokens[e] == 0) continue;
    if (map.hosts[e].empty()) unknown_expert(e);
    activated.push_back(e);
  }
}

}  // namespace

Assignment schedule(const ActivationBatch& batch, const ReplicaMap& map) {
  const int N = map.num_instances;
  std::vector<long long> expert_tokens;
  std::vector<int32_t> activated;
  collect_activated(batch, map, expert_tokens, activated);

  // Phase 2 is inherently sequential but touches only activated experts.
  std::vector<int32_t> load(N, 0);
  std::vector<int32_t> choice_pos(map.num_experts, -1);
  for (int32_t e : activated) {
    if (map.hosts[e].size() != 1) continue;
    choice_pos[e] = 0;
    ++load[map.hosts[e][0]];
  }
  for (int32_t e : activated) {
    const auto& hs = map.hosts[e];
    if (hs.size() == 1) continue;
    int best = 0;
    for (size_t i = 1; i < hs.size(); ++i)
      if (load[hs[i]] < load[hs[best]]) best = static_cast<int>(i);
    choice_pos[e] = best;
    ++load[hs[best]];
  }

  return finish_assignment(batch, map, choice_pos, expert_tokens);
}

Assignment schedule_reference(const ActivationBatch& batch, const ReplicaMap& map) {
  const int E = map.num_experts;
  const int N = map.num_instances;

  std::vector<long long> tokens_per_expert(E, 0);
  for (long long s = 0; s < batch.slots(); ++s) {
    int32_t e = batch.experts[s];
    if (e < 0 || e >= E) unknown_expert(e);
    ++tokens_per_expert[e];
  }

  std::vector<int32_t> load(N, 0);
  std::vector<int32_t> chosen(E, -1);
  for (int e = 0; e < E; ++e) {
    if (tokens_per_expert[e] == 0) continue;
    if (map.hosts[e].empty()) unknown_expert(e);
    if (map.hosts[e].size() == 1) {
      chosen[e] = map.hosts[e][0];
      ++load[chosen[e]];
    }
  }
  for (int e = 0; e < E; ++e) {
    if (tokens_per_expert[e] == 0 || map.hosts[e].size() <= 1) continue;
    int pick = map.hosts[e][0];
    for (int32_t g : map.hosts[e])
      if (load[g] < load[pick]) pick = g;
    chosen[e] = pick;
    ++load[pick];
  }

  Assignment out;
  out.instance.resize(batch.slots());
  out.replica.resize(batch.slots());
  out.expert_instance = chosen;
  out.load.assign(N, 0);
  out.routed_tokens.assign(N, 0);
  for (int e = 0; e < E; ++e) {
    if (chosen[e] < 0) continue;
    ++out.load[chosen[e]];
    out.routed_tokens[chosen[e]] += tokens_per_expert[e];
  }
  for (long long s = 0; s < batch.slots(); ++s) {
    int32_t e = batch.experts[s];
    int g = chosen[e];
    auto it = std::lower_bound(map.hosts[e].begin(), map.hosts[e].end(), g);
    out.instance[s] = g;
    out.replica[s] = map.replica_ids[e][it - map.hosts[e].begin()];
  }
  return out;
}

Assignment schedule_random(const ActivationBatch& batch, const ReplicaMap& map, uint64_t seed) {
  std::vector<long long> expert_tokens;
  std::vector<int32_t> activated;
  collect_activated(batch, map, expert_tokens, activated);

  Rng rng(derive_seed(seed, "sched/random"));
  std::vector<int32_t> choice_pos(map.num_experts, -1);
  for (int32_t e : activated) {
    size_t r = map.hosts[e].size();
    choice_pos[e] = r == 1 ? 0 : static_cast<int32_t>(rng.next_below(r));
  }
  return finish_assignment(batch, map, choice_pos, expert_tokens);
}

Assignment brute_force_schedule(const ActivationBatch& batch, const ReplicaMap& map) {
  const int N = map.num_instances;
  std::vector<long long> expert_tokens;
  std::vector<int32_t> activated;
  collect_activated(batch, map, expert_tokens, activated);

  if (activated.size() > 20)
    throw ValidationError("brute_force_schedule: " + std::to_string(activated.size()) +
                          " activated experts exceeds the enumeration guard (20)");
  double combos = 1;
  for (int32_t e : activated) {
    combos *= static_cast<double>(map.hosts[e].size());
    if (combos > 1e6)
      throw ValidationError("brute_force_schedule: choice space exceeds 1e6 combinations");
  }

  std::vector<int32_t> base_load(N, 0);
  std::vector<int32_t> multi;
  for (int32_t e : activated) {
    if (map.hosts[e].size() == 1) ++base_load[map.hosts[e][0]];
    else multi.push_back(e);
  }

  // Odometer over multi-replica choices, ascending expert order, so the
  // first minimum found is the lexicographically smallest choice vector.
  std::vector<int32_t> pos(multi.size(), 0);
  std::vector<int32_t> best_pos;
  int best = std::numeric_limits<int32_t>::max();
  std::vector<int32_t> load(N);
  for (;;) {
    load = base_load;
    for (size_t i = 0; i < multi.size(); ++i) ++load[map.hosts[multi[i]][pos[i]]];
    int peak = 0;
    for (int32_t l : load) peak = std::max(peak, static_cast<int>(l));
    if (peak < best) {
      best = peak;
      best_pos = pos;
    }
    size_t i = multi.size();
    while (i > 0) {
      --i;
      if (++pos[i] < static_cast<int32_t>(map.hosts[multi[i]].size())) break;
      pos[i] = 0;
      if (i == 0) {
        std::vector<int32_t> choice_pos(map.num_experts, -1);
        for (int32_t e : activated)
          if (map.hosts[e].size() == 1) choice_pos[e] = 0;
        for (size_t j = 0; j < multi.size(); ++j) choice_pos[multi[j]] = best_pos[j];
        return finish_assignment(batch, map, choice_pos, expert_tokens);
      }
    }
    if (multi.empty()) {
      std::vector<int32_t> choice_pos(map.num_experts, -1);
      for (int32_t e : activated) choice_pos[e] = 0;
      return finish_assignment(batch, map, choice_pos, expert_tokens);
    }
  }
}

// --- text formats ---------------------------------------------------------

namespace {

std::string strip(const std::string& s) {
  size_t cut = s.find('#');
  std::string t = cut == std::string::npos ? s : s.substr(0, cut);
  size_t a = t.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = t.find_last_not_of(" \t\r");
  return t.substr(a, b - a + 1);
}

}  // namespace

ActivationBatch load_batch(std::istream& in) {
  ActivationBatch b;
  std::string raw;
  int line = 0;
  int max_expert = -1;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = strip(raw);
    if (s.empty()) continue;
    std::istringstream row(s);
    std::vector<int32_t> ids;
    long long v;
    while (row >> v) ids.push_back(static_cast<int32_t>(v));
    if (!row.eof())
      throw ParseError("batch line " + std::to_string(line) + ": expected integers");
    if (b.top_k == 0) b.top_k = static_cast<int>(ids.size());
    if (ids.size() != static_cast<size_t>(b.top_k))
      throw ParseError("batch line " + std::to_string(line) + ": expected " +
                       std::to_string(b.top_k) + " experts, got " +
                       std::to_string(ids.size()));
    for (int32_t e : ids) max_expert = std::max(max_expert, static_cast<int>(e));
    b.experts.insert(b.experts.end(), ids.begin(), ids.end());
    ++b.num_tokens;
  }
  if (b.num_tokens == 0) throw ParseError("batch file: no tokens");
  b.validate(max_expert + 1);
  return b;
}

ActivationBatch load_batch_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open batch file: " + path);
  return load_batch(f);
}

void dump_batch(std::ostream& out, const ActivationBatch& b) {
  out << "# activation batch: tokens=" << b.num_tokens << " top_k=" << b.top_k << "\n";
  for (int t = 0; t < b.num_tokens; ++t) {
    for (int j = 0; j < b.top_k; ++j) out << (j ? " " : "") << b.at(t, j);
    out << "\n";
  }
}

ReplicaMap load_replica_map(std::istream& in) {
  ReplicaMap m;
  std::string raw;
  int line = 0;
  std::vector<std::pair<int, std::vector<int32_t>>> rows;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = strip(raw);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    size_t colon = s.find(':');
    if (eq != std::string::npos && (colon == std::string::npos || eq < colon)) {
      std::string key = strip(s.substr(0, eq));
      std::string val = strip(s.substr(eq + 1));
      char* end = nullptr;
      long long v = std::strtoll(val.c_str(), &end, 10);
      if (end == val.c_str() || *end != '\0')
        throw ParseError("replica map line " + std::to_string(line) + ": bad value for '" +
                         key + "'");
      if (key == "instances") m.num_instances = static_cast<int>(v);
      else if (key == "slots_per_instance") m.slots_per_instance = static_cast<int>(v);
      else
        throw ParseError("replica map line " + std::to_string(line) + ": unknown key '" +
                         key + "'");
      continue;
    }
    if (colon == std::string::npos)
      throw ParseError("replica map line " + std::to_string(line) +
                       ": expected 'expert: instance...'");
    std::istringstream head(s.substr(0, colon));
    int e;
    if (!(head >> e) || !(head >> std::ws).eof())
      throw ParseError("replica map line " + std::to_string(line) + ": bad expert id");
    std::istringstream row(s.substr(colon + 1));
    std::vector<int32_t> hs;
    long long g;
    while (row >> g) hs.push_back(static_cast<int32_t>(g));
    if (!row.eof() || hs.empty())
      throw ParseError("replica map line " + std::to_string(line) +
                       ": expected instance ids after ':'");
    rows.emplace_back(e, std::move(hs));
  }
  if (m.num_instances <= 0 || m.slots_per_instance <= 0)
    throw ParseError("replica map: missing instances/slots_per_instance header");
  m.num_experts = static_cast<int>(rows.size());
  m.hosts.assign(m.num_experts, {});
  std::vector<bool> seen(m.num_experts, false);
  for (auto& [e, hs] : rows) {
    if (e < 0 || e >= m.num_experts || seen[e])
      throw ParseError("replica map: expert ids must cover 0.." +
                       std::to_string(m.num_experts - 1) + " exactly once (got " +
                       std::to_string(e) + ")");
    seen[e] = true;
    std::sort(hs.begin(), hs.end());
    m.hosts[e] = std::move(hs);
  }
  // Physical slots dealt per instance in ascending expert order.
  m.replica_ids.assign(m.num_experts, {});
  std::vector<int32_t> next_slot(m.num_instances, 0);
  for (int e = 0; e < m.num_experts; ++e)
    for (int32_t g : m.hosts[e]) {
      if (g < 0 || g >= m.num_instances)
        throw ParseError("replica map: expert " + std::to_string(e) +
                         " placed on invalid instance " + std::to_string(g));
      m.replica_ids[e].push_back(g * m.slots_per_instance + next_slot[g]++);
    }
  m.validate();
  return m;
}

ReplicaMap load_replica_map_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open replica map file: " + path);
  return load_replica_map(f);
}

void dump_replica_map(std::ostream& out, const ReplicaMap& m) {
  out << "# replica map: experts=" << m.num_experts << "\n";
  out << "instances = " << m.num_instances << "\n";
  out << "slots_per_instance = " << m.slots_per_instance << "\n";
  for (int e = 0; e < m.num_experts; ++e) {
    out << e << ":";
    for (int32_t g : m.hosts[e]) out << " " << g;
    out << "\n";
  }
}

void dump_assignment(std::ostream& out, const Assignment& a, const ActivationBatch& b) {
  out << "# assignment: tokens=" << b.num_tokens << " top_k=" << b.top_k << "\n";
  out << "# per-token physical replica ids\n";
  for (int t = 0; t < b.num_tokens; ++t) {
    for (int j = 0; j < b.top_k; ++j)
      out << (j ? " " : "") << a.replica[static_cast<size_t>(t) * b.top_k + j];
    out << "\n";
  }
  out << "# instance activated_replicas routed_tokens\n";
  for (size_t g = 0; g < a.load.size(); ++g)
    out << "load " << g << " " << a.load[g] << " " << a.routed_tokens[g] << "\n";
}

}  // namespace moesim
