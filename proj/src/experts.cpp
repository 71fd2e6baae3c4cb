#include "moesim/experts.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace moesim {

ActivationStats::ActivationStats(int num_experts, int window_steps)
    : num_experts_(num_experts),
      window_(window_steps),
      counts_(num_experts, 0),
      coact_(static_cast<size_t>(num_experts) * num_experts, 0) {
  if (num_experts <= 0) throw ValidationError("stats: num_experts must be > 0");
  if (window_steps <= 0) throw ValidationError("stats: window must be > 0");
}

ActivationStats ActivationStats::from_totals(std::vector<long long> counts,
                                             std::vector<long long> coact) {
  ActivationStats s(static_cast<int>(counts.size()), 1);
  if (coact.size() != counts.size() * counts.size())
    throw ValidationError("stats: coactivation matrix sized wrong");
  s.counts_ = std::move(counts);
  s.coact_ = std::move(coact);
  return s;
}

void ActivationStats::record_step(const std::vector<int32_t>& activated) {
  for (size_t i = 0; i < activated.size(); ++i) {
    int32_t e = activated[i];
    if (e < 0 || e >= num_experts_)
      throw ValidationError("stats: activated expert " + std::to_string(e) + " out of range");
    if (i > 0 && activated[i - 1] >= e)
      throw ValidationError("stats: activated set must be ascending and distinct");
  }
  if (static_cast<int>(steps_.size()) == window_) {
    const std::vector<int32_t>& old = steps_.front();
    for (size_t i = 0; i < old.size(); ++i) {
      --counts_[old[i]];
      for (size_t j = i + 1; j < old.size(); ++j) {
        --coact_[static_cast<size_t>(old[i]) * num_experts_ + old[j]];
        --coact_[static_cast<size_t>(old[j]) * num_experts_ + old[i]];
      }
    }
    steps_.pop_front();
  }
  for (size_t i = 0; i < activated.size(); ++i) {
    ++counts_[activated[i]];
    for (size_t j = i + 1; j < activated.size(); ++j) {
      ++coact_[static_cast<size_t>(activated[i]) * num_experts_ + activated[j]];
      ++coact_[static_cast<size_t>(activated[j]) * num_experts_ + activated[i]];
    }
  }
  steps_.push_back(activated);
}

long long ActivationStats::coactivation(int i, int j) const {
  if (i == j) return 0;
  return coact_[static_cast<size_t>(i) * num_experts_ + j];
}

long long Allocation::total() const {
  return std::accumulate(replicas.begin(), replicas.end(), 0LL);
}

namespace {

// load(i) > load(j) as exact integer comparison: c_i/r_i > c_j/r_j.
bool load_greater(long long ci, long long ri, long long cj, long long rj) {
  return ci * rj > cj * ri;
}

}  // namespace

Allocation allocate_replicas(const std::vector<long long>& counts, int total_slots) {
  const int E = static_cast<int>(counts.size());
  if (E == 0) throw ValidationError("allocate_replicas: empty count vector");
  for (int e = 0; e < E; ++e)
    if (counts[e] < 0) throw ValidationError("allocate_replicas: negative count");
  if (total_slots < E)
    throw ValidationError("allocate_replicas: " + std::to_string(total_slots) +
                          " slots cannot give " + std::to_string(E) +
                          " experts one replica each");

  Allocation a;
  a.replicas.assign(E, 1);
  for (int extra = total_slots - E; extra > 0; --extra) {
    int pick = 0;
    for (int e = 1; e < E; ++e)
      if (load_greater(counts[e], a.replicas[e], counts[pick], a.replicas[pick])) pick = e;
    ++a.replicas[pick];
  }
  return a;
}

Allocation cap_allocation(const Allocation& a, const std::vector<long long>& counts,
                          int num_instances) {
  const int E = static_cast<int>(a.replicas.size());
  if (num_instances < 1) throw ValidationError("cap_allocation: no instances");
  Allocation out = a;
  long long freed = 0;
  for (int e = 0; e < E; ++e)
    if (out.replicas[e] > num_instances) {
      freed += out.replicas[e] - num_instances;
      out.replicas[e] = num_instances;
    }
  // hand the freed slots back by the same water-filling rule; the total only
  // shrinks when every expert is already at the cap
  while (freed > 0) {
    int pick = -1;
    for (int e = 0; e < E; ++e) {
      if (out.replicas[e] >= num_instances) continue;
      if (pick < 0 || load_greater(counts[e], out.replicas[e], counts[pick], out.replicas[pick]))
        pick = e;
    }
    if (pick < 0) break;
    ++out.replicas[pick];
    --freed;
  }
  return out;
}

Allocation brute_force_allocate(const std::vector<long long>& counts, int total_slots) {
  const int E = static_cast<int>(counts.size());
  if (E > 8 || total_slots > 16)
    throw ValidationError("brute_force_allocate: instance exceeds enumeration guard");
  if (total_slots < E)
    throw ValidationError("brute_force_allocate: not enough slots");

  Allocation best;
  // max load compared as a fraction (num, den).
  long long bn = 0, bd = 1;
  std::vector<int32_t> cur(E, 1);

  auto peak = [&](const std::vector<int32_t>& r, long long& n, long long& d) {
    n = counts[0], d = r[0];
    for (int e = 1; e < E; ++e)
      if (load_greater(counts[e], r[e], n, d)) {
        n = counts[e];
        d = r[e];
      }
  };

  // Enumerates replica vectors in lexicographic order; first strict
  // improvement wins, so ties keep the smallest vector.
  auto rec = [&](auto&& self, int e, int left) -> void {
    if (e == E - 1) {
      cur[e] = 1 + left;
      long long n, d;
      peak(cur, n, d);
      if (best.replicas.empty() || load_greater(bn, bd, n, d)) {
        bn = n;
        bd = d;
        best.replicas = cur;
      }
      return;
    }
    for (int extra = 0; extra <= left; ++extra) {
      cur[e] = 1 + extra;
      self(self, e + 1, left - extra);
    }
  };
  rec(rec, 0, total_slots - E);
  return best;
}

std::vector<std::vector<int32_t>> Placement::instances_of_expert() const {
  std::vector<std::vector<int32_t>> of(num_experts);
  for (int g = 0; g < num_instances; ++g)
    for (int32_t e : hosted[g]) of[e].push_back(g);
  return of;
}

void Placement::validate(const Allocation* expected) const {
  if (num_experts <= 0 || num_instances <= 0 || slots_per_instance <= 0)
    throw ValidationError("placement: dimensions must be positive");
  if (hosted.size() != static_cast<size_t>(num_instances))
    throw ValidationError("placement: instance table sized wrong");
  std::vector<int32_t> copies(num_experts, 0);
  for (int g = 0; g < num_instances; ++g) {
    if (hosted[g].size() > static_cast<size_t>(slots_per_instance))
      throw ValidationError("placement: instance " + std::to_string(g) + " over capacity");
    std::vector<bool> here(num_experts, false);
    for (int32_t e : hosted[g]) {
      if (e < 0 || e >= num_experts)
        throw ValidationError("placement: invalid expert id " + std::to_string(e));
      if (here[e])
        throw ValidationError("placement: expert " + std::to_string(e) +
                              " appears twice on instance " + std::to_string(g));
      here[e] = true;
      ++copies[e];
    }
  }
  if (expected) {
    for (int e = 0; e < num_experts; ++e)
      if (copies[e] != expected->replicas[e])
        throw ValidationError("placement: expert " + std::to_string(e) + " has " +
                              std::to_string(copies[e]) + " copies, allocation says " +
                              std::to_string(expected->replicas[e]));
  }
}

long long coactivation_load(const Placement& p, const ActivationStats& stats, int instance) {
  const auto& hs = p.hosted[instance];
  long long total = 0;
  for (size_t i = 0; i < hs.size(); ++i)
    for (size_t j = i + 1; j < hs.size(); ++j) total += stats.coactivation(hs[i], hs[j]);
  return total;
}

long long max_coactivation_load(const Placement& p, const ActivationStats& stats) {
  long long worst = 0;
  for (int g = 0; g < p.num_instances; ++g)
    worst = std::max(worst, coactivation_load(p, stats, g));
  return worst;
}

namespace {

struct ReplicaItem {
  int32_t expert;
  int32_t ordinal;
  long long count;    // activation count of the expert
  int32_t replicas;   // its replica total, so load = count/replicas
};

// Descending per-replica load; ties by lower expert id, then lower ordinal.
bool replica_order(const ReplicaItem& a, const ReplicaItem& b) {
  if (a.count * b.replicas != b.count * a.replicas)
    return a.count * b.replicas > b.count * a.replicas;
  if (a.expert != b.expert) return a.expert < b.expert;
  return a.ordinal < b.ordinal;
}

}  // namespace

Placement place_replicas(const Allocation& alloc, const ActivationStats& stats,
                         int num_instances, int slots_per_instance) {
  const int E = static_cast<int>(alloc.replicas.size());
  const int N = num_instances;
  if (E != stats.num_experts())
    throw ValidationError("place_replicas: allocation and stats disagree on expert count");
  long long total = 0;
  for (int e = 0; e < E; ++e) {
    if (alloc.replicas[e] < 1)
      throw ValidationError("place_replicas: expert " + std::to_string(e) + " has no replica");
    if (alloc.replicas[e] > N)
      throw ValidationError("place_replicas: expert " + std::to_string(e) + " wants " +
                            std::to_string(alloc.replicas[e]) + " replicas on " +
                            std::to_string(N) + " instances");
    total += alloc.replicas[e];
  }
  if (total > static_cast<long long>(N) * slots_per_instance)
    throw ValidationError("place_replicas: " + std::to_string(total) + " replicas exceed " +
                          std::to_string(N) + "x" + std::to_string(slots_per_instance) +
                          " slots");

  std::vector<ReplicaItem> items;
  items.reserve(total);
  for (int e = 0; e < E; ++e)
    for (int o = 0; o < alloc.replicas[e]; ++o)
      items.push_back({e, o, stats.count(e), alloc.replicas[e]});
  std::stable_sort(items.begin(), items.end(), replica_order);

  Placement p;
  p.num_experts = E;
  p.num_instances = N;
  p.slots_per_instance = slots_per_instance;
  p.hosted.assign(N, {});

  std::vector<std::vector<bool>> on(N, std::vector<bool>(E, false));
  std::vector<long long> iload(N, 0);  // co-activation load per instance

  auto added_coact = [&](int g, int32_t e) {
    long long sum = 0;
    for (int32_t x : p.hosted[g]) sum += stats.coactivation(e, x);
    return sum;
  };
  auto put = [&](int g, int32_t e) {
    iload[g] += added_coact(g, e);
    p.hosted[g].push_back(e);
    on[g][e] = true;
  };
  auto take = [&](int g, int32_t e) {
    auto& hs = p.hosted[g];
    hs.erase(std::find(hs.begin(), hs.end(), e));
    on[g][e] = false;
    iload[g] -= added_coact(g, e);
  };

  for (const ReplicaItem& item : items) {
    int32_t e = item.expert;
    int pick = -1;
    long long pick_add = 0;
    for (int g = 0; g < N; ++g) {
      if (on[g][e] || p.hosted[g].size() >= static_cast<size_t>(slots_per_instance)) continue;
      long long add = added_coact(g, e);
      if (pick < 0 || add < pick_add) {
        pick = g;
        pick_add = add;
      }
    }
    if (pick >= 0) {
      put(pick, e);
      continue;
    }

    // Every instance missing e is full: relocate one resident expert j from
    // such an instance g to an instance h with space, then place e on g.
    // Pick the (g, j, h) that least increases max(I(g), I(h)); ties fall to
    // the smallest (g, j, h) by iteration order.
    int best_g = -1, best_h = -1;
    int32_t best_j = -1;
    long long best_delta = std::numeric_limits<long long>::max();
    for (int g = 0; g < N; ++g) {
      if (on[g][e]) continue;
      std::vector<int32_t> residents(p.hosted[g].begin(), p.hosted[g].end());
      std::sort(residents.begin(), residents.end());
      for (int32_t j : residents) {
        for (int h = 0; h < N; ++h) {
          if (h == g || on[h][j]) continue;
          if (p.hosted[h].size() >= static_cast<size_t>(slots_per_instance)) continue;
          long long before = std::max(iload[g], iload[h]);
          // I(g) after dropping j and hosting e; I(h) after hosting j.
          long long g_after = iload[g] - added_coact(g, j) + added_coact(g, e) -
                              stats.coactivation(e, j);
          long long h_after = iload[h] + added_coact(h, j);
          long long delta = std::max(g_after, h_after) - before;
          if (delta < best_delta) {
            best_delta = delta;
            best_g = g;
            best_j = j;
            best_h = h;
          }
        }
      }
    }
    if (best_g < 0)
      throw InfeasibleError("placement-deadlock: no feasible relocation for expert " +
                            std::to_string(e));
    take(best_g, best_j);
    put(best_h, best_j);
    put(best_g, e);
  }

  Allocation check;
  check.replicas = alloc.replicas;
  p.validate(&check);
  return p;
}

Placement place_round_robin(int num_experts, int num_instances, int slots_per_instance) {
  Placement p;
  p.num_experts = num_experts;
  p.num_instances = num_instances;
  p.slots_per_instance = slots_per_instance;
  p.hosted.assign(num_instances, {});
  for (int e = 0; e < num_experts; ++e) {
    int g = e % num_instances;
    if (p.hosted[g].size() >= static_cast<size_t>(slots_per_instance))
      throw ValidationError("place_round_robin: capacity too small for one replica each");
    p.hosted[g].push_back(e);
  }
  return p;
}

Placement brute_force_place(const Allocation& alloc, const ActivationStats& stats,
                            int num_instances, int slots_per_instance) {
  const int E = static_cast<int>(alloc.replicas.size());
  const int N = num_instances;
  long long total = alloc.total();
  if (total > 14 || N > 4)
    throw ValidationError("brute_force_place: instance exceeds enumeration guard");

  // Same item order as the greedy pass so ties in the search tree resolve
  // deterministically.
  std::vector<ReplicaItem> items;
  for (int e = 0; e < E; ++e)
    for (int o = 0; o < alloc.replicas[e]; ++o)
      items.push_back({e, o, stats.count(e), alloc.replicas[e]});
  std::stable_sort(items.begin(), items.end(), replica_order);

  Placement cur;
  cur.num_experts = E;
  cur.num_instances = N;
  cur.slots_per_instance = slots_per_instance;
  cur.hosted.assign(N, {});
  std::vector<std::vector<bool>> on(N, std::vector<bool>(E, false));
  std::vector<long long> iload(N, 0);

  Placement best;
  long long best_peak = std::numeric_limits<long long>::max();

  auto rec = [&](auto&& self, size_t idx, long long peak) -> void {
    if (peak >= best_peak) return;  // co-activation only grows as experts land
    if (idx == items.size()) {
      best_peak = peak;
      best = cur;
      return;
    }
    int32_t e = items[idx].expert;
    for (int g = 0; g < N; ++g) {
      if (on[g][e] || cur.hosted[g].size() >= static_cast<size_t>(slots_per_instance))
        continue;
      long long add = 0;
      for (int32_t x : cur.hosted[g]) add += stats.coactivation(e, x);
      iload[g] += add;
      cur.hosted[g].push_back(e);
      on[g][e] = true;
      self(self, idx + 1, std::max(peak, iload[g]));
      on[g][e] = false;
      cur.hosted[g].pop_back();
      iload[g] -= add;
    }
  };
  rec(rec, 0, 0);

  if (best_peak == std::numeric_limits<long long>::max())
    throw InfeasibleError("brute_force_place: no feasible placement");
  Allocation check;
  check.replicas = alloc.replicas;
  best.validate(&check);
  return best;
}

ReplicaMap to_replica_map(const Placement& p) {
  ReplicaMap m;
  m.num_experts = p.num_experts;
  m.num_instances = p.num_instances;
  m.slots_per_instance = p.slots_per_instance;
  m.hosts.assign(p.num_experts, {});
  m.replica_ids.assign(p.num_experts, {});
  // Physical replica id = instance * slots + slot index.
  std::vector<std::vector<std::pair<int32_t, int32_t>>> by_expert(p.num_experts);
  for (int g = 0; g < p.num_instances; ++g)
    for (size_t slot = 0; slot < p.hosted[g].size(); ++slot)
      by_expert[p.hosted[g][slot]].push_back(
          {g, g * p.slots_per_instance + static_cast<int32_t>(slot)});
  for (int e = 0; e < p.num_experts; ++e) {
    std::sort(by_expert[e].begin(), by_expert[e].end());
    for (auto [g, rid] : by_expert[e]) {
      m.hosts[e].push_back(g);
      m.replica_ids[e].push_back(rid);
    }
  }
  m.validate();
  return m;
}

// --- text formats ---------------------------------------------------------

namespace {

std::string strip_line(const std::string& s) {
  size_t cut = s.find('#');
  std::string t = cut == std::string::npos ? s : s.substr(0, cut);
  size_t a = t.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = t.find_last_not_of(" \t\r");
  return t.substr(a, b - a + 1);
}

}  // namespace

Allocation load_allocation(std::istream& in) {
  std::vector<std::pair<int, int32_t>> rows;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = strip_line(raw);
    if (s.empty()) continue;
    std::istringstream row(s);
    int e;
    int32_t r;
    if (!(row >> e >> r) || !(row >> std::ws).eof())
      throw ParseError("allocation line " + std::to_string(line) +
                       ": expected 'expert replicas'");
    rows.emplace_back(e, r);
  }
  if (rows.empty()) throw ParseError("allocation file: empty");
  Allocation a;
  a.replicas.assign(rows.size(), 0);
  for (auto [e, r] : rows) {
    if (e < 0 || e >= static_cast<int>(rows.size()) || a.replicas[e] != 0)
      throw ParseError("allocation file: expert ids must cover 0.." +
                       std::to_string(rows.size() - 1) + " exactly once");
    if (r < 1) throw ValidationError("allocation file: expert " + std::to_string(e) +
                                     " must keep at least one replica");
    a.replicas[e] = r;
  }
  return a;
}

void dump_allocation(std::ostream& out, const Allocation& a) {
  out << "# allocation: experts=" << a.replicas.size() << " slots=" << a.total() << "\n";
  for (size_t e = 0; e < a.replicas.size(); ++e) out << e << " " << a.replicas[e] << "\n";
}

Placement load_placement(std::istream& in) {
  ReplicaMap m = load_replica_map(in);
  Placement p;
  p.num_experts = m.num_experts;
  p.num_instances = m.num_instances;
  p.slots_per_instance = m.slots_per_instance;
  p.hosted.assign(m.num_instances, {});
  for (int e = 0; e < m.num_experts; ++e)
    for (int32_t g : m.hosts[e]) p.hosted[g].push_back(e);
  p.validate();
  return p;
}

void dump_placement(std::ostream& out, const Placement& p) {
  dump_replica_map(out, to_replica_map(p));
}

void dump_stats(std::ostream& out, const ActivationStats& s) {
  out << "# activation stats: experts=" << s.num_experts()
      << " recorded_steps=" << s.recorded_steps() << "\n";
  out << "[counts]\n";
  for (int e = 0; e < s.num_experts(); ++e) out << e << " " << s.count(e) << "\n";
  out << "[coactivation]\n";
  for (int i = 0; i < s.num_experts(); ++i)
    for (int j = i + 1; j < s.num_experts(); ++j)
      if (s.coactivation(i, j) != 0) out << i << " " << j << " " << s.coactivation(i, j) << "\n";
}

ActivationStats load_stats(std::istream& in) {
  std::string raw;
  int line = 0;
  int section = 0;  // 1 = counts, 2 = coactivation
  std::vector<std::pair<int, long long>> counts;
  std::vector<std::array<long long, 3>> pairs;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = strip_line(raw);
    if (s.empty()) continue;
    if (s == "[counts]") {
      section = 1;
      continue;
    }
    if (s == "[coactivation]") {
      section = 2;
      continue;
    }
    std::istringstream row(s);
    if (section == 1) {
      int e;
      long long c;
      if (!(row >> e >> c) || !(row >> std::ws).eof())
        throw ParseError("stats line " + std::to_string(line) + ": expected 'expert count'");
      counts.emplace_back(e, c);
    } else if (section == 2) {
      long long i, j, c;
      if (!(row >> i >> j >> c) || !(row >> std::ws).eof())
        throw ParseError("stats line " + std::to_string(line) + ": expected 'i j count'");
      pairs.push_back({i, j, c});
    } else {
      throw ParseError("stats line " + std::to_string(line) + ": data before any section");
    }
  }
  if (counts.empty()) throw ParseError("stats file: no [counts] entries");
  const int E = static_cast<int>(counts.size());
  std::vector<long long> cvec(E, -1);
  for (auto [e, c] : counts) {
    if (e < 0 || e >= E || cvec[e] >= 0)
      throw ParseError("stats file: counts must cover experts 0.." + std::to_string(E - 1) +
                       " exactly once");
    if (c < 0) throw ValidationError("stats file: negative count for expert " + std::to_string(e));
    cvec[e] = c;
  }
  std::vector<long long> coact(static_cast<size_t>(E) * E, 0);
  for (auto [i, j, c] : pairs) {
    if (i < 0 || j < 0 || i >= E || j >= E || i == j)
      throw ParseError("stats file: bad coactivation pair (" + std::to_string(i) + ", " +
                       std::to_string(j) + ")");
    if (c < 0) throw ValidationError("stats file: negative coactivation count");
    coact[static_cast<size_t>(i) * E + j] += c;
    coact[static_cast<size_t>(j) * E + i] += c;
  }
  return ActivationStats::from_totals(std::move(cvec), std::move(coact));
}

ActivationStats load_stats_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open stats file: " + path);
  return load_stats(f);
}

}  // namespace moesim
