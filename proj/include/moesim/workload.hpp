#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "moesim/aebs.hpp"
#include "moesim/rng.hpp"
#include "moesim/types.hpp"

namespace moesim {

// Per-token expert routing distribution. Probabilities sum to 1.
struct RoutingPattern {
  std::vector<double> pmf;
  std::vector<double> cdf;  // inclusive prefix sums, back() == 1

  static RoutingPattern uniform(int num_experts);
  // Bell curve over expert ids centred at E/2 with stddev sigma*E.
  static RoutingPattern gaussian(int num_experts, double sigma);
  static RoutingPattern from_pmf(std::vector<double> weights);

  int num_experts() const { return static_cast<int>(pmf.size()); }
  // Smallest id with cdf >= u.
  int sample(double u) const;
};

// Draws num_tokens routing decisions of top_k distinct experts each.
// Deterministic for a given seed regardless of thread count: token i's
// draws come from an RNG seeded by (seed, "workload/token", step, i).
ActivationBatch gen_batch(const RoutingPattern& pattern, int num_tokens, int top_k,
                          uint64_t seed, uint64_t step, bool cover_all = false);

struct Request {
  double arrival_s = 0;
  int input_tokens = 0;
  int output_tokens = 0;
};

struct RequestTrace {
  std::vector<Request> requests;  // sorted by arrival_s
  double duration_s = 0;

  void validate() const;
};

// Homogeneous Poisson arrivals at rate_per_s, geometric token lengths.
RequestTrace gen_trace(double rate_per_s, double duration_s, double mean_input_len,
                       double mean_output_len, uint64_t seed);

// Sinusoidal day/night arrival rate: lambda(t) ramps between base_rate and
// base_rate*peak_ratio over a 24h period (trough at t=0), sampled by
// thinning.
RequestTrace gen_diurnal_trace(double base_rate_per_s, double peak_ratio, double duration_s,
                               double mean_input_len, double mean_output_len, uint64_t seed);

RequestTrace load_trace(std::istream& in);
void dump_trace(std::ostream& out, const RequestTrace& trace);

}  // namespace moesim
