#include "moesim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace moesim {

RoutingPattern RoutingPattern::from_pmf(std::vector<double> weights) {
  if (weights.empty()) throw ValidationError("routing: empty pmf");
  double sum = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw ValidationError("routing: pmf weights must be >= 0");
    sum += w;
  }
  if (sum <= 0) throw ValidationError("routing: pmf sums to zero");
  RoutingPattern p;
  p.pmf.resize(weights.size());
  p.cdf.resize(weights.size());
  double acc = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    p.pmf[i] = weights[i] / sum;
    acc += p.pmf[i];
    p.cdf[i] = acc;
  }
  p.cdf.back() = 1.0;
  return p;
}

RoutingPattern RoutingPattern::uniform(int num_experts) {
  if (num_experts < 1) throw ValidationError("routing: num_experts must be >= 1");
  return from_pmf(std::vector<double>(num_experts, 1.0));
}

RoutingPattern RoutingPattern::gaussian(int num_experts, double sigma) {
  if (num_experts < 1) throw ValidationError("routing: num_experts must be >= 1");
  if (!(sigma > 0)) throw ValidationError("routing: sigma must be > 0");
  double center = num_experts / 2.0;
  double denom = 2.0 * (sigma * num_experts) * (sigma * num_experts);
  std::vector<double> w(num_experts);
  for (int e = 0; e < num_experts; ++e) {
    double d = e - center;
    w[e] = std::exp(-d * d / denom);
  }
  return from_pmf(std::move(w));
}

int RoutingPattern::sample(double u) const {
  auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<int>(it - cdf.begin());
}

ActivationBatch gen_batch(const RoutingPattern& pattern, int num_tokens, int top_k,
                          uint64_t seed, uint64_t step, bool cover_all) {
  int num_experts = pattern.num_experts();
  if (num_tokens < 0) throw ValidationError("gen_batch: negative num_tokens");
  if (top_k < 1 || top_k > num_experts)
    throw ValidationError("gen_batch: top_k out of range");

  ActivationBatch batch;
  batch.num_tokens = num_tokens;
  batch.top_k = top_k;
  batch.experts.assign(static_cast<size_t>(num_tokens) * top_k, -1);

  uint64_t step_seed = derive_seed(seed, "workload/step", step);

#pragma omp parallel for schedule(static) if (num_tokens >= 256)
  for (int i = 0; i < num_tokens; ++i) {
    Rng rng(derive_seed(step_seed, "token", static_cast<uint64_t>(i)));
    int* out = &batch.experts[static_cast<size_t>(i) * top_k];
    int chosen = 0;
    while (chosen < top_k) {
      int e = -1;
      for (int attempt = 0; attempt < 64; ++attempt) {
        int cand = pattern.sample(rng.next_double());
        if (std::find(out, out + chosen, cand) == out + chosen) {
          e = cand;
          break;
        }
      }
      if (e < 0) {
        // Rejection stalled on a very peaked pmf; take the next free id
        // after the last draw so the result stays distinct.
        int cand = pattern.sample(rng.next_double());
        for (int off = 0; off < num_experts; ++off) {
          int c = (cand + off) % num_experts;
          if (std::find(out, out + chosen, c) == out + chosen) {
            e = c;
            break;
          }
        }
      }
      out[chosen++] = e;
    }
    std::sort(out, out + top_k);
  }

  if (cover_all && num_tokens > 0) {
    if (static_cast<long long>(num_tokens) * top_k < num_experts)
      throw InfeasibleError("gen_batch: cover_all needs num_tokens*top_k >= num_experts");
    std::vector<int> counts(num_experts, 0);
    for (int e : batch.experts) ++counts[e];
    size_t cursor = 0;
    size_t total_slots = batch.experts.size();
    for (int miss = 0; miss < num_experts; ++miss) {
      if (counts[miss] > 0) continue;
      bool placed = false;
      for (size_t tries = 0; tries < total_slots && !placed; ++tries, ++cursor) {
        size_t s = cursor % total_slots;
        size_t tok = s / top_k;
        int old = batch.experts[s];
        if (counts[old] < 2) continue;
        int* row = &batch.experts[tok * top_k];
        if (std::find(row, row + top_k, miss) != row + top_k) continue;
        --counts[old];
        batch.experts[s] = miss;
        counts[miss] = 1;
        std::sort(row, row + top_k);
        placed = true;
      }
      if (!placed) throw InfeasibleError("gen_batch: cover_all could not place every expert");
    }
  }

  batch.validate(num_experts);
  return batch;
}

namespace {

// Geometric on {1, 2, ...} with the given mean, by inversion.
int geometric_len(Rng& rng, double mean) {
  if (mean <= 1.0) return 1;
  double p = 1.0 / mean;
  double u = rng.next_double();
  double v = std::log1p(-u) / std::log1p(-p);
  long long n = static_cast<long long>(std::ceil(v));
  if (n < 1) n = 1;
  if (n > (1 << 24)) n = 1 << 24;
  return static_cast<int>(n);
}

Request make_request(double arrival, Rng& len_rng, double mean_in, double mean_out) {
  Request r;
  r.arrival_s = arrival;
  r.input_tokens = geometric_len(len_rng, mean_in);
  r.output_tokens = geometric_len(len_rng, mean_out);
  return r;
}

}  // namespace

void RequestTrace::validate() const {
  double prev = 0;
  for (const Request& r : requests) {
    if (r.arrival_s < prev) throw ValidationError("trace: arrivals out of order");
    if (r.input_tokens < 1 || r.output_tokens < 1)
      throw ValidationError("trace: token counts must be >= 1");
    prev = r.arrival_s;
  }
  if (duration_s < prev) throw ValidationError("trace: duration shorter than last arrival");
}

RequestTrace gen_trace(double rate_per_s, double duration_s, double mean_input_len,
                       double mean_output_len, uint64_t seed) {
  if (!(rate_per_s > 0)) throw ValidationError("gen_trace: rate must be > 0");
  if (!(duration_s > 0)) throw ValidationError("gen_trace: duration must be > 0");
  Rng arrival(derive_seed(seed, "trace/arrival"));
  Rng lens(derive_seed(seed, "trace/len"));
  RequestTrace trace;
  trace.duration_s = duration_s;
  double t = arrival.next_exp(rate_per_s);
  while (t < duration_s) {
    trace.requests.push_back(make_request(t, lens, mean_input_len, mean_output_len));
    t += arrival.next_exp(rate_per_s);
  }
  trace.validate();
  return trace;
}

RequestTrace gen_diurnal_trace(double base_rate_per_s, double peak_ratio, double duration_s,
                               double mean_input_len, double mean_output_len, uint64_t seed) {
  if (!(base_rate_per_s > 0)) throw ValidationError("gen_trace: rate must be > 0");
  if (!(peak_ratio >= 1)) throw ValidationError("gen_trace: peak_ratio must be >= 1");
  if (!(duration_s > 0)) throw ValidationError("gen_trace: duration must be > 0");
  constexpr double kDay = 86400.0;
  double lam_max = base_rate_per_s * peak_ratio;
  auto lam = [&](double t) {
    double swing = 0.5 * (1.0 - std::cos(2.0 * M_PI * t / kDay));
    return base_rate_per_s * (1.0 + (peak_ratio - 1.0) * swing);
  };
  Rng arrival(derive_seed(seed, "trace/arrival"));
  Rng thin(derive_seed(seed, "trace/thin"));
  Rng lens(derive_seed(seed, "trace/len"));
  RequestTrace trace;
  trace.duration_s = duration_s;
  double t = 0;
  while (true) {
    t += arrival.next_exp(lam_max);
    if (t >= duration_s) break;
    if (thin.next_double() * lam_max <= lam(t))
      trace.requests.push_back(make_request(t, lens, mean_input_len, mean_output_len));
  }
  trace.validate();
  return trace;
}

RequestTrace load_trace(std::istream& in) {
  RequestTrace trace;
  std::string line;
  int lineno = 0;
  bool have_duration = false;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;
    if (first == "duration") {
      if (!(ss >> trace.duration_s))
        throw ParseError("trace line " + std::to_string(lineno) + ": bad duration");
      have_duration = true;
      continue;
    }
    Request r;
    try {
      r.arrival_s = std::stod(first);
    } catch (const std::exception&) {
      throw ParseError("trace line " + std::to_string(lineno) + ": bad timestamp");
    }
    if (!(ss >> r.input_tokens >> r.output_tokens))
      throw ParseError("trace line " + std::to_string(lineno) + ": expected 3 fields");
    std::string extra;
    if (ss >> extra)
      throw ParseError("trace line " + std::to_string(lineno) + ": trailing fields");
    trace.requests.push_back(r);
  }
  if (!have_duration && !trace.requests.empty())
    trace.duration_s = trace.requests.back().arrival_s;
  trace.validate();
  return trace;
}

void dump_trace(std::ostream& out, const RequestTrace& trace) {
  out << "# timestamp_s input_tokens output_tokens\n";
  out << "duration " << trace.duration_s << "\n";
  out.precision(9);
  for (const Request& r : trace.requests)
    out << r.arrival_s << " " << r.input_tokens << " " << r.output_tokens << "\n";
}

}  // namespace moesim
