// SPDX-License-Identifier: Apache-2.0

#include "fedsim/traces.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "csv_util.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

using detail::csv_double;
using detail::csv_fail;
using detail::split_csv;
using detail::strip_cr;

ProfileMap load_profiles(const std::string& path) {
  auto in = detail::open_input(path);
  ProfileMap out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("client_id,", 0) == 0) continue;
    auto fields = split_csv(line);
    if (fields.size() != 4) csv_fail(path, lineno, "expected 4 fields");
    ClientProfile p;
    p.client_id = fields[0];
    if (p.client_id.empty()) csv_fail(path, lineno, "empty client_id");
    p.compute_latency_ms_per_sample =
        csv_double(fields[1], path, lineno, "compute_latency_ms_per_sample");
    p.down_kbps = csv_double(fields[2], path, lineno, "down_kbps");
    p.up_kbps = csv_double(fields[3], path, lineno, "up_kbps");
    if (p.compute_latency_ms_per_sample <= 0.0 || p.down_kbps <= 0.0 || p.up_kbps <= 0.0)
      csv_fail(path, lineno, "capacities must be strictly positive");
    if (!out.emplace(p.client_id, p).second)
      csv_fail(path, lineno, "duplicate client_id '" + p.client_id + "'");
  }
  return out;
}

AvailabilityMap load_availability(const std::string& path) {
  auto in = detail::open_input(path);
  AvailabilityMap out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("client_id,", 0) == 0) continue;
    auto fields = split_csv(line);
    if (fields.size() != 3) csv_fail(path, lineno, "expected 3 fields");
    if (fields[0].empty()) csv_fail(path, lineno, "empty client_id");
    AvailabilitySlot slot;
    slot.start_s = csv_double(fields[1], path, lineno, "start_s");
    slot.end_s = csv_double(fields[2], path, lineno, "end_s");
    if (slot.start_s < 0.0) csv_fail(path, lineno, "start_s must be >= 0");
    if (!(slot.start_s < slot.end_s)) csv_fail(path, lineno, "start_s must be < end_s");
    auto& trace = out[fields[0]];
    trace.client_id = fields[0];
    trace.slots.push_back(slot);
  }
  for (auto& [id, trace] : out) {
    std::sort(trace.slots.begin(), trace.slots.end(),
              [](const AvailabilitySlot& a, const AvailabilitySlot& b) {
                return a.start_s < b.start_s;
              });
    for (size_t i = 1; i < trace.slots.size(); ++i) {
      if (trace.slots[i].start_s < trace.slots[i - 1].end_s)
        throw std::runtime_error(path + ": overlapping availability slots for client '" + id + "'");
    }
  }
  return out;
}

void write_profiles_csv(const std::string& path, const ProfileMap& profiles) {
  auto out = detail::open_output(path);
  out << "client_id,compute_latency_ms_per_sample,down_kbps,up_kbps\n";
  for (const auto& [id, p] : profiles) {
    out << id << ',' << detail::fmt_g17(p.compute_latency_ms_per_sample) << ','
        << detail::fmt_g17(p.down_kbps) << ',' << detail::fmt_g17(p.up_kbps) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_availability_csv(const std::string& path, const AvailabilityMap& availability) {
  auto out = detail::open_output(path);
  out << "client_id,start_s,end_s\n";
  for (const auto& [id, trace] : availability) {
    for (const auto& slot : trace.slots)
      out << id << ',' << detail::fmt_g17(slot.start_s) << ',' << detail::fmt_g17(slot.end_s)
          << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

// Index of the slot containing t, or npos.
size_t containing_slot(const AvailabilityTrace& trace, double t) {
  auto it = std::upper_bound(trace.slots.begin(), trace.slots.end(), t,
                             [](double v, const AvailabilitySlot& s) { return v < s.start_s; });
  if (it == trace.slots.begin()) return static_cast<size_t>(-1);
  --it;
  if (t >= it->start_s && t < it->end_s)
    return static_cast<size_t>(it - trace.slots.begin());
  return static_cast<size_t>(-1);
}

}  // namespace

bool is_available(const AvailabilityTrace& trace, double t) {
  return containing_slot(trace, t) != static_cast<size_t>(-1);
}

std::optional<double> remaining_slot(const AvailabilityTrace& trace, double t) {
  size_t i = containing_slot(trace, t);
  if (i == static_cast<size_t>(-1)) return std::nullopt;
  return trace.slots[i].end_s - t;
}

std::vector<std::string> synth_client_ids(uint32_t n_clients) {
  std::vector<std::string> ids;
  ids.reserve(n_clients);
  char buf[24];
  for (uint32_t i = 0; i < n_clients; ++i) {
    std::snprintf(buf, sizeof(buf), "c%06u", i);
    ids.emplace_back(buf);
  }
  return ids;
}

namespace {

// Instantaneous availability probability. Mean level comes from the
// configured on/off means; the sinusoid then swings it by +-60% relative,
// peaking at spec.peak_hour.
double on_probability(double t, const TraceSynthSpec& spec) {
  double base = spec.on_mean_s / (spec.on_mean_s + spec.off_mean_s);
  double hour = std::fmod(t / 3600.0, 24.0);
  double phase = 2.0 * M_PI * (hour - spec.peak_hour) / 24.0;
  double p = base * (1.0 + 0.6 * std::cos(phase));
  return std::clamp(p, 0.02, 0.98);
}

AvailabilityTrace synth_availability(const std::string& client_id, uint64_t seed,
                                     const TraceSynthSpec& spec) {
  AvailabilityTrace trace;
  trace.client_id = client_id;
  Rng rng(derive_seed(seed, "avail", 0, client_id));
  double base = spec.on_mean_s / (spec.on_mean_s + spec.off_mean_s);
  double t = 0.0;
  bool on = rng.next_double() < on_probability(0.0, spec);
  while (t < spec.horizon_s) {
    double p = on_probability(t, spec);
    if (on) {
      // Scale the on/off means so the local stationary fraction equals p.
      double d = rng.exponential(spec.on_mean_s * (p / base));
      double end = std::min(t + d, spec.horizon_s);
      if (end > t) trace.slots.push_back({t, end});
      t = end;
    } else {
      double d = rng.exponential(spec.off_mean_s * ((1.0 - p) / (1.0 - base)));
      t += d;
    }
    on = !on;
  }
  if (trace.slots.empty()) {
    // Degenerate draw; give the client one nominal slot so every trace is
    // nonempty.
    trace.slots.push_back({0.0, spec.on_mean_s});
  }
  return trace;
}

}  // namespace

TraceSet synth_traces_for(const std::vector<std::string>& client_ids, uint64_t seed,
                          const TraceSynthSpec& spec) {
  TraceSet set;
  for (const auto& id : client_ids) {
    Rng rng(derive_seed(seed, "profile", 0, id));
    ClientProfile p;
    p.client_id = id;
    p.compute_latency_ms_per_sample = rng.log_uniform(spec.latency_lo_ms, spec.latency_hi_ms);
    p.down_kbps = rng.log_uniform(spec.bw_lo_kbps, spec.bw_hi_kbps);
    p.up_kbps = rng.log_uniform(spec.bw_lo_kbps, spec.bw_hi_kbps);
    set.profiles.emplace(id, p);
    set.availability.emplace(id, synth_availability(id, seed, spec));
  }
  return set;
}

TraceSet synth_traces(uint32_t n_clients, uint64_t seed, const TraceSynthSpec& spec) {
  return synth_traces_for(synth_client_ids(n_clients), seed, spec);
}

}  // namespace fedsim
