// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedsim {

struct ClientProfile {
  std::string client_id;
  double compute_latency_ms_per_sample = 0.0;
  double down_kbps = 0.0;
  double up_kbps = 0.0;
};

struct AvailabilitySlot {
  double start_s = 0.0;
  double end_s = 0.0;  // half-open: [start_s, end_s)
};

// Slots sorted by start, non-overlapping.
struct AvailabilityTrace {
  std::string client_id;
  std::vector<AvailabilitySlot> slots;
};

using ProfileMap = std::map<std::string, ClientProfile>;
using AvailabilityMap = std::map<std::string, AvailabilityTrace>;

// CSV header: client_id,compute_latency_ms_per_sample,down_kbps,up_kbps
ProfileMap load_profiles(const std::string& path);

// CSV header: client_id,start_s,end_s (one slot per row). Rows for one
// client are sorted here; overlapping slots are an error.
AvailabilityMap load_availability(const std::string& path);

void write_profiles_csv(const std::string& path, const ProfileMap& profiles);
void write_availability_csv(const std::string& path, const AvailabilityMap& availability);

bool is_available(const AvailabilityTrace& trace, double t);

// end_s - t of the slot containing t, or absent when unavailable at t.
std::optional<double> remaining_slot(const AvailabilityTrace& trace, double t);

struct TraceSynthSpec {
  double latency_lo_ms = 5.0;
  double latency_hi_ms = 50.0;
  double bw_lo_kbps = 2000.0;
  double bw_hi_kbps = 20000.0;
  double on_mean_s = 600.0;
  double off_mean_s = 1800.0;
  double peak_hour = 2.0;  // availability sinusoid maximum; trough 12 h later
  double horizon_s = 604800.0;
};

struct TraceSet {
  ProfileMap profiles;
  AvailabilityMap availability;
};

// Zero-padded synthetic ids ("c000000", ...) so lexicographic order equals
// numeric order.
std::vector<std::string> synth_client_ids(uint32_t n_clients);

// Capacities log-uniform over [lo, hi]; availability is an alternating
// renewal process whose instantaneous on-probability tracks a 24 h sinusoid.
// Per-client streams are keyed by client id, not index.
TraceSet synth_traces(uint32_t n_clients, uint64_t seed, const TraceSynthSpec& spec = {});

// Same generator over caller-provided ids (e.g. a dataset's client ids).
TraceSet synth_traces_for(const std::vector<std::string>& client_ids, uint64_t seed,
                          const TraceSynthSpec& spec = {});

}  // namespace fedsim
