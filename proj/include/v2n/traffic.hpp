#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "v2n/queueing.hpp"

namespace v2n {

struct IntensityEntry {
  double window_start_s = 0.0;
  PopId pop = 0;
  double vehicles_per_hour = 0.0;
};

/// Per-PoP traffic intensity in fixed windows. Entries are kept sorted by
/// (pop, window_start).
struct IntensityTable {
  double window_seconds = 300.0;
  std::vector<IntensityEntry> entries;

  int pop_count() const;

  /// Throws std::invalid_argument on negative rates, overlapping or unsorted
  /// windows, gaps inside a PoP's timeline, or PoP ids that are not 0..P-1.
  void validate() const;

  /// Digest of window length and every entry, in canonical order.
  std::uint64_t digest() const;
};

struct Arrival {
  double t_s = 0.0;
  PopId pop = 0;
};

struct TrafficTrace {
  std::vector<Arrival> events;
  int pop_count = 0;
  std::uint64_t seed = 0;
  std::uint64_t source_hash = 0;

  bool empty() const { return events.empty(); }
  std::size_t size() const { return events.size(); }

  /// Events with t in [begin, end), same metadata.
  TrafficTrace window(double begin_s, double end_s) const;

  /// First n events.
  TrafficTrace prefix(std::size_t n) const;

  std::uint64_t digest() const;
};

/// CSV with header `window_start_s,pop_id,lambda_veh_per_hour`. Window length
/// is inferred from the spacing of consecutive windows (300 s if each PoP has
/// a single window, unless a `# window_seconds=` metadata line says otherwise).
IntensityTable load_intensity_csv(const std::filesystem::path& path);

void write_intensity_csv(const IntensityTable& table, const std::filesystem::path& path);

struct SynthParams {
  int pops = 5;
  int days = 1;
  double peak_veh_per_hour = 300.0;
  double trough_veh_per_hour = 30.0;
  double phase_per_pop_hours = 1.5;
  double peak_hour = 8.5;
  /// Relative noise on the daily swing; shared by all PoPs in a window.
  double noise = 0.1;
  double window_seconds = 300.0;
  std::uint64_t seed = 0;
};

/// Raised-cosine daily profile between trough and peak, one-day period, with
/// PoP p shifted by p*phase hours.
IntensityTable synth_intensity(const SynthParams& params);

/// Piecewise-homogeneous Poisson arrivals: a fresh exponential stream per
/// (pop, window), clipped at the window end, merged and time-sorted.
TrafficTrace generate_arrivals(const IntensityTable& table, std::uint64_t seed);

/// k traces with seeds base_seed .. base_seed+k-1, generated in parallel.
std::vector<TrafficTrace> replicate(const IntensityTable& table, std::uint64_t base_seed, int k);

/// Serial reference for replicate().
std::vector<TrafficTrace> replicate_serial(const IntensityTable& table, std::uint64_t base_seed,
                                           int k);

/// CSV `t_s,pop_id` with microsecond timestamps, preceded by `# key=value`
/// metadata (pops, seed, source_hash, rng).
void write_trace(const TrafficTrace& trace, const std::filesystem::path& path);

/// Throws std::runtime_error on malformed or unsorted files.
TrafficTrace read_trace(const std::filesystem::path& path);

}  // namespace v2n
