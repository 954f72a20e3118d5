#include "v2n/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

#include "v2n/csv.hpp"
#include "v2n/rng.hpp"

namespace v2n {

namespace {

bool entry_less(const IntensityEntry& a, const IntensityEntry& b) {
  if (a.pop != b.pop) return a.pop < b.pop;
  return a.window_start_s < b.window_start_s;
}

double quantize_us(double t_s) { return std::nearbyint(t_s * 1e6) / 1e6; }

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

// Microsecond-resolution text form used for trace files.
std::string format_time(double t_s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", t_s);
  return buf;
}

}  // namespace

int IntensityTable::pop_count() const {
  int p = 0;
  for (const auto& e : entries) p = std::max(p, e.pop + 1);
  return p;
}

void IntensityTable::validate() const {
  if (!(window_seconds > 0.0)) throw std::invalid_argument("intensity table: window must be > 0");
  const int pops = pop_count();
  std::vector<bool> seen(pops, false);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.pop < 0) throw std::invalid_argument("intensity table: negative pop id");
    if (!(e.vehicles_per_hour >= 0.0) || !std::isfinite(e.vehicles_per_hour))
      throw std::invalid_argument("intensity table: negative or non-finite rate for pop " +
                                  std::to_string(e.pop) + " at t=" + format_time(e.window_start_s));
    seen[e.pop] = true;
    if (i == 0) continue;
    const auto& prev = entries[i - 1];
    if (entry_less(e, prev)) throw std::invalid_argument("intensity table: entries not sorted");
    if (prev.pop != e.pop) continue;
    const double expected = prev.window_start_s + window_seconds;
    const double tol = 1e-9 * std::max(1.0, std::abs(expected));
    if (e.window_start_s < expected - tol)
      throw std::invalid_argument("intensity table: overlapping windows for pop " +
                                  std::to_string(e.pop) + " at t=" + format_time(e.window_start_s));
    if (e.window_start_s > expected + tol)
      throw std::invalid_argument("intensity table: gap in pop " + std::to_string(e.pop) +
                                  " timeline before t=" + format_time(e.window_start_s));
  }
  for (int p = 0; p < pops; ++p)
    if (!seen[p]) throw std::invalid_argument("intensity table: pop " + std::to_string(p) + " has no windows");
}

std::uint64_t IntensityTable::digest() const {
  Fnv1a h;
  h.update_value(window_seconds);
  for (const auto& e : entries) {
    h.update_value(e.window_start_s);
    h.update_value(e.pop);
    h.update_value(e.vehicles_per_hour);
  }
  return h.digest();
}

TrafficTrace TrafficTrace::window(double begin_s, double end_s) const {
  TrafficTrace out;
  out.pop_count = pop_count;
  out.seed = seed;
  out.source_hash = source_hash;
  for (const auto& e : events)
    if (e.t_s >= begin_s && e.t_s < end_s) out.events.push_back(e);
  return out;
}

TrafficTrace TrafficTrace::prefix(std::size_t n) const {
  TrafficTrace out = *this;
  if (out.events.size() > n) out.events.resize(n);
  return out;
}

std::uint64_t TrafficTrace::digest() const {
  Fnv1a h;
  h.update_value(pop_count);
  for (const auto& e : events) {
    h.update_value(e.t_s);
    h.update_value(e.pop);
  }
  return h.digest();
}

IntensityTable load_intensity_csv(const std::filesystem::path& path) {
  CsvReader reader(path, {"window_start_s", "pop_id", "lambda_veh_per_hour"});
  IntensityTable table;
  std::vector<std::string> row;
  while (reader.next(row)) {
    IntensityEntry e;
    e.window_start_s = reader.to_double(row[0]);
    e.pop = reader.to_int(row[1]);
    e.vehicles_per_hour = reader.to_double(row[2]);
    if (e.vehicles_per_hour < 0.0) reader.fail("negative intensity");
    if (e.pop < 0) reader.fail("negative pop id");
    table.entries.push_back(e);
  }
  std::stable_sort(table.entries.begin(), table.entries.end(), entry_less);

  if (auto it = reader.metadata().find("window_seconds"); it != reader.metadata().end()) {
    table.window_seconds = std::stod(it->second);
  } else {
    // Smallest spacing between consecutive windows of one PoP.
    double spacing = 0.0;
    for (std::size_t i = 1; i < table.entries.size(); ++i) {
      if (table.entries[i].pop != table.entries[i - 1].pop) continue;
      const double d = table.entries[i].window_start_s - table.entries[i - 1].window_start_s;
      if (d > 0.0 && (spacing == 0.0 || d < spacing)) spacing = d;
    }
    if (spacing > 0.0) table.window_seconds = spacing;
  }
  table.validate();
  return table;
}

void write_intensity_csv(const IntensityTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# window_seconds=" << table.window_seconds << "\n";
  out << "window_start_s,pop_id,lambda_veh_per_hour\n";
  char buf[128];
  for (const auto& e : table.entries) {
    std::snprintf(buf, sizeof buf, "%.6f,%d,%.17g\n", e.window_start_s, e.pop, e.vehicles_per_hour);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

IntensityTable synth_intensity(const SynthParams& params) {
  if (params.pops < 1) throw std::invalid_argument("synth_intensity: pops must be >= 1");
  if (params.days < 1) throw std::invalid_argument("synth_intensity: days must be >= 1");
  if (!(params.peak_veh_per_hour >= params.trough_veh_per_hour) || params.trough_veh_per_hour < 0.0)
    throw std::invalid_argument("synth_intensity: need peak >= trough >= 0");
  if (!(params.window_seconds > 0.0))
    throw std::invalid_argument("synth_intensity: window must be > 0");

  constexpr double kDay = 86400.0;
  const auto windows =
      static_cast<std::size_t>(std::llround(params.days * kDay / params.window_seconds));
  const double swing = params.peak_veh_per_hour - params.trough_veh_per_hour;

  std::vector<double> noise(windows);
  for (std::size_t w = 0; w < windows; ++w) {
    Rng rng(derive_seed(params.seed, {w}));
    noise[w] = params.noise * rng.normal();
  }

  IntensityTable table;
  table.window_seconds = params.window_seconds;
  table.entries.reserve(windows * params.pops);
  for (int p = 0; p < params.pops; ++p) {
    for (std::size_t w = 0; w < windows; ++w) {
      const double start = static_cast<double>(w) * params.window_seconds;
      const double mid_hour = (start + 0.5 * params.window_seconds) / 3600.0;
      const double phase = mid_hour - params.peak_hour - p * params.phase_per_pop_hours;
      const double shape = 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * phase / 24.0));
      const double level = std::clamp(shape * (1.0 + noise[w]), 0.0, 1.0);
      table.entries.push_back({start, p, params.trough_veh_per_hour + swing * level});
    }
  }
  return table;
}

TrafficTrace generate_arrivals(const IntensityTable& table, std::uint64_t seed) {
  table.validate();
  TrafficTrace trace;
  trace.pop_count = table.pop_count();
  trace.seed = seed;
  trace.source_hash = table.digest();

  // Window index is counted from the table origin so a PoP's substreams do
  // not depend on the other PoPs.
  double origin = 0.0;
  if (!table.entries.empty()) {
    origin = table.entries.front().window_start_s;
    for (const auto& e : table.entries) origin = std::min(origin, e.window_start_s);
  }

  for (const auto& e : table.entries) {
    if (e.vehicles_per_hour <= 0.0) continue;
    const auto window_index =
        static_cast<std::uint64_t>(std::llround((e.window_start_s - origin) / table.window_seconds));
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(e.pop), window_index}));
    const double rate_per_s = e.vehicles_per_hour / 3600.0;
    const double end = e.window_start_s + table.window_seconds;
    double t = e.window_start_s;
    while (true) {
      t += rng.exponential(rate_per_s);
      // Stored at the file resolution so in-memory and on-disk traces agree.
      const double stamp = quantize_us(t);
      if (stamp >= end) break;
      trace.events.push_back({stamp, e.pop});
    }
  }
  // Entries are sorted by (pop, window) so per-PoP generation order is
  // preserved by the stable sort; ties on t go to the lower pop id.
  std::stable_sort(trace.events.begin(), trace.events.end(), [](const Arrival& a, const Arrival& b) {
    if (a.t_s != b.t_s) return a.t_s < b.t_s;
    return a.pop < b.pop;
  });
  return trace;
}

std::vector<TrafficTrace> replicate_serial(const IntensityTable& table, std::uint64_t base_seed,
                                           int k) {
  if (k < 1) throw std::invalid_argument("replicate: k must be >= 1");
  std::vector<TrafficTrace> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.push_back(generate_arrivals(table, base_seed + i));
  return out;
}

std::vector<TrafficTrace> replicate(const IntensityTable& table, std::uint64_t base_seed, int k) {
  if (k < 1) throw std::invalid_argument("replicate: k must be >= 1");
  table.validate();
  std::vector<TrafficTrace> out(k);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < k; ++i) out[i] = generate_arrivals(table, base_seed + i);
  return out;
}

void write_trace(const TrafficTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# pops=" << trace.pop_count << "\n";
  out << "# seed=" << trace.seed << "\n";
  out << "# source_hash=" << hex64(trace.source_hash) << "\n";
  out << "# rng=" << kRngAlgorithm << "\n";
  out << "t_s,pop_id\n";
  for (const auto& e : trace.events) out << format_time(e.t_s) << ',' << e.pop << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TrafficTrace read_trace(const std::filesystem::path& path) {
  CsvReader reader(path, {"t_s", "pop_id"});
  TrafficTrace trace;
  const auto& meta = reader.metadata();
  if (auto it = meta.find("seed"); it != meta.end()) trace.seed = std::stoull(it->second);
  if (auto it = meta.find("source_hash"); it != meta.end()) trace.source_hash = parse_hex64(it->second);
  int declared_pops = -1;
  if (auto it = meta.find("pops"); it != meta.end()) declared_pops = std::stoi(it->second);

  std::vector<std::string> row;
  int max_pop = -1;
  while (reader.next(row)) {
    Arrival a{reader.to_double(row[0]), reader.to_int(row[1])};
    if (a.pop < 0) reader.fail("negative pop id");
    if (!trace.events.empty()) {
      const auto& prev = trace.events.back();
      if (a.t_s < prev.t_s || (a.t_s == prev.t_s && a.pop < prev.pop))
        reader.fail("events not sorted by time");
    }
    max_pop = std::max(max_pop, a.pop);
    trace.events.push_back(a);
  }
  if (declared_pops >= 0) {
    if (max_pop >= declared_pops) reader.fail("pop id exceeds declared pop count");
    trace.pop_count = declared_pops;
  } else {
    trace.pop_count = max_pop + 1;
  }
  return trace;
}

}  // namespace v2n
