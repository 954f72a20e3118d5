#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "v2n/environment.hpp"
#include "v2n/queueing.hpp"
#include "v2n/rng.hpp"
#include "v2n/traffic.hpp"

namespace v2n::test {

inline std::shared_ptr<const ServiceProfile> profile_ptr(int max_cpus = -1) {
  auto p = default_profile();
  if (max_cpus > 0) p = p.truncated(max_cpus);
  return std::make_shared<const ServiceProfile>(std::move(p));
}

inline TrafficTrace trace_of(int pops, const std::vector<Arrival>& events) {
  TrafficTrace t;
  t.pop_count = pops;
  t.events = events;
  return t;
}

/// Scenario with explicit departure times.
inline std::shared_ptr<const Scenario> scenario_of(int pops, const std::vector<Arrival>& events,
                                                   const std::vector<double>& departures) {
  auto sc = std::make_shared<Scenario>();
  sc->trace = trace_of(pops, events);
  sc->departure_s = departures;
  return sc;
}

/// Random micro-scenario: V arrivals across P PoPs, mean gap gap_s, mean dwell dwell_s.
inline std::shared_ptr<const Scenario> micro_scenario(Rng& rng, int pops, std::size_t v, double gap_s = 5.0,
                                                      double dwell_s = 30.0) {
  std::vector<Arrival> ev;
  std::vector<double> dep;
  double t = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    t += rng.exponential(1.0 / gap_s);
    ev.push_back({t, static_cast<PopId>(rng.below(static_cast<std::uint64_t>(pops)))});
    dep.push_back(t + rng.exponential(1.0 / dwell_s));
  }
  return scenario_of(pops, ev, dep);
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("v2n_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace v2n::test
