#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <vector>

namespace v2n {

using PopId = int;

/// Marker for an unstable queue (infinite delay or load). Kept as a value so
/// the reward path can fold it into an ordinary comparison.
inline constexpr double kOverload = std::numeric_limits<double>::infinity();

inline bool is_overload(double x) { return x == kOverload; }

/// Per-frame service costs of a PoP as a function of its active CPU count.
/// Index c-1 of the tables holds the value for c CPUs.
struct ServiceProfile {
  std::vector<double> decode_ms_per_frame;
  std::vector<double> analyze_ms_per_frame;
  double task_rate_per_vehicle = 0.0295;  // frames/ms (29.5 fps)

  int max_cpus() const { return static_cast<int>(decode_ms_per_frame.size()); }

  /// Throws std::invalid_argument if the tables are empty, mismatched,
  /// non-positive or not strictly decreasing, or the task rate is not positive.
  void validate() const;

  /// Keeps only the first `max_cpus` rows.
  ServiceProfile truncated(int max_cpus) const;
};

/// HEVC decode + frame analysis on 1..5 Xeon CPUs.
ServiceProfile default_profile();

/// CSV with header `cpus,decode_ms_per_frame,analyze_ms_per_frame`, one row per
/// CPU count starting at 1.
ServiceProfile load_profile_csv(const std::filesystem::path& path);

/// mu(c) = 1/(tau_d(c)+tau_a(c)) in frames/ms; mu(0) = 0.
/// Throws std::domain_error for c outside [0, max_cpus].
double service_rate(const ServiceProfile& profile, int c);

/// Mean M/G/1-PS sojourn 1/(mu - lambda*n) in ms, or kOverload when mu <= lambda*n.
double processing_delay(const ServiceProfile& profile, int c, int n);

/// lambda*n/mu; 0 for n == 0; kOverload for c == 0 with vehicles present.
double load(const ServiceProfile& profile, int c, int n);

struct AssignedVehicle {
  std::uint64_t id = 0;
  double departure_s = 0.0;
  bool remote = false;
};

/// State of one PoP: active CPUs and the vehicles whose tasks it serves.
class PopQueue {
 public:
  PopQueue(PopId pop_id, std::shared_ptr<const ServiceProfile> profile, int cpus = 0);

  PopId pop_id() const { return pop_id_; }
  int cpus() const { return cpus_; }
  int max_cpus() const { return profile_->max_cpus(); }
  const ServiceProfile& profile() const { return *profile_; }
  const std::vector<AssignedVehicle>& vehicles() const { return vehicles_; }

  int n_vehicles() const { return static_cast<int>(vehicles_.size()); }
  int n_remote() const { return n_remote_; }
  double remote_fraction() const;
  double load() const { return v2n::load(*profile_, cpus_, n_vehicles()); }
  double proc_delay() const { return processing_delay(*profile_, cpus_, n_vehicles()); }

  /// Throws std::logic_error if the id is already present.
  void admit(std::uint64_t vehicle_id, double departure_s, bool remote);

  /// Removes every vehicle with departure < now.
  void expire(double now_s);

  /// Throws std::domain_error outside [0, max_cpus].
  void set_cpus(int c);

  /// Adds delta and clamps to [0, max_cpus].
  void scale_by(int delta);

 private:
  PopId pop_id_;
  std::shared_ptr<const ServiceProfile> profile_;
  int cpus_;
  int n_remote_ = 0;
  std::vector<AssignedVehicle> vehicles_;
};

enum class ServiceDiscipline { kDeterministic, kExponential };

/// Event-driven single-server processor-sharing queue with Poisson arrivals.
/// Returns the sojourn time (ms) of each of the first `horizon` tasks, in
/// arrival order. Throws std::invalid_argument if arrival_rate*mean >= 1.
std::vector<double> simulate_ps_queue(ServiceDiscipline discipline, double arrival_rate_per_ms,
                                      double service_time_mean_ms, std::size_t horizon,
                                      std::uint64_t seed);

}  // namespace v2n
