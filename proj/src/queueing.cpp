#include "v2n/queueing.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>

#include "v2n/csv.hpp"
#include "v2n/rng.hpp"

namespace v2n {

void ServiceProfile::validate() const {
  if (decode_ms_per_frame.empty()) throw std::invalid_argument("service profile: empty table");
  if (decode_ms_per_frame.size() != analyze_ms_per_frame.size())
    throw std::invalid_argument("service profile: decode/analyze tables differ in length");
  if (!(task_rate_per_vehicle > 0.0))
    throw std::invalid_argument("service profile: task rate must be positive");
  for (std::size_t i = 0; i < decode_ms_per_frame.size(); ++i) {
    if (!(decode_ms_per_frame[i] > 0.0) || !(analyze_ms_per_frame[i] > 0.0))
      throw std::invalid_argument("service profile: per-frame times must be positive");
    if (i > 0 && (decode_ms_per_frame[i] >= decode_ms_per_frame[i - 1] ||
                  analyze_ms_per_frame[i] >= analyze_ms_per_frame[i - 1]))
      throw std::invalid_argument("service profile: per-frame times must decrease with cpus");
  }
}

ServiceProfile ServiceProfile::truncated(int max_cpus) const {
  if (max_cpus < 1 || max_cpus > this->max_cpus())
    throw std::invalid_argument("service profile: truncation out of range");
  ServiceProfile out = *this;
  out.decode_ms_per_frame.resize(max_cpus);
  out.analyze_ms_per_frame.resize(max_cpus);
  return out;
}

ServiceProfile default_profile() {
  ServiceProfile p;
  p.decode_ms_per_frame = {8.47, 4.41, 3.05, 2.37, 2.03};
  p.analyze_ms_per_frame = {37.0, 18.50, 12.33, 9.25, 7.40};
  p.task_rate_per_vehicle = 0.0295;
  return p;
}

ServiceProfile load_profile_csv(const std::filesystem::path& path) {
  CsvReader reader(path, {"cpus", "decode_ms_per_frame", "analyze_ms_per_frame"});
  ServiceProfile p;
  std::vector<std::string> row;
  int expected = 1;
  while (reader.next(row)) {
    const int c = reader.to_int(row[0]);
    if (c != expected)
      reader.fail("cpu counts must be consecutive from 1, got " + std::to_string(c));
    p.decode_ms_per_frame.push_back(reader.to_double(row[1]));
    p.analyze_ms_per_frame.push_back(reader.to_double(row[2]));
    ++expected;
  }
  p.validate();
  return p;
}

double service_rate(const ServiceProfile& profile, int c) {
  if (c < 0 || c > profile.max_cpus())
    throw std::domain_error("service_rate: cpu count " + std::to_string(c) + " outside [0, " +
                            std::to_string(profile.max_cpus()) + "]");
  if (c == 0) return 0.0;
  return 1.0 / (profile.decode_ms_per_frame[c - 1] + profile.analyze_ms_per_frame[c - 1]);
}

double processing_delay(const ServiceProfile& profile, int c, int n) {
  if (n < 0) throw std::domain_error("processing_delay: negative vehicle count");
  const double mu = service_rate(profile, c);
  const double demand = profile.task_rate_per_vehicle * n;
  if (mu > demand) return 1.0 / (mu - demand);
  return kOverload;
}

double load(const ServiceProfile& profile, int c, int n) {
  if (n < 0) throw std::domain_error("load: negative vehicle count");
  const double mu = service_rate(profile, c);
  if (n == 0) return 0.0;
  if (mu <= 0.0) return kOverload;
  return profile.task_rate_per_vehicle * n / mu;
}

PopQueue::PopQueue(PopId pop_id, std::shared_ptr<const ServiceProfile> profile, int cpus)
    : pop_id_(pop_id), profile_(std::move(profile)), cpus_(0) {
  if (!profile_) throw std::invalid_argument("PopQueue: null profile");
  set_cpus(cpus);
}

double PopQueue::remote_fraction() const {
  if (vehicles_.empty()) return 0.0;
  return static_cast<double>(n_remote_) / static_cast<double>(vehicles_.size());
}

void PopQueue::admit(std::uint64_t vehicle_id, double departure_s, bool remote) {
  for (const auto& v : vehicles_)
    if (v.id == vehicle_id)
      throw std::logic_error("PopQueue::admit: vehicle " + std::to_string(vehicle_id) +
                             " already assigned to pop " + std::to_string(pop_id_));
  vehicles_.push_back({vehicle_id, departure_s, remote});
  n_remote_ += remote ? 1 : 0;
}

void PopQueue::expire(double now_s) {
  auto gone = [now_s](const AssignedVehicle& v) { return v.departure_s < now_s; };
  for (const auto& v : vehicles_)
    if (gone(v) && v.remote) --n_remote_;
  std::erase_if(vehicles_, gone);
}

void PopQueue::set_cpus(int c) {
  if (c < 0 || c > profile_->max_cpus())
    throw std::domain_error("PopQueue::set_cpus: " + std::to_string(c) + " outside [0, " +
                            std::to_string(profile_->max_cpus()) + "]");
  cpus_ = c;
}

void PopQueue::scale_by(int delta) { cpus_ = std::clamp(cpus_ + delta, 0, profile_->max_cpus()); }

std::vector<double> simulate_ps_queue(ServiceDiscipline discipline, double arrival_rate_per_ms,
                                      double service_time_mean_ms, std::size_t horizon,
                                      std::uint64_t seed) {
  if (!(service_time_mean_ms > 0.0))
    throw std::invalid_argument("simulate_ps_queue: service time mean must be positive");
  if (!(arrival_rate_per_ms > 0.0))
    throw std::invalid_argument("simulate_ps_queue: arrival rate must be positive");
  if (arrival_rate_per_ms * service_time_mean_ms >= 1.0)
    throw std::invalid_argument("simulate_ps_queue: unstable load (rho >= 1)");
  if (horizon < 1) throw std::invalid_argument("simulate_ps_queue: horizon must be >= 1");

  Rng arrivals(derive_seed(seed, {1}));
  Rng sizes(derive_seed(seed, {2}));
  auto draw_size = [&] {
    return discipline == ServiceDiscipline::kDeterministic
               ? service_time_mean_ms
               : sizes.exponential(1.0 / service_time_mean_ms);
  };

  // Virtual time V advances at rate 1/n while n tasks share the server; a task
  // that arrives at V_a with size s leaves when V reaches V_a + s.
  using Finish = std::pair<double, std::size_t>;  // (virtual finish, task index)
  std::priority_queue<Finish, std::vector<Finish>, std::greater<>> in_service;
  std::vector<double> arrival_time(horizon);
  std::vector<double> sojourn(horizon, 0.0);

  double now = 0.0;
  double virtual_now = 0.0;
  std::size_t next = 0;
  double next_arrival = arrivals.exponential(arrival_rate_per_ms);

  while (next < horizon || !in_service.empty()) {
    const std::size_t n = in_service.size();
    double next_departure = kOverload;
    if (n > 0) next_departure = now + (in_service.top().first - virtual_now) * static_cast<double>(n);

    const bool arrival_first = next < horizon && next_arrival <= next_departure;
    const double t = arrival_first ? next_arrival : next_departure;
    if (n > 0) virtual_now += (t - now) / static_cast<double>(n);
    now = t;

    if (arrival_first) {
      arrival_time[next] = now;
      in_service.emplace(virtual_now + draw_size(), next);
      ++next;
      next_arrival = now + arrivals.exponential(arrival_rate_per_ms);
    } else {
      const auto [finish, idx] = in_service.top();
      in_service.pop();
      virtual_now = finish;
      sojourn[idx] = now - arrival_time[idx];
    }
  }
  return sojourn;
}

}  // namespace v2n
