#include "v2n/environment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "v2n/rng.hpp"

namespace v2n {

namespace {

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

void RewardConfig::validate() const {
  if (!(d_tgt_ms > 0.0)) throw std::invalid_argument("reward: d_tgt must be > 0");
  if (!(transmission_ms >= 0.0)) throw std::invalid_argument("reward: transmission must be >= 0");
  if (variant == RewardVariant::kTruncNorm && !(sigma_ms > 0.0))
    throw std::invalid_argument("reward: sigma must be > 0");
}

double reward_base(double d_ms, double d_tgt_ms) {
  if (is_overload(d_ms)) return 0.0;
  const double x = d_ms / d_tgt_ms;
  return x * std::exp(-0.5 * (x * x - 1.0));
}

double continuity_scale(double d_tgt_ms, double sigma_ms) {
  const double mass = 1.0 - std_normal_cdf((0.0 - d_tgt_ms) / sigma_ms);
  return sigma_ms * std::sqrt(2.0 * std::numbers::pi) * mass * reward_base(d_tgt_ms, d_tgt_ms);
}

double reward_truncnorm(double d_ms, double d_tgt_ms, double sigma_ms) {
  if (is_overload(d_ms)) return 0.0;
  if (d_ms < d_tgt_ms) return reward_base(d_ms, d_tgt_ms);
  const double k = continuity_scale(d_tgt_ms, sigma_ms);
  const double mass = 1.0 - std_normal_cdf((0.0 - d_tgt_ms) / sigma_ms);
  return (k / sigma_ms) * std_normal_pdf((d_ms - d_tgt_ms) / sigma_ms) / mass;
}

double reward(double d_ms, const RewardConfig& cfg) {
  switch (cfg.variant) {
    case RewardVariant::kBase:
      return reward_base(d_ms, cfg.d_tgt_ms);
    case RewardVariant::kTruncNorm:
      return reward_truncnorm(d_ms, cfg.d_tgt_ms, cfg.sigma_ms);
  }
  return 0.0;
}

double per_pop_reward(const ServiceProfile& profile, int cpus, int n_vehicles, int n_remote,
                      const RewardConfig& cfg) {
  if (n_vehicles == 0) {
    if (cpus == 0) return 1.0;
    return reward(1.0 / service_rate(profile, cpus), cfg);
  }
  const double proc = processing_delay(profile, cpus, n_vehicles);
  if (is_overload(proc)) return 0.0;
  const double surcharge =
      cfg.transmission_ms * static_cast<double>(n_remote) / static_cast<double>(n_vehicles);
  return reward(proc + surcharge, cfg);
}

double per_pop_reward(const PopQueue& pop, const RewardConfig& cfg) {
  return per_pop_reward(pop.profile(), pop.cpus(), pop.n_vehicles(), pop.n_remote(), cfg);
}

std::vector<int> SystemState::interleaved() const {
  std::vector<int> out;
  out.reserve(per_pop.size() * 2);
  for (const auto& p : per_pop) {
    out.push_back(p.n_vehicles);
    out.push_back(p.cpus);
  }
  return out;
}

Scenario Scenario::prefix(std::size_t n) const {
  Scenario out;
  out.trace = trace.prefix(n);
  out.departure_s.assign(departure_s.begin(), departure_s.begin() + static_cast<std::ptrdiff_t>(out.trace.size()));
  out.dwell_seed = dwell_seed;
  return out;
}

Scenario make_scenario(TrafficTrace trace, std::uint64_t dwell_seed, double dwell_mean_s) {
  if (!(dwell_mean_s > 0.0)) throw std::invalid_argument("make_scenario: dwell mean must be > 0");
  Scenario s;
  s.dwell_seed = dwell_seed;
  s.departure_s.reserve(trace.size());
  Rng rng(dwell_seed);
  for (const auto& e : trace.events) s.departure_s.push_back(e.t_s + dwell_mean_s * rng.exponential(1.0));
  s.trace = std::move(trace);
  return s;
}

Environment::Environment(std::shared_ptr<const Scenario> scenario,
                         std::shared_ptr<const ServiceProfile> profile, RewardConfig reward_cfg,
                         int initial_cpus)
    : scenario_(std::move(scenario)),
      profile_(std::move(profile)),
      reward_cfg_(reward_cfg),
      initial_cpus_(initial_cpus) {
  if (!scenario_ || !profile_) throw std::invalid_argument("Environment: null scenario or profile");
  if (scenario_->departure_s.size() != scenario_->trace.size())
    throw std::invalid_argument("Environment: scenario departures do not match trace");
  if (scenario_->trace.pop_count < 1) throw std::invalid_argument("Environment: trace has no PoPs");
  profile_->validate();
  reward_cfg_.validate();
  if (initial_cpus < 0 || initial_cpus > profile_->max_cpus())
    throw std::invalid_argument("Environment: initial cpus outside [0, max_cpus]");
  pops_.reserve(scenario_->trace.pop_count);
  for (int p = 0; p < scenario_->trace.pop_count; ++p) pops_.emplace_back(p, profile_, initial_cpus_);
  remote_counts_.assign(pops_.size(), 0);
}

SystemState Environment::reset() {
  if (scenario_->trace.empty()) throw std::invalid_argument("Environment::reset: empty trace");
  for (int p = 0; p < pop_count(); ++p) pops_[p] = PopQueue(p, profile_, initial_cpus_);
  remote_counts_.assign(pops_.size(), 0);
  cursor_ = 0;
  peeked_ = false;
  clock_s_ = scenario_->trace.events.front().t_s;
  return observe();
}

SystemState Environment::observe() const {
  SystemState s;
  s.clock_s = clock_s_;
  s.per_pop.reserve(pops_.size());
  for (const auto& p : pops_) s.per_pop.push_back({p.n_vehicles(), p.cpus()});
  return s;
}

std::optional<ArrivalView> Environment::peek_arrival() {
  if (done()) return std::nullopt;
  const auto& ev = scenario_->trace.events[cursor_];
  if (!peeked_) {
    clock_s_ = ev.t_s;
    for (std::size_t p = 0; p < pops_.size(); ++p) {
      pops_[p].expire(ev.t_s);
      remote_counts_[p] = pops_[p].n_remote();
    }
    peeked_ = true;
  }
  return ArrivalView{cursor_, ev.t_s, ev.pop, observe()};
}

StepOutcome Environment::step(const FullAction& action) {
  if (!peeked_) throw std::logic_error("Environment::step: peek_arrival() must precede step()");
  if (action.placement < 0 || action.placement >= pop_count())
    throw std::invalid_argument("Environment::step: invalid placement " + std::to_string(action.placement));
  if (static_cast<int>(action.deltas.size()) != pop_count())
    throw std::invalid_argument("Environment::step: expected one delta per PoP");

  const auto& ev = scenario_->trace.events[cursor_];
  const bool remote = action.placement != ev.pop;
  pops_[action.placement].admit(cursor_, scenario_->departure_s[cursor_], remote);
  remote_counts_[action.placement] = pops_[action.placement].n_remote();
  for (int p = 0; p < pop_count(); ++p) pops_[p].scale_by(action.deltas[p]);

  StepOutcome out;
  out.per_pop_rewards.reserve(pops_.size());
  double sum = 0.0;
  for (const auto& p : pops_) {
    const double r = per_pop_reward(p, reward_cfg_);
    out.per_pop_rewards.push_back(r);
    sum += r;
  }
  out.avg_reward = sum / static_cast<double>(pops_.size());
  out.vehicle_delay_ms =
      (remote ? reward_cfg_.transmission_ms : 0.0) + pops_[action.placement].proc_delay();

  ++cursor_;
  peeked_ = false;
  out.next_state = observe();
  out.done = done();
  return out;
}

EpisodeRecord run_episode(Environment& env, PlacementPolicy& placement, ScalingPolicy& scaling,
                          bool time_decisions) {
  using Clock = std::chrono::steady_clock;
  EpisodeRecord rec;
  rec.pop_count = env.pop_count();
  rec.pop_reward_sum.assign(env.pop_count(), 0.0);
  if (env.scenario().trace.empty()) return rec;

  env.reset();
  scaling.reset(env.pop_count());
  const auto n = env.scenario().size();
  rec.rewards.reserve(n);
  rec.vehicle_delay_ms.reserve(n);
  rec.origins.reserve(n);
  rec.placements.reserve(n);
  rec.cpus.reserve(n * env.pop_count());
  rec.vehicles.reserve(n * env.pop_count());
  rec.times_s.reserve(n);
  if (time_decisions) rec.decision_ns.reserve(n);

  while (auto arrival = env.peek_arrival()) {
    FullAction action;
    try {
      const DecisionContext ctx{arrival->state, arrival->origin, arrival->t_s, env.remote_counts()};
      const auto start = time_decisions ? Clock::now() : Clock::time_point{};
      action.placement = placement.place(ctx);
      action.deltas = scaling.scale(ctx, action.placement);
      if (time_decisions)
        rec.decision_ns.push_back(
            std::chrono::duration<double, std::nano>(Clock::now() - start).count());
    } catch (const std::exception& e) {
      throw std::runtime_error("agent '" + scaling.name() + "' failed at step " +
                               std::to_string(arrival->index) + ": " + e.what());
    }
    const auto out = env.step(action);
    rec.rewards.push_back(out.avg_reward);
    rec.total_reward += out.avg_reward;
    rec.vehicle_delay_ms.push_back(out.vehicle_delay_ms);
    rec.times_s.push_back(arrival->t_s);
    rec.origins.push_back(arrival->origin);
    rec.placements.push_back(action.placement);
    for (int p = 0; p < env.pop_count(); ++p) {
      rec.cpus.push_back(out.next_state.per_pop[p].cpus);
      rec.vehicles.push_back(out.next_state.per_pop[p].n_vehicles);
      rec.pop_reward_sum[p] += out.per_pop_rewards[p];
    }
  }
  return rec;
}

void write_episode_csv(const EpisodeRecord& rec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto pops = static_cast<std::size_t>(rec.pop_count);
  out << "step,t_s,origin_pop,placed_pop,delay_ms,avg_reward";
  for (std::size_t p = 0; p < pops; ++p) out << ",c_" << p;
  for (std::size_t p = 0; p < pops; ++p) out << ",n_" << p;
  out << ",decision_us\n";
  auto num = [](double x) {
    if (is_overload(x)) return std::string("inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (std::size_t s = 0; s < rec.steps(); ++s) {
    out << s << ',' << num(rec.times_s[s]) << ',' << rec.origins[s] << ',' << rec.placements[s] << ','
        << num(rec.vehicle_delay_ms[s]) << ',' << num(rec.rewards[s]);
    for (std::size_t p = 0; p < pops; ++p) out << ',' << rec.cpus[s * pops + p];
    for (std::size_t p = 0; p < pops; ++p) out << ',' << rec.vehicles[s * pops + p];
    out << ',';
    if (s < rec.decision_ns.size()) out << num(rec.decision_ns[s] / 1e3);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace v2n
