#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "v2n/queueing.hpp"
#include "v2n/traffic.hpp"

namespace v2n {

enum class RewardVariant { kBase, kTruncNorm };

struct RewardConfig {
  double d_tgt_ms = 50.0;
  double transmission_ms = 20.0;
  RewardVariant variant = RewardVariant::kBase;
  double sigma_ms = 10.0;  // only used by kTruncNorm

  void validate() const;
};

/// (d/d_tgt) * exp(-((d/d_tgt)^2 - 1)/2); 0 for kOverload. Peaks at 1 when d = d_tgt.
double reward_base(double d_ms, double d_tgt_ms);

/// K that joins the truncated-normal tail to reward_base at d_tgt:
/// K = sigma*sqrt(2*pi)*(1 - Phi(-d_tgt/sigma)) * reward_base(d_tgt, d_tgt).
double continuity_scale(double d_tgt_ms, double sigma_ms);

/// reward_base below d_tgt, K-scaled normal density truncated to [0, inf) above it.
double reward_truncnorm(double d_ms, double d_tgt_ms, double sigma_ms);

double reward(double d_ms, const RewardConfig& cfg);

/// Reward of one PoP given its CPU count and assigned vehicles.
/// Idle with no CPUs scores 1; idle with CPUs is scored at the bare service
/// time 1/mu(c); otherwise the processing delay plus the transmission surcharge
/// weighted by the share of remote vehicles.
double per_pop_reward(const ServiceProfile& profile, int cpus, int n_vehicles, int n_remote,
                      const RewardConfig& cfg);
double per_pop_reward(const PopQueue& pop, const RewardConfig& cfg);

struct PopObservation {
  int n_vehicles = 0;
  int cpus = 0;
  bool operator==(const PopObservation&) const = default;
};

/// MDP observation: (N_p, C_p) for every PoP.
struct SystemState {
  std::vector<PopObservation> per_pop;
  double clock_s = 0.0;

  int pop_count() const { return static_cast<int>(per_pop.size()); }
  /// Interleaved N_1, C_1, ..., N_P, C_P.
  std::vector<int> interleaved() const;
  bool operator==(const SystemState&) const = default;
};

struct FullAction {
  PopId placement = 0;
  std::vector<int> deltas;  // CPU increment per PoP
};

struct StepOutcome {
  SystemState next_state;
  double avg_reward = 0.0;
  std::vector<double> per_pop_rewards;
  double vehicle_delay_ms = 0.0;
  bool done = false;
};

/// A trace plus the departure time of every vehicle in it. Dwell times are
/// drawn once, in arrival order, so every agent (and the oracle) sees the same
/// departures.
struct Scenario {
  TrafficTrace trace;
  std::vector<double> departure_s;
  std::uint64_t dwell_seed = 0;

  std::size_t size() const { return trace.size(); }
  Scenario prefix(std::size_t n) const;
};

/// Departure T_v = t_v + dwell_mean * r_v with r_v ~ Exp(1).
Scenario make_scenario(TrafficTrace trace, std::uint64_t dwell_seed, double dwell_mean_s = 30.0);

struct ArrivalView {
  std::size_t index = 0;
  double t_s = 0.0;
  PopId origin = 0;
  SystemState state;
};

class Environment {
 public:
  Environment(std::shared_ptr<const Scenario> scenario, std::shared_ptr<const ServiceProfile> profile,
              RewardConfig reward_cfg, int initial_cpus = 1);

  /// All PoPs back to initial_cpus with no vehicles; clock at the first arrival.
  /// Throws std::invalid_argument for an empty trace.
  SystemState reset();

  /// Expires departed vehicles and reports the next arrival with the post-expiry
  /// state. Idempotent until step(). Empty optional once the trace is exhausted.
  std::optional<ArrivalView> peek_arrival();

  /// Places the peeked vehicle, applies the clamped CPU deltas, and scores every PoP.
  StepOutcome step(const FullAction& action);

  SystemState observe() const;
  bool done() const { return cursor_ >= scenario_->size(); }
  int pop_count() const { return static_cast<int>(pops_.size()); }
  const std::vector<PopQueue>& pops() const { return pops_; }
  const ServiceProfile& profile() const { return *profile_; }
  const RewardConfig& reward_config() const { return reward_cfg_; }
  const Scenario& scenario() const { return *scenario_; }
  std::span<const int> remote_counts() const { return remote_counts_; }

 private:
  std::shared_ptr<const Scenario> scenario_;
  std::shared_ptr<const ServiceProfile> profile_;
  RewardConfig reward_cfg_;
  int initial_cpus_;
  std::vector<PopQueue> pops_;
  std::vector<int> remote_counts_;
  std::size_t cursor_ = 0;
  bool peeked_ = false;
  double clock_s_ = 0.0;
};

/// Everything an agent may look at when a vehicle arrives.
struct DecisionContext {
  const SystemState& state;
  PopId origin;
  double now_s;
  std::span<const int> remote_counts;  // remote vehicles currently served per PoP
};

class PlacementPolicy {
 public:
  virtual ~PlacementPolicy() = default;
  virtual PopId place(const DecisionContext& ctx) = 0;
};

class ScalingPolicy {
 public:
  virtual ~ScalingPolicy() = default;
  virtual std::string name() const = 0;
  /// Called before every episode.
  virtual void reset(int /*pop_count*/) {}
  /// CPU increments for every PoP, given the placement chosen for this arrival.
  virtual std::vector<int> scale(const DecisionContext& ctx, PopId placement) = 0;
};

struct EpisodeRecord {
  std::vector<double> rewards;        // avg_reward per step
  std::vector<double> vehicle_delay_ms;
  std::vector<double> times_s;
  std::vector<PopId> origins;
  std::vector<PopId> placements;
  std::vector<int> cpus;              // post-action CPU vector per step, row-major (steps x P)
  std::vector<int> vehicles;          // post-action N per PoP, same layout
  std::vector<double> pop_reward_sum; // per PoP
  std::vector<double> decision_ns;    // placement + scaling wall time per step
  double total_reward = 0.0;
  int pop_count = 0;

  std::size_t steps() const { return rewards.size(); }
  double mean_reward() const { return rewards.empty() ? 0.0 : total_reward / static_cast<double>(steps()); }
};

/// Drives peek/decide/step until the trace is exhausted. Exceptions from the
/// agents are rethrown as std::runtime_error naming the step index.
EpisodeRecord run_episode(Environment& env, PlacementPolicy& placement, ScalingPolicy& scaling,
                          bool time_decisions = true);

/// Columns: step,t_s,origin_pop,placed_pop,delay_ms,avg_reward,c_0..,n_0..,decision_us.
/// decision_us is empty when the episode was not timed.
void write_episode_csv(const EpisodeRecord& rec, const std::filesystem::path& path);

}  // namespace v2n
