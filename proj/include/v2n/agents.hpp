#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "v2n/environment.hpp"

namespace v2n {

// ---------------------------------------------------------------------------
// Placement

/// argmin_p (l(origin, p) + E[d_p]) with l = 0 locally and transmission_ms
/// otherwise. E[d_p] is evaluated with the arriving vehicle included when
/// include_candidate is set. Overloaded PoPs rank last; equal costs prefer the
/// origin, then the lowest index.
PopId greedy_place(const SystemState& state, PopId origin, const ServiceProfile& profile,
                   double transmission_ms, bool include_candidate = true);

class GreedyPlacement final : public PlacementPolicy {
 public:
  GreedyPlacement(std::shared_ptr<const ServiceProfile> profile, double transmission_ms,
                  bool include_candidate = true)
      : profile_(std::move(profile)), transmission_ms_(transmission_ms), include_candidate_(include_candidate) {}

  PopId place(const DecisionContext& ctx) override {
    return greedy_place(ctx.state, ctx.origin, *profile_, transmission_ms_, include_candidate_);
  }

 private:
  std::shared_ptr<const ServiceProfile> profile_;
  double transmission_ms_;
  bool include_candidate_;
};

/// Observation after the arriving vehicle is counted at `placement`.
SystemState with_placement(const SystemState& state, PopId placement);

// ---------------------------------------------------------------------------
// CNST

/// Holds every PoP at a fixed CPU count.
class ConstantScaler final : public ScalingPolicy {
 public:
  explicit ConstantScaler(std::vector<int> cpus) : cpus_(std::move(cpus)) {}
  std::string name() const override { return "CNST"; }
  std::vector<int> scale(const DecisionContext& ctx, PopId placement) override;
  const std::vector<int>& cpus() const { return cpus_; }

 private:
  std::vector<int> cpus_;
};

struct CnstSearchResult {
  std::vector<int> cpus;
  double total_reward = 0.0;
  std::size_t candidates = 0;
};

struct CnstSearchOptions {
  int max_cpus = -1;  // -1: profile max
  /// Searches larger than (max_cpus+1)^5 need this set.
  bool allow_large = false;
  int initial_cpus = 1;
  bool include_candidate = true;
};

/// Simulates every constant CPU vector in {0..max_cpus}^P with greedy
/// placement on the scenario and returns the one with the highest total
/// reward (lexicographically smallest on ties). Candidates run in parallel.
CnstSearchResult cnst_search(std::shared_ptr<const Scenario> scenario,
                             std::shared_ptr<const ServiceProfile> profile,
                             const RewardConfig& reward_cfg, const CnstSearchOptions& opts = {});

/// Serial reference for cnst_search().
CnstSearchResult cnst_search_serial(std::shared_ptr<const Scenario> scenario,
                                    std::shared_ptr<const ServiceProfile> profile,
                                    const RewardConfig& reward_cfg, const CnstSearchOptions& opts = {});

// ---------------------------------------------------------------------------
// PI

struct PiParams {
  double alpha = 4.0;
  double beta = 0.0;
  double rho_tgt = 0.7;
  void validate() const;
};

/// Load substituted for an overloaded PoP so the control signal stays finite.
inline constexpr double kPiOverloadLoad = 2.0;

/// Delta = alpha*(rho - rho_tgt) + beta*(rho - rho_prev); +1 if Delta > 1,
/// -1 if Delta < -1, else 0.
int pi_step(double rho_now, double rho_prev, const PiParams& params);

/// Per-PoP PI controller on the post-placement load.
class PiScaler final : public ScalingPolicy {
 public:
  PiScaler(std::shared_ptr<const ServiceProfile> profile, PiParams params);
  std::string name() const override { return "PI"; }
  void reset(int pop_count) override;
  std::vector<int> scale(const DecisionContext& ctx, PopId placement) override;

 private:
  std::shared_ptr<const ServiceProfile> profile_;
  PiParams params_;
  std::vector<double> rho_prev_;
  std::vector<bool> primed_;
};

// ---------------------------------------------------------------------------
// TES

struct TesParams {
  double alpha = 0.5;
  double beta = 0.1;
  double gamma = 0.1;
  double interval_s = 1.0;       // m
  int window = 1;                // W
  int season_length = 86400;     // L, in intervals (one day at m = 1 s)
  void validate() const;
};

/// Additive Holt-Winters over per-PoP flow counts (vehicles placed per interval).
class TesState {
 public:
  TesState(int pop_count, TesParams params);

  /// Records a placement at time now. Closes every interval boundary passed
  /// since the previous call (empty intervals included) and runs the
  /// level/trend/season recurrences on them. Throws std::invalid_argument if
  /// time goes backwards.
  void observe(double now_s, PopId placed_pop);

  /// Closes intervals up to now without recording a placement.
  void advance(double now_s);

  /// W-step-ahead forecasts f_{t+1..t+W} for one PoP, floored at 0. Before any
  /// interval has closed this is all zeros.
  std::vector<double> forecast(PopId pop) const;

  std::size_t closed_intervals() const { return closed_; }
  double level(PopId pop) const { return pops_[pop].level; }
  double trend(PopId pop) const { return pops_[pop].trend; }
  int current_count(PopId pop) const { return pops_[pop].count; }
  const TesParams& params() const { return params_; }

 private:
  struct PopSeries {
    double level = 0.0;
    double trend = 0.0;
    std::vector<double> season;  // ring of length L
    int count = 0;               // placements in the open interval
  };
  void close_interval();

  TesParams params_;
  std::vector<PopSeries> pops_;
  std::size_t closed_ = 0;  // number of closed intervals t = 0, 1, ...
  std::optional<double> interval_start_;
  double last_time_ = -std::numeric_limits<double>::infinity();
};

/// Smallest C in [0, max_cpus] whose processing delay for n vehicles fits in
/// d_tgt (minus the transmission surcharge when a remote vehicle is present);
/// max_cpus when none does.
int tes_scale(int n_vehicles, const ServiceProfile& profile, const RewardConfig& cfg, bool remote_present);

/// TES scaling: every W*m seconds forecast the flow and size each PoP for its
/// current vehicles plus the largest forecast flow.
class TesScaler final : public ScalingPolicy {
 public:
  TesScaler(std::shared_ptr<const ServiceProfile> profile, RewardConfig cfg, TesParams params = {});
  std::string name() const override { return "TES"; }
  void reset(int pop_count) override;
  std::vector<int> scale(const DecisionContext& ctx, PopId placement) override;
  const TesState& state() const { return *tes_; }

 private:
  std::shared_ptr<const ServiceProfile> profile_;
  RewardConfig cfg_;
  TesParams params_;
  std::optional<TesState> tes_;
  std::optional<double> last_forecast_s_;
  std::vector<int> target_;
};

}  // namespace v2n
