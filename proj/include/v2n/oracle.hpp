#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2n/environment.hpp"

namespace v2n {

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The first V arrivals of a scenario with their pre-drawn departures.
struct OracleInstance {
  std::shared_ptr<const Scenario> scenario;
  std::shared_ptr<const ServiceProfile> profile;  // truncated to max_cpus
  RewardConfig reward_cfg;
  std::uint64_t budget = 10'000'000;

  int pop_count() const { return scenario->trace.pop_count; }
  int max_cpus() const { return profile->max_cpus(); }
  std::size_t size() const { return scenario->size(); }
  std::string digest() const;
};

/// max_cpus = -1 keeps the full profile.
OracleInstance make_oracle_instance(const Scenario& scenario, std::size_t v, const ServiceProfile& profile,
                                    const RewardConfig& reward_cfg, int max_cpus = -1,
                                    std::uint64_t budget = 10'000'000);

/// Total reward is the sum over arrivals of the PoP-averaged reward, the same
/// quantity an Environment episode accumulates.
struct OracleSolution {
  std::vector<PopId> placements;  // per arrival
  std::vector<int> cpus;          // per arrival, row-major (V x P)
  double total_reward = 0.0;
  std::uint64_t evaluated = 0;    // placement vectors (solve) or joint actions (naive)
};

/// Enumerates every placement vector; CPUs are the per-(PoP, arrival) argmax.
/// Ties go to the lexicographically smallest placement vector, then the
/// smallest C. Throws BudgetExceeded when P^V > budget. Runs in parallel.
OracleSolution solve(const OracleInstance& inst);
OracleSolution solve_serial(const OracleInstance& inst);

/// Brute force over placement x full CPU vector for every arrival. Throws
/// BudgetExceeded when (P * (max_cpus+1)^P)^V > budget.
OracleSolution naive_enumerate(const OracleInstance& inst);

/// 100 * (optimal - agent) / optimal, floored at 0. Throws for optimal <= 0.
double optimality_gap(double agent_total, double optimal_total);

/// Replays a fixed schedule (typically an oracle solution) through the
/// Environment interfaces.
class ReplayPlacement final : public PlacementPolicy {
 public:
  explicit ReplayPlacement(std::vector<PopId> placements) : placements_(std::move(placements)) {}
  PopId place(const DecisionContext& ctx) override;

 private:
  std::vector<PopId> placements_;
  std::size_t next_ = 0;
};

class ReplayScaler final : public ScalingPolicy {
 public:
  ReplayScaler(std::vector<int> cpus, int pop_count) : cpus_(std::move(cpus)), pop_count_(pop_count) {}
  std::string name() const override { return "replay"; }
  void reset(int pop_count) override;
  std::vector<int> scale(const DecisionContext& ctx, PopId placement) override;

 private:
  std::vector<int> cpus_;
  int pop_count_;
  std::size_t next_ = 0;
};

}  // namespace v2n
