#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "v2n/agents.hpp"
#include "v2n/ddpg.hpp"
#include "v2n/environment.hpp"
#include "v2n/traffic.hpp"

namespace v2n {

inline constexpr int kConfigVersion = 1;

struct TimeWindow {
  double begin_s = 0.0;
  double end_s = 0.0;
};

struct AgentSpec {
  std::string type;  // CNST | PI | TES | DDPG
  std::string name;
  std::optional<std::vector<int>> cnst_cpus;  // CNST: searched on the training window when absent
  PiParams pi;
  TesParams tes;
  DdpgConfig ddpg;
  bool ddpg_seed_set = false;
  int episodes = 100;
  std::optional<std::filesystem::path> checkpoint;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> intensity_csv;
  SynthParams synth;
  std::optional<std::filesystem::path> profile_csv;
  std::optional<std::filesystem::path> traces_dir;  // read traces written by gen-trace instead of regenerating
  std::uint64_t seed_base = 1;
  int seed_count = 40;
  std::optional<TimeWindow> train_window;
  std::optional<TimeWindow> test_window;
  double train_fraction = 0.7;  // default split by expected arrival count
  int train_trace = 0;          // replication used for training and CNST search
  double dwell_mean_s = 30.0;
  int initial_cpus = 1;
  bool include_candidate = true;
  RewardConfig reward;
  std::vector<AgentSpec> agents;
  bool parallel = true;
  bool write_dumps = true;
  bool write_episodes = false;  // per-(agent, seed) episode CSVs, which carry timings

  std::size_t oracle_arrivals = 6;
  int oracle_max_cpus = -1;
  std::uint64_t oracle_budget = 10'000'000;
  int oracle_trace = 0;

  std::size_t bench_states = 10'000;

  /// Relative paths resolve against base_dir. Unknown keys are errors.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  /// Replaces the trace seed base; DDPG seeds not fixed in the file follow it.
  void override_seed(std::uint64_t seed);
  void validate() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Inputs derived from a config: intensity, profile, split and trace replications.
struct Workload {
  IntensityTable table;
  std::shared_ptr<const ServiceProfile> profile;
  TimeWindow train;
  TimeWindow test;
  std::vector<TrafficTrace> traces;  // full horizon, seeds seed_base .. seed_base+count-1

  int pop_count() const { return table.pop_count(); }
};

Workload build_workload(const ExperimentConfig& cfg);

/// Boundary at which the expected arrival count reaches `fraction`, snapped to
/// a window edge. Train is [start, boundary), test is [boundary, end).
std::pair<TimeWindow, TimeWindow> split_by_expected_arrivals(const IntensityTable& table, double fraction);

/// Departure draws for a trace are seeded from the trace seed.
std::uint64_t dwell_seed_for(std::uint64_t trace_seed);
std::shared_ptr<const Scenario> window_scenario(const TrafficTrace& trace, const TimeWindow& w, double dwell_mean_s);

struct AgentEntry {
  std::string name;
  std::function<std::unique_ptr<ScalingPolicy>()> make;
};

struct AgentRun {
  std::string agent;
  std::uint64_t seed = 0;
  EpisodeRecord record;
};

struct PopMetrics {
  double mean_reward = 0.0;
  double mean_cpus = 0.0;
  std::size_t vehicles = 0;
  double violation_fraction = 0.0;
};

struct AgentMetrics {
  std::string name;
  double mean_reward = 0.0;  // mean over traces of the per-trace mean reward
  double std_reward = 0.0;   // sample standard deviation across traces
  double mean_active_cpus = 0.0;  // mean over steps of the total CPU count
  double violation_fraction = 0.0;
  std::size_t vehicles = 0;
  std::vector<PopMetrics> per_pop;
  double latency_mean_us = 0.0;
  double latency_p50_us = 0.0;
  double latency_p99_us = 0.0;
};

struct EvaluationResult {
  std::vector<AgentRun> runs;  // ordered by (agent, trace)
  std::vector<AgentMetrics> metrics;
};

/// Runs every agent on every scenario with greedy placement. Each (agent,
/// scenario) pair gets its own environment and agent instance; the parallel
/// and serial paths produce identical data.
EvaluationResult evaluate_agents(const std::vector<AgentEntry>& agents,
                                 const std::vector<std::shared_ptr<const Scenario>>& scenarios,
                                 std::shared_ptr<const ServiceProfile> profile, const RewardConfig& reward_cfg,
                                 int initial_cpus, bool include_candidate, bool parallel);

AgentMetrics summarize(const std::string& name, const std::vector<const EpisodeRecord*>& records,
                       const RewardConfig& reward_cfg);

double percentile(std::vector<double> values, double q);

/// Agents of a config, with DDPG checkpoints looked up in `dir` unless the spec names one.
std::vector<AgentEntry> build_agents(const ExperimentConfig& cfg, const Workload& w, const std::filesystem::path& dir);

// Subcommands. Each writes into `out` and returns a JSON summary.
nlohmann::json cmd_gen_trace(const ExperimentConfig& cfg, const std::filesystem::path& out);
nlohmann::json cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out);
nlohmann::json cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out);
nlohmann::json cmd_oracle(const ExperimentConfig& cfg, const std::filesystem::path& out);
nlohmann::json cmd_bench(const ExperimentConfig& cfg, const std::filesystem::path& out);

}  // namespace v2n
