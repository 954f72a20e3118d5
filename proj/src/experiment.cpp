#include "v2n/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "v2n/oracle.hpp"
#include "v2n/rng.hpp"

namespace v2n {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() || base.empty() ? p : base / p; }

TimeWindow window_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw std::invalid_argument(where + " must be [begin_s, end_s]");
  return {j[0].get<double>(), j[1].get<double>()};
}

std::string variant_name(RewardVariant v) { return v == RewardVariant::kBase ? "base" : "truncnorm"; }

RewardVariant parse_variant(const std::string& s) {
  if (s == "base") return RewardVariant::kBase;
  if (s == "truncnorm") return RewardVariant::kTruncNorm;
  throw std::invalid_argument("reward.variant must be 'base' or 'truncnorm', got '" + s + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string num(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

json agent_to_json(const AgentSpec& a) {
  json j{{"type", a.type}, {"name", a.name}};
  if (a.type == "CNST" && a.cnst_cpus) j["cpus"] = *a.cnst_cpus;
  if (a.type == "PI") {
    j["alpha"] = a.pi.alpha;
    j["beta"] = a.pi.beta;
    j["rho_tgt"] = a.pi.rho_tgt;
  }
  if (a.type == "TES") {
    j["alpha"] = a.tes.alpha;
    j["beta"] = a.tes.beta;
    j["gamma"] = a.tes.gamma;
    j["interval_s"] = a.tes.interval_s;
    j["window"] = a.tes.window;
    j["season_length"] = a.tes.season_length;
  }
  if (a.type == "DDPG") {
    j.update(to_json(a.ddpg));
    j["episodes"] = a.episodes;
    if (a.checkpoint) j["checkpoint"] = a.checkpoint->string();
  }
  return j;
}

AgentSpec agent_from_json(const json& j, int pop_count, const fs::path& base) {
  if (!j.is_object() || !j.contains("type")) throw std::invalid_argument("agents[]: each entry needs a 'type'");
  AgentSpec a;
  a.type = j.at("type").get<std::string>();
  const std::string where = "agent " + a.type;
  if (a.type == "CNST") {
    check_keys(j, {"type", "name", "cpus"}, where);
    if (j.contains("cpus")) a.cnst_cpus = j.at("cpus").get<std::vector<int>>();
  } else if (a.type == "PI") {
    check_keys(j, {"type", "name", "alpha", "beta", "rho_tgt"}, where);
    read_opt(j, "alpha", a.pi.alpha);
    read_opt(j, "beta", a.pi.beta);
    read_opt(j, "rho_tgt", a.pi.rho_tgt);
    a.pi.validate();
  } else if (a.type == "TES") {
    check_keys(j, {"type", "name", "alpha", "beta", "gamma", "interval_s", "window", "season_length"}, where);
    read_opt(j, "alpha", a.tes.alpha);
    read_opt(j, "beta", a.tes.beta);
    read_opt(j, "gamma", a.tes.gamma);
    read_opt(j, "interval_s", a.tes.interval_s);
    read_opt(j, "window", a.tes.window);
    read_opt(j, "season_length", a.tes.season_length);
    a.tes.validate();
  } else if (a.type == "DDPG") {
    json rest = j;
    for (const char* k : {"type", "name", "episodes", "checkpoint"}) rest.erase(k);
    a.ddpg = ddpg_config_from_json(rest);
    a.ddpg_seed_set = rest.contains("seed");
    read_opt(j, "episodes", a.episodes);
    if (a.episodes < 1) throw std::invalid_argument(where + ": episodes must be >= 1");
    if (j.contains("checkpoint")) a.checkpoint = resolve(base, j.at("checkpoint").get<std::string>());
  } else {
    throw std::invalid_argument("unknown agent type '" + a.type + "' (CNST|PI|TES|DDPG)");
  }
  if (j.contains("name")) {
    a.name = j.at("name").get<std::string>();
  } else if (a.type == "DDPG") {
    a.name = a.ddpg.scope == DdpgScope::kPerPop ? "DDPG-1" : "DDPG-" + std::to_string(pop_count);
  } else {
    a.name = a.type;
  }
  if (a.name.empty() || a.name.find_first_of("/\\ ,") != std::string::npos)
    throw std::invalid_argument("agent name '" + a.name + "' must be non-empty without spaces, commas or slashes");
  return a;
}

std::vector<AgentSpec> default_agents(int pop_count) {
  std::vector<AgentSpec> out(5);
  out[0].type = out[0].name = "CNST";
  out[1].type = out[1].name = "PI";
  out[2].type = out[2].name = "TES";
  out[3].type = "DDPG";
  out[3].name = "DDPG-1";
  out[4].type = "DDPG";
  out[4].ddpg.scope = DdpgScope::kGlobal;
  out[4].name = "DDPG-" + std::to_string(pop_count);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base) {
  check_keys(j, {"version", "intensity", "profile", "traces_dir", "seeds", "split", "train_trace", "dwell_mean_s",
                 "initial_cpus", "placement", "reward", "agents", "evaluation", "oracle", "bench"},
             "config");
  ExperimentConfig c;
  if (!j.contains("version")) throw std::invalid_argument("config: missing 'version'");
  if (j.at("version").get<int>() != kConfigVersion)
    throw std::invalid_argument("config: unsupported version " + j.at("version").dump() + " (expected " +
                                std::to_string(kConfigVersion) + ")");

  if (j.contains("intensity")) {
    const auto& in = j.at("intensity");
    check_keys(in, {"csv", "synth"}, "intensity");
    if (in.contains("csv") == in.contains("synth"))
      throw std::invalid_argument("intensity: give exactly one of 'csv' or 'synth'");
    if (in.contains("csv")) {
      c.intensity_csv = resolve(base, in.at("csv").get<std::string>());
    } else {
      const auto& s = in.at("synth");
      check_keys(s, {"pops", "days", "peak_veh_per_hour", "trough_veh_per_hour", "phase_per_pop_hours", "peak_hour",
                     "noise", "window_seconds", "seed"},
                 "intensity.synth");
      read_opt(s, "pops", c.synth.pops);
      read_opt(s, "days", c.synth.days);
      read_opt(s, "peak_veh_per_hour", c.synth.peak_veh_per_hour);
      read_opt(s, "trough_veh_per_hour", c.synth.trough_veh_per_hour);
      read_opt(s, "phase_per_pop_hours", c.synth.phase_per_pop_hours);
      read_opt(s, "peak_hour", c.synth.peak_hour);
      read_opt(s, "noise", c.synth.noise);
      read_opt(s, "window_seconds", c.synth.window_seconds);
      read_opt(s, "seed", c.synth.seed);
    }
  }
  if (j.contains("profile")) c.profile_csv = resolve(base, j.at("profile").get<std::string>());
  if (j.contains("traces_dir")) c.traces_dir = resolve(base, j.at("traces_dir").get<std::string>());
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    check_keys(s, {"base", "count"}, "seeds");
    read_opt(s, "base", c.seed_base);
    read_opt(s, "count", c.seed_count);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, {"train", "test", "train_fraction"}, "split");
    if (s.contains("train") != s.contains("test"))
      throw std::invalid_argument("split: give both 'train' and 'test' windows or neither");
    if (s.contains("train")) {
      c.train_window = window_from_json(s.at("train"), "split.train");
      c.test_window = window_from_json(s.at("test"), "split.test");
    }
    read_opt(s, "train_fraction", c.train_fraction);
  }
  read_opt(j, "train_trace", c.train_trace);
  read_opt(j, "dwell_mean_s", c.dwell_mean_s);
  read_opt(j, "initial_cpus", c.initial_cpus);
  if (j.contains("placement")) {
    check_keys(j.at("placement"), {"include_candidate"}, "placement");
    read_opt(j.at("placement"), "include_candidate", c.include_candidate);
  }
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    check_keys(r, {"d_tgt_ms", "transmission_ms", "variant", "sigma_ms"}, "reward");
    read_opt(r, "d_tgt_ms", c.reward.d_tgt_ms);
    read_opt(r, "transmission_ms", c.reward.transmission_ms);
    read_opt(r, "sigma_ms", c.reward.sigma_ms);
    if (r.contains("variant")) c.reward.variant = parse_variant(r.at("variant").get<std::string>());
  }
  if (j.contains("evaluation")) {
    check_keys(j.at("evaluation"), {"parallel", "dumps", "episodes"}, "evaluation");
    read_opt(j.at("evaluation"), "parallel", c.parallel);
    read_opt(j.at("evaluation"), "dumps", c.write_dumps);
    read_opt(j.at("evaluation"), "episodes", c.write_episodes);
  }
  if (j.contains("oracle")) {
    const auto& o = j.at("oracle");
    check_keys(o, {"arrivals", "max_cpus", "budget", "trace"}, "oracle");
    read_opt(o, "arrivals", c.oracle_arrivals);
    read_opt(o, "max_cpus", c.oracle_max_cpus);
    read_opt(o, "budget", c.oracle_budget);
    read_opt(o, "trace", c.oracle_trace);
  }
  if (j.contains("bench")) {
    check_keys(j.at("bench"), {"states"}, "bench");
    read_opt(j.at("bench"), "states", c.bench_states);
  }

  const int pops = c.intensity_csv ? load_intensity_csv(*c.intensity_csv).pop_count() : c.synth.pops;
  if (j.contains("agents")) {
    if (!j.at("agents").is_array() || j.at("agents").empty())
      throw std::invalid_argument("agents must be a non-empty array");
    for (const auto& a : j.at("agents")) c.agents.push_back(agent_from_json(a, pops, base));
  } else {
    c.agents = default_agents(pops);
  }
  for (auto& a : c.agents)
    if (a.type == "DDPG" && !a.ddpg_seed_set) a.ddpg.seed = c.seed_base;
  c.validate();
  return c;
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  seed_base = seed;
  for (auto& a : agents)
    if (a.type == "DDPG" && !a.ddpg_seed_set) a.ddpg.seed = seed;
}

void ExperimentConfig::validate() const {
  if (seed_count < 1) throw std::invalid_argument("seeds.count must be >= 1");
  if (train_trace < 0 || train_trace >= seed_count) throw std::invalid_argument("train_trace must index a replication");
  if (oracle_trace < 0 || oracle_trace >= seed_count) throw std::invalid_argument("oracle.trace must index a replication");
  if (!(dwell_mean_s > 0.0)) throw std::invalid_argument("dwell_mean_s must be > 0");
  if (initial_cpus < 0) throw std::invalid_argument("initial_cpus must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("split.train_fraction must be in (0, 1)");
  if (train_window) {
    if (!(train_window->end_s > train_window->begin_s) || !(test_window->end_s > test_window->begin_s))
      throw std::invalid_argument("split windows must have end > begin");
    if (train_window->begin_s < test_window->end_s && test_window->begin_s < train_window->end_s)
      throw std::invalid_argument("split: train and test windows overlap");
  }
  if (bench_states < 1) throw std::invalid_argument("bench.states must be >= 1");
  reward.validate();
  std::set<std::string> names;
  for (const auto& a : agents)
    if (!names.insert(a.name).second) throw std::invalid_argument("duplicate agent name '" + a.name + "'");
}

json ExperimentConfig::to_json() const {
  json j;
  j["version"] = kConfigVersion;
  if (intensity_csv) {
    j["intensity"] = {{"csv", intensity_csv->string()}};
  } else {
    j["intensity"] = {{"synth",
                       {{"pops", synth.pops},
                        {"days", synth.days},
                        {"peak_veh_per_hour", synth.peak_veh_per_hour},
                        {"trough_veh_per_hour", synth.trough_veh_per_hour},
                        {"phase_per_pop_hours", synth.phase_per_pop_hours},
                        {"peak_hour", synth.peak_hour},
                        {"noise", synth.noise},
                        {"window_seconds", synth.window_seconds},
                        {"seed", synth.seed}}}};
  }
  if (profile_csv) j["profile"] = profile_csv->string();
  if (traces_dir) j["traces_dir"] = traces_dir->string();
  j["seeds"] = {{"base", seed_base}, {"count", seed_count}};
  json split{{"train_fraction", train_fraction}};
  if (train_window) {
    split["train"] = {train_window->begin_s, train_window->end_s};
    split["test"] = {test_window->begin_s, test_window->end_s};
  }
  j["split"] = split;
  j["train_trace"] = train_trace;
  j["dwell_mean_s"] = dwell_mean_s;
  j["initial_cpus"] = initial_cpus;
  j["placement"] = {{"include_candidate", include_candidate}};
  j["reward"] = {{"d_tgt_ms", reward.d_tgt_ms},
                 {"transmission_ms", reward.transmission_ms},
                 {"variant", variant_name(reward.variant)},
                 {"sigma_ms", reward.sigma_ms}};
  j["agents"] = json::array();
  for (const auto& a : agents) j["agents"].push_back(agent_to_json(a));
  j["evaluation"] = {{"parallel", parallel}, {"dumps", write_dumps}, {"episodes", write_episodes}};
  j["oracle"] = {{"arrivals", oracle_arrivals}, {"max_cpus", oracle_max_cpus}, {"budget", oracle_budget},
                 {"trace", oracle_trace}};
  j["bench"] = {{"states", bench_states}};
  return j;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Workload

std::pair<TimeWindow, TimeWindow> split_by_expected_arrivals(const IntensityTable& table, double fraction) {
  if (table.entries.empty()) throw std::invalid_argument("split: empty intensity table");
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split: train_fraction must be in (0, 1)");
  std::map<double, double> per_window;  // window start -> expected arrivals over all PoPs
  for (const auto& e : table.entries) per_window[e.window_start_s] += e.vehicles_per_hour * table.window_seconds / 3600.0;
  const double begin = per_window.begin()->first;
  const double end = per_window.rbegin()->first + table.window_seconds;
  double total = 0.0;
  for (const auto& [t, n] : per_window) total += n;
  double boundary = begin + (end - begin) * fraction;
  if (total > 0.0) {
    double acc = 0.0;
    for (const auto& [t, n] : per_window) {
      if (acc >= fraction * total) {
        boundary = t;
        break;
      }
      acc += n;
      boundary = t + table.window_seconds;
    }
  }
  boundary = std::clamp(boundary, begin + table.window_seconds, end - table.window_seconds);
  return {TimeWindow{begin, boundary}, TimeWindow{boundary, end}};
}

std::uint64_t dwell_seed_for(std::uint64_t trace_seed) { return derive_seed(trace_seed, {0xd3e11ULL}); }

std::shared_ptr<const Scenario> window_scenario(const TrafficTrace& trace, const TimeWindow& w, double dwell_mean_s) {
  return std::make_shared<const Scenario>(make_scenario(trace.window(w.begin_s, w.end_s), dwell_seed_for(trace.seed),
                                                        dwell_mean_s));
}

Workload build_workload(const ExperimentConfig& cfg) {
  Workload w;
  w.table = cfg.intensity_csv ? load_intensity_csv(*cfg.intensity_csv) : synth_intensity(cfg.synth);
  w.table.validate();
  auto profile = cfg.profile_csv ? load_profile_csv(*cfg.profile_csv) : default_profile();
  profile.validate();
  if (cfg.initial_cpus > profile.max_cpus()) throw std::invalid_argument("initial_cpus exceeds the profile's max_cpus");
  w.profile = std::make_shared<const ServiceProfile>(std::move(profile));
  if (cfg.train_window) {
    w.train = *cfg.train_window;
    w.test = *cfg.test_window;
  } else {
    std::tie(w.train, w.test) = split_by_expected_arrivals(w.table, cfg.train_fraction);
  }

  if (cfg.traces_dir) {
    const auto digest = w.table.digest();
    for (int i = 0; i < cfg.seed_count; ++i) {
      const auto seed = cfg.seed_base + static_cast<std::uint64_t>(i);
      const auto path = *cfg.traces_dir / ("trace_" + std::to_string(seed) + ".csv");
      auto t = read_trace(path);
      if (t.source_hash != digest)
        throw std::runtime_error(path.string() + " was generated from a different intensity table");
      if (t.seed != seed) throw std::runtime_error(path.string() + ": seed metadata does not match file name");
      w.traces.push_back(std::move(t));
    }
  } else {
    w.traces = cfg.parallel ? replicate(w.table, cfg.seed_base, cfg.seed_count)
                            : replicate_serial(w.table, cfg.seed_base, cfg.seed_count);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Evaluation

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

AgentMetrics summarize(const std::string& name, const std::vector<const EpisodeRecord*>& records,
                       const RewardConfig& reward_cfg) {
  AgentMetrics m;
  m.name = name;
  std::vector<double> per_trace;
  std::size_t steps = 0, violations = 0;
  double cpu_sum = 0.0;
  int pops = 0;
  for (const auto* r : records) pops = std::max(pops, r->pop_count);
  m.per_pop.assign(static_cast<std::size_t>(pops), PopMetrics{});
  std::vector<double> pop_reward(static_cast<std::size_t>(pops), 0.0), pop_cpu(static_cast<std::size_t>(pops), 0.0);
  std::vector<std::size_t> pop_viol(static_cast<std::size_t>(pops), 0);
  std::vector<double> latencies;

  for (const auto* r : records) {
    if (r->steps() > 0) per_trace.push_back(r->mean_reward());
    for (std::size_t s = 0; s < r->steps(); ++s) {
      const bool violated = r->vehicle_delay_ms[s] > reward_cfg.d_tgt_ms;
      violations += violated ? 1 : 0;
      const auto placed = static_cast<std::size_t>(r->placements[s]);
      m.per_pop[placed].vehicles += 1;
      pop_viol[placed] += violated ? 1 : 0;
      for (int p = 0; p < r->pop_count; ++p) {
        const int c = r->cpus[s * static_cast<std::size_t>(r->pop_count) + static_cast<std::size_t>(p)];
        cpu_sum += c;
        pop_cpu[static_cast<std::size_t>(p)] += c;
      }
    }
    for (int p = 0; p < r->pop_count; ++p) pop_reward[static_cast<std::size_t>(p)] += r->pop_reward_sum[static_cast<std::size_t>(p)];
    steps += r->steps();
    latencies.insert(latencies.end(), r->decision_ns.begin(), r->decision_ns.end());
  }

  if (!per_trace.empty()) {
    m.mean_reward = std::accumulate(per_trace.begin(), per_trace.end(), 0.0) / static_cast<double>(per_trace.size());
    if (per_trace.size() > 1) {
      double ss = 0.0;
      for (double x : per_trace) ss += (x - m.mean_reward) * (x - m.mean_reward);
      m.std_reward = std::sqrt(ss / static_cast<double>(per_trace.size() - 1));
    }
  }
  m.vehicles = steps;
  if (steps > 0) {
    m.mean_active_cpus = cpu_sum / static_cast<double>(steps);
    m.violation_fraction = static_cast<double>(violations) / static_cast<double>(steps);
    for (std::size_t p = 0; p < m.per_pop.size(); ++p) {
      m.per_pop[p].mean_reward = pop_reward[p] / static_cast<double>(steps);
      m.per_pop[p].mean_cpus = pop_cpu[p] / static_cast<double>(steps);
      if (m.per_pop[p].vehicles > 0)
        m.per_pop[p].violation_fraction = static_cast<double>(pop_viol[p]) / static_cast<double>(m.per_pop[p].vehicles);
    }
  }
  if (!latencies.empty()) {
    m.latency_mean_us = std::accumulate(latencies.begin(), latencies.end(), 0.0) / static_cast<double>(latencies.size()) / 1e3;
    m.latency_p50_us = percentile(latencies, 0.50) / 1e3;
    m.latency_p99_us = percentile(latencies, 0.99) / 1e3;
  }
  return m;
}

EvaluationResult evaluate_agents(const std::vector<AgentEntry>& agents,
                                 const std::vector<std::shared_ptr<const Scenario>>& scenarios,
                                 std::shared_ptr<const ServiceProfile> profile, const RewardConfig& reward_cfg,
                                 int initial_cpus, bool include_candidate, bool parallel) {
  EvaluationResult res;
  const std::size_t n_traces = scenarios.size();
  const std::size_t n_tasks = agents.size() * n_traces;
  res.runs.resize(n_tasks);
  std::vector<std::string> errors(n_tasks);

  auto task = [&](std::size_t k) {
    const auto& agent = agents[k / n_traces];
    const auto& sc = scenarios[k % n_traces];
    try {
      auto scaler = agent.make();
      Environment env(sc, profile, reward_cfg, initial_cpus);
      GreedyPlacement placement(profile, reward_cfg.transmission_ms, include_candidate);
      res.runs[k].agent = agent.name;
      res.runs[k].seed = sc->trace.seed;
      res.runs[k].record = run_episode(env, placement, *scaler, true);
    } catch (const std::exception& e) {
      errors[k] = agent.name + " on trace " + std::to_string(sc->trace.seed) + ": " + e.what();
    }
  };

  if (parallel) {
    const auto n = static_cast<long long>(n_tasks);
#pragma omp parallel for schedule(dynamic, 1)
    for (long long k = 0; k < n; ++k) task(static_cast<std::size_t>(k));
  } else {
    for (std::size_t k = 0; k < n_tasks; ++k) task(k);
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("evaluation failed: " + e);

  for (std::size_t a = 0; a < agents.size(); ++a) {
    std::vector<const EpisodeRecord*> recs;
    for (std::size_t t = 0; t < n_traces; ++t) recs.push_back(&res.runs[a * n_traces + t].record);
    res.metrics.push_back(summarize(agents[a].name, recs, reward_cfg));
  }
  return res;
}

std::vector<AgentEntry> build_agents(const ExperimentConfig& cfg, const Workload& w, const fs::path& dir) {
  std::vector<AgentEntry> out;
  std::shared_ptr<const Scenario> train_sc;
  const auto profile = w.profile;
  for (const auto& spec : cfg.agents) {
    AgentEntry e;
    e.name = spec.name;
    if (spec.type == "CNST") {
      std::vector<int> cpus;
      if (spec.cnst_cpus) {
        cpus = *spec.cnst_cpus;
        if (static_cast<int>(cpus.size()) != w.pop_count())
          throw std::invalid_argument("CNST cpus must list one value per PoP");
        for (int c : cpus)
          if (c < 0 || c > profile->max_cpus()) throw std::invalid_argument("CNST cpus outside [0, max_cpus]");
      } else {
        if (!train_sc) train_sc = window_scenario(w.traces.at(static_cast<std::size_t>(cfg.train_trace)), w.train, cfg.dwell_mean_s);
        CnstSearchOptions o;
        o.initial_cpus = cfg.initial_cpus;
        o.include_candidate = cfg.include_candidate;
        cpus = (cfg.parallel ? cnst_search(train_sc, profile, cfg.reward, o)
                             : cnst_search_serial(train_sc, profile, cfg.reward, o))
                   .cpus;
      }
      e.make = [cpus] { return std::make_unique<ConstantScaler>(cpus); };
    } else if (spec.type == "PI") {
      const auto params = spec.pi;
      e.make = [profile, params] { return std::make_unique<PiScaler>(profile, params); };
    } else if (spec.type == "TES") {
      const auto params = spec.tes;
      const auto reward = cfg.reward;
      e.make = [profile, reward, params] { return std::make_unique<TesScaler>(profile, reward, params); };
    } else {
      const auto path = spec.checkpoint ? *spec.checkpoint : dir / ("checkpoint_" + spec.name + ".json");
      std::ifstream in(path);
      if (!in) throw std::runtime_error("missing checkpoint for " + spec.name + ": " + path.string());
      auto proto = std::make_shared<const DdpgScaler>(DdpgScaler::from_checkpoint(json::parse(in), profile));
      if (proto->pop_count() != w.pop_count())
        throw std::runtime_error("checkpoint " + path.string() + " was trained for a different PoP count");
      e.make = [proto] { return std::make_unique<DdpgScaler>(*proto); };
    }
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

json cmd_gen_trace(const ExperimentConfig& cfg, const fs::path& out) {
  ensure_dir(out);
  auto c = cfg;
  c.traces_dir.reset();
  const auto w = build_workload(c);
  write_intensity_csv(w.table, out / "intensity.csv");
  json files = json::array();
  for (const auto& t : w.traces) {
    const std::string name = "trace_" + std::to_string(t.seed) + ".csv";
    write_trace(t, out / name);
    files.push_back({{"seed", t.seed}, {"file", name}, {"events", t.size()}, {"digest", hex64(t.digest())}});
  }
  json manifest{{"version", kConfigVersion},
                {"intensity_digest", hex64(w.table.digest())},
                {"pop_count", w.pop_count()},
                {"rng", std::string(kRngAlgorithm)},
                {"seed_base", cfg.seed_base},
                {"count", cfg.seed_count},
                {"traces", files}};
  write_json(out / "manifest.json", manifest);
  return {{"traces", files.size()}, {"out", out.string()}};
}

json cmd_train(const ExperimentConfig& cfg, const fs::path& out) {
  std::vector<const AgentSpec*> learners;
  for (const auto& a : cfg.agents)
    if (a.type == "DDPG") learners.push_back(&a);
  if (learners.empty()) throw std::invalid_argument("train: no DDPG agents listed in the config");
  ensure_dir(out);
  const auto w = build_workload(cfg);
  const auto sc = window_scenario(w.traces.at(static_cast<std::size_t>(cfg.train_trace)), w.train, cfg.dwell_mean_s);
  if (sc->trace.empty()) throw std::invalid_argument("train: the training window holds no arrivals");

  json summary = json::array();
  json timing = json::array();
  for (const auto* spec : learners) {
    DdpgScaler scaler(w.profile, w.pop_count(), spec->ddpg);
    TrainOptions opts;
    opts.episodes = spec->episodes;
    opts.seed = spec->ddpg.seed;
    opts.initial_cpus = cfg.initial_cpus;
    opts.include_candidate = cfg.include_candidate;
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = train(scaler, sc, w.profile, cfg.reward, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_text(out / ("checkpoint_" + spec->name + ".json"), scaler.checkpoint().dump() + "\n");
    std::string curve = "episode,mean_reward\n";
    for (std::size_t e = 0; e < result.curve.size(); ++e) curve += std::to_string(e) + "," + num(result.curve[e]) + "\n";
    write_text(out / ("curve_" + spec->name + ".csv"), curve);
    summary.push_back({{"agent", spec->name}, {"episodes", result.curve.size()}, {"final_mean_reward", result.curve.back()}});
    timing.push_back({{"agent", spec->name}, {"seconds", secs}, {"steps", result.steps}});
  }
  write_json(out / "train_timing.json", {{"agents", timing}});
  return {{"agents", summary}};
}

json cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
  ensure_dir(out);
  const auto w = build_workload(cfg);
  const auto agents = build_agents(cfg, w, out);
  std::vector<std::shared_ptr<const Scenario>> scenarios;
  for (const auto& t : w.traces) scenarios.push_back(window_scenario(t, w.test, cfg.dwell_mean_s));

  const auto t0 = std::chrono::steady_clock::now();
  const auto res = evaluate_agents(agents, scenarios, w.profile, cfg.reward, cfg.initial_cpus, cfg.include_candidate,
                                   cfg.parallel);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t n_traces = scenarios.size();
  const int pops = w.pop_count();

  json report_agents = json::array();
  json timing_agents = json::array();
  std::string hist = "agent,bin_start_ms,count\n";
  std::string ecdf = "agent,total_cpus,cdf\n";
  std::string per_pop = "agent,pop,mean_reward,mean_cpus,vehicles,violation_fraction\n";
  for (std::size_t a = 0; a < agents.size(); ++a) {
    const auto& m = res.metrics[a];
    json pp = json::array();
    for (std::size_t p = 0; p < m.per_pop.size(); ++p) {
      const auto& q = m.per_pop[p];
      pp.push_back({{"pop", p}, {"mean_reward", q.mean_reward}, {"mean_cpus", q.mean_cpus}, {"vehicles", q.vehicles},
                    {"violation_fraction", q.violation_fraction}});
      per_pop += m.name + "," + std::to_string(p) + "," + num(q.mean_reward) + "," + num(q.mean_cpus) + "," +
                 std::to_string(q.vehicles) + "," + num(q.violation_fraction) + "\n";
    }
    report_agents.push_back({{"name", m.name},
                             {"mean_reward", m.mean_reward},
                             {"std_reward", m.std_reward},
                             {"mean_active_cpus", m.mean_active_cpus},
                             {"violation_fraction", m.violation_fraction},
                             {"vehicles", m.vehicles},
                             {"per_pop", pp}});
    timing_agents.push_back({{"name", m.name},
                             {"decision_mean_us", m.latency_mean_us},
                             {"decision_p50_us", m.latency_p50_us},
                             {"decision_p99_us", m.latency_p99_us}});

    std::map<long long, std::size_t> bins;
    std::size_t overload = 0;
    std::vector<std::size_t> cpu_hist(static_cast<std::size_t>(pops * w.profile->max_cpus() + 1), 0);
    std::size_t steps = 0;
    std::string delays = "seed,vehicle,origin,placement,delay_ms\n";
    std::string cpus = "seed,step,reward,total_cpus";
    for (int p = 0; p < pops; ++p) cpus += ",c" + std::to_string(p);
    cpus += "\n";
    for (std::size_t t = 0; t < n_traces; ++t) {
      const auto& run = res.runs[a * n_traces + t];
      const auto& r = run.record;
      const auto seed = std::to_string(run.seed);
      if (cfg.write_episodes) {
        ensure_dir(out / "episodes");
        write_episode_csv(r, out / "episodes" / (m.name + "_" + seed + ".csv"));
      }
      for (std::size_t s = 0; s < r.steps(); ++s) {
        const double d = r.vehicle_delay_ms[s];
        if (is_overload(d)) ++overload;
        else ++bins[static_cast<long long>(std::floor(d))];
        int total = 0;
        for (int p = 0; p < pops; ++p) total += r.cpus[s * static_cast<std::size_t>(pops) + static_cast<std::size_t>(p)];
        ++cpu_hist[static_cast<std::size_t>(total)];
        ++steps;
        if (cfg.write_dumps) {
          delays += seed + "," + std::to_string(s) + "," + std::to_string(r.origins[s]) + "," +
                    std::to_string(r.placements[s]) + "," + num(d) + "\n";
          cpus += seed + "," + std::to_string(s) + "," + num(r.rewards[s]) + "," + std::to_string(total);
          for (int p = 0; p < pops; ++p)
            cpus += "," + std::to_string(r.cpus[s * static_cast<std::size_t>(pops) + static_cast<std::size_t>(p)]);
          cpus += "\n";
        }
      }
    }
    if (cfg.write_dumps) {
      write_text(out / ("delays_" + m.name + ".csv"), delays);
      write_text(out / ("cpus_" + m.name + ".csv"), cpus);
    }
    if (!bins.empty())
      for (long long b = 0; b <= bins.rbegin()->first; ++b) {
        const auto it = bins.find(b);
        hist += m.name + "," + std::to_string(b) + "," + std::to_string(it == bins.end() ? 0 : it->second) + "\n";
      }
    hist += m.name + ",inf," + std::to_string(overload) + "\n";
    std::size_t acc = 0;
    for (std::size_t c = 0; c < cpu_hist.size(); ++c) {
      acc += cpu_hist[c];
      ecdf += m.name + "," + std::to_string(c) + "," + num(steps ? static_cast<double>(acc) / static_cast<double>(steps) : 0.0) + "\n";
    }
  }

  json seeds = json::array();
  for (const auto& t : w.traces) seeds.push_back(t.seed);
  json report{{"version", kConfigVersion},
              {"test_window", {w.test.begin_s, w.test.end_s}},
              {"seeds", seeds},
              {"d_tgt_ms", cfg.reward.d_tgt_ms},
              {"agents", report_agents}};
  write_json(out / "report.json", report);
  write_text(out / "delay_hist.csv", hist);
  write_text(out / "cpu_ecdf.csv", ecdf);
  write_text(out / "per_pop.csv", per_pop);
  write_json(out / "timing.json", {{"evaluation_seconds", secs}, {"agents", timing_agents}});
  return report;
}

json cmd_oracle(const ExperimentConfig& cfg, const fs::path& out) {
  ensure_dir(out);
  const auto w = build_workload(cfg);
  const auto test = window_scenario(w.traces.at(static_cast<std::size_t>(cfg.oracle_trace)), w.test, cfg.dwell_mean_s);
  const auto inst = make_oracle_instance(*test, std::min(cfg.oracle_arrivals, test->size()), *w.profile, cfg.reward,
                                         cfg.oracle_max_cpus, cfg.oracle_budget);
  if (inst.size() < cfg.oracle_arrivals)
    throw std::invalid_argument("oracle: test window has only " + std::to_string(test->size()) + " arrivals");
  const auto sol = cfg.parallel ? solve(inst) : solve_serial(inst);

  std::vector<AgentEntry> agents;
  AgentEntry replay;
  replay.name = "oracle-replay";
  const auto pops = inst.pop_count();
  replay.make = [cpus = sol.cpus, pops] { return std::make_unique<ReplayScaler>(cpus, pops); };
  for (auto& e : build_agents(cfg, w, out)) agents.push_back(std::move(e));

  json rows = json::array();
  auto record_row = [&](const std::string& name, const EpisodeRecord& r) {
    double cpu = 0.0;
    std::size_t viol = 0;
    for (int c : r.cpus) cpu += c;
    for (double d : r.vehicle_delay_ms) viol += d > cfg.reward.d_tgt_ms ? 1 : 0;
    const double steps = static_cast<double>(std::max<std::size_t>(r.steps(), 1));
    json row{{"name", name},
             {"total_reward", r.total_reward},
             {"mean_cpus", cpu / steps},
             {"violation_pct", 100.0 * static_cast<double>(viol) / steps}};
    row["gap_pct"] = sol.total_reward > 0.0 ? json(optimality_gap(r.total_reward, sol.total_reward)) : json(nullptr);
    rows.push_back(row);
  };
  {
    Environment env(inst.scenario, inst.profile, cfg.reward, cfg.initial_cpus);
    ReplayPlacement place(sol.placements);
    auto scaler = replay.make();
    record_row(replay.name, run_episode(env, place, *scaler, false));
  }
  for (const auto& a : agents) {
    Environment env(inst.scenario, inst.profile, cfg.reward, cfg.initial_cpus);
    GreedyPlacement place(inst.profile, cfg.reward.transmission_ms, cfg.include_candidate);
    auto scaler = a.make();
    record_row(a.name, run_episode(env, place, *scaler, false));
  }

  json report{{"instance_digest", inst.digest()},
              {"arrivals", inst.size()},
              {"pop_count", pops},
              {"max_cpus", inst.max_cpus()},
              {"evaluated", sol.evaluated},
              {"optimal_reward", sol.total_reward},
              {"placements", sol.placements},
              {"cpus", sol.cpus},
              {"agents", rows}};
  write_json(out / "oracle.json", report);
  return report;
}

json cmd_bench(const ExperimentConfig& cfg, const fs::path& out) {
  ensure_dir(out);
  const auto w = build_workload(cfg);
  const int pops = w.pop_count();
  const auto profile = w.profile;

  struct Named {
    std::string name;
    std::unique_ptr<ScalingPolicy> scaler;
  };
  std::vector<Named> agents;
  for (const auto& spec : cfg.agents) {
    if (spec.type == "CNST") {
      std::vector<int> cpus = spec.cnst_cpus.value_or(std::vector<int>(static_cast<std::size_t>(pops), profile->max_cpus()));
      agents.push_back({spec.name, std::make_unique<ConstantScaler>(cpus)});
    } else if (spec.type == "PI") {
      agents.push_back({spec.name, std::make_unique<PiScaler>(profile, spec.pi)});
    } else if (spec.type == "TES") {
      agents.push_back({spec.name, std::make_unique<TesScaler>(profile, cfg.reward, spec.tes)});
    } else {
      const auto path = spec.checkpoint ? *spec.checkpoint : out / ("checkpoint_" + spec.name + ".json");
      std::ifstream in(path);
      if (in)
        agents.push_back({spec.name, std::make_unique<DdpgScaler>(DdpgScaler::from_checkpoint(json::parse(in), profile))});
      else
        agents.push_back({spec.name, std::make_unique<DdpgScaler>(profile, pops, spec.ddpg)});
    }
  }

  // Synthetic decision points: random occupancy and CPU counts, advancing clock.
  Rng rng(derive_seed(cfg.seed_base, {0xbe7c4ULL}));
  std::vector<SystemState> states(cfg.bench_states);
  std::vector<PopId> origins(cfg.bench_states);
  std::vector<std::vector<int>> remotes(cfg.bench_states);
  double now = 0.0;
  for (std::size_t i = 0; i < cfg.bench_states; ++i) {
    now += rng.exponential(0.5);
    states[i].clock_s = now;
    for (int p = 0; p < pops; ++p) {
      const int n = static_cast<int>(rng.below(7));
      states[i].per_pop.push_back({n, static_cast<int>(rng.below(static_cast<std::uint64_t>(profile->max_cpus() + 1)))});
      remotes[i].push_back(n > 0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(n + 1))) : 0);
    }
    origins[i] = static_cast<PopId>(rng.below(static_cast<std::uint64_t>(pops)));
  }

  json rows = json::array();
  GreedyPlacement placement(profile, cfg.reward.transmission_ms, cfg.include_candidate);
  for (auto& a : agents) {
    a.scaler->reset(pops);
    std::vector<double> us;
    us.reserve(states.size());
    long long sink = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const DecisionContext ctx{states[i], origins[i], states[i].clock_s, remotes[i]};
      const auto t0 = std::chrono::steady_clock::now();
      const PopId p = placement.place(ctx);
      const auto d = a.scaler->scale(ctx, p);
      const auto t1 = std::chrono::steady_clock::now();
      sink += p + d[0];
      us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    const double mean = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(us.size());
    rows.push_back({{"name", a.name},
                    {"mean_us", mean},
                    {"p50_us", percentile(us, 0.50)},
                    {"p99_us", percentile(us, 0.99)},
                    {"checksum", sink}});
  }
  json report{{"states", cfg.bench_states}, {"pop_count", pops}, {"agents", rows}};
  write_json(out / "bench.json", report);
  return report;
}

}  // namespace v2n
