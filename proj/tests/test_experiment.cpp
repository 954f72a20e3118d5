#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "v2n/experiment.hpp"

using namespace v2n;
using nlohmann::json;
using doctest::Approx;

namespace {

json tiny_config() {
  return json::parse(R"({
    "version": 1,
    "intensity": {"synth": {"pops": 2, "days": 1, "peak_veh_per_hour": 90, "trough_veh_per_hour": 10,
                            "window_seconds": 600, "seed": 4}},
    "seeds": {"base": 50, "count": 2},
    "split": {"train": [25200, 27000], "test": [28800, 30600]},
    "agents": [
      {"type": "CNST"},
      {"type": "TES"},
      {"type": "DDPG", "episodes": 1, "hidden_width": 8, "batch_size": 8}
    ],
    "oracle": {"arrivals": 4, "max_cpus": 2},
    "bench": {"states": 50}
  })");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("config parsing is strict") {
  const auto ok = ExperimentConfig::from_json(tiny_config());
  CHECK(ok.agents.size() == 3);
  CHECK(ok.agents[2].name == "DDPG-1");
  CHECK(ok.seed_count == 2);
  CHECK(ExperimentConfig::from_json(ok.to_json()).to_json() == ok.to_json());

  auto j = tiny_config();
  j["version"] = 2;
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = tiny_config();
  j.erase("version");
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = tiny_config();
  j["extra"] = 1;
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = tiny_config();
  j["agents"][0]["alpha"] = 1.0;
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = tiny_config();
  j["agents"].push_back({{"type", "TES"}});
  CHECK_THROWS(ExperimentConfig::from_json(j).validate());
  j = tiny_config();
  j["split"]["test"] = {26000, 30000};
  CHECK_THROWS(ExperimentConfig::from_json(j).validate());
  j = tiny_config();
  j["agents"][0]["type"] = "RANDOM";
  CHECK_THROWS(ExperimentConfig::from_json(j));

  auto s = ExperimentConfig::from_json(tiny_config());
  s.override_seed(900);
  CHECK(s.seed_base == 900);
  CHECK(s.agents[2].ddpg.seed == 900);
}

TEST_CASE("split by expected arrivals") {
  IntensityTable t;
  for (int w = 0; w < 10; ++w) t.entries.push_back({w * 300.0, 0, 100.0});
  const auto [train, test] = split_by_expected_arrivals(t, 0.7);
  CHECK(train.begin_s == 0.0);
  CHECK(train.end_s == 2100.0);
  CHECK(test.begin_s == 2100.0);
  CHECK(test.end_s == 3000.0);
  CHECK_THROWS(split_by_expected_arrivals(t, 1.5));
}

TEST_CASE("percentile") {
  CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 0.5) == Approx(2.5));
  CHECK(percentile({5.0}, 0.99) == 5.0);
  CHECK(percentile({3.0, 1.0, 2.0}, 0.0) == 1.0);
  CHECK(percentile({3.0, 1.0, 2.0}, 1.0) == 3.0);
}

TEST_CASE("parallel and serial evaluation agree") {
  auto cfg = ExperimentConfig::from_json(tiny_config());
  cfg.agents.pop_back();
  const auto w = build_workload(cfg);
  test::TempDir dir;
  const auto agents = build_agents(cfg, w, dir.path());
  std::vector<std::shared_ptr<const Scenario>> sc;
  for (const auto& t : w.traces) sc.push_back(window_scenario(t, w.test, cfg.dwell_mean_s));
  const auto a = evaluate_agents(agents, sc, w.profile, cfg.reward, 1, true, true);
  const auto b = evaluate_agents(agents, sc, w.profile, cfg.reward, 1, true, false);
  REQUIRE(a.runs.size() == b.runs.size());
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    CHECK(a.runs[i].record.rewards == b.runs[i].record.rewards);
    CHECK(a.runs[i].record.cpus == b.runs[i].record.cpus);
  }
}

TEST_CASE("pipeline outputs are reproducible and self-consistent") {
  const auto cfg = ExperimentConfig::from_json(tiny_config());
  test::TempDir a, b;
  for (const auto* d : {&a, &b}) {
    cmd_gen_trace(cfg, d->path());
    cmd_train(cfg, d->path());
    cmd_evaluate(cfg, d->path());
  }
  for (const auto& e : std::filesystem::directory_iterator(a.path())) {
    const auto name = e.path().filename().string();
    if (name.find("timing") != std::string::npos) continue;
    CAPTURE(name);
    CHECK(slurp(e.path()) == slurp(b.path() / name));
  }

  // Report means recomputed from the per-step dump.
  const auto report = json::parse(slurp(a.path() / "report.json"));
  for (const auto& agent : report["agents"]) {
    const auto name = agent["name"].get<std::string>();
    CAPTURE(name);
    std::map<std::string, std::pair<double, int>> per_seed;
    double cpu_sum = 0.0;
    int steps = 0;
    for (const auto& row : csv_rows(a.path() / ("cpus_" + name + ".csv"))) {
      auto& acc = per_seed[row[0]];
      acc.first += std::stod(row[2]);
      acc.second += 1;
      cpu_sum += std::stod(row[3]);
      ++steps;
    }
    double mean = 0.0;
    for (const auto& [seed, acc] : per_seed) mean += acc.first / acc.second;
    mean /= static_cast<double>(per_seed.size());
    CHECK(agent["mean_reward"].get<double>() == Approx(mean).epsilon(1e-12));
    CHECK(agent["mean_active_cpus"].get<double>() == Approx(cpu_sum / steps).epsilon(1e-12));
    CHECK(agent["vehicles"].get<int>() == steps);
  }

  // Reading the written traces back gives the same evaluation.
  auto from_files = cfg;
  from_files.traces_dir = a.path();
  test::TempDir c;
  std::filesystem::copy_file(a.path() / "checkpoint_DDPG-1.json", c.path() / "checkpoint_DDPG-1.json");
  cmd_evaluate(from_files, c.path());
  CHECK(slurp(c.path() / "report.json") == slurp(a.path() / "report.json"));
}

TEST_CASE("oracle and bench commands") {
  auto cfg = ExperimentConfig::from_json(tiny_config());
  cfg.agents.pop_back();
  test::TempDir d;
  const auto o = cmd_oracle(cfg, d.path());
  CHECK(o["arrivals"] == 4);
  CHECK(o["agents"][0]["name"] == "oracle-replay");
  const double opt = o["optimal_reward"].get<double>();
  CHECK(o["agents"][0]["total_reward"].get<double>() == Approx(opt).epsilon(1e-12));
  for (const auto& row : o["agents"]) CHECK(row["total_reward"].get<double>() <= opt + 1e-12);

  const auto b = cmd_bench(cfg, d.path());
  CHECK(std::filesystem::exists(d.path() / "bench.json"));
  CHECK(!b.empty());
}
