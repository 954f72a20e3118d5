#include "v2n/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "v2n/rng.hpp"

namespace v2n {

namespace {

// base^exp; sets `over` once the product would pass cap.
std::uint64_t checked_pow(std::uint64_t base, std::size_t exp, std::uint64_t cap, bool& over) {
  std::uint64_t r = 1;
  over = false;
  for (std::size_t i = 0; i < exp; ++i) {
    if (base != 0 && r > cap / base) {
      over = true;
      return cap;
    }
    r *= base;
  }
  return r;
}

void check_instance(const OracleInstance& inst) {
  if (!inst.scenario || !inst.profile) throw std::invalid_argument("oracle: null scenario or profile");
  if (inst.scenario->departure_s.size() != inst.scenario->size())
    throw std::invalid_argument("oracle: departures do not match arrivals");
  if (inst.pop_count() < 1) throw std::invalid_argument("oracle: no PoPs");
  inst.profile->validate();
  inst.reward_cfg.validate();
}

// Which earlier arrivals are still in the system when arrival v comes in.
struct Presence {
  std::size_t v = 0;
  std::vector<char> active;  // v x v, active[v * V + u] for u <= v

  explicit Presence(const Scenario& s) : v(s.size()), active(v * v, 0) {
    for (std::size_t i = 0; i < v; ++i) {
      const double now = s.trace.events[i].t_s;
      for (std::size_t u = 0; u <= i; ++u) active[i * v + u] = (u == i || s.departure_s[u] >= now) ? 1 : 0;
    }
  }
  bool operator()(std::size_t step, std::size_t u) const { return active[step * v + u] != 0; }
};

// Best per-PoP reward and the smallest C reaching it, for every (N, N_remote).
struct BestTable {
  std::size_t max_n = 0;
  std::vector<double> reward;
  std::vector<int> cpus;

  BestTable(const OracleInstance& inst) : max_n(inst.size()) {
    const std::size_t w = max_n + 1;
    reward.assign(w * w, 0.0);
    cpus.assign(w * w, 0);
    for (std::size_t n = 0; n <= max_n; ++n)
      for (std::size_t nr = 0; nr <= n; ++nr) {
        double best = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c <= inst.max_cpus(); ++c) {
          const double r = per_pop_reward(*inst.profile, c, static_cast<int>(n), static_cast<int>(nr), inst.reward_cfg);
          if (r > best) {
            best = r;
            arg = c;
          }
        }
        reward[n * w + nr] = best;
        cpus[n * w + nr] = arg;
      }
  }
  double r(int n, int nr) const { return reward[static_cast<std::size_t>(n) * (max_n + 1) + static_cast<std::size_t>(nr)]; }
  int c(int n, int nr) const { return cpus[static_cast<std::size_t>(n) * (max_n + 1) + static_cast<std::size_t>(nr)]; }
};

struct Evaluator {
  const OracleInstance& inst;
  const Presence& presence;
  const BestTable& table;
  std::vector<PopId> placement;
  std::vector<int> n, nr;

  Evaluator(const OracleInstance& i, const Presence& p, const BestTable& t)
      : inst(i), presence(p), table(t), placement(i.size()), n(static_cast<std::size_t>(i.pop_count())),
        nr(static_cast<std::size_t>(i.pop_count())) {}

  void decode(std::uint64_t index) {
    const auto pops = static_cast<std::uint64_t>(inst.pop_count());
    for (std::size_t k = placement.size(); k-- > 0;) {
      placement[k] = static_cast<PopId>(index % pops);
      index /= pops;
    }
  }

  // Occupancy of every PoP right after arrival `step` is placed.
  void occupancy(std::size_t step) {
    std::fill(n.begin(), n.end(), 0);
    std::fill(nr.begin(), nr.end(), 0);
    const auto& ev = inst.scenario->trace.events;
    for (std::size_t u = 0; u <= step; ++u) {
      if (!presence(step, u)) continue;
      ++n[static_cast<std::size_t>(placement[u])];
      if (placement[u] != ev[u].pop) ++nr[static_cast<std::size_t>(placement[u])];
    }
  }

  double total(std::vector<int>* schedule) {
    const int pops = inst.pop_count();
    double total = 0.0;
    for (std::size_t step = 0; step < placement.size(); ++step) {
      occupancy(step);
      double sum = 0.0;
      for (int p = 0; p < pops; ++p) {
        sum += table.r(n[static_cast<std::size_t>(p)], nr[static_cast<std::size_t>(p)]);
        if (schedule) schedule->push_back(table.c(n[static_cast<std::size_t>(p)], nr[static_cast<std::size_t>(p)]));
      }
      total += sum / static_cast<double>(pops);
    }
    return total;
  }
};

struct Candidate {
  double value = -std::numeric_limits<double>::infinity();
  std::uint64_t index = std::numeric_limits<std::uint64_t>::max();

  void offer(double v, std::uint64_t i) {
    if (v > value || (v == value && i < index)) {
      value = v;
      index = i;
    }
  }
};

std::uint64_t placement_count(const OracleInstance& inst) {
  bool over = false;
  const auto count = checked_pow(static_cast<std::uint64_t>(inst.pop_count()), inst.size(), inst.budget, over);
  if (over || count > inst.budget)
    throw BudgetExceeded("oracle: " + std::to_string(inst.pop_count()) + "^" + std::to_string(inst.size()) +
                         " placement vectors exceed the budget of " + std::to_string(inst.budget));
  return count;
}

OracleSolution finish(const OracleInstance& inst, const Presence& presence, const BestTable& table,
                      const Candidate& best, std::uint64_t count) {
  Evaluator ev(inst, presence, table);
  ev.decode(best.index);
  OracleSolution sol;
  sol.cpus.reserve(inst.size() * static_cast<std::size_t>(inst.pop_count()));
  sol.total_reward = ev.total(&sol.cpus);
  sol.placements = ev.placement;
  sol.evaluated = count;
  return sol;
}

}  // namespace

std::string OracleInstance::digest() const {
  Fnv1a h;
  h.update_value(scenario->trace.digest());
  for (double d : scenario->departure_s) h.update_value(d);
  for (double d : profile->decode_ms_per_frame) h.update_value(d);
  for (double d : profile->analyze_ms_per_frame) h.update_value(d);
  h.update_value(profile->task_rate_per_vehicle);
  h.update_value(reward_cfg.d_tgt_ms);
  h.update_value(reward_cfg.transmission_ms);
  h.update_value(static_cast<int>(reward_cfg.variant));
  h.update_value(reward_cfg.sigma_ms);
  return hex64(h.digest());
}

OracleInstance make_oracle_instance(const Scenario& scenario, std::size_t v, const ServiceProfile& profile,
                                    const RewardConfig& reward_cfg, int max_cpus, std::uint64_t budget) {
  if (max_cpus == 0 || max_cpus < -1 || max_cpus > profile.max_cpus())
    throw std::invalid_argument("oracle: max_cpus must be in [1, " + std::to_string(profile.max_cpus()) + "]");
  if (v > scenario.size())
    throw std::invalid_argument("oracle: asked for " + std::to_string(v) + " arrivals, trace has " +
                                std::to_string(scenario.size()));
  OracleInstance inst;
  inst.scenario = std::make_shared<const Scenario>(scenario.prefix(v));
  inst.profile = std::make_shared<const ServiceProfile>(max_cpus < 0 ? profile : profile.truncated(max_cpus));
  inst.reward_cfg = reward_cfg;
  inst.budget = budget;
  check_instance(inst);
  return inst;
}

OracleSolution solve_serial(const OracleInstance& inst) {
  check_instance(inst);
  const auto count = placement_count(inst);
  const Presence presence(*inst.scenario);
  const BestTable table(inst);
  Evaluator ev(inst, presence, table);
  Candidate best;
  for (std::uint64_t i = 0; i < count; ++i) {
    ev.decode(i);
    best.offer(ev.total(nullptr), i);
  }
  return finish(inst, presence, table, best, count);
}

OracleSolution solve(const OracleInstance& inst) {
  check_instance(inst);
  const auto count = placement_count(inst);
  const Presence presence(*inst.scenario);
  const BestTable table(inst);
  Candidate best;
  const auto n = static_cast<long long>(count);
#pragma omp parallel
  {
    Evaluator ev(inst, presence, table);
    Candidate local;
#pragma omp for schedule(static)
    for (long long i = 0; i < n; ++i) {
      ev.decode(static_cast<std::uint64_t>(i));
      local.offer(ev.total(nullptr), static_cast<std::uint64_t>(i));
    }
#pragma omp critical(v2n_oracle_merge)
    best.offer(local.value, local.index);
  }
  return finish(inst, presence, table, best, count);
}

OracleSolution naive_enumerate(const OracleInstance& inst) {
  check_instance(inst);
  const int pops = inst.pop_count();
  const int cmax = inst.max_cpus();
  bool over = false;
  const auto cpu_vectors = checked_pow(static_cast<std::uint64_t>(cmax + 1), static_cast<std::size_t>(pops),
                                       inst.budget, over);
  std::uint64_t per_step = 0;
  if (!over) {
    per_step = cpu_vectors * static_cast<std::uint64_t>(pops);
    if (per_step / static_cast<std::uint64_t>(pops) != cpu_vectors) over = true;
  }
  std::uint64_t leaves = 0;
  if (!over) leaves = checked_pow(per_step, inst.size(), inst.budget, over);
  if (over || leaves > inst.budget)
    throw BudgetExceeded("naive oracle: (" + std::to_string(pops) + "*" + std::to_string(cmax + 1) + "^" +
                         std::to_string(pops) + ")^" + std::to_string(inst.size()) +
                         " joint actions exceed the budget of " + std::to_string(inst.budget));

  const Presence presence(*inst.scenario);
  const auto& events = inst.scenario->trace.events;
  const std::size_t v_count = inst.size();
  std::vector<PopId> placement(v_count);
  std::vector<int> schedule(v_count * static_cast<std::size_t>(pops));
  std::vector<int> cpu(static_cast<std::size_t>(pops));
  // Occupancy per recursion depth; deeper levels must not clobber it.
  std::vector<int> n_all(v_count * static_cast<std::size_t>(pops)), nr_all(v_count * static_cast<std::size_t>(pops));

  OracleSolution best;
  best.total_reward = -std::numeric_limits<double>::infinity();
  std::uint64_t evaluated = 0;

  auto dfs = [&](auto&& self, std::size_t step, double acc) -> void {
    if (step == v_count) {
      ++evaluated;
      if (acc > best.total_reward) {
        best.total_reward = acc;
        best.placements = placement;
        best.cpus = schedule;
      }
      return;
    }
    for (PopId p = 0; p < pops; ++p) {
      placement[step] = p;
      int* n = n_all.data() + step * static_cast<std::size_t>(pops);
      int* nr = nr_all.data() + step * static_cast<std::size_t>(pops);
      std::fill(n, n + pops, 0);
      std::fill(nr, nr + pops, 0);
      for (std::size_t u = 0; u <= step; ++u) {
        if (!presence(step, u)) continue;
        ++n[static_cast<std::size_t>(placement[u])];
        if (placement[u] != events[u].pop) ++nr[static_cast<std::size_t>(placement[u])];
      }
      for (std::uint64_t code = 0; code < cpu_vectors; ++code) {
        std::uint64_t rest = code;
        for (int q = pops; q-- > 0;) {
          cpu[static_cast<std::size_t>(q)] = static_cast<int>(rest % static_cast<std::uint64_t>(cmax + 1));
          rest /= static_cast<std::uint64_t>(cmax + 1);
        }
        double sum = 0.0;
        for (int q = 0; q < pops; ++q) {
          const auto k = static_cast<std::size_t>(q);
          sum += per_pop_reward(*inst.profile, cpu[k], n[k], nr[k], inst.reward_cfg);
          schedule[step * static_cast<std::size_t>(pops) + k] = cpu[k];
        }
        self(self, step + 1, acc + sum / static_cast<double>(pops));
      }
    }
  };
  dfs(dfs, 0, 0.0);
  best.evaluated = evaluated;
  return best;
}

double optimality_gap(double agent_total, double optimal_total) {
  if (!(optimal_total > 0.0)) throw std::invalid_argument("optimality_gap: optimal reward must be > 0");
  return std::max(0.0, 100.0 * (optimal_total - agent_total) / optimal_total);
}

PopId ReplayPlacement::place(const DecisionContext& /*ctx*/) {
  if (next_ >= placements_.size()) throw std::out_of_range("ReplayPlacement: schedule exhausted");
  return placements_[next_++];
}

void ReplayScaler::reset(int pop_count) {
  if (pop_count != pop_count_) throw std::invalid_argument("ReplayScaler: PoP count mismatch");
  next_ = 0;
}

std::vector<int> ReplayScaler::scale(const DecisionContext& ctx, PopId /*placement*/) {
  const auto pops = static_cast<std::size_t>(pop_count_);
  if ((next_ + 1) * pops > cpus_.size()) throw std::out_of_range("ReplayScaler: schedule exhausted");
  std::vector<int> deltas(pops);
  for (std::size_t p = 0; p < pops; ++p) deltas[p] = cpus_[next_ * pops + p] - ctx.state.per_pop[p].cpus;
  ++next_;
  return deltas;
}

}  // namespace v2n
