#include "v2n/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace v2n {

PopId greedy_place(const SystemState& state, PopId origin, const ServiceProfile& profile,
                   double transmission_ms, bool include_candidate) {
  const int pops = state.pop_count();
  if (origin < 0 || origin >= pops) throw std::invalid_argument("greedy_place: origin out of range");
  const int extra = include_candidate ? 1 : 0;

  auto cost = [&](PopId p) {
    const auto& s = state.per_pop[p];
    const double d = processing_delay(profile, s.cpus, s.n_vehicles + extra);
    return (p == origin ? 0.0 : transmission_ms) + d;
  };

  PopId best = origin;
  double best_cost = cost(origin);
  for (PopId p = 0; p < pops; ++p) {
    if (p == origin) continue;
    const double c = cost(p);
    // Strictly better only: ties keep the origin, then the lowest index seen.
    if (c < best_cost) {
      best = p;
      best_cost = c;
    }
  }
  return best;
}

SystemState with_placement(const SystemState& state, PopId placement) {
  SystemState out = state;
  out.per_pop.at(placement).n_vehicles += 1;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<int> ConstantScaler::scale(const DecisionContext& ctx, PopId /*placement*/) {
  if (static_cast<int>(cpus_.size()) != ctx.state.pop_count())
    throw std::invalid_argument("ConstantScaler: cpu vector does not match PoP count");
  std::vector<int> deltas(cpus_.size());
  for (std::size_t p = 0; p < cpus_.size(); ++p) deltas[p] = cpus_[p] - ctx.state.per_pop[p].cpus;
  return deltas;
}

namespace {

struct CnstSpace {
  int pops;
  int base;  // max_cpus + 1
  std::size_t size;
};

CnstSpace cnst_space(const Scenario& scenario, const ServiceProfile& profile, const CnstSearchOptions& opts) {
  const int max_cpus = opts.max_cpus < 0 ? profile.max_cpus() : opts.max_cpus;
  if (max_cpus > profile.max_cpus()) throw std::invalid_argument("cnst_search: max_cpus exceeds profile");
  CnstSpace s{scenario.trace.pop_count, max_cpus + 1, 1};
  for (int p = 0; p < s.pops; ++p) {
    s.size *= static_cast<std::size_t>(s.base);
    if (s.size > 7776 && !opts.allow_large)
      throw std::invalid_argument("cnst_search: " + std::to_string(s.base) + "^" + std::to_string(s.pops) +
                                  " candidates exceed the default budget (7776); set allow_large");
  }
  return s;
}

// Lexicographic decode: PoP 0 is the most significant digit.
std::vector<int> cnst_candidate(const CnstSpace& s, std::size_t index) {
  std::vector<int> cpus(s.pops);
  for (int p = s.pops - 1; p >= 0; --p) {
    cpus[p] = static_cast<int>(index % s.base);
    index /= s.base;
  }
  return cpus;
}

double constant_episode_reward(const std::shared_ptr<const Scenario>& scenario,
                               const std::shared_ptr<const ServiceProfile>& profile,
                               const RewardConfig& reward_cfg, const CnstSearchOptions& opts,
                               std::vector<int> cpus) {
  if (scenario->trace.empty()) return 0.0;
  Environment env(scenario, profile, reward_cfg, opts.initial_cpus);
  GreedyPlacement placement(profile, reward_cfg.transmission_ms, opts.include_candidate);
  ConstantScaler scaler(std::move(cpus));
  env.reset();
  double total = 0.0;
  while (auto arrival = env.peek_arrival()) {
    const DecisionContext ctx{arrival->state, arrival->origin, arrival->t_s, env.remote_counts()};
    FullAction action;
    action.placement = placement.place(ctx);
    action.deltas = scaler.scale(ctx, action.placement);
    total += env.step(action).avg_reward;
  }
  return total;
}

CnstSearchResult pick_best(const CnstSpace& s, const std::vector<double>& totals) {
  CnstSearchResult best;
  best.candidates = totals.size();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < totals.size(); ++i)
    if (totals[i] > totals[arg]) arg = i;
  best.cpus = cnst_candidate(s, arg);
  best.total_reward = totals[arg];
  return best;
}

}  // namespace

CnstSearchResult cnst_search_serial(std::shared_ptr<const Scenario> scenario,
                                    std::shared_ptr<const ServiceProfile> profile,
                                    const RewardConfig& reward_cfg, const CnstSearchOptions& opts) {
  const auto space = cnst_space(*scenario, *profile, opts);
  std::vector<double> totals(space.size);
  for (std::size_t i = 0; i < space.size; ++i)
    totals[i] = constant_episode_reward(scenario, profile, reward_cfg, opts, cnst_candidate(space, i));
  return pick_best(space, totals);
}

CnstSearchResult cnst_search(std::shared_ptr<const Scenario> scenario,
                             std::shared_ptr<const ServiceProfile> profile, const RewardConfig& reward_cfg,
                             const CnstSearchOptions& opts) {
  const auto space = cnst_space(*scenario, *profile, opts);
  std::vector<double> totals(space.size);
  const auto n = static_cast<long long>(space.size);
#pragma omp parallel for schedule(dynamic, 8)
  for (long long i = 0; i < n; ++i)
    totals[i] = constant_episode_reward(scenario, profile, reward_cfg, opts, cnst_candidate(space, i));
  return pick_best(space, totals);
}

// ---------------------------------------------------------------------------

void PiParams::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("PI: gains must be >= 0");
  if (!(rho_tgt > 0.0 && rho_tgt < 1.0)) throw std::invalid_argument("PI: rho_tgt must be in (0, 1)");
}

int pi_step(double rho_now, double rho_prev, const PiParams& params) {
  if (is_overload(rho_now)) rho_now = kPiOverloadLoad;
  if (is_overload(rho_prev)) rho_prev = kPiOverloadLoad;
  const double delta = params.alpha * (rho_now - params.rho_tgt) + params.beta * (rho_now - rho_prev);
  if (delta > 1.0) return 1;
  if (delta < -1.0) return -1;
  return 0;
}

PiScaler::PiScaler(std::shared_ptr<const ServiceProfile> profile, PiParams params)
    : profile_(std::move(profile)), params_(params) {
  params_.validate();
}

void PiScaler::reset(int pop_count) {
  rho_prev_.assign(pop_count, 0.0);
  primed_.assign(pop_count, false);
}

std::vector<int> PiScaler::scale(const DecisionContext& ctx, PopId placement) {
  const int pops = ctx.state.pop_count();
  if (static_cast<int>(rho_prev_.size()) != pops) reset(pops);
  std::vector<int> deltas(pops, 0);
  for (PopId p = 0; p < pops; ++p) {
    const auto& s = ctx.state.per_pop[p];
    const int n = s.n_vehicles + (p == placement ? 1 : 0);
    const double rho = load(*profile_, s.cpus, n);
    if (!primed_[p]) {
      rho_prev_[p] = rho;
      primed_[p] = true;
    }
    deltas[p] = pi_step(rho, rho_prev_[p], params_);
    rho_prev_[p] = rho;
  }
  return deltas;
}

// ---------------------------------------------------------------------------

void TesParams::validate() const {
  for (double g : {alpha, beta, gamma})
    if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("TES: smoothing constants must be in [0, 1]");
  if (!(interval_s > 0.0) || window < 1) throw std::invalid_argument("TES: need m > 0 and W >= 1");
  if (season_length < 1) throw std::invalid_argument("TES: season length must be >= 1");
}

TesState::TesState(int pop_count, TesParams params) : params_(params) {
  params_.validate();
  pops_.resize(pop_count);
  for (auto& p : pops_) p.season.assign(params_.season_length, 0.0);
}

void TesState::close_interval() {
  const std::size_t t = closed_;
  const auto L = static_cast<std::size_t>(params_.season_length);
  for (auto& p : pops_) {
    const double f = p.count;
    if (t == 0) {
      p.level = f;
      p.trend = 0.0;
      p.season[0] = 0.0;
    } else {
      const double s_prev = p.level;
      const double b_prev = p.trend;
      double& c = p.season[t % L];  // holds c_{t-L} (0 during the first season)
      const double c_old = c;
      p.level = params_.alpha * (f - c_old) + (1.0 - params_.alpha) * (s_prev + b_prev);
      p.trend = params_.beta * (p.level - s_prev) + (1.0 - params_.beta) * b_prev;
      c = params_.gamma * (f - s_prev - b_prev) + (1.0 - params_.gamma) * c_old;
    }
    p.count = 0;
  }
  ++closed_;
  *interval_start_ += params_.interval_s;
}

void TesState::advance(double now_s) {
  if (now_s < last_time_) throw std::invalid_argument("TesState: timestamps must be non-decreasing");
  last_time_ = now_s;
  if (!interval_start_) {
    interval_start_ = std::floor(now_s / params_.interval_s) * params_.interval_s;
    return;
  }
  while (now_s >= *interval_start_ + params_.interval_s) close_interval();
}

void TesState::observe(double now_s, PopId placed_pop) {
  if (placed_pop < 0 || placed_pop >= static_cast<int>(pops_.size()))
    throw std::invalid_argument("TesState: pop out of range");
  advance(now_s);
  pops_[placed_pop].count += 1;
}

std::vector<double> TesState::forecast(PopId pop) const {
  std::vector<double> out(params_.window, 0.0);
  if (closed_ == 0) return out;
  const auto& p = pops_.at(pop);
  const std::size_t t = closed_ - 1;
  const auto L = static_cast<std::size_t>(params_.season_length);
  for (int h = 1; h <= params_.window; ++h) {
    // c_{t-L+h}: the ring slot for time t+h still holds the value from one season earlier.
    const double c = p.season[(t + static_cast<std::size_t>(h)) % L];
    out[h - 1] = std::max(0.0, p.level + h * p.trend + c);
  }
  return out;
}

int tes_scale(int n_vehicles, const ServiceProfile& profile, const RewardConfig& cfg, bool remote_present) {
  if (n_vehicles < 0) throw std::invalid_argument("tes_scale: negative vehicle count");
  if (n_vehicles == 0) return 0;
  const double budget = cfg.d_tgt_ms - (remote_present ? cfg.transmission_ms : 0.0);
  for (int c = 1; c <= profile.max_cpus(); ++c) {
    const double d = processing_delay(profile, c, n_vehicles);
    if (!is_overload(d) && d <= budget) return c;
  }
  return profile.max_cpus();
}

TesScaler::TesScaler(std::shared_ptr<const ServiceProfile> profile, RewardConfig cfg, TesParams params)
    : profile_(std::move(profile)), cfg_(cfg), params_(params) {
  params_.validate();
}

void TesScaler::reset(int pop_count) {
  tes_.emplace(pop_count, params_);
  last_forecast_s_.reset();
  target_.assign(pop_count, 0);
}

std::vector<int> TesScaler::scale(const DecisionContext& ctx, PopId placement) {
  const int pops = ctx.state.pop_count();
  if (!tes_ || static_cast<int>(target_.size()) != pops) reset(pops);
  tes_->observe(ctx.now_s, placement);

  std::vector<int> deltas(pops, 0);
  const double horizon = params_.window * params_.interval_s;
  if (last_forecast_s_ && ctx.now_s - *last_forecast_s_ < horizon) return deltas;
  last_forecast_s_ = ctx.now_s;

  for (PopId p = 0; p < pops; ++p) {
    const auto f = tes_->forecast(p);
    const double peak = f.empty() ? 0.0 : *std::max_element(f.begin(), f.end());
    const auto& s = ctx.state.per_pop[p];
    const int assigned = s.n_vehicles + (p == placement ? 1 : 0);
    const int remote = ctx.remote_counts[p] + (p == placement && placement != ctx.origin ? 1 : 0);
    const int n = assigned + static_cast<int>(std::lround(peak));
    target_[p] = tes_scale(n, *profile_, cfg_, remote > 0);
    deltas[p] = target_[p] - s.cpus;
  }
  return deltas;
}

}  // namespace v2n
