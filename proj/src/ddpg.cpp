#include "v2n/ddpg.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>
#include <stdexcept>

#include "v2n/agents.hpp"

namespace v2n {

int dod_discretize(double a_hat, int c_max) {
  if (c_max < 0) throw std::invalid_argument("dod_discretize: c_max must be >= 0");
  if (std::isnan(a_hat)) throw std::invalid_argument("dod_discretize: NaN action");
  const double clipped = std::clamp(a_hat, -1.0, 1.0);
  const long v = std::lround(clipped * c_max);
  return static_cast<int>(std::clamp<long>(v, -c_max, c_max));
}

std::vector<int> dod_discretize(std::span<const double> a_hat, int c_max) {
  std::vector<int> out;
  out.reserve(a_hat.size());
  for (double a : a_hat) out.push_back(dod_discretize(a, c_max));
  return out;
}

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(int state_dim, int action_dim, std::size_t capacity)
    : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity) {
  if (state_dim < 1 || action_dim < 1) throw std::invalid_argument("ReplayBuffer: dimensions must be positive");
  if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(std::span<const double> s, std::span<const double> a, double r,
                        std::span<const double> s_next, bool done) {
  if (static_cast<int>(s.size()) != state_dim_ || static_cast<int>(s_next.size()) != state_dim_ ||
      static_cast<int>(a.size()) != action_dim_)
    throw std::invalid_argument("ReplayBuffer::push: dimension mismatch");
  const auto sd = static_cast<std::size_t>(state_dim_);
  const auto ad = static_cast<std::size_t>(action_dim_);
  if (size_ < capacity_ && head_ == size_) {
    s_.insert(s_.end(), s.begin(), s.end());
    a_.insert(a_.end(), a.begin(), a.end());
    s_next_.insert(s_next_.end(), s_next.begin(), s_next.end());
    r_.push_back(r);
    done_.push_back(done ? 1.0 : 0.0);
  } else {
    std::copy(s.begin(), s.end(), s_.begin() + static_cast<std::ptrdiff_t>(head_ * sd));
    std::copy(a.begin(), a.end(), a_.begin() + static_cast<std::ptrdiff_t>(head_ * ad));
    std::copy(s_next.begin(), s_next.end(), s_next_.begin() + static_cast<std::ptrdiff_t>(head_ * sd));
    r_[head_] = r;
    done_[head_] = done ? 1.0 : 0.0;
  }
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::size_t ReplayBuffer::physical(std::size_t logical) const {
  if (logical >= size_) throw std::out_of_range("ReplayBuffer: index out of range");
  const std::size_t oldest = size_ < capacity_ ? 0 : head_;
  return (oldest + logical) % capacity_;
}

ReplayBuffer::Item ReplayBuffer::at(std::size_t i) const {
  const std::size_t k = physical(i);
  const auto sd = static_cast<std::size_t>(state_dim_);
  const auto ad = static_cast<std::size_t>(action_dim_);
  Item it;
  it.s.assign(s_.begin() + static_cast<std::ptrdiff_t>(k * sd), s_.begin() + static_cast<std::ptrdiff_t>((k + 1) * sd));
  it.a.assign(a_.begin() + static_cast<std::ptrdiff_t>(k * ad), a_.begin() + static_cast<std::ptrdiff_t>((k + 1) * ad));
  it.s_next.assign(s_next_.begin() + static_cast<std::ptrdiff_t>(k * sd),
                   s_next_.begin() + static_cast<std::ptrdiff_t>((k + 1) * sd));
  it.r = r_[k];
  it.done = done_[k] != 0.0;
  return it;
}

ReplayBuffer::Batch ReplayBuffer::gather(std::span<const std::size_t> indices) const {
  const auto b = static_cast<Eigen::Index>(indices.size());
  Batch out;
  out.s.resize(state_dim_, b);
  out.a.resize(action_dim_, b);
  out.s_next.resize(state_dim_, b);
  out.r.resize(b);
  out.done.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const std::size_t k = physical(indices[static_cast<std::size_t>(j)]);
    for (int i = 0; i < state_dim_; ++i) {
      out.s(i, j) = s_[k * state_dim_ + i];
      out.s_next(i, j) = s_next_[k * state_dim_ + i];
    }
    for (int i = 0; i < action_dim_; ++i) out.a(i, j) = a_[k * action_dim_ + i];
    out.r(j) = r_[k];
    out.done(j) = done_[k];
  }
  return out;
}

ReplayBuffer::Batch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (size_ == 0) throw std::logic_error("ReplayBuffer::sample: buffer is empty");
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(size_));
  return gather(idx);
}

// ---------------------------------------------------------------------------
// Config

std::string to_string(DdpgScope s) { return s == DdpgScope::kPerPop ? "per_pop" : "global"; }
std::string to_string(RewardScope s) { return s == RewardScope::kAveraged ? "averaged" : "local"; }

DdpgScope parse_ddpg_scope(const std::string& s) {
  if (s == "per_pop") return DdpgScope::kPerPop;
  if (s == "global") return DdpgScope::kGlobal;
  throw std::invalid_argument("unknown DDPG scope '" + s + "' (per_pop|global)");
}

RewardScope parse_reward_scope(const std::string& s) {
  if (s == "averaged") return RewardScope::kAveraged;
  if (s == "local") return RewardScope::kLocal;
  throw std::invalid_argument("unknown reward scope '" + s + "' (averaged|local)");
}

int DdpgConfig::effective_width() const {
  if (hidden_width > 0) return hidden_width;
  return scope == DdpgScope::kPerPop ? 64 : 256;
}

void DdpgConfig::validate() const {
  if (hidden_width < 0) throw std::invalid_argument("ddpg: hidden_width must be >= 0");
  if (hidden_layers < 1) throw std::invalid_argument("ddpg: hidden_layers must be >= 1");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) throw std::invalid_argument("ddpg: learning rates must be > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("ddpg: gamma must be in [0, 1]");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("ddpg: tau must be in (0, 1]");
  if (!(exploration_sigma >= 0.0)) throw std::invalid_argument("ddpg: exploration_sigma must be >= 0");
  if (replay_capacity < 1 || batch_size < 1) throw std::invalid_argument("ddpg: replay_capacity and batch_size must be >= 1");
  if (!(vehicle_scale > 0.0)) throw std::invalid_argument("ddpg: vehicle_scale must be > 0");
}

nlohmann::json to_json(const DdpgConfig& c) {
  return {{"scope", to_string(c.scope)},
          {"hidden_width", c.effective_width()},
          {"hidden_layers", c.hidden_layers},
          {"lr_actor", c.lr_actor},
          {"lr_critic", c.lr_critic},
          {"gamma", c.gamma},
          {"tau", c.tau},
          {"exploration_sigma", c.exploration_sigma},
          {"replay_capacity", c.replay_capacity},
          {"batch_size", c.batch_size},
          {"warmup", c.effective_warmup()},
          {"reward_scope", to_string(c.reward_scope)},
          {"vehicle_scale", c.vehicle_scale},
          {"zero_init", c.zero_init},
          {"seed", c.seed}};
}

DdpgConfig ddpg_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("ddpg config must be a JSON object");
  static const std::set<std::string> known = {"scope",        "hidden_width",      "hidden_layers", "lr_actor",
                                              "lr_critic",    "gamma",             "tau",           "exploration_sigma",
                                              "replay_capacity", "batch_size",     "warmup",        "reward_scope",
                                              "vehicle_scale", "zero_init",        "seed"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw std::invalid_argument("ddpg config: unknown key '" + k + "'");
  DdpgConfig c;
  if (j.contains("scope")) c.scope = parse_ddpg_scope(j.at("scope").get<std::string>());
  if (j.contains("reward_scope")) c.reward_scope = parse_reward_scope(j.at("reward_scope").get<std::string>());
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("hidden_width", c.hidden_width);
  read("hidden_layers", c.hidden_layers);
  read("lr_actor", c.lr_actor);
  read("lr_critic", c.lr_critic);
  read("gamma", c.gamma);
  read("tau", c.tau);
  read("exploration_sigma", c.exploration_sigma);
  read("replay_capacity", c.replay_capacity);
  read("batch_size", c.batch_size);
  read("warmup", c.warmup);
  read("vehicle_scale", c.vehicle_scale);
  read("zero_init", c.zero_init);
  read("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// DdpgAgent

namespace {

std::vector<int> layer_widths(int in, int width, int layers, int out) {
  std::vector<int> w{in};
  for (int i = 0; i < layers; ++i) w.push_back(width);
  w.push_back(out);
  return w;
}

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> column(std::span<const double> x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())).cast<T>();
}

}  // namespace

template <typename T>
BasicDdpgAgent<T>::BasicDdpgAgent(int state_dim, int action_dim, const DdpgConfig& cfg, std::uint64_t seed)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      cfg_(cfg),
      replay_(state_dim, action_dim, cfg.replay_capacity),
      noise_rng_(derive_seed(seed, {1})),
      sample_rng_(derive_seed(seed, {2})) {
  cfg_.validate();
  const int w = cfg_.effective_width();
  const auto actor_w = layer_widths(state_dim, w, cfg_.hidden_layers, action_dim);
  const auto critic_w = layer_widths(state_dim + action_dim, w, cfg_.hidden_layers, 1);
  if (cfg_.zero_init) {
    actor_ = Net(actor_w, Activation::kElu, Activation::kTanh);
    critic_ = Net(critic_w, Activation::kElu, Activation::kLinear);
  } else {
    Rng init(derive_seed(seed, {0}));
    actor_ = Net::random(actor_w, Activation::kElu, Activation::kTanh, init);
    critic_ = Net::random(critic_w, Activation::kElu, Activation::kLinear, init);
  }
  actor_target_ = actor_;
  critic_target_ = critic_;
  actor_opt_ = BasicAdam<T>(actor_, AdamConfig{cfg_.lr_actor});
  critic_opt_ = BasicAdam<T>(critic_, AdamConfig{cfg_.lr_critic});
}

template <typename T>
void BasicDdpgAgent<T>::set_networks(Net actor, Net critic) {
  if (actor.input_width() != state_dim_ || actor.output_width() != action_dim_ ||
      critic.input_width() != state_dim_ + action_dim_ || critic.output_width() != 1)
    throw std::invalid_argument("DdpgAgent::set_networks: network shapes do not match the agent");
  actor_ = std::move(actor);
  critic_ = std::move(critic);
  actor_target_ = actor_;
  critic_target_ = critic_;
  actor_opt_ = BasicAdam<T>(actor_, AdamConfig{cfg_.lr_actor});
  critic_opt_ = BasicAdam<T>(critic_, AdamConfig{cfg_.lr_critic});
}

template <typename T>
void BasicDdpgAgent<T>::reseed(std::uint64_t seed) {
  noise_rng_ = Rng(derive_seed(seed, {1}));
  sample_rng_ = Rng(derive_seed(seed, {2}));
}

template <typename T>
std::vector<double> BasicDdpgAgent<T>::policy(std::span<const double> features) const {
  const Matrix out = actor_.forward(column<T>(features));
  std::vector<double> a(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index i = 0; i < out.rows(); ++i) a[static_cast<std::size_t>(i)] = static_cast<double>(out(i, 0));
  return a;
}

template <typename T>
typename BasicDdpgAgent<T>::Action BasicDdpgAgent<T>::act(std::span<const double> features, bool explore,
                                                          int c_max) {
  Action a;
  a.real = policy(features);
  for (auto& v : a.real) {
    if (explore) v += cfg_.exploration_sigma * noise_rng_.normal();
    v = std::clamp(v, -1.0, 1.0);
  }
  a.discrete = dod_discretize(a.real, c_max);
  return a;
}

template <typename T>
double BasicDdpgAgent<T>::q_value(std::span<const double> features, std::span<const double> action) const {
  return static_cast<double>(critic_.forward(critic_input(column<T>(features), column<T>(action)))(0, 0));
}

template <typename T>
typename BasicDdpgAgent<T>::Matrix BasicDdpgAgent<T>::critic_input(const Matrix& s, const Matrix& a) const {
  if (s.rows() != state_dim_ || a.rows() != action_dim_ || s.cols() != a.cols())
    throw std::invalid_argument("DdpgAgent: state/action batch shape mismatch");
  Matrix x(state_dim_ + action_dim_, s.cols());
  x.topRows(state_dim_) = s;
  x.bottomRows(action_dim_) = a;
  return x;
}

template <typename T>
double BasicDdpgAgent<T>::critic_update(const ReplayBuffer::Batch& batch) {
  const auto b = static_cast<T>(batch.size());
  const Matrix s = batch.s.cast<T>();
  const Matrix s_next = batch.s_next.cast<T>();
  const Matrix a_next = actor_target_.forward(s_next);
  const Matrix q_next = critic_target_.forward(critic_input(s_next, a_next));
  const Matrix y = (batch.r.cast<T>().array() +
                    static_cast<T>(cfg_.gamma) * (T(1) - batch.done.cast<T>().array()) * q_next.array())
                       .matrix();

  typename Net::Tape tape;
  const Matrix q = critic_.forward(critic_input(s, batch.a.cast<T>()), tape);
  const Matrix diff = q - y;
  const double loss = static_cast<double>(diff.squaredNorm() / b);
  if (!std::isfinite(loss)) throw std::domain_error("critic loss is not finite");
  Params grads;
  critic_.backward(tape, (T(2) / b) * diff, &grads);
  critic_opt_.step(critic_, grads);
  return loss;
}

template <typename T>
typename BasicDdpgAgent<T>::Params BasicDdpgAgent<T>::actor_gradient(const ReplayBuffer::Batch& batch) const {
  const auto b = static_cast<T>(batch.size());
  const Matrix s = batch.s.cast<T>();
  typename Net::Tape actor_tape, critic_tape;
  const Matrix a = actor_.forward(s, actor_tape);
  critic_.forward(critic_input(s, a), critic_tape);
  const Matrix upstream = Matrix::Constant(1, a.cols(), T(1) / b);
  const Matrix d_input = critic_.backward(critic_tape, upstream, nullptr);
  Params grads;
  actor_.backward(actor_tape, d_input.bottomRows(action_dim_), &grads);
  return grads;
}

template <typename T>
double BasicDdpgAgent<T>::actor_objective(const ReplayBuffer::Batch& batch) const {
  const Matrix s = batch.s.cast<T>();
  const Matrix q = critic_.forward(critic_input(s, actor_.forward(s)));
  return static_cast<double>(q.mean());
}

template <typename T>
double BasicDdpgAgent<T>::actor_update(const ReplayBuffer::Batch& batch) {
  const auto b = static_cast<T>(batch.size());
  const Matrix s = batch.s.cast<T>();
  typename Net::Tape actor_tape, critic_tape;
  const Matrix a = actor_.forward(s, actor_tape);
  const Matrix q = critic_.forward(critic_input(s, a), critic_tape);
  const double mean_q = static_cast<double>(q.sum() / b);
  if (!std::isfinite(mean_q)) throw std::domain_error("mean Q is not finite");
  const Matrix upstream = Matrix::Constant(1, a.cols(), T(-1) / b);
  const Matrix d_input = critic_.backward(critic_tape, upstream, nullptr);
  Params grads;
  actor_.backward(actor_tape, d_input.bottomRows(action_dim_), &grads);
  actor_opt_.step(actor_, grads);
  return mean_q;
}

template <typename T>
void BasicDdpgAgent<T>::soft_update() {
  polyak_update(actor_target_, actor_, cfg_.tau);
  polyak_update(critic_target_, critic_, cfg_.tau);
}

template <typename T>
std::optional<typename BasicDdpgAgent<T>::LearnStats> BasicDdpgAgent<T>::learn() {
  if (replay_.size() < cfg_.effective_warmup()) return std::nullopt;
  const auto batch = replay_.sample(cfg_.batch_size, sample_rng_);
  LearnStats st;
  st.critic_loss = critic_update(batch);
  st.mean_q = actor_update(batch);
  soft_update();
  ++updates_;
  return st;
}

template class BasicDdpgAgent<float>;
template class BasicDdpgAgent<double>;

// ---------------------------------------------------------------------------
// DdpgScaler

DdpgScaler::DdpgScaler(std::shared_ptr<const ServiceProfile> profile, int pop_count, DdpgConfig cfg)
    : profile_(std::move(profile)), pop_count_(pop_count), cfg_(cfg) {
  if (!profile_) throw std::invalid_argument("DdpgScaler: null profile");
  if (pop_count < 1) throw std::invalid_argument("DdpgScaler: pop_count must be >= 1");
  cfg_.validate();
  if (cfg_.scope == DdpgScope::kPerPop) {
    agents_.reserve(static_cast<std::size_t>(pop_count));
    for (int p = 0; p < pop_count; ++p)
      agents_.emplace_back(2, 1, cfg_, derive_seed(cfg_.seed, {static_cast<std::uint64_t>(p)}));
  } else {
    agents_.emplace_back(2 * pop_count, pop_count, cfg_, derive_seed(cfg_.seed, {0}));
  }
  pending_.resize(agents_.size());
}

std::string DdpgScaler::name() const {
  return cfg_.scope == DdpgScope::kPerPop ? "DDPG-1" : "DDPG-" + std::to_string(pop_count_);
}

void DdpgScaler::reset(int pop_count) {
  if (pop_count != pop_count_)
    throw std::invalid_argument("DdpgScaler: built for " + std::to_string(pop_count_) + " PoPs, environment has " +
                                std::to_string(pop_count));
  has_pending_ = false;
  has_reward_ = false;
}

std::vector<double> DdpgScaler::features(const SystemState& state, int agent) const {
  if (state.pop_count() != pop_count_) throw std::invalid_argument("DdpgScaler: state has wrong PoP count");
  const double c_scale = static_cast<double>(profile_->max_cpus());
  auto push = [&](std::vector<double>& f, const PopObservation& o) {
    f.push_back(o.n_vehicles / cfg_.vehicle_scale);
    f.push_back(o.cpus / c_scale);
  };
  std::vector<double> f;
  if (cfg_.scope == DdpgScope::kPerPop) {
    f.reserve(2);
    push(f, state.per_pop.at(static_cast<std::size_t>(agent)));
  } else {
    f.reserve(2 * state.per_pop.size());
    for (const auto& o : state.per_pop) push(f, o);
  }
  return f;
}

std::vector<int> DdpgScaler::scale(const DecisionContext& ctx, PopId /*placement*/) {
  const int c_max = profile_->max_cpus();
  std::vector<int> deltas;
  deltas.reserve(static_cast<std::size_t>(pop_count_));
  for (std::size_t k = 0; k < agents_.size(); ++k) {
    auto f = features(ctx.state, static_cast<int>(k));
    auto a = agents_[k].act(f, exploring_, c_max);
    deltas.insert(deltas.end(), a.discrete.begin(), a.discrete.end());
    if (exploring_) {
      pending_[k].s = std::move(f);
      pending_[k].a = std::move(a.real);
    }
  }
  has_pending_ = exploring_;
  has_reward_ = false;
  return deltas;
}

void DdpgScaler::record_reward(const StepOutcome& out) {
  if (!has_pending_) throw std::logic_error("DdpgScaler::record_reward: no exploring decision pending");
  for (std::size_t k = 0; k < agents_.size(); ++k) {
    if (cfg_.scope == DdpgScope::kPerPop && cfg_.reward_scope == RewardScope::kLocal)
      pending_[k].r = out.per_pop_rewards.at(k);
    else
      pending_[k].r = out.avg_reward;
  }
  has_reward_ = true;
}

std::optional<double> DdpgScaler::complete_transition(const SystemState& next_state, bool done) {
  if (!has_pending_ || !has_reward_) throw std::logic_error("DdpgScaler::complete_transition: nothing pending");
  const auto n = static_cast<int>(agents_.size());
  std::vector<double> losses(agents_.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<std::exception_ptr> errors(agents_.size());
#pragma omp parallel for schedule(static) if (n > 1)
  for (int k = 0; k < n; ++k) {
    try {
      const auto s_next = features(next_state, k);
      agents_[k].remember(pending_[k].s, pending_[k].a, pending_[k].r, s_next, done);
      if (auto st = agents_[k].learn()) losses[k] = st->critic_loss;
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (int k = 0; k < n; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const std::exception& e) {
      throw std::runtime_error("agent " + std::to_string(k) + ": " + e.what());
    }
  }
  has_pending_ = false;
  has_reward_ = false;
  std::optional<double> worst;
  for (double l : losses)
    if (!std::isnan(l)) worst = worst ? std::max(*worst, l) : l;
  return worst;
}

nlohmann::json DdpgScaler::checkpoint() const {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : agents_) agents.push_back({{"actor", to_json(a.actor())}, {"critic", to_json(a.critic())}});
  return {{"format", "v2n-ddpg-checkpoint"},
          {"version", 1},
          {"pop_count", pop_count_},
          {"max_cpus", profile_->max_cpus()},
          {"config", to_json(cfg_)},
          {"agents", agents}};
}

DdpgScaler DdpgScaler::from_checkpoint(const nlohmann::json& j, std::shared_ptr<const ServiceProfile> profile) {
  if (j.value("format", "") != "v2n-ddpg-checkpoint") throw std::invalid_argument("checkpoint: unrecognized format");
  if (j.value("version", 0) != 1) throw std::invalid_argument("checkpoint: unsupported version");
  if (!profile) throw std::invalid_argument("checkpoint: null profile");
  if (j.at("max_cpus").get<int>() != profile->max_cpus())
    throw std::invalid_argument("checkpoint: trained for max_cpus " + j.at("max_cpus").dump() + ", profile has " +
                                std::to_string(profile->max_cpus()));
  DdpgScaler s(std::move(profile), j.at("pop_count").get<int>(), ddpg_config_from_json(j.at("config")));
  const auto& agents = j.at("agents");
  if (agents.size() != s.agents_.size()) throw std::invalid_argument("checkpoint: agent count mismatch");
  for (std::size_t k = 0; k < s.agents_.size(); ++k)
    s.agents_[k].set_networks(mlp_from_json<float>(agents[k].at("actor")),
                              mlp_from_json<float>(agents[k].at("critic")));
  return s;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(DdpgScaler& scaler, std::shared_ptr<const Scenario> scenario,
                  std::shared_ptr<const ServiceProfile> profile, const RewardConfig& reward_cfg,
                  const TrainOptions& opts) {
  if (opts.episodes < 1) throw std::invalid_argument("train: episodes must be >= 1");
  Environment env(scenario, profile, reward_cfg, opts.initial_cpus);
  if (scenario->trace.empty()) throw std::invalid_argument("train: empty training trace");
  GreedyPlacement placement(profile, reward_cfg.transmission_ms, opts.include_candidate);
  for (std::size_t k = 0; k < scaler.agents().size(); ++k)
    scaler.agents()[k].reseed(derive_seed(opts.seed, {static_cast<std::uint64_t>(k)}));

  TrainResult result;
  scaler.set_exploring(true);
  for (int ep = 0; ep < opts.episodes; ++ep) {
    env.reset();
    scaler.reset(env.pop_count());
    double sum = 0.0;
    std::size_t steps = 0;
    SystemState last;
    auto finish = [&](const SystemState& next, bool done) {
      std::optional<double> loss;
      try {
        loss = scaler.complete_transition(next, done);
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at episode " + std::to_string(ep) + ", step " +
                                 std::to_string(steps) + ": " + e.what());
      }
      if (loss && !std::isfinite(*loss))
        throw std::runtime_error("training diverged at episode " + std::to_string(ep) + ", step " +
                                 std::to_string(steps) + ": critic loss " + std::to_string(*loss));
    };
    bool pending = false;
    while (auto arrival = env.peek_arrival()) {
      if (pending) finish(arrival->state, false);
      const DecisionContext ctx{arrival->state, arrival->origin, arrival->t_s, env.remote_counts()};
      FullAction action;
      action.placement = placement.place(ctx);
      action.deltas = scaler.scale(ctx, action.placement);
      auto out = env.step(action);
      scaler.record_reward(out);
      pending = true;
      sum += out.avg_reward;
      ++steps;
      last = std::move(out.next_state);
    }
    if (pending) finish(last, true);
    const double mean = steps ? sum / static_cast<double>(steps) : 0.0;
    result.curve.push_back(mean);
    result.steps += steps;
    if (opts.on_episode) opts.on_episode(ep, mean);
  }
  scaler.set_exploring(false);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kElu:
      return "elu";
    case Activation::kTanh:
      return "tanh";
    case Activation::kLinear:
      return "linear";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "elu") return Activation::kElu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "linear") return Activation::kLinear;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

}  // namespace

template <typename T>
nlohmann::json to_json(const BasicMlp<T>& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w, b;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.push_back(static_cast<double>(l.weight(i, j)));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) b.push_back(static_cast<double>(l.bias(i)));
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", w},
                      {"bias", b}});
  }
  return {{"widths", net.widths()},
          {"hidden_activation", activation_name(net.hidden_activation())},
          {"output_activation", activation_name(net.output_activation())},
          {"layers", layers}};
}

template <typename T>
BasicMlp<T> mlp_from_json(const nlohmann::json& j) {
  BasicMlp<T> net(j.at("widths").get<std::vector<int>>(), parse_activation(j.at("hidden_activation").get<std::string>()),
             parse_activation(j.at("output_activation").get<std::string>()));
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers().size()) throw std::invalid_argument("network JSON: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& dst = net.layers()[l];
    const auto& src = layers[l];
    const auto w = src.at("weight").get<std::vector<double>>();
    const auto b = src.at("bias").get<std::vector<double>>();
    if (src.at("rows").get<Eigen::Index>() != dst.weight.rows() ||
        src.at("cols").get<Eigen::Index>() != dst.weight.cols() ||
        w.size() != static_cast<std::size_t>(dst.weight.size()) || b.size() != static_cast<std::size_t>(dst.bias.size()))
      throw std::invalid_argument("network JSON: layer " + std::to_string(l) + " shape mismatch");
    for (Eigen::Index i = 0; i < dst.weight.rows(); ++i)
      for (Eigen::Index c = 0; c < dst.weight.cols(); ++c)
        dst.weight(i, c) = static_cast<T>(w[static_cast<std::size_t>(i * dst.weight.cols() + c)]);
    for (Eigen::Index i = 0; i < dst.bias.size(); ++i) dst.bias(i) = static_cast<T>(b[static_cast<std::size_t>(i)]);
  }
  if (!net.all_finite()) throw std::invalid_argument("network JSON: non-finite parameter");
  return net;
}

template nlohmann::json to_json(const BasicMlp<float>&);
template nlohmann::json to_json(const BasicMlp<double>&);
template BasicMlp<float> mlp_from_json(const nlohmann::json&);
template BasicMlp<double> mlp_from_json(const nlohmann::json&);

}  // namespace v2n
