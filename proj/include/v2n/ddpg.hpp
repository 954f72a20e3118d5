#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "v2n/environment.hpp"
#include "v2n/mlp.hpp"
#include "v2n/rng.hpp"

namespace v2n {

/// Round half away from zero, then clamp to [-c_max, c_max]. Inputs outside
/// [-1, 1] are clipped first.
int dod_discretize(double a_hat, int c_max);
std::vector<int> dod_discretize(std::span<const double> a_hat, int c_max);

/// Transition ring buffer with FIFO overwrite. Storage grows on demand up to
/// capacity.
class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim, std::size_t capacity);

  void push(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s_next,
            bool done);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  struct Batch {
    Eigen::MatrixXd s;       // state_dim x B
    Eigen::MatrixXd a;       // action_dim x B
    Eigen::RowVectorXd r;    // 1 x B
    Eigen::MatrixXd s_next;  // state_dim x B
    Eigen::RowVectorXd done; // 1 x B, 1.0 for terminal
    std::size_t size() const { return static_cast<std::size_t>(r.size()); }
  };

  /// Uniform sample with replacement.
  Batch sample(std::size_t batch_size, Rng& rng) const;
  /// Batch made of the given logical indices (0 = oldest).
  Batch gather(std::span<const std::size_t> indices) const;

  struct Item {
    std::vector<double> s, a, s_next;
    double r = 0.0;
    bool done = false;
  };
  /// Logical index 0 is the oldest stored transition.
  Item at(std::size_t i) const;

 private:
  std::size_t physical(std::size_t logical) const;

  int state_dim_;
  int action_dim_;
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t head_ = 0;  // next write slot
  std::vector<double> s_, a_, r_, s_next_, done_;
};

enum class DdpgScope { kPerPop, kGlobal };
enum class RewardScope { kAveraged, kLocal };

std::string to_string(DdpgScope s);
std::string to_string(RewardScope s);
DdpgScope parse_ddpg_scope(const std::string& s);
RewardScope parse_reward_scope(const std::string& s);

struct DdpgConfig {
  DdpgScope scope = DdpgScope::kPerPop;
  int hidden_width = 0;  // 0: 64 for kPerPop, 256 for kGlobal
  int hidden_layers = 2;
  double lr_actor = 1e-4;
  double lr_critic = 1e-3;
  double gamma = 0.99;
  double tau = 1e-3;
  double exploration_sigma = 0.1;
  std::size_t replay_capacity = 1'000'000;
  std::size_t batch_size = 64;
  std::size_t warmup = 0;  // 0: one batch
  RewardScope reward_scope = RewardScope::kAveraged;
  double vehicle_scale = 20.0;  // N feature = N / vehicle_scale
  bool zero_init = false;
  std::uint64_t seed = 0;

  int effective_width() const;
  std::size_t effective_warmup() const { return warmup == 0 ? batch_size : warmup; }
  void validate() const;
};

nlohmann::json to_json(const DdpgConfig& cfg);
DdpgConfig ddpg_config_from_json(const nlohmann::json& j);

/// One actor-critic pair with target networks, optimizers and replay. T is
/// the network precision; replay and the public interface stay in double.
template <typename T>
class BasicDdpgAgent {
 public:
  using Net = BasicMlp<T>;
  using Params = BasicLayerParams<T>;

  BasicDdpgAgent(int state_dim, int action_dim, const DdpgConfig& cfg, std::uint64_t seed);

  struct Action {
    std::vector<double> real;   // post-noise, clipped to [-1, 1]
    std::vector<int> discrete;  // DOD of real
  };
  /// Actor forward; with explore, N(0, sigma) noise per component then clip.
  Action act(std::span<const double> features, bool explore, int c_max);
  /// Deterministic actor output.
  std::vector<double> policy(std::span<const double> features) const;
  double q_value(std::span<const double> features, std::span<const double> action) const;

  /// One Adam step on the mean squared TD error. Returns the pre-step loss.
  double critic_update(const ReplayBuffer::Batch& batch);
  /// One Adam ascent step on mean Q(s, pi(s)). Returns the pre-step mean Q.
  double actor_update(const ReplayBuffer::Batch& batch);
  /// d mean Q(s, pi(s)) / d actor parameters.
  Params actor_gradient(const ReplayBuffer::Batch& batch) const;
  /// Mean Q(s, pi(s)) under the current actor and critic.
  double actor_objective(const ReplayBuffer::Batch& batch) const;
  void soft_update();

  struct LearnStats {
    double critic_loss = 0.0;
    double mean_q = 0.0;
  };
  /// After warm-up: sample a batch, critic_update, actor_update, soft_update.
  std::optional<LearnStats> learn();

  void remember(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s_next,
                bool done) {
    replay_.push(s, a, r, s_next, done);
  }
  void reseed(std::uint64_t seed);
  /// Replaces actor and critic (targets copied, optimizers restarted).
  void set_networks(Net actor, Net critic);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const DdpgConfig& config() const { return cfg_; }
  Net& actor() { return actor_; }
  Net& critic() { return critic_; }
  const Net& actor() const { return actor_; }
  const Net& critic() const { return critic_; }
  const Net& actor_target() const { return actor_target_; }
  const Net& critic_target() const { return critic_target_; }
  const ReplayBuffer& replay() const { return replay_; }
  std::size_t updates() const { return updates_; }

 private:
  using Matrix = typename Net::Matrix;
  Matrix critic_input(const Matrix& s, const Matrix& a) const;

  int state_dim_;
  int action_dim_;
  DdpgConfig cfg_;
  Net actor_, critic_, actor_target_, critic_target_;
  BasicAdam<T> actor_opt_, critic_opt_;
  ReplayBuffer replay_;
  Rng noise_rng_;
  Rng sample_rng_;
  std::size_t updates_ = 0;
};

using DdpgAgent = BasicDdpgAgent<double>;
using DdpgAgentF = BasicDdpgAgent<float>;
extern template class BasicDdpgAgent<float>;
extern template class BasicDdpgAgent<double>;

/// DDPG scaling policy. kPerPop runs one agent per PoP on (N_p, C_p) emitting
/// that PoP's delta; kGlobal runs one agent on the whole state. Networks are
/// single precision.
class DdpgScaler final : public ScalingPolicy {
 public:
  DdpgScaler(std::shared_ptr<const ServiceProfile> profile, int pop_count, DdpgConfig cfg);

  std::string name() const override;
  void reset(int pop_count) override;
  std::vector<int> scale(const DecisionContext& ctx, PopId placement) override;

  void set_exploring(bool on) { exploring_ = on; }
  bool exploring() const { return exploring_; }

  /// Features of agent k for a state.
  std::vector<double> features(const SystemState& state, int agent) const;

  /// Training hooks: reward of the last scale() call, then the successor state.
  void record_reward(const StepOutcome& out);
  /// Stores the pending transitions with s_next and runs one learning step per agent.
  /// Returns the largest critic loss among agents that learned.
  std::optional<double> complete_transition(const SystemState& next_state, bool done);

  int pop_count() const { return pop_count_; }
  const DdpgConfig& config() const { return cfg_; }
  std::vector<DdpgAgentF>& agents() { return agents_; }
  const std::vector<DdpgAgentF>& agents() const { return agents_; }

  nlohmann::json checkpoint() const;
  static DdpgScaler from_checkpoint(const nlohmann::json& j, std::shared_ptr<const ServiceProfile> profile);

 private:
  struct Pending {
    std::vector<double> s;
    std::vector<double> a;
    double r = 0.0;
  };

  std::shared_ptr<const ServiceProfile> profile_;
  int pop_count_;
  DdpgConfig cfg_;
  std::vector<DdpgAgentF> agents_;
  bool exploring_ = false;
  std::vector<Pending> pending_;
  bool has_pending_ = false;
  bool has_reward_ = false;
};

struct TrainOptions {
  int episodes = 100;
  std::uint64_t seed = 0;
  int initial_cpus = 1;
  bool include_candidate = true;
  /// Called after every episode with (episode index, mean reward).
  std::function<void(int, double)> on_episode;
};

struct TrainResult {
  std::vector<double> curve;  // mean reward per episode
  std::size_t steps = 0;
};

/// Trains with exploration on the scenario, greedy placement alongside the
/// scaler. Throws std::runtime_error if a loss or gradient goes non-finite.
TrainResult train(DdpgScaler& scaler, std::shared_ptr<const Scenario> scenario,
                  std::shared_ptr<const ServiceProfile> profile, const RewardConfig& reward_cfg,
                  const TrainOptions& opts);

template <typename T>
nlohmann::json to_json(const BasicMlp<T>& net);
/// Parameters are read as double and narrowed to T.
template <typename T>
BasicMlp<T> mlp_from_json(const nlohmann::json& j);

}  // namespace v2n
