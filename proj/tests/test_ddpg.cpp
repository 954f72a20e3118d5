#include <cmath>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "v2n/agents.hpp"
#include "v2n/ddpg.hpp"

using namespace v2n;
using doctest::Approx;

namespace {

ReplayBuffer::Batch random_batch(int state_dim, int action_dim, std::size_t n, Rng& rng) {
  ReplayBuffer buf(state_dim, action_dim, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(state_dim), a(action_dim), s2(state_dim);
    for (auto& x : s) x = rng.uniform(-1.0, 1.0);
    for (auto& x : a) x = rng.uniform(-1.0, 1.0);
    for (auto& x : s2) x = rng.uniform(-1.0, 1.0);
    buf.push(s, a, rng.uniform(0.0, 1.0), s2, i % 7 == 0);
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return buf.gather(idx);
}

DdpgConfig small_config() {
  DdpgConfig c;
  c.hidden_width = 8;
  c.batch_size = 4;
  c.replay_capacity = 1000;
  return c;
}

}  // namespace

TEST_CASE("dod_discretize") {
  CHECK(dod_discretize(0.0, 5) == 0);
  CHECK(dod_discretize(1.0, 5) == 5);
  CHECK(dod_discretize(-1.0, 5) == -5);
  CHECK(dod_discretize(-0.62, 5) == -3);
  CHECK(dod_discretize(0.1, 5) == 1);   // 0.5 rounds away from zero
  CHECK(dod_discretize(-0.1, 5) == -1);
  CHECK(dod_discretize(1.3, 5) == 5);
  CHECK(dod_discretize(-7.0, 5) == -5);

  std::set<int> seen;
  int prev = -100;
  for (int i = 0; i <= 20000; ++i) {
    const double a = -1.0 + 2.0 * i / 20000.0;
    const int d = dod_discretize(a, 5);
    CHECK(d >= prev);
    CHECK(dod_discretize(-a, 5) == -d);
    prev = d;
    seen.insert(d);
  }
  CHECK(seen.size() == 11);
  const std::vector<double> v{0.2, -0.9};
  CHECK(dod_discretize(v, 3) == std::vector<int>{1, -3});
}

TEST_CASE("replay buffer overwrites FIFO") {
  ReplayBuffer buf(1, 1, 5);
  for (int i = 0; i < 8; ++i) {
    const std::vector<double> s{double(i)}, a{0.0}, s2{double(i + 1)};
    buf.push(s, a, i, s2, false);
  }
  CHECK(buf.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(buf.at(i).r == double(i + 3));
  Rng rng(1);
  const auto b = buf.sample(100, rng);
  CHECK(b.size() == 100);
  for (Eigen::Index i = 0; i < 100; ++i) {
    CHECK(b.r(i) >= 3.0);
    CHECK(b.s(0, i) == b.r(i));
    CHECK(b.s_next(0, i) == b.r(i) + 1.0);
  }
  const std::vector<double> wrong{1.0, 2.0}, ok{0.0};
  CHECK_THROWS(buf.push(wrong, ok, 0.0, ok, false));
}

TEST_CASE("act is deterministic without exploration and reproducible with it") {
  auto cfg = small_config();
  DdpgAgent agent(2, 1, cfg, 3);
  const std::vector<double> f{0.3, 0.4};
  CHECK(agent.act(f, false, 5).real == agent.act(f, false, 5).real);

  DdpgAgent a1(2, 1, cfg, 3), a2(2, 1, cfg, 3);
  for (int i = 0; i < 5; ++i) CHECK(a1.act(f, true, 5).real == a2.act(f, true, 5).real);

  cfg.zero_init = true;
  DdpgAgent z(2, 1, cfg, 3);
  const auto a = z.act(f, false, 5);
  CHECK(a.real == std::vector<double>{0.0});
  CHECK(a.discrete == std::vector<int>{0});
}

TEST_CASE("composed actor gradient matches finite differences") {
  Rng rng(77);
  auto cfg = small_config();
  for (int trial = 0; trial < 5; ++trial) {
    DdpgAgent agent(3, 2, cfg, 100 + trial);
    // Larger final layers so the objective is not flat.
    Rng init(trial);
    agent.set_networks(MlpNet::random({3, 8, 8, 2}, Activation::kElu, Activation::kTanh, init, 0.8),
                       MlpNet::random({5, 8, 8, 1}, Activation::kElu, Activation::kLinear, init, 0.8));
    const auto batch = random_batch(3, 2, 6, rng);
    const auto g = agent.actor_gradient(batch);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t l = 0; l < g.size(); ++l) {
      auto& w = agent.actor().layers()[l].weight;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double keep = w.data()[i];
        w.data()[i] = keep + h;
        const double up = agent.actor_objective(batch);
        w.data()[i] = keep - h;
        const double down = agent.actor_objective(batch);
        w.data()[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double an = g[l].weight.data()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an))));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("critic regression with gamma = 0") {
  auto cfg = small_config();
  cfg.gamma = 0.0;
  cfg.lr_critic = 1e-2;
  DdpgAgent agent(2, 1, cfg, 9);
  ReplayBuffer buf(2, 1, 8);
  const std::vector<double> s{0.5, -0.5}, a{0.25};
  for (int i = 0; i < 8; ++i) buf.push(s, a, 0.8, s, false);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto batch = buf.gather(idx);
  const double first = agent.critic_update(batch);
  CHECK(first == Approx(std::pow(0.8 - agent.q_value(s, a), 2)).epsilon(0.2));
  double loss = first;
  for (int i = 0; i < 300; ++i) loss = agent.critic_update(batch);
  CHECK(loss < 1e-4);
  CHECK(loss < first);

  // Identical transitions: a batch of four steps like a batch of one.
  DdpgAgent x(2, 1, cfg, 10), y(2, 1, cfg, 10);
  const std::vector<std::size_t> one{0};
  x.critic_update(buf.gather(one));
  y.critic_update(batch);
  CHECK(x.critic().layers()[0].weight.isApprox(y.critic().layers()[0].weight, 1e-12));
}

TEST_CASE("zero-init nets on a zero-reward environment have zero loss") {
  auto cfg = small_config();
  cfg.zero_init = true;
  DdpgAgent agent(2, 1, cfg, 1);
  ReplayBuffer buf(2, 1, 4);
  const std::vector<double> s{0.1, 0.2}, a{0.0};
  for (int i = 0; i < 4; ++i) buf.push(s, a, 0.0, s, false);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  CHECK(agent.critic_update(buf.gather(idx)) == 0.0);
}

TEST_CASE("actor climbs a linear critic and ignores a constant one") {
  auto cfg = small_config();
  cfg.lr_actor = 1e-2;
  DdpgAgent agent(2, 1, cfg, 4);
  // Critic Q(s, a) = a: zero hidden path, output weight on the action input only.
  MlpNet critic({3, 1}, Activation::kElu, Activation::kLinear);
  critic.layers()[0].weight(0, 2) = 1.0;
  Rng init(1);
  agent.set_networks(MlpNet::random({2, 8, 8, 1}, Activation::kElu, Activation::kTanh, init), critic);
  Rng rng(2);
  const auto batch = random_batch(2, 1, 16, rng);
  const std::vector<double> probe{0.2, 0.3};
  double prev = agent.policy(probe)[0];
  for (int i = 0; i < 50; ++i) {
    agent.actor_update(batch);
    const double now = agent.policy(probe)[0];
    CHECK(now >= prev - 1e-12);
    prev = now;
  }
  CHECK(prev > 0.5);

  DdpgAgent flat(2, 1, cfg, 4);
  MlpNet constant({3, 1}, Activation::kElu, Activation::kLinear);
  constant.layers()[0].bias(0) = 0.7;
  flat.set_networks(MlpNet::random({2, 8, 8, 1}, Activation::kElu, Activation::kTanh, init), constant);
  const auto before = flat.actor().layers()[0].weight;
  for (const auto& l : flat.actor_gradient(batch)) CHECK(l.weight.isZero());
  flat.actor_update(batch);
  CHECK(flat.actor().layers()[0].weight == before);
}

TEST_CASE("learn waits for warm-up and soft-updates targets") {
  auto cfg = small_config();
  cfg.tau = 0.5;
  DdpgAgent agent(2, 1, cfg, 5);
  const std::vector<double> s{0.1, 0.2}, a{0.3};
  for (int i = 0; i < 3; ++i) {
    agent.remember(s, a, 1.0, s, false);
    CHECK(!agent.learn());
  }
  agent.remember(s, a, 1.0, s, false);
  const auto before = agent.critic_target().layers()[0].weight;
  CHECK(agent.learn());
  CHECK(agent.updates() == 1);
  CHECK(agent.critic_target().layers()[0].weight != before);
}

TEST_CASE("ddpg config json") {
  DdpgConfig c;
  c.scope = DdpgScope::kGlobal;
  c.reward_scope = RewardScope::kLocal;
  c.seed = 12;
  const auto back = ddpg_config_from_json(to_json(c));
  CHECK(back.scope == DdpgScope::kGlobal);
  CHECK(back.reward_scope == RewardScope::kLocal);
  CHECK(back.seed == 12);
  CHECK(back.effective_width() == 256);
  CHECK(DdpgConfig{}.effective_width() == 64);
  CHECK_THROWS(ddpg_config_from_json({{"sigma", 0.1}}));
  CHECK_THROWS(ddpg_config_from_json({{"scope", "both"}}));
  DdpgConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("scaler shapes, features and checkpoints") {
  auto prof = test::profile_ptr();
  DdpgConfig c = small_config();
  DdpgScaler one(prof, 3, c);
  CHECK(one.name() == "DDPG-1");
  CHECK(one.agents().size() == 3);
  c.scope = DdpgScope::kGlobal;
  DdpgScaler all(prof, 3, c);
  CHECK(all.name() == "DDPG-3");
  CHECK(all.agents().size() == 1);
  CHECK(all.agents()[0].state_dim() == 6);
  CHECK(all.agents()[0].action_dim() == 3);

  SystemState s;
  s.per_pop = {{4, 5}, {0, 1}, {10, 0}};
  CHECK(one.features(s, 2) == std::vector<double>{0.5, 0.0});
  CHECK(all.features(s, 0) == std::vector<double>{0.2, 1.0, 0.0, 0.2, 0.5, 0.0});

  const std::vector<int> remote{0, 0, 0};
  const DecisionContext ctx{s, 0, 0.0, remote};
  const auto restored = DdpgScaler::from_checkpoint(nlohmann::json::parse(one.checkpoint().dump()), prof);
  DdpgScaler copy = restored;
  CHECK(copy.scale(ctx, 0) == one.scale(ctx, 0));
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(restored.agents()[k].actor().layers()[1].weight == one.agents()[k].actor().layers()[1].weight);
  CHECK_THROWS(DdpgScaler::from_checkpoint(one.checkpoint(), test::profile_ptr(3)));
  auto broken = one.checkpoint();
  broken["format"] = "other";
  CHECK_THROWS(DdpgScaler::from_checkpoint(broken, prof));
}

TEST_CASE("training is deterministic and keeps parameters finite") {
  auto prof = test::profile_ptr();
  SynthParams sp;
  sp.pops = 2;
  sp.peak_veh_per_hour = 200.0;
  const auto trace = generate_arrivals(synth_intensity(sp), 3).window(7 * 3600.0, 7.5 * 3600.0);
  auto sc = std::make_shared<const Scenario>(make_scenario(trace, 4));
  REQUIRE(sc->size() > 20);
  DdpgConfig c = small_config();
  c.seed = 5;
  TrainOptions o;
  o.episodes = 3;
  o.seed = 6;
  DdpgScaler a(prof, 2, c), b(prof, 2, c);
  const auto ra = train(a, sc, prof, RewardConfig{}, o);
  const auto rb = train(b, sc, prof, RewardConfig{}, o);
  CHECK(ra.curve.size() == 3);
  CHECK(ra.curve == rb.curve);
  CHECK(ra.steps == 3 * sc->size());
  CHECK(a.checkpoint().dump() == b.checkpoint().dump());
  for (const auto& ag : a.agents()) {
    CHECK(ag.actor().all_finite());
    CHECK(ag.critic().all_finite());
    CHECK(ag.updates() > 0);
  }
  CHECK(!a.exploring());

  o.episodes = 0;
  CHECK_THROWS(train(a, sc, prof, RewardConfig{}, o));
}

TEST_CASE("learning progress on a constant-load trace") {
  // One PoP, constant intensity: the best fixed C is learnable from (N, C).
  auto prof = test::profile_ptr();
  IntensityTable table;
  for (int w = 0; w < 12; ++w) table.entries.push_back({w * 300.0, 0, 60.0});
  const auto trace = generate_arrivals(table, 1);
  auto sc = std::make_shared<const Scenario>(make_scenario(trace, 2));
  DdpgConfig c;
  c.hidden_width = 32;
  c.seed = 3;
  c.lr_actor = 1e-3;
  DdpgScaler scaler(prof, 1, c);
  TrainOptions o;
  o.episodes = 30;
  o.seed = 4;
  const auto r = train(scaler, sc, prof, RewardConfig{}, o);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += r.curve[i];
    last += r.curve[20 + i];
  }
  CHECK(last > first);
}
