#include <cmath>
#include <functional>

#include "doctest.h"
#include "v2n/mlp.hpp"

using namespace v2n;
using doctest::Approx;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::max(std::abs(a), std::abs(b))); }

// Scalar loss L = sum(w .* f(x)) for a fixed weighting w.
double weighted(const MlpNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  return net.forward(x).cwiseProduct(w).sum();
}

// Checks every parameter and input gradient against central differences.
double max_fd_error(MlpNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  MlpNet::Tape tape;
  net.forward(x, tape);
  LayerParams grads;
  const Eigen::MatrixXd dx = net.backward(tape, w, &grads);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto check = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + h;
      const double up = weighted(net, x, w);
      param = keep - h;
      const double down = weighted(net, x, w);
      param = keep;
      worst = std::max(worst, rel_err((up - down) / (2 * h), analytic));
    };
    auto& layer = net.layers()[l];
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) check(layer.weight.data()[i], grads[l].weight.data()[i]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) check(layer.bias.data()[i], grads[l].bias.data()[i]);
  }
  Eigen::MatrixXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = xp.data()[i];
    xp.data()[i] = keep + h;
    const double up = weighted(net, xp, w);
    xp.data()[i] = keep - h;
    const double down = weighted(net, xp, w);
    xp.data()[i] = keep;
    worst = std::max(worst, rel_err((up - down) / (2 * h), dx.data()[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("forward examples") {
  MlpNet zero({3, 4, 2}, Activation::kElu, Activation::kTanh);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
  CHECK(zero.forward(x).isZero());

  MlpNet ident({1, 1}, Activation::kElu, Activation::kLinear);
  ident.layers()[0].weight(0, 0) = 1.0;
  for (double v : {-3.0, 0.0, 2.5}) CHECK(ident.forward(Eigen::MatrixXd::Constant(1, 1, v))(0, 0) == v);

  MlpNet elu({1, 1}, Activation::kElu, Activation::kElu);
  elu.layers()[0].weight(0, 0) = 1.0;
  CHECK(elu.forward(Eigen::MatrixXd::Constant(1, 1, -1.0))(0, 0) == Approx(std::exp(-1.0) - 1.0));
  CHECK(elu.forward(Eigen::MatrixXd::Constant(1, 1, -1.0))(0, 0) == Approx(-0.6321).epsilon(1e-4));
  CHECK(elu.forward(Eigen::MatrixXd::Constant(1, 1, 2.0))(0, 0) == 2.0);

  CHECK_THROWS_AS(zero.forward(Eigen::MatrixXd::Zero(2, 1)), std::invalid_argument);
  CHECK_THROWS(MlpNet({3}, Activation::kElu, Activation::kTanh));
  CHECK(zero.parameter_count() == 3 * 4 + 4 + 4 * 2 + 2);
}

TEST_CASE("backward examples") {
  MlpNet lin({1, 1}, Activation::kElu, Activation::kLinear);
  lin.layers()[0].weight(0, 0) = 0.7;
  MlpNet::Tape tape;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1, 1.9);
  lin.forward(x, tape);
  LayerParams g;
  const auto dx = lin.backward(tape, Eigen::MatrixXd::Ones(1, 1), &g);
  CHECK(g[0].weight(0, 0) == Approx(1.9));
  CHECK(g[0].bias(0) == Approx(1.0));
  CHECK(dx(0, 0) == Approx(0.7));

  Rng rng(1);
  auto net = MlpNet::random({4, 8, 8, 2}, Activation::kElu, Activation::kTanh, rng, 0.5);
  const Eigen::MatrixXd xb = Eigen::MatrixXd::Random(4, 3);
  net.forward(xb, tape);
  const auto dz = net.backward(tape, Eigen::MatrixXd::Zero(2, 3), &g);
  CHECK(dz.isZero());
  for (const auto& l : g) {
    CHECK(l.weight.isZero());
    CHECK(l.bias.isZero());
  }
  CHECK_THROWS(net.backward(tape, Eigen::MatrixXd::Zero(3, 3), &g));
}

TEST_CASE("random 4-8-8-2 net matches finite differences") {
  Rng rng(2024);
  for (auto out : {Activation::kTanh, Activation::kLinear}) {
    auto net = MlpNet::random({4, 8, 8, 2}, Activation::kElu, out, rng, 0.5);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3) * 2.0;
    const Eigen::MatrixXd w = Eigen::MatrixXd::Random(2, 3);
    CHECK(max_fd_error(net, x, w) < 1e-4);
  }
}

TEST_CASE("adam step algebra") {
  Rng rng(5);
  auto net = MlpNet::random({2, 3, 1}, Activation::kElu, Activation::kLinear, rng);
  const auto before = net;
  LayerParams g = zeros_like(net.layers());
  for (auto& l : g) {
    l.weight = Eigen::MatrixXd::Random(l.weight.rows(), l.weight.cols());
    l.bias = Eigen::VectorXd::Random(l.bias.size());
  }
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam opt(net, cfg);
  opt.step(net, g);
  for (std::size_t l = 0; l < g.size(); ++l) {
    const Eigen::MatrixXd dw = net.layers()[l].weight - before.layers()[l].weight;
    for (Eigen::Index i = 0; i < dw.size(); ++i) {
      CHECK(std::abs(dw.data()[i]) == Approx(cfg.lr).epsilon(1e-4));
      CHECK((dw.data()[i] < 0) == (g[l].weight.data()[i] > 0));
    }
  }

  auto still = before;
  Adam opt2(still, cfg);
  opt2.step(still, zeros_like(still.layers()));
  for (std::size_t l = 0; l < g.size(); ++l) CHECK(still.layers()[l].weight == before.layers()[l].weight);

  auto a = before, b = before;
  Adam oa(a, cfg), ob(b, cfg);
  oa.step(a, g);
  ob.step(b, g);
  for (std::size_t l = 0; l < g.size(); ++l) CHECK(a.layers()[l].weight == b.layers()[l].weight);

  auto bad = g;
  bad[0].weight(0, 0) = std::nan("");
  const auto keep = a;
  CHECK_THROWS_AS(oa.step(a, bad), std::domain_error);
  CHECK(a.layers()[0].weight == keep.layers()[0].weight);
  LayerParams wrong(1);
  CHECK_THROWS_AS(oa.step(a, wrong), std::invalid_argument);
}

TEST_CASE("polyak update") {
  MlpNet src({1, 1}, Activation::kElu, Activation::kLinear), dst = src;
  src.layers()[0].weight(0, 0) = 1.0;
  polyak_update(dst, src, 1e-3);
  CHECK(dst.layers()[0].weight(0, 0) == Approx(0.001));

  Rng rng(4);
  auto s = MlpNet::random({3, 5, 2}, Activation::kElu, Activation::kTanh, rng, 1.0);
  auto t = MlpNet::random({3, 5, 2}, Activation::kElu, Activation::kTanh, rng, 1.0);
  auto t0 = t;
  polyak_update(t0, s, 0.0);
  CHECK(t0.layers()[1].weight == t.layers()[1].weight);
  auto t1 = t;
  polyak_update(t1, s, 1.0);
  CHECK(t1.layers()[1].weight == s.layers()[1].weight);

  auto dist = [&](const MlpNet& a) {
    double d = 0.0;
    for (std::size_t l = 0; l < a.layers().size(); ++l)
      d += (a.layers()[l].weight - s.layers()[l].weight).squaredNorm() + (a.layers()[l].bias - s.layers()[l].bias).squaredNorm();
    return std::sqrt(d);
  };
  double last = dist(t);
  for (int i = 0; i < 50; ++i) {
    polyak_update(t, s, 0.05);
    const double now = dist(t);
    CHECK(now <= last);
    last = now;
  }
  MlpNet other({3, 4, 2}, Activation::kElu, Activation::kTanh);
  CHECK_THROWS(polyak_update(other, s, 0.5));
}

TEST_CASE("float network agrees with double") {
  Rng rng(6);
  auto net = MlpNet::random({5, 16, 16, 3}, Activation::kElu, Activation::kTanh, rng, 0.3);
  const auto f = net.cast<float>();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 4);
  const Eigen::MatrixXd yd = net.forward(x);
  const Eigen::MatrixXd yf = f.forward(x.cast<float>()).cast<double>();
  CHECK((yd - yf).cwiseAbs().maxCoeff() < 1e-5);
}
