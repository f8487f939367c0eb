#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "spoofnet/layers.hpp"

using namespace spoofnet;
using namespace spoofnet::ad;

namespace {

// Central finite differences of f at the leaves, h = 1e-5, against the
// analytic grads from backward(). Returns the max relative error, with the
// denominator floored to avoid blowups on near-zero pairs.
double fd_check(const std::vector<Var>& leaves,
                const std::function<Var()>& f, double h = 1e-5) {
  Var loss = f();
  zero_grad(leaves);
  backward(loss);
  std::vector<Array> analytic;
  for (const auto& leaf : leaves)
    analytic.push_back(leaf->grad.size() ? leaf->grad
                                         : Array::Zero(leaf->value.size()));
  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    for (Eigen::Index i = 0; i < leaf->value.size(); ++i) {
      const double keep = leaf->value[i];
      leaf->value[i] = keep + h;
      const double up = f()->value[0];
      leaf->value[i] = keep - h;
      const double dn = f()->value[0];
      leaf->value[i] = keep;
      const double numeric = (up - dn) / (2 * h);
      const double denom = std::max({std::abs(numeric),
                                     std::abs(analytic[li][i]), 1e-4});
      worst = std::max(worst, std::abs(numeric - analytic[li][i]) / denom);
    }
  }
  return worst;
}

Var random_leaf(Shape shape, RandomStream& rng, double scl = 1.0) {
  Array data(numel(shape));
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = scl * rng.normal();
  return leaf(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("sum gradient is ones; fan-out accumulates") {
  RandomStream rng(11);
  Var x = random_leaf({3, 4}, rng);
  backward(sum(x));
  CHECK(((x->grad - 1.0).abs() < 1e-15).all());

  Var y = random_leaf({5}, rng);
  backward(sum(add(y, y)));
  CHECK(((y->grad - 2.0).abs() < 1e-15).all());
}

TEST_CASE("backward twice on one root is a state error") {
  RandomStream rng(1);
  Var x = random_leaf({2, 2}, rng);
  Var loss = sum(square(x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), StateError);
}

TEST_CASE("relu zeroes negative input") {
  Var x = leaf({4}, Array::Constant(4, -3.0));
  Var y = relu(x);
  CHECK((y->value == 0.0).all());
}

TEST_CASE("1x1 identity conv2d reproduces its input") {
  RandomStream rng(3);
  Var x = random_leaf({1, 5, 6}, rng);
  Var w = leaf({1, 1}, Array::Constant(1, 1.0));
  Var b = leaf({1}, Array::Zero(1));
  Var y = conv2d(x, w, b, 1, 1, 1, 1);
  CHECK(((y->value - x->value).abs() < 1e-15).all());
}

TEST_CASE("3x3 conv2d matches a naive sliding-window oracle") {
  RandomStream rng(5);
  const Eigen::Index cin = 2, cout = 3, H = 5, W = 5;
  Var x = random_leaf({cin, H, W}, rng);
  Var w = random_leaf({cout, cin * 9}, rng);
  Var b = random_leaf({cout}, rng);
  Var y = conv2d(x, w, b, 3, 3, 1, 1);
  REQUIRE(y->shape == Shape({cout, H, W}));  // stride 1: same size, pad 1

  auto at = [&](const Array& a, Eigen::Index c, Eigen::Index i,
                Eigen::Index j) { return a[(c * H + i) * W + j]; };
  for (Eigen::Index co = 0; co < cout; ++co)
    for (Eigen::Index i = 0; i < H; ++i)
      for (Eigen::Index j = 0; j < W; ++j) {
        double acc = b->value[co];
        for (Eigen::Index ci = 0; ci < cin; ++ci)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const Eigen::Index ii = i + dy, jj = j + dx;
              if (ii < 0 || jj < 0 || ii >= H || jj >= W) continue;
              acc += at(x->value, ci, ii, jj) *
                     w->value[co * cin * 9 + (ci * 3 + dy + 1) * 3 + dx + 1];
            }
        CHECK(std::abs(at(y->value, co, i, j) - acc) < 1e-12);
      }
}

TEST_CASE("elementwise and reduction ops pass finite differences") {
  RandomStream rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape = {1 + rng.uniform_int(1, 4), 1 + rng.uniform_int(1, 5)};
    Var x = random_leaf(shape, rng);
    Var y = random_leaf(shape, rng);
    auto f = [&] {
      Var t = add(mul(sigmoid(x), tanh_op(y)), scale(square(sub(x, y)), 0.3));
      return mean(add_scalar(relu(t), 0.1));
    };
    CHECK(fd_check({x, y}, f) < 1e-4);
  }
}

TEST_CASE("matmul / add_rowvec / transpose / slice / concat gradients") {
  RandomStream rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = rng.uniform_int(1, 4), k = rng.uniform_int(1, 5),
                       m = rng.uniform_int(1, 4);
    Var a = random_leaf({n, k}, rng);
    Var b = random_leaf({k, m}, rng);
    Var r = random_leaf({1, m}, rng);
    auto f = [&] {
      Var y = add_rowvec(matmul(a, b), r);
      Var t = transpose2d(y);
      Var s0 = slice_row(t, 0);
      return sum(square(concat_rows({s0, slice_row(t, t->shape[0] - 1)})));
    };
    CHECK(fd_check({a, b, r}, f) < 1e-4);
  }
}

TEST_CASE("conv2d gradients over random shapes, strides, paddings") {
  RandomStream rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index cin = rng.uniform_int(1, 3),
                       cout = rng.uniform_int(1, 3),
                       H = rng.uniform_int(3, 8), W = rng.uniform_int(3, 8);
    const int kh = static_cast<int>(rng.uniform_int(1, 3));
    const int kw = static_cast<int>(rng.uniform_int(1, 3));
    const int sh = static_cast<int>(rng.uniform_int(1, 2));
    const int sw = static_cast<int>(rng.uniform_int(1, 3));
    Var x = random_leaf({cin, H, W}, rng);
    Var w = random_leaf({cout, cin * kh * kw}, rng, 0.5);
    Var b = random_leaf({cout}, rng);
    auto f = [&] { return mean(square(conv2d(x, w, b, kh, kw, sh, sw))); };
    CHECK(fd_check({x, w, b}, f) < 1e-4);
  }
}

TEST_CASE("conv1d gradients over random shapes") {
  RandomStream rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index cin = rng.uniform_int(1, 3),
                       cout = rng.uniform_int(1, 3), N = rng.uniform_int(4, 12);
    const int k = static_cast<int>(rng.uniform_int(1, 3));
    const int s = static_cast<int>(rng.uniform_int(1, 3));
    Var x = random_leaf({cin, N}, rng);
    Var w = random_leaf({cout, cin * k}, rng, 0.5);
    Var b = random_leaf({cout}, rng);
    auto f = [&] { return mean(square(conv1d(x, w, b, k, s))); };
    CHECK(fd_check({x, w, b}, f) < 1e-4);
  }
}

TEST_CASE("maxpool gradients (distinct values avoid tie subgradients)") {
  RandomStream rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index c = rng.uniform_int(1, 3), H = rng.uniform_int(2, 6),
                       W = rng.uniform_int(2, 9);
    const int ph = static_cast<int>(rng.uniform_int(1, 2));
    const int pw = static_cast<int>(rng.uniform_int(1, 3));
    Var x = random_leaf({c, H, W}, rng);
    auto f2 = [&] { return sum(square(maxpool2d(x, ph, pw))); };
    CHECK(fd_check({x}, f2) < 1e-4);
    Var x1 = random_leaf({c, H * W}, rng);
    auto f1 = [&] { return sum(square(maxpool1d(x1, pw))); };
    CHECK(fd_check({x1}, f1) < 1e-4);
  }
}

TEST_CASE("dense layer gradients") {
  RandomStream rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = rng.uniform_int(1, 4), in = rng.uniform_int(1, 6),
                       out = rng.uniform_int(1, 5);
    layers::Dense d(in, out, rng);
    Var x = random_leaf({n, in}, rng);
    auto f = [&] { return mean(square(d.forward(x))); };
    CHECK(fd_check({x, d.weight, d.bias}, f) < 1e-4);
  }
}

TEST_CASE("gru gradients through all gates") {
  RandomStream rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index T = rng.uniform_int(1, 5), in = rng.uniform_int(1, 4),
                       h = rng.uniform_int(1, 4);
    layers::Gru gru(in, h, rng);
    Var x = random_leaf({T, in}, rng);
    std::vector<Var> leaves = {x,      gru.wz, gru.uz, gru.bz, gru.wr,
                               gru.ur, gru.br, gru.wh, gru.uh, gru.bh};
    auto f = [&] { return sum(square(gru.forward(x))); };
    CHECK(fd_check(leaves, f) < 1e-4);
  }
}

TEST_CASE("batchnorm2d gradients, training mode") {
  RandomStream rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index c = rng.uniform_int(1, 3), H = rng.uniform_int(2, 5),
                       W = rng.uniform_int(2, 5);
    Var x = random_leaf({c, H, W}, rng);
    Var gamma = random_leaf({c}, rng);
    Var beta = random_leaf({c}, rng);
    auto f = [&] {
      // fresh running buffers per evaluation so the loss is a pure function
      Array rm = Array::Zero(c), rv = Array::Constant(c, 1.0);
      return mean(square(
          batchnorm2d(x, gamma, beta, rm, rv, 0.9, 1e-5, true)));
    };
    CHECK(fd_check({x, gamma, beta}, f) < 1e-4);
  }
}

TEST_CASE("batchnorm2d running statistics feed eval mode") {
  RandomStream rng(47);
  Var x = random_leaf({2, 4, 4}, rng);
  Var gamma = leaf({2}, Array::Constant(2, 1.0));
  Var beta = leaf({2}, Array::Zero(2));
  Array rm = Array::Zero(2), rv = Array::Constant(2, 1.0);
  for (int i = 0; i < 200; ++i)
    batchnorm2d(x, gamma, beta, rm, rv, 0.9, 1e-5, true);
  Var y = batchnorm2d(x, gamma, beta, rm, rv, 0.9, 1e-5, false);
  Var z = batchnorm2d(x, gamma, beta, rm, rv, 0.9, 1e-5, true);
  // after convergence of the running stats both modes agree closely
  CHECK(((y->value - z->value).abs() < 1e-3).all());
}

TEST_CASE("softmax rows sum to one and shift-invariance holds") {
  RandomStream rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = rng.uniform_int(1, 5), c = rng.uniform_int(2, 6);
    Var x = random_leaf({n, c}, rng, 3.0);
    Var p = softmax_rows(x);
    for (Eigen::Index r = 0; r < n; ++r) {
      double s = 0;
      for (Eigen::Index j = 0; j < c; ++j) s += p->value[r * c + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    Var shifted = softmax_rows(add_scalar(x, 17.5));
    CHECK(((p->value - shifted->value).abs() < 1e-9).all());
  }
}

TEST_CASE("cross entropy closed forms") {
  Var z = leaf({1, 2}, Array::Zero(2));
  CHECK(cross_entropy(z, {0})->value[0] == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy(z, {1})->value[0] == doctest::Approx(std::log(2.0)));

  Array tail(2);
  tail << 10.0, -10.0;
  Var t = leaf({1, 2}, tail);
  // -ln softmax_0 = ln(1 + e^-20)
  const double expected = std::log1p(std::exp(-20.0));
  CHECK(cross_entropy(t, {0})->value[0] ==
        doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(2.061e-9).epsilon(1e-3));
  CHECK_THROWS(cross_entropy(t, {2}));
}

TEST_CASE("cross entropy and center loss gradients") {
  RandomStream rng(59);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = rng.uniform_int(1, 5);
    Var logits = random_leaf({n, 2}, rng, 2.0);
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < n; ++i)
      labels.push_back(static_cast<int>(rng.uniform_int(0, 1)));
    auto fce = [&] { return cross_entropy(logits, labels); };
    CHECK(fd_check({logits}, fce) < 1e-4);

    const Eigen::Index d = rng.uniform_int(1, 4);
    Var emb = random_leaf({n, d}, rng);
    Matrix centers = Matrix::Zero(2, d);
    for (Eigen::Index i = 0; i < centers.size(); ++i)
      centers.data()[i] = rng.normal();
    auto fcl = [&] { return center_loss(emb, labels, centers); };
    CHECK(fd_check({emb}, fcl) < 1e-4);
  }
}

TEST_CASE("center loss values and center updates") {
  Matrix centers(2, 2);
  centers << 1.0, 2.0, -1.0, 0.5;
  // embeddings exactly at their class centers -> zero loss
  Array at_centers(4);
  at_centers << 1.0, 2.0, -1.0, 0.5;
  Var emb = leaf({2, 2}, at_centers);
  CHECK(center_loss(emb, {0, 1}, centers)->value[0] == doctest::Approx(0.0));

  // one embedding at distance D -> D^2/2
  Array off(2);
  off << 4.0, 2.0;  // distance 3 from center 0 along axis 0... (3,0) offset
  off[0] = 1.0 + 3.0;
  off[1] = 2.0;
  Var one = leaf({1, 2}, off);
  CHECK(center_loss(one, {0}, centers)->value[0] == doctest::Approx(4.5));

  // EMA update moves only the present class
  Matrix emb_m(1, 2);
  emb_m << 3.0, 4.0;
  Matrix c2 = centers;
  update_centers(emb_m, {0}, c2, 0.5);
  CHECK(c2(0, 0) == doctest::Approx(0.5 * 1.0 + 0.5 * 3.0));
  CHECK(c2(0, 1) == doctest::Approx(0.5 * 2.0 + 0.5 * 4.0));
  CHECK(c2(1, 0) == doctest::Approx(-1.0));
  CHECK(c2(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("he normal init statistics and determinism") {
  RandomStream a(123), b(123);
  Var v1 = he_normal_init({10, 10}, 50, a);
  Var v2 = he_normal_init({10, 10}, 50, b);
  CHECK((v1->value == v2->value).all());

  RandomStream rng(7);
  Var big = he_normal_init({1000, 1000}, 50, rng);
  const double n = static_cast<double>(big->value.size());
  const double mean = big->value.mean();
  const double var = (big->value - mean).square().sum() / n;
  CHECK(std::abs(var - 0.04) < 0.02 * 0.04 * 2);  // within 2%
  const double sigma = std::sqrt(0.04);
  CHECK(std::abs(mean) < 3 * sigma / std::sqrt(n));
}

TEST_CASE("amsgrad hand-evaluated scalar step") {
  Var theta = leaf({1}, Array::Constant(1, 1.0));
  theta->ensure_grad();
  theta->grad[0] = 1.0;
  AmsGrad opt;
  opt.lr = 0.1;
  opt.weight_decay = 1e-4;
  opt.step({{"theta", theta}});
  const double expected =
      1.0 - 0.1 * 0.1 / (std::sqrt(0.001) + 1e-8) - 0.1 * 1e-4 * 1.0;
  CHECK(theta->value[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.68378).epsilon(1e-4));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("amsgrad: zero grad, zero decay leaves parameters fixed") {
  RandomStream rng(61);
  Var theta = random_leaf({3, 3}, rng);
  const Array before = theta->value;
  theta->ensure_grad();
  theta->grad.setZero();
  AmsGrad opt;
  opt.weight_decay = 0.0;
  for (int i = 0; i < 5; ++i) opt.step({{"theta", theta}});
  CHECK((theta->value == before).all());
}

TEST_CASE("amsgrad vhat is monotone over 100 random steps") {
  RandomStream rng(67);
  Var theta = random_leaf({4}, rng);
  AmsGrad opt;
  Array prev_vhat = Array::Zero(4);
  for (int step = 0; step < 100; ++step) {
    theta->ensure_grad();
    for (Eigen::Index i = 0; i < 4; ++i) theta->grad[i] = rng.normal();
    opt.step({{"theta", theta}});
    const Array& vhat = opt.slots()[0].vhat;
    CHECK((vhat >= prev_vhat - 1e-18).all());
    prev_vhat = vhat;
  }
}

TEST_CASE("reshape and scale gradients") {
  RandomStream rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index r = rng.uniform_int(1, 4), c = rng.uniform_int(1, 6);
    Var x = random_leaf({r, c}, rng);
    auto f = [&] { return sum(square(scale(reshape(x, {c, r}), 1.7))); };
    CHECK(fd_check({x}, f) < 1e-4);
  }
}

TEST_CASE("shape errors name the offending shapes") {
  RandomStream rng(73);
  Var a = random_leaf({2, 3}, rng);
  Var b = random_leaf({4, 2}, rng);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
}
