#include "spoofnet/layers.hpp"

namespace spoofnet::layers {

using namespace ad;

Dense::Dense(Eigen::Index in, Eigen::Index out, RandomStream& rng) {
  weight = he_normal_init({in, out}, in, rng);
  bias = leaf({1, out}, Array::Zero(out));
}

Var Dense::forward(const Var& x) const {
  return add_rowvec(matmul(x, weight), bias);
}

void Dense::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv2d::Conv2d(Eigen::Index cin, Eigen::Index cout, int kh_, int kw_, int sh_,
               int sw_, RandomStream& rng)
    : kh(kh_), kw(kw_), sh(sh_), sw(sw_) {
  const Eigen::Index fan_in = cin * kh * kw;
  weight = he_normal_init({cout, fan_in}, fan_in, rng);
  bias = leaf({cout}, Array::Zero(cout));
}

Var Conv2d::forward(const Var& x) const {
  return conv2d(x, weight, bias, kh, kw, sh, sw);
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

BatchNorm2d::BatchNorm2d(Eigen::Index channels) {
  gamma = leaf({channels}, Array::Ones(channels));
  beta = leaf({channels}, Array::Zero(channels));
  running_mean = Array::Zero(channels);
  running_var = Array::Ones(channels);
}

Var BatchNorm2d::forward(const Var& x, bool training) {
  return batchnorm2d(x, gamma, beta, running_mean, running_var, momentum, eps,
                     training);
}

void BatchNorm2d::collect(const std::string& prefix,
                          std::vector<NamedParam>& out) {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm2d::collect_buffers(
    const std::string& prefix,
    std::vector<std::pair<std::string, Array*>>& out) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

ResBlock2d::ResBlock2d(Eigen::Index cin, Eigen::Index cout, int kh, int kw,
                       int sh, int sw, RandomStream& rng)
    : bn1(cin),
      bn2(cout),
      conv1(cin, cout, kh, kw, sh, sw, rng),
      conv2(cout, cout, kh, kw, 1, 1, rng) {
  projecting = (cin != cout) || sh != 1 || sw != 1;
  if (projecting) shortcut = Conv2d(cin, cout, 1, 1, sh, sw, rng);
}

Var ResBlock2d::forward(const Var& x, bool training) {
  Var h = relu(bn1.forward(x, training));
  Var branch = conv2.forward(relu(bn2.forward(conv1.forward(h), training)));
  Var skip = projecting ? shortcut.forward(x) : x;
  return add(branch, skip);
}

void ResBlock2d::collect(const std::string& prefix,
                         std::vector<NamedParam>& out) {
  bn1.collect(prefix + ".bn1", out);
  bn2.collect(prefix + ".bn2", out);
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  if (projecting) shortcut.collect(prefix + ".shortcut", out);
}

void ResBlock2d::collect_buffers(
    const std::string& prefix,
    std::vector<std::pair<std::string, Array*>>& out) {
  bn1.collect_buffers(prefix + ".bn1", out);
  bn2.collect_buffers(prefix + ".bn2", out);
}

Gru::Gru(Eigen::Index in, Eigen::Index h, RandomStream& rng) : hidden(h) {
  wz = he_normal_init({in, h}, in, rng);
  wr = he_normal_init({in, h}, in, rng);
  wh = he_normal_init({in, h}, in, rng);
  uz = he_normal_init({h, h}, h, rng);
  ur = he_normal_init({h, h}, h, rng);
  uh = he_normal_init({h, h}, h, rng);
  bz = leaf({1, h}, Array::Zero(h));
  br = leaf({1, h}, Array::Zero(h));
  bh = leaf({1, h}, Array::Zero(h));
}

Var Gru::forward(const Var& seq) const {
  if (seq->shape.size() != 2)
    throw ShapeError("gru: input must be {T,in}, got " + shape_str(seq->shape));
  const Eigen::Index steps = seq->shape[0];
  Var h = constant({1, hidden}, Array::Zero(hidden));
  for (Eigen::Index t = 0; t < steps; ++t) {
    Var x = slice_row(seq, t);
    Var z = sigmoid(add(add_rowvec(matmul(x, wz), bz), matmul(h, uz)));
    Var r = sigmoid(add(add_rowvec(matmul(x, wr), br), matmul(h, ur)));
    Var cand = tanh_op(add(add_rowvec(matmul(x, wh), bh), matmul(mul(r, h), uh)));
    // h' = (1-z)*h + z*cand
    h = add(mul(sub(constant({1, hidden}, Array::Ones(hidden)), z), h),
            mul(z, cand));
  }
  return h;
}

void Gru::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".wz", wz});
  out.push_back({prefix + ".uz", uz});
  out.push_back({prefix + ".bz", bz});
  out.push_back({prefix + ".wr", wr});
  out.push_back({prefix + ".ur", ur});
  out.push_back({prefix + ".br", br});
  out.push_back({prefix + ".wh", wh});
  out.push_back({prefix + ".uh", uh});
  out.push_back({prefix + ".bh", bh});
}

}  // namespace spoofnet::layers
