#pragma once

// Parameterized layers over the autodiff graph. A layer owns its parameter
// leaves; forward() stitches fresh graph nodes onto them, so layers can be
// reused across forward passes while gradients accumulate in place.

#include "spoofnet/autodiff.hpp"

namespace spoofnet::layers {

using ad::Array;
using ad::NamedParam;
using ad::RandomStream;
using ad::Var;

struct Dense {
  Var weight;  // {in, out}
  Var bias;    // {1, out}

  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out, RandomStream& rng);
  Var forward(const Var& x) const;  // {n,in} -> {n,out}
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct Conv2d {
  Var weight;  // {cout, cin*kh*kw}
  Var bias;    // {cout}
  int kh = 1, kw = 1, sh = 1, sw = 1;

  Conv2d() = default;
  Conv2d(Eigen::Index cin, Eigen::Index cout, int kh, int kw, int sh, int sw,
         RandomStream& rng);
  Var forward(const Var& x) const;  // {cin,H,W} -> {cout,ceil(H/sh),ceil(W/sw)}
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct BatchNorm2d {
  Var gamma, beta;
  Array running_mean, running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(Eigen::Index channels);
  Var forward(const Var& x, bool training);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  // running stats are saved/restored through the checkpoint buffer list
  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Array*>>& out);
};

// Pre-activation residual block, 2-D: bn-relu-conv(stride)-bn-relu-conv(1),
// shortcut is a strided 1x1 conv when shape changes, identity otherwise.
struct ResBlock2d {
  BatchNorm2d bn1, bn2;
  Conv2d conv1, conv2;
  Conv2d shortcut;
  bool projecting = false;

  ResBlock2d() = default;
  ResBlock2d(Eigen::Index cin, Eigen::Index cout, int kh, int kw, int sh,
             int sw, RandomStream& rng);
  Var forward(const Var& x, bool training);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
  void collect_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Array*>>& out);
};

// GRU over an input sequence {T, in}; returns the final hidden state {1, h}.
// Gates: z = sig(xWz + hUz + bz), r = sig(xWr + hUr + br),
// cand = tanh(xWh + (r*h)Uh + bh), h' = (1-z)*h + z*cand.
struct Gru {
  Var wz, uz, bz, wr, ur, br, wh, uh, bh;
  Eigen::Index hidden = 0;

  Gru() = default;
  Gru(Eigen::Index in, Eigen::Index hidden, RandomStream& rng);
  Var forward(const Var& seq) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

}  // namespace spoofnet::layers
