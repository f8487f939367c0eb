#pragma once

// Reverse-mode autodiff over flat Eigen arrays. Nodes form a dynamic DAG;
// backward() runs a reverse topological sweep and accumulates gradients
// additively at fan-out points.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spoofnet::ad {

using Scalar = double;
using Array = Eigen::ArrayXd;
using Matrix = Eigen::MatrixXd;
using Shape = std::vector<Eigen::Index>;

inline Eigen::Index numel(const Shape& shape) {
  Eigen::Index n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape);

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  Array value;
  Array grad;  // empty until backward touches this node
  bool requires_grad = false;
  bool backward_done = false;  // set on the root by backward()
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Eigen::Index size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad = Array::Zero(value.size());
  }
};

// Leaf constructors.
Var constant(Shape shape, Array data);
Var leaf(Shape shape, Array data);  // requires_grad = true
Var scalar(Scalar v);

// Seeds grad 1 at the scalar root and sweeps the graph in reverse
// topological order. Calling it twice on the same root is a StateError.
void backward(const Var& root);

void zero_grad(const std::vector<Var>& params);

// Elementwise / scalar ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Scalar s);
Var add_scalar(const Var& a, Scalar s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var square(const Var& a);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);

// 2-D ops; shapes are {rows, cols}, row-major storage.
Var matmul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& row);  // broadcast {1,n} over rows
Var slice_row(const Var& a, Eigen::Index r);   // {rows,cols} -> {1,cols}
Var concat_rows(const std::vector<Var>& rows);
Var reshape(const Var& a, Shape shape);
Var transpose2d(const Var& a);  // {r,c} -> {c,r}

// Row-wise softmax, numerically stabilized by max subtraction.
Var softmax_rows(const Var& logits);

// Mean negative log softmax probability of the true class; logits {n,c}.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

// (1/2n) sum_i ||x_i - centers[y_i]||^2; centers is a plain (k x d) matrix,
// treated as constant for the graph. Center updates happen outside.
Var center_loss(const Var& embeddings, const std::vector<int>& labels,
                const Matrix& centers);

// EMA update of per-class centers toward the batch class means, rate alpha.
// Classes absent from the batch are left unchanged.
void update_centers(const Matrix& embeddings, const std::vector<int>& labels,
                    Matrix& centers, double alpha);

// Image tensors are {channels, height, width}, row-major flat storage.
// All strided ops use ceil-mode output sizing with asymmetric zero padding
// (pad_total = max((out-1)*stride + k - in, 0), split begin = total/2).
Var conv2d(const Var& input, const Var& weight, const Var& bias,
           int kh, int kw, int sh, int sw);
Var maxpool2d(const Var& input, int ph, int pw);

// 1-D variants over {channels, length}.
Var conv1d(const Var& input, const Var& weight, const Var& bias, int k, int s);
Var maxpool1d(const Var& input, int p);

// Per-channel batchnorm over {C,H,W}. Training mode normalizes with the
// tensor's own statistics and updates the running buffers; eval mode uses
// the running buffers.
Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta,
                Array& running_mean, Array& running_var, double momentum,
                double eps, bool training);

// Deterministic RNG: mt19937_64 + hand-rolled Box-Muller / uniforms so the
// sampled sequence does not depend on the standard library implementation.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}
  double uniform();                        // [0,1)
  double normal();                         // N(0,1)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// i.i.d. N(0, 2/fan_in) entries.
Var he_normal_init(Shape shape, Eigen::Index fan_in, RandomStream& rng);

struct NamedParam {
  std::string name;
  Var var;
};

// AMSGrad with decoupled weight decay.
class AmsGrad {
 public:
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void step(const std::vector<NamedParam>& params);
  long step_count() const { return t_; }

  struct Slot {
    Array m, v, vhat;
  };
  std::vector<Slot>& slots() { return slots_; }
  long& mutable_step_count() { return t_; }

 private:
  std::vector<Slot> slots_;
  long t_ = 0;
};

}  // namespace spoofnet::ad
