#include "spoofnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace spoofnet::ad {

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

Var make_node(Shape shape, Array value, std::vector<Var> parents,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->shape != b->shape)
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a->shape) + " vs " + shape_str(b->shape));
}

}  // namespace

Var constant(Shape shape, Array data) {
  auto n = std::make_shared<Node>();
  if (numel(shape) != data.size())
    throw ShapeError("constant: data length " + std::to_string(data.size()) +
                     " vs shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(data);
  return n;
}

Var leaf(Shape shape, Array data) {
  auto n = constant(std::move(shape), std::move(data));
  n->requires_grad = true;
  return n;
}

Var scalar(Scalar v) {
  Array a(1);
  a[0] = v;
  return constant({1}, std::move(a));
}

void backward(const Var& root) {
  if (root->size() != 1) throw ShapeError("backward: root must be scalar");
  if (root->backward_done)
    throw StateError("backward: called twice on the same root without re-forward");
  root->backward_done = true;

  // Iterative post-order DFS for topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  std::unordered_map<Node*, const std::vector<Var>*> kids;
  stack.push_back({root.get(), 0});
  kids[root.get()] = &root->parents;
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    const auto& parents = *kids[node];
    if (idx < parents.size()) {
      Node* p = parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        kids[p] = &p->parents;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  root->grad.setConstant(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) {
    p->ensure_grad();
    p->grad.setZero();
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(a->shape, a->value + b->value, {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad;
      }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(a->shape, a->value - b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad -= n.grad;
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_node(a->shape, a->value * b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad * n.parents[1]->value;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad += n.grad * n.parents[0]->value;
    }
  });
}

Var scale(const Var& a, Scalar s) {
  return make_node(a->shape, a->value * s, {a}, [s](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad * s;
  });
}

Var add_scalar(const Var& a, Scalar s) {
  return make_node(a->shape, a->value + s, {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad;
  });
}

Var relu(const Var& a) {
  return make_node(a->shape, a->value.max(0.0), {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad +=
        n.grad * (n.parents[0]->value > 0.0).cast<Scalar>();
  });
}

Var sigmoid(const Var& a) {
  Array y = 1.0 / (1.0 + (-a->value).exp());
  return make_node(a->shape, std::move(y), {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad * n.value * (1.0 - n.value);
  });
}

Var tanh_op(const Var& a) {
  return make_node(a->shape, a->value.tanh(), {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad * (1.0 - n.value.square());
  });
}

Var square(const Var& a) {
  return make_node(a->shape, a->value.square(), {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad * 2.0 * n.parents[0]->value;
  });
}

Var sum(const Var& a) {
  Array v(1);
  v[0] = a->value.sum();
  return make_node({1}, std::move(v), {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad[0];
  });
}

Var mean(const Var& a) {
  Array v(1);
  v[0] = a->value.mean();
  return make_node({1}, std::move(v), {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad[0] / static_cast<Scalar>(n.parents[0]->size());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) +
                     " x " + shape_str(b->shape));
  const Eigen::Index m = a->shape[0], k = a->shape[1], n_ = b->shape[1];
  // Row-major data: compute C^T = B^T A^T with col-major maps.
  Eigen::Map<const Matrix> At(a->value.data(), k, m);
  Eigen::Map<const Matrix> Bt(b->value.data(), n_, k);
  Array out(m * n_);
  Eigen::Map<Matrix>(out.data(), n_, m) = Bt * At;
  return make_node({m, n_}, std::move(out), {a, b}, [m, k, n_](Node& n) {
    Eigen::Map<const Matrix> Gt(n.grad.data(), n_, m);
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      Eigen::Map<const Matrix> Bt(n.parents[1]->value.data(), n_, k);
      // dA = G B^T  =>  dA^T = B G^T
      Eigen::Map<Matrix>(n.parents[0]->grad.data(), k, m).noalias() +=
          Bt.transpose() * Gt;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      Eigen::Map<const Matrix> At(n.parents[0]->value.data(), k, m);
      // dB = A^T G  =>  dB^T = G^T A
      Eigen::Map<Matrix>(n.parents[1]->grad.data(), n_, k).noalias() +=
          Gt * At.transpose();
    }
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (a->shape.size() != 2 || row->shape.size() != 2 || row->shape[0] != 1 ||
      row->shape[1] != a->shape[1])
    throw ShapeError("add_rowvec: " + shape_str(a->shape) + " + " +
                     shape_str(row->shape));
  const Eigen::Index rows = a->shape[0], cols = a->shape[1];
  Array out = a->value;
  for (Eigen::Index r = 0; r < rows; ++r)
    out.segment(r * cols, cols) += row->value;
  return make_node(a->shape, std::move(out), {a, row}, [rows, cols](Node& n) {
    if (n.parents[0]->requires_grad) {
      n.parents[0]->ensure_grad();
      n.parents[0]->grad += n.grad;
    }
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      for (Eigen::Index r = 0; r < rows; ++r)
        n.parents[1]->grad += n.grad.segment(r * cols, cols);
    }
  });
}

Var slice_row(const Var& a, Eigen::Index r) {
  if (a->shape.size() != 2 || r < 0 || r >= a->shape[0])
    throw ShapeError("slice_row: row " + std::to_string(r) + " of " +
                     shape_str(a->shape));
  const Eigen::Index cols = a->shape[1];
  Array out = a->value.segment(r * cols, cols);
  return make_node({1, cols}, std::move(out), {a}, [r, cols](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad.segment(r * cols, cols) += n.grad;
  });
}

Var concat_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("concat_rows: empty input");
  const Eigen::Index cols = rows[0]->shape.back();
  Eigen::Index total = 0;
  for (const auto& r : rows) {
    if (r->shape.size() != 2 || r->shape[1] != cols)
      throw ShapeError("concat_rows: inconsistent widths");
    total += r->shape[0];
  }
  Array out(total * cols);
  Eigen::Index off = 0;
  for (const auto& r : rows) {
    out.segment(off, r->size()) = r->value;
    off += r->size();
  }
  return make_node({total, cols}, std::move(out), rows, [](Node& n) {
    Eigen::Index off = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad.segment(off, p->size());
      }
      off += p->size();
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a->size())
    throw ShapeError("reshape: " + shape_str(a->shape) + " -> " +
                     shape_str(shape));
  return make_node(std::move(shape), a->value, {a}, [](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad;
  });
}

Var transpose2d(const Var& a) {
  if (a->shape.size() != 2) throw ShapeError("transpose2d: need 2-D");
  const Eigen::Index r = a->shape[0], c = a->shape[1];
  Array out(a->size());
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) out[j * r + i] = a->value[i * c + j];
  return make_node({c, r}, std::move(out), {a}, [r, c](Node& n) {
    n.parents[0]->ensure_grad();
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j)
        n.parents[0]->grad[i * c + j] += n.grad[j * r + i];
  });
}

Var softmax_rows(const Var& logits) {
  if (logits->shape.size() != 2) throw ShapeError("softmax_rows: need 2-D");
  const Eigen::Index rows = logits->shape[0], cols = logits->shape[1];
  Array out(rows * cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Array row = logits->value.segment(r * cols, cols);
    row -= row.maxCoeff();
    row = row.exp();
    out.segment(r * cols, cols) = row / row.sum();
  }
  return make_node(logits->shape, std::move(out), {logits},
                   [rows, cols](Node& n) {
                     n.parents[0]->ensure_grad();
                     for (Eigen::Index r = 0; r < rows; ++r) {
                       Array y = n.value.segment(r * cols, cols);
                       Array g = n.grad.segment(r * cols, cols);
                       const Scalar dot = (y * g).sum();
                       n.parents[0]->grad.segment(r * cols, cols) +=
                           y * (g - dot);
                     }
                   });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  if (logits->shape.size() != 2 ||
      static_cast<Eigen::Index>(labels.size()) != logits->shape[0])
    throw ShapeError("cross_entropy: logits " + shape_str(logits->shape) +
                     " vs " + std::to_string(labels.size()) + " labels");
  const Eigen::Index rows = logits->shape[0], cols = logits->shape[1];
  for (int y : labels)
    if (y < 0 || y >= cols)
      throw std::invalid_argument("cross_entropy: label out of range");
  Array probs(rows * cols);
  Scalar loss = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    Array row = logits->value.segment(r * cols, cols);
    const Scalar mx = row.maxCoeff();
    Array e = (row - mx).exp();
    const Scalar z = e.sum();
    probs.segment(r * cols, cols) = e / z;
    loss -= (row[labels[r]] - mx) - std::log(z);
  }
  loss /= static_cast<Scalar>(rows);
  Array v(1);
  v[0] = loss;
  auto node = make_node({1}, std::move(v), {logits},
                        [rows, cols, labels, probs](Node& n) {
                          n.parents[0]->ensure_grad();
                          Array g = probs;
                          for (Eigen::Index r = 0; r < rows; ++r)
                            g[r * cols + labels[r]] -= 1.0;
                          n.parents[0]->grad +=
                              n.grad[0] * g / static_cast<Scalar>(rows);
                        });
  return node;
}

Var center_loss(const Var& embeddings, const std::vector<int>& labels,
                const Matrix& centers) {
  if (embeddings->shape.size() != 2 ||
      static_cast<Eigen::Index>(labels.size()) != embeddings->shape[0] ||
      centers.cols() != embeddings->shape[1])
    throw ShapeError("center_loss: embeddings " +
                     shape_str(embeddings->shape));
  const Eigen::Index rows = embeddings->shape[0], d = embeddings->shape[1];
  Array diff(rows * d);
  for (Eigen::Index r = 0; r < rows; ++r)
    diff.segment(r * d, d) =
        embeddings->value.segment(r * d, d) -
        Array::Map(centers.row(labels[r]).transpose().eval().data(), d);
  Array v(1);
  v[0] = 0.5 * diff.square().sum() / static_cast<Scalar>(rows);
  return make_node({1}, std::move(v), {embeddings}, [rows, diff](Node& n) {
    n.parents[0]->ensure_grad();
    n.parents[0]->grad += n.grad[0] * diff / static_cast<Scalar>(rows);
  });
}

void update_centers(const Matrix& embeddings, const std::vector<int>& labels,
                    Matrix& centers, double alpha) {
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(centers.cols());
    int count = 0;
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) {
        acc += embeddings.row(static_cast<Eigen::Index>(i));
        ++count;
      }
    if (count == 0) continue;  // class absent: center unchanged
    centers.row(c) = (1.0 - alpha) * centers.row(c) + alpha * (acc / count);
  }
}

namespace {

struct ConvGeom {
  Eigen::Index out_h, out_w;
  int pad_top, pad_left;
};

ConvGeom conv_geometry(Eigen::Index h, Eigen::Index w, int kh, int kw, int sh,
                       int sw) {
  ConvGeom g;
  g.out_h = (h + sh - 1) / sh;
  g.out_w = (w + sw - 1) / sw;
  const Eigen::Index pad_h = std::max<Eigen::Index>((g.out_h - 1) * sh + kh - h, 0);
  const Eigen::Index pad_w = std::max<Eigen::Index>((g.out_w - 1) * sw + kw - w, 0);
  g.pad_top = static_cast<int>(pad_h / 2);
  g.pad_left = static_cast<int>(pad_w / 2);
  return g;
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const Var& bias, int kh,
           int kw, int sh, int sw) {
  if (input->shape.size() != 3)
    throw ShapeError("conv2d: input must be {C,H,W}, got " +
                     shape_str(input->shape));
  const Eigen::Index cin = input->shape[0], h = input->shape[1],
                     w = input->shape[2];
  if (weight->shape.size() != 2 || weight->shape[1] != cin * kh * kw)
    throw ShapeError("conv2d: weight " + shape_str(weight->shape) +
                     " vs expected {Cout," + std::to_string(cin * kh * kw) +
                     "}");
  const Eigen::Index cout = weight->shape[0];
  if (bias->size() != cout) throw ShapeError("conv2d: bias size mismatch");

  const auto g = conv_geometry(h, w, kh, kw, sh, sw);
  const Eigen::Index npix = g.out_h * g.out_w;
  const Eigen::Index krows = cin * kh * kw;

  // im2col, column-major (krows x npix)
  auto col = std::make_shared<Matrix>(Matrix::Zero(krows, npix));
  for (Eigen::Index oy = 0; oy < g.out_h; ++oy) {
    for (Eigen::Index ox = 0; ox < g.out_w; ++ox) {
      const Eigen::Index pix = oy * g.out_w + ox;
      const Eigen::Index y0 = oy * sh - g.pad_top;
      const Eigen::Index x0 = ox * sw - g.pad_left;
      for (Eigen::Index c = 0; c < cin; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
          const Eigen::Index y = y0 + ky;
          if (y < 0 || y >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const Eigen::Index x = x0 + kx;
            if (x >= 0 && x < w)
              (*col)(c * kh * kw + ky * kw + kx, pix) =
                  input->value[(c * h + y) * w + x];
          }
        }
      }
    }
  }

  // Out (cout x npix) = W (cout x krows) * col; row-major out maps to
  // col-major (npix x cout) transpose.
  Eigen::Map<const Matrix> Wt(weight->value.data(), krows, cout);
  Array out(cout * npix);
  Eigen::Map<Matrix> outm(out.data(), npix, cout);
  outm.noalias() = col->transpose() * Wt;
  for (Eigen::Index c = 0; c < cout; ++c) outm.col(c).array() += bias->value[c];

  const Eigen::Index out_h = g.out_h, out_w = g.out_w;
  const int pad_top = g.pad_top, pad_left = g.pad_left;
  return make_node(
      {cout, out_h, out_w}, std::move(out), {input, weight, bias},
      [=](Node& n) {
        Eigen::Map<const Matrix> Gt(n.grad.data(), npix, cout);
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          // dW = G * col^T  =>  dW^T (krows x cout) = col * G^T^T
          Eigen::Map<Matrix>(n.parents[1]->grad.data(), krows, cout)
              .noalias() += (*col) * Gt;
        }
        if (n.parents[2]->requires_grad) {
          n.parents[2]->ensure_grad();
          for (Eigen::Index c = 0; c < cout; ++c)
            n.parents[2]->grad[c] += Gt.col(c).sum();
        }
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          Eigen::Map<const Matrix> Wt2(n.parents[1]->value.data(), krows,
                                       cout);
          Matrix dcol(krows, npix);
          dcol.noalias() = Wt2 * Gt.transpose();
          auto& gin = n.parents[0]->grad;
          for (Eigen::Index oy = 0; oy < out_h; ++oy) {
            for (Eigen::Index ox = 0; ox < out_w; ++ox) {
              const Eigen::Index pix = oy * out_w + ox;
              const Eigen::Index y0 = oy * sh - pad_top;
              const Eigen::Index x0 = ox * sw - pad_left;
              for (Eigen::Index c = 0; c < cin; ++c) {
                for (int ky = 0; ky < kh; ++ky) {
                  const Eigen::Index y = y0 + ky;
                  if (y < 0 || y >= h) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const Eigen::Index x = x0 + kx;
                    if (x >= 0 && x < w)
                      gin[(c * h + y) * w + x] +=
                          dcol(c * kh * kw + ky * kw + kx, pix);
                  }
                }
              }
            }
          }
        }
      });
}

Var maxpool2d(const Var& input, int ph, int pw) {
  if (input->shape.size() != 3)
    throw ShapeError("maxpool2d: input must be {C,H,W}");
  const Eigen::Index cin = input->shape[0], h = input->shape[1],
                     w = input->shape[2];
  const auto g = conv_geometry(h, w, ph, pw, ph, pw);
  const Eigen::Index npix = g.out_h * g.out_w;
  Array out(cin * npix);
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(cin * npix);
  for (Eigen::Index c = 0; c < cin; ++c) {
    for (Eigen::Index oy = 0; oy < g.out_h; ++oy) {
      for (Eigen::Index ox = 0; ox < g.out_w; ++ox) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Eigen::Index best_idx = -1;
        for (int ky = 0; ky < ph; ++ky) {
          const Eigen::Index y = oy * ph - g.pad_top + ky;
          if (y < 0 || y >= h) continue;
          for (int kx = 0; kx < pw; ++kx) {
            const Eigen::Index x = ox * pw - g.pad_left + kx;
            if (x < 0 || x >= w) continue;
            const Scalar v = input->value[(c * h + y) * w + x];
            if (v > best) {
              best = v;
              best_idx = (c * h + y) * w + x;
            }
          }
        }
        out[(c * g.out_h + oy) * g.out_w + ox] = best;
        (*argmax)[(c * g.out_h + oy) * g.out_w + ox] = best_idx;
      }
    }
  }
  return make_node({cin, g.out_h, g.out_w}, std::move(out), {input},
                   [argmax](Node& n) {
                     n.parents[0]->ensure_grad();
                     for (Eigen::Index i = 0; i < n.size(); ++i)
                       if ((*argmax)[i] >= 0)
                         n.parents[0]->grad[(*argmax)[i]] += n.grad[i];
                   });
}

Var conv1d(const Var& input, const Var& weight, const Var& bias, int k,
           int s) {
  if (input->shape.size() != 2)
    throw ShapeError("conv1d: input must be {C,T}");
  auto in3 = reshape(input, {input->shape[0], Eigen::Index(1), input->shape[1]});
  auto out = conv2d(in3, weight, bias, 1, k, 1, s);
  return reshape(out, {out->shape[0], out->shape[2]});
}

Var maxpool1d(const Var& input, int p) {
  if (input->shape.size() != 2)
    throw ShapeError("maxpool1d: input must be {C,T}");
  auto in3 = reshape(input, {input->shape[0], Eigen::Index(1), input->shape[1]});
  auto out = maxpool2d(in3, 1, p);
  return reshape(out, {out->shape[0], out->shape[2]});
}

Var batchnorm2d(const Var& input, const Var& gamma, const Var& beta,
                Array& running_mean, Array& running_var, double momentum,
                double eps, bool training) {
  if (input->shape.size() != 3)
    throw ShapeError("batchnorm2d: input must be {C,H,W}");
  const Eigen::Index c = input->shape[0], m = input->shape[1] * input->shape[2];
  if (gamma->size() != c || beta->size() != c)
    throw ShapeError("batchnorm2d: affine size mismatch");
  if (running_mean.size() != c) {
    running_mean = Array::Zero(c);
    running_var = Array::Ones(c);
  }

  Array mu(c), var(c);
  if (training) {
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      auto seg = input->value.segment(ch * m, m);
      mu[ch] = seg.mean();
      var[ch] = (seg - mu[ch]).square().mean();
    }
    running_mean = momentum * running_mean + (1.0 - momentum) * mu;
    running_var = momentum * running_var + (1.0 - momentum) * var;
  } else {
    mu = running_mean;
    var = running_var;
  }

  auto xhat = std::make_shared<Array>(input->size());
  Array out(input->size());
  Array inv_std = (var + eps).sqrt().inverse();
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    auto seg = input->value.segment(ch * m, m);
    xhat->segment(ch * m, m) = (seg - mu[ch]) * inv_std[ch];
    out.segment(ch * m, m) =
        gamma->value[ch] * xhat->segment(ch * m, m) + beta->value[ch];
  }

  return make_node(
      input->shape, std::move(out), {input, gamma, beta},
      [c, m, xhat, inv_std, training](Node& n) {
        if (n.parents[1]->requires_grad) {
          n.parents[1]->ensure_grad();
          for (Eigen::Index ch = 0; ch < c; ++ch)
            n.parents[1]->grad[ch] +=
                (n.grad.segment(ch * m, m) * xhat->segment(ch * m, m)).sum();
        }
        if (n.parents[2]->requires_grad) {
          n.parents[2]->ensure_grad();
          for (Eigen::Index ch = 0; ch < c; ++ch)
            n.parents[2]->grad[ch] += n.grad.segment(ch * m, m).sum();
        }
        if (n.parents[0]->requires_grad) {
          n.parents[0]->ensure_grad();
          for (Eigen::Index ch = 0; ch < c; ++ch) {
            const Scalar gscale = n.parents[1]->value[ch] * inv_std[ch];
            Array dy = n.grad.segment(ch * m, m);
            if (training) {
              Array xh = xhat->segment(ch * m, m);
              const Scalar mean_dy = dy.mean();
              const Scalar mean_dyxh = (dy * xh).mean();
              n.parents[0]->grad.segment(ch * m, m) +=
                  gscale * (dy - mean_dy - xh * mean_dyxh);
            } else {
              n.parents[0]->grad.segment(ch * m, m) += gscale * dy;
            }
          }
        }
      });
}

double RandomStream::uniform() {
  // 53-bit mantissa in [0,1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform(), u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::int64_t RandomStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  // modulo bias negligible for span << 2^64; acceptable here
  return lo + static_cast<std::int64_t>(engine_() % span);
}

Var he_normal_init(Shape shape, Eigen::Index fan_in, RandomStream& rng) {
  if (fan_in < 1) throw std::invalid_argument("he_normal_init: fan_in < 1");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Array data(numel(shape));
  for (Eigen::Index i = 0; i < data.size(); ++i)
    data[i] = stddev * rng.normal();
  return leaf(std::move(shape), std::move(data));
}

void AmsGrad::step(const std::vector<NamedParam>& params) {
  if (slots_.empty()) {
    slots_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      const Eigen::Index n = params[i].var->size();
      slots_[i].m = Array::Zero(n);
      slots_[i].v = Array::Zero(n);
      slots_[i].vhat = Array::Zero(n);
    }
  }
  ++t_;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].var;
    p.ensure_grad();
    auto& s = slots_[i];
    s.m = beta1 * s.m + (1.0 - beta1) * p.grad;
    s.v = beta2 * s.v + (1.0 - beta2) * p.grad.square();
    s.vhat = s.vhat.max(s.v);
    p.value -= lr * s.m / (s.vhat.sqrt() + eps) + lr * weight_decay * p.value;
  }
}

}  // namespace spoofnet::ad
