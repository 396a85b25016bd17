#include "ccau/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ccau::ag {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace {

thread_local bool g_grad_enabled = true;

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Var make_node(Shape shape, std::vector<Var> inputs) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val.resize(static_cast<size_t>(numel(n->shape)));
  if (g_grad_enabled) {
    for (const auto& i : inputs) {
      if (i && i->requires_grad) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) n->parents = std::move(inputs);
  return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  check(numel(shape) == static_cast<int64_t>(data.size()), "leaf: shape/data mismatch");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Shape shape, std::vector<double> data) {
  return leaf(std::move(shape), std::move(data), false);
}

Var scalar(double v) { return constant({1}, {v}); }

Var param(Shape shape, std::vector<double> data, std::string name) {
  Var n = leaf(std::move(shape), std::move(data), true);
  n->name = std::move(name);
  return n;
}

void backward(const Var& root) {
  check(root != nullptr && root->size() == 1, "backward: root must be a scalar");
  if (!root->requires_grad) return;

  // iterative post-order topological sort
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop();
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) {
    if (p) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }
}

std::vector<Var> reachable_leaves(const Var& root) {
  std::vector<Var> out;
  std::unordered_set<Node*> visited;
  std::vector<Var> stack{root};
  visited.insert(root.get());
  while (!stack.empty()) {
    Var n = stack.back();
    stack.pop_back();
    if (n->parents.empty() && n->requires_grad) out.push_back(n);
    for (const auto& p : n->parents) {
      if (p && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back(p);
      }
    }
  }
  return out;
}

// --- elementwise -------------------------------------------------------------

namespace {

enum class BinOp { Add, Sub, Mul };

Var binary(Var a, Var b, BinOp op) {
  check(a && b, "binary op: null input");
  const bool a_scalar = a->size() == 1;
  const bool b_scalar = b->size() == 1;
  check(a->shape == b->shape || a_scalar || b_scalar,
        "binary op: shape mismatch (and neither operand is scalar)");
  Shape out_shape = a_scalar && !b_scalar ? b->shape : a->shape;
  Var out = make_node(out_shape, {a, b});
  const int64_t n = out->size();
  for (int64_t i = 0; i < n; ++i) {
    const double av = a->val[a_scalar ? 0 : static_cast<size_t>(i)];
    const double bv = b->val[b_scalar ? 0 : static_cast<size_t>(i)];
    out->val[static_cast<size_t>(i)] =
        op == BinOp::Add ? av + bv : (op == BinOp::Sub ? av - bv : av * bv);
  }
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, b, op, a_scalar, b_scalar, n]() {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          double g = self->grad[static_cast<size_t>(i)];
          if (op == BinOp::Mul) g *= b->val[b_scalar ? 0 : static_cast<size_t>(i)];
          a->grad[a_scalar ? 0 : static_cast<size_t>(i)] += g;
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          double g = self->grad[static_cast<size_t>(i)];
          if (op == BinOp::Sub)
            g = -g;
          else if (op == BinOp::Mul)
            g *= a->val[a_scalar ? 0 : static_cast<size_t>(i)];
          b->grad[b_scalar ? 0 : static_cast<size_t>(i)] += g;
        }
      }
    };
  }
  return out;
}

Var unary(Var a, const std::function<double(double)>& f,
          const std::function<double(double, double)>& dfdx_from_x_y) {
  Var out = make_node(a->shape, {a});
  const int64_t n = out->size();
  for (int64_t i = 0; i < n; ++i) out->val[static_cast<size_t>(i)] = f(a->val[static_cast<size_t>(i)]);
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, dfdx_from_x_y, n]() {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        a->grad[static_cast<size_t>(i)] +=
            self->grad[static_cast<size_t>(i)] *
            dfdx_from_x_y(a->val[static_cast<size_t>(i)], self->val[static_cast<size_t>(i)]);
    };
  }
  return out;
}

}  // namespace

Var add(Var a, Var b) { return binary(std::move(a), std::move(b), BinOp::Add); }
Var sub(Var a, Var b) { return binary(std::move(a), std::move(b), BinOp::Sub); }
Var mul(Var a, Var b) { return binary(std::move(a), std::move(b), BinOp::Mul); }

Var neg(Var a) { return scale(std::move(a), -1.0); }

Var scale(Var a, double s) {
  return unary(std::move(a), [s](double x) { return s * x; },
               [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(std::move(a), [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Var relu(Var a) {
  return unary(std::move(a), [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(std::move(a),
               [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                            : std::exp(x) / (1.0 + std::exp(x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh_(Var a) {
  return unary(std::move(a), [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var exp_(Var a) {
  return unary(std::move(a), [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log_(Var a) {
  return unary(std::move(a), [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

// --- linear algebra -----------------------------------------------------------

Var matmul(Var a, Var b) {
  check(a->shape.size() == 2 && b->shape.size() == 2 && a->shape[1] == b->shape[0],
        "matmul: expects [m,k] x [k,n]");
  const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  Var out = make_node({m, n}, {a, b});
  MMap(out->val.data(), m, n).noalias() =
      CMap(a->val.data(), m, k) * CMap(b->val.data(), k, n);
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, b, m, k, n]() {
      CMap gout(self->grad.data(), m, n);
      if (a->requires_grad) {
        a->ensure_grad();
        MMap(a->grad.data(), m, k).noalias() += gout * CMap(b->val.data(), k, n).transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        MMap(b->grad.data(), k, n).noalias() += CMap(a->val.data(), m, k).transpose() * gout;
      }
    };
  }
  return out;
}

Var transpose(Var a) {
  check(a->shape.size() == 2, "transpose: expects 2-D");
  const int64_t m = a->shape[0], n = a->shape[1];
  Var out = make_node({n, m}, {a});
  MMap(out->val.data(), n, m) = CMap(a->val.data(), m, n).transpose();
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, m, n]() {
      a->ensure_grad();
      MMap(a->grad.data(), m, n) += CMap(self->grad.data(), n, m).transpose();
    };
  }
  return out;
}

Var linear(Var x, Var w, Var b) {
  check(x->shape.size() == 2 && w->shape.size() == 2 && x->shape[1] == w->shape[0],
        "linear: expects x [B,in], w [in,out]");
  const int64_t B = x->shape[0], in = x->shape[1], out_dim = w->shape[1];
  if (b) check(b->size() == out_dim, "linear: bias size mismatch");
  Var out = b ? make_node({B, out_dim}, {x, w, b}) : make_node({B, out_dim}, {x, w});
  MMap o(out->val.data(), B, out_dim);
  o.noalias() = CMap(x->val.data(), B, in) * CMap(w->val.data(), in, out_dim);
  if (b) o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->val.data(), out_dim);
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, x, w, b, B, in, out_dim]() {
      CMap gout(self->grad.data(), B, out_dim);
      if (x->requires_grad) {
        x->ensure_grad();
        MMap(x->grad.data(), B, in).noalias() +=
            gout * CMap(w->val.data(), in, out_dim).transpose();
      }
      if (w->requires_grad) {
        w->ensure_grad();
        MMap(w->grad.data(), in, out_dim).noalias() +=
            CMap(x->val.data(), B, in).transpose() * gout;
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd>(b->grad.data(), out_dim) += gout.colwise().sum();
      }
    };
  }
  return out;
}

// --- reductions / reshaping ----------------------------------------------------

Var sum(Var a) {
  Var out = make_node({1}, {a});
  double s = 0.0;
  for (double v : a->val) s += v;
  out->val[0] = s;
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a]() {
      a->ensure_grad();
      const double g = self->grad[0];
      for (auto& gv : a->grad) gv += g;
    };
  }
  return out;
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a->size())); }

Var reshape(Var a, Shape s) {
  check(numel(s) == a->size(), "reshape: numel mismatch");
  Var out = make_node(std::move(s), {a});
  out->val = a->val;
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a]() {
      a->ensure_grad();
      for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += self->grad[i];
    };
  }
  return out;
}

Var take(Var a, std::vector<int64_t> flat_idx) {
  for (int64_t i : flat_idx) check(i >= 0 && i < a->size(), "take: index out of range");
  Var out = make_node({static_cast<int64_t>(flat_idx.size())}, {a});
  for (size_t k = 0; k < flat_idx.size(); ++k)
    out->val[k] = a->val[static_cast<size_t>(flat_idx[k])];
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, idx = std::move(flat_idx)]() {
      a->ensure_grad();
      for (size_t k = 0; k < idx.size(); ++k)
        a->grad[static_cast<size_t>(idx[k])] += self->grad[k];
    };
  }
  return out;
}

Var stack_rows(const std::vector<Var>& rows) {
  check(!rows.empty(), "stack_rows: empty input");
  const int64_t d = rows[0]->size();
  for (const auto& r : rows) check(r->size() == d, "stack_rows: row size mismatch");
  Var out = make_node({static_cast<int64_t>(rows.size()), d}, rows);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r]->val.begin(), rows[r]->val.end(), out->val.begin() + r * d);
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, rows, d]() {
      for (size_t r = 0; r < rows.size(); ++r) {
        if (!rows[r]->requires_grad) continue;
        rows[r]->ensure_grad();
        for (int64_t i = 0; i < d; ++i)
          rows[r]->grad[static_cast<size_t>(i)] += self->grad[r * d + i];
      }
    };
  }
  return out;
}

Var concat_rows(const std::vector<Var>& mats) {
  check(!mats.empty(), "concat_rows: empty input");
  Shape tail(mats[0]->shape.begin() + 1, mats[0]->shape.end());
  int64_t rows = 0;
  const int64_t row_size = numel(tail);
  for (const auto& m : mats) {
    check(Shape(m->shape.begin() + 1, m->shape.end()) == tail, "concat_rows: trailing dims differ");
    rows += m->shape[0];
  }
  Shape out_shape = {rows};
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  Var out = make_node(out_shape, mats);
  size_t off = 0;
  for (const auto& m : mats) {
    std::copy(m->val.begin(), m->val.end(), out->val.begin() + off);
    off += m->val.size();
  }
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, mats, row_size]() {
      (void)row_size;
      size_t off2 = 0;
      for (const auto& m : mats) {
        if (m->requires_grad) {
          m->ensure_grad();
          for (size_t i = 0; i < m->grad.size(); ++i) m->grad[i] += self->grad[off2 + i];
        }
        off2 += m->val.size();
      }
    };
  }
  return out;
}

Var slice_rows(Var a, int64_t start, int64_t count) {
  check(!a->shape.empty() && start >= 0 && count >= 1 && start + count <= a->shape[0],
        "slice_rows: range out of bounds");
  const int64_t row_size = a->size() / a->shape[0];
  Shape out_shape = a->shape;
  out_shape[0] = count;
  Var out = make_node(out_shape, {a});
  std::copy_n(a->val.begin() + start * row_size, count * row_size, out->val.begin());
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, start, count, row_size]() {
      a->ensure_grad();
      for (int64_t i = 0; i < count * row_size; ++i)
        a->grad[static_cast<size_t>(start * row_size + i)] += self->grad[static_cast<size_t>(i)];
    };
  }
  return out;
}

// --- softmax family --------------------------------------------------------------

Var log_softmax_rows(Var a) {
  check(a->shape.size() == 2, "log_softmax_rows: expects [B,C]");
  const int64_t B = a->shape[0], C = a->shape[1];
  Var out = make_node(a->shape, {a});
  for (int64_t r = 0; r < B; ++r) {
    const double* x = a->val.data() + r * C;
    double m = x[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, x[c]);
    double lse = 0.0;
    for (int64_t c = 0; c < C; ++c) lse += std::exp(x[c] - m);
    lse = m + std::log(lse);
    double* y = out->val.data() + r * C;
    for (int64_t c = 0; c < C; ++c) y[c] = x[c] - lse;
  }
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, B, C]() {
      a->ensure_grad();
      for (int64_t r = 0; r < B; ++r) {
        const double* y = self->val.data() + r * C;
        const double* g = self->grad.data() + r * C;
        double gsum = 0.0;
        for (int64_t c = 0; c < C; ++c) gsum += g[c];
        double* ga = a->grad.data() + r * C;
        for (int64_t c = 0; c < C; ++c) ga[c] += g[c] - std::exp(y[c]) * gsum;
      }
    };
  }
  return out;
}

Var cross_entropy_mean(Var logits, const std::vector<int64_t>& labels) {
  check(logits->shape.size() == 2, "cross_entropy_mean: expects [B,C]");
  const int64_t B = logits->shape[0], C = logits->shape[1];
  check(static_cast<int64_t>(labels.size()) == B, "cross_entropy_mean: label count mismatch");
  std::vector<int64_t> idx(labels.size());
  for (size_t b = 0; b < labels.size(); ++b) {
    check(labels[b] >= 0 && labels[b] < C, "cross_entropy_mean: label out of range");
    idx[b] = static_cast<int64_t>(b) * C + labels[b];
  }
  return scale(sum(take(log_softmax_rows(std::move(logits)), std::move(idx))),
               -1.0 / static_cast<double>(B));
}

Var bce_with_logits_mean(Var logits, Var targets) {
  check(logits->shape == targets->shape, "bce_with_logits_mean: shape mismatch");
  Var out = make_node({1}, {logits, targets});
  const int64_t n = logits->size();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = logits->val[static_cast<size_t>(i)];
    const double t = targets->val[static_cast<size_t>(i)];
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  out->val[0] = acc / static_cast<double>(n);
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, logits, targets, n]() {
      const double g = self->grad[0] / static_cast<double>(n);
      if (logits->requires_grad) {
        logits->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          const double z = logits->val[static_cast<size_t>(i)];
          const double t = targets->val[static_cast<size_t>(i)];
          const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
          logits->grad[static_cast<size_t>(i)] += g * (sig - t);
        }
      }
      if (targets->requires_grad) {
        targets->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          targets->grad[static_cast<size_t>(i)] += g * (-logits->val[static_cast<size_t>(i)]);
      }
    };
  }
  return out;
}

// --- conv and grid ops --------------------------------------------------------------

namespace {

struct ConvDims {
  int64_t B, Ci, T, H, W, Co, kt, kh, kw, st, sh, sw, pt, ph, pw, oT, oH, oW, P, Q;
};

ConvDims conv_dims(const Var& x, const Var& w, std::array<int64_t, 3> stride,
                   std::array<int64_t, 3> pad) {
  check(x->shape.size() == 5, "conv3d: x must be [B,Ci,T,H,W]");
  check(w->shape.size() == 5, "conv3d: w must be [Co,Ci,kt,kh,kw]");
  check(x->shape[1] == w->shape[1], "conv3d: channel mismatch");
  ConvDims d;
  d.B = x->shape[0]; d.Ci = x->shape[1]; d.T = x->shape[2]; d.H = x->shape[3]; d.W = x->shape[4];
  d.Co = w->shape[0]; d.kt = w->shape[2]; d.kh = w->shape[3]; d.kw = w->shape[4];
  d.st = stride[0]; d.sh = stride[1]; d.sw = stride[2];
  d.pt = pad[0]; d.ph = pad[1]; d.pw = pad[2];
  d.oT = (d.T + 2 * d.pt - d.kt) / d.st + 1;
  d.oH = (d.H + 2 * d.ph - d.kh) / d.sh + 1;
  d.oW = (d.W + 2 * d.pw - d.kw) / d.sw + 1;
  check(d.oT >= 1 && d.oH >= 1 && d.oW >= 1, "conv3d: output would be empty");
  d.P = d.oT * d.oH * d.oW;
  d.Q = d.Ci * d.kt * d.kh * d.kw;
  return d;
}

// col: [P, Q] row-major for one sample
void im2col(const double* x, const ConvDims& d, double* col) {
  int64_t p = 0;
  for (int64_t ot = 0; ot < d.oT; ++ot) {
    for (int64_t oh = 0; oh < d.oH; ++oh) {
      for (int64_t ow = 0; ow < d.oW; ++ow, ++p) {
        double* dst = col + p * d.Q;
        for (int64_t ci = 0; ci < d.Ci; ++ci) {
          const double* xc = x + ci * d.T * d.H * d.W;
          for (int64_t it = 0; it < d.kt; ++it) {
            const int64_t t = ot * d.st + it - d.pt;
            for (int64_t ih = 0; ih < d.kh; ++ih) {
              const int64_t h = oh * d.sh + ih - d.ph;
              for (int64_t iw = 0; iw < d.kw; ++iw, ++dst) {
                const int64_t w = ow * d.sw + iw - d.pw;
                *dst = (t >= 0 && t < d.T && h >= 0 && h < d.H && w >= 0 && w < d.W)
                           ? xc[(t * d.H + h) * d.W + w]
                           : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, double* gx) {
  int64_t p = 0;
  for (int64_t ot = 0; ot < d.oT; ++ot) {
    for (int64_t oh = 0; oh < d.oH; ++oh) {
      for (int64_t ow = 0; ow < d.oW; ++ow, ++p) {
        const double* src = col + p * d.Q;
        for (int64_t ci = 0; ci < d.Ci; ++ci) {
          double* xc = gx + ci * d.T * d.H * d.W;
          for (int64_t it = 0; it < d.kt; ++it) {
            const int64_t t = ot * d.st + it - d.pt;
            for (int64_t ih = 0; ih < d.kh; ++ih) {
              const int64_t h = oh * d.sh + ih - d.ph;
              for (int64_t iw = 0; iw < d.kw; ++iw, ++src) {
                const int64_t w = ow * d.sw + iw - d.pw;
                if (t >= 0 && t < d.T && h >= 0 && h < d.H && w >= 0 && w < d.W)
                  xc[(t * d.H + h) * d.W + w] += *src;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv3d(Var x, Var w, Var b, std::array<int64_t, 3> stride, std::array<int64_t, 3> pad) {
  const ConvDims d = conv_dims(x, w, stride, pad);
  if (b) check(b->size() == d.Co, "conv3d: bias size mismatch");
  Var out = b ? make_node({d.B, d.Co, d.oT, d.oH, d.oW}, {x, w, b})
              : make_node({d.B, d.Co, d.oT, d.oH, d.oW}, {x, w});

  std::vector<double> col(static_cast<size_t>(d.P * d.Q));
  CMap wmat(w->val.data(), d.Co, d.Q);
  for (int64_t i = 0; i < d.B; ++i) {
    im2col(x->val.data() + i * d.Ci * d.T * d.H * d.W, d, col.data());
    MMap o(out->val.data() + i * d.Co * d.P, d.Co, d.P);
    o.noalias() = wmat * CMap(col.data(), d.P, d.Q).transpose();
    if (b) o.colwise() += Eigen::Map<const Eigen::VectorXd>(b->val.data(), d.Co);
  }

  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, x, w, b, d]() {
      std::vector<double> col(static_cast<size_t>(d.P * d.Q));
      std::vector<double> gcol(static_cast<size_t>(d.P * d.Q));
      CMap wmat(w->val.data(), d.Co, d.Q);
      if (x->requires_grad) x->ensure_grad();
      if (w->requires_grad) w->ensure_grad();
      if (b && b->requires_grad) b->ensure_grad();
      for (int64_t i = 0; i < d.B; ++i) {
        CMap gout(self->grad.data() + i * d.Co * d.P, d.Co, d.P);
        if (w->requires_grad) {
          im2col(x->val.data() + i * d.Ci * d.T * d.H * d.W, d, col.data());
          MMap(w->grad.data(), d.Co, d.Q).noalias() += gout * CMap(col.data(), d.P, d.Q);
        }
        if (b && b->requires_grad)
          Eigen::Map<Eigen::VectorXd>(b->grad.data(), d.Co) += gout.rowwise().sum();
        if (x->requires_grad) {
          MMap(gcol.data(), d.P, d.Q).noalias() = gout.transpose() * wmat;
          col2im_add(gcol.data(), d, x->grad.data() + i * d.Ci * d.T * d.H * d.W);
        }
      }
    };
  }
  return out;
}

Var temporal_mean(Var x) {
  check(x->shape.size() == 5, "temporal_mean: expects [B,C,T,H,W]");
  const int64_t B = x->shape[0], C = x->shape[1], T = x->shape[2], HW = x->shape[3] * x->shape[4];
  Var out = make_node({B, C, x->shape[3], x->shape[4]}, {x});
  const double inv = 1.0 / static_cast<double>(T);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = x->val.data() + bc * T * HW;
    double* dst = out->val.data() + bc * HW;
    for (int64_t i = 0; i < HW; ++i) {
      double s = 0.0;
      for (int64_t t = 0; t < T; ++t) s += src[t * HW + i];
      dst[i] = s * inv;
    }
  }
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, x, B, C, T, HW, inv]() {
      x->ensure_grad();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* g = self->grad.data() + bc * HW;
        double* gx = x->grad.data() + bc * T * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const double gv = g[i] * inv;
          for (int64_t t = 0; t < T; ++t) gx[t * HW + i] += gv;
        }
      }
    };
  }
  return out;
}

Var to_cells(Var x) {
  check(x->shape.size() == 4, "to_cells: expects [B,C,H,W]");
  const int64_t B = x->shape[0], C = x->shape[1], HW = x->shape[2] * x->shape[3];
  Var out = make_node({B * HW, C}, {x});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i)
        out->val[static_cast<size_t>((b * HW + i) * C + c)] =
            x->val[static_cast<size_t>((b * C + c) * HW + i)];
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, x, B, C, HW]() {
      x->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t i = 0; i < HW; ++i)
            x->grad[static_cast<size_t>((b * C + c) * HW + i)] +=
                self->grad[static_cast<size_t>((b * HW + i) * C + c)];
    };
  }
  return out;
}

Var max_rows_group(Var x, int64_t group) {
  check(x->shape.size() == 2 && x->shape[0] % group == 0,
        "max_rows_group: rows must be a multiple of group");
  const int64_t G = x->shape[0] / group, D = x->shape[1];
  Var out = make_node({G, D}, {x});
  std::vector<int32_t> argmax(static_cast<size_t>(G * D));
  for (int64_t g = 0; g < G; ++g) {
    for (int64_t d2 = 0; d2 < D; ++d2) {
      double best = x->val[static_cast<size_t>(g * group * D + d2)];
      int32_t bi = 0;
      for (int64_t s = 1; s < group; ++s) {
        const double v = x->val[static_cast<size_t>((g * group + s) * D + d2)];
        if (v > best) {
          best = v;
          bi = static_cast<int32_t>(s);
        }
      }
      out->val[static_cast<size_t>(g * D + d2)] = best;
      argmax[static_cast<size_t>(g * D + d2)] = bi;
    }
  }
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, x, G, D, group, argmax = std::move(argmax)]() {
      x->ensure_grad();
      for (int64_t g = 0; g < G; ++g)
        for (int64_t d2 = 0; d2 < D; ++d2)
          x->grad[static_cast<size_t>((g * group + argmax[static_cast<size_t>(g * D + d2)]) * D +
                                      d2)] += self->grad[static_cast<size_t>(g * D + d2)];
    };
  }
  return out;
}

Var broadcast_rows(Var x, int64_t times) {
  check(x->shape.size() == 2, "broadcast_rows: expects [G,D]");
  const int64_t G = x->shape[0], D = x->shape[1];
  Var out = make_node({G * times, D}, {x});
  for (int64_t g = 0; g < G; ++g)
    for (int64_t s = 0; s < times; ++s)
      std::copy_n(x->val.begin() + g * D, D, out->val.begin() + (g * times + s) * D);
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, x, G, D, times]() {
      x->ensure_grad();
      for (int64_t g = 0; g < G; ++g)
        for (int64_t s = 0; s < times; ++s)
          for (int64_t d2 = 0; d2 < D; ++d2)
            x->grad[static_cast<size_t>(g * D + d2)] +=
                self->grad[static_cast<size_t>((g * times + s) * D + d2)];
    };
  }
  return out;
}

Var attn_pool_cells(Var cells, Var logits, int64_t group, double tau) {
  check(cells->shape.size() == 2, "attn_pool_cells: cells must be [G*S,D]");
  check(logits->size() == cells->shape[0], "attn_pool_cells: logits size mismatch");
  check(cells->shape[0] % group == 0, "attn_pool_cells: rows must be a multiple of group");
  check(tau > 0, "attn_pool_cells: tau must be positive");
  const int64_t G = cells->shape[0] / group, D = cells->shape[1];

  std::vector<double> p = softmax_groups(logits->val, group, tau);
  Var out = make_node({G, D}, {cells, logits});
  for (int64_t g = 0; g < G; ++g) {
    double* dst = out->val.data() + g * D;
    std::fill_n(dst, D, 0.0);
    for (int64_t s = 0; s < group; ++s) {
      const double ps = p[static_cast<size_t>(g * group + s)];
      const double* c = cells->val.data() + (g * group + s) * D;
      for (int64_t d2 = 0; d2 < D; ++d2) dst[d2] += ps * c[d2];
    }
  }
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, cells, logits, G, D, group, tau, p = std::move(p)]() {
      if (cells->requires_grad) {
        cells->ensure_grad();
        for (int64_t g = 0; g < G; ++g) {
          const double* gout = self->grad.data() + g * D;
          for (int64_t s = 0; s < group; ++s) {
            const double ps = p[static_cast<size_t>(g * group + s)];
            double* gc = cells->grad.data() + (g * group + s) * D;
            for (int64_t d2 = 0; d2 < D; ++d2) gc[d2] += ps * gout[d2];
          }
        }
      }
      if (logits->requires_grad) {
        logits->ensure_grad();
        for (int64_t g = 0; g < G; ++g) {
          const double* gout = self->grad.data() + g * D;
          // w_s = <gout, cell_s>; dlogit_s = p_s (w_s - sum_u p_u w_u) / tau
          double wp = 0.0;
          std::vector<double> ws(static_cast<size_t>(group));
          for (int64_t s = 0; s < group; ++s) {
            const double* c = cells->val.data() + (g * group + s) * D;
            double dot = 0.0;
            for (int64_t d2 = 0; d2 < D; ++d2) dot += gout[d2] * c[d2];
            ws[static_cast<size_t>(s)] = dot;
            wp += p[static_cast<size_t>(g * group + s)] * dot;
          }
          for (int64_t s = 0; s < group; ++s)
            logits->grad[static_cast<size_t>(g * group + s)] +=
                p[static_cast<size_t>(g * group + s)] * (ws[static_cast<size_t>(s)] - wp) / tau;
        }
      }
    };
  }
  return out;
}

Var dropout(Var a, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return a;
  check(p < 1.0, "dropout: p must be < 1");
  const double keep = 1.0 - p;
  std::vector<double> mask(a->val.size());
  for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Var out = make_node(a->shape, {a});
  for (size_t i = 0; i < mask.size(); ++i) out->val[i] = a->val[i] * mask[i];
  if (out->requires_grad) {
    Node* self = out.get();
    out->backprop = [self, a, mask = std::move(mask)]() {
      a->ensure_grad();
      for (size_t i = 0; i < mask.size(); ++i) a->grad[i] += self->grad[i] * mask[i];
    };
  }
  return out;
}

std::vector<double> softmax_groups(const std::vector<double>& logits, int64_t group, double tau) {
  std::vector<double> p(logits.size());
  const int64_t G = static_cast<int64_t>(logits.size()) / group;
  for (int64_t g = 0; g < G; ++g) {
    const double* x = logits.data() + g * group;
    double m = x[0];
    for (int64_t s = 1; s < group; ++s) m = std::max(m, x[s]);
    double z = 0.0;
    for (int64_t s = 0; s < group; ++s) z += std::exp((x[s] - m) / tau);
    for (int64_t s = 0; s < group; ++s)
      p[static_cast<size_t>(g * group + s)] = std::exp((x[s] - m) / tau) / z;
  }
  return p;
}

}  // namespace ccau::ag
