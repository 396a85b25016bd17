#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ccau/rng.hpp"

namespace ccau::ag {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);

struct Node;
using Var = std::shared_ptr<Node>;

// One value in a reverse-mode tape. Graphs are DAGs built per step and
// dropped after backward(); parameters are leaves reused across steps.
struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::string name;  // non-empty for parameters
  std::vector<Var> parents;
  std::function<void()> backprop;

  int64_t size() const { return static_cast<int64_t>(val.size()); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

bool grad_enabled();

// Disables graph construction in scope (inference / data preparation).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

Var constant(Shape shape, std::vector<double> data);
Var scalar(double v);
Var param(Shape shape, std::vector<double> data, std::string name = "");
Var leaf(Shape shape, std::vector<double> data, bool requires_grad);

// Backpropagates d(root)/d(leaf) into every reachable grad-requiring leaf.
// root must be scalar.
void backward(const Var& root);
void zero_grad(const std::vector<Var>& params);

// All grad-requiring leaves reachable from root (used by loss-graph
// isolation checks and by gradient tests).
std::vector<Var> reachable_leaves(const Var& root);

// --- elementwise -----------------------------------------------------------
Var add(Var a, Var b);   // same shape, or one operand scalar
Var sub(Var a, Var b);
Var mul(Var a, Var b);   // same shape, or one operand scalar
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh_(Var a);
Var exp_(Var a);
Var log_(Var a);

// --- linear algebra ----------------------------------------------------------
Var matmul(Var a, Var b);              // [m,k] x [k,n]
Var transpose(Var a);                  // 2-D
Var linear(Var x, Var w, Var b);       // [B,in] x [in,out] + [out]

// --- reductions / reshaping -------------------------------------------------
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape s);
Var take(Var a, std::vector<int64_t> flat_idx);
Var stack_rows(const std::vector<Var>& rows);   // k vectors [D] -> [k,D]
Var concat_rows(const std::vector<Var>& mats);  // [Ri,...] -> [sum Ri,...]
Var slice_rows(Var a, int64_t start, int64_t count);  // leading-axis slice

// --- softmax family -----------------------------------------------------------
Var log_softmax_rows(Var a);  // [B,C]
Var cross_entropy_mean(Var logits, const std::vector<int64_t>& labels);
Var bce_with_logits_mean(Var logits, Var targets);

// --- structured ops for the encoder stack ------------------------------------
// x [B,Ci,T,H,W], w [Co,Ci,kt,kh,kw], b [Co] (may be nullptr)
Var conv3d(Var x, Var w, Var b, std::array<int64_t, 3> stride, std::array<int64_t, 3> pad);
Var temporal_mean(Var x);                    // [B,C,T,H,W] -> [B,C,H,W]
Var to_cells(Var x);                         // [B,C,H,W] -> [B*H*W, C]
Var max_rows_group(Var x, int64_t group);    // [G*S,D] -> [G,D], per-column max
Var broadcast_rows(Var x, int64_t times);    // [G,D] -> [G*times,D]
// grouped softmax pooling: cells [G*S,D], logits [G*S] -> [G,D]
Var attn_pool_cells(Var cells, Var logits, int64_t group, double tau);

Var dropout(Var a, double p, Rng& rng, bool train);

// group-wise softmax on raw values (export paths; no graph)
std::vector<double> softmax_groups(const std::vector<double>& logits, int64_t group, double tau);

}  // namespace ccau::ag
