#pragma once

#include <map>
#include <string>
#include <vector>

#include "ccau/autograd.hpp"
#include "ccau/rng.hpp"

namespace ccau::nn {

using ag::Var;

// Named parameter registry; the checkpoint manifest is its flat view.
class ParamStore {
 public:
  Var add(const std::string& name, ag::Shape shape, std::vector<double> init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  const std::vector<Var>& all() const { return params_; }
  std::vector<std::string> names() const;

 private:
  std::vector<Var> params_;
  std::map<std::string, Var> by_name_;
};

std::vector<double> uniform_init(Rng& rng, int64_t n, double limit);
std::vector<double> kaiming_init(Rng& rng, int64_t n, int64_t fan_in);

struct Linear {
  Var w, b;
  Var forward(Var x) const { return ag::linear(std::move(x), w, b); }
};
Linear make_linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng);

struct Conv3d {
  Var w, b;
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> pad{0, 0, 0};
  Var forward(Var x) const { return ag::conv3d(std::move(x), w, b, stride, pad); }
};
Conv3d make_conv3d(ParamStore& ps, const std::string& prefix, int64_t ci, int64_t co,
                   std::array<int64_t, 3> kernel, std::array<int64_t, 3> stride,
                   std::array<int64_t, 3> pad, Rng& rng);

// One-layer convolutional GRU with (1,1) kernel: the recurrence is pointwise
// over grid cells with weights shared across all spatial positions, so a step
// is three gated D x D maps applied to [cells, D] matrices.
struct ConvGru {
  Linear xr, xu, xn;  // input maps (with bias)
  Var hr, hu, hn;     // hidden maps, no bias
  int64_t dim = 0;

  // x, h: [G, D] -> new hidden [G, D]
  Var step(Var x, Var h) const;
  Var initial_state(int64_t rows) const;
};
ConvGru make_conv_gru(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng);

struct Mlp2 {
  Linear l1, l2;
  Var forward(Var x) const { return l2.forward(ag::relu(l1.forward(std::move(x)))); }
};
Mlp2 make_mlp2(ParamStore& ps, const std::string& prefix, int64_t in, int64_t hidden, int64_t out,
               Rng& rng);

}  // namespace ccau::nn
