#include "ccau/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ccau::nn {

Var ParamStore::add(const std::string& name, ag::Shape shape, std::vector<double> init) {
  if (by_name_.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
  Var p = ag::param(std::move(shape), std::move(init), name);
  params_.push_back(p);
  by_name_[name] = p;
  return p;
}

Var ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(by_name_.size());
  for (const auto& [k, v] : by_name_) out.push_back(k);
  return out;
}

std::vector<double> uniform_init(Rng& rng, int64_t n, double limit) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return v;
}

std::vector<double> kaiming_init(Rng& rng, int64_t n, int64_t fan_in) {
  return uniform_init(rng, n, std::sqrt(6.0 / static_cast<double>(fan_in)));
}

Linear make_linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng) {
  Linear l;
  l.w = ps.add(prefix + ".w", {in, out}, kaiming_init(rng, in * out, in));
  l.b = ps.add(prefix + ".b", {out}, std::vector<double>(static_cast<size_t>(out), 0.0));
  return l;
}

Conv3d make_conv3d(ParamStore& ps, const std::string& prefix, int64_t ci, int64_t co,
                   std::array<int64_t, 3> kernel, std::array<int64_t, 3> stride,
                   std::array<int64_t, 3> pad, Rng& rng) {
  Conv3d c;
  const int64_t fan_in = ci * kernel[0] * kernel[1] * kernel[2];
  c.w = ps.add(prefix + ".w", {co, ci, kernel[0], kernel[1], kernel[2]},
               kaiming_init(rng, co * fan_in, fan_in));
  c.b = ps.add(prefix + ".b", {co}, std::vector<double>(static_cast<size_t>(co), 0.0));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var ConvGru::step(Var x, Var h) const {
  using namespace ag;
  Var r = sigmoid(add(xr.forward(x), matmul(h, hr)));
  Var u = sigmoid(add(xu.forward(x), matmul(h, hu)));
  Var n = tanh_(add(xn.forward(x), matmul(mul(r, h), hn)));
  // h' = u*h + (1-u)*n
  return add(mul(u, h), mul(add_scalar(neg(u), 1.0), n));
}

Var ConvGru::initial_state(int64_t rows) const {
  return ag::constant({rows, dim}, std::vector<double>(static_cast<size_t>(rows * dim), 0.0));
}

ConvGru make_conv_gru(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng) {
  ConvGru g;
  g.dim = dim;
  g.xr = make_linear(ps, prefix + ".xr", dim, dim, rng);
  g.xu = make_linear(ps, prefix + ".xu", dim, dim, rng);
  g.xn = make_linear(ps, prefix + ".xn", dim, dim, rng);
  const double lim = 1.0 / std::sqrt(static_cast<double>(dim));
  g.hr = ps.add(prefix + ".hr", {dim, dim}, uniform_init(rng, dim * dim, lim));
  g.hu = ps.add(prefix + ".hu", {dim, dim}, uniform_init(rng, dim * dim, lim));
  g.hn = ps.add(prefix + ".hn", {dim, dim}, uniform_init(rng, dim * dim, lim));
  // bias the update gate toward carrying state early in training
  for (auto& v : g.xu.b->val) v = 1.0;
  return g;
}

Mlp2 make_mlp2(ParamStore& ps, const std::string& prefix, int64_t in, int64_t hidden, int64_t out,
               Rng& rng) {
  Mlp2 m;
  m.l1 = make_linear(ps, prefix + ".l1", in, hidden, rng);
  m.l2 = make_linear(ps, prefix + ".l2", hidden, out, rng);
  return m;
}

}  // namespace ccau::nn
