#include "udagcn/nn.hpp"

#include <cmath>

namespace udagcn {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(name + ".weight", fan_in_uniform({in, out}, in, rng)),
      bias(name + ".bias", Tensor(Shape{out}, 0.0)) {}

Var Linear::operator()(Tape& tape, const Var& x) {
  return add_row_bias(matmul(x, tape.param(weight)), tape.param(bias));
}

Conv3x3::Conv3x3(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : kernel(name + ".kernel", fan_in_uniform({out, in, 3, 3}, in * 9, rng)),
      bias(name + ".bias", Tensor(Shape{out}, 0.0)) {}

Var Conv3x3::operator()(Tape& tape, const Var& x) {
  return add_channel_bias(conv2d(x, tape.param(kernel)), tape.param(bias));
}

void zero_grad(const ParamRefs& params) {
  for (Parameter* p : params) p->zero_grad();
}

void adam_step(const ParamRefs& params, const AdamConfig& cfg) {
  for (Parameter* p : params) {
    AdamState& s = p->adam;
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    if (s.m.shape() != p->value.shape()) {
      s.m = Tensor(p->value.shape(), 0.0);
      s.v = Tensor(p->value.shape(), 0.0);
      s.step = 0;
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
      p->value[i] -= cfg.learning_rate * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg.eps);
    }
  }
}

ParamRefs join(std::initializer_list<ParamRefs> lists) {
  ParamRefs out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace udagcn
