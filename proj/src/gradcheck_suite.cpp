#include "udagcn/gradcheck_suite.hpp"

#include <cmath>

#include "udagcn/disentangle.hpp"
#include "udagcn/graph.hpp"
#include "udagcn/trainer.hpp"

namespace udagcn {

namespace {

// Uniform in [−1, 1], magnitudes pushed above `gap` so kinks at 0 stay
// out of reach of the probe step.
Tensor random_tensor(Shape shape, Rng& rng, double gap = 0.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    double x = u(rng);
    if (gap > 0.0) x = std::copysign(gap + (1.0 - gap) * std::fabs(x), x);
    v = x;
  }
  return t;
}

Tensor random_unit(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Scalarizes any output with fixed random weights so every output entry
// contributes a distinct direction.
Var weighted_sum(Tape& tape, const Var& y, const Tensor& w) { return sum(mul(y, tape.constant(w))); }

FdnConfig micro_fdn() {
  FdnConfig c;
  c.image_size = 8;
  c.widths = {4, 3, 3};
  c.d_tex = 4;
  c.str_channels = 1;
  c.disc_widths = {3, 3, 4};
  return c;
}

TrainConfig micro_train() {
  TrainConfig t;
  t.model = micro_fdn();
  t.gcn_hidden = 5;
  t.gcn_out = 3;
  t.n_classes = 3;
  t.domain_hidden = 4;
  t.batch_size = 2;
  t.eval_batch_size = 2;
  return t;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckCase> out;
  auto unary = [&](const std::string& name, Shape shape, auto op, double gap = 0.0) {
    const Tensor x = random_tensor(shape, rng, gap);
    Tape probe;
    const Tensor w = random_tensor(op(probe, probe.constant(x)).shape(), rng);
    out.push_back({name, finite_diff_check([&](Tape& t, const Var& v) { return weighted_sum(t, op(t, v), w); }, x)});
  };
  // Binary ops are checked in each argument with the other held fixed.
  auto binary = [&](const std::string& name, Shape sa, Shape sb, auto op) {
    const Tensor a = random_tensor(sa, rng), b = random_tensor(sb, rng);
    Tape probe;
    const Tensor w = random_tensor(op(probe.constant(a), probe.constant(b)).shape(), rng);
    out.push_back({name + "/a", finite_diff_check(
                                    [&](Tape& t, const Var& v) { return weighted_sum(t, op(v, t.constant(b)), w); }, a)});
    out.push_back({name + "/b", finite_diff_check(
                                    [&](Tape& t, const Var& v) { return weighted_sum(t, op(t.constant(a), v), w); }, b)});
  };

  // ---- primitives ----
  binary("add", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](const Var& a, const Var& b) { return mul(a, b); });
  binary("matmul", {3, 4}, {4, 5}, [](const Var& a, const Var& b) { return matmul(a, b); });
  binary("add_row_bias", {3, 4}, {4}, [](const Var& a, const Var& b) { return add_row_bias(a, b); });
  binary("add_channel_bias", {2, 3, 4, 4}, {3}, [](const Var& a, const Var& b) { return add_channel_bias(a, b); });
  binary("conv2d", {2, 2, 5, 4}, {3, 2, 3, 3}, [](const Var& a, const Var& b) { return conv2d(a, b); });
  binary("conv2d_single", {2, 4, 4}, {2, 2, 3, 3}, [](const Var& a, const Var& b) { return conv2d(a, b); });
  binary("cosine_similarity", {2, 3, 3}, {2, 3, 3},
         [](const Var& a, const Var& b) { return cosine_similarity(a, b); });
  binary("cosine_rows", {3, 5}, {3, 5}, [](const Var& a, const Var& b) { return cosine_rows(a, b); });
  binary("concat0", {2, 3}, {1, 3}, [](const Var& a, const Var& b) {
    const Var p[] = {a, b};
    return concat(p, 0);
  });
  binary("concat1", {2, 3}, {2, 2}, [](const Var& a, const Var& b) {
    const Var p[] = {a, b};
    return concat(p, 1);
  });
  unary("scale", {3, 4}, [](Tape&, const Var& x) { return scale(x, -1.7); });
  unary("add_scalar", {3, 4}, [](Tape&, const Var& x) { return add_scalar(x, 0.3); });
  unary("relu", {3, 4}, [](Tape&, const Var& x) { return relu(x); }, 0.1);
  unary("sigmoid", {3, 4}, [](Tape&, const Var& x) { return sigmoid(x); });
  unary("abs", {3, 4}, [](Tape&, const Var& x) { return abs(x); }, 0.1);
  unary("square", {3, 4}, [](Tape&, const Var& x) { return square(x); });
  unary("sum", {3, 4}, [](Tape&, const Var& x) { return sum(x); });
  unary("mean", {3, 4}, [](Tape&, const Var& x) { return mean(x); });
  unary("reshape", {3, 4}, [](Tape&, const Var& x) { return reshape(x, {2, 6}); });
  unary("maxpool2d", {2, 2, 4, 6}, [](Tape&, const Var& x) { return maxpool2d(x); });
  unary("upsample2x", {2, 2, 3, 3}, [](Tape&, const Var& x) { return upsample2x(x); });
  unary("global_avg_pool", {2, 3, 4, 4}, [](Tape&, const Var& x) { return global_avg_pool(x); });
  unary("tile_spatial", {2, 3}, [](Tape&, const Var& x) { return tile_spatial(x, 2, 3); });
  unary("slice_rows", {4, 3}, [](Tape&, const Var& x) { return slice_rows(x, 1, 3); });
  unary("flatten_rows", {2, 2, 3}, [](Tape&, const Var& x) { return flatten_rows(x); });
  {
    const int labels[] = {2, 0, 1};
    unary("softmax_cross_entropy", {3, 4}, [&](Tape&, const Var& x) { return softmax_cross_entropy(x, labels); });
  }
  {
    const double targets[] = {1, 0, 1, 0, 0, 1};
    const Tensor p = random_unit({6}, rng);
    out.push_back({"binary_cross_entropy",
                   finite_diff_check([&](Tape&, const Var& v) { return binary_cross_entropy(v, targets); }, p)});
    unary("binary_cross_entropy_logits", {6}, [&](Tape&, const Var& x) {
      return binary_cross_entropy_logits(scale(x, 4.0), targets);
    });
  }

  // ---- graph ----
  {
    const Tensor tex = random_tensor({5, 3}, rng), str = random_tensor({5, 4}, rng);
    const InstanceGraph g = build_graph(tex, str, ScoreAnchor::Principal);
    const Tensor w = random_tensor({7, 4}, rng);
    out.push_back({"gcn_layer/x", finite_diff_check(
                                      [&](Tape& t, const Var& x) {
                                        return sum(square(gcn_layer(t.constant(g.normalized), x, t.constant(w),
                                                                    Activation::Relu)));
                                      },
                                      g.features)});
    GcnParams gcn({7, 4, 3}, rng);
    const Tensor wo = random_tensor({5, 3}, rng);
    out.push_back({"gcn_forward/weights",
                   finite_diff_check(
                       [&](Tape& t) {
                         return weighted_sum(t, gcn_forward(t, gcn, t.constant(g.normalized), t.constant(g.features)), wo);
                       },
                       gcn.parameters())});
  }

  // ---- disentanglement losses on a micro network ----
  const TrainConfig tc = micro_train();
  const FdnConfig& mc = tc.model;
  Rng init(seed + 1);
  ModelBundle m(tc, init);
  // Zero-initialized biases let a fully dead block pin downstream
  // preactivations at exactly 0, a genuine kink; random biases avoid it.
  for (Parameter* p : m.parameters())
    if (p->name.ends_with(".bias")) p->value = random_tensor(p->value.shape(), init, 0.05);
  FdnParams& fdn = m.fdn;
  const Tensor xs = random_unit({2, 1, 8, 8}, rng), xt = random_unit({2, 1, 8, 8}, rng);
  for (RecNorm norm : {RecNorm::L1, RecNorm::L2})
    out.push_back({norm == RecNorm::L1 ? "loss_rec_l1" : "loss_rec_l2",
                   finite_diff_check(
                       [&](Tape& t) { return loss_rec(t, fdn, t.constant(xs), t.constant(xt), norm); },
                       fdn.generator_parameters())});
  auto fake_of = [&](Tape& t) {
    LatentBatch zs = encode(t, fdn.enc_s, mc, t.constant(xs));
    LatentBatch zt = encode(t, fdn.enc_t, mc, t.constant(xt));
    return std::pair{zs, swap_generate(t, fdn, zs.str, zt.tex)};
  };
  Tensor fake_value;
  {
    Tape t;
    fake_value = fake_of(t).second.value();
  }
  out.push_back({"disc_loss_swap",
                 finite_diff_check(
                     [&](Tape& t) { return disc_loss_swap(t, fdn.disc, t.constant(xt), t.constant(fake_value)); },
                     fdn.disc_parameters())});
  out.push_back({"gen_loss_swap", finite_diff_check(
                                      [&](Tape& t) {
                                        t.freeze(fdn.disc_parameters());
                                        return gen_loss_swap(t, fdn.disc, fake_of(t).second);
                                      },
                                      fdn.generator_parameters())});
  out.push_back({"loss_str", finite_diff_check(
                                 [&](Tape& t) {
                                   auto [zs, fake] = fake_of(t);
                                   return loss_str(zs.str, encode(t, fdn.enc_s, mc, fake).str);
                                 },
                                 fdn.generator_parameters())});
  out.push_back({"loss_disent", finite_diff_check(
                                    [&](Tape& t) {
                                      t.freeze(fdn.disc_parameters());
                                      auto [zs, fake] = fake_of(t);
                                      Var rec = loss_rec(t, fdn, t.constant(xs), t.constant(xt), RecNorm::L1);
                                      Var swap = gen_loss_swap(t, fdn.disc, fake);
                                      Var str = loss_str(zs.str, encode(t, fdn.enc_s, mc, fake).str);
                                      return loss_disent(rec, swap, str, 0.9, 1.2);
                                    },
                                    fdn.generator_parameters())});

  // ---- task and domain losses through the graph branch ----
  const int labels[] = {0, 2};
  Tensor s_src, s_tgt;
  {
    Tape t;
    LatentBatch zs = encode(t, fdn.enc_s, mc, t.constant(xs));
    LatentBatch zt = encode(t, fdn.enc_s, mc, t.constant(xt));
    s_src = build_graph(zs.tex.value(), zs.str.value(), tc.score_anchor).normalized;
    s_tgt = build_graph(zt.tex.value(), zt.str.value(), tc.score_anchor).normalized;
  }
  auto embed_fixed = [&](Tape& t, const Tensor& x, const Tensor& s) {
    LatentBatch z = encode(t, fdn.enc_s, mc, t.constant(x));
    const Var parts[] = {z.tex, flatten_rows(z.str)};
    return gcn_forward(t, m.gcn, t.constant(s), concat(parts, 1));
  };
  const ParamRefs task = join({m.gcn.parameters(), m.classifier.parameters(), fdn.enc_s.parameters()});
  out.push_back({"classification_loss",
                 finite_diff_check(
                     [&](Tape& t) { return classification_loss(t, m.classifier, embed_fixed(t, xs, s_src), labels); },
                     task)});
  Tensor es, et;
  {
    Tape t;
    es = embed_fixed(t, xs, s_src).value();
    et = embed_fixed(t, xt, s_tgt).value();
  }
  out.push_back({"domain_disc_loss",
                 finite_diff_check(
                     [&](Tape& t) { return domain_disc_loss(t, m.domain, t.constant(es), t.constant(et)); },
                     m.domain.parameters())});
  for (AdvGenerator kind : {AdvGenerator::Confusion, AdvGenerator::FlippedLabels})
    out.push_back({kind == AdvGenerator::Confusion ? "domain_gen_loss_confusion" : "domain_gen_loss_flipped",
                   finite_diff_check(
                       [&](Tape& t) {
                         t.freeze(m.domain.parameters());
                         return domain_gen_loss(t, m.domain, embed_fixed(t, xs, s_src), embed_fixed(t, xt, s_tgt), kind);
                       },
                       task)});
  out.push_back({"total_objective", finite_diff_check(
                                        [&](Tape& t) {
                                          t.freeze(m.domain.parameters());
                                          Var es_v = embed_fixed(t, xs, s_src), et_v = embed_fixed(t, xt, s_tgt);
                                          return total_objective(classification_loss(t, m.classifier, es_v, labels),
                                                                 domain_gen_loss(t, m.domain, es_v, et_v), 1.3);
                                        },
                                        task)});
  return out;
}

}  // namespace udagcn
