#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "udagcn/checkpoint.hpp"
#include "udagcn/data.hpp"
#include "udagcn/trainer.hpp"

using namespace udagcn;

namespace {

TrainConfig micro_config() {
  TrainConfig t;
  t.model.image_size = 8;
  t.model.widths = {4, 3, 3};
  t.model.d_tex = 4;
  t.model.str_channels = 1;
  t.model.disc_widths = {3, 3, 4};
  t.gcn_hidden = 5;
  t.gcn_out = 3;
  t.n_classes = 3;
  t.domain_hidden = 4;
  t.batch_size = 4;
  t.eval_batch_size = 4;
  t.epochs = 2;
  return t;
}

Tensor random_images(std::size_t n, std::size_t side, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(Shape{n, 1, side, side});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::vector<Tensor> snapshot(const ParamRefs& ps) {
  std::vector<Tensor> out;
  for (const Parameter* p : ps) out.push_back(p->value);
  return out;
}

bool unchanged(const ParamRefs& ps, const std::vector<Tensor>& before) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!std::equal(ps[i]->value.values().begin(), ps[i]->value.values().end(), before[i].values().begin()))
      return false;
  return true;
}

bool all_changed(const ParamRefs& ps, const std::vector<Tensor>& before) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (std::equal(ps[i]->value.values().begin(), ps[i]->value.values().end(), before[i].values().begin()))
      return false;
  return true;
}

// Zeroed output layer: D ≡ 1/2 everywhere.
DomainClassifier neutral_domain(std::size_t in, Rng& rng) {
  DomainClassifier d(in, 4, rng);
  d.out.weight.value = Tensor(d.out.weight.value.shape(), 0.0);
  d.out.bias.value = Tensor(d.out.bias.value.shape(), 0.0);
  return d;
}

struct Fixture {
  TrainConfig cfg = micro_config();
  Rng rng{3};
  Tensor xs, xt;
  std::vector<int> ys{0, 1, 2, 1};

  Fixture() {
    xs = random_images(4, 8, rng);
    xt = random_images(4, 8, rng);
  }
};

DomainDataset micro_dataset(std::size_t n, Domain d, std::uint64_t seed) {
  Rng rng(seed);
  DomainDataset ds;
  ds.images = random_images(n, 8, rng);
  ds.domain = d;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels.push_back(static_cast<int>(i % 3));
    ds.groups.push_back(std::to_string(i));
  }
  return ds;
}

}  // namespace

TEST(ClassificationLoss, UniformLogitsGiveLn2) {
  Rng rng(0);
  Linear head("head", 3, 2, rng);
  head.weight.value = Tensor(head.weight.value.shape(), 0.0);
  Tape t;
  const int labels[] = {0, 1, 1};
  Var e = t.constant(Tensor(Shape{3, 3}, 0.7));
  EXPECT_NEAR(classification_loss(t, head, e, labels).item(), std::log(2.0), 1e-15);
}

TEST(ClassificationLoss, SeparatedLogitsApproachZero) {
  Rng rng(0);
  Linear head("head", 2, 2, rng);
  head.weight.value = Tensor(Shape{2, 2}, {40.0, -40.0, -40.0, 40.0});
  Tape t;
  const int labels[] = {0, 1};
  Var e = t.constant(Tensor(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0}));
  EXPECT_LT(classification_loss(t, head, e, labels).item(), 1e-30);
}

TEST(ClassificationLoss, LabelOutOfRangeThrows) {
  Rng rng(0);
  Linear head("head", 3, 2, rng);
  Tape t;
  const int labels[] = {0, 2};
  EXPECT_THROW(classification_loss(t, head, t.constant(Tensor(Shape{2, 3}, 0.1)), labels), IndexError);
}

TEST(ClassificationLoss, LabelCountMismatchThrows) {
  Rng rng(0);
  Linear head("head", 3, 2, rng);
  Tape t;
  const int labels[] = {0};
  EXPECT_THROW(classification_loss(t, head, t.constant(Tensor(Shape{2, 3}, 0.1)), labels), ContractError);
}

TEST(DomainLosses, NeutralClassifierGivesTwoLn2) {
  Rng rng(1);
  DomainClassifier d = neutral_domain(3, rng);
  Tape t;
  Var es = t.constant(Tensor(Shape{4, 3}, 0.3)), et = t.constant(Tensor(Shape{4, 3}, -0.2));
  EXPECT_NEAR(domain_disc_loss(t, d, es, et).item(), 2 * std::log(2.0), 1e-15);
  EXPECT_NEAR(domain_gen_loss(t, d, es, et, AdvGenerator::Confusion).item(), 2 * std::log(2.0), 1e-15);
  EXPECT_NEAR(domain_gen_loss(t, d, es, et, AdvGenerator::FlippedLabels).item(), 2 * std::log(2.0), 1e-15);
}

TEST(DomainLosses, PerfectClassifierApproachesZero) {
  Rng rng(1);
  DomainClassifier d(1, 1, rng);
  d.hidden.weight.value = Tensor(Shape{1, 1}, 1.0);
  d.hidden.bias.value = Tensor(Shape{1}, 0.0);
  d.out.weight.value = Tensor(Shape{1, 1}, 100.0);
  d.out.bias.value = Tensor(Shape{1}, -50.0);
  Tape t;
  // Source at 0 → logit −50, target at 1 → logit +50.
  Var es = t.constant(Tensor(Shape{2, 1}, 0.0)), et = t.constant(Tensor(Shape{2, 1}, 1.0));
  EXPECT_LT(domain_disc_loss(t, d, es, et).item(), 1e-20);
}

TEST(DomainLosses, EmptyBatchThrows) {
  Rng rng(1);
  DomainClassifier d(3, 4, rng);
  Tape t;
  Var e = t.constant(Tensor(Shape{2, 3}, 0.1)), none = t.constant(Tensor());
  EXPECT_THROW(domain_disc_loss(t, d, none, e), ContractError);
  EXPECT_THROW(domain_gen_loss(t, d, e, none), ContractError);
}

TEST(DomainLosses, DiscriminatorLossFallsOnFrozenEmbeddings) {
  Rng rng(5);
  DomainClassifier d(3, 8, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor es(Shape{16, 3}), et(Shape{16, 3});
  for (auto& v : es.values()) v = n(rng);
  for (auto& v : et.values()) v = n(rng) + 0.8;
  const AdamConfig adam{1e-2};
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    ParamRefs ps = d.parameters();
    zero_grad(ps);
    Tape t;
    Var l = domain_disc_loss(t, d, t.constant(es), t.constant(et));
    t.backward(l);
    adam_step(ps, adam);
    losses.push_back(l.item());
  }
  const double first = std::accumulate(losses.begin(), losses.begin() + 10, 0.0);
  const double last = std::accumulate(losses.end() - 10, losses.end(), 0.0);
  EXPECT_LT(last, first);
}

TEST(DomainLosses, GeneratorGradientReachesEncoder) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  Tape t;
  LatentBatch zs = encode(t, m.fdn.enc_s, f.cfg.model, t.constant(f.xs));
  LatentBatch zt = encode(t, m.fdn.enc_s, f.cfg.model, t.constant(f.xt));
  auto branch = [&](const LatentBatch& z) {
    const Var parts[] = {z.tex, flatten_rows(z.str)};
    const InstanceGraph g = build_graph(z.tex.value(), z.str.value(), f.cfg.score_anchor);
    return gcn_forward(t, m.gcn, t.constant(g.normalized), concat(parts, 1));
  };
  Var l = domain_gen_loss(t, m.domain, branch(zs), branch(zt));
  ParamRefs enc = m.fdn.enc_s.parameters();
  zero_grad(enc);
  t.backward(l);
  double norm = 0.0;
  for (const Parameter* p : enc)
    for (double g : p->grad.values()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(TotalObjective, Arithmetic) {
  Tape t;
  Var cls = t.constant(Tensor::scalar(1.0)), adv = t.constant(Tensor::scalar(2.0));
  EXPECT_EQ(total_objective(cls, adv, 0.5).item(), 2.0);
  EXPECT_EQ(total_objective(cls, adv, 0.0).item(), 1.0);
  EXPECT_THROW(total_objective(cls, adv, -0.1), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c = micro_config();
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = micro_config();
  c.lambda2 = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = micro_config();
  c.graph_self_loop = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainStep, LossBreakdownIdentitiesHoldExactly) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  for (int step = 0; step < 5; ++step) {
    const LossBreakdown l = train_step(m, f.xs, f.ys, f.xt, f.cfg);
    ASSERT_TRUE(l.all_finite());
    EXPECT_EQ(l.disent_total, l.rec + (l.lambda1 * l.swap_g + l.lambda2 * l.str));
    EXPECT_EQ(l.total, l.cls + l.lambda_adv * l.adv_g);
    EXPECT_EQ(l.lambda1, f.cfg.lambda1);
    EXPECT_EQ(l.lambda2, f.cfg.lambda2);
    EXPECT_EQ(l.lambda_adv, f.cfg.lambda_adv);
  }
}

TEST(TrainStep, PhasesTouchOnlyTheirParameters) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  FdnParams& fdn = m.fdn;
  const ParamRefs disc = fdn.disc_parameters(), gen = fdn.generator_parameters(), dom = m.domain.parameters();
  const ParamRefs task = join({m.gcn.parameters(), m.classifier.parameters(), fdn.enc_s.parameters()});
  const ParamRefs frozen_in_task =
      join({disc, dom, fdn.enc_t.parameters(), fdn.dec_s.parameters(), fdn.dec_t.parameters()});
  const ParamRefs all = m.parameters();
  std::vector<Tensor> before = snapshot(all);
  std::vector<StepPhase> seen;
  auto split = [&](const ParamRefs& moving) {
    ParamRefs rest;
    for (Parameter* p : all)
      if (std::find(moving.begin(), moving.end(), p) == moving.end()) rest.push_back(p);
    return rest;
  };
  auto snapshot_of = [&](const ParamRefs& ps) {
    std::vector<Tensor> out;
    for (Parameter* p : ps) out.push_back(before[std::find(all.begin(), all.end(), p) - all.begin()]);
    return out;
  };
  train_step(m, f.xs, f.ys, f.xt, f.cfg, [&](StepPhase phase, const ModelBundle&) {
    seen.push_back(phase);
    ParamRefs moving;
    switch (phase) {
      case StepPhase::SwapDiscriminator: moving = disc; break;
      case StepPhase::Disentangler: moving = gen; break;
      case StepPhase::DomainClassifier: moving = dom; break;
      case StepPhase::Task: moving = task; break;
    }
    const ParamRefs rest = split(moving);
    EXPECT_TRUE(unchanged(rest, snapshot_of(rest))) << "phase " << static_cast<int>(phase);
    EXPECT_TRUE(all_changed(moving, snapshot_of(moving))) << "phase " << static_cast<int>(phase);
    if (phase == StepPhase::Task) EXPECT_TRUE(unchanged(frozen_in_task, snapshot_of(frozen_in_task)));
    before = snapshot(all);
  });
  const std::vector<StepPhase> order{StepPhase::SwapDiscriminator, StepPhase::Disentangler,
                                     StepPhase::DomainClassifier, StepPhase::Task};
  EXPECT_EQ(seen, order);
}

TEST(TrainStep, DisabledStrIsExactlyZeroAndSkipsEncoderPath) {
  Fixture f;
  f.cfg.disable_str = true;
  ModelBundle m(f.cfg, f.rng);
  const LossBreakdown l = train_step(m, f.xs, f.ys, f.xt, f.cfg);
  EXPECT_EQ(l.str, 0.0);
  EXPECT_GT(l.swap_g, 0.0);

  // With swap also off, the disentangler is a pair of plain autoencoders:
  // its update must match one driven by the reconstruction loss alone.
  Fixture g;
  g.cfg.disable_str = true;
  g.cfg.disable_swap = true;
  ModelBundle a(g.cfg, g.rng);
  ModelBundle b = a;
  const LossBreakdown la = train_step(a, g.xs, g.ys, g.xt, g.cfg);
  EXPECT_EQ(la.swap_g, 0.0);
  EXPECT_EQ(la.swap_d, 0.0);
  EXPECT_EQ(la.disent_total, la.rec);
  TrainConfig c2 = g.cfg;
  c2.disable_str = false;
  c2.lambda2 = 0.0;
  c2.lambda1 = 0.0;
  train_step(b, g.xs, g.ys, g.xt, c2);
  const ParamRefs pa = a.fdn.generator_parameters(), pb = b.fdn.generator_parameters();
  EXPECT_TRUE(unchanged(pa, snapshot(pb)));
}

TEST(TrainStep, AblationSwitchesWithAllLambdasZeroTrainAutoencoderAndClassifier) {
  Fixture f;
  f.cfg.lambda1 = f.cfg.lambda2 = f.cfg.lambda_adv = 0.0;
  f.cfg.disable_str = f.cfg.disable_swap = true;
  ModelBundle m(f.cfg, f.rng);
  std::vector<LossBreakdown> hist;
  for (int step = 0; step < 100; ++step) hist.push_back(train_step(m, f.xs, f.ys, f.xt, f.cfg));
  for (const auto& l : hist) {
    EXPECT_EQ(l.adv_d, 0.0);
    EXPECT_EQ(l.adv_g, 0.0);
    EXPECT_EQ(l.total, l.cls);
  }
  EXPECT_LT(hist.back().rec, hist.front().rec);
  EXPECT_LT(hist.back().cls, hist.front().cls);
}

TEST(TrainStep, BatchMismatchThrows) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  Rng rng(9);
  const Tensor xt3 = random_images(3, 8, rng);
  EXPECT_THROW(train_step(m, f.xs, f.ys, xt3, f.cfg), ContractError);
  const std::vector<int> short_labels{0, 1};
  EXPECT_THROW(train_step(m, f.xs, short_labels, f.xt, f.cfg), ContractError);
}

TEST(TrainStep, SameSeedGivesIdenticalBreakdowns) {
  auto run = [] {
    Fixture f;
    ModelBundle m(f.cfg, f.rng);
    std::vector<double> out;
    for (int step = 0; step < 3; ++step) {
      const LossBreakdown l = train_step(m, f.xs, f.ys, f.xt, f.cfg);
      for (double v : {l.rec, l.swap_g, l.swap_d, l.str, l.cls, l.adv_g, l.adv_d, l.disent_total, l.total})
        out.push_back(v);
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Fit, HistoryBookkeepingAndDeterminism) {
  const TrainConfig cfg = micro_config();
  const DomainDataset src = micro_dataset(10, Domain::Source, 1), tgt = micro_dataset(9, Domain::Target, 2);
  FitOptions opts;
  opts.target_val = &tgt;
  std::size_t callbacks = 0;
  opts.on_epoch = [&](const EpochMetrics&, const LossBreakdown&) { ++callbacks; };
  const FitResult a = fit(cfg, src, tgt, opts);
  EXPECT_EQ(a.history.steps_per_epoch, 2u);  // min(10, 9) / 4
  EXPECT_EQ(a.history.steps.size(), cfg.epochs * a.history.steps_per_epoch);
  EXPECT_EQ(a.history.epochs.size(), cfg.epochs);
  EXPECT_EQ(callbacks, cfg.epochs);
  EXPECT_TRUE(a.history.epochs[0].target_val_accuracy.has_value());
  EXPECT_FALSE(a.history.epochs[0].source_val_accuracy.has_value());

  const FitResult b = fit(cfg, src, tgt);
  ASSERT_EQ(a.history.steps.size(), b.history.steps.size());
  for (std::size_t i = 0; i < a.history.steps.size(); ++i) {
    EXPECT_EQ(a.history.steps[i].total, b.history.steps[i].total);
    EXPECT_EQ(a.history.steps[i].disent_total, b.history.steps[i].disent_total);
    EXPECT_EQ(a.history.steps[i].adv_d, b.history.steps[i].adv_d);
  }
}

TEST(Fit, EmptyOrUnlabeledSourceThrows) {
  const TrainConfig cfg = micro_config();
  DomainDataset src = micro_dataset(8, Domain::Source, 1), tgt = micro_dataset(8, Domain::Target, 2);
  DomainDataset empty;
  EXPECT_ANY_THROW(fit(cfg, empty, tgt));
  EXPECT_ANY_THROW(fit(cfg, src, empty));
  src.labels.clear();
  EXPECT_ANY_THROW(fit(cfg, src, tgt));
}

TEST(Predict, RowsAreDistributions) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  Rng rng(4);
  const Tensor x = random_images(10, 8, rng);
  const Tensor p = predict(m, f.cfg, x);
  ASSERT_EQ(p.shape(), (Shape{10, 3}));
  for (std::size_t i = 0; i < 10; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_GE(p.at(i, c), 0.0);
      s += p.at(i, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Predict, SingleImageUsesSelfLoopGraph) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  Rng rng(4);
  const Tensor x = random_images(1, 8, rng);
  const Tensor p = predict(m, f.cfg, x);
  ASSERT_EQ(p.shape(), (Shape{1, 3}));
  // Â = [γ] normalizes to S = [1]: the GCN reduces to its weight chain.
  Tape t;
  LatentBatch z = encode(t, m.fdn.enc_s, f.cfg.model, t.constant(x));
  const Var parts[] = {z.tex, flatten_rows(z.str)};
  Var emb = gcn_forward(t, m.gcn, t.constant(Tensor(Shape{1, 1}, 1.0)), concat(parts, 1));
  const Tensor logits = m.classifier(t, emb).value();
  double mx = std::max({logits[0], logits[1], logits[2]}), den = 0.0;
  for (double v : logits.values()) den += std::exp(v - mx);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(p[c], std::exp(logits[c] - mx) / den, 1e-12);
}

TEST(Predict, PermutationEquivariantWithinABatch) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  Rng rng(8);
  const Tensor x = random_images(4, 8, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor xp(x.shape());
  const std::size_t per = x.size() / 4;
  for (std::size_t i = 0; i < 4; ++i)
    std::copy(x.data() + perm[i] * per, x.data() + (perm[i] + 1) * per, xp.data() + i * per);
  const Tensor p = predict(m, f.cfg, x), pp = predict(m, f.cfg, xp);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(pp.at(i, c), p.at(perm[i], c), 1e-10);
}

TEST(Predict, SelfLoopWeightOnlyMattersThroughTheGraph) {
  Fixture f;
  ModelBundle m(f.cfg, f.rng);
  Rng rng(4);
  const Tensor one = random_images(1, 8, rng);
  TrainConfig heavy = f.cfg;
  heavy.graph_self_loop = 8.0;
  const Tensor a = predict(m, f.cfg, one), b = predict(m, heavy, one);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(a[c], b[c]);
}

TEST(Checkpoint, BundleRoundTripIsExact) {
  Fixture f;
  ModelBundle a(f.cfg, f.rng);
  train_step(a, f.xs, f.ys, f.xt, f.cfg);
  const auto path = std::filesystem::temp_directory_path() / "udagcn_bundle_test.gcan";
  save_bundle(a, path);
  Rng other(99);
  ModelBundle b(f.cfg, other);
  load_bundle(b, path);
  const ParamRefs pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  EXPECT_TRUE(unchanged(pb, snapshot(pa)));
  std::filesystem::remove(path);
}

TEST(Checkpoint, FdnRoundTripAndMagicCheck) {
  Fixture f;
  ModelBundle a(f.cfg, f.rng);
  const auto fdn_path = std::filesystem::temp_directory_path() / "udagcn_test.fdn";
  save_fdn(a.fdn, fdn_path);
  Rng other(7);
  ModelBundle b(f.cfg, other);
  load_fdn(b.fdn, fdn_path);
  EXPECT_TRUE(unchanged(b.fdn.parameters(), snapshot(a.fdn.parameters())));
  EXPECT_THROW(load_bundle(b, fdn_path), CheckpointError);
  std::filesystem::remove(fdn_path);
}

TEST(Checkpoint, ShapeMismatchMissingFileAndTruncationAreErrors) {
  Fixture f;
  ModelBundle a(f.cfg, f.rng);
  const auto path = std::filesystem::temp_directory_path() / "udagcn_shape_test.gcan";
  save_bundle(a, path);
  TrainConfig wider = f.cfg;
  wider.gcn_hidden = 6;
  Rng rng(1);
  ModelBundle b(wider, rng);
  EXPECT_THROW(load_bundle(b, path), CheckpointError);
  EXPECT_THROW(load_bundle(b, path.string() + ".missing"), CheckpointError);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  ModelBundle c(f.cfg, rng);
  EXPECT_THROW(load_bundle(c, path), CheckpointError);
  std::filesystem::remove(path);
}
