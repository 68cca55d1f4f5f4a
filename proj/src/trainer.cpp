#include "udagcn/trainer.hpp"

#include <cmath>

namespace udagcn {

void TrainConfig::validate() const {
  if (lambda1 < 0) throw ConfigError("lambda1 must be nonnegative");
  if (lambda2 < 0) throw ConfigError("lambda2 must be nonnegative");
  if (lambda_adv < 0) throw ConfigError("lambda_adv must be nonnegative");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (eval_batch_size == 0) throw ConfigError("eval_batch_size must be positive");
  if (gcn_layers == 0) throw ConfigError("gcn_layers must be positive");
  if (gcn_hidden == 0 || gcn_out == 0) throw ConfigError("gcn dimensions must be positive");
  if (domain_hidden == 0) throw ConfigError("domain_hidden must be positive");
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (!(graph_self_loop > 0.0) || !std::isfinite(graph_self_loop))
    throw ConfigError("graph_self_loop must be positive");
  model.validate();
}

bool LossBreakdown::all_finite() const {
  for (double v : {rec, swap_g, swap_d, str, cls, adv_g, adv_d, disent_total, total})
    if (!std::isfinite(v)) return false;
  return true;
}

DomainClassifier::DomainClassifier(std::size_t in, std::size_t hidden_dim, Rng& rng)
    : hidden("domain.hidden", in, hidden_dim, rng), out("domain.out", hidden_dim, 1, rng) {}

Var DomainClassifier::logits(Tape& tape, const Var& x) {
  return reshape(out(tape, relu(hidden(tape, x))), Shape{x.dim(0)});
}

namespace {

std::vector<std::size_t> gcn_dims(const TrainConfig& cfg) {
  std::vector<std::size_t> dims{cfg.model.code_size()};
  for (std::size_t l = 1; l < cfg.gcn_layers; ++l) dims.push_back(cfg.gcn_hidden);
  dims.push_back(cfg.gcn_out);
  return dims;
}

}  // namespace

ModelBundle::ModelBundle(const TrainConfig& cfg, Rng& rng)
    : fdn(cfg.model, rng),
      gcn(gcn_dims(cfg), rng),
      classifier("classifier", cfg.gcn_out, cfg.n_classes, rng),
      domain(cfg.gcn_out + (cfg.domain_on_latent ? cfg.model.code_size() : 0), cfg.domain_hidden,
             rng) {}

ParamRefs ModelBundle::parameters() {
  return join({fdn.parameters(), gcn.parameters(), classifier.parameters(), domain.parameters()});
}

Var classification_loss(Tape& tape, Linear& head, const Var& emb_s, std::span<const int> labels) {
  if (emb_s.dim(0) != labels.size())
    throw ContractError("classification_loss: " + std::to_string(emb_s.dim(0)) + " embeddings but " +
                        std::to_string(labels.size()) + " labels");
  return softmax_cross_entropy(head(tape, emb_s), labels);
}

// Adversarial domain objective in its printed form:
//   L_Adv = E_{x∈D_S}[log(1 − D(G_GNN(x)))] + E_{x∈D_T}[log D(G_GNN(x))]
// D is trained toward target → 1, source → 0. The generator side either
// swaps labels or, by default, pushes both domains toward D = 1/2.
Var domain_disc_loss(Tape& tape, DomainClassifier& d, const Var& emb_s, const Var& emb_t) {
  if (emb_s.size() == 0 || emb_t.size() == 0) throw ContractError("domain_disc_loss on an empty batch");
  return add(binary_cross_entropy_logits(d.logits(tape, emb_t), 1.0),
             binary_cross_entropy_logits(d.logits(tape, emb_s), 0.0));
}

Var domain_gen_loss(Tape& tape, DomainClassifier& d, const Var& emb_s, const Var& emb_t, AdvGenerator kind) {
  if (emb_s.size() == 0 || emb_t.size() == 0) throw ContractError("domain_gen_loss on an empty batch");
  const double ts = kind == AdvGenerator::Confusion ? 0.5 : 1.0;
  const double tt = kind == AdvGenerator::Confusion ? 0.5 : 0.0;
  return add(binary_cross_entropy_logits(d.logits(tape, emb_s), ts),
             binary_cross_entropy_logits(d.logits(tape, emb_t), tt));
}

Var total_objective(const Var& cls, const Var& adv_g, double lambda_adv) {
  if (lambda_adv < 0.0) throw ConfigError("lambda_adv must be nonnegative");
  return add(cls, scale(adv_g, lambda_adv));
}

namespace {

struct GraphBranch {
  Var features;   // w × k on tape
  Var embedding;  // w × c_out on tape
  InstanceGraph graph;
};

// Codes → instance graph (adjacency from values) → shared GCN.
GraphBranch graph_branch(Tape& tape, GcnParams& gcn, const LatentBatch& z, const TrainConfig& cfg) {
  GraphBranch b;
  const Var parts[] = {z.tex, flatten_rows(z.str)};
  b.features = concat(parts, 1);
  b.graph = build_graph(z.tex.value(), z.str.value(), cfg.score_anchor, cfg.graph_self_loop);
  b.embedding = gcn_forward(tape, gcn, tape.constant(b.graph.normalized), b.features);
  return b;
}

Var domain_input(const GraphBranch& b, bool with_latent) {
  if (!with_latent) return b.embedding;
  const Var parts[] = {b.embedding, b.features};
  return concat(parts, 1);
}

Var zero_scalar(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

}  // namespace

LossBreakdown train_step(ModelBundle& m, const Tensor& batch_s, std::span<const int> labels_s,
                         const Tensor& batch_t, const TrainConfig& cfg, const PhaseObserver& observer) {
  if (batch_s.rank() != 4 || batch_t.rank() != 4)
    throw DimensionError("train_step expects N×C×H×W batches");
  if (batch_s.dim(0) != batch_t.dim(0))
    throw ContractError("train_step: source batch has " + std::to_string(batch_s.dim(0)) +
                        " images, target batch has " + std::to_string(batch_t.dim(0)));
  if (labels_s.size() != batch_s.dim(0))
    throw ContractError("train_step: one label per source image required");

  const AdamConfig adam{cfg.learning_rate};
  const FdnConfig& mc = cfg.model;
  FdnParams& fdn = m.fdn;
  LossBreakdown lb;
  lb.lambda1 = cfg.lambda1;
  lb.lambda2 = cfg.lambda2;
  lb.lambda_adv = cfg.lambda_adv;

  // (1) swap discriminator and (2) disentangler share one generator forward;
  // the generator is untouched by (1), so its graph stays valid for (2).
  {
    Tape tape;
    tape.freeze(fdn.disc_parameters());
    Var xs = tape.constant(batch_s), xt = tape.constant(batch_t);
    LatentBatch zs = encode(tape, fdn.enc_s, mc, xs);
    LatentBatch zt = encode(tape, fdn.enc_t, mc, xt);
    Var rec = add(reconstruction_error(decode(tape, fdn.dec_s, mc, zs), xs, cfg.rec_norm),
                  reconstruction_error(decode(tape, fdn.dec_t, mc, zt), xt, cfg.rec_norm));
    Var swap_g = zero_scalar(tape), str = zero_scalar(tape);
    if (cfg.swap_active() || cfg.str_active()) {
      Var fake = swap_generate(tape, fdn, zs.str, zt.tex);
      if (cfg.swap_active()) {
        ParamRefs dp = fdn.disc_parameters();
        zero_grad(dp);
        {
          Tape dtape;
          Var l = disc_loss_swap(dtape, fdn.disc, dtape.constant(batch_t), dtape.constant(fake.value()));
          dtape.backward(l);
          lb.swap_d = l.item();
        }
        adam_step(dp, adam);
        if (observer) observer(StepPhase::SwapDiscriminator, m);
        swap_g = gen_loss_swap(tape, fdn.disc, fake);
      }
      if (cfg.str_active()) {
        LatentBatch zij = encode(tape, fdn.enc_s, mc, fake);
        str = loss_str(zs.str, zij.str);
      }
    }
    Var disent = loss_disent(rec, swap_g, str, cfg.lambda1, cfg.lambda2);
    ParamRefs gp = fdn.generator_parameters();
    zero_grad(gp);
    tape.backward(disent);
    adam_step(gp, adam);
    lb.rec = rec.item();
    lb.swap_g = swap_g.item();
    lb.str = str.item();
    lb.disent_total = disent.item();
    if (observer) observer(StepPhase::Disentangler, m);
  }

  // (3) domain classifier and (4) task objective share the graph forward.
  {
    Tape tape;
    tape.freeze(m.domain.parameters());
    Encoder& enc_graph_t = cfg.graph_encoder == GraphEncoder::Source ? fdn.enc_s : fdn.enc_t;
    LatentBatch zs = encode(tape, fdn.enc_s, mc, tape.constant(batch_s));
    LatentBatch zt = encode(tape, enc_graph_t, mc, tape.constant(batch_t));
    GraphBranch bs = graph_branch(tape, m.gcn, zs, cfg);
    GraphBranch bt = graph_branch(tape, m.gcn, zt, cfg);
    Var ds = domain_input(bs, cfg.domain_on_latent), dt = domain_input(bt, cfg.domain_on_latent);

    Var adv_g = zero_scalar(tape);
    if (cfg.adv_active()) {
      ParamRefs dp = m.domain.parameters();
      zero_grad(dp);
      {
        Tape dtape;
        Var l = domain_disc_loss(dtape, m.domain, dtape.constant(ds.value()), dtape.constant(dt.value()));
        dtape.backward(l);
        lb.adv_d = l.item();
      }
      adam_step(dp, adam);
      if (observer) observer(StepPhase::DomainClassifier, m);
      adv_g = domain_gen_loss(tape, m.domain, ds, dt, cfg.adv_generator);
    }
    Var cls = classification_loss(tape, m.classifier, bs.embedding, labels_s);
    Var total = total_objective(cls, adv_g, cfg.lambda_adv);
    ParamRefs tp = join({m.gcn.parameters(), m.classifier.parameters(), fdn.enc_s.parameters()});
    if (cfg.graph_encoder == GraphEncoder::PerDomain) tp = join({tp, fdn.enc_t.parameters()});
    zero_grad(tp);
    tape.backward(total);
    adam_step(tp, adam);
    lb.cls = cls.item();
    lb.adv_g = adv_g.item();
    lb.total = total.item();
    if (observer) observer(StepPhase::Task, m);
  }
  return lb;
}

namespace {

double accuracy_of(ModelBundle& m, const TrainConfig& cfg, const DomainDataset& ds) {
  Tensor probs = predict(m, cfg, ds.images, ds.domain);
  const std::size_t c = probs.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double* row = probs.data() + i * c;
    const auto pred = static_cast<int>(std::max_element(row, row + c) - row);
    hits += pred == ds.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace

FitResult fit(const TrainConfig& cfg, const DomainDataset& source, const DomainDataset& target,
              const FitOptions& options) {
  cfg.validate();
  if (source.size() == 0 || target.size() == 0) throw ContractError("fit: empty dataset");
  if (!source.labeled()) throw ContractError("fit: source dataset must be labeled");
  for (int y : source.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= cfg.n_classes)
      throw IndexError("fit: source label " + std::to_string(y) + " out of range");
  if (source.image_shape() != cfg.model.image_shape() || target.image_shape() != cfg.model.image_shape())
    throw DimensionError("fit: dataset images do not match model.image_size/channels " +
                         shape_str(cfg.model.image_shape()));

  Rng rng(cfg.seed);
  FitResult res{ModelBundle(cfg, rng), {}};
  constexpr std::uint64_t kTargetStream = 0x9e3779b97f4a7c15ULL;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto bs = batches(source.size(), cfg.batch_size, cfg.seed, epoch);
    const auto bt = batches(target.size(), cfg.batch_size, cfg.seed ^ kTargetStream, epoch);
    const std::size_t steps = std::min(bs.size(), bt.size());
    res.history.steps_per_epoch = steps;
    for (std::size_t s = 0; s < steps; ++s) {
      const Tensor xs = source.batch_images(bs[s]);
      const Tensor xt = target.batch_images(bt[s]);
      const auto ys = source.batch_labels(bs[s]);
      if (s == 0 && options.graph_dump_dir) {
        std::filesystem::create_directories(*options.graph_dump_dir);
        for (auto [images, tag] : {std::pair{&xs, "source"}, std::pair{&xt, "target"}}) {
          Tape tape;
          Encoder& enc = (tag[0] == 't' && cfg.graph_encoder == GraphEncoder::PerDomain)
                             ? res.bundle.fdn.enc_t
                             : res.bundle.fdn.enc_s;
          LatentBatch z = encode(tape, enc, cfg.model, tape.constant(*images));
          dump_graph_csv(build_graph(z.tex.value(), z.str.value(), cfg.score_anchor, cfg.graph_self_loop),
                         *options.graph_dump_dir / ("epoch" + std::to_string(epoch) + "_" + tag));
        }
      }
      LossBreakdown lb = train_step(res.bundle, xs, ys, xt, cfg);
      if (!lb.all_finite())
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(s));
      res.history.steps.push_back(lb);
    }
    EpochMetrics em;
    em.epoch = epoch;
    if (options.source_val && options.source_val->labeled())
      em.source_val_accuracy = accuracy_of(res.bundle, cfg, *options.source_val);
    if (options.target_val && options.target_val->labeled())
      em.target_val_accuracy = accuracy_of(res.bundle, cfg, *options.target_val);
    res.history.epochs.push_back(em);
    if (options.on_epoch && !res.history.steps.empty()) options.on_epoch(em, res.history.steps.back());
  }
  return res;
}

Tensor embed(ModelBundle& m, const TrainConfig& cfg, const Tensor& images, Domain domain) {
  if (images.rank() != 4 || images.dim(0) == 0) throw ContractError("embed: expected a nonempty N×C×H×W batch");
  const std::size_t n = images.dim(0), chunk = cfg.eval_batch_size;
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < n; b += chunk) {
    Tape tape;
    Encoder& enc = (domain == Domain::Target && cfg.graph_encoder == GraphEncoder::PerDomain)
                       ? m.fdn.enc_t
                       : m.fdn.enc_s;
    LatentBatch z = encode(tape, enc, cfg.model, tape.constant(images.slice(b, std::min(n, b + chunk))));
    parts.push_back(graph_branch(tape, m.gcn, z, cfg).embedding.value());
  }
  return stack_rows(parts);
}

Tensor predict(ModelBundle& m, const TrainConfig& cfg, const Tensor& images, Domain domain) {
  Tensor emb = embed(m, cfg, images, domain);
  Tape tape;
  return softmax_rows(m.classifier(tape, tape.constant(emb)).value());
}

}  // namespace udagcn
