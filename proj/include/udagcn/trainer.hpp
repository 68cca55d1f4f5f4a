#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "udagcn/data.hpp"
#include "udagcn/disentangle.hpp"
#include "udagcn/graph.hpp"
#include "udagcn/nn.hpp"

namespace udagcn {

/// Which encoder produces the graph-branch codes of target images.
enum class GraphEncoder {
  Source,     // E_S for both domains (the encoder trained to read swapped images)
  PerDomain,  // E_S for source images, E_T for target images
};

/// Generator side of the domain game.
enum class AdvGenerator {
  Confusion,      // both domains pushed toward D = 1/2
  FlippedLabels,  // each domain pushed toward the other's label
};

struct TrainConfig {
  double lambda1 = 0.9;
  double lambda2 = 1.2;
  double lambda_adv = 1.3;
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::size_t eval_batch_size = 16;
  FdnConfig model;
  std::size_t gcn_hidden = 32;
  std::size_t gcn_out = 16;
  std::size_t gcn_layers = 2;
  std::size_t domain_hidden = 16;
  std::size_t n_classes = 4;
  std::uint64_t seed = 0;
  bool disable_str = false;
  bool disable_swap = false;
  RecNorm rec_norm = RecNorm::L1;
  /// Feed [GCN embedding, node features] to the domain classifier instead of
  /// the embedding alone.
  bool domain_on_latent = false;
  GraphEncoder graph_encoder = GraphEncoder::Source;
  ScoreAnchor score_anchor = ScoreAnchor::Principal;
  /// Diagonal of Â. 1 is the plain renormalized graph; larger values keep
  /// more of each node's own features through propagation.
  double graph_self_loop = 1.0;
  AdvGenerator adv_generator = AdvGenerator::Confusion;

  void validate() const;
  bool swap_active() const { return !disable_swap && lambda1 > 0.0; }
  bool str_active() const { return !disable_str && lambda2 > 0.0; }
  bool adv_active() const { return lambda_adv > 0.0; }
};

struct LossBreakdown {
  double rec = 0, swap_g = 0, swap_d = 0, str = 0, cls = 0, adv_g = 0, adv_d = 0;
  double disent_total = 0, total = 0;
  double lambda1 = 0, lambda2 = 0, lambda_adv = 0;

  bool all_finite() const;
};

/// Two-layer perceptron with a sigmoid output: probability that an
/// embedding comes from the target domain.
struct DomainClassifier {
  Linear hidden, out;

  DomainClassifier() = default;
  DomainClassifier(std::size_t in, std::size_t hidden_dim, Rng& rng);
  Var logits(Tape& tape, const Var& x);
  Var operator()(Tape& tape, const Var& x) { return sigmoid(logits(tape, x)); }
  ParamRefs parameters() { return join({hidden.parameters(), out.parameters()}); }
};

struct ModelBundle {
  FdnParams fdn;
  GcnParams gcn;
  Linear classifier;
  DomainClassifier domain;

  ModelBundle() = default;
  ModelBundle(const TrainConfig& cfg, Rng& rng);
  ParamRefs parameters();
};

/// Mean softmax cross-entropy of the linear head over source embeddings.
Var classification_loss(Tape& tape, Linear& head, const Var& emb_s, std::span<const int> labels);
/// D labels target features 1 and source features 0.
Var domain_disc_loss(Tape& tape, DomainClassifier& d, const Var& emb_s, const Var& emb_t);
/// Generator side of the domain game; see AdvGenerator.
Var domain_gen_loss(Tape& tape, DomainClassifier& d, const Var& emb_s, const Var& emb_t,
                    AdvGenerator kind = AdvGenerator::Confusion);
Var total_objective(const Var& cls, const Var& adv_g, double lambda_adv);

enum class StepPhase { SwapDiscriminator, Disentangler, DomainClassifier, Task };

/// Called after each sub-update of train_step.
using PhaseObserver = std::function<void(StepPhase, const ModelBundle&)>;

/// One alternating update: swap discriminator, disentangler, domain
/// classifier, then GCN + classifier head + encoders. Zero-weight and
/// disabled terms are skipped and report 0.
LossBreakdown train_step(ModelBundle& bundle, const Tensor& batch_s, std::span<const int> labels_s,
                         const Tensor& batch_t, const TrainConfig& cfg,
                         const PhaseObserver& observer = {});

struct EpochMetrics {
  std::size_t epoch = 0;
  std::optional<double> source_val_accuracy;
  std::optional<double> target_val_accuracy;
};

struct TrainHistory {
  std::vector<LossBreakdown> steps;
  std::vector<EpochMetrics> epochs;
  std::size_t steps_per_epoch = 0;
};

struct FitOptions {
  const DomainDataset* source_val = nullptr;
  const DomainDataset* target_val = nullptr;
  /// When set, the first batch graphs of every epoch are dumped here as CSV.
  std::optional<std::filesystem::path> graph_dump_dir;
  std::function<void(const EpochMetrics&, const LossBreakdown&)> on_epoch;
};

struct FitResult {
  ModelBundle bundle;
  TrainHistory history;
};

FitResult fit(const TrainConfig& cfg, const DomainDataset& source, const DomainDataset& target,
              const FitOptions& options = {});

/// GCN embeddings of images, graphs built over consecutive chunks of
/// eval_batch_size images (the last chunk may be smaller). The domain only
/// matters under GraphEncoder::PerDomain.
Tensor embed(ModelBundle& bundle, const TrainConfig& cfg, const Tensor& images,
             Domain domain = Domain::Source);
/// Class probabilities per image (N × n_classes).
Tensor predict(ModelBundle& bundle, const TrainConfig& cfg, const Tensor& images,
               Domain domain = Domain::Source);

}  // namespace udagcn
