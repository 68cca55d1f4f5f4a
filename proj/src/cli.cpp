#include "udagcn/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "udagcn/checkpoint.hpp"
#include "udagcn/config.hpp"
#include "udagcn/gradcheck_suite.hpp"
#include "udagcn/metrics.hpp"
#include "udagcn/scatter.hpp"
#include "udagcn/tsne.hpp"

namespace udagcn {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App& app, CommonFlags& f) {
  app.add_option("--config", f.config, "JSON run config");
  app.add_option("--preset", f.preset, "camelyon, chexpert, nih or desk (overrides the config's preset)");
  app.add_option("--seed", f.seed, "Seed for data, splits and training (overrides the config)");
  app.add_option("--out", f.out, "Output directory (overrides the config)");
}

RunConfig resolve(const CommonFlags& f) {
  const std::optional<std::string> preset = f.preset.empty() ? std::nullopt : std::optional(f.preset);
  RunConfig c = f.config.empty() ? preset_config(preset.value_or("desk")) : load_run_config(f.config, preset);
  if (f.seed) c.apply_seed(*f.seed);
  if (!f.out.empty()) c.out_dir = f.out;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

struct Splits {
  DatasetSplit source, target;
};

Splits load_splits(const RunConfig& c) {
  DomainDataset src, tgt;
  if (c.source_dir.empty()) {
    std::tie(src, tgt) = gen_synthetic(c.data);
  } else {
    src = load_dataset(c.source_dir, Domain::Source);
    tgt = load_dataset(c.target_dir, Domain::Target);
  }
  return {split_dataset(src, c.seed), split_dataset(tgt, c.seed)};
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_history(const TrainHistory& h, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,step,rec,swap_g,swap_d,str,cls,adv_g,adv_d,disent_total,total,lambda1,lambda2,lambda_adv,"
        "source_val_accuracy,target_val_accuracy\n";
  for (std::size_t i = 0; i < h.steps.size(); ++i) {
    const LossBreakdown& l = h.steps[i];
    const std::size_t epoch = i / h.steps_per_epoch, step = i % h.steps_per_epoch;
    os << epoch << ',' << step;
    for (double v : {l.rec, l.swap_g, l.swap_d, l.str, l.cls, l.adv_g, l.adv_d, l.disent_total, l.total, l.lambda1,
                     l.lambda2, l.lambda_adv})
      os << ',' << g17(v);
    // Validation accuracies sit on the last step of their epoch.
    const bool last = step + 1 == h.steps_per_epoch && epoch < h.epochs.size();
    using Field = std::optional<double> EpochMetrics::*;
    for (Field acc : {&EpochMetrics::source_val_accuracy, &EpochMetrics::target_val_accuracy}) {
      os << ',';
      if (last && (h.epochs[epoch].*acc)) os << g17(*(h.epochs[epoch].*acc));
    }
    os << '\n';
  }
}

MetricsReport report_on(ModelBundle& m, const RunConfig& c, const DomainDataset& ds) {
  if (!ds.labeled()) throw ContractError("evaluation needs a labeled dataset");
  return evaluate(predict(m, c.train, ds.images, ds.domain), ds.labels, c.to_json(false));
}

struct TrainOutcome {
  FitResult fit;
  MetricsReport target_test, source_test;
};

TrainOutcome train_and_evaluate(const RunConfig& c, const Splits& s, std::optional<fs::path> graph_dump) {
  FitOptions opts;
  opts.source_val = &s.source.val;
  opts.target_val = &s.target.val;
  opts.graph_dump_dir = std::move(graph_dump);
  TrainOutcome o{fit(c.train, s.source.train, s.target.train, opts), {}, {}};
  o.target_test = report_on(o.fit.bundle, c, s.target.test);
  o.source_test = report_on(o.fit.bundle, c, s.source.test);
  return o;
}

int cmd_gen_data(const RunConfig& c, std::ostream& out) {
  auto [src, tgt] = gen_synthetic(c.data);
  save_dataset(src, c.out_dir / "source");
  save_dataset(tgt, c.out_dir / "target");
  out << "wrote " << src.size() << " source and " << tgt.size() << " target images under " << c.out_dir.string()
      << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c, bool dump_graphs, std::ostream& out) {
  fs::create_directories(c.out_dir);
  const Splits s = load_splits(c);
  TrainOutcome o = train_and_evaluate(c, s, dump_graphs ? std::optional(c.out_dir / "graphs") : std::nullopt);
  save_bundle(o.fit.bundle, c.out_dir / "model.gcan");
  save_fdn(o.fit.bundle.fdn, c.out_dir / "model.fdn");
  write_history(o.fit.history, c.out_dir / "history.csv");
  write_text(c.out_dir / "metrics.json", o.target_test.to_json());
  write_text(c.out_dir / "metrics_source.json", o.source_test.to_json());
  write_text(c.out_dir / "config.json", c.to_json() + "\n");
  out << "target test accuracy " << o.target_test.accuracy << ", source test accuracy " << o.source_test.accuracy
      << "\n";
  return kExitOk;
}

ModelBundle load_model(const RunConfig& c, const fs::path& checkpoint) {
  Rng rng(c.seed);
  ModelBundle m(c.train, rng);
  load_bundle(m, checkpoint);
  return m;
}

int cmd_eval(const RunConfig& c, const fs::path& checkpoint, const std::string& data_dir, std::ostream& out) {
  ModelBundle m = load_model(c, checkpoint);
  DomainDataset ds = data_dir.empty() ? load_splits(c).target.test : load_dataset(data_dir);
  const MetricsReport r = report_on(m, c, ds);
  fs::create_directories(c.out_dir);
  write_text(c.out_dir / "metrics.json", r.to_json());
  out << "accuracy " << r.accuracy << " on " << r.n_eval << " " << domain_name(ds.domain) << " images\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  bool ok = true;
  for (const auto& k : run_gradcheck_suite(c.seed)) {
    char line[224];
    std::snprintf(line, sizeof line, "%-32s max_rel_error=%.3e coords=%zu kinks=%zu below_resolution=%zu %s\n",
                  k.name.c_str(), k.result.max_rel_error, k.result.coords_checked, k.result.kinks,
                  k.result.below_resolution, k.passed() ? "ok" : "FAIL");
    out << line;
    ok = ok && k.passed();
  }
  out << (ok ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return ok ? kExitOk : kExitRuntime;
}

int cmd_embed(const RunConfig& c, const fs::path& checkpoint, std::ostream& out) {
  ModelBundle m = load_model(c, checkpoint);
  const Splits s = load_splits(c);
  EmbeddingPlot plot;
  std::vector<Tensor> feats;
  for (const DomainDataset* ds : {&s.source.test, &s.target.test}) {
    const std::size_t n = std::min(ds->size(), c.tsne_points_per_domain);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const DomainDataset sub = ds->subset(idx);
    feats.push_back(embed(m, c.train, sub.images, sub.domain));
    plot.labels.insert(plot.labels.end(), sub.labels.begin(), sub.labels.end());
    plot.domains.insert(plot.domains.end(), n, sub.domain);
  }
  const TsneResult t = tsne_embed(stack_rows(feats), c.tsne);
  plot.coords = t.coords;
  fs::create_directories(c.out_dir);
  export_scatter(plot, c.out_dir / "embedding.svg");
  const SeparationStats sep = separation(plot);
  out << "t-SNE KL " << t.initial_kl << " -> " << t.final_kl << "; intra-class cross-domain distance "
      << sep.intra_class_cross_domain << ", inter-class distance " << sep.inter_class << "\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& base, std::ostream& out) {
  fs::create_directories(base.out_dir);
  const Splits s = load_splits(base);
  struct Row {
    const char* name;
    bool no_str, no_swap;
  };
  // Removing the structure loss, then further removing the swap loss.
  const Row rows[] = {{"full", false, false}, {"no-str", true, false}, {"no-swap", true, true}};
  std::string csv = "variant,target_accuracy,target_macro_auc,source_accuracy\n";
  std::string md = "| variant | target accuracy | target macro AUC | source accuracy |\n|---|---|---|---|\n";
  for (const Row& r : rows) {
    RunConfig c = base;
    c.train.disable_str = r.no_str;
    c.train.disable_swap = r.no_swap;
    const TrainOutcome o = train_and_evaluate(c, s, std::nullopt);
    const std::string auc = o.target_test.macro_auc ? g17(*o.target_test.macro_auc) : "";
    csv += std::string(r.name) + "," + g17(o.target_test.accuracy) + "," + auc + "," + g17(o.source_test.accuracy) + "\n";
    char line[160];
    std::snprintf(line, sizeof line, "| %s | %.4f | %s | %.4f |\n", r.name, o.target_test.accuracy,
                  o.target_test.macro_auc ? std::to_string(*o.target_test.macro_auc).c_str() : "n/a",
                  o.source_test.accuracy);
    md += line;
  }
  write_text(base.out_dir / "ablation.csv", csv);
  write_text(base.out_dir / "ablation.md", md);
  out << md;
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain adaptation with feature disentanglement and adversarial graph networks"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string checkpoint, data_dir;
  bool dump_graphs = false;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic source/ and target/ PGM trees");
  auto* train = app.add_subcommand("train", "Train and write checkpoints, history.csv and metrics.json");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write metrics.json");
  auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  auto* emb = app.add_subcommand("embed", "t-SNE scatter (SVG + CSV) of a checkpoint's embeddings");
  auto* abl = app.add_subcommand("ablate", "Train full, no-str and no-swap variants and tabulate them");
  for (auto* sub : {gen, train, eval, grad, emb, abl}) add_common(*sub, flags);
  train->add_flag("--dump-graphs", dump_graphs, "Write each epoch's first-batch adjacency CSVs under <out>/graphs");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint (.gcan)")->required();
  eval->add_option("--data", data_dir, "Labeled dataset directory (default: the target test split)");
  emb->add_option("--checkpoint", checkpoint, "Model checkpoint (.gcan)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig c = resolve(flags);
    if (*gen) return cmd_gen_data(c, out);
    if (*train) return cmd_train(c, dump_graphs, out);
    if (*eval) return cmd_eval(c, checkpoint, data_dir, out);
    if (*grad) return cmd_gradcheck(c, out);
    if (*emb) return cmd_embed(c, checkpoint, out);
    if (*abl) return cmd_ablate(c, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace udagcn
