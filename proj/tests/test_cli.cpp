#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "udagcn/cli.hpp"
#include "udagcn/config.hpp"

using namespace udagcn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "udagcn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string config_error(const std::string& json) {
  try {
    parse_run_config(json);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// Small enough that a full train + eval + embed runs in about a second.
std::string tiny_config(const fs::path& out) {
  return R"({"preset": "desk", "seed": 0, "out_dir": ")" + out.generic_string() + R"(",
  "data": {"n_per_class": 6, "image_size": 8, "group_size": 1},
  "model": {"widths": [4, 3, 3], "d_tex": 4, "disc_widths": [3, 3, 4]},
  "train": {"epochs": 1, "batch_size": 4, "eval_batch_size": 4, "gcn_hidden": 5, "gcn_out": 3},
  "tsne": {"iterations": 60, "perplexity": 3, "points_per_domain": 5}})";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("udagcn_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Presets, BindPublishedLambdas) {
  const RunConfig cam = preset_config("camelyon");
  EXPECT_EQ(cam.train.lambda1, 0.9);
  EXPECT_EQ(cam.train.lambda2, 1.2);
  EXPECT_EQ(cam.train.lambda_adv, 1.3);
  const RunConfig chx = preset_config("chexpert");
  EXPECT_EQ(chx.train.lambda1, 0.95);
  EXPECT_EQ(chx.train.lambda2, 1.1);
  EXPECT_EQ(chx.train.lambda_adv, 1.3);
  const RunConfig nih = preset_config("nih");
  EXPECT_EQ(nih.train.lambda1, 0.9);
  EXPECT_EQ(nih.train.lambda2, 1.2);
  EXPECT_EQ(nih.train.lambda_adv, 1.2);
  EXPECT_EQ(lambda_presets().size(), 4u);
}

TEST(Presets, DeskIsValidAndUnknownNamesPreset) {
  EXPECT_NO_THROW(preset_config("desk").validate());
  try {
    preset_config("imagenet");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("preset"), std::string::npos);
  }
}

TEST(ConfigParse, UnknownKeysAreRejectedByName) {
  EXPECT_NE(config_error(R"({"train": {"lamda1": 0.9}})").find("train.lamda1"), std::string::npos);
  EXPECT_NE(config_error(R"({"colour": 1})").find("colour"), std::string::npos);
  EXPECT_NE(config_error(R"({"tsne": {"perplexty": 5}})").find("tsne.perplexty"), std::string::npos);
}

TEST(ConfigParse, LambdaConflictsWithPublishedPresetAreErrors) {
  EXPECT_NE(config_error(R"({"preset": "camelyon", "train": {"lambda1": 0.5}})").find("train.lambda1"),
            std::string::npos);
  EXPECT_EQ(config_error(R"({"preset": "camelyon", "train": {"lambda1": 0.9}})"), "");
  EXPECT_EQ(config_error(R"({"preset": "desk", "train": {"lambda1": 0.5}})"), "");
  // The override replaces the document's preset before the check.
  EXPECT_THROW(parse_run_config(R"({"preset": "desk", "train": {"lambda_adv": 2.0}})", "nih"), ConfigError);
}

TEST(ConfigParse, TypesValuesAndSyntax) {
  EXPECT_NE(config_error(R"({"train": {"epochs": "ten"}})").find("train.epochs"), std::string::npos);
  EXPECT_NE(config_error(R"({"train": {"score_anchor": "median"}})").find("train.score_anchor"), std::string::npos);
  EXPECT_NE(config_error(R"({"train": {"epochs": -1}})").find("train.epochs"), std::string::npos);
  EXPECT_NE(config_error("{not json").find("JSON"), std::string::npos);
  EXPECT_NE(config_error(R"({"source_dir": "a"})"), "");
  EXPECT_NE(config_error(R"({"train": {"batch_size": 1}})"), "");
}

TEST(ConfigParse, JsonRoundTripIsStable) {
  RunConfig c = parse_run_config(R"({"preset": "chexpert", "seed": 3, "train": {"graph_self_loop": 2.5}})");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.train.seed, 3u);
  EXPECT_EQ(c.data.seed, 3u);
  EXPECT_EQ(c.train.graph_self_loop, 2.5);
  const std::string once = c.to_json();
  EXPECT_EQ(parse_run_config(once).to_json(), once);
}

TEST(Cli, HelpListsEveryFlag) {
  const Outcome top = run_cli({"--help"});
  EXPECT_EQ(top.code, kExitOk);
  for (const char* sub : {"gen-data", "train", "eval", "gradcheck", "embed", "ablate"})
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
  const Outcome train = run_cli({"train", "--help"});
  EXPECT_EQ(train.code, kExitOk);
  for (const char* flag : {"--config", "--seed", "--out", "--preset", "--dump-graphs"})
    EXPECT_NE(train.out.find(flag), std::string::npos) << flag;
  const Outcome eval = run_cli({"eval", "--help"});
  for (const char* flag : {"--checkpoint", "--data"}) EXPECT_NE(eval.out.find(flag), std::string::npos) << flag;
}

TEST(Cli, ConfigProblemsExitTwo) {
  const Outcome missing = run_cli({"train", "--config", "missing.json"});
  EXPECT_EQ(missing.code, kExitConfig);
  EXPECT_NE(missing.err.find("missing.json"), std::string::npos);
  EXPECT_TRUE(missing.out.empty());
  EXPECT_EQ(run_cli({}).code, kExitConfig);
  EXPECT_EQ(run_cli({"fly"}).code, kExitConfig);
  EXPECT_EQ(run_cli({"train", "--preset", "mnist"}).code, kExitConfig);
  EXPECT_EQ(run_cli({"train", "--seed", "abc"}).code, kExitConfig);
  EXPECT_EQ(run_cli({"eval"}).code, kExitConfig);
}

TEST(Cli, RuntimeFailureExitsOne) {
  TempDir d("runtime");
  const fs::path cfg = d.path / "c.json";
  std::ofstream(cfg) << tiny_config(d.path / "out");
  const Outcome o = run_cli({"eval", "--config", cfg.string(), "--checkpoint", (d.path / "none.gcan").string()});
  EXPECT_EQ(o.code, kExitRuntime);
  EXPECT_FALSE(o.err.empty());
}

TEST(Cli, GradcheckPassesOnDeskPreset) {
  const Outcome o = run_cli({"gradcheck", "--preset", "desk"});
  EXPECT_EQ(o.code, kExitOk) << o.out;
  EXPECT_NE(o.out.find("all gradient checks passed"), std::string::npos);
}

TEST(Cli, GenDataWritesBothTrees) {
  TempDir d("gendata");
  const fs::path cfg = d.path / "c.json";
  std::ofstream(cfg) << tiny_config(d.path / "out");
  ASSERT_EQ(run_cli({"gen-data", "--config", cfg.string()}).code, kExitOk);
  for (const char* side : {"source", "target"}) {
    EXPECT_TRUE(fs::exists(d.path / "out" / side / "labels.csv")) << side;
    EXPECT_TRUE(fs::exists(d.path / "out" / side / "img_00000.pgm")) << side;
  }
}

TEST(Cli, TrainEvalEmbedAblateEndToEnd) {
  TempDir d("e2e");
  const fs::path cfg = d.path / "c.json";
  std::ofstream(cfg) << tiny_config(d.path / "run");
  const fs::path run = d.path / "run";
  const Outcome t = run_cli({"train", "--config", cfg.string(), "--dump-graphs"});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  for (const char* f : {"model.gcan", "model.fdn", "history.csv", "metrics.json", "metrics_source.json", "config.json"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_TRUE(fs::exists(run / "graphs"));
  const std::string history = slurp(run / "history.csv");
  EXPECT_EQ(history.rfind("epoch,step,rec,", 0), 0u);

  const Outcome e = run_cli({"eval", "--config", cfg.string(), "--checkpoint", (run / "model.gcan").string(), "--out",
                             (d.path / "eval").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  // Evaluating the saved model on the same split reproduces the training-time report.
  EXPECT_EQ(slurp(d.path / "eval" / "metrics.json"), slurp(run / "metrics.json"));

  const Outcome m = run_cli({"embed", "--config", cfg.string(), "--checkpoint", (run / "model.gcan").string(),
                             "--out", (d.path / "emb").string()});
  ASSERT_EQ(m.code, kExitOk) << m.err;
  EXPECT_TRUE(fs::exists(d.path / "emb" / "embedding.svg"));
  EXPECT_TRUE(fs::exists(d.path / "emb" / "embedding.csv"));

  const Outcome a = run_cli({"ablate", "--config", cfg.string(), "--out", (d.path / "abl").string()});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  const std::string table = slurp(d.path / "abl" / "ablation.csv");
  for (const char* row : {"\nfull,", "\nno-str,", "\nno-swap,"}) EXPECT_NE(table.find(row), std::string::npos) << row;
}

TEST(Cli, TrainIsByteReproducible) {
  TempDir d("repro");
  const fs::path cfg = d.path / "c.json";
  std::ofstream(cfg) << tiny_config(d.path / "a");
  ASSERT_EQ(run_cli({"train", "--config", cfg.string()}).code, kExitOk);
  ASSERT_EQ(run_cli({"train", "--config", cfg.string(), "--out", (d.path / "b").string()}).code, kExitOk);
  for (const char* f : {"history.csv", "metrics.json", "model.gcan"})
    EXPECT_EQ(slurp(d.path / "a" / f), slurp(d.path / "b" / f)) << f;
}
