#include "udagcn/config.hpp"

#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace udagcn {

using json = nlohmann::ordered_json;

namespace {

constexpr std::array<LambdaPreset, 4> kPresets{{
    {"camelyon", 0.9, 1.2, 1.3},
    {"chexpert", 0.95, 1.1, 1.3},
    {"nih", 0.9, 1.2, 1.2},
    {"desk", 0.1, 1.2, 1.3},
}};

const LambdaPreset* find_preset(const std::string& name) {
  for (const auto& p : kPresets)
    if (name == p.name) return &p;
  return nullptr;
}

const char* rec_norm_name(RecNorm n) { return n == RecNorm::L1 ? "l1" : "l2"; }
const char* encoder_name(GraphEncoder g) { return g == GraphEncoder::Source ? "source" : "per_domain"; }
const char* anchor_name(ScoreAnchor a) { return a == ScoreAnchor::BatchMean ? "batch_mean" : "principal"; }
const char* adv_name(AdvGenerator a) { return a == AdvGenerator::Confusion ? "confusion" : "flipped_labels"; }

// Reads typed values out of one JSON object, recording which keys were seen.
class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(label("") + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(label(key) + ": wrong type");
    }
  }

  template <class E>
  void get_enum(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, s);
    for (const auto& [n, v] : names)
      if (s == n) {
        out = v;
        return;
      }
    throw ConfigError(label(key) + ": unknown value '" + s + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  void mark(const char* key) { seen_.insert(key); }

  void reject_unknown() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + label(k) + "'");
  }

  std::string label(const std::string& key) const {
    if (prefix_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void read_size(Section& s, const char* key, std::size_t& out) {
  long long v = static_cast<long long>(out);
  s.get(key, v);
  if (v < 0) throw ConfigError(s.label(key) + " must be nonnegative");
  out = static_cast<std::size_t>(v);
}

}  // namespace

std::span<const LambdaPreset> lambda_presets() { return kPresets; }

RunConfig preset_config(const std::string& name) {
  const LambdaPreset* p = find_preset(name);
  if (!p) throw ConfigError("preset: unknown preset '" + name + "' (expected camelyon, chexpert, nih or desk)");
  RunConfig c;
  c.preset = name;
  c.train.lambda1 = p->lambda1;
  c.train.lambda2 = p->lambda2;
  c.train.lambda_adv = p->lambda_adv;
  if (name == "desk") {
    c.train.epochs = 16;
    c.train.batch_size = 8;
    c.train.eval_batch_size = 8;
    c.train.graph_self_loop = 8.0;
  }
  c.apply_seed(c.seed);
  return c;
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  train.seed = s;
  tsne.seed = s;
}

void RunConfig::validate() const {
  data.validate();
  train.validate();
  if (data.image_size != train.model.image_size)
    throw ConfigError("model.image_size (" + std::to_string(train.model.image_size) +
                      ") must equal data.image_size (" + std::to_string(data.image_size) + ")");
  if (source_dir.empty() && data.n_classes != train.n_classes)
    throw ConfigError("train.n_classes must equal data.n_classes for the synthetic benchmark");
  if (source_dir.empty() != target_dir.empty())
    throw ConfigError("source_dir and target_dir must be given together");
  if (!(tsne.perplexity > 0)) throw ConfigError("tsne.perplexity must be positive");
  if (tsne.iterations == 0) throw ConfigError("tsne.iterations must be positive");
}

RunConfig parse_run_config(const std::string& text, const std::optional<std::string>& preset_override) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section top(j, "");
  std::string preset = "desk";
  top.get("preset", preset);
  if (preset_override) preset = *preset_override;
  RunConfig c = preset_config(preset);
  const LambdaPreset& bound = *find_preset(preset);

  std::uint64_t seed = c.seed;
  top.get("seed", seed);
  std::string path;
  if (top.has("out_dir")) {
    top.get("out_dir", path);
    c.out_dir = path;
  }
  top.mark("out_dir");
  if (top.has("source_dir")) {
    top.get("source_dir", path);
    c.source_dir = path;
  }
  top.mark("source_dir");
  if (top.has("target_dir")) {
    top.get("target_dir", path);
    c.target_dir = path;
  }
  top.mark("target_dir");

  if (top.has("data")) {
    Section s(top.at("data"), "data");
    read_size(s, "n_per_class", c.data.n_per_class);
    read_size(s, "n_classes", c.data.n_classes);
    read_size(s, "image_size", c.data.image_size);
    read_size(s, "group_size", c.data.group_size);
    s.get("source_noise", c.data.source_noise);
    s.get("target_speckle", c.data.target_speckle);
    s.get("bias_amplitude", c.data.bias_amplitude);
    s.reject_unknown();
  }
  top.mark("data");

  FdnConfig& m = c.train.model;
  m.image_size = c.data.image_size;
  if (top.has("model")) {
    Section s(top.at("model"), "model");
    read_size(s, "channels", m.channels);
    read_size(s, "image_size", m.image_size);
    s.get("widths", m.widths);
    read_size(s, "d_tex", m.d_tex);
    read_size(s, "str_channels", m.str_channels);
    s.get("disc_widths", m.disc_widths);
    s.reject_unknown();
  }
  top.mark("model");

  if (top.has("train")) {
    TrainConfig& t = c.train;
    Section s(top.at("train"), "train");
    for (auto [key, field, published] : {std::tuple{"lambda1", &t.lambda1, bound.lambda1},
                                         std::tuple{"lambda2", &t.lambda2, bound.lambda2},
                                         std::tuple{"lambda_adv", &t.lambda_adv, bound.lambda_adv}}) {
      s.get(key, *field);
      if (s.has(key) && preset != "desk" && *field != published)
        throw ConfigError(s.label(key) + " conflicts with preset '" + preset + "' (published value " +
                          json(published).dump() + ")");
    }
    s.get("learning_rate", t.learning_rate);
    read_size(s, "epochs", t.epochs);
    read_size(s, "batch_size", t.batch_size);
    read_size(s, "eval_batch_size", t.eval_batch_size);
    read_size(s, "gcn_hidden", t.gcn_hidden);
    read_size(s, "gcn_out", t.gcn_out);
    read_size(s, "gcn_layers", t.gcn_layers);
    read_size(s, "domain_hidden", t.domain_hidden);
    read_size(s, "n_classes", t.n_classes);
    s.get("disable_str", t.disable_str);
    s.get("disable_swap", t.disable_swap);
    s.get("domain_on_latent", t.domain_on_latent);
    s.get("graph_self_loop", t.graph_self_loop);
    s.get_enum("rec_norm", t.rec_norm, {{"l1", RecNorm::L1}, {"l2", RecNorm::L2}});
    s.get_enum("graph_encoder", t.graph_encoder,
               {{"source", GraphEncoder::Source}, {"per_domain", GraphEncoder::PerDomain}});
    s.get_enum("score_anchor", t.score_anchor,
               {{"batch_mean", ScoreAnchor::BatchMean}, {"principal", ScoreAnchor::Principal}});
    s.get_enum("adv_generator", t.adv_generator,
               {{"confusion", AdvGenerator::Confusion}, {"flipped_labels", AdvGenerator::FlippedLabels}});
    s.reject_unknown();
  }
  top.mark("train");

  if (top.has("tsne")) {
    Section s(top.at("tsne"), "tsne");
    s.get("perplexity", c.tsne.perplexity);
    read_size(s, "iterations", c.tsne.iterations);
    s.get("learning_rate", c.tsne.learning_rate);
    read_size(s, "points_per_domain", c.tsne_points_per_domain);
    s.reject_unknown();
  }
  top.mark("tsne");
  top.reject_unknown();

  c.apply_seed(seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::optional<std::string>& preset_override) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), preset_override);
}

std::string RunConfig::to_json(bool with_out_dir) const {
  const TrainConfig& t = train;
  const FdnConfig& m = t.model;
  json j;
  j["preset"] = preset;
  j["seed"] = seed;
  if (with_out_dir) j["out_dir"] = out_dir.generic_string();
  if (!source_dir.empty()) j["source_dir"] = source_dir.generic_string();
  if (!target_dir.empty()) j["target_dir"] = target_dir.generic_string();
  j["data"] = {{"n_per_class", data.n_per_class},       {"n_classes", data.n_classes},
               {"image_size", data.image_size},         {"group_size", data.group_size},
               {"source_noise", data.source_noise},     {"target_speckle", data.target_speckle},
               {"bias_amplitude", data.bias_amplitude}};
  j["model"] = {{"channels", m.channels}, {"image_size", m.image_size},     {"widths", m.widths},
                {"d_tex", m.d_tex},       {"str_channels", m.str_channels}, {"disc_widths", m.disc_widths}};
  j["train"] = {{"lambda1", t.lambda1},
                {"lambda2", t.lambda2},
                {"lambda_adv", t.lambda_adv},
                {"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"eval_batch_size", t.eval_batch_size},
                {"gcn_hidden", t.gcn_hidden},
                {"gcn_out", t.gcn_out},
                {"gcn_layers", t.gcn_layers},
                {"domain_hidden", t.domain_hidden},
                {"n_classes", t.n_classes},
                {"disable_str", t.disable_str},
                {"disable_swap", t.disable_swap},
                {"domain_on_latent", t.domain_on_latent},
                {"rec_norm", rec_norm_name(t.rec_norm)},
                {"graph_encoder", encoder_name(t.graph_encoder)},
                {"score_anchor", anchor_name(t.score_anchor)},
                {"graph_self_loop", t.graph_self_loop},
                {"adv_generator", adv_name(t.adv_generator)}};
  j["tsne"] = {{"perplexity", tsne.perplexity},
               {"iterations", tsne.iterations},
               {"learning_rate", tsne.learning_rate},
               {"points_per_domain", tsne_points_per_domain}};
  return j.dump(2);
}

}  // namespace udagcn
