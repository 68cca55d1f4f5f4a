#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "udagcn/data.hpp"
#include "udagcn/trainer.hpp"
#include "udagcn/tsne.hpp"

namespace udagcn {

/// Everything one CLI invocation needs. Serialized as JSON with the
/// sections "data", "model", "train" and "tsne"; unknown keys are rejected.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  /// When empty the synthetic benchmark is generated in memory.
  std::filesystem::path source_dir, target_dir;
  SyntheticSpec data;
  TrainConfig train;
  TsneConfig tsne;
  /// Cap on embedded points per domain for `embed`.
  std::size_t tsne_points_per_domain = 80;

  /// Propagates the seed into every seeded component.
  void apply_seed(std::uint64_t s);
  void validate() const;
  /// out_dir is omitted when `with_out_dir` is false, so reports written to
  /// different directories stay byte-identical.
  std::string to_json(bool with_out_dir = true) const;
};

struct LambdaPreset {
  const char* name;
  double lambda1, lambda2, lambda_adv;
};

/// The named presets; desk additionally sets the desk-scale schedule.
std::span<const LambdaPreset> lambda_presets();

/// Defaults for a preset name; unknown names are a ConfigError naming "preset".
RunConfig preset_config(const std::string& name);

/// Parses a JSON document over the preset it names (or `preset_override`,
/// which wins). A λ given explicitly that differs from the value a
/// published preset binds is a ConfigError.
RunConfig parse_run_config(const std::string& json_text, const std::optional<std::string>& preset_override = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::optional<std::string>& preset_override = {});

}  // namespace udagcn
