#pragma once

// Flat binary checkpoints:
//   magic ("FDN1" or "GCAN1"), u32 tensor count,
//   per tensor: u32 name length, name bytes, u32 rank, rank × u64 extents,
//               size × f64 values.
// All integers and floats little-endian.

#include <filesystem>
#include <string_view>

#include "udagcn/autodiff.hpp"
#include "udagcn/disentangle.hpp"
#include "udagcn/trainer.hpp"

namespace udagcn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kFdnMagic = "FDN1";
inline constexpr std::string_view kGcanMagic = "GCAN1";

void save_parameters(const ParamRefs& params, std::string_view magic, const std::filesystem::path& path);
/// Every parameter must be present under its name with its exact shape;
/// extra or missing tensors are errors.
void load_parameters(const ParamRefs& params, std::string_view magic, const std::filesystem::path& path);

void save_fdn(FdnParams& fdn, const std::filesystem::path& path);
void load_fdn(FdnParams& fdn, const std::filesystem::path& path);
void save_bundle(ModelBundle& bundle, const std::filesystem::path& path);
void load_bundle(ModelBundle& bundle, const std::filesystem::path& path);

}  // namespace udagcn
