#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "udagcn/tensor.hpp"

namespace udagcn {

/// Raised when an on-disk dataset is malformed.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Domain { Source, Target };

const char* domain_name(Domain d);

struct DomainDataset {
  Tensor images;                   // N × C × H × W, pixels in [0, 1]
  std::vector<int> labels;         // empty when unlabeled
  Domain domain = Domain::Source;
  std::vector<std::string> groups; // patient-level split key per image
  std::vector<std::string> names;  // file names, when known

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  bool labeled() const { return !labels.empty(); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  DomainDataset subset(std::span<const std::size_t> indices) const;
  Tensor batch_images(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

/// Two-domain synthetic benchmark: shape class is the label, appearance is
/// the domain. Source = bright shapes with additive Gaussian noise; target =
/// inverted contrast with multiplicative speckle and a smooth bias field.
struct SyntheticSpec {
  std::size_t n_per_class = 100;
  std::size_t n_classes = 4;  // disk, square, cross, stripes
  std::size_t image_size = 32;
  std::size_t group_size = 2;
  double source_noise = 0.05;
  double target_speckle = 0.2;
  double bias_amplitude = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kSyntheticClasses = 4;
const char* synthetic_class_name(int label);

std::pair<DomainDataset, DomainDataset> gen_synthetic(const SyntheticSpec& spec);

/// Reads 8-bit binary PGM (P5) images listed in dir/labels.csv
/// ("filename,label,group"; the label column may be absent).
DomainDataset load_dataset(const std::filesystem::path& dir, std::optional<Domain> domain = {});
/// Writes the dataset in the layout load_dataset reads. Pixels are quantized
/// to 8 bits.
void save_dataset(const DomainDataset& ds, const std::filesystem::path& dir);

Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const Tensor& image, const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct DatasetSplit {
  DomainDataset train, val, test;
};

/// Shuffles groups (not images) and partitions them by the ratios, so no
/// group spans two splits.
DatasetSplit split_dataset(const DomainDataset& ds, std::uint64_t seed, SplitRatios ratios = {});

/// Seeded per-epoch shuffle of [0, n) cut into batches of w; the ragged
/// remainder is dropped.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t w, std::uint64_t seed,
                                              std::uint64_t epoch);

}  // namespace udagcn
