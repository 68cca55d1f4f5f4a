#include "udagcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace udagcn {

namespace fs = std::filesystem;

const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

const char* synthetic_class_name(int label) {
  static constexpr const char* names[] = {"disk", "square", "cross", "stripes"};
  return label >= 0 && label < 4 ? names[label] : "unknown";
}

DomainDataset DomainDataset::subset(std::span<const std::size_t> indices) const {
  DomainDataset out;
  out.domain = domain;
  out.images = batch_images(indices);
  for (auto i : indices) {
    if (labeled()) out.labels.push_back(labels[i]);
    if (!groups.empty()) out.groups.push_back(groups[i]);
    if (!names.empty()) out.names.push_back(names[i]);
  }
  return out;
}

Tensor DomainDataset::batch_images(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ContractError("empty index batch");
  const std::size_t stride = images.size() / size();
  Shape s = images.shape();
  s[0] = indices.size();
  Tensor out(s);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw IndexError("image index out of range");
    std::copy_n(images.data() + indices[k] * stride, stride, out.data() + k * stride);
  }
  return out;
}

std::vector<int> DomainDataset::batch_labels(std::span<const std::size_t> indices) const {
  if (!labeled()) throw ContractError("dataset has no labels");
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

// ---- synthetic benchmark ---------------------------------------------------

void SyntheticSpec::validate() const {
  if (n_per_class == 0) throw ConfigError("data.n_per_class must be positive");
  if (n_classes == 0 || n_classes > kSyntheticClasses)
    throw ConfigError("data.n_classes must be in [1, 4]");
  if (image_size < 8) throw ConfigError("data.image_size must be at least 8");
  if (group_size == 0) throw ConfigError("data.group_size must be positive");
  if (source_noise < 0 || target_speckle < 0 || bias_amplitude < 0)
    throw ConfigError("data noise levels must be nonnegative");
}

namespace {

// Binary shape mask; geometry drawn from rng.
std::vector<double> shape_mask(int cls, std::size_t size, std::mt19937_64& rng) {
  const double s = static_cast<double>(size);
  std::uniform_real_distribution<double> jitter(-s / 8.0, s / 8.0);
  std::uniform_real_distribution<double> radius(0.22 * s, 0.34 * s);
  const double cx = (s - 1.0) / 2.0 + jitter(rng);
  const double cy = (s - 1.0) / 2.0 + jitter(rng);
  const double r = radius(rng);
  std::vector<double> m(size * size, 0.0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      bool in = false;
      switch (cls) {
        case 0:  // disk
          in = dx * dx + dy * dy <= r * r;
          break;
        case 1:  // square
          in = std::fabs(dx) <= 0.8 * r && std::fabs(dy) <= 0.8 * r;
          break;
        case 2: {  // cross
          const double arm = r / 3.5;
          in = (std::fabs(dx) <= arm && std::fabs(dy) <= r) || (std::fabs(dy) <= arm && std::fabs(dx) <= r);
          break;
        }
        default: {  // horizontal stripes inside a square window
          const double period = std::max(3.0, r / 1.6);
          const double u = dy + r;
          in = std::fabs(dx) <= r && std::fabs(dy) <= r && std::fmod(u, period) < period / 2.0;
          break;
        }
      }
      m[y * size + x] = in ? 1.0 : 0.0;
    }
  }
  return m;
}

DomainDataset render_domain(const SyntheticSpec& spec, Domain domain) {
  std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(domain == Domain::Source ? 0 : 1)};
  std::mt19937_64 rng(seq);
  const std::size_t n = spec.n_per_class * spec.n_classes, px = spec.image_size * spec.image_size;

  std::vector<int> labels;
  for (std::size_t c = 0; c < spec.n_classes; ++c)
    labels.insert(labels.end(), spec.n_per_class, static_cast<int>(c));
  std::shuffle(labels.begin(), labels.end(), rng);

  DomainDataset ds;
  ds.domain = domain;
  ds.images = Tensor(Shape{n, 1, spec.image_size, spec.image_size});
  ds.labels = labels;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(spec.image_size);
  for (std::size_t i = 0; i < n; ++i) {
    const auto mask = shape_mask(labels[i], spec.image_size, rng);
    double* img = ds.images.data() + i * px;
    if (domain == Domain::Source) {
      const double bg = 0.05 + 0.1 * unit(rng), fg = 0.75 + 0.2 * unit(rng);
      for (std::size_t p = 0; p < px; ++p)
        img[p] = bg + (fg - bg) * mask[p] + spec.source_noise * gauss(rng);
    } else {
      const double bg = 0.75 + 0.15 * unit(rng), fg = 0.15 + 0.15 * unit(rng);
      const double theta = 2.0 * std::numbers::pi * unit(rng);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t y = 0; y < spec.image_size; ++y)
        for (std::size_t x = 0; x < spec.image_size; ++x) {
          const std::size_t p = y * spec.image_size + x;
          const double base = bg + (fg - bg) * mask[p];
          const double field = spec.bias_amplitude * 2.0 *
                               (ct * (static_cast<double>(x) / s - 0.5) + st * (static_cast<double>(y) / s - 0.5));
          img[p] = base * (1.0 + spec.target_speckle * gauss(rng)) + field;
        }
    }
    for (std::size_t p = 0; p < px; ++p) img[p] = std::clamp(img[p], 0.0, 1.0);
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
    ds.names.emplace_back(name);
    char group[32];
    std::snprintf(group, sizeof group, "%c%05zu", domain == Domain::Source ? 's' : 't',
                  i / spec.group_size);
    ds.groups.emplace_back(group);
  }
  return ds;
}

}  // namespace

std::pair<DomainDataset, DomainDataset> gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  return {render_domain(spec, Domain::Source), render_domain(spec, Domain::Target)};
}

// ---- PGM + CSV -------------------------------------------------------------

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& is, const fs::path& path) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw LoadError(path.string() + ": truncated PGM header");
  return tok;
}

std::size_t pgm_number(std::istream& is, const fs::path& path, const char* what) {
  const std::string tok = pgm_token(is, path);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size() || v == 0)
    throw LoadError(path.string() + ": malformed PGM " + what + " '" + tok + "'");
  return v;
}

}  // namespace

Tensor read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open " + path.string());
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (is.gcount() != 2 || magic[0] != 'P' || magic[1] != '5')
    throw LoadError(path.string() + ": not a binary PGM (P5) file");
  const std::size_t width = pgm_number(is, path, "width");
  const std::size_t height = pgm_number(is, path, "height");
  const std::size_t maxval = pgm_number(is, path, "maxval");
  if (maxval > 255) throw LoadError(path.string() + ": only 8-bit PGM (maxval <= 255) is supported");
  // pgm_token consumed the single whitespace byte after maxval.
  std::vector<unsigned char> bytes(width * height);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size())
    throw LoadError(path.string() + ": pixel data truncated");
  Tensor img(Shape{1, height, width});
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img[i] = static_cast<double>(bytes[i]) / static_cast<double>(maxval);
  return img;
}

void write_pgm(const Tensor& image, const fs::path& path) {
  if (image.rank() != 3 || image.dim(0) != 1)
    throw DimensionError("write_pgm: expected 1×H×W, got " + shape_str(image.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << image.dim(2) << ' ' << image.dim(1) << "\n255\n";
  for (double v : image.values()) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(b));
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

DomainDataset load_dataset(const fs::path& dir, std::optional<Domain> domain) {
  const fs::path csv = dir / "labels.csv";
  std::ifstream is(csv);
  if (!is) throw LoadError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(is, line)) throw LoadError(csv.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto fcol = col("filename"), lcol = col("label"), gcol = col("group");
  if (!fcol) throw LoadError(csv.string() + ": header must contain a 'filename' column");

  DomainDataset ds;
  ds.domain = domain.value_or(dir.filename() == "target" ? Domain::Target : Domain::Source);
  std::vector<Tensor> images;
  Shape first_shape;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw LoadError(csv.string() + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, header has " + std::to_string(header.size()));
    const std::string& fname = cells[*fcol];
    const fs::path file = dir / fname;
    if (!fs::exists(file))
      throw LoadError(csv.string() + ": row " + std::to_string(row) + " names '" + fname +
                      "' but no such file exists");
    Tensor img = read_pgm(file);
    if (!images.empty() && img.shape() != first_shape)
      throw LoadError(file.string() + ": image size " + shape_str(img.shape()) + " differs from " +
                      shape_str(first_shape));
    if (images.empty()) first_shape = img.shape();
    images.push_back(img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}));
    ds.names.push_back(fname);
    ds.groups.push_back(gcol ? cells[*gcol] : fname);
    if (lcol) {
      int label = -1;
      try {
        std::size_t pos = 0;
        label = std::stoi(cells[*lcol], &pos);
        if (pos != cells[*lcol].size()) label = -1;
      } catch (const std::exception&) {
      }
      if (label < 0)
        throw LoadError(csv.string() + ": row " + std::to_string(row) + " has invalid label '" +
                        cells[*lcol] + "'");
      ds.labels.push_back(label);
    }
  }
  if (images.empty()) throw LoadError(csv.string() + ": no images listed");

  const std::set<std::string> listed(ds.names.begin(), ds.names.end());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".pgm") continue;
    if (!listed.contains(entry.path().filename().string()))
      throw LoadError(dir.string() + ": '" + entry.path().filename().string() +
                      "' is not listed in labels.csv");
  }
  ds.images = stack_rows(images);
  return ds;
}

void save_dataset(const DomainDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "labels.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
  csv << (ds.labeled() ? "filename,label,group\n" : "filename,group\n");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.pgm", i);
    const std::string fname = ds.names.empty() ? name : ds.names[i];
    const std::size_t idx[] = {i};
    Tensor img = ds.batch_images(idx);
    write_pgm(img.reshaped(ds.image_shape()), dir / fname);
    csv << fname;
    if (ds.labeled()) csv << ',' << ds.labels[i];
    csv << ',' << (ds.groups.empty() ? fname : ds.groups[i]) << '\n';
  }
}

// ---- splitting and batching ------------------------------------------------

DatasetSplit split_dataset(const DomainDataset& ds, std::uint64_t seed, SplitRatios ratios) {
  if (ds.groups.size() != ds.size()) throw ConfigError("split_dataset needs one group id per image");
  std::vector<std::string> order;
  std::map<std::string, std::size_t> seen;
  for (const auto& g : ds.groups)
    if (seen.emplace(g, order.size()).second) order.push_back(g);
  const std::size_t n_groups = order.size();
  if (n_groups < 3)
    throw ConfigError("split_dataset needs at least 3 groups, got " + std::to_string(n_groups));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(n_groups);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  const double total = ratios.train + ratios.val + ratios.test;
  auto count = [&](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(r / total * static_cast<double>(n_groups))));
  };
  const std::size_t n_val = count(ratios.val), n_test = count(ratios.test);
  if (n_val + n_test >= n_groups) throw ConfigError("split_dataset: too few groups for the ratios");
  const std::size_t n_train = n_groups - n_val - n_test;

  // 0 = train, 1 = val, 2 = test, indexed by first-appearance group id.
  std::vector<int> part(n_groups);
  for (std::size_t k = 0; k < n_groups; ++k) part[perm[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  std::vector<std::size_t> idx[3];
  for (std::size_t i = 0; i < ds.size(); ++i) idx[part[seen.at(ds.groups[i])]].push_back(i);
  return DatasetSplit{ds.subset(idx[0]), ds.subset(idx[1]), ds.subset(idx[2])};
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t w, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (w == 0) throw ConfigError("batch size must be positive");
  if (w > n)
    throw ConfigError("batch size " + std::to_string(w) + " exceeds dataset size " + std::to_string(n));
  std::seed_seq seq{seed, epoch, std::uint64_t{0x6261746368}};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b + w <= n; b += w) out.emplace_back(perm.begin() + b, perm.begin() + b + w);
  return out;
}

}  // namespace udagcn
