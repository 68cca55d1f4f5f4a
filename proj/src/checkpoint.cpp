#include "udagcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace udagcn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (is.gcount() != static_cast<std::streamsize>(sizeof v)) throw CheckpointError(path.string() + ": truncated");
  return v;
}

}  // namespace

void save_parameters(const ParamRefs& params, std::string_view magic, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

void load_parameters(const ParamRefs& params, std::string_view magic, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (got != magic) throw CheckpointError(path.string() + ": expected magic '" + std::string(magic) + "'");

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : params)
    if (!by_name.emplace(p->name, p).second) throw ContractError("duplicate parameter name " + p->name);

  const auto count = get<std::uint32_t>(is, path);
  if (count != params.size())
    throw CheckpointError(path.string() + ": holds " + std::to_string(count) + " tensors, model has " +
                          std::to_string(params.size()));
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = get<std::uint32_t>(is, path);
    if (len > 4096) throw CheckpointError(path.string() + ": implausible name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError(path.string() + ": unknown tensor '" + name + "'");
    Parameter& p = *it->second;
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    if (shape != p.value.shape())
      throw CheckpointError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) +
                            ", model expects " + shape_str(p.value.shape()));
    is.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(p.value.size() * sizeof(double)))
      throw CheckpointError(path.string() + ": truncated values for '" + name + "'");
    by_name.erase(it);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
}

void save_fdn(FdnParams& fdn, const std::filesystem::path& path) { save_parameters(fdn.parameters(), kFdnMagic, path); }
void load_fdn(FdnParams& fdn, const std::filesystem::path& path) { load_parameters(fdn.parameters(), kFdnMagic, path); }
void save_bundle(ModelBundle& b, const std::filesystem::path& path) { save_parameters(b.parameters(), kGcanMagic, path); }
void load_bundle(ModelBundle& b, const std::filesystem::path& path) { load_parameters(b.parameters(), kGcanMagic, path); }

}  // namespace udagcn
