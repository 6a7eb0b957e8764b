#include "mixmatch/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "binary_io.hpp"

namespace mixmatch {
namespace {

constexpr std::array<char, 8> kMagic = {'M', 'M', 'C', 'K', 'P', 'T', '\0', '\1'};

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<NamedArray>& arrays) {
  io::ByteWriter out;
  out.bytes(kMagic.data(), kMagic.size());
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    out.put<std::uint32_t>(static_cast<std::uint32_t>(a.name.size()));
    out.bytes(a.name.data(), a.name.size());
    const bool is_float = std::holds_alternative<std::vector<float>>(a.values);
    out.put<std::uint8_t>(is_float ? 1 : 2);
    out.put<std::uint8_t>(4);
    out.put<std::uint16_t>(0);
    for (std::int64_t d : {a.shape.n, a.shape.c, a.shape.h, a.shape.w}) out.put<std::int64_t>(d);
    std::visit(
        [&](const auto& vec) {
          if (static_cast<std::int64_t>(vec.size()) != a.shape.numel()) {
            throw DimensionError("checkpoint array '" + a.name + "' holds " +
                                 std::to_string(vec.size()) + " values for shape " +
                                 a.shape.str());
          }
          for (auto v : vec) out.put(v);
        },
        a.values);
  }
  out.save(path);
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  io::ByteReader in(io::read_file(path), path.string());
  std::array<char, 8> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedArray> arrays;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    const auto name_len = in.get<std::uint32_t>();
    a.name.resize(name_len);
    in.bytes(a.name.data(), name_len);
    const auto dtype = in.get<std::uint8_t>();
    const auto rank = in.get<std::uint8_t>();
    in.get<std::uint16_t>();
    if (rank != 4) throw FormatError(path.string() + ": unsupported rank " + std::to_string(rank));
    a.shape.n = in.get<std::int64_t>();
    a.shape.c = in.get<std::int64_t>();
    a.shape.h = in.get<std::int64_t>();
    a.shape.w = in.get<std::int64_t>();
    if (a.shape.n < 1 || a.shape.c < 1 || a.shape.h < 1 || a.shape.w < 1) {
      throw FormatError(path.string() + ": invalid shape for '" + a.name + "'");
    }
    const auto count_values = static_cast<std::size_t>(a.shape.numel());
    if (dtype == 1) {
      std::vector<float> v(count_values);
      for (auto& x : v) x = in.get<float>();
      a.values = std::move(v);
    } else if (dtype == 2) {
      std::vector<double> v(count_values);
      for (auto& x : v) x = in.get<double>();
      a.values = std::move(v);
    } else {
      throw FormatError(path.string() + ": unknown dtype tag " + std::to_string(dtype));
    }
    arrays.push_back(std::move(a));
  }
  if (!in.at_end()) throw FormatError(path.string() + ": trailing bytes after last array");
  return arrays;
}

template <class Real>
void save_tensors(const std::filesystem::path& path, const NamedTensors<Real>& tensors) {
  std::vector<NamedArray> arrays;
  arrays.reserve(tensors.size());
  for (const auto& [name, t] : tensors) {
    arrays.push_back({name, t.shape(), t.vector()});
  }
  write_checkpoint(path, arrays);
}

template <class Real>
void load_tensors(const std::filesystem::path& path, const NamedTensors<Real>& tensors) {
  auto arrays = read_checkpoint(path);
  std::map<std::string, NamedArray*> by_name;
  for (auto& a : arrays) by_name[a.name] = &a;
  if (by_name.size() != tensors.size()) {
    throw FormatError(path.string() + ": holds " + std::to_string(by_name.size()) +
                      " arrays, expected " + std::to_string(tensors.size()));
  }
  for (const auto& [name, t] : tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(path.string() + ": missing array '" + name + "'");
    const NamedArray& a = *it->second;
    if (a.shape != t.shape()) {
      throw FormatError(path.string() + ": array '" + name + "' has shape " + a.shape.str() +
                        ", expected " + t.shape().str());
    }
    const auto* stored = std::get_if<std::vector<Real>>(&a.values);
    if (stored == nullptr) throw FormatError(path.string() + ": dtype mismatch for '" + name + "'");
    auto dst = BasicTensor<Real>(t).mutable_values();
    std::copy(stored->begin(), stored->end(), dst.begin());
  }
}

template void save_tensors(const std::filesystem::path&, const NamedTensors<float>&);
template void save_tensors(const std::filesystem::path&, const NamedTensors<double>&);
template void load_tensors(const std::filesystem::path&, const NamedTensors<float>&);
template void load_tensors(const std::filesystem::path&, const NamedTensors<double>&);

}  // namespace mixmatch
