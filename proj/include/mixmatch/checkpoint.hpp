#pragma once

// Parameter checkpoint container.
//
// Byte layout (all integers little-endian):
//   magic    8 bytes  "MMCKPT\0\1"
//   version  u32      = 1
//   count    u32      number of arrays
//   count x {
//     name_len u32, name bytes (UTF-8, no terminator)
//     dtype    u8       1 = float32, 2 = float64
//     rank     u8       = 4
//     reserved u16      = 0
//     dims     4 x i64  (n, c, h, w)
//     values   prod(dims) elements, IEEE-754 little-endian
//   }

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mixmatch/tensor.hpp"

namespace mixmatch {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::variant<std::vector<float>, std::vector<double>> values;
};

template <class Real>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<Real>>>;

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

template <class Real>
void save_tensors(const std::filesystem::path& path, const NamedTensors<Real>& tensors);

/// Copies stored values into existing tensors; names, shapes and dtype must
/// match exactly.
template <class Real>
void load_tensors(const std::filesystem::path& path, const NamedTensors<Real>& tensors);

}  // namespace mixmatch
