#pragma once

#include <filesystem>

#include "admc/tensor.hpp"

namespace admc::io {

// Binary tensor container: magic "ADMC", version u16, dtype u8 (1 = f32),
// rank u8, then rank u32 dims and a row-major f32 payload. All integers and
// floats little-endian; round-trips are bit-exact.
inline constexpr uint16_t kTensorFileVersion = 1;

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor(const std::filesystem::path& path);

} // namespace admc::io
