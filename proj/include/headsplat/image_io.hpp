#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace headsplat {

/// Reads an 8-bit PNG as an H×W×3 float32 tensor in [0,1]. Gray and RGBA
/// inputs are converted to RGB.
torch::Tensor read_png(const std::filesystem::path& path);

/// Writes the first three channels of an H×W×C tensor, clamped to [0,1] and
/// rounded to 8 bits.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Raw little-endian f32 dump of named tensors (a tensor store, see
/// tensor_store.hpp); used for render exports consumed by tests.
void write_raw_dump(const std::filesystem::path& dir, const std::map<std::string, torch::Tensor>& tensors);

} // namespace headsplat
