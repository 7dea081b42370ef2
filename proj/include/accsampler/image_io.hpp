#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace accsampler {

/// Reads an 8-bit RGB PNG into a uint8 tensor of shape [3, H, W].
torch::Tensor read_png(const std::filesystem::path& path);

/// Writes a [3, H, W] tensor as an 8-bit RGB PNG. Float input is taken to be
/// in [0, 1] and is rounded; uint8 input is written as is.
void write_png(const std::filesystem::path& path, const torch::Tensor& chw);

} // namespace accsampler
