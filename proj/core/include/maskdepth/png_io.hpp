#pragma once

#include <cstdint>
#include <filesystem>

#include "maskdepth/common.hpp"

namespace maskdepth {

using Pixels16 = Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Any 8/16-bit PNG converted to RGB in [0,1]. Throws DataError.
ImageTensor read_png_rgb(const std::filesystem::path& path);
/// 8-bit RGB; values are clamped to [0,1] and rounded.
void write_png_rgb(const std::filesystem::path& path, const ImageTensor& image);

/// Single-channel 16-bit PNG, raw values. Throws DataError for any other format.
Pixels16 read_png_gray16(const std::filesystem::path& path);
void write_png_gray16(const std::filesystem::path& path, const Pixels16& pixels);

}  // namespace maskdepth
