#pragma once

#include <string>
#include <utility>
#include <vector>

#include "saam/tensor.hpp"

namespace saam {

// PNG decode to a (1,3,H,W) float tensor in [0,1]. Grayscale and paletted
// files are expanded to RGB; alpha is dropped; 16-bit samples scale by
// 1/65535. Throws DataError on undecodable input, IoError on unreadable
// files.
Tensor<float> load_png(const std::string& path);

// Clamps to [0,1], quantizes to 8-bit RGB. Throws IoError when the target is
// not writable.
void save_png(const Tensor<float>& img, const std::string& path);

// *.png entries of a directory, sorted by filename.
std::vector<std::string> list_png_files(const std::string& dir);

}  // namespace saam
