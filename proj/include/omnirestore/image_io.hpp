#pragma once

#include <string>
#include <vector>

#include "omnirestore/image.hpp"

namespace omnirestore {

// Formats are picked by extension: .ppm (P6, maxval 255) or .png (8-bit RGB,
// non-interlaced). Anything else is a FormatError.
ImageBuffer read_image(const std::string& path);
void write_image(const ImageBuffer& img, const std::string& path);

ImageBuffer decode_ppm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_ppm(const ImageBuffer& img);
ImageBuffer decode_png(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_png(const ImageBuffer& img);

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace omnirestore
