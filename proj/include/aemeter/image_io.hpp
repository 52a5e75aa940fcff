#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aemeter/camera.hpp"

namespace aemeter {

// Files hold 8-bit encoded RGB. Reads yield ColorSpace::Encoded planes.
ImagePlane read_png(const std::filesystem::path& path);
ImagePlane read_ppm(const std::filesystem::path& path);
// Dispatches on the extension (.png / .ppm).
ImagePlane read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const ImagePlane& img);
ImagePlane decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const ImagePlane& img);
ImagePlane decode_ppm(const std::vector<std::uint8_t>& bytes);

void write_png(const ImagePlane& img, const std::filesystem::path& path);
void write_ppm(const ImagePlane& img, const std::filesystem::path& path);
void write_image(const ImagePlane& img, const std::filesystem::path& path);

// Round-to-nearest 8-bit quantization, as applied at every file boundary.
ImagePlane quantize8(const ImagePlane& img);

// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace aemeter
