#pragma once

// 8-bit RGB PNG and binary PPM (P6). Values map as v = pixel / 127.5 - 1.

#include <dip/common.hpp>

#include <filesystem>

namespace dip::exp {

struct Image {
  Index height = 0;
  Index width = 0;
  Index channels = 3;
  VectorXd values;  // (row, col, channel), channel fastest, in [-1, 1]
};

double pixel_to_value(unsigned pixel);
// Clamps to [-1, 1] and rounds half away from zero.
unsigned value_to_pixel(double value);

// Format from the extension (.png, .ppm). Grayscale and alpha PNGs are
// expanded or stripped to RGB on read.
Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

}  // namespace dip::exp
