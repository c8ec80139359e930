#pragma once

#include <array>
#include <string>

#include "oseg/tensor.hpp"

namespace oseg {

// Images are Tensor[3,H,W] with values in [0,1]. PNG round-trips through
// 8-bit RGB, deterministically (round half away from zero on write).

void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

std::array<double, 3> rgb_to_hsv(double r, double g, double b);  // h in [0,360)
std::array<double, 3> hsv_to_rgb(double h, double s, double v);

}  // namespace oseg
