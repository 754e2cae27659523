#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

namespace dragon::io {

/// Binary PGM (P5, maxval 255). `levels` are already-quantized bytes, row-major top to bottom.
inline std::string encode_pgm(int width, int height, std::span<const unsigned char> levels,
                              const std::string& comment = {}) {
    std::string out = "P5\n";
    if (!comment.empty()) out += "# " + comment + "\n";
    out += std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(levels.data()), levels.size());
    return out;
}

/// Intensity in [0, 1] to a byte: round(v * 255) after clamping.
inline unsigned char unit_to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace dragon::io
