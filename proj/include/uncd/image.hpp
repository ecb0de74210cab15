#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uncd/errors.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

/// 8-bit RGB raster, interleaved row-major.
struct Image8 {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> rgb;

    Image8() = default;
    Image8(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
    std::size_t pixels() const { return height * width; }
    bool operator==(const Image8&) const = default;
};

/// Per-channel mean and standard deviation of raw pixel values (0..255 scale),
/// stored in the model checkpoint and reused verbatim at inference.
struct NormalizationStats {
    std::array<float, 3> mean{127.5f, 127.5f, 127.5f};
    std::array<float, 3> stddev{64.0f, 64.0f, 64.0f};
};

/// Raw image plus its per-pixel semantic class mask
/// (0 building, 1 immutable, 2 background).
struct LabeledImage {
    Image8 image;
    ClassMap mask;  // batch == 1
};

inline constexpr std::array<std::array<std::uint8_t, 3>, 3> kClassColors = {{
    {0, 0, 255},  // building -> blue
    {0, 255, 0},  // immutable -> green
    {255, 0, 0},  // background -> red
}};

inline Image8 class_map_to_image(const ClassMap& m) {
    if (m.batch != 1) throw DimensionError("class_map_to_image: batch axis N=" + std::to_string(m.batch) + ", expected 1");
    Image8 img(m.height, m.width);
    for (std::size_t i = 0; i < m.v.size(); ++i) {
        const auto& col = kClassColors[m.v[i] % 3];
        img.rgb[i * 3 + 0] = col[0];
        img.rgb[i * 3 + 1] = col[1];
        img.rgb[i * 3 + 2] = col[2];
    }
    return img;
}

inline ClassMap image_to_class_map(const Image8& img) {
    ClassMap m(1, img.height, img.width);
    for (std::size_t i = 0; i < m.v.size(); ++i) {
        const std::uint8_t r = img.rgb[i * 3 + 0], g = img.rgb[i * 3 + 1], b = img.rgb[i * 3 + 2];
        if (r == 0 && g == 0 && b == 255) {
            m.v[i] = 0;
        } else if (r == 0 && g == 255 && b == 0) {
            m.v[i] = 1;
        } else if (r == 255 && g == 0 && b == 0) {
            m.v[i] = 2;
        } else {
            throw FormatError("image_to_class_map: pixel " + std::to_string(i) + " color (" + std::to_string(r) +
                              "," + std::to_string(g) + "," + std::to_string(b) + ") is not a class color");
        }
    }
    return m;
}

inline Image8 bool_mask_to_image(const BoolMask& m) {
    if (m.batch != 1) throw DimensionError("bool_mask_to_image: batch axis N=" + std::to_string(m.batch) + ", expected 1");
    Image8 img(m.height, m.width);
    for (std::size_t i = 0; i < m.v.size(); ++i) {
        const std::uint8_t v = m.v[i] ? 255 : 0;
        img.rgb[i * 3 + 0] = v;
        img.rgb[i * 3 + 1] = v;
        img.rgb[i * 3 + 2] = v;
    }
    return img;
}

inline BoolMask image_to_bool_mask(const Image8& img) {
    BoolMask m(1, img.height, img.width);
    for (std::size_t i = 0; i < m.v.size(); ++i) {
        m.v[i] = (img.rgb[i * 3] || img.rgb[i * 3 + 1] || img.rgb[i * 3 + 2]) ? 1 : 0;
    }
    return m;
}

}  // namespace uncd
