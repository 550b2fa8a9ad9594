#pragma once

#include <cstdint>
#include <vector>

#include "sail/common.hpp"

namespace sail {

// Per-pixel layer-label map over classes {0..L}, 0 = background.
struct LayerMask {
    int height = 0;
    int width = 0;
    int layer_count = 0;          // L; valid labels are 0..L
    std::vector<int> labels;      // H*W row-major

    LayerMask() = default;
    LayerMask(int h, int w, int layers)
        : height(h), width(w), layer_count(layers), labels(static_cast<size_t>(h) * w, 0) {
        if (h <= 0 || w <= 0 || layers < 1)
            throw ConfigError("LayerMask: invalid dimensions");
    }

    int at(int r, int c) const { return labels[static_cast<size_t>(r) * width + c]; }
    int& at(int r, int c) { return labels[static_cast<size_t>(r) * width + c]; }

    size_t numel() const { return labels.size(); }

    void validate() const {
        if (labels.size() != static_cast<size_t>(height) * width)
            throw ShapeError("LayerMask: label buffer size mismatch");
        for (int v : labels)
            if (v < 0 || v > layer_count)
                throw ConfigError("LayerMask: label " + std::to_string(v) + " outside [0," +
                                  std::to_string(layer_count) + "]");
    }

    // Retinal set G = all pixels with label >= 1, as flat row-major indices.
    std::vector<int> tissue_pixels() const {
        std::vector<int> out;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= 1) out.push_back(static_cast<int>(i));
        return out;
    }

    std::vector<int> layer_pixels(int layer) const {
        std::vector<int> out;
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == layer) out.push_back(static_cast<int>(i));
        return out;
    }
};

}  // namespace sail
