#pragma once

#include <cstddef>
#include <string>

#include "vitnas/error.hpp"

namespace vitnas {

/// Input geometry shared by every subnet of a supernet.
struct NetGeometry {
    int height = 32;
    int width = 32;
    int channels = 3;
    int patch = 8;
    int num_classes = 8;

    void validate() const {
        if (height < 1 || width < 1 || channels < 1 || patch < 1 || num_classes < 1) {
            throw ConfigError("geometry: all extents must be positive");
        }
        if (height % patch != 0 || width % patch != 0) {
            throw ConfigError("geometry: image " + std::to_string(height) + "x" + std::to_string(width) +
                              " is not divisible by patch " + std::to_string(patch));
        }
    }

    std::size_t num_patches() const {
        return static_cast<std::size_t>(height / patch) * static_cast<std::size_t>(width / patch);
    }
    /// Patches plus the class token.
    std::size_t tokens() const { return num_patches() + 1; }
    std::size_t patch_pixels() const {
        return static_cast<std::size_t>(patch) * static_cast<std::size_t>(patch) * static_cast<std::size_t>(channels);
    }

    bool operator==(const NetGeometry&) const = default;
};

}  // namespace vitnas
