#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vitnas/geometry.hpp"
#include "vitnas/tensor.hpp"

namespace vitnas {

/// In-memory labeled image set. Pixels are u8, row-major, channel-last.
struct Dataset {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;
    std::uint32_t num_classes = 0;
    std::vector<std::uint8_t> pixels;
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_bytes() const { return std::size_t{height} * width * channels; }
    std::span<const std::uint8_t> image(std::size_t i) const {
        return std::span<const std::uint8_t>(pixels).subspan(i * image_bytes(), image_bytes());
    }
    /// Throws DataError on inconsistent sizes or out-of-range labels.
    void validate() const;

    /// Geometry for this data at the given patch size.
    NetGeometry geometry(int patch) const;

    /// Samples [offset, offset + count) as a new dataset.
    Dataset subset(std::size_t offset, std::size_t count) const;
};

/// AFDS1 layout: magic "AFDS1", u32 LE num_samples, height, width, channels,
/// num_classes, then pixel bytes, then one label byte per sample.
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

struct SynthOptions {
    std::uint32_t classes = 8;
    std::uint32_t samples = 1024;
    std::uint32_t size = 32;
    std::uint32_t channels = 3;
    std::uint64_t seed = 0;
    double noise = 24.0;  // pixel noise standard deviation in u8 units
};

/// Balanced synthetic classification set. Each class is a motif family
/// (oriented bars, checkerboards, gradients, rings) with a class-specific
/// frequency; samples vary in phase, contrast, tint and pixel noise.
Dataset synthesize(const SynthOptions& opts);

/// Cuts images into non-overlapping patch rows [count*P x patch*patch*C],
/// patch-major in raster order, pixels (py, px, c) within a patch, scaled to [-1, 1].
template <class T>
Tensor<T> make_patches(const Dataset& data, std::span<const std::size_t> indices, int patch);

std::vector<std::int32_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace vitnas
