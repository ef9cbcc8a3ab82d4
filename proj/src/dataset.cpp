#include "vitnas/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vitnas/error.hpp"
#include "vitnas/rng.hpp"

namespace vitnas {

namespace {

constexpr std::array<char, 5> kMagic = {'A', 'F', 'D', 'S', '1'};
constexpr std::size_t kHeaderBytes = kMagic.size() + 5 * 4;

void put_u32(std::ostream& os, std::uint32_t v) {
    const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                            static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

constexpr double kTwoPi = 6.283185307179586476925;

}  // namespace

void Dataset::validate() const {
    if (height == 0 || width == 0 || channels == 0 || num_classes == 0) {
        throw DataError("dataset: zero extent in header");
    }
    if (num_classes > 256) {
        throw DataError("dataset: num_classes " + std::to_string(num_classes) + " exceeds u8 label range");
    }
    if (pixels.size() != labels.size() * image_bytes()) {
        throw DataError("dataset: " + std::to_string(pixels.size()) + " pixel bytes for " +
                        std::to_string(labels.size()) + " samples of " + std::to_string(image_bytes()) + " bytes");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw DataError("dataset: label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                            " is not below num_classes " + std::to_string(num_classes));
        }
    }
}

NetGeometry Dataset::geometry(int patch) const {
    NetGeometry g;
    g.height = static_cast<int>(height);
    g.width = static_cast<int>(width);
    g.channels = static_cast<int>(channels);
    g.patch = patch;
    g.num_classes = static_cast<int>(num_classes);
    g.validate();
    return g;
}

Dataset Dataset::subset(std::size_t offset, std::size_t count) const {
    if (offset + count > size()) {
        throw DataError("dataset: subset [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                        ") exceeds " + std::to_string(size()) + " samples");
    }
    Dataset d;
    d.height = height;
    d.width = width;
    d.channels = channels;
    d.num_classes = num_classes;
    const std::size_t ib = image_bytes();
    d.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(offset * ib),
                    pixels.begin() + static_cast<std::ptrdiff_t>((offset + count) * ib));
    d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(offset),
                    labels.begin() + static_cast<std::ptrdiff_t>(offset + count));
    return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
    data.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw DataError("cannot open '" + path.string() + "' for writing");
    }
    os.write(kMagic.data(), kMagic.size());
    put_u32(os, static_cast<std::uint32_t>(data.size()));
    put_u32(os, data.height);
    put_u32(os, data.width);
    put_u32(os, data.channels);
    put_u32(os, data.num_classes);
    os.write(reinterpret_cast<const char*>(data.pixels.data()), static_cast<std::streamsize>(data.pixels.size()));
    os.write(reinterpret_cast<const char*>(data.labels.data()), static_cast<std::streamsize>(data.labels.size()));
    os.flush();
    if (!os) {
        throw DataError("write to '" + path.string() + "' failed");
    }
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open dataset '" + path.string() + "'");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::string where = "dataset '" + path.string() + "': ";
    if (bytes.size() < kHeaderBytes) {
        throw DataError(where + "file is " + std::to_string(bytes.size()) + " bytes, shorter than the " +
                        std::to_string(kHeaderBytes) + "-byte header");
    }
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw DataError(where + "bad magic (expected AFDS1)");
    }
    const unsigned char* h = bytes.data() + kMagic.size();
    const std::uint64_t n = get_u32(h);
    Dataset d;
    d.height = get_u32(h + 4);
    d.width = get_u32(h + 8);
    d.channels = get_u32(h + 12);
    d.num_classes = get_u32(h + 16);
    const std::uint64_t expected = kHeaderBytes + n * d.image_bytes() + n;
    if (bytes.size() != expected) {
        throw DataError(where + "length " + std::to_string(bytes.size()) + " does not match header (" +
                        std::to_string(n) + " samples of " + std::to_string(d.height) + "x" +
                        std::to_string(d.width) + "x" + std::to_string(d.channels) + " need " +
                        std::to_string(expected) + " bytes)");
    }
    const auto pix_begin = bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes);
    const auto pix_end = pix_begin + static_cast<std::ptrdiff_t>(n * d.image_bytes());
    d.pixels.assign(pix_begin, pix_end);
    d.labels.assign(pix_end, bytes.end());
    try {
        d.validate();
    } catch (const DataError& e) {
        throw DataError(where + e.what());
    }
    return d;
}

Dataset synthesize(const SynthOptions& opts) {
    if (opts.classes == 0 || opts.classes > 256 || opts.samples == 0 || opts.size == 0 || opts.channels == 0) {
        throw ConfigError("synth: classes must be in [1, 256] and samples, size, channels positive");
    }
    Dataset d;
    d.height = d.width = opts.size;
    d.channels = opts.channels;
    d.num_classes = opts.classes;
    d.labels.resize(opts.samples);
    for (std::uint32_t i = 0; i < opts.samples; ++i) {
        d.labels[i] = static_cast<std::uint8_t>(i % opts.classes);
    }
    Rng rng(derive_seed(opts.seed, "synth"));
    // Fisher-Yates with the project RNG (std::shuffle is implementation-defined).
    for (std::size_t i = d.labels.size(); i > 1; --i) {
        std::swap(d.labels[i - 1], d.labels[rng.uniform_index(i)]);
    }

    const double s = opts.size;
    d.pixels.resize(std::size_t{opts.samples} * d.image_bytes());
    std::vector<double> tint(opts.channels);
    for (std::uint32_t i = 0; i < opts.samples; ++i) {
        const int family = d.labels[i] % 8;
        const double freq = 2.0 + d.labels[i] / 8;  // cycles per image; larger class ids get finer motifs
        const double phase = kTwoPi * rng.uniform01();
        const double contrast = 50.0 + 50.0 * rng.uniform01();
        const double cx = s * (0.35 + 0.3 * rng.uniform01());
        const double cy = s * (0.35 + 0.3 * rng.uniform01());
        for (auto& t : tint) {
            t = 0.6 + 0.4 * rng.uniform01();
        }
        std::uint8_t* img = d.pixels.data() + i * d.image_bytes();
        for (std::uint32_t y = 0; y < opts.size; ++y) {
            for (std::uint32_t x = 0; x < opts.size; ++x) {
                const double u = x / s, v = y / s;
                double m = 0;
                switch (family) {
                    case 0: m = std::sin(kTwoPi * freq * v + phase); break;
                    case 1: m = std::sin(kTwoPi * freq * u + phase); break;
                    case 2: m = std::sin(kTwoPi * freq * (u + v) / 2.0 + phase); break;
                    case 3: m = std::sin(kTwoPi * freq * (u - v) / 2.0 + phase); break;
                    case 4: {
                        const double a = std::sin(kTwoPi * freq * u + phase) * std::sin(kTwoPi * freq * v + phase);
                        m = a >= 0 ? 1.0 : -1.0;
                        break;
                    }
                    case 5: m = 2.0 * std::fmod(u + phase / kTwoPi, 1.0) - 1.0; break;
                    case 6: m = 2.0 * std::fmod(v + phase / kTwoPi, 1.0) - 1.0; break;
                    default: {
                        const double r = std::hypot(x - cx, y - cy) / s;
                        m = std::sin(kTwoPi * freq * r + phase);
                        break;
                    }
                }
                for (std::uint32_t c = 0; c < opts.channels; ++c) {
                    const double px = 128.0 + contrast * tint[c] * m + opts.noise * rng.normal();
                    img[(y * opts.size + x) * opts.channels + c] =
                        static_cast<std::uint8_t>(std::clamp(std::lround(px), 0L, 255L));
                }
            }
        }
    }
    return d;
}

template <class T>
Tensor<T> make_patches(const Dataset& data, std::span<const std::size_t> indices, int patch) {
    const NetGeometry g = data.geometry(patch);
    const std::size_t p = static_cast<std::size_t>(patch);
    const std::size_t gw = data.width / p;
    const std::size_t np = g.num_patches(), pp = g.patch_pixels(), ch = data.channels;
    Tensor<T> out({indices.size() * np, pp});
    auto o = out.data();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        if (indices[b] >= data.size()) {
            throw DataError("make_patches: sample index " + std::to_string(indices[b]) + " out of range");
        }
        const auto img = data.image(indices[b]);
        for (std::size_t k = 0; k < np; ++k) {
            const std::size_t py0 = (k / gw) * p, px0 = (k % gw) * p;
            T* row = o.data() + (b * np + k) * pp;
            for (std::size_t py = 0; py < p; ++py) {
                const std::uint8_t* src = img.data() + ((py0 + py) * data.width + px0) * ch;
                for (std::size_t j = 0; j < p * ch; ++j) {
                    row[py * p * ch + j] = T(src[j]) / T(127.5) - T(1);
                }
            }
        }
    }
    return out;
}

std::vector<std::int32_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<std::int32_t> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out[i] = data.labels.at(indices[i]);
    }
    return out;
}

template Tensor<float> make_patches(const Dataset&, std::span<const std::size_t>, int);
template Tensor<double> make_patches(const Dataset&, std::span<const std::size_t>, int);

}  // namespace vitnas
