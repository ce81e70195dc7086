#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace mstpp {

/// H x W x C image stored as C planes of H x W (row-major), binary32 values.
struct SpectralCube {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> wavelengths;  // one entry per channel, nm
    std::vector<float> values;       // [C][H][W]

    static SpectralCube zeros(std::size_t h, std::size_t w, std::vector<float> wavelengths) {
        SpectralCube c;
        c.height = h;
        c.width = w;
        c.channels = wavelengths.size();
        c.wavelengths = std::move(wavelengths);
        c.values.assign(c.channels * h * w, 0.0f);
        return c;
    }

    /// 31 bands, 400-700 nm in 10 nm steps.
    static std::vector<float> default_wavelengths() {
        std::vector<float> w;
        for (int nm = 400; nm <= 700; nm += 10) w.push_back(static_cast<float>(nm));
        return w;
    }

    /// Nominal centres of the default R, G, B responses.
    static std::vector<float> rgb_wavelengths() { return {620.0f, 550.0f, 450.0f}; }

    std::size_t plane_size() const { return height * width; }
    std::size_t size() const { return values.size(); }

    float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return values[(c * height + y) * width + x]; }

    bool same_shape(const SpectralCube& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    bool operator==(const SpectralCube& o) const = default;

    std::string shape_string() const {
        return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
    }

    void validate() const {
        if (wavelengths.size() != channels || values.size() != channels * height * width)
            throw DimensionError("SpectralCube: inconsistent extents " + shape_string());
    }

    /// Spatial crop.
    SpectralCube crop(std::size_t top, std::size_t left, std::size_t h, std::size_t w) const {
        if (top + h > height || left + w > width)
            throw DimensionError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                                 std::to_string(top) + "," + std::to_string(left) + ") outside " + shape_string());
        SpectralCube out = zeros(h, w, wavelengths);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = at(c, top + y, left + x);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Tensor conversion

/// Stacks equally shaped cubes into [B, C, H, W].
inline Tensor cubes_to_tensor(const std::vector<const SpectralCube*>& cubes) {
    if (cubes.empty()) throw DimensionError("cubes_to_tensor: empty batch");
    const auto& f = *cubes.front();
    std::vector<double> data;
    data.reserve(cubes.size() * f.size());
    for (const auto* c : cubes) {
        if (!c->same_shape(f)) throw DimensionError("cubes_to_tensor: mixed shapes in batch");
        data.insert(data.end(), c->values.begin(), c->values.end());
    }
    return Tensor::from({cubes.size(), f.channels, f.height, f.width}, std::move(data));
}

inline Tensor cube_to_tensor(const SpectralCube& c) { return cubes_to_tensor({&c}); }

/// Extracts batch item `b` of a [B, C, H, W] tensor, rounding to binary32.
inline SpectralCube tensor_to_cube(const Tensor& t, std::size_t b, std::vector<float> wavelengths) {
    if (t.rank() != 4 || b >= t.dim(0) || t.dim(1) != wavelengths.size())
        throw DimensionError("tensor_to_cube: shape " + shape_str(t.shape()) + " incompatible with " +
                             std::to_string(wavelengths.size()) + " wavelengths");
    SpectralCube c = SpectralCube::zeros(t.dim(2), t.dim(3), std::move(wavelengths));
    const std::size_t n = c.size();
    const auto src = t.data().subspan(b * n, n);
    for (std::size_t i = 0; i < n; ++i) c.values[i] = static_cast<float>(src[i]);
    return c;
}

// ---------------------------------------------------------------------------
// Dihedral group: flip (left-right mirror) followed by k counter-clockwise
// quarter turns. Index = 4 * flip + k.

struct Dihedral {
    bool flip = false;
    int quarter_turns = 0;  // 0..3

    static Dihedral from_index(int i) { return {i >= 4, i % 4}; }
    int index() const { return (flip ? 4 : 0) + quarter_turns; }

    Dihedral inverse() const {
        if (flip) return *this;  // reflections are involutions
        return {false, (4 - quarter_turns) % 4};
    }

    static std::array<Dihedral, 8> all() {
        std::array<Dihedral, 8> g{};
        for (int i = 0; i < 8; ++i) g[static_cast<std::size_t>(i)] = from_index(i);
        return g;
    }
};

namespace detail {

inline SpectralCube mirror_lr(const SpectralCube& in) {
    SpectralCube out = in;
    for (std::size_t c = 0; c < in.channels; ++c)
        for (std::size_t y = 0; y < in.height; ++y)
            for (std::size_t x = 0; x < in.width; ++x) out.at(c, y, x) = in.at(c, y, in.width - 1 - x);
    return out;
}

// Counter-clockwise quarter turn: out[i][j] = in[j][W-1-i], extents swap.
inline SpectralCube rot90(const SpectralCube& in) {
    SpectralCube out = SpectralCube::zeros(in.width, in.height, in.wavelengths);
    for (std::size_t c = 0; c < in.channels; ++c)
        for (std::size_t i = 0; i < out.height; ++i)
            for (std::size_t j = 0; j < out.width; ++j) out.at(c, i, j) = in.at(c, j, in.width - 1 - i);
    return out;
}

}  // namespace detail

inline SpectralCube apply(const SpectralCube& cube, Dihedral g) {
    SpectralCube out = g.flip ? detail::mirror_lr(cube) : cube;
    for (int k = 0; k < g.quarter_turns; ++k) out = detail::rot90(out);
    return out;
}

inline SpectralCube flip_lr(const SpectralCube& c) { return detail::mirror_lr(c); }
inline SpectralCube flip_ud(const SpectralCube& c) { return apply(c, {true, 2}); }
inline SpectralCube rotate90(const SpectralCube& c) { return detail::rot90(c); }

// ---------------------------------------------------------------------------
// HSI1 container: "HSI1", u32 version, u32 H, u32 W, u32 C, C x f32
// wavelengths, then C planes of H x W f32, all little-endian.

inline constexpr std::uint32_t kHsi1Version = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw CorruptionError(std::string("truncated file while reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float get_f32(std::istream& is, const char* what) { return std::bit_cast<float>(get_u32(is, what)); }

}  // namespace detail

inline void write_hsi1(std::ostream& os, const SpectralCube& cube) {
    cube.validate();
    os.write("HSI1", 4);
    detail::put_u32(os, kHsi1Version);
    detail::put_u32(os, static_cast<std::uint32_t>(cube.height));
    detail::put_u32(os, static_cast<std::uint32_t>(cube.width));
    detail::put_u32(os, static_cast<std::uint32_t>(cube.channels));
    for (float w : cube.wavelengths) detail::put_f32(os, w);
    for (float v : cube.values) detail::put_f32(os, v);
}

inline SpectralCube read_hsi1(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "HSI1", 4) != 0) throw CorruptionError("not an HSI1 file (bad magic)");
    const auto version = detail::get_u32(is, "version");
    if (version != kHsi1Version) throw CorruptionError("unsupported HSI1 version " + std::to_string(version));
    const auto h = detail::get_u32(is, "height");
    const auto w = detail::get_u32(is, "width");
    const auto c = detail::get_u32(is, "channels");
    if (h == 0 || w == 0 || c == 0) throw CorruptionError("HSI1 header has zero extent");
    std::vector<float> wl(c);
    for (auto& v : wl) v = detail::get_f32(is, "wavelengths");
    SpectralCube cube = SpectralCube::zeros(h, w, std::move(wl));
    for (auto& v : cube.values) v = detail::get_f32(is, "band data");
    return cube;
}

inline void write_hsi1(const std::string& path, const SpectralCube& cube) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_hsi1(os, cube);
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline SpectralCube read_hsi1(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::invalid_argument("cannot open '" + path + "'");
    auto cube = read_hsi1(is);
    if (is.peek() != std::ifstream::traits_type::eof()) throw CorruptionError("'" + path + "' has trailing bytes after the cube");
    return cube;
}

}  // namespace mstpp
