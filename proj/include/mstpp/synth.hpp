#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cube.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace mstpp {

/// C x 3 non-negative matrix mapping a spectrum to RGB (row-major, row = band).
struct ResponseMatrix {
    std::size_t bands = 0;
    std::vector<double> values;  // [bands][3]

    double at(std::size_t band, std::size_t ch) const { return values[band * 3 + ch]; }

    void validate() const {
        if (values.size() != bands * 3) throw DimensionError("ResponseMatrix: expected " + std::to_string(bands) + "x3 values");
        for (double v : values)
            if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("ResponseMatrix: entries must be finite and non-negative");
    }

    /// Scales each column to sum to one (all-zero columns are left alone).
    void normalize_columns() {
        for (std::size_t ch = 0; ch < 3; ++ch) {
            double s = 0.0;
            for (std::size_t b = 0; b < bands; ++b) s += values[b * 3 + ch];
            if (s > 0.0)
                for (std::size_t b = 0; b < bands; ++b) values[b * 3 + ch] /= s;
        }
    }

    /// Gaussian responses centred at 620/550/450 nm, 50 nm standard deviation.
    static ResponseMatrix gaussian_default(const std::vector<float>& wavelengths) {
        ResponseMatrix m;
        m.bands = wavelengths.size();
        m.values.resize(m.bands * 3);
        constexpr double centres[3] = {620.0, 550.0, 450.0};
        constexpr double sd = 50.0;
        for (std::size_t b = 0; b < m.bands; ++b)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double d = (wavelengths[b] - centres[ch]) / sd;
                m.values[b * 3 + ch] = std::exp(-0.5 * d * d);
            }
        m.normalize_columns();
        return m;
    }

    /// Whitespace separated text, one row of three values per band.
    static ResponseMatrix load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::invalid_argument("cannot open response matrix '" + path + "'");
        ResponseMatrix m;
        double v;
        while (is >> v) m.values.push_back(v);
        if (m.values.empty() || m.values.size() % 3 != 0)
            throw std::invalid_argument("response matrix '" + path + "' must hold rows of 3 values");
        m.bands = m.values.size() / 3;
        m.validate();
        m.normalize_columns();
        return m;
    }
};

/// Parameters of one synthetic scene. Generation is a pure function of this.
struct SceneSpec {
    std::uint64_t seed = 0;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t blobs = 6;
    double noise_scale = 1e-3;  // shot-noise scale of the paired RGB
};

// Piecewise-smooth scene: a sum of Gaussian spatial blobs, each with a smooth
// spectrum (floor + 1-3 Gaussian bumps over wavelength), clipped to [0, 1].
// Blob 0 is a broad backdrop spanning the whole frame.
inline SpectralCube generate_scene(const SceneSpec& spec) {
    if (spec.height == 0 || spec.width == 0) throw DimensionError("generate_scene: extents must be positive");
    Rng rng(spec.seed);
    const auto wl = SpectralCube::default_wavelengths();
    const std::size_t C = wl.size(), H = spec.height, W = spec.width;
    std::vector<double> acc(C * H * W, 0.0);
    const double extent = static_cast<double>(std::max(H, W));

    std::vector<double> spectrum(C), spatial(H * W);
    for (std::size_t b = 0; b < spec.blobs; ++b) {
        const bool backdrop = b == 0;
        const double cy = rng.uniform(0.0, static_cast<double>(H));
        const double cx = rng.uniform(0.0, static_cast<double>(W));
        const double radius = backdrop ? 1.5 * extent : rng.uniform(0.08, 0.35) * extent;
        const double amplitude = backdrop ? rng.uniform(0.25, 0.4) : rng.uniform(0.2, 0.6);

        const double floor = rng.uniform(0.1, 0.3);
        const int bumps = 1 + static_cast<int>(rng.below(3));
        std::fill(spectrum.begin(), spectrum.end(), floor);
        for (int k = 0; k < bumps; ++k) {
            const double mu = rng.uniform(400.0, 700.0);
            const double sd = rng.uniform(25.0, 80.0);
            const double a = rng.uniform(0.3, 1.0);
            for (std::size_t c = 0; c < C; ++c) {
                const double d = (wl[c] - mu) / sd;
                spectrum[c] += a * std::exp(-0.5 * d * d);
            }
        }
        const double peak = *std::max_element(spectrum.begin(), spectrum.end());
        for (auto& s : spectrum) s /= peak;

        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double dy = (static_cast<double>(y) + 0.5 - cy) / radius;
                const double dx = (static_cast<double>(x) + 0.5 - cx) / radius;
                spatial[y * W + x] = amplitude * std::exp(-0.5 * (dy * dy + dx * dx));
            }
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < H * W; ++i) acc[c * H * W + i] += spectrum[c] * spatial[i];
    }

    SpectralCube cube = SpectralCube::zeros(H, W, wl);
    for (std::size_t i = 0; i < acc.size(); ++i) cube.values[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
    return cube;
}

/// Per-pixel I = Y M, clipped to [0, 1].
inline SpectralCube project_rgb(const SpectralCube& cube, const ResponseMatrix& m) {
    if (cube.channels != m.bands)
        throw DimensionError("project_rgb: cube has " + std::to_string(cube.channels) + " bands, matrix has " +
                             std::to_string(m.bands));
    SpectralCube rgb = SpectralCube::zeros(cube.height, cube.width, SpectralCube::rgb_wavelengths());
    const std::size_t n = cube.plane_size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < 3; ++ch) {
            double s = 0.0;
            for (std::size_t b = 0; b < cube.channels; ++b) s += static_cast<double>(cube.values[b * n + i]) * m.at(b, ch);
            rgb.values[ch * n + i] = static_cast<float>(std::clamp(s, 0.0, 1.0));
        }
    return rgb;
}

/// Signal-dependent noise x + sqrt(max(x, 0) * scale) * g, g ~ N(0, 1), clipped to [0, 1].
inline SpectralCube add_shot_noise(const SpectralCube& img, double scale, std::uint64_t seed) {
    if (!(scale >= 0.0)) throw std::invalid_argument("add_shot_noise: scale must be non-negative");
    SpectralCube out = img;
    if (scale == 0.0) return out;
    Rng rng(seed);
    for (auto& v : out.values) {
        const double x = v;
        const double noisy = x + std::sqrt(std::max(x, 0.0) * scale) * rng.normal();
        v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
    return out;
}

struct SamplePair {
    SpectralCube rgb;
    SpectralCube hsi;

    bool operator==(const SamplePair&) const = default;
};

/// Scene, its noiseless projection, then shot noise seeded from the scene seed.
inline SamplePair make_pair(const SceneSpec& spec, const ResponseMatrix& m) {
    SamplePair p;
    p.hsi = generate_scene(spec);
    p.rgb = add_shot_noise(project_rgb(p.hsi, m), spec.noise_scale, spec.seed ^ 0xA5A5A5A5DEADBEEFULL);
    return p;
}

inline SamplePair augment(const SamplePair& pair, Dihedral g) { return {apply(pair.rgb, g), apply(pair.hsi, g)}; }

/// `count` aligned square crops at uniformly random positions.
inline std::vector<SamplePair> sample_patches(const SamplePair& pair, std::size_t size, std::size_t count,
                                              std::uint64_t seed) {
    const std::size_t H = pair.hsi.height, W = pair.hsi.width;
    if (pair.rgb.height != H || pair.rgb.width != W) throw DimensionError("sample_patches: RGB and HSI are misaligned");
    if (size == 0 || size > H || size > W)
        throw DimensionError("sample_patches: patch " + std::to_string(size) + " larger than image " +
                             std::to_string(H) + "x" + std::to_string(W));
    Rng rng(seed);
    std::vector<SamplePair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t top = rng.below(H - size + 1);
        const std::size_t left = rng.below(W - size + 1);
        out.push_back({pair.rgb.crop(top, left, size, size), pair.hsi.crop(top, left, size, size)});
    }
    return out;
}

}  // namespace mstpp
