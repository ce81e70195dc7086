#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>

#include "cube.hpp"
#include "errors.hpp"

namespace mstpp {

inline constexpr double kMraeEps = 1e-6;
inline constexpr double kPsnrCapDb = 100.0;

struct MetricReport {
    double mrae = 0.0;
    double rmse = 0.0;
    double psnr = 0.0;  // dB
    std::size_t count = 0;

    std::string to_key_values() const {
        std::ostringstream os;
        os.precision(10);
        os << "mrae=" << mrae << "\nrmse=" << rmse << "\npsnr=" << psnr << "\nn=" << count << "\n";
        return os.str();
    }

    static std::string csv_header() { return "mrae,rmse,psnr,n"; }

    std::string to_csv_row() const {
        std::ostringstream os;
        os.precision(10);
        os << mrae << ',' << rmse << ',' << psnr << ',' << count;
        return os.str();
    }
};

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b) {
    if (a != b) throw DimensionError("metric inputs differ in size: " + std::to_string(a) + " vs " + std::to_string(b));
    if (a == 0) throw DimensionError("metric inputs are empty");
}
}  // namespace detail

/// mean |gt - pred| / max(gt, eps)
template <typename T>
double mrae(std::span<const T> gt, std::span<const T> pred) {
    detail::require_same_size(gt.size(), pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double g = gt[i];
        s += std::abs(g - static_cast<double>(pred[i])) / std::max(g, kMraeEps);
    }
    return s / static_cast<double>(gt.size());
}

template <typename T>
double mse(std::span<const T> gt, std::span<const T> pred) {
    detail::require_same_size(gt.size(), pred.size());
    double s = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double d = static_cast<double>(gt[i]) - static_cast<double>(pred[i]);
        s += d * d;
    }
    return s / static_cast<double>(gt.size());
}

template <typename T>
double rmse(std::span<const T> gt, std::span<const T> pred) {
    return std::sqrt(mse(gt, pred));
}

/// 10 log10(peak^2 / MSE), capped at 100 dB.
template <typename T>
double psnr(std::span<const T> gt, std::span<const T> pred, double peak = 1.0) {
    const double m = mse(gt, pred);
    if (m <= 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / m));
}

namespace detail {
inline void require_same_cube(const SpectralCube& a, const SpectralCube& b) {
    if (!a.same_shape(b))
        throw DimensionError("cube shapes differ: " + a.shape_string() + " vs " + b.shape_string());
}
}  // namespace detail

inline double mrae(const SpectralCube& gt, const SpectralCube& pred) {
    detail::require_same_cube(gt, pred);
    return mrae<float>(gt.values, pred.values);
}

inline double rmse(const SpectralCube& gt, const SpectralCube& pred) {
    detail::require_same_cube(gt, pred);
    return rmse<float>(gt.values, pred.values);
}

inline double psnr(const SpectralCube& gt, const SpectralCube& pred, double peak = 1.0) {
    detail::require_same_cube(gt, pred);
    return psnr<float>(gt.values, pred.values, peak);
}

inline MetricReport evaluate(const SpectralCube& gt, const SpectralCube& pred) {
    return {mrae(gt, pred), rmse(gt, pred), psnr(gt, pred), gt.size()};
}

}  // namespace mstpp
