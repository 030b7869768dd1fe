#pragma once

#include <cmath>
#include <vector>

#include "hsifuse/tensor.hpp"

namespace th {

/// Soft stripe through (cx, cy) running along direction (sin phi, cos phi).
inline hsifuse::Tensor stripe_image(int64_t n, double phi, double cx, double cy, double width) {
    std::vector<double> v;
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            // distance from the line: project onto the normal (cos phi, -sin phi)
            const double d = (x - cx) * std::cos(phi) - (y - cy) * std::sin(phi);
            v.push_back(std::exp(-d * d / (2 * width * width)));
        }
    return hsifuse::Tensor::from({1, n, n}, v, hsifuse::DType::f64);
}

/// Elliptic Gaussian blob centred at the image centre.
inline hsifuse::Tensor blob_image(int64_t n, double sx, double sy, double rot = 0.0) {
    std::vector<double> v;
    const double c = 0.5 * (n - 1);
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            const double u = (x - c) * std::cos(rot) + (y - c) * std::sin(rot);
            const double w = -(x - c) * std::sin(rot) + (y - c) * std::cos(rot);
            v.push_back(std::exp(-0.5 * (u * u / (sx * sx) + w * w / (sy * sy))));
        }
    return hsifuse::Tensor::from({1, n, n}, v, hsifuse::DType::f64);
}

inline double variance(const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace th
