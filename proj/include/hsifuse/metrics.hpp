#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hsifuse/tensor.hpp"

// Quality metrics over [C,H,W] cubes. All arithmetic is in f64 whatever the
// input dtype.
namespace hsifuse::metrics {

inline constexpr double kPsnrCap = 100.0;

/// Mean over bands of 10 log10(peak^2 / MSE_b), each band capped at 100 dB.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);
std::vector<double> band_psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct SamResult {
    double degrees = 0.0;
    int64_t pixels = 0;
    int64_t skipped = 0;  // pixels with a zero-norm spectrum
};
SamResult sam_detail(const Tensor& a, const Tensor& b);
/// Mean spectral angle in degrees.
double sam(const Tensor& a, const Tensor& b);

/// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 1, valid
/// windows only, averaged over windows and bands.
double ssim(const Tensor& a, const Tensor& b);

/// Universal image quality index of two single-band images [H,W] over
/// sliding window x window blocks.
double uiqi_band(const double* a, const double* b, int64_t h, int64_t w, int64_t window = 8);
/// Mean over bands of uiqi_band.
double uiqi(const Tensor& a, const Tensor& b, int64_t window = 8);

/// 100/ratio * sqrt(mean_b RMSE_b^2 / mu_b^2), mu_b the reference band mean.
double ergas(const Tensor& ref, const Tensor& est, double ratio);

struct QnrResult {
    double d_lambda = 0.0;
    double d_s = 0.0;
    double qnr = 0.0;
};
/// No-reference index (1 - D_lambda)(1 - D_s). UIQI windows are
/// min(8, H, W) of the compared images.
QnrResult qnr(const Tensor& fused, const Tensor& lr_hsi, const Tensor& msi, int64_t ratio);

/// Structure-tensor coherence (l1 - l2) / (l1 + l2 + 1e-8) of the band mean,
/// smoothed with a Gaussian of sigma 1.5. Output [1,H,W] in [0,1].
Tensor anisotropy_map(const Tensor& img);

struct MetricReport {
    double psnr_db = 0.0;
    double sam_deg = 0.0;
    double ssim = 0.0;
    double uiqi = 0.0;
    double ergas = 0.0;
    std::optional<double> qnr;
    std::vector<double> band_psnr;

    /// One "key=value" line per metric, fixed key names.
    std::string to_text() const;
};

/// Full-reference report; adds QNR when both observations are supplied.
MetricReport evaluate(const Tensor& pred, const Tensor& ref, double ratio, const Tensor* lr_hsi = nullptr,
                      const Tensor* msi = nullptr);

}  // namespace hsifuse::metrics
