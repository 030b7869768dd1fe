#include "hsifuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "hsifuse/dataio.hpp"
#include "hsifuse/error.hpp"
#include "hsifuse/nn.hpp"

namespace hsifuse::metrics {

namespace {

struct Cube {
    int64_t c, h, w;
    std::vector<double> v;
    const double* band(int64_t b) const { return v.data() + b * h * w; }
};

Cube as_cube(const Tensor& t, const char* what) {
    if (!t.defined() || t.rank() != 3) throw ShapeError(std::string(what) + ": expected a [C,H,W] cube");
    Cube c{t.dim(0), t.dim(1), t.dim(2), t.to(DType::f64).to_vector()};
    for (double x : c.v)
        if (!std::isfinite(x)) throw NonFiniteError(std::string(what) + ": non-finite input");
    return c;
}

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Separable correlation with no padding: output (h-k+1) x (w-k+1).
std::vector<double> valid_filter(const double* x, int64_t h, int64_t w, const std::vector<double>& k) {
    const auto n = static_cast<int64_t>(k.size());
    const int64_t ho = h - n + 1, wo = w - n + 1;
    std::vector<double> tmp(static_cast<size_t>(h * wo));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t j = 0; j < wo; ++j) {
            double acc = 0;
            for (int64_t t = 0; t < n; ++t) acc += k[static_cast<size_t>(t)] * x[y * w + j + t];
            tmp[static_cast<size_t>(y * wo + j)] = acc;
        }
    std::vector<double> out(static_cast<size_t>(ho * wo));
    for (int64_t i = 0; i < ho; ++i)
        for (int64_t j = 0; j < wo; ++j) {
            double acc = 0;
            for (int64_t t = 0; t < n; ++t) acc += k[static_cast<size_t>(t)] * tmp[static_cast<size_t>((i + t) * wo + j)];
            out[static_cast<size_t>(i * wo + j)] = acc;
        }
    return out;
}

// Summed-area table with a zero first row and column.
std::vector<double> integral(const double* x, int64_t h, int64_t w) {
    std::vector<double> s(static_cast<size_t>((h + 1) * (w + 1)), 0.0);
    for (int64_t i = 0; i < h; ++i) {
        double row = 0;
        for (int64_t j = 0; j < w; ++j) {
            row += x[i * w + j];
            s[static_cast<size_t>((i + 1) * (w + 1) + j + 1)] = s[static_cast<size_t>(i * (w + 1) + j + 1)] + row;
        }
    }
    return s;
}

double box(const std::vector<double>& s, int64_t w, int64_t i, int64_t j, int64_t n) {
    const int64_t W = w + 1;
    return s[static_cast<size_t>((i + n) * W + j + n)] - s[static_cast<size_t>(i * W + j + n)] -
           s[static_cast<size_t>((i + n) * W + j)] + s[static_cast<size_t>(i * W + j)];
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> band_psnr(const Tensor& a, const Tensor& b, double peak) {
    same_shape(a, b, "psnr");
    const Cube x = as_cube(a, "psnr"), y = as_cube(b, "psnr");
    const int64_t P = x.h * x.w;
    std::vector<double> out;
    for (int64_t c = 0; c < x.c; ++c) {
        double se = 0;
        for (int64_t p = 0; p < P; ++p) {
            const double d = x.band(c)[p] - y.band(c)[p];
            se += d * d;
        }
        const double mse = se / static_cast<double>(P);
        out.push_back(mse == 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse)));
    }
    return out;
}

double psnr(const Tensor& a, const Tensor& b, double peak) { return mean_of(band_psnr(a, b, peak)); }

SamResult sam_detail(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "sam");
    const Cube x = as_cube(a, "sam"), y = as_cube(b, "sam");
    const int64_t P = x.h * x.w;
    SamResult r;
    double total = 0;
    for (int64_t p = 0; p < P; ++p) {
        double na = 0, nb = 0;
        for (int64_t c = 0; c < x.c; ++c) {
            na += x.band(c)[p] * x.band(c)[p];
            nb += y.band(c)[p] * y.band(c)[p];
        }
        if (na == 0.0 || nb == 0.0) {
            ++r.skipped;
            continue;
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        // 2 atan2(|u - v|, |u + v|) on unit vectors stays accurate near 0 and pi
        double dm = 0, dp = 0;
        for (int64_t c = 0; c < x.c; ++c) {
            const double u = x.band(c)[p] / na, v = y.band(c)[p] / nb;
            dm += (u - v) * (u - v);
            dp += (u + v) * (u + v);
        }
        total += 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
        ++r.pixels;
    }
    if (r.pixels == 0) throw MetricUndefined("sam: every pixel has a zero-norm spectrum");
    r.degrees = total / static_cast<double>(r.pixels) * 180.0 / std::numbers::pi;
    return r;
}

double sam(const Tensor& a, const Tensor& b) { return sam_detail(a, b).degrees; }

double ssim(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "ssim");
    const Cube x = as_cube(a, "ssim"), y = as_cube(b, "ssim");
    constexpr int64_t kWin = 11;
    if (x.h < kWin || x.w < kWin) throw ShapeError("ssim: images must be at least 11x11");
    const auto k = nn::gaussian_kernel(kWin, 1.5);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int64_t P = x.h * x.w;
    std::vector<double> xx(static_cast<size_t>(P)), yy(xx.size()), xy(xx.size());
    double total = 0;
    for (int64_t c = 0; c < x.c; ++c) {
        const double* u = x.band(c);
        const double* v = y.band(c);
        for (int64_t p = 0; p < P; ++p) {
            xx[static_cast<size_t>(p)] = u[p] * u[p];
            yy[static_cast<size_t>(p)] = v[p] * v[p];
            xy[static_cast<size_t>(p)] = u[p] * v[p];
        }
        const auto mu = valid_filter(u, x.h, x.w, k), mv = valid_filter(v, x.h, x.w, k);
        const auto euu = valid_filter(xx.data(), x.h, x.w, k), evv = valid_filter(yy.data(), x.h, x.w, k),
                   euv = valid_filter(xy.data(), x.h, x.w, k);
        double s = 0;
        for (size_t i = 0; i < mu.size(); ++i) {
            const double su = euu[i] - mu[i] * mu[i], sv = evv[i] - mv[i] * mv[i], suv = euv[i] - mu[i] * mv[i];
            s += ((2 * mu[i] * mv[i] + c1) * (2 * suv + c2)) /
                 ((mu[i] * mu[i] + mv[i] * mv[i] + c1) * (su + sv + c2));
        }
        total += s / static_cast<double>(mu.size());
    }
    return total / static_cast<double>(x.c);
}

double uiqi_band(const double* a, const double* b, int64_t h, int64_t w, int64_t window) {
    if (window < 2 || window > h || window > w)
        throw ShapeError("uiqi: window " + std::to_string(window) + " does not fit a " + std::to_string(h) + "x" +
                         std::to_string(w) + " image");
    const int64_t P = h * w;
    std::vector<double> aa(static_cast<size_t>(P)), bb(aa.size()), ab(aa.size());
    for (int64_t p = 0; p < P; ++p) {
        aa[static_cast<size_t>(p)] = a[p] * a[p];
        bb[static_cast<size_t>(p)] = b[p] * b[p];
        ab[static_cast<size_t>(p)] = a[p] * b[p];
    }
    const auto sa = integral(a, h, w), sb = integral(b, h, w), saa = integral(aa.data(), h, w),
               sbb = integral(bb.data(), h, w), sab = integral(ab.data(), h, w);
    const double n = static_cast<double>(window * window);
    double total = 0;
    int64_t count = 0;
    for (int64_t i = 0; i + window <= h; ++i)
        for (int64_t j = 0; j + window <= w; ++j) {
            const double ma = box(sa, w, i, j, window) / n, mb = box(sb, w, i, j, window) / n;
            const double va = std::max(0.0, box(saa, w, i, j, window) / n - ma * ma);
            const double vb = std::max(0.0, box(sbb, w, i, j, window) / n - mb * mb);
            const double cov = box(sab, w, i, j, window) / n - ma * mb;
            const double var_sum = va + vb, mean_sq = ma * ma + mb * mb;
            double q;
            if (var_sum == 0.0 && mean_sq == 0.0)
                q = 1.0;
            else if (var_sum == 0.0)
                q = 2 * ma * mb / mean_sq;
            else if (mean_sq == 0.0)
                q = 2 * cov / var_sum;
            else
                q = 4 * cov * ma * mb / (var_sum * mean_sq);
            total += q;
            ++count;
        }
    return total / static_cast<double>(count);
}

double uiqi(const Tensor& a, const Tensor& b, int64_t window) {
    same_shape(a, b, "uiqi");
    const Cube x = as_cube(a, "uiqi"), y = as_cube(b, "uiqi");
    double total = 0;
    for (int64_t c = 0; c < x.c; ++c) total += uiqi_band(x.band(c), y.band(c), x.h, x.w, window);
    return total / static_cast<double>(x.c);
}

double ergas(const Tensor& ref, const Tensor& est, double ratio) {
    same_shape(ref, est, "ergas");
    if (!(ratio > 0)) throw ConfigError("ergas: ratio must be positive");
    const Cube r = as_cube(ref, "ergas"), e = as_cube(est, "ergas");
    const int64_t P = r.h * r.w;
    double acc = 0;
    for (int64_t c = 0; c < r.c; ++c) {
        double se = 0, mu = 0;
        for (int64_t p = 0; p < P; ++p) {
            const double d = r.band(c)[p] - e.band(c)[p];
            se += d * d;
            mu += r.band(c)[p];
        }
        mu /= static_cast<double>(P);
        if (mu == 0.0) throw MetricUndefined("ergas: reference band " + std::to_string(c) + " has zero mean");
        acc += (se / static_cast<double>(P)) / (mu * mu);
    }
    return 100.0 / ratio * std::sqrt(acc / static_cast<double>(r.c));
}

QnrResult qnr(const Tensor& fused, const Tensor& lr_hsi, const Tensor& msi, int64_t ratio) {
    const Cube f = as_cube(fused, "qnr"), x = as_cube(lr_hsi, "qnr"), y = as_cube(msi, "qnr");
    if (x.c != f.c || x.h * ratio != f.h || x.w * ratio != f.w)
        throw ShapeError("qnr: low-resolution cube does not match the fused cube at ratio " + std::to_string(ratio));
    if (y.h != f.h || y.w != f.w) throw ShapeError("qnr: MSI size does not match the fused cube");
    if (f.c < 2) throw MetricUndefined("qnr: spectral distortion needs at least two bands");

    // windows cover the same ground area at both resolutions
    const int64_t win_lo = std::min<int64_t>({8, x.h, x.w});
    const int64_t win_hi = win_lo * ratio;
    QnrResult r;
    double dl = 0;
    for (int64_t i = 0; i < f.c; ++i)
        for (int64_t j = i + 1; j < f.c; ++j) {
            const double qf = uiqi_band(f.band(i), f.band(j), f.h, f.w, win_hi);
            const double qx = uiqi_band(x.band(i), x.band(j), x.h, x.w, win_lo);
            dl += std::abs(qf - qx);
        }
    r.d_lambda = dl / static_cast<double>(f.c * (f.c - 1) / 2);

    // band-to-MSI relations at full resolution against the same relations
    // after both sides pass through the spatial degradation
    const Cube fd = as_cube(data::degrade_spatial(fused.to(DType::f64), ratio), "qnr");
    const Cube yd = as_cube(data::degrade_spatial(msi.to(DType::f64), ratio), "qnr");
    double ds = 0;
    for (int64_t i = 0; i < f.c; ++i)
        for (int64_t j = 0; j < y.c; ++j) {
            const double qh = uiqi_band(f.band(i), y.band(j), f.h, f.w, win_hi);
            const double ql = uiqi_band(fd.band(i), yd.band(j), fd.h, fd.w, win_lo);
            ds += std::abs(qh - ql);
        }
    r.d_s = ds / static_cast<double>(f.c * y.c);
    r.qnr = (1.0 - r.d_lambda) * (1.0 - r.d_s);
    return r;
}

Tensor anisotropy_map(const Tensor& img) {
    const Cube x = as_cube(img, "anisotropy_map");
    const int64_t H = x.h, W = x.w, P = H * W;
    std::vector<double> m(static_cast<size_t>(P), 0.0);
    for (int64_t c = 0; c < x.c; ++c)
        for (int64_t p = 0; p < P; ++p) m[static_cast<size_t>(p)] += x.band(c)[p];
    for (auto& v : m) v /= static_cast<double>(x.c);

    auto px = [&](int64_t i, int64_t j) {
        return m[static_cast<size_t>(nn::pad_index(i, H, nn::PadMode::reflect) * W +
                                     nn::pad_index(j, W, nn::PadMode::reflect))];
    };
    std::vector<double> jt(static_cast<size_t>(3 * P));
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            const double gx = 0.5 * (px(i, j + 1) - px(i, j - 1));
            const double gy = 0.5 * (px(i + 1, j) - px(i - 1, j));
            jt[static_cast<size_t>(i * W + j)] = gx * gx;
            jt[static_cast<size_t>(P + i * W + j)] = gx * gy;
            jt[static_cast<size_t>(2 * P + i * W + j)] = gy * gy;
        }
    Tensor smoothed;
    {
        NoGradGuard no_grad;
        smoothed = nn::separable_gaussian(ops::constant(Tensor::from({3, H, W}, jt, DType::f64)), 11, 1.5).value();
    }
    const auto s = smoothed.data<double>();
    std::vector<double> out(static_cast<size_t>(P));
    for (int64_t p = 0; p < P; ++p) {
        const double jxx = s[static_cast<size_t>(p)], jxy = s[static_cast<size_t>(P + p)],
                     jyy = s[static_cast<size_t>(2 * P + p)];
        const double half = 0.5 * (jxx - jyy);
        const double root = std::sqrt(half * half + jxy * jxy);
        const double tr = jxx + jyy;
        // l1 - l2 = 2 root, l1 + l2 = trace
        out[static_cast<size_t>(p)] = std::clamp(2.0 * root / (std::max(tr, 0.0) + 1e-8), 0.0, 1.0);
    }
    return Tensor::from({1, H, W}, out, DType::f64);
}

std::string MetricReport::to_text() const {
    std::string s;
    char buf[96];
    auto line = [&](const char* key, double v) {
        std::snprintf(buf, sizeof buf, "%s=%.6f\n", key, v);
        s += buf;
    };
    line("psnr_db", psnr_db);
    line("sam_deg", sam_deg);
    line("ssim", ssim);
    line("uiqi", uiqi);
    line("ergas", ergas);
    if (qnr) line("qnr", *qnr);
    return s;
}

MetricReport evaluate(const Tensor& pred, const Tensor& ref, double ratio, const Tensor* lr_hsi, const Tensor* msi) {
    MetricReport r;
    r.band_psnr = band_psnr(pred, ref);
    r.psnr_db = mean_of(r.band_psnr);
    r.sam_deg = sam(pred, ref);
    r.ssim = ssim(pred, ref);
    r.uiqi = uiqi(pred, ref, std::min<int64_t>({8, pred.dim(1), pred.dim(2)}));
    r.ergas = ergas(ref, pred, ratio);
    if (lr_hsi && msi) r.qnr = qnr(pred, *lr_hsi, *msi, static_cast<int64_t>(ratio)).qnr;
    return r;
}

}  // namespace hsifuse::metrics
