#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "hsifuse/dataio.hpp"
#include "hsifuse/error.hpp"
#include "hsifuse/metrics.hpp"
#include "metric_oracles.hpp"
#include "scenes.hpp"

using namespace hsifuse;
namespace m = hsifuse::metrics;
using th::ssim_oracle;
using th::uiqi_oracle;

namespace {

Tensor rand_cube(Shape s, uint64_t seed, double lo = 0.05, double hi = 0.95) {
    Rng r(seed);
    return Tensor::uniform(std::move(s), r, lo, hi, DType::f64);
}

Tensor map(const Tensor& t, const std::function<double(double)>& f) {
    std::vector<double> v = t.to_vector();
    for (auto& x : v) x = f(x);
    return Tensor::from(t.shape(), v, DType::f64);
}

}  // namespace

TEST_CASE("psnr") {
    const Tensor a = rand_cube({4, 12, 12}, 1, 0.1, 0.8);
    CHECK(m::psnr(a, a) == m::kPsnrCap);
    CHECK(std::abs(m::psnr(a, map(a, [](double x) { return x + 0.1; })) - 20.0) < 1e-9);

    SUBCASE("direct oracle") {
        const Tensor b = rand_cube({4, 12, 12}, 2);
        double acc = 0;
        for (int64_t c = 0; c < 4; ++c) {
            double mse = 0;
            for (int64_t y = 0; y < 12; ++y)
                for (int64_t x = 0; x < 12; ++x) mse += std::pow(a.at({c, y, x}) - b.at({c, y, x}), 2);
            acc += 10 * std::log10(1.0 / (mse / 144));
        }
        CHECK(std::abs(m::psnr(a, b) - acc / 4) < 1e-6);
        CHECK(m::psnr(a, b) == m::psnr(b, a));
        const auto per = m::band_psnr(a, b);
        REQUIRE(per.size() == 4);
    }
    SUBCASE("noise sweep is strictly decreasing") {
        Rng r(3);
        const Tensor noise = Tensor::normal({4, 12, 12}, r, 0.0, 1.0, DType::f64);
        double prev = 1e9;
        for (int k = 1; k <= 10; ++k) {
            std::vector<double> v = a.to_vector();
            for (int64_t i = 0; i < a.numel(); ++i) v[static_cast<size_t>(i)] += 0.01 * k * noise.flat(i);
            const double p = m::psnr(a, Tensor::from(a.shape(), v, DType::f64));
            CHECK(p < prev);
            prev = p;
        }
    }
    CHECK_THROWS_AS(m::psnr(a, rand_cube({4, 12, 10}, 1)), ShapeError);
}

TEST_CASE("sam analytic angles and invariances") {
    auto px = [](std::vector<double> v) { return Tensor::from({static_cast<int64_t>(v.size()), 1, 1}, v, DType::f64); };
    CHECK(std::abs(m::sam(px({1, 0, 0}), px({0, 1, 0})) - 90.0) < 1e-6);
    CHECK(std::abs(m::sam(px({1, 1}), px({1, 0})) - 45.0) < 1e-6);
    CHECK(std::abs(m::sam(px({0.3, 0.2, 0.7}), px({0.6, 0.4, 1.4}))) < 1e-6);

    const Tensor a = rand_cube({5, 6, 6}, 4), b = rand_cube({5, 6, 6}, 5);
    CHECK(m::sam(a, b) == doctest::Approx(m::sam(b, a)).epsilon(1e-12));
    // per-pixel positive scaling of either argument
    Rng r(6);
    std::vector<double> sv = b.to_vector();
    for (int64_t p = 0; p < 36; ++p) {
        const double s = r.uniform(0.1, 10.0);
        for (int64_t c = 0; c < 5; ++c) sv[static_cast<size_t>(c * 36 + p)] *= s;
    }
    CHECK(std::abs(m::sam(a, Tensor::from(b.shape(), sv, DType::f64)) - m::sam(a, b)) < 1e-9);

    // direct arccos oracle
    double acc = 0;
    for (int64_t y = 0; y < 6; ++y)
        for (int64_t x = 0; x < 6; ++x) {
            double d = 0, na = 0, nb = 0;
            for (int64_t c = 0; c < 5; ++c) {
                d += a.at({c, y, x}) * b.at({c, y, x});
                na += a.at({c, y, x}) * a.at({c, y, x});
                nb += b.at({c, y, x}) * b.at({c, y, x});
            }
            acc += std::acos(d / std::sqrt(na * nb)) * 180.0 / std::numbers::pi;
        }
    CHECK(std::abs(m::sam(a, b) - acc / 36) < 1e-9);

    SUBCASE("zero-norm pixels are skipped") {
        std::vector<double> v = a.to_vector();
        for (int64_t c = 0; c < 5; ++c) v[static_cast<size_t>(c * 36)] = 0;
        const auto d = m::sam_detail(Tensor::from(a.shape(), v, DType::f64), b);
        CHECK(d.skipped == 1);
        CHECK(d.pixels == 35);
        CHECK_THROWS_AS(m::sam(Tensor::zeros({3, 2, 2}, DType::f64), b.clone()), ShapeError);
        CHECK_THROWS_AS(m::sam(Tensor::zeros({5, 6, 6}, DType::f64), b), MetricUndefined);
    }
}

TEST_CASE("ssim matches the windowed oracle") {
    const Tensor a = rand_cube({1, 16, 16}, 7, 0, 1);
    const Tensor b = rand_cube({1, 16, 16}, 8, 0, 1);
    CHECK(std::abs(m::ssim(a, a) - 1.0) < 1e-12);
    CHECK(std::abs(m::ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
    const Tensor c = map(a, [](double x) { return 0.7 * x + 0.1; });
    CHECK(std::abs(m::ssim(a, c) - ssim_oracle(a, c)) < 1e-6);
    CHECK(std::abs(m::ssim(a, c) - m::ssim(c, a)) < 1e-12);
    CHECK_THROWS_AS(m::ssim(rand_cube({1, 10, 16}, 1), rand_cube({1, 10, 16}, 2)), ShapeError);
}

TEST_CASE("uiqi") {
    std::vector<double> ramp;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) ramp.push_back(0.1 + 0.01 * (8 * y + x));
    const Tensor a = Tensor::from({1, 8, 8}, ramp, DType::f64);
    const Tensor b = map(a, [](double x) { return 0.9 - x; });
    CHECK(m::uiqi(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    const double q = m::uiqi(a, b);
    CHECK(q < 0);
    CHECK(std::abs(q - uiqi_oracle(a, b, 8)) < 1e-6);

    const Tensor r1 = rand_cube({3, 13, 11}, 9), r2 = rand_cube({3, 13, 11}, 10);
    CHECK(std::abs(m::uiqi(r1, r2) - uiqi_oracle(r1, r2, 8)) < 1e-6);
    CHECK(std::abs(m::uiqi(r1, r2) - m::uiqi(r2, r1)) < 1e-12);
    CHECK(std::abs(m::uiqi(r1, r2, 4) - uiqi_oracle(r1, r2, 4)) < 1e-6);
    CHECK_THROWS_AS(m::uiqi(rand_cube({1, 6, 6}, 1), rand_cube({1, 6, 6}, 2)), ShapeError);
}

TEST_CASE("ergas") {
    const Tensor ref = rand_cube({4, 8, 8}, 11, 0.2, 0.9);
    CHECK(m::ergas(ref, ref, 4) == 0.0);
    const Tensor flat = Tensor::full({1, 8, 8}, 0.4, DType::f64);
    const double d = 0.07;
    CHECK(std::abs(m::ergas(flat, map(flat, [&](double x) { return x * (1 + d); }), 4) - 100.0 / 4 * d) < 1e-9);

    const Tensor est = rand_cube({4, 8, 8}, 12, 0.2, 0.9);
    double s = 0;
    for (int64_t c = 0; c < 4; ++c) {
        double mse = 0, mu = 0;
        for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x) {
                mse += std::pow(ref.at({c, y, x}) - est.at({c, y, x}), 2);
                mu += ref.at({c, y, x});
            }
        mse /= 64;
        mu /= 64;
        s += mse / (mu * mu);
    }
    CHECK(std::abs(m::ergas(ref, est, 4) - 100.0 / 4 * std::sqrt(s / 4)) < 1e-9);
    // the reference is special: swapping arguments changes the score
    CHECK(std::abs(m::ergas(ref, est, 4) - m::ergas(est, ref, 4)) > 1e-6);
    CHECK_THROWS_AS(m::ergas(Tensor::zeros({1, 8, 8}, DType::f64), flat, 4), MetricUndefined);
}

TEST_CASE("qnr") {
    data::SceneSpec spec;
    spec.seed = 21;
    spec.bands = 8;
    spec.height = 32;
    spec.width = 32;
    // two endmembers: every band is an affine function of one abundance map,
    // so band-to-band UIQI survives blur and decimation
    spec.endmembers = 2;
    const Tensor z = data::gen_scene(spec);
    const Tensor x = data::degrade_spatial(z, 4);
    const Tensor y = data::degrade_spectral(z, 3);
    const auto good = m::qnr(z, x, y, 4);
    INFO("d_lambda=" << good.d_lambda << " d_s=" << good.d_s);
    CHECK(good.qnr > 0.95);
    CHECK(good.qnr == doctest::Approx((1 - good.d_lambda) * (1 - good.d_s)).epsilon(1e-12));

    SUBCASE("band shuffle lowers the score") {
        std::vector<double> v = z.to_vector();
        const int64_t n = 32 * 32;
        // reverse the band order
        std::vector<double> s(v.size());
        for (int64_t c = 0; c < 8; ++c) std::copy_n(v.begin() + c * n, n, s.begin() + (7 - c) * n);
        const auto bad = m::qnr(Tensor::from(z.shape(), s, DType::f64), x, y, 4);
        CHECK(bad.qnr < good.qnr);
    }
    SUBCASE("range on random triples") {
        for (uint64_t k = 0; k < 50; ++k) {
            const Tensor f = rand_cube({4, 16, 16}, 100 + k, 0.01, 1.0);
            const Tensor lr = rand_cube({4, 4, 4}, 200 + k, 0.01, 1.0);
            const Tensor ms = rand_cube({2, 16, 16}, 300 + k, 0.01, 1.0);
            const auto q = m::qnr(f, lr, ms, 4);
            CHECK(q.qnr >= 0.0);
            CHECK(q.qnr <= 1.0);
        }
    }
}

TEST_CASE("anisotropy map") {
    const Tensor flat = Tensor::full({3, 24, 24}, 0.5, DType::f64);
    const Tensor a0 = m::anisotropy_map(flat);
    CHECK(a0.shape() == Shape{1, 24, 24});
    for (int64_t i = 0; i < a0.numel(); ++i) CHECK(a0.flat(i) == 0.0);

    for (double phi : {0.0, 0.6, 1.2, 2.0}) {
        const Tensor line = th::stripe_image(48, phi, 23.5, 23.5, 2.0);
        const Tensor a = m::anisotropy_map(line);
        double s = 0;
        int64_t n = 0;
        for (int64_t yy = 12; yy < 36; ++yy)
            for (int64_t xx = 12; xx < 36; ++xx)
                if (line.at({0, yy, xx}) > 0.3) {
                    s += a.at({0, yy, xx});
                    ++n;
                }
        INFO("phi=" << phi);
        REQUIRE(n > 10);
        CHECK(s / static_cast<double>(n) > 0.8);
    }
    const Tensor blob = th::blob_image(33, 4.0, 4.0);
    CHECK(m::anisotropy_map(blob).at({0, 16, 16}) < 0.2);
    const Tensor a = m::anisotropy_map(blob);
    for (int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a.flat(i) >= 0.0);
        CHECK(a.flat(i) <= 1.0);
    }
}

TEST_CASE("report text and evaluate") {
    const Tensor a = rand_cube({3, 16, 16}, 30);
    const auto r = m::evaluate(a, a, 4);
    CHECK(r.psnr_db == m::kPsnrCap);
    CHECK(r.sam_deg == 0.0);
    CHECK(r.ergas == 0.0);
    CHECK(!r.qnr.has_value());
    const std::string t = r.to_text();
    for (const char* k : {"psnr_db=", "sam_deg=", "ssim=", "uiqi=", "ergas="}) CHECK(t.find(k) != std::string::npos);
    CHECK(t.find("qnr=") == std::string::npos);
    const Tensor lr = data::degrade_spatial(a, 4), ms = data::degrade_spectral(a, 2);
    const auto r2 = m::evaluate(a, a, 4, &lr, &ms);
    REQUIRE(r2.qnr.has_value());
    CHECK(r2.to_text().find("qnr=") != std::string::npos);
}
