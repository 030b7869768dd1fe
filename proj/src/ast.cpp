#include "hsifuse/ast.hpp"

#include <cmath>
#include <numbers>

namespace hsifuse::ast {

Pyramid pyramid_decompose(const Var& f) {
    if (f.rank() != 3) throw ShapeError("pyramid_decompose expects [C,H,W], got " + shape_str(f.shape()));
    if (f.dim(1) < 16 || f.dim(2) < 16)
        throw ShapeError("pyramid_decompose needs H,W >= 16, got " + shape_str(f.shape()));
    Pyramid p;
    Var level = f;
    for (int k = 0; k < kLevels; ++k) {
        if (k > 0) level = nn::avgpool2(p.details.back());
        p.details.push_back(nn::separable_gaussian(level, kPyramidSizes[static_cast<size_t>(k)],
                                                   kPyramidSigmas[static_cast<size_t>(k)]));
    }
    return p;
}

Var radon_approx(const Var& d, const Var& theta) {
    if (d.rank() != 3) throw ShapeError("radon_approx expects [C,h,w], got " + shape_str(d.shape()));
    const int64_t h = d.dim(1), w = d.dim(2);
    if (h < 2 || w < 2) throw ShapeError("radon_approx needs h,w >= 2");
    Var rotated = nn::grid_sample(d, nn::rotation_grid(theta, h, w));  // [K,C,h,w]
    return ops::mean(rotated, {2});
}

HaarBands haar_fwd(const Var& p) {
    const int64_t n = p.dim(-1);
    if (n < 2) throw ShapeError("haar_fwd needs at least 2 samples along the last axis");
    Var x = p;
    if (n % 2 == 1) x = ops::concat({p, ops::slice(p, -1, n - 1, 1)}, -1);
    const int64_t m = x.dim(-1) / 2;
    Shape pairs = x.shape();
    pairs.back() = m;
    pairs.push_back(2);
    Var xp = ops::reshape(x, pairs);
    Var a = ops::slice(xp, -1, 0, 1), b = ops::slice(xp, -1, 1, 1);
    Shape band = x.shape();
    band.back() = m;
    const double r = 1.0 / std::numbers::sqrt2;
    return {ops::reshape(ops::scale(ops::add(a, b), r), band), ops::reshape(ops::scale(ops::sub(a, b), r), band), n};
}

Var haar_inv(const HaarBands& bands) {
    if (bands.low.shape() != bands.high.shape()) throw ShapeError("haar_inv band shapes differ");
    const double r = 1.0 / std::numbers::sqrt2;
    Shape col = bands.low.shape();
    col.push_back(1);
    Var lo = ops::reshape(bands.low, col), hi = ops::reshape(bands.high, col);
    Var a = ops::scale(ops::add(lo, hi), r), b = ops::scale(ops::sub(lo, hi), r);
    Shape out = bands.low.shape();
    out.back() *= 2;
    Var x = ops::reshape(ops::concat({a, b}, -1), out);
    const int64_t n = bands.length > 0 ? bands.length : out.back();
    if (n != out.back()) x = ops::slice(x, -1, 0, n);
    return x;
}

Var backproject(const Var& q, const Var& theta, int64_t out_h, int64_t out_w) {
    if (q.rank() != 3) throw ShapeError("backproject expects [K,C,w], got " + shape_str(q.shape()));
    if (q.dim(0) != theta.dim(0)) throw ShapeError("backproject direction count mismatch");
    if (q.dim(2) != out_w) throw ShapeError("backproject projection length must equal output width");
    const int64_t K = q.dim(0), C = q.dim(1);
    Var tiled = ops::expand(ops::reshape(q, {K, C, 1, out_w}), {K, C, out_h, out_w});
    Var back = nn::grid_sample(tiled, nn::rotation_grid(ops::neg(theta), out_h, out_w));  // [K,C,h,w]
    return ops::mean(back, {0});
}

DirectionPredictor::DirectionPredictor(nn::ParamFactory& pf, const std::string& name, const AstConfig& cfg)
    : conv1(pf, name + ".conv1", cfg.channels, cfg.predictor_width, 3),
      conv2(pf, name + ".conv2", cfg.predictor_width, cfg.predictor_width, 3),
      fc1(pf, name + ".fc1", cfg.predictor_width * 64, cfg.predictor_hidden),
      fc2(pf, name + ".fc2", cfg.predictor_hidden, cfg.directions) {
    // spread the starting angles evenly over [0, pi)
    Tensor b = fc2.b.value().clone();
    dispatch(b.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = b.mutable_data<T>();
        const auto K = static_cast<double>(d.size());
        for (size_t i = 0; i < d.size(); ++i) {
            const double u = (static_cast<double>(i) + 0.5) / K;
            d[i] = static_cast<T>(std::log(u / (1.0 - u)));
        }
    });
    fc2.b.set_value(b);
}

Var DirectionPredictor::operator()(const Var& f) const {
    Var h = ops::relu(conv2(ops::relu(conv1(f))));
    Var pooled = nn::adaptive_avgpool(h, 8, 8);
    Var v = ops::reshape(pooled, {pooled.value().numel()});
    return ops::scale(ops::sigmoid(fc2(ops::relu(fc1(v)))), std::numbers::pi);
}

Ast::Ast(nn::ParamFactory& pf, const std::string& name, const AstConfig& cfg)
    : predictor(pf, name + ".dir", cfg),
      psi_mix(pf, name + ".psi_mix", (kLevels + 1) * cfg.channels, cfg.channels, 1, cfg.psi_init),
      psi_out(pf, name + ".psi_out", cfg.channels, cfg.channels, 3, cfg.psi_init),
      cfg_(cfg) {
    if (cfg.directions < 1) throw ConfigError("AST needs at least one direction");
    for (int k = 0; k < kLevels; ++k) {
        const std::string lv = name + ".level" + std::to_string(k + 1);
        alpha[static_cast<size_t>(k)] = pf.constant(lv + ".alpha", {1}, 0.1);
        mask[static_cast<size_t>(k)] = pf.constant(lv + ".mask", {cfg.directions, 2}, 1.0);
    }
}

Var Ast::enhance_subband(const Var& d, const Var& theta, int level) const {
    const int64_t K = theta.dim(0);
    const Var& m = mask[static_cast<size_t>(level)];
    if (m.dim(0) != K) throw ShapeError("mask direction count does not match predicted angles");
    HaarBands bands = haar_fwd(radon_approx(d, theta));
    bands.low = ops::mul(bands.low, ops::reshape(ops::slice(m, 1, 0, 1), {K, 1, 1}));
    bands.high = ops::mul(bands.high, ops::reshape(ops::slice(m, 1, 1, 1), {K, 1, 1}));
    Var b = backproject(haar_inv(bands), theta, d.dim(1), d.dim(2));
    return ops::add(d, ops::mul(b, alpha[static_cast<size_t>(level)]));
}

Var Ast::forward(const Var& f) const {
    const Pyramid pyr = pyramid_decompose(f);
    const Var theta = predictor(f);
    const int64_t H = f.dim(1), W = f.dim(2);
    std::vector<Var> parts;
    for (int k = 0; k < kLevels; ++k) {
        Var e = enhance_subband(pyr.details[static_cast<size_t>(k)], theta, k);
        parts.push_back(k == 0 ? e : nn::resize_bilinear(e, H, W));
    }
    parts.push_back(nn::resize_bilinear(pyr.coarse(), H, W));
    return ops::leaky_relu(psi_out(psi_mix(ops::concat(parts, 0))), 0.2);
}

}  // namespace hsifuse::ast
