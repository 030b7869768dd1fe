#include "hsifuse/nn.hpp"

#include <cmath>
#include <memory>

#include "hsifuse/kernels.hpp"

namespace hsifuse::nn {

int64_t pad_index(int64_t i, int64_t n, PadMode mode) {
    if (i >= 0 && i < n) return i;
    if (mode == PadMode::zero) return -1;
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

namespace {

void require_rank(const Var& x, int64_t r, const char* what) {
    if (x.rank() != r)
        throw ShapeError(std::string(what) + " expects rank " + std::to_string(r) + ", got " + shape_str(x.shape()));
}

// Planes of the last two axes: [P, H, W].
struct Planes {
    int64_t count, h, w;
};
Planes planes_of(const Shape& s, const char* what) {
    if (s.size() < 2) throw ShapeError(std::string(what) + " needs at least two axes, got " + shape_str(s));
    const int64_t h = s[s.size() - 2], w = s[s.size() - 1];
    return {shape_numel(s) / (h * w), h, w};
}

Shape with_hw(Shape s, int64_t h, int64_t w) {
    s[s.size() - 2] = h;
    s[s.size() - 1] = w;
    return s;
}

}  // namespace

// ---------------------------------------------------------------- conv2d

Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec) {
    require_rank(x, 3, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C)
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(C) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != O)) throw ShapeError("conv2d bias shape mismatch");
    if (spec.stride < 1) throw ConfigError("conv2d stride must be >= 1");
    const int64_t Ho = (H + 2 * spec.padding - kh) / spec.stride + 1;
    const int64_t Wo = (W + 2 * spec.padding - kw) / spec.stride + 1;
    if (H + 2 * spec.padding < kh || W + 2 * spec.padding < kw || Ho < 1 || Wo < 1)
        throw ShapeError("conv2d kernel larger than padded input");
    const int64_t K = C * kh * kw, N = Ho * Wo;
    const bool direct = kh == 1 && kw == 1 && spec.stride == 1 && spec.padding == 0;

    // col[k, n] = x.flat[table[k*N + n]] (or 0 when -1)
    std::shared_ptr<std::vector<int32_t>> table;
    if (!direct) {
        table = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(K * N));
        auto& t = *table;
        for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < kh; ++dy)
                for (int64_t dx = 0; dx < kw; ++dx) {
                    const int64_t row = (c * kh + dy) * kw + dx;
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        const int64_t iy = pad_index(oy * spec.stride - spec.padding + dy, H, spec.pad_mode);
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            const int64_t ix = pad_index(ox * spec.stride - spec.padding + dx, W, spec.pad_mode);
                            t[static_cast<size_t>(row * N + oy * Wo + ox)] =
                                (iy < 0 || ix < 0) ? -1 : static_cast<int32_t>((c * H + iy) * W + ix);
                        }
                    }
                }
    }

    auto gather = [table, K, N](auto tag, std::span<const decltype(tag)> xs) {
        using T = decltype(tag);
        std::vector<T> col(static_cast<size_t>(K * N));
        const auto& t = *table;
        for (size_t i = 0; i < col.size(); ++i) col[i] = t[i] < 0 ? T(0) : xs[static_cast<size_t>(t[i])];
        return col;
    };

    Tensor out = Tensor::zeros({O, Ho, Wo}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.value().data<T>();
        auto ws = w.value().data<T>();
        auto ys = out.mutable_data<T>();
        std::vector<T> col;
        const T* colp = xs.data();
        if (!direct) {
            col = gather(tag, xs);
            colp = col.data();
        }
        kernels::gemm_nn(ys.data(), ws.data(), colp, O, K, N, false);
        if (b.defined()) {
            auto bs = b.value().data<T>();
            for (int64_t o = 0; o < O; ++o)
                for (int64_t n = 0; n < N; ++n) ys[static_cast<size_t>(o * N + n)] += bs[static_cast<size_t>(o)];
        }
    });

    std::vector<Var> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_result("conv2d", out, parents, [=](Node& n) {
        Node& nx = *n.parents[0];
        Node& nw = *n.parents[1];
        dispatch(n.value.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto g = n.grad.data<T>();
            auto xs = nx.value.data<T>();
            auto ws = nw.value.data<T>();
            if (nw.requires_grad) {
                std::vector<T> col;
                const T* colp = xs.data();
                if (!direct) {
                    col = gather(tag, xs);
                    colp = col.data();
                }
                Tensor gw = Tensor::zeros(nw.value.shape(), nw.value.dtype());
                kernels::gemm_nt(gw.mutable_data<T>().data(), g.data(), colp, O, N, K, false);
                accumulate_grad(nw, gw);
            }
            if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
                Node& nb = *n.parents[2];
                Tensor gb = Tensor::zeros(nb.value.shape(), nb.value.dtype());
                auto pb = gb.mutable_data<T>();
                for (int64_t o = 0; o < O; ++o) {
                    T s = 0;
                    for (int64_t k = 0; k < N; ++k) s += g[static_cast<size_t>(o * N + k)];
                    pb[static_cast<size_t>(o)] = s;
                }
                accumulate_grad(nb, gb);
            }
            if (nx.requires_grad) {
                Tensor gx = Tensor::zeros(nx.value.shape(), nx.value.dtype());
                auto px = gx.mutable_data<T>();
                if (direct) {
                    kernels::gemm_tn(px.data(), ws.data(), g.data(), K, O, N, false);
                } else {
                    std::vector<T> dcol(static_cast<size_t>(K * N));
                    kernels::gemm_tn(dcol.data(), ws.data(), g.data(), K, O, N, false);
                    const auto& t = *table;
                    for (size_t i = 0; i < dcol.size(); ++i)
                        if (t[i] >= 0) px[static_cast<size_t>(t[i])] += dcol[i];
                }
                accumulate_grad(nx, gx);
            }
        });
    });
}

// ---------------------------------------------------------------- filters

std::vector<double> gaussian_kernel(int64_t size, double sigma) {
    if (size < 1) throw ConfigError("gaussian kernel size must be >= 1");
    if (!(sigma > 0)) throw ConfigError("gaussian sigma must be > 0");
    std::vector<double> k(static_cast<size_t>(size));
    const double c = 0.5 * static_cast<double>(size - 1);
    double s = 0;
    for (int64_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        s += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= s;
    return k;
}

Var filter1d(const Var& x, std::vector<double> kernel, int64_t axis, PadMode mode) {
    axis = detail::norm_axis(axis, x.rank());
    const Shape& s = x.shape();
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    const int64_t len = s[static_cast<size_t>(axis)];
    const auto taps = static_cast<int64_t>(kernel.size());
    const int64_t r = (taps - 1) / 2;
    // src[i*taps + t] = source index along the axis, -1 for zero padding
    auto src = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(len * taps));
    for (int64_t i = 0; i < len; ++i)
        for (int64_t t = 0; t < taps; ++t) (*src)[static_cast<size_t>(i * taps + t)] = pad_index(i + t - r, len, mode);

    Tensor out = Tensor::zeros(s, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.value().data<T>();
        auto ys = out.mutable_data<T>();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < len; ++i) {
                T* y = ys.data() + (o * len + i) * inner;
                for (int64_t t = 0; t < taps; ++t) {
                    const int64_t j = (*src)[static_cast<size_t>(i * taps + t)];
                    if (j < 0) continue;
                    const T k = static_cast<T>(kernel[static_cast<size_t>(t)]);
                    const T* xr = xs.data() + (o * len + j) * inner;
                    for (int64_t q = 0; q < inner; ++q) y[q] += k * xr[q];
                }
            }
    });
    return make_result("filter1d", out, {x}, [=](Node& n) {
        Node& p = *n.parents[0];
        Tensor gx = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(gx.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto g = n.grad.data<T>();
            auto px = gx.mutable_data<T>();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < len; ++i) {
                    const T* gy = g.data() + (o * len + i) * inner;
                    for (int64_t t = 0; t < taps; ++t) {
                        const int64_t j = (*src)[static_cast<size_t>(i * taps + t)];
                        if (j < 0) continue;
                        const T k = static_cast<T>(kernel[static_cast<size_t>(t)]);
                        T* gr = px.data() + (o * len + j) * inner;
                        for (int64_t q = 0; q < inner; ++q) gr[q] += k * gy[q];
                    }
                }
        });
        accumulate_grad(p, gx);
    });
}

Var separable_gaussian(const Var& x, int64_t size, double sigma) {
    if (size % 2 == 0) throw ConfigError("separable_gaussian size must be odd, got " + std::to_string(size));
    const auto k = gaussian_kernel(size, sigma);
    return filter1d(filter1d(x, k, -1, PadMode::reflect), k, -2, PadMode::reflect);
}

// ---------------------------------------------------------------- pooling

Var avgpool2(const Var& x) {
    const Planes pl = planes_of(x.shape(), "avgpool2");
    const int64_t oh = pl.h / 2, ow = pl.w / 2;
    if (oh < 1 || ow < 1) throw ShapeError("avgpool2 input smaller than 2x2: " + shape_str(x.shape()));
    Tensor out = Tensor::zeros(with_hw(x.shape(), oh, ow), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.value().data<T>();
        auto ys = out.mutable_data<T>();
        for (int64_t p = 0; p < pl.count; ++p)
            for (int64_t i = 0; i < oh; ++i)
                for (int64_t j = 0; j < ow; ++j) {
                    const T* a = xs.data() + (p * pl.h + 2 * i) * pl.w + 2 * j;
                    ys[static_cast<size_t>((p * oh + i) * ow + j)] = (a[0] + a[1] + a[pl.w] + a[pl.w + 1]) * T(0.25);
                }
    });
    return make_result("avgpool2", out, {x}, [pl, oh, ow](Node& n) {
        Node& p = *n.parents[0];
        Tensor gx = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(gx.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto g = n.grad.data<T>();
            auto px = gx.mutable_data<T>();
            for (int64_t q = 0; q < pl.count; ++q)
                for (int64_t i = 0; i < oh; ++i)
                    for (int64_t j = 0; j < ow; ++j) {
                        const T v = g[static_cast<size_t>((q * oh + i) * ow + j)] * T(0.25);
                        T* a = px.data() + (q * pl.h + 2 * i) * pl.w + 2 * j;
                        a[0] += v;
                        a[1] += v;
                        a[pl.w] += v;
                        a[pl.w + 1] += v;
                    }
        });
        accumulate_grad(p, gx);
    });
}

Var adaptive_avgpool(const Var& x, int64_t out_h, int64_t out_w) {
    const Planes pl = planes_of(x.shape(), "adaptive_avgpool");
    if (out_h > pl.h || out_w > pl.w || out_h < 1 || out_w < 1)
        throw ShapeError("adaptive_avgpool target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " larger than input " + shape_str(x.shape()));
    auto bins = [](int64_t n, int64_t out) {
        std::vector<std::pair<int64_t, int64_t>> b(static_cast<size_t>(out));
        for (int64_t i = 0; i < out; ++i) b[static_cast<size_t>(i)] = {i * n / out, (i + 1) * n / out};
        return b;
    };
    const auto by = bins(pl.h, out_h), bx = bins(pl.w, out_w);
    Tensor out = Tensor::zeros(with_hw(x.shape(), out_h, out_w), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.value().data<T>();
        auto ys = out.mutable_data<T>();
        for (int64_t p = 0; p < pl.count; ++p)
            for (int64_t i = 0; i < out_h; ++i)
                for (int64_t j = 0; j < out_w; ++j) {
                    const auto [y0, y1] = by[static_cast<size_t>(i)];
                    const auto [x0, x1] = bx[static_cast<size_t>(j)];
                    T s = 0;
                    for (int64_t yy = y0; yy < y1; ++yy)
                        for (int64_t xx = x0; xx < x1; ++xx) s += xs[static_cast<size_t>((p * pl.h + yy) * pl.w + xx)];
                    ys[static_cast<size_t>((p * out_h + i) * out_w + j)] = s / static_cast<T>((y1 - y0) * (x1 - x0));
                }
    });
    return make_result("adaptive_avgpool", out, {x}, [pl, by, bx, out_h, out_w](Node& n) {
        Node& p = *n.parents[0];
        Tensor gx = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(gx.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto g = n.grad.data<T>();
            auto px = gx.mutable_data<T>();
            for (int64_t q = 0; q < pl.count; ++q)
                for (int64_t i = 0; i < out_h; ++i)
                    for (int64_t j = 0; j < out_w; ++j) {
                        const auto [y0, y1] = by[static_cast<size_t>(i)];
                        const auto [x0, x1] = bx[static_cast<size_t>(j)];
                        const T v = g[static_cast<size_t>((q * out_h + i) * out_w + j)] /
                                    static_cast<T>((y1 - y0) * (x1 - x0));
                        for (int64_t yy = y0; yy < y1; ++yy)
                            for (int64_t xx = x0; xx < x1; ++xx) px[static_cast<size_t>((q * pl.h + yy) * pl.w + xx)] += v;
                    }
        });
        accumulate_grad(p, gx);
    });
}

Var global_avgpool(const Var& x) {
    require_rank(x, 3, "global_avgpool");
    return ops::mean(x, {1, 2}, true);
}

// ---------------------------------------------------------------- resize

namespace {
struct Lerp {
    int64_t i0, i1;
    double t;
};
std::vector<Lerp> lerp_table(int64_t in, int64_t out) {
    std::vector<Lerp> tab(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        auto i0 = static_cast<int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int64_t i1 = i0 < in - 1 ? i0 + 1 : i0;
        tab[static_cast<size_t>(i)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return tab;
}
}  // namespace

Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear output size must be >= 1");
    const Planes pl = planes_of(x.shape(), "resize_bilinear");
    const auto ty = lerp_table(pl.h, out_h), tx = lerp_table(pl.w, out_w);
    Tensor out = Tensor::zeros(with_hw(x.shape(), out_h, out_w), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.value().data<T>();
        auto ys = out.mutable_data<T>();
        for (int64_t p = 0; p < pl.count; ++p) {
            const T* src = xs.data() + p * pl.h * pl.w;
            T* dst = ys.data() + p * out_h * out_w;
            for (int64_t i = 0; i < out_h; ++i) {
                const Lerp& a = ty[static_cast<size_t>(i)];
                const T wy1 = static_cast<T>(a.t), wy0 = T(1) - wy1;
                for (int64_t j = 0; j < out_w; ++j) {
                    const Lerp& b = tx[static_cast<size_t>(j)];
                    const T wx1 = static_cast<T>(b.t), wx0 = T(1) - wx1;
                    dst[i * out_w + j] = wy0 * (wx0 * src[a.i0 * pl.w + b.i0] + wx1 * src[a.i0 * pl.w + b.i1]) +
                                         wy1 * (wx0 * src[a.i1 * pl.w + b.i0] + wx1 * src[a.i1 * pl.w + b.i1]);
                }
            }
        }
    });
    return make_result("resize_bilinear", out, {x}, [pl, ty, tx, out_h, out_w](Node& n) {
        Node& p = *n.parents[0];
        Tensor gx = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(gx.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto g = n.grad.data<T>();
            auto px = gx.mutable_data<T>();
            for (int64_t q = 0; q < pl.count; ++q) {
                const T* gy = g.data() + q * out_h * out_w;
                T* dst = px.data() + q * pl.h * pl.w;
                for (int64_t i = 0; i < out_h; ++i) {
                    const Lerp& a = ty[static_cast<size_t>(i)];
                    const T wy1 = static_cast<T>(a.t), wy0 = T(1) - wy1;
                    for (int64_t j = 0; j < out_w; ++j) {
                        const Lerp& b = tx[static_cast<size_t>(j)];
                        const T wx1 = static_cast<T>(b.t), wx0 = T(1) - wx1;
                        const T v = gy[i * out_w + j];
                        dst[a.i0 * pl.w + b.i0] += v * wy0 * wx0;
                        dst[a.i0 * pl.w + b.i1] += v * wy0 * wx1;
                        dst[a.i1 * pl.w + b.i0] += v * wy1 * wx0;
                        dst[a.i1 * pl.w + b.i1] += v * wy1 * wx1;
                    }
                }
            }
        });
        accumulate_grad(p, gx);
    });
}

// ---------------------------------------------------------------- grid sample

namespace {

// Bilinear footprint of one sample point after border clamping.
struct Tap {
    int64_t x0, x1, y0, y1;
    double wx, wy;     // weights of x1 / y1
    double dx, dy;     // d(pixel coord)/d(normalized coord), 0 when clamped
};

Tap make_tap(double gx, double gy, int64_t H, int64_t W) {
    Tap t{};
    double ix = ((gx + 1.0) * static_cast<double>(W) - 1.0) / 2.0;
    double iy = ((gy + 1.0) * static_cast<double>(H) - 1.0) / 2.0;
    t.dx = static_cast<double>(W) / 2.0;
    t.dy = static_cast<double>(H) / 2.0;
    const double wmax = static_cast<double>(W - 1), hmax = static_cast<double>(H - 1);
    if (ix <= 0) {
        ix = 0;
        t.dx = 0;
    } else if (ix >= wmax) {
        ix = wmax;
        t.dx = 0;
    }
    if (iy <= 0) {
        iy = 0;
        t.dy = 0;
    } else if (iy >= hmax) {
        iy = hmax;
        t.dy = 0;
    }
    // Coordinates that land on a pixel centre up to rounding noise read it
    // exactly, so identity and axis-aligned grids reproduce their input.
    if (std::abs(ix - std::round(ix)) < 1e-5) ix = std::round(ix);
    if (std::abs(iy - std::round(iy)) < 1e-5) iy = std::round(iy);
    t.x0 = static_cast<int64_t>(std::floor(ix));
    t.y0 = static_cast<int64_t>(std::floor(iy));
    t.wx = ix - static_cast<double>(t.x0);
    t.wy = iy - static_cast<double>(t.y0);
    t.x1 = std::min(t.x0 + 1, W - 1);
    t.y1 = std::min(t.y0 + 1, H - 1);
    return t;
}

}  // namespace

Var grid_sample(const Var& x, const Var& grid) {
    if (x.rank() != 3 && x.rank() != 4) throw ShapeError("grid_sample input must be [C,H,W] or [B,C,H,W]");
    if (grid.rank() != 3 && grid.rank() != 4) throw ShapeError("grid_sample grid must be [Ho,Wo,2] or [B,Ho,Wo,2]");
    if (grid.dim(-1) != 2) throw ShapeError("grid_sample grid last axis must be 2");
    if (x.dtype() != grid.dtype()) throw ContractError("grid_sample dtype mismatch");
    if (!grid.value().all_finite()) throw NonFiniteError("grid_sample grid contains NaN or Inf");
    const bool grid_batched = grid.rank() == 4;
    const bool x_batched = x.rank() == 4;
    const int64_t B = grid_batched ? grid.dim(0) : (x_batched ? x.dim(0) : 1);
    if (x_batched && x.dim(0) != B) throw ShapeError("grid_sample batch mismatch");
    const int64_t C = x.dim(-3), H = x.dim(-2), W = x.dim(-1);
    const int64_t Ho = grid.dim(-3), Wo = grid.dim(-2);
    const int64_t P = Ho * Wo;
    const bool out_batched = grid_batched || x_batched;

    auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(B * P));
    {
        const Tensor& gv = grid.value();
        dispatch(gv.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gs = gv.data<T>();
            for (int64_t b = 0; b < B; ++b) {
                const int64_t goff = grid_batched ? b * P * 2 : 0;
                for (int64_t p = 0; p < P; ++p)
                    (*taps)[static_cast<size_t>(b * P + p)] =
                        make_tap(gs[static_cast<size_t>(goff + 2 * p)], gs[static_cast<size_t>(goff + 2 * p + 1)], H, W);
            }
        });
    }

    Shape os = out_batched ? Shape{B, C, Ho, Wo} : Shape{C, Ho, Wo};
    Tensor out = Tensor::zeros(os, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.value().data<T>();
        auto ys = out.mutable_data<T>();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const T* img = xs.data() + ((x_batched ? b * C : 0) + c) * H * W;
                T* dst = ys.data() + (b * C + c) * P;
                for (int64_t p = 0; p < P; ++p) {
                    const Tap& t = (*taps)[static_cast<size_t>(b * P + p)];
                    const T wx = static_cast<T>(t.wx), wy = static_cast<T>(t.wy);
                    const T top = img[t.y0 * W + t.x0] * (T(1) - wx) + img[t.y0 * W + t.x1] * wx;
                    const T bot = img[t.y1 * W + t.x0] * (T(1) - wx) + img[t.y1 * W + t.x1] * wx;
                    dst[p] = top * (T(1) - wy) + bot * wy;
                }
            }
    });

    return make_result("grid_sample", out, {x, grid}, [=](Node& n) {
        Node& nx = *n.parents[0];
        Node& ng = *n.parents[1];
        dispatch(n.value.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto g = n.grad.data<T>();
            auto xs = nx.value.data<T>();
            if (nx.requires_grad) {
                Tensor gx = Tensor::zeros(nx.value.shape(), nx.value.dtype());
                auto px = gx.mutable_data<T>();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        T* img = px.data() + ((x_batched ? b * C : 0) + c) * H * W;
                        const T* gy = g.data() + (b * C + c) * P;
                        for (int64_t p = 0; p < P; ++p) {
                            const Tap& t = (*taps)[static_cast<size_t>(b * P + p)];
                            const T wx = static_cast<T>(t.wx), wy = static_cast<T>(t.wy);
                            const T v = gy[p];
                            img[t.y0 * W + t.x0] += v * (T(1) - wx) * (T(1) - wy);
                            img[t.y0 * W + t.x1] += v * wx * (T(1) - wy);
                            img[t.y1 * W + t.x0] += v * (T(1) - wx) * wy;
                            img[t.y1 * W + t.x1] += v * wx * wy;
                        }
                    }
                accumulate_grad(nx, gx);
            }
            if (ng.requires_grad) {
                Tensor gg = Tensor::zeros(ng.value.shape(), ng.value.dtype());
                auto pg = gg.mutable_data<T>();
                for (int64_t b = 0; b < B; ++b) {
                    const int64_t goff = grid_batched ? b * P * 2 : 0;
                    for (int64_t p = 0; p < P; ++p) {
                        const Tap& t = (*taps)[static_cast<size_t>(b * P + p)];
                        if (t.dx == 0 && t.dy == 0) continue;
                        const T wx = static_cast<T>(t.wx), wy = static_cast<T>(t.wy);
                        T dix = 0, diy = 0;
                        for (int64_t c = 0; c < C; ++c) {
                            const T* img = xs.data() + ((x_batched ? b * C : 0) + c) * H * W;
                            const T v = g[static_cast<size_t>((b * C + c) * P + p)];
                            const T v00 = img[t.y0 * W + t.x0], v01 = img[t.y0 * W + t.x1];
                            const T v10 = img[t.y1 * W + t.x0], v11 = img[t.y1 * W + t.x1];
                            dix += v * ((v01 - v00) * (T(1) - wy) + (v11 - v10) * wy);
                            diy += v * ((v10 - v00) * (T(1) - wx) + (v11 - v01) * wx);
                        }
                        pg[static_cast<size_t>(goff + 2 * p)] += dix * static_cast<T>(t.dx);
                        pg[static_cast<size_t>(goff + 2 * p + 1)] += diy * static_cast<T>(t.dy);
                    }
                }
                accumulate_grad(ng, gg);
            }
        });
    });
}

Var rotation_grid(const Var& theta, int64_t h, int64_t w) {
    require_rank(theta, 1, "rotation_grid theta");
    const int64_t K = theta.dim(0);
    Tensor out = Tensor::zeros({K, h, w, 2}, theta.dtype());
    auto xn = [w](int64_t c) { return (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(w) - 1.0; };
    auto yn = [h](int64_t r) { return (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(h) - 1.0; };
    dispatch(theta.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto th = theta.value().data<T>();
        auto g = out.mutable_data<T>();
        for (int64_t k = 0; k < K; ++k) {
            const double c = std::cos(static_cast<double>(th[static_cast<size_t>(k)]));
            const double s = std::sin(static_cast<double>(th[static_cast<size_t>(k)]));
            for (int64_t r = 0; r < h; ++r)
                for (int64_t q = 0; q < w; ++q) {
                    const auto o = static_cast<size_t>(((k * h + r) * w + q) * 2);
                    g[o] = static_cast<T>(c * xn(q) + s * yn(r));
                    g[o + 1] = static_cast<T>(-s * xn(q) + c * yn(r));
                }
        }
    });
    return make_result("rotation_grid", out, {theta}, [=](Node& n) {
        Node& p = *n.parents[0];
        Tensor gt = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(gt.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto th = p.value.data<T>();
            auto g = n.grad.data<T>();
            auto pt = gt.mutable_data<T>();
            for (int64_t k = 0; k < K; ++k) {
                const double c = std::cos(static_cast<double>(th[static_cast<size_t>(k)]));
                const double s = std::sin(static_cast<double>(th[static_cast<size_t>(k)]));
                double acc = 0;
                for (int64_t r = 0; r < h; ++r)
                    for (int64_t q = 0; q < w; ++q) {
                        const auto o = static_cast<size_t>(((k * h + r) * w + q) * 2);
                        acc += g[o] * (-s * xn(q) + c * yn(r)) + g[o + 1] * (-c * xn(q) - s * yn(r));
                    }
                pt[static_cast<size_t>(k)] = static_cast<T>(acc);
            }
        });
        accumulate_grad(p, gt);
    });
}

// ---------------------------------------------------------------- norms

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 3, "layer_norm");
    const int64_t C = x.dim(0);
    Var y = ops::standardize(x, {0}, eps);
    return ops::add(ops::mul(y, ops::reshape(gamma, {C, 1, 1})), ops::reshape(beta, {C, 1, 1}));
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 3, "instance_norm");
    const int64_t C = x.dim(0);
    Var y = ops::standardize(x, {1, 2}, eps);
    return ops::add(ops::mul(y, ops::reshape(gamma, {C, 1, 1})), ops::reshape(beta, {C, 1, 1}));
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(w, 2, "linear weight");
    const bool vec = x.rank() == 1;
    Var x2 = vec ? ops::reshape(x, {1, x.dim(0)}) : x;
    if (x2.rank() != 2) throw ShapeError("linear input must be [in] or [N,in]");
    Var y = ops::matmul_nt(x2, w);
    if (b.defined()) y = ops::add(y, b);
    return vec ? ops::reshape(y, {w.dim(0)}) : y;
}

// ---------------------------------------------------------------- layers

Var ParamFactory::kaiming(const std::string& name, Shape shape, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return store_.add(name, Tensor::uniform(std::move(shape), rng_, -bound, bound));
}

Var ParamFactory::constant(const std::string& name, Shape shape, double value) {
    return store_.add(name, Tensor::full(std::move(shape), value));
}

Conv2d::Conv2d(ParamFactory& pf, const std::string& name, int64_t in, int64_t out, int64_t k, Init init,
               int64_t stride, bool bias)
    : in_ch(in), out_ch(out) {
    spec.stride = stride;
    spec.padding = k / 2;
    spec.pad_mode = PadMode::reflect;
    const int64_t fan_in = in * k * k;
    if (init == Init::zeros) {
        w = pf.constant(name + ".w", {out, in, k, k}, 0.0);
        if (bias) b = pf.constant(name + ".b", {out}, 0.0);
    } else {
        w = pf.kaiming(name + ".w", {out, in, k, k}, fan_in);
        if (bias) b = pf.kaiming(name + ".b", {out}, fan_in);
    }
}

Linear::Linear(ParamFactory& pf, const std::string& name, int64_t in, int64_t out, Init init) {
    if (init == Init::zeros) {
        w = pf.constant(name + ".w", {out, in}, 0.0);
        b = pf.constant(name + ".b", {out}, 0.0);
    } else {
        w = pf.kaiming(name + ".w", {out, in}, in);
        b = pf.kaiming(name + ".b", {out}, in);
    }
}

LayerNorm::LayerNorm(ParamFactory& pf, const std::string& name, int64_t channels)
    : gamma(pf.constant(name + ".gamma", {channels}, 1.0)), beta(pf.constant(name + ".beta", {channels}, 0.0)) {}

InstanceNorm::InstanceNorm(ParamFactory& pf, const std::string& name, int64_t channels)
    : gamma(pf.constant(name + ".gamma", {channels}, 1.0)), beta(pf.constant(name + ".beta", {channels}, 0.0)) {}

Mlp::Mlp(ParamFactory& pf, const std::string& name, int64_t in, int64_t hidden, int64_t out, Activation act)
    : fc1(pf, name + ".fc1", in, hidden), fc2(pf, name + ".fc2", hidden, out), act(act) {}

}  // namespace hsifuse::nn
