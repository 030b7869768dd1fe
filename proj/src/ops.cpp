#include "hsifuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hsifuse/kernels.hpp"

namespace hsifuse {

namespace detail {

int64_t norm_axis(int64_t axis, int64_t rank) {
    const int64_t a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
    return a;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

namespace {

// Strides of `s` viewed at the rank of `out`, zero on broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    const size_t r = out.size();
    std::vector<int64_t> st(r, 0);
    int64_t acc = 1;
    for (size_t i = r; i-- > 0;) {
        const size_t off = r - s.size();
        if (i < off) break;
        const int64_t d = s[i - off];
        st[i] = d == 1 ? 0 : acc;
        acc *= d;
    }
    return st;
}

}  // namespace

template <class T, class F>
void binary_broadcast(const Tensor& a, const Tensor& b, Tensor& out, F f) {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    auto po = out.mutable_data<T>();
    const Shape& os = out.shape();
    if (a.shape() == os && b.shape() == os) {
        for (size_t i = 0; i < po.size(); ++i) po[i] = f(pa[i], pb[i]);
        return;
    }
    if (b.numel() == 1 && a.shape() == os) {
        const T bv = pb[0];
        for (size_t i = 0; i < po.size(); ++i) po[i] = f(pa[i], bv);
        return;
    }
    const auto sa = broadcast_strides(a.shape(), os);
    const auto sb = broadcast_strides(b.shape(), os);
    const size_t r = os.size();
    const int64_t inner = os[r - 1];
    const int64_t ia = sa[r - 1], ib = sb[r - 1];
    std::vector<int64_t> idx(r, 0);
    int64_t offa = 0, offb = 0;
    const int64_t outer = out.numel() / inner;
    int64_t o = 0;
    for (int64_t row = 0; row < outer; ++row) {
        for (int64_t j = 0; j < inner; ++j) po[o++] = f(pa[offa + j * ia], pb[offb + j * ib]);
        // advance the odometer over axes [0, r-1)
        for (size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            offa += sa[ax];
            offb += sb[ax];
            if (idx[ax] < os[ax]) break;
            offa -= sa[ax] * os[ax];
            offb -= sb[ax] * os[ax];
            idx[ax] = 0;
        }
    }
}

Tensor reduce_to(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    const Shape& gs = g.shape();
    const auto st = broadcast_strides(target, gs);
    Tensor out = Tensor::zeros(target, g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pg = g.data<T>();
        auto po = out.mutable_data<T>();
        const size_t r = gs.size();
        std::vector<int64_t> idx(r, 0);
        int64_t off = 0;
        for (int64_t i = 0; i < g.numel(); ++i) {
            po[off] += pg[i];
            for (size_t ax = r; ax-- > 0;) {
                ++idx[ax];
                off += st[ax];
                if (idx[ax] < gs[ax]) break;
                off -= st[ax] * gs[ax];
                idx[ax] = 0;
            }
        }
    });
    return out;
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
    Tensor out = Tensor::zeros(broadcast_shape(a.shape(), b.shape()), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        binary_broadcast<T>(a, b, out, [](T x, T y) { return x + y; });
    });
    return out;
}

}  // namespace detail

namespace ops {

using detail::binary_broadcast;
using detail::broadcast_shape;
using detail::norm_axis;
using detail::reduce_to;

namespace {

void check_dtypes(const Var& a, const Var& b) {
    if (a.dtype() != b.dtype())
        throw ContractError(std::string("dtype mismatch: ") + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
}

template <class F>
Tensor binary_value(const Tensor& a, const Tensor& b, F&& f) {
    Tensor out = Tensor::zeros(broadcast_shape(a.shape(), b.shape()), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        binary_broadcast<T>(a, b, out, [&](T x, T y) { return static_cast<T>(f(x, y)); });
    });
    return out;
}

// Unary elementwise op: fwd(x) and dfdx(x, y) evaluated in T.
template <class Fwd, class Deriv>
Var unary(const char* name, const Var& a, Fwd fwd, Deriv deriv) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.value().data<T>();
        auto y = out.mutable_data<T>();
        for (size_t i = 0; i < y.size(); ++i) y[i] = static_cast<T>(fwd(x[i]));
    });
    Tensor y_saved = out;
    return make_result(name, out, {a}, [deriv, y_saved](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto x = p.value.data<T>();
            auto y = y_saved.data<T>();
            auto go = n.grad.data<T>();
            auto gi = g.mutable_data<T>();
            for (size_t i = 0; i < gi.size(); ++i) gi[i] = static_cast<T>(go[i] * deriv(x[i], y[i]));
        });
        accumulate_grad(p, g);
    });
}

}  // namespace

Var constant(Tensor t) { return Var(std::move(t), false); }

Var constant_like(const Var& like, double value) { return constant(Tensor::full(like.shape(), value, like.dtype())); }

Var add(const Var& a, const Var& b) {
    check_dtypes(a, b);
    Tensor out = binary_value(a.value(), b.value(), [](auto x, auto y) { return x + y; });
    return make_result("add", out, {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) accumulate_grad(pa, reduce_to(n.grad, pa.value.shape()));
        if (pb.requires_grad) accumulate_grad(pb, reduce_to(n.grad, pb.value.shape()));
    });
}

Var sub(const Var& a, const Var& b) {
    check_dtypes(a, b);
    Tensor out = binary_value(a.value(), b.value(), [](auto x, auto y) { return x - y; });
    return make_result("sub", out, {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) accumulate_grad(pa, reduce_to(n.grad, pa.value.shape()));
        if (pb.requires_grad) {
            Tensor g = reduce_to(n.grad, pb.value.shape());
            Tensor ng = binary_value(g, Tensor::scalar(-1.0, g.dtype()), [](auto x, auto y) { return x * y; });
            accumulate_grad(pb, ng);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_dtypes(a, b);
    Tensor out = binary_value(a.value(), b.value(), [](auto x, auto y) { return x * y; });
    return make_result("mul", out, {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        auto prod = [](auto x, auto y) { return x * y; };
        if (pa.requires_grad) accumulate_grad(pa, reduce_to(binary_value(n.grad, pb.value, prod), pa.value.shape()));
        if (pb.requires_grad) accumulate_grad(pb, reduce_to(binary_value(n.grad, pa.value, prod), pb.value.shape()));
    });
}

Var div(const Var& a, const Var& b) {
    check_dtypes(a, b);
    const bool has_zero = dispatch(b.dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (T v : b.value().data<T>())
            if (v == T(0)) return true;
        return false;
    });
    if (has_zero) throw NonFiniteError("division by exact zero");
    Tensor out = binary_value(a.value(), b.value(), [](auto x, auto y) { return x / y; });
    return make_result("div", out, {a, b}, [out](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad)
            accumulate_grad(pa, reduce_to(binary_value(n.grad, pb.value, [](auto g, auto y) { return g / y; }),
                                          pa.value.shape()));
        if (pb.requires_grad) {
            // d(a/b)/db = -(a/b)/b
            Tensor t = binary_value(n.grad, out, [](auto g, auto q) { return -g * q; });
            accumulate_grad(pb, reduce_to(binary_value(t, pb.value, [](auto g, auto y) { return g / y; }),
                                          pb.value.shape()));
        }
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
    return unary(
        "scale", a, [s](auto x) { return x * s; }, [s](auto, auto) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(
        "add_scalar", a, [s](auto x) { return x + s; }, [](auto, auto) { return 1.0; });
}

Var sigmoid(const Var& a) {
    return unary(
        "sigmoid", a,
        [](auto x) {
            using T = decltype(x);
            return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        },
        [](auto, auto y) { return y * (1 - y); });
}

Var tanh(const Var& a) {
    return unary(
        "tanh", a, [](auto x) { return std::tanh(x); }, [](auto, auto y) { return 1 - y * y; });
}

Var relu(const Var& a) {
    return unary(
        "relu", a, [](auto x) { return x > 0 ? x : decltype(x)(0); },
        [](auto x, auto) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(
        "leaky_relu", a, [slope](auto x) { return x > 0 ? x : x * slope; },
        [slope](auto x, auto) { return x > 0 ? 1.0 : slope; });
}

Var gelu(const Var& a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    return unary(
        "gelu", a,
        [](auto x) {
            const double xd = x;
            return 0.5 * xd * (1.0 + std::tanh(c * (xd + k * xd * xd * xd)));
        },
        [](auto x, auto) {
            const double xd = x;
            const double u = c * (xd + k * xd * xd * xd);
            const double t = std::tanh(u);
            return 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * c * (1.0 + 3.0 * k * xd * xd);
        });
}

Var exp(const Var& a) {
    return unary(
        "exp", a, [](auto x) { return std::exp(x); }, [](auto, auto y) { return y; });
}

Var abs(const Var& a) {
    return unary(
        "abs", a, [](auto x) { return std::abs(x); },
        [](auto x, auto) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------- matmul

namespace {

struct MatDims {
    int64_t batch, m, k, n;
    bool b_shared;
};

MatDims matmul_dims(const Shape& a, const Shape& b, bool b_transposed) {
    if (a.size() < 2 || a.size() > 3 || b.size() < 2 || b.size() > 3)
        throw ShapeError("matmul expects rank-2 or rank-3 operands, got " + shape_str(a) + " and " + shape_str(b));
    MatDims d{};
    d.batch = a.size() == 3 ? a[0] : 1;
    d.m = a[a.size() - 2];
    d.k = a[a.size() - 1];
    const int64_t bk = b_transposed ? b[b.size() - 1] : b[b.size() - 2];
    d.n = b_transposed ? b[b.size() - 2] : b[b.size() - 1];
    if (bk != d.k) throw ShapeError("matmul inner-axis mismatch: " + shape_str(a) + " x " + shape_str(b));
    d.b_shared = b.size() == 2;
    if (!d.b_shared && (a.size() != 3 || b[0] != d.batch))
        throw ShapeError("matmul batch mismatch: " + shape_str(a) + " x " + shape_str(b));
    return d;
}

Var matmul_impl(const Var& a, const Var& b, bool bt) {
    check_dtypes(a, b);
    const MatDims d = matmul_dims(a.shape(), b.shape(), bt);
    Shape os = a.rank() == 3 ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
    Tensor out = Tensor::zeros(os, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto pa = a.value().data<T>();
        auto pb = b.value().data<T>();
        auto po = out.mutable_data<T>();
        const int64_t bstride = d.b_shared ? 0 : d.k * d.n;
        for (int64_t s = 0; s < d.batch; ++s) {
            const T* A = pa.data() + s * d.m * d.k;
            const T* B = pb.data() + s * bstride;
            T* C = po.data() + s * d.m * d.n;
            if (bt)
                kernels::gemm_nt(C, A, B, d.m, d.k, d.n, false);
            else
                kernels::gemm_nn(C, A, B, d.m, d.k, d.n, false);
        }
    });
    return make_result(bt ? "matmul_nt" : "matmul", out, {a, b}, [d, bt](Node& n) {
        Node& na = *n.parents[0];
        Node& nb = *n.parents[1];
        dispatch(n.value.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto pa = na.value.data<T>();
            auto pb = nb.value.data<T>();
            auto pg = n.grad.data<T>();
            const int64_t bstride = d.b_shared ? 0 : d.k * d.n;
            if (na.requires_grad) {
                Tensor ga = Tensor::zeros(na.value.shape(), na.value.dtype());
                auto pga = ga.mutable_data<T>();
                for (int64_t s = 0; s < d.batch; ++s) {
                    const T* G = pg.data() + s * d.m * d.n;
                    const T* B = pb.data() + s * bstride;
                    T* GA = pga.data() + s * d.m * d.k;
                    // C = A B  -> dA = G B^T ;  C = A B^T -> dA = G B
                    if (bt)
                        kernels::gemm_nn(GA, G, B, d.m, d.n, d.k, true);
                    else
                        kernels::gemm_nt(GA, G, B, d.m, d.n, d.k, true);
                }
                accumulate_grad(na, ga);
            }
            if (nb.requires_grad) {
                Tensor gb = Tensor::zeros(nb.value.shape(), nb.value.dtype());
                auto pgb = gb.mutable_data<T>();
                for (int64_t s = 0; s < d.batch; ++s) {
                    const T* G = pg.data() + s * d.m * d.n;
                    const T* A = pa.data() + s * d.m * d.k;
                    T* GB = pgb.data() + s * bstride;
                    // C = A B -> dB = A^T G ; C = A B^T -> dB = G^T A
                    if (bt)
                        kernels::gemm_tn(GB, G, A, d.n, d.m, d.k, true);
                    else
                        kernels::gemm_tn(GB, A, G, d.k, d.m, d.n, true);
                }
                accumulate_grad(nb, gb);
            }
        });
    });
}

}  // namespace

Var matmul(const Var& a, const Var& b) { return matmul_impl(a, b, false); }
Var matmul_nt(const Var& a, const Var& b) { return matmul_impl(a, b, true); }

// ---------------------------------------------------------------- reductions

namespace {

// For each element of `shape`, the flat index of its group after reducing
// `axes` (kept as length-1 axes).
struct Grouping {
    Shape kept;
    std::vector<int64_t> group;
    int64_t group_size = 1;
};

Grouping make_grouping(const Shape& shape, const std::vector<int64_t>& axes) {
    const int64_t r = static_cast<int64_t>(shape.size());
    std::vector<bool> red(static_cast<size_t>(r), false);
    for (int64_t ax : axes) red[static_cast<size_t>(norm_axis(ax, r))] = true;
    Grouping g;
    g.kept = shape;
    for (int64_t i = 0; i < r; ++i)
        if (red[static_cast<size_t>(i)]) {
            g.group_size *= shape[static_cast<size_t>(i)];
            g.kept[static_cast<size_t>(i)] = 1;
        }
    std::vector<int64_t> kst(static_cast<size_t>(r), 0);
    int64_t acc = 1;
    for (int64_t i = r; i-- > 0;) {
        kst[static_cast<size_t>(i)] = red[static_cast<size_t>(i)] ? 0 : acc;
        acc *= g.kept[static_cast<size_t>(i)];
    }
    const int64_t n = shape_numel(shape);
    g.group.resize(static_cast<size_t>(n));
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t off = 0;
    for (int64_t e = 0; e < n; ++e) {
        g.group[static_cast<size_t>(e)] = off;
        for (int64_t ax = r; ax-- > 0;) {
            auto a = static_cast<size_t>(ax);
            ++idx[a];
            off += kst[a];
            if (idx[a] < shape[a]) break;
            off -= kst[a] * shape[a];
            idx[a] = 0;
        }
    }
    return g;
}

Shape drop_axes(const Shape& kept, const Shape& orig, const std::vector<int64_t>& axes) {
    const int64_t r = static_cast<int64_t>(orig.size());
    Shape out;
    for (int64_t i = 0; i < r; ++i) {
        const bool reduced =
            std::any_of(axes.begin(), axes.end(), [&](int64_t ax) { return norm_axis(ax, r) == i; });
        if (!reduced) out.push_back(kept[static_cast<size_t>(i)]);
    }
    if (out.empty()) out.push_back(1);
    return out;
}

}  // namespace

Var reduce(Reduce op, const Var& a, std::vector<int64_t> axes, bool keepdim) {
    if (axes.empty())
        for (int64_t i = 0; i < a.rank(); ++i) axes.push_back(i);
    auto grouping = std::make_shared<Grouping>(make_grouping(a.shape(), axes));
    const Shape out_shape = keepdim ? grouping->kept : drop_axes(grouping->kept, a.shape(), axes);
    Tensor out = Tensor::zeros(out_shape, a.dtype());
    auto argmax = std::make_shared<std::vector<int64_t>>();
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.value().data<T>();
        auto y = out.mutable_data<T>();
        const auto& grp = grouping->group;
        if (op == Reduce::max) {
            argmax->assign(y.size(), -1);
            for (size_t e = 0; e < x.size(); ++e) {
                auto gi = static_cast<size_t>(grp[e]);
                if ((*argmax)[gi] < 0 || x[e] > y[gi]) {
                    y[gi] = x[e];
                    (*argmax)[gi] = static_cast<int64_t>(e);
                }
            }
        } else {
            for (size_t e = 0; e < x.size(); ++e) y[static_cast<size_t>(grp[e])] += x[e];
            if (op == Reduce::mean)
                for (auto& v : y) v /= static_cast<T>(grouping->group_size);
        }
    });
    const char* name = op == Reduce::sum ? "sum" : (op == Reduce::mean ? "mean" : "max");
    return make_result(name, out, {a}, [op, grouping, argmax](Node& n) {
        Node& p = *n.parents[0];
        Tensor g = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = n.grad.data<T>();
            auto gi = g.mutable_data<T>();
            if (op == Reduce::max) {
                for (size_t k = 0; k < go.size(); ++k) gi[static_cast<size_t>((*argmax)[k])] += go[k];
            } else {
                const T s = op == Reduce::mean ? T(1) / static_cast<T>(grouping->group_size) : T(1);
                for (size_t e = 0; e < gi.size(); ++e) gi[e] = go[static_cast<size_t>(grouping->group[e])] * s;
            }
        });
        accumulate_grad(p, g);
    });
}

Var sum(const Var& a, std::vector<int64_t> axes, bool keepdim) { return reduce(Reduce::sum, a, std::move(axes), keepdim); }
Var mean(const Var& a, std::vector<int64_t> axes, bool keepdim) {
    return reduce(Reduce::mean, a, std::move(axes), keepdim);
}
Var max(const Var& a, std::vector<int64_t> axes, bool keepdim) { return reduce(Reduce::max, a, std::move(axes), keepdim); }
Var sum_all(const Var& a) { return reduce(Reduce::sum, a, {}, false); }
Var mean_all(const Var& a) { return reduce(Reduce::mean, a, {}, false); }

// ---------------------------------------------------------------- softmax

namespace {
struct AxisView {
    int64_t outer, len, inner;
};
AxisView axis_view(const Shape& s, int64_t axis) {
    AxisView v{1, s[static_cast<size_t>(axis)], 1};
    for (int64_t i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}
}  // namespace

Var softmax(const Var& a, int64_t axis) {
    axis = norm_axis(axis, a.rank());
    if (!a.value().all_finite()) throw NonFiniteError("softmax input contains NaN or Inf");
    const AxisView v = axis_view(a.shape(), axis);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.value().data<T>();
        auto y = out.mutable_data<T>();
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                const int64_t base = o * v.len * v.inner + i;
                T m = x[static_cast<size_t>(base)];
                for (int64_t j = 1; j < v.len; ++j) m = std::max(m, x[static_cast<size_t>(base + j * v.inner)]);
                T s = 0;
                for (int64_t j = 0; j < v.len; ++j) {
                    const auto k = static_cast<size_t>(base + j * v.inner);
                    y[k] = std::exp(x[k] - m);
                    s += y[k];
                }
                for (int64_t j = 0; j < v.len; ++j) y[static_cast<size_t>(base + j * v.inner)] /= s;
            }
    });
    return make_result("softmax", out, {a}, [v, out](Node& n) {
        Node& p = *n.parents[0];
        Tensor g = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto y = out.data<T>();
            auto go = n.grad.data<T>();
            auto gi = g.mutable_data<T>();
            for (int64_t o = 0; o < v.outer; ++o)
                for (int64_t i = 0; i < v.inner; ++i) {
                    const int64_t base = o * v.len * v.inner + i;
                    T dot = 0;
                    for (int64_t j = 0; j < v.len; ++j) {
                        const auto k = static_cast<size_t>(base + j * v.inner);
                        dot += go[k] * y[k];
                    }
                    for (int64_t j = 0; j < v.len; ++j) {
                        const auto k = static_cast<size_t>(base + j * v.inner);
                        gi[k] = y[k] * (go[k] - dot);
                    }
                }
        });
        accumulate_grad(p, g);
    });
}

// ---------------------------------------------------------------- structure

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshape(std::move(shape));
    return make_result("reshape", out, {a}, [](Node& n) {
        Node& p = *n.parents[0];
        accumulate_grad(p, n.grad.reshape(p.value.shape()));
    });
}

namespace {
Tensor permute_tensor(const Tensor& t, const std::vector<int64_t>& order) {
    const Shape& s = t.shape();
    const size_t r = s.size();
    Shape os(r);
    for (size_t i = 0; i < r; ++i) os[i] = s[static_cast<size_t>(order[i])];
    std::vector<int64_t> in_strides(r);
    int64_t acc = 1;
    for (size_t i = r; i-- > 0;) {
        in_strides[i] = acc;
        acc *= s[i];
    }
    std::vector<int64_t> st(r);
    for (size_t i = 0; i < r; ++i) st[i] = in_strides[static_cast<size_t>(order[i])];
    Tensor out = Tensor::zeros(os, t.dtype());
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = t.data<T>();
        auto y = out.mutable_data<T>();
        std::vector<int64_t> idx(r, 0);
        int64_t off = 0;
        const int64_t inner = os[r - 1];
        const int64_t ist = st[r - 1];
        const int64_t outer = out.numel() / inner;
        size_t o = 0;
        for (int64_t row = 0; row < outer; ++row) {
            for (int64_t j = 0; j < inner; ++j) y[o++] = x[static_cast<size_t>(off + j * ist)];
            for (size_t ax = r - 1; ax-- > 0;) {
                ++idx[ax];
                off += st[ax];
                if (idx[ax] < os[ax]) break;
                off -= st[ax] * os[ax];
                idx[ax] = 0;
            }
        }
    });
    return out;
}
}  // namespace

Var permute(const Var& a, std::vector<int64_t> order) {
    const int64_t r = a.rank();
    if (static_cast<int64_t>(order.size()) != r) throw ShapeError("permute order has wrong length");
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (auto& o : order) {
        o = norm_axis(o, r);
        if (seen[static_cast<size_t>(o)]) throw ShapeError("permute order repeats an axis");
        seen[static_cast<size_t>(o)] = true;
    }
    std::vector<int64_t> inverse(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) inverse[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;
    Tensor out = permute_tensor(a.value(), order);
    return make_result("permute", out, {a}, [inverse](Node& n) {
        accumulate_grad(*n.parents[0], permute_tensor(n.grad, inverse));
    });
}

Var transpose(const Var& a, int64_t axis0, int64_t axis1) {
    std::vector<int64_t> order(static_cast<size_t>(a.rank()));
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[static_cast<size_t>(norm_axis(axis0, a.rank()))],
              order[static_cast<size_t>(norm_axis(axis1, a.rank()))]);
    return permute(a, order);
}

Var concat(const std::vector<Var>& parts, int64_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const int64_t r = parts[0].rank();
    axis = norm_axis(axis, r);
    Shape os = parts[0].shape();
    os[static_cast<size_t>(axis)] = 0;
    std::vector<int64_t> lens;
    for (const Var& p : parts) {
        check_dtypes(parts[0], p);
        if (p.rank() != r) throw ShapeError("concat rank mismatch");
        for (int64_t i = 0; i < r; ++i)
            if (i != axis && p.shape()[static_cast<size_t>(i)] != parts[0].shape()[static_cast<size_t>(i)])
                throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
        lens.push_back(p.shape()[static_cast<size_t>(axis)]);
        os[static_cast<size_t>(axis)] += lens.back();
    }
    const AxisView v = axis_view(os, axis);
    Tensor out = Tensor::zeros(os, parts[0].dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto y = out.mutable_data<T>();
        int64_t start = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            auto x = parts[pi].value().template data<T>();
            const int64_t len = lens[pi];
            for (int64_t o = 0; o < v.outer; ++o)
                std::copy_n(x.data() + o * len * v.inner, len * v.inner,
                            y.data() + (o * v.len + start) * v.inner);
            start += len;
        }
    });
    return make_result("concat", out, parts, [v, lens](Node& n) {
        int64_t start = 0;
        for (size_t pi = 0; pi < n.parents.size(); ++pi) {
            Node& p = *n.parents[pi];
            const int64_t len = lens[pi];
            if (p.requires_grad) {
                Tensor g = Tensor::zeros(p.value.shape(), p.value.dtype());
                dispatch(g.dtype(), [&](auto tag) {
                    using T = decltype(tag);
                    auto go = n.grad.data<T>();
                    auto gi = g.mutable_data<T>();
                    for (int64_t o = 0; o < v.outer; ++o)
                        std::copy_n(go.data() + (o * v.len + start) * v.inner, len * v.inner,
                                    gi.data() + o * len * v.inner);
                });
                accumulate_grad(p, g);
            }
            start += len;
        }
    });
}

Var slice(const Var& a, int64_t axis, int64_t start, int64_t length) {
    axis = norm_axis(axis, a.rank());
    const int64_t full = a.shape()[static_cast<size_t>(axis)];
    if (start < 0 || length < 1 || start + length > full)
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") out of range for axis length " + std::to_string(full));
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] = length;
    const AxisView v = axis_view(a.shape(), axis);
    Tensor out = Tensor::zeros(os, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.value().data<T>();
        auto y = out.mutable_data<T>();
        for (int64_t o = 0; o < v.outer; ++o)
            std::copy_n(x.data() + (o * v.len + start) * v.inner, length * v.inner,
                        y.data() + o * length * v.inner);
    });
    return make_result("slice", out, {a}, [v, start, length](Node& n) {
        Node& p = *n.parents[0];
        Tensor g = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto go = n.grad.data<T>();
            auto gi = g.mutable_data<T>();
            for (int64_t o = 0; o < v.outer; ++o)
                std::copy_n(go.data() + o * length * v.inner, length * v.inner,
                            gi.data() + (o * v.len + start) * v.inner);
        });
        accumulate_grad(p, g);
    });
}

Var expand(const Var& a, Shape shape) {
    if (broadcast_shape(a.shape(), shape) != shape)
        throw ShapeError("cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
    Tensor out = Tensor::zeros(shape, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        binary_broadcast<T>(out, a.value(), out, [](T, T y) { return y; });
    });
    return make_result("expand", out, {a}, [](Node& n) {
        Node& p = *n.parents[0];
        accumulate_grad(p, reduce_to(n.grad, p.value.shape()));
    });
}

Var standardize(const Var& a, std::vector<int64_t> axes, double eps) {
    auto grouping = std::make_shared<Grouping>(make_grouping(a.shape(), axes));
    if (grouping->group_size < 2) throw ShapeError("standardize needs >= 2 elements per group");
    const int64_t groups = shape_numel(grouping->kept);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(groups));
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.value().data<T>();
        auto y = out.mutable_data<T>();
        const auto& grp = grouping->group;
        std::vector<double> mu(static_cast<size_t>(groups), 0.0), var(static_cast<size_t>(groups), 0.0);
        for (size_t e = 0; e < x.size(); ++e) mu[static_cast<size_t>(grp[e])] += x[e];
        for (auto& m : mu) m /= static_cast<double>(grouping->group_size);
        for (size_t e = 0; e < x.size(); ++e) {
            const double d = x[e] - mu[static_cast<size_t>(grp[e])];
            var[static_cast<size_t>(grp[e])] += d * d;
        }
        for (int64_t gi = 0; gi < groups; ++gi)
            (*inv_std)[static_cast<size_t>(gi)] =
                1.0 / std::sqrt(var[static_cast<size_t>(gi)] / static_cast<double>(grouping->group_size) + eps);
        for (size_t e = 0; e < x.size(); ++e) {
            const auto gi = static_cast<size_t>(grp[e]);
            y[e] = static_cast<T>((x[e] - mu[gi]) * (*inv_std)[gi]);
        }
    });
    return make_result("standardize", out, {a}, [grouping, inv_std, out, groups](Node& n) {
        Node& p = *n.parents[0];
        Tensor g = Tensor::zeros(p.value.shape(), p.value.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto y = out.data<T>();
            auto go = n.grad.data<T>();
            auto gi = g.mutable_data<T>();
            const auto& grp = grouping->group;
            std::vector<double> mg(static_cast<size_t>(groups), 0.0), mgy(static_cast<size_t>(groups), 0.0);
            for (size_t e = 0; e < go.size(); ++e) {
                mg[static_cast<size_t>(grp[e])] += go[e];
                mgy[static_cast<size_t>(grp[e])] += static_cast<double>(go[e]) * y[e];
            }
            const double inv_n = 1.0 / static_cast<double>(grouping->group_size);
            for (size_t e = 0; e < go.size(); ++e) {
                const auto k = static_cast<size_t>(grp[e]);
                gi[e] = static_cast<T>((*inv_std)[k] * (go[e] - mg[k] * inv_n - y[e] * mgy[k] * inv_n));
            }
        });
        accumulate_grad(p, g);
    });
}

Var l1_loss(const Var& a, const Var& b) {
    check_dtypes(a, b);
    if (a.shape() != b.shape())
        throw ShapeError("l1_loss shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto n = static_cast<double>(a.value().numel());
    const double v = dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.value().data<T>();
        auto y = b.value().data<T>();
        double s = 0;
        for (size_t i = 0; i < x.size(); ++i) s += std::abs(static_cast<double>(x[i]) - y[i]);
        return s / n;
    });
    return make_result("l1_loss", Tensor::scalar(v, a.dtype()), {a, b}, [n](Node& node) {
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        const double gs = node.grad.flat(0) / n;
        dispatch(pa.value.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto x = pa.value.data<T>();
            auto y = pb.value.data<T>();
            Tensor ga = Tensor::zeros(pa.value.shape(), pa.value.dtype());
            auto g = ga.mutable_data<T>();
            for (size_t i = 0; i < g.size(); ++i) {
                const T d = x[i] - y[i];
                g[i] = static_cast<T>(d > 0 ? gs : (d < 0 ? -gs : 0.0));
            }
            if (pa.requires_grad) accumulate_grad(pa, ga);
            if (pb.requires_grad) {
                Tensor gb = Tensor::zeros(pb.value.shape(), pb.value.dtype());
                auto h = gb.mutable_data<T>();
                for (size_t i = 0; i < h.size(); ++i) h[i] = -g[i];
                accumulate_grad(pb, gb);
            }
        });
    });
}

}  // namespace ops

}  // namespace hsifuse
