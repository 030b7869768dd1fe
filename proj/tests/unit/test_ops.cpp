#include <algorithm>
#include <functional>

#include "doctest.h"
#include "helpers.hpp"

using namespace hsifuse;

namespace {

Var cst(Shape s, std::initializer_list<double> v) { return ops::constant(Tensor::from(std::move(s), v, DType::f64)); }

// Explicit tiling oracle for broadcasting a [1,n] row over m rows.
Tensor tile_rows(const Tensor& row, int64_t m) {
    const int64_t n = row.numel();
    std::vector<double> v;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) v.push_back(row.flat(j));
    return Tensor::from({m, n}, v, DType::f64);
}

}  // namespace

TEST_CASE("elementwise examples") {
    CHECK(ops::add(cst({2}, {1, 2}), cst({2}, {3, 4})).value().to_vector() == std::vector<double>{4, 6});
    CHECK(ops::sigmoid(cst({1}, {0})).value().item() == 0.5);
    Rng rng(2);
    Var x = th::leaf({3, 3}, rng);
    CHECK(th::max_abs_diff(ops::mul(x, ops::constant_like(x, 1.0)).value(), x.value()) == 0.0);
    CHECK(ops::relu(cst({2}, {-1, 2})).value().to_vector() == std::vector<double>{0, 2});
    CHECK(ops::exp(cst({1}, {0})).value().item() == 1.0);
    CHECK(ops::scale(cst({2}, {2, -1}), 1.5).value().to_vector() == std::vector<double>{3, -1.5});
    CHECK(ops::sub(cst({1}, {5}), cst({1}, {2})).value().item() == 3.0);
    CHECK(ops::div(cst({1}, {6}), cst({1}, {4})).value().item() == 1.5);
    CHECK(ops::tanh(cst({1}, {0})).value().item() == 0.0);
    CHECK(ops::leaky_relu(cst({2}, {-1, 1}), 0.2).value().to_vector() == std::vector<double>{-0.2, 1});
}

TEST_CASE("gelu is the tanh approximation") {
    const double x = 0.7;
    const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    CHECK(ops::gelu(cst({1}, {x})).value().item() == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("sigmoid is stable for large magnitudes") {
    const auto v = ops::sigmoid(cst({2}, {-800, 800})).value().to_vector();
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 1.0);
}

TEST_CASE("binary error contracts") {
    CHECK_THROWS_AS(ops::add(cst({2}, {1, 2}), cst({3}, {1, 2, 3})), ShapeError);
    CHECK_THROWS_AS(ops::div(cst({2}, {1, 2}), cst({2}, {1, 0})), NonFiniteError);
}

TEST_CASE("broadcast add and mul commute with explicit tiling") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        Var a = th::leaf({4, 5}, rng), row = th::leaf({1, 5}, rng);
        Var tiled = ops::constant(tile_rows(row.value(), 4));
        CHECK(th::max_abs_diff(ops::add(a, row).value(), ops::add(a, tiled).value()) < 1e-7);
        CHECK(th::max_abs_diff(ops::mul(row, a).value(), ops::mul(tiled, a).value()) < 1e-7);
        // rank padding: [5] behaves like [1,5]
        Var flat = ops::reshape(row, {5});
        CHECK(th::max_abs_diff(ops::add(a, flat).value(), ops::add(a, tiled).value()) < 1e-7);
    }
}

TEST_CASE("matmul examples and oracle") {
    Var eye = cst({2, 2}, {1, 0, 0, 1});
    Var a = cst({2, 2}, {1, 2, 3, 4});
    CHECK(ops::matmul(eye, a).value().to_vector() == a.value().to_vector());
    CHECK(ops::matmul(cst({1, 2}, {1, 2}), cst({2, 1}, {3, 4})).value().item() == 11.0);
    CHECK_THROWS_AS(ops::matmul(cst({1, 2}, {1, 2}), cst({3, 1}, {1, 2, 3})), ShapeError);

    Rng rng(4);
    Var x = th::leaf({5, 7}, rng), y = th::leaf({7, 3}, rng);
    const Tensor out = ops::matmul(x, y).value();
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 7; ++k) s += x.value().at({i, k}) * y.value().at({k, j});
            CHECK(std::abs(out.at({i, j}) - s) < 1e-6);
        }
    // matmul_nt agrees with an explicit transpose
    Var yt = ops::transpose(y, 0, 1);
    CHECK(th::max_abs_diff(ops::matmul_nt(x, yt).value(), out) < 1e-12);
    // batched with a shared right operand
    Var xb = th::leaf({2, 5, 7}, rng);
    const Tensor ob = ops::matmul(xb, y).value();
    const Tensor o1 = ops::matmul(ops::slice(ops::reshape(xb, {10, 7}), 0, 5, 5), y).value();
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) CHECK(ob.at({1, i, j}) == doctest::Approx(o1.at({i, j})).epsilon(1e-12));
}

TEST_CASE("reductions") {
    Var a = cst({2, 2}, {1, 3, 5, 7});
    CHECK(ops::mean(a, {1}).value().to_vector() == std::vector<double>{2, 6});
    CHECK(ops::mean(a, {1}, true).shape() == Shape{2, 1});
    CHECK(ops::sum_all(ops::constant(Tensor::zeros({3, 3}, DType::f64))).value().item() == 0.0);
    CHECK_THROWS_AS(ops::sum(a, {2}), ShapeError);

    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        Var r = th::leaf({6, 9}, rng);
        const Tensor m = ops::max(r, {1}).value();
        for (int i = 0; i < 6; ++i) {
            std::vector<double> row;
            for (int j = 0; j < 9; ++j) row.push_back(r.value().at({i, j}));
            std::sort(row.begin(), row.end());
            CHECK(m.flat(i) == row.back());
        }
        std::vector<double> all = r.value().to_vector();
        std::sort(all.begin(), all.end());
        CHECK(ops::max(r, {0, 1}).value().item() == all.back());
    }
}

TEST_CASE("softmax normalization and stability") {
    CHECK(ops::softmax(cst({2}, {0, 0}), 0).value().to_vector() == std::vector<double>{0.5, 0.5});
    const auto big = ops::softmax(cst({2}, {1000, 0}), 0).value().to_vector();
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] < 1e-300);
    CHECK(std::isfinite(big[1]));
    Rng rng(8);
    Var r = th::leaf({16, 16}, rng, -5, 5);
    const Tensor s = ops::softmax(r, 1).value();
    for (int i = 0; i < 16; ++i) {
        double sum = 0;
        for (int j = 0; j < 16; ++j) {
            CHECK(s.at({i, j}) > 0.0);
            CHECK(s.at({i, j}) < 1.0);
            sum += s.at({i, j});
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    CHECK_THROWS_AS(ops::softmax(cst({2}, {std::nan(""), 0}), 0), NonFiniteError);
}

TEST_CASE("shape ops") {
    Var a = cst({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(ops::transpose(a, 0, 1).value().to_vector() == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(ops::concat({a, a}, 0).shape() == Shape{4, 3});
    CHECK(ops::concat({a, a}, 1).value().at({1, 4}) == 5.0);
    CHECK(ops::slice(a, 1, 1, 2).value().to_vector() == std::vector<double>{2, 3, 5, 6});
    CHECK(ops::expand(cst({1, 3}, {1, 2, 3}), {2, 3}).value().at({1, 2}) == 3.0);
    CHECK_THROWS_AS(ops::slice(a, 1, 2, 2), ShapeError);
    CHECK_THROWS_AS(ops::concat({a, cst({1, 2}, {1, 2})}, 0), ShapeError);
    Var p = ops::permute(ops::reshape(a, {1, 2, 3}), {2, 0, 1});
    CHECK(p.shape() == Shape{3, 1, 2});
    CHECK(p.value().at({2, 0, 1}) == 6.0);
}

TEST_CASE("standardize and l1 loss") {
    Rng rng(9);
    Var x = th::leaf({4, 10}, rng, -2, 3);
    const Tensor y = ops::standardize(x, {1}, 1e-5).value();
    for (int i = 0; i < 4; ++i) {
        double m = 0, v = 0;
        for (int j = 0; j < 10; ++j) m += y.at({i, j});
        m /= 10;
        for (int j = 0; j < 10; ++j) v += (y.at({i, j}) - m) * (y.at({i, j}) - m);
        CHECK(std::abs(m) < 1e-9);
        CHECK(std::abs(v / 10 - 1) < 1e-4);
    }
    CHECK(ops::l1_loss(cst({2}, {1, 2}), cst({2}, {0, 4})).value().item() == 1.5);
}

// ---------------------------------------------------------------- gradients

namespace {

struct Case {
    const char* name;
    std::vector<Shape> shapes;
    std::function<Var(const std::vector<Var>&)> f;
    double lo = -1.0, hi = 1.0;
};

std::vector<Case> primitive_cases() {
    using V = std::vector<Var>;
    return {
        {"add", {{3, 4}, {1, 4}}, [](const V& v) { return ops::add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 1}}, [](const V& v) { return ops::sub(v[0], v[1]); }},
        {"mul", {{2, 3, 4}, {4}}, [](const V& v) { return ops::mul(v[0], v[1]); }},
        {"div", {{3, 4}, {3, 4}}, [](const V& v) { return ops::div(v[0], ops::add_scalar(ops::abs(v[1]), 0.5)); }},
        {"scale", {{5}}, [](const V& v) { return ops::scale(v[0], -2.5); }},
        {"sigmoid", {{6}}, [](const V& v) { return ops::sigmoid(v[0]); }, -4, 4},
        {"tanh", {{6}}, [](const V& v) { return ops::tanh(v[0]); }, -2, 2},
        {"relu", {{8}}, [](const V& v) { return ops::relu(v[0]); }},
        {"leaky_relu", {{8}}, [](const V& v) { return ops::leaky_relu(v[0], 0.2); }},
        {"gelu", {{8}}, [](const V& v) { return ops::gelu(v[0]); }, -3, 3},
        {"exp", {{6}}, [](const V& v) { return ops::exp(v[0]); }},
        {"abs", {{6}}, [](const V& v) { return ops::abs(v[0]); }},
        {"matmul", {{3, 4}, {4, 2}}, [](const V& v) { return ops::matmul(v[0], v[1]); }},
        {"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, [](const V& v) { return ops::matmul(v[0], v[1]); }},
        {"matmul_shared", {{2, 3, 4}, {4, 2}}, [](const V& v) { return ops::matmul(v[0], v[1]); }},
        {"matmul_nt", {{2, 3, 4}, {2, 5, 4}}, [](const V& v) { return ops::matmul_nt(v[0], v[1]); }},
        {"sum", {{3, 4, 2}}, [](const V& v) { return ops::sum(v[0], {0, 2}); }},
        {"mean", {{3, 4, 2}}, [](const V& v) { return ops::mean(v[0], {1}, true); }},
        {"max", {{3, 5}}, [](const V& v) { return ops::max(v[0], {1}); }},
        {"softmax", {{3, 5}}, [](const V& v) { return ops::softmax(v[0], 1); }, -2, 2},
        {"reshape", {{3, 4}}, [](const V& v) { return ops::reshape(v[0], {2, 6}); }},
        {"permute", {{2, 3, 4}}, [](const V& v) { return ops::permute(v[0], {2, 0, 1}); }},
        {"transpose", {{3, 4}}, [](const V& v) { return ops::transpose(v[0], 0, 1); }},
        {"concat", {{2, 3}, {2, 2}}, [](const V& v) { return ops::concat({v[0], v[1]}, 1); }},
        {"slice", {{4, 5}}, [](const V& v) { return ops::slice(v[0], 1, 1, 3); }},
        {"expand", {{3, 1}}, [](const V& v) { return ops::expand(v[0], {3, 4}); }},
        {"standardize", {{3, 6}}, [](const V& v) { return ops::standardize(v[0], {1}); }},
        {"l1_loss", {{3, 4}, {3, 4}}, [](const V& v) { return ops::l1_loss(v[0], v[1]); }},
    };
}

}  // namespace

TEST_CASE("every primitive passes grad_check at 1e-5 on 20 seeds") {
    DTypeScope s(DType::f64);
    for (const auto& c : primitive_cases()) {
        double worst = 0;
        bool ok = true;
        for (uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(1000 + seed);
            std::vector<Var> in;
            std::vector<NamedVar> named;
            for (size_t i = 0; i < c.shapes.size(); ++i) {
                in.push_back(th::leaf(c.shapes[i], rng, c.lo, c.hi));
                named.push_back({"in" + std::to_string(i), in.back()});
            }
            auto rep = grad_check([&] { return th::weighted_sum(c.f(in)); }, named, {.tol = 1e-5, .seed = seed});
            worst = std::max(worst, rep.max_rel_err);
            ok = ok && rep.pass;
        }
        INFO(c.name << " worst rel err " << worst);
        CHECK(ok);
    }
}

TEST_CASE("no primitive mutates its inputs") {
    DTypeScope s(DType::f64);
    for (const auto& c : primitive_cases()) {
        Rng rng(77);
        std::vector<Var> in;
        std::vector<uint64_t> hashes;
        for (const auto& sh : c.shapes) {
            in.push_back(th::leaf(sh, rng, c.lo, c.hi));
            hashes.push_back(in.back().value().content_hash());
        }
        Var y = th::weighted_sum(c.f(in));
        backward(y);
        for (size_t i = 0; i < in.size(); ++i) {
            INFO(c.name << " input " << i);
            CHECK(in[i].value().content_hash() == hashes[i]);
        }
    }
}
