#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "hsifuse/asse.hpp"
#include "hsifuse/gradsuite.hpp"

using namespace hsifuse;

namespace {

struct Fixture {
    ParamStore store;
    Rng rng;
    nn::ParamFactory pf;
    explicit Fixture(uint64_t seed = 0) : rng(seed), pf(store, rng) {}

    void zero_all() {
        for (auto& [name, p] : store.entries()) p.var.set_value(Tensor::zeros(p.var.shape(), p.var.dtype()));
    }
    void set(const std::string& name, Tensor t) { store.get(name).set_value(std::move(t)); }
};

asse::AsseConfig small(int64_t hidden = 4) {
    asse::AsseConfig c;
    c.bands = 5;
    c.msi_bands = 2;
    c.ratio = 2;
    c.hidden = hidden;
    c.directions = 4;
    c.daci_levels = 3;
    c.predictor_width = 4;
    c.predictor_hidden = 8;
    return c;
}

Tensor identity_1x1(int64_t n) {
    Tensor t = Tensor::zeros({n, n, 1, 1});
    for (int64_t i = 0; i < n; ++i) t.mutable_data<double>()[static_cast<size_t>(i * n + i)] = 1.0;
    return t;
}

bool spatially_constant(const Tensor& t, double tol) {
    const int64_t C = t.dim(0), P = t.dim(1) * t.dim(2);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t p = 0; p < P; ++p)
            if (std::abs(t.flat(c * P + p) - t.flat(c * P)) > tol) return false;
    return true;
}

}  // namespace

TEST_CASE("config validation") {
    asse::AsseConfig c = small();
    CHECK_NOTHROW(c.validate());
    c.hidden = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small();
    c.ratio = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small();
    c.daci_levels = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("preprocess") {
    DTypeScope s(DType::f64);
    SUBCASE("ratio 1 keeps X") {
        Fixture fx;
        auto cfg = small();
        cfg.ratio = 1;
        asse::Asse net(fx.pf, "asse", cfg);
        Var x(Tensor::uniform({5, 16, 16}, fx.rng, 0, 1));
        Var y(Tensor::uniform({2, 16, 16}, fx.rng, 0, 1));
        CHECK(th::max_abs_diff(net.preprocess(x, y).x0_raw.value(), x.value()) == 0.0);
    }
    SUBCASE("constant X stays constant") {
        Fixture fx;
        asse::Asse net(fx.pf, "asse", small());
        Var x(Tensor::full({5, 8, 8}, 0.3));
        Var y(Tensor::uniform({2, 16, 16}, fx.rng, 0, 1));
        const Tensor raw = net.preprocess(x, y).x0_raw.value();
        for (int64_t i = 0; i < raw.numel(); ++i) CHECK(raw.flat(i) == doctest::Approx(0.3).epsilon(1e-14));
    }
    SUBCASE("shapes at the default widths") {
        DTypeScope f32(DType::f32);
        Fixture fx;
        asse::AsseConfig cfg;
        asse::Asse net(fx.pf, "asse", cfg);
        const auto p = net.preprocess(Var(Tensor::zeros({31, 16, 16})), Var(Tensor::zeros({3, 64, 64})));
        CHECK(p.x0_raw.shape() == Shape{31, 64, 64});
        CHECK(p.x0.shape() == Shape{32, 64, 64});
        CHECK(p.y0.shape() == Shape{32, 64, 64});
    }
    SUBCASE("ratio mismatch") {
        Fixture fx;
        asse::Asse net(fx.pf, "asse", small());
        CHECK_THROWS_AS(net.preprocess(Var(Tensor::zeros({5, 8, 8})), Var(Tensor::zeros({2, 32, 32}))), ShapeError);
        CHECK_THROWS_AS(net.preprocess(Var(Tensor::zeros({4, 8, 8})), Var(Tensor::zeros({2, 16, 16}))), ShapeError);
    }
}

TEST_CASE("dae") {
    DTypeScope s(DType::f64);
    SUBCASE("all weights zero gives the residual identity") {
        Fixture fx(1);
        asse::Dae dae(fx.pf, "dae", small());
        fx.zero_all();
        Var f(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1));
        CHECK(th::max_abs_diff(dae.forward(f).value(), f.value()) == 0.0);
    }
    SUBCASE("constant input gives constant output") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            Fixture fx(seed);
            asse::Dae dae(fx.pf, "dae", small());
            // glob as identity: the local path then sees exactly zero
            fx.set("dae.glob.w", identity_1x1(4));
            fx.set("dae.glob.b", Tensor::zeros({4}));
            Tensor c = Tensor::zeros({4, 16, 16});
            for (int64_t ch = 0; ch < 4; ++ch)
                for (int64_t p = 0; p < 256; ++p) c.mutable_data<double>()[static_cast<size_t>(ch * 256 + p)] = 0.2 * ch - 0.3;
            const Tensor out = dae.forward(Var(c)).value();
            CHECK(out.all_finite());
            CHECK(spatially_constant(out, 1e-12));
        }
    }
    SUBCASE("grad_check at h=4, 16x16") {
        const auto r = gradsuite::run_case("asse", "dae", 1e-3);
        INFO("worst " << r.report.max_rel_err << " at " << r.report.worst_name);
        CHECK(r.report.pass);
        CHECK(r.report.checked > 4 * r.report.skipped_nonsmooth);
    }
}

TEST_CASE("daci") {
    DTypeScope s(DType::f64);
    SUBCASE("zero value projection at L=1") {
        Fixture fx(2);
        auto cfg = small();
        cfg.daci_levels = 1;
        asse::Daci daci(fx.pf, "daci", cfg);
        fx.set("daci.level1.v.w", Tensor::zeros({4, 4, 1, 1}));
        fx.set("daci.level1.v.b", Tensor::zeros({4}));
        Var a(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1)), b(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1));
        const Tensor t = daci.forward(a, b).value();
        for (int64_t i = 0; i < t.numel(); ++i) REQUIRE(t.flat(i) == 0.0);
    }
    SUBCASE("attention rows sum to one at every level") {
        Fixture fx(3);
        asse::Daci daci(fx.pf, "daci", small());
        Var a(Tensor::uniform({4, 16, 16}, fx.rng, -2, 2)), b(Tensor::uniform({4, 16, 16}, fx.rng, -2, 2));
        CHECK(daci.gamma.value().at({0}) == doctest::Approx(1.0 / 3));
        for (int64_t l = 0; l < 3; ++l) {
            const Tensor att = daci.attention(a, b, l).value();
            REQUIRE(att.shape() == Shape{4, 4});
            for (int64_t i = 0; i < 4; ++i) {
                double row = 0;
                for (int64_t j = 0; j < 4; ++j) {
                    const double v = att.at({i, j});
                    CHECK(v > 0.0);
                    CHECK(v < 1.0);
                    row += v;
                }
                CHECK(std::abs(row - 1.0) < 1e-6);
            }
        }
    }
    SUBCASE("permuting key/value channels leaves T unchanged") {
        Fixture fx(4);
        asse::Daci daci(fx.pf, "daci", small());
        Var a(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1)), b(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1));
        const Tensor before = daci.forward(a, b).value();
        const std::vector<int64_t> perm{2, 0, 3, 1};
        for (int l = 1; l <= 3; ++l)
            for (const char* proj : {"k", "v"}) {
                const std::string base = "daci.level" + std::to_string(l) + "." + proj;
                const Tensor w = fx.store.get(base + ".w").value(), bias = fx.store.get(base + ".b").value();
                std::vector<double> wp(16), bp(4);
                for (int64_t o = 0; o < 4; ++o) {
                    const int64_t src = perm[static_cast<size_t>(o)];
                    bp[static_cast<size_t>(o)] = bias.flat(src);
                    for (int64_t i = 0; i < 4; ++i) wp[static_cast<size_t>(o * 4 + i)] = w.flat(src * 4 + i);
                }
                fx.set(base + ".w", Tensor::from({4, 4, 1, 1}, wp));
                fx.set(base + ".b", Tensor::from({4}, bp));
            }
        CHECK(th::max_abs_diff(daci.forward(a, b).value(), before) < 1e-12);
    }
    SUBCASE("branch shapes must agree") {
        Fixture fx;
        asse::Daci daci(fx.pf, "daci", small());
        CHECK_THROWS_AS(daci.forward(Var(Tensor::zeros({4, 16, 16})), Var(Tensor::zeros({4, 8, 16}))), ShapeError);
    }
}

TEST_CASE("vdae") {
    DTypeScope s(DType::f64);
    SUBCASE("zero output projections keep the enhanced features") {
        Fixture fx(5);
        asse::Vdae v(fx.pf, "v", small());
        fx.set("v.out_x.w", Tensor::zeros({4, 4, 1, 1}));
        fx.set("v.out_x.b", Tensor::zeros({4}));
        fx.set("v.out_y.w", Tensor::zeros({4, 4, 1, 1}));
        fx.set("v.out_y.b", Tensor::zeros({4}));
        Var x(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1)), y(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1));
        const auto st = v.forward(x, y);
        CHECK(th::max_abs_diff(st.x.value(), v.dae.forward(x).value()) == 0.0);
        CHECK(th::max_abs_diff(st.y.value(), v.dae.forward(y).value()) == 0.0);
    }
    SUBCASE("saturated channel gate gives a near-pure residual") {
        Fixture fx(6);
        asse::Vdae v(fx.pf, "v", small());
        fx.set("v.refine.fc2.b", Tensor::full({4}, -60.0));
        Var x(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1)), y(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1));
        const auto st = v.forward(x, y);
        const Tensor fx_ = v.dae.forward(x).value();
        // out_x of a ~0 map is its bias alone
        const Tensor bias = fx.store.get("v.out_x.b").value();
        double worst = 0;
        for (int64_t c = 0; c < 4; ++c)
            for (int64_t p = 0; p < 256; ++p)
                worst = std::max(worst, std::abs(st.x.value().flat(c * 256 + p) - fx_.flat(c * 256 + p) - bias.flat(c)));
        CHECK(worst < 1e-12);
    }
    SUBCASE("ablations replace the DAE by identity and DACI by the branch mean") {
        Fixture fx(7);
        auto cfg = small();
        cfg.use_dae = false;
        cfg.use_daci = false;
        asse::Vdae v(fx.pf, "v", cfg);
        CHECK_FALSE(fx.store.contains("v.dae.glob.w"));
        CHECK_FALSE(fx.store.contains("v.daci.gamma"));
        Var x(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1)), y(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1));
        const auto st = v.forward(x, y);
        const Tensor mean = ops::scale(ops::add(x, y), 0.5).value();
        CHECK(th::max_abs_diff(st.t.value(), mean) == 0.0);
    }
}

TEST_CASE("fusion block") {
    DTypeScope s(DType::f64);
    Fixture fx(8);
    asse::FusionBlock blk(fx.pf, "f", 8, 4, 3, nn::Init::zeros);
    Var a(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1)), b(Tensor::uniform({4, 16, 16}, fx.rng, -1, 1));
    const Tensor out = blk.forward({a, b}).value();
    CHECK(out.shape() == Shape{3, 16, 16});
    for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out.flat(i) == 0.0);
    CHECK_THROWS_AS(blk.forward({a}), ShapeError);

    asse::FusionBlock single(fx.pf, "g", 4, 4, 4);
    fx.set("g.mix.w", identity_1x1(4));
    CHECK(single.forward({a}).shape() == a.shape());

    const auto r = gradsuite::run_case("asse", "fusion_block", 1e-3);
    INFO("worst " << r.report.max_rel_err << " at " << r.report.worst_name);
    CHECK(r.report.pass);
}

TEST_CASE("daci and stage I pass grad_check") {
    for (const char* name : {"daci", "asse"}) {
        const auto r = gradsuite::run_case("asse", name, 1e-3);
        INFO(name << " worst " << r.report.max_rel_err << " at " << r.report.worst_name);
        CHECK(r.report.pass);
        CHECK(r.report.checked > 4 * r.report.skipped_nonsmooth);
    }
}

TEST_CASE("stage I forward") {
    SUBCASE("zero tail gives the bilinear upsample bit for bit") {
        for (DType dt : {DType::f64, DType::f32}) {
            DTypeScope s(dt);
            Fixture fx(9);
            asse::Asse net(fx.pf, "asse", small());
            Var x(Tensor::uniform({5, 8, 8}, fx.rng, 0, 1)), y(Tensor::uniform({2, 16, 16}, fx.rng, 0, 1));
            const auto out = net.forward(x, y);
            const Tensor up = nn::resize_bilinear(x, 16, 16).value();
            CHECK(out.z_init.value().content_hash() == up.content_hash());
        }
    }
    SUBCASE("residual structure holds for random parameters") {
        DTypeScope s(DType::f64);
        Fixture fx(10);
        auto cfg = small();
        cfg.zero_tail = false;
        asse::Asse net(fx.pf, "asse", cfg);
        Var x(Tensor::uniform({5, 8, 8}, fx.rng, 0, 1)), y(Tensor::uniform({2, 16, 16}, fx.rng, 0, 1));
        const auto out = net.forward(x, y);
        const Tensor up = nn::resize_bilinear(x, 16, 16).value();
        CHECK(out.x0_raw.value().content_hash() == up.content_hash());
        CHECK(ops::add(Var(up), out.f3).value().content_hash() == out.z_init.value().content_hash());
        CHECK(th::max_abs_diff(ops::sub(out.z_init, out.f3).value(), up) < 1e-15);
        double f3max = 0;
        for (int64_t i = 0; i < out.f3.value().numel(); ++i) f3max = std::max(f3max, std::abs(out.f3.value().flat(i)));
        CHECK(f3max > 0.0);
    }
    SUBCASE("shapes at the default widths") {
        DTypeScope s(DType::f32);
        Fixture fx(11);
        asse::AsseConfig cfg;
        cfg.hidden = 8;
        cfg.directions = 4;
        asse::Asse net(fx.pf, "asse", cfg);
        const auto out = net.forward(Var(Tensor::uniform({31, 16, 16}, fx.rng, 0, 1)),
                                     Var(Tensor::uniform({3, 64, 64}, fx.rng, 0, 1)));
        CHECK(out.z_init.shape() == Shape{31, 64, 64});
        for (const auto& st : out.stages) {
            CHECK(st.x.shape() == Shape{8, 64, 64});
            CHECK(st.y.shape() == Shape{8, 64, 64});
            CHECK(st.t.shape() == Shape{8, 64, 64});
        }
    }
    SUBCASE("without the fusion cascade a plain tail maps the last stage") {
        DTypeScope s(DType::f64);
        Fixture fx(12);
        auto cfg = small();
        cfg.use_fusion = false;
        asse::Asse net(fx.pf, "asse", cfg);
        CHECK(fx.store.contains("asse.plain_tail.w"));
        CHECK_FALSE(fx.store.contains("asse.fusion1.mix.w"));
        const auto out = net.forward(Var(Tensor::uniform({5, 8, 8}, fx.rng, 0, 1)),
                                     Var(Tensor::uniform({2, 16, 16}, fx.rng, 0, 1)));
        CHECK(out.z_init.shape() == Shape{5, 16, 16});
    }
}
