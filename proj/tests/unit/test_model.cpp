#include <doctest.h>

#include <set>
#include <sstream>

#include "helpers.hpp"
#include "hsifuse/gradsuite.hpp"
#include "hsifuse/model.hpp"

using namespace hsifuse;

namespace {

FusionConfig tiny() {
    FusionConfig c;
    c.bands = 6;
    c.msi_bands = 2;
    c.ratio = 2;
    c.hidden = 4;
    c.directions = 4;
    c.daci_levels = 2;
    c.predictor_width = 4;
    c.predictor_hidden = 8;
    c.embed = 4;
    c.window = 8;
    return c;
}

struct Inputs {
    Var x, y;
};

Inputs inputs(const FusionConfig& c, Rng& rng, int64_t size = 16) {
    return {Var(Tensor::uniform({c.bands, size / c.ratio, size / c.ratio}, rng, 0, 1)),
            Var(Tensor::uniform({c.msi_bands, size, size}, rng, 0, 1))};
}

}  // namespace

TEST_CASE("config keys round-trip") {
    FusionConfig c;
    const std::string canon = c.canonical();
    CHECK(canon.find("bands=31\n") != std::string::npos);
    CHECK(canon.find("use_gsrt=true\n") != std::string::npos);
    FusionConfig d;
    CHECK(d.set("hidden", "16"));
    CHECK(d.set("use_daci", "false"));
    CHECK_FALSE(d.set("learning_rate", "1"));
    CHECK(d.hidden == 16);
    CHECK_FALSE(d.use_daci);
    CHECK(d.hash() != c.hash());
    CHECK_THROWS_AS(d.set("hidden", "sixteen"), ConfigError);
    CHECK_THROWS_AS(d.set("hidden", "16x"), ConfigError);
    CHECK_THROWS_AS(d.set("use_dae", "maybe"), ConfigError);

    // replaying the canonical form reproduces the hash
    FusionConfig e;
    std::istringstream in(d.canonical());
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find('=');
        CHECK(e.set(line.substr(0, eq), line.substr(eq + 1)));
    }
    CHECK(e.hash() == d.hash());
}

TEST_CASE("config validation") {
    FusionConfig c = tiny();
    CHECK_NOTHROW(c.validate());
    c.blocks = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.blocks = 0;
    c.use_gsrt = false;
    CHECK_NOTHROW(c.validate());
    c = tiny();
    c.msi_bands = 7;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(FusionModel(c, 0), ConfigError);
}

TEST_CASE("training init starts at the upsampled input") {
    for (DType dt : {DType::f32, DType::f64}) {
        DTypeScope s(dt);
        FusionModel m(tiny(), 3);
        Rng rng(1);
        auto in = inputs(tiny(), rng);
        const auto out = m.forward(in.x, in.y);
        const Tensor up = nn::resize_bilinear(in.x, 16, 16).value();
        CHECK(out.z_init.value().content_hash() == up.content_hash());
        CHECK(out.z_hat.value().content_hash() == up.content_hash());
    }
}

TEST_CASE("random init moves both stages") {
    DTypeScope s(DType::f64);
    FusionModel m(tiny(), 3, InitMode::random);
    Rng rng(1);
    auto in = inputs(tiny(), rng);
    const auto out = m.forward(in.x, in.y);
    const Tensor up = nn::resize_bilinear(in.x, 16, 16).value();
    CHECK(th::max_abs_diff(out.z_init.value(), up) > 0.0);
    CHECK(th::max_abs_diff(out.z_hat.value(), out.z_init.value()) > 0.0);
}

TEST_CASE("seeded construction is reproducible") {
    FusionModel a(tiny(), 11), b(tiny(), 11), c(tiny(), 12);
    CHECK(a.params().content_hash() == b.params().content_hash());
    CHECK(a.params().content_hash() != c.params().content_hash());
}

TEST_CASE("ablations register only live branches") {
    auto has_prefix = [](const ParamStore& st, const std::string& p) {
        for (const auto& n : st.names())
            if (n.rfind(p, 0) == 0) return true;
        return false;
    };
    {
        FusionModel full(tiny(), 0);
        CHECK(has_prefix(full.params(), "asse.vdae1.dae."));
        CHECK(has_prefix(full.params(), "asse.vdae1.daci."));
        CHECK(has_prefix(full.params(), "asse.fusion3."));
        CHECK(has_prefix(full.params(), "gsrt."));
    }
    struct Flag {
        const char* key;
        const char* prefix;
    };
    for (const Flag f : {Flag{"use_dae", "asse.vdae1.dae."}, Flag{"use_daci", "asse.vdae1.daci."},
                         Flag{"use_fusion", "asse.fusion"}, Flag{"use_gsrt", "gsrt."}}) {
        FusionConfig c = tiny();
        c.set(f.key, "false");
        FusionModel m(c, 0);
        CHECK_MESSAGE(!has_prefix(m.params(), f.prefix), f.key);
        Rng rng(2);
        auto in = inputs(c, rng);
        const auto out = m.forward(in.x, in.y);
        CHECK(out.z_hat.shape() == Shape{6, 16, 16});
        if (std::string(f.key) == "use_gsrt") CHECK(out.z_hat.value().content_hash() == out.z_init.value().content_hash());
    }
}

TEST_CASE("every parameter receives gradient at random init") {
    DTypeScope s(DType::f64);
    FusionConfig cfg = tiny();
    cfg.hidden = 8;
    for (uint64_t seed : {5, 6, 7}) {
    FusionModel m(cfg, seed, InitMode::random);
    std::set<std::string> reached;
    Rng rng(seed);
    for (int batch = 0; batch < 5; ++batch) {
        // batches differ in level and contrast, not only in noise
        const double lo = rng.uniform(-1.0, 0.5), hi = lo + rng.uniform(0.2, 1.5);
        Inputs in{Var(Tensor::uniform({6, 8, 8}, rng, lo, hi)), Var(Tensor::uniform({2, 16, 16}, rng, lo, hi))};
        const Var target(Tensor::uniform({6, 16, 16}, rng, lo, hi));
        m.params().zero_grad();
        backward(ops::l1_loss(m.forward(in.x, in.y).z_hat, target));
        for (const auto& name : m.params().names()) {
            const Tensor g = m.params().grad(name);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (g.flat(i) != 0.0) {
                    reached.insert(name);
                    break;
                }
        }
    }
    for (const auto& name : m.params().names()) CHECK_MESSAGE(reached.count(name) == 1, seed << " " << name);
    }
}

TEST_CASE("full model passes grad_check at tiny size") {
    const auto r = gradsuite::run_case("full", "full", 1e-3);
    INFO("worst " << r.report.max_rel_err << " at " << r.report.worst_name << ", skipped "
                  << r.report.skipped_nonsmooth << " of " << r.report.checked + r.report.skipped_nonsmooth);
    CHECK(r.report.pass);
    CHECK(r.report.checked > 3 * r.report.skipped_nonsmooth);
}
