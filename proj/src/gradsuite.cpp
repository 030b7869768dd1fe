#include "hsifuse/gradsuite.hpp"

#include <chrono>
#include <functional>

#include "hsifuse/asse.hpp"
#include "hsifuse/ast.hpp"
#include "hsifuse/hpsc.hpp"
#include "hsifuse/model.hpp"
#include "hsifuse/nn.hpp"

namespace hsifuse::gradsuite {

namespace {

using Inputs = std::vector<NamedVar>;

constexpr double kEps = 1e-4;

struct Case {
    std::string name;
    std::function<CaseResult(double tol, uint64_t seed)> run;
};

// Weights each output element differently so that errors cannot cancel.
// The output seen on the first call is subtracted as a constant: the
// gradient is unchanged, but the finite differences no longer round
// against a large base value (composites carry a direct upsample path).
class CheckLoss {
public:
    explicit CheckLoss(uint64_t seed) : seed_(seed) {}
    Var operator()(const Var& y) {
        if (!base_.defined()) {
            base_ = y.value().clone();
            Rng r(seed_ ^ 0x5eedULL);
            weights_ = Tensor::uniform(y.shape(), r, 0.5, 1.5, y.dtype());
        }
        return ops::sum_all(ops::mul(ops::sub(y, ops::constant(base_)), ops::constant(weights_)));
    }

private:
    uint64_t seed_;
    Tensor base_, weights_;
};

Var leaf(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Var(Tensor::uniform(std::move(s), rng, lo, hi, DType::f64), true);
}

void add_params(Inputs& in, const ParamStore& store) {
    for (const auto& name : store.names()) in.push_back({name, store.get(name)});
}

CaseResult timed(const std::string& name, const std::function<Var()>& f, const Inputs& in, double tol,
                 int64_t max_coords, uint64_t seed, double scale_floor = 1e-6) {
    const auto t0 = std::chrono::steady_clock::now();
    CaseResult r;
    r.name = name;
    r.report = grad_check(f, in, {.eps = kEps, .tol = tol, .max_coords = max_coords, .seed = seed, .scale_floor = scale_floor});
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// ---------------------------------------------------------------- primitives

struct Prim {
    std::string name;
    std::vector<Shape> shapes;
    std::function<Var(const std::vector<Var>&)> f;
    double lo = -1.0, hi = 1.0;
};

std::vector<Prim> primitive_list() {
    using V = std::vector<Var>;
    using nn::PadMode;
    return {
        {"add", {{3, 4}, {1, 4}}, [](const V& v) { return ops::add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 1}}, [](const V& v) { return ops::sub(v[0], v[1]); }},
        {"mul", {{2, 3, 4}, {4}}, [](const V& v) { return ops::mul(v[0], v[1]); }},
        {"div", {{3, 4}, {3, 4}}, [](const V& v) { return ops::div(v[0], ops::add_scalar(ops::abs(v[1]), 0.5)); }},
        {"neg", {{5}}, [](const V& v) { return ops::neg(v[0]); }},
        {"scale", {{5}}, [](const V& v) { return ops::scale(v[0], -2.5); }},
        {"add_scalar", {{5}}, [](const V& v) { return ops::add_scalar(v[0], 0.75); }},
        {"sigmoid", {{6}}, [](const V& v) { return ops::sigmoid(v[0]); }, -4, 4},
        {"tanh", {{6}}, [](const V& v) { return ops::tanh(v[0]); }, -2, 2},
        {"relu", {{8}}, [](const V& v) { return ops::relu(v[0]); }},
        {"leaky_relu", {{8}}, [](const V& v) { return ops::leaky_relu(v[0], 0.2); }},
        {"gelu", {{8}}, [](const V& v) { return ops::gelu(v[0]); }, -3, 3},
        {"exp", {{6}}, [](const V& v) { return ops::exp(v[0]); }},
        {"abs", {{6}}, [](const V& v) { return ops::abs(v[0]); }},
        {"matmul", {{3, 4}, {4, 2}}, [](const V& v) { return ops::matmul(v[0], v[1]); }},
        {"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, [](const V& v) { return ops::matmul(v[0], v[1]); }},
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
        {"conv2d", {{3, 6, 5}, {4, 3, 3, 3}, {4}},
         [](const V& v) { return nn::conv2d(v[0], v[1], v[2], {1, 1, PadMode::zero}); }},
        {"conv2d_reflect_stride2", {{3, 6, 5}, {4, 3, 3, 3}, {4}},
         [](const V& v) { return nn::conv2d(v[0], v[1], v[2], {2, 1, PadMode::reflect}); }},
        {"conv2d_1x1", {{3, 6, 5}, {2, 3, 1, 1}}, [](const V& v) { return nn::conv2d(v[0], v[1], Var(), {}); }},
        {"separable_gaussian", {{2, 7, 6}}, [](const V& v) { return nn::separable_gaussian(v[0], 5, 1.0); }},
        {"avgpool2", {{2, 9, 10}}, [](const V& v) { return nn::avgpool2(v[0]); }},
        {"adaptive_avgpool", {{2, 9, 10}}, [](const V& v) { return nn::adaptive_avgpool(v[0], 4, 3); }},
        {"global_avgpool", {{2, 9, 10}}, [](const V& v) { return nn::global_avgpool(v[0]); }},
        {"resize_bilinear", {{2, 5, 4}}, [](const V& v) { return nn::resize_bilinear(v[0], 11, 9); }},
        {"grid_sample", {{2, 6, 5}, {4, 5, 2}}, [](const V& v) { return nn::grid_sample(v[0], v[1]); }, -0.9, 0.9},
        {"rotation_grid", {{3}}, [](const V& v) { return nn::rotation_grid(v[0], 4, 5); }, 0.2, 2.5},
        {"layer_norm", {{3, 6, 5}, {3}, {3}}, [](const V& v) { return nn::layer_norm(v[0], v[1], v[2]); }},
        {"instance_norm", {{3, 6, 5}, {3}, {3}}, [](const V& v) { return nn::instance_norm(v[0], v[1], v[2]); }},
        {"linear", {{3, 4}, {5, 4}, {5}}, [](const V& v) { return nn::linear(v[0], v[1], v[2]); }},
    };
}

std::vector<Case> primitive_cases() {
    std::vector<Case> out;
    for (const auto& p : primitive_list()) {
        out.push_back({p.name, [p](double tol, uint64_t seed) {
                           Rng rng(fnv1a64(p.name.data(), p.name.size(), seed));
                           std::vector<Var> vs;
                           Inputs in;
                           for (size_t i = 0; i < p.shapes.size(); ++i) {
                               vs.push_back(leaf(p.shapes[i], rng, p.lo, p.hi));
                               in.push_back({"in" + std::to_string(i), vs.back()});
                           }
                           CheckLoss loss(seed);
                           return timed(p.name, [&] { return loss(p.f(vs)); }, in, tol, 64, seed, 0.0);
                       }});
    }
    return out;
}

// ---------------------------------------------------------------- composites

struct Fixture {
    ParamStore store;
    Rng rng;
    nn::ParamFactory pf;
    explicit Fixture(uint64_t seed) : rng(seed), pf(store, rng) {}
};

// Small hidden widths and a coarse predictor keep each case to seconds.
asse::AsseConfig tiny_asse() {
    asse::AsseConfig c;
    c.bands = 4;
    c.msi_bands = 2;
    c.ratio = 2;
    c.hidden = 4;
    c.directions = 4;
    c.daci_levels = 2;
    c.predictor_width = 4;
    c.predictor_hidden = 8;
    c.zero_tail = false;
    return c;
}

std::vector<Case> ast_cases() {
    return {{"ast", [](double tol, uint64_t seed) {
                 DTypeScope s(DType::f64);
                 Fixture fx(seed + 1);
                 ast::Ast a(fx.pf, "ast", {.channels = 2, .directions = 4, .predictor_width = 4, .predictor_hidden = 8});
                 // nonzero enhancement so the directional branch carries gradient
                 for (auto& al : a.alpha) al.set_value(Tensor::uniform({1}, fx.rng, 0.5, 1.0));
                 Var f = leaf({2, 16, 16}, fx.rng, 0.0, 1.0);
                 Inputs in{{"input", f}};
                 add_params(in, fx.store);
                 CheckLoss loss(seed);
                 return timed("ast", [&] { return loss(a.forward(f)); }, in, tol, 16, seed);
             }}};
}

std::vector<Case> asse_cases() {
    return {
        {"dae",
         [](double tol, uint64_t seed) {
             DTypeScope s(DType::f64);
             Fixture fx(seed + 2);
             asse::Dae dae(fx.pf, "dae", tiny_asse());
             for (auto& al : dae.ast.alpha) al.set_value(Tensor::uniform({1}, fx.rng, 0.5, 1.0));
             Var f = leaf({4, 16, 16}, fx.rng);
             Inputs in{{"input", f}};
             add_params(in, fx.store);
             CheckLoss loss(seed);
             return timed("dae", [&] { return loss(dae.forward(f)); }, in, tol, 16, seed);
         }},
        {"daci",
         [](double tol, uint64_t seed) {
             DTypeScope s(DType::f64);
             Fixture fx(seed + 3);
             asse::Daci daci(fx.pf, "daci", tiny_asse());
             Var a = leaf({4, 16, 16}, fx.rng), b = leaf({4, 16, 16}, fx.rng);
             Inputs in{{"fx", a}, {"fy", b}};
             add_params(in, fx.store);
             CheckLoss loss(seed);
             return timed("daci", [&] { return loss(daci.forward(a, b)); }, in, tol, 16, seed);
         }},
        {"fusion_block",
         [](double tol, uint64_t seed) {
             DTypeScope s(DType::f64);
             Fixture fx(seed + 4);
             asse::FusionBlock blk(fx.pf, "fusion", 8, 4, 3);
             Var a = leaf({4, 16, 16}, fx.rng), b = leaf({4, 16, 16}, fx.rng);
             Inputs in{{"in0", a}, {"in1", b}};
             add_params(in, fx.store);
             CheckLoss loss(seed);
             return timed("fusion_block", [&] { return loss(blk.forward({a, b})); }, in, tol, 16, seed);
         }},
        {"asse",
         [](double tol, uint64_t seed) {
             DTypeScope s(DType::f64);
             Fixture fx(seed + 5);
             asse::Asse net(fx.pf, "asse", tiny_asse());
             Var x = leaf({4, 8, 8}, fx.rng, 0.0, 1.0), y = leaf({2, 16, 16}, fx.rng, 0.0, 1.0);
             Inputs in{{"lr_hsi", x}, {"msi", y}};
             add_params(in, fx.store);
             CheckLoss loss(seed);
             return timed("asse", [&] { return loss(net.forward(x, y).z_init); }, in, tol, 8, seed);
         }},
    };
}

hpsc::GsrtConfig tiny_gsrt() {
    hpsc::GsrtConfig c;
    c.bands = 4;
    c.embed = 8;
    c.blocks = 1;
    c.window = 8;
    c.zero_tail = false;
    return c;
}

std::vector<Case> hpsc_cases() {
    return {
        {"gsrt_block",
         [](double tol, uint64_t seed) {
             DTypeScope s(DType::f64);
             Fixture fx(seed + 6);
             hpsc::GsrtBlock blk(fx.pf, "block", tiny_gsrt());
             Var h = leaf({8, 16, 16}, fx.rng), sp = leaf({4}, fx.rng);
             Inputs in{{"features", h}, {"prior", sp}};
             add_params(in, fx.store);
             CheckLoss loss(seed);
             return timed("gsrt_block", [&] { return loss(blk.forward(h, sp)); }, in, tol, 16, seed);
         }},
        {"gsrt",
         [](double tol, uint64_t seed) {
             DTypeScope s(DType::f64);
             Fixture fx(seed + 7);
             hpsc::Gsrt net(fx.pf, "gsrt", tiny_gsrt());
             Var z = leaf({4, 16, 16}, fx.rng, 0.0, 1.0), x = leaf({4, 8, 8}, fx.rng, 0.0, 1.0);
             Inputs in{{"z_init", z}, {"lr_hsi", x}};
             add_params(in, fx.store);
             CheckLoss loss(seed);
             return timed("gsrt", [&] { return loss(net.forward(z, x)); }, in, tol, 8, seed);
         }},
    };
}

std::vector<Case> full_cases() {
    return {{"full", [](double tol, uint64_t seed) {
                 DTypeScope s(DType::f64);
                 FusionConfig cfg;
                 cfg.bands = 4;
                 cfg.msi_bands = 2;
                 cfg.ratio = 2;
                 cfg.hidden = 8;
                 cfg.directions = 4;
                 cfg.daci_levels = 2;
                 cfg.predictor_width = 4;
                 cfg.predictor_hidden = 8;
                 cfg.embed = 8;
                 cfg.blocks = 1;
                 cfg.window = 8;
                 FusionModel model(cfg, seed + 8, InitMode::random);
                 Rng rng(seed + 9);
                 Var x = leaf({4, 8, 8}, rng, 0.0, 1.0), y = leaf({2, 16, 16}, rng, 0.0, 1.0);
                 Inputs in{{"lr_hsi", x}, {"msi", y}};
                 add_params(in, model.params());
                 CheckLoss loss(seed);
                 return timed("full", [&] { return loss(model.forward(x, y).z_hat); }, in, tol, 4,
                              seed);
             }}};
}

std::vector<Case> cases_for(const std::string& scope) {
    if (scope == "primitives") return primitive_cases();
    if (scope == "ast") return ast_cases();
    if (scope == "asse") return asse_cases();
    if (scope == "hpsc") return hpsc_cases();
    if (scope == "full") return full_cases();
    std::string known;
    for (const auto& s : scopes()) known += " " + s;
    throw ConfigError("unknown gradcheck scope '" + scope + "' (expected one of:" + known + " all)");
}

}  // namespace

const std::vector<std::string>& scopes() {
    static const std::vector<std::string> s{"primitives", "ast", "asse", "hpsc", "full"};
    return s;
}

std::vector<CaseResult> run(const std::string& scope, double tol, uint64_t seed) {
    std::vector<CaseResult> out;
    const std::vector<std::string> todo = scope == "all" ? scopes() : std::vector<std::string>{scope};
    for (const auto& sc : todo)
        for (const auto& c : cases_for(sc)) {
            CaseResult r = c.run(tol, seed);
            r.scope = sc;
            out.push_back(std::move(r));
        }
    return out;
}

std::vector<std::string> case_names(const std::string& scope) {
    std::vector<std::string> out;
    for (const auto& c : cases_for(scope)) out.push_back(c.name);
    return out;
}

CaseResult run_case(const std::string& scope, const std::string& name, double tol, uint64_t seed) {
    for (const auto& c : cases_for(scope))
        if (c.name == name) {
            CaseResult r = c.run(tol, seed);
            r.scope = scope;
            return r;
        }
    throw ConfigError("no gradcheck case '" + name + "' in scope '" + scope + "'");
}

}  // namespace hsifuse::gradsuite
