#include "hsifuse/asse.hpp"

#include <cmath>

namespace hsifuse::asse {

void AsseConfig::validate() const {
    if (hidden < 4) throw ConfigError("hidden width must be >= 4");
    if (daci_levels < 1) throw ConfigError("daci levels must be >= 1");
    if (ratio != 1 && ratio != 2 && ratio != 4 && ratio != 8) throw ConfigError("ratio must be one of 1, 2, 4, 8");
    if (bands < 1 || msi_bands < 1) throw ConfigError("band counts must be positive");
    if (msi_bands > bands) throw ConfigError("msi bands must not exceed hyperspectral bands");
    if (directions < 1) throw ConfigError("need at least one direction");
}

namespace {

Var channel_gate(const nn::Mlp& mlp, const Var& t) {
    const int64_t h = t.dim(0);
    Var s = ops::sigmoid(mlp(ops::reshape(nn::global_avgpool(t), {h})));
    return ops::mul(t, ops::reshape(s, {h, 1, 1}));
}

}  // namespace

// ---------------------------------------------------------------- DAE

Dae::Dae(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg)
    : ast(pf, name + ".ast",
          {.channels = cfg.hidden,
           .directions = cfg.directions,
           .predictor_width = cfg.predictor_width,
           .predictor_hidden = cfg.predictor_hidden}),
      glob(pf, name + ".glob", cfg.hidden, cfg.hidden, 1),
      loc1(pf, name + ".loc1", cfg.hidden, cfg.hidden, 3, nn::Init::kaiming_uniform, 1, false),
      loc2(pf, name + ".loc2", cfg.hidden, cfg.hidden, 3),
      loc_norm(pf, name + ".loc_norm", cfg.hidden),
      gate(pf, name + ".gate", 2 * cfg.hidden, cfg.hidden, 1) {}

Var Dae::forward(const Var& f) const {
    const Shape s = f.shape();
    Var dir = ast.forward(f);
    Var g = ops::expand(glob(nn::global_avgpool(dir)), s);
    Var loc = loc2(ops::tanh(loc_norm(loc1(ops::sub(dir, g)))));
    Var w = ops::sigmoid(gate(ops::concat({g, loc}, 0)));
    Var mixed = ops::add(ops::mul(w, g), ops::mul(ops::add_scalar(ops::neg(w), 1.0), loc));
    return ops::add(mixed, f);
}

// ---------------------------------------------------------------- DACI

Daci::Daci(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg) {
    for (int64_t l = 0; l < cfg.daci_levels; ++l) {
        const std::string lv = name + ".level" + std::to_string(l + 1);
        levels.push_back({nn::Conv2d(pf, lv + ".q", cfg.hidden, cfg.hidden, 1),
                          nn::Conv2d(pf, lv + ".k", cfg.hidden, cfg.hidden, 1),
                          nn::Conv2d(pf, lv + ".v", cfg.hidden, cfg.hidden, 1)});
    }
    gamma = pf.constant(name + ".gamma", {cfg.daci_levels}, 1.0 / static_cast<double>(cfg.daci_levels));
}

namespace {
Var downsample(Var x, int64_t level) {
    for (int64_t i = 0; i < level; ++i) x = nn::avgpool2(x);
    return x;
}
}  // namespace

Var Daci::attention(const Var& fx, const Var& fy, int64_t level) const {
    const Level& lv = levels.at(static_cast<size_t>(level));
    Var x = downsample(fx, level), y = downsample(fy, level);
    const int64_t h = x.dim(0), n = x.dim(1) * x.dim(2);
    Var q = ops::reshape(lv.q(x), {h, n});
    Var k = ops::reshape(lv.k(y), {h, n});
    return ops::softmax(ops::scale(ops::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(n))), 1);
}

Var Daci::forward(const Var& fx, const Var& fy) const {
    if (fx.shape() != fy.shape()) throw ShapeError("daci branch shapes differ");
    const int64_t h = fx.dim(0), H = fx.dim(1), W = fx.dim(2);
    Var total;
    for (size_t l = 0; l < levels.size(); ++l) {
        Var y = downsample(fy, static_cast<int64_t>(l));
        const int64_t hl = y.dim(1), wl = y.dim(2);
        Var a = attention(fx, fy, static_cast<int64_t>(l));
        Var v = ops::reshape(levels[l].v(y), {h, hl * wl});
        Var out = ops::reshape(ops::matmul(a, v), {h, hl, wl});
        if (hl != H || wl != W) out = nn::resize_bilinear(out, H, W);
        Var term = ops::mul(out, ops::slice(gamma, 0, static_cast<int64_t>(l), 1));
        total = total.defined() ? ops::add(total, term) : term;
    }
    return total;
}

// ---------------------------------------------------------------- VDAE

Vdae::Vdae(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg)
    : refine(pf, name + ".refine", cfg.hidden, std::max<int64_t>(cfg.hidden / 4, 1), cfg.hidden,
             nn::Activation::gelu),
      out_x(pf, name + ".out_x", cfg.hidden, cfg.hidden, 1),
      out_y(pf, name + ".out_y", cfg.hidden, cfg.hidden, 1),
      use_dae_(cfg.use_dae),
      use_daci_(cfg.use_daci) {
    if (cfg.use_dae) dae = Dae(pf, name + ".dae", cfg);
    if (cfg.use_daci) daci = Daci(pf, name + ".daci", cfg);
}

VdaeState Vdae::forward(const Var& x_prev, const Var& y_prev) const {
    Var fx = use_dae_ ? dae.forward(x_prev) : x_prev;
    Var fy = use_dae_ ? dae.forward(y_prev) : y_prev;
    Var t = use_daci_ ? daci.forward(fx, fy) : ops::scale(ops::add(fx, fy), 0.5);
    Var t_ref = channel_gate(refine, t);
    return {ops::add(fx, out_x(t_ref)), ops::add(fy, out_y(t_ref)), t};
}

// ---------------------------------------------------------------- fusion

FusionBlock::FusionBlock(nn::ParamFactory& pf, const std::string& name, int64_t in, int64_t width, int64_t out,
                         nn::Init tail_init)
    : mix(pf, name + ".mix", in, width, 1),
      body(pf, name + ".body", width, width, 3),
      tail(pf, name + ".tail", width, out, 3, tail_init),
      attn(pf, name + ".attn", width, std::max<int64_t>(width / 4, 1), width, nn::Activation::gelu),
      in_ch(in) {}

Var FusionBlock::forward(const std::vector<Var>& inputs) const {
    Var x = inputs.size() == 1 ? inputs[0] : ops::concat(inputs, 0);
    if (x.dim(0) != in_ch)
        throw ShapeError("fusion block expects " + std::to_string(in_ch) + " input channels, got " +
                         std::to_string(x.dim(0)));
    Var b = body(ops::leaky_relu(mix(x), 0.2));
    return tail(channel_gate(attn, b));
}

// ---------------------------------------------------------------- stage I

Asse::Asse(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int64_t h = cfg.hidden;
    const nn::Init tail_init = cfg.zero_tail ? nn::Init::zeros : nn::Init::kaiming_uniform;
    embed_x = nn::Conv2d(pf, name + ".embed_x", cfg.bands, h, 1);
    embed_y = nn::Conv2d(pf, name + ".embed_y", cfg.msi_bands, h, 3);
    for (size_t k = 0; k < 3; ++k) stages[k] = Vdae(pf, name + ".vdae" + std::to_string(k + 1), cfg);
    if (cfg.use_fusion) {
        fusion[0] = FusionBlock(pf, name + ".fusion1", 3 * h, h, h);
        fusion[1] = FusionBlock(pf, name + ".fusion2", 4 * h, h, h);
        fusion[2] = FusionBlock(pf, name + ".fusion3", 4 * h, h, cfg.bands, tail_init);
    } else {
        plain_tail = nn::Conv2d(pf, name + ".plain_tail", h, cfg.bands, 3, tail_init);
    }
}

Preprocessed Asse::preprocess(const Var& x, const Var& y) const {
    if (x.rank() != 3 || y.rank() != 3) throw ShapeError("preprocess expects [C,h,w] and [c,H,W] cubes");
    if (x.dim(0) != cfg_.bands) throw ShapeError("lr-hsi band count does not match the configuration");
    if (y.dim(0) != cfg_.msi_bands) throw ShapeError("msi band count does not match the configuration");
    if (y.dim(1) != cfg_.ratio * x.dim(1) || y.dim(2) != cfg_.ratio * x.dim(2))
        throw ShapeError("msi size " + shape_str(y.shape()) + " is not ratio " + std::to_string(cfg_.ratio) +
                         " times lr-hsi size " + shape_str(x.shape()));
    Var raw = nn::resize_bilinear(x, y.dim(1), y.dim(2));
    return {raw, embed_x(raw), embed_y(y)};
}

AsseOutput Asse::forward(const Var& x, const Var& y) const {
    const Preprocessed pre = preprocess(x, y);
    AsseOutput out;
    out.x0_raw = pre.x0_raw;
    Var xs = pre.x0, ys = pre.y0;
    for (size_t k = 0; k < 3; ++k) {
        out.stages[k] = stages[k].forward(xs, ys);
        xs = out.stages[k].x;
        ys = out.stages[k].y;
    }
    const auto& s = out.stages;
    if (cfg_.use_fusion) {
        Var f1 = fusion[0].forward({s[2].t, s[2].x, s[2].y});
        Var f2 = fusion[1].forward({f1, s[1].t, s[1].x, s[1].y});
        out.f3 = fusion[2].forward({f2, s[0].t, s[0].x, s[0].y});
    } else {
        out.f3 = plain_tail(s[2].x);
    }
    out.z_init = ops::add(pre.x0_raw, out.f3);
    return out;
}

}  // namespace hsifuse::asse
