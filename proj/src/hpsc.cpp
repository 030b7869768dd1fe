#include "hsifuse/hpsc.hpp"

#include <cmath>

namespace hsifuse::hpsc {

void GsrtConfig::validate() const {
    if (blocks < 1) throw ConfigError("gsrt needs at least one block");
    if (embed < 1 || bands < 1) throw ConfigError("gsrt widths must be positive");
    if (window < 1) throw ConfigError("sda window must be positive");
    if (ffn_expansion < 1) throw ConfigError("ffn expansion must be positive");
}

// ---------------------------------------------------------------- prior

SpectralPrior::SpectralPrior(nn::ParamFactory& pf, const std::string& name, int64_t bands) {
    for (int i = 0; i < 3; ++i) {
        const std::string c = name + ".conv" + std::to_string(i + 1);
        convs.emplace_back(pf, c, bands, bands, 3, nn::Init::kaiming_uniform, 2);
        norms.emplace_back(pf, name + ".norm" + std::to_string(i + 1), bands);
    }
}

Var SpectralPrior::forward(const Var& x) const {
    if (x.rank() != 3 || x.dim(1) < 8 || x.dim(2) < 8)
        throw ShapeError("spectral prior needs a [C,h,w] cube with h,w >= 8, got " + shape_str(x.shape()));
    Var f = x;
    for (size_t i = 0; i < convs.size(); ++i) f = ops::relu(norms[i](convs[i](f)));
    return ops::reshape(nn::global_avgpool(f), {x.dim(0)});
}

// ---------------------------------------------------------------- SGA

Sga::Sga(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg)
    : norm(pf, name + ".norm", cfg.embed),
      scale_mlp(pf, name + ".scale_mlp", cfg.bands, 2 * cfg.embed, cfg.embed),
      guide_mlp(pf, name + ".guide_mlp", cfg.bands, 2 * cfg.embed, cfg.embed),
      q(pf, name + ".q", cfg.embed, cfg.embed, 1),
      k(pf, name + ".k", cfg.embed, cfg.embed, 1),
      v(pf, name + ".v", cfg.embed, cfg.embed, 1) {}

Var Sga::scaling(const Var& sp) const { return ops::sigmoid(scale_mlp(sp)); }
Var Sga::guidance(const Var& sp) const { return guide_mlp(sp); }

Var Sga::modulate(const Var& h, const Var& sp) const {
    return ops::mul(norm(h), ops::reshape(scaling(sp), {h.dim(0), 1, 1}));
}

namespace {
struct SgaParts {
    Var attn;
    Var fmod;
};
SgaParts sga_parts(const Sga& s, const Var& h, const Var& sp) {
    const int64_t e = h.dim(0), n = h.dim(1) * h.dim(2);
    Var fmod = s.modulate(h, sp);
    Var g = ops::reshape(s.guidance(sp), {e, 1});
    Var guide = ops::matmul_nt(g, g);  // [e,e]
    Var qm = ops::reshape(s.q(fmod), {e, n});
    Var km = ops::reshape(s.k(fmod), {e, n});
    Var logits = ops::mul(ops::scale(ops::matmul_nt(qm, km), 1.0 / std::sqrt(static_cast<double>(n))), guide);
    return {ops::softmax(logits, 1), fmod};
}
}  // namespace

Var Sga::attention(const Var& h, const Var& sp) const { return sga_parts(*this, h, sp).attn; }

Var Sga::forward(const Var& h, const Var& sp) const {
    const int64_t e = h.dim(0), n = h.dim(1) * h.dim(2);
    const SgaParts p = sga_parts(*this, h, sp);
    Var vm = ops::reshape(v(p.fmod), {e, n});
    return ops::reshape(ops::matmul(p.attn, vm), h.shape());
}

// ---------------------------------------------------------------- SDA

Sda::Sda(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg)
    : norm(pf, name + ".norm", cfg.embed),
      edge3(pf, name + ".edge3", cfg.embed, cfg.embed, 3),
      edge1(pf, name + ".edge1", cfg.embed, 1, 1),
      q(pf, name + ".q", cfg.embed, cfg.embed, 1),
      k(pf, name + ".k", cfg.embed, cfg.embed, 1, nn::Init::kaiming_uniform, 1, false),
      v(pf, name + ".v", cfg.embed, cfg.embed, 1),
      window(cfg.window) {}

Var Sda::mask(const Var& h) const {
    Var n = norm(h);
    return ops::sigmoid(edge1(ops::sub(edge3(n), n)));
}

Var Sda::windows(const Var& x) const {
    const int64_t e = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t ws = std::min({window, H, W});
    if (H % ws != 0 || W % ws != 0)
        throw ShapeError("sda window " + std::to_string(ws) + " does not divide " + shape_str(x.shape()));
    Var r = ops::reshape(x, {e, H / ws, ws, W / ws, ws});
    r = ops::permute(r, {1, 3, 2, 4, 0});  // [nh, nw, ws, ws, e]
    return ops::reshape(r, {(H / ws) * (W / ws), ws * ws, e});
}

Var Sda::unwindow(const Var& x, int64_t H, int64_t W) const {
    const int64_t e = x.dim(2);
    const int64_t ws = std::min({window, H, W});
    Var r = ops::reshape(x, {H / ws, W / ws, ws, ws, e});
    r = ops::permute(r, {4, 0, 2, 1, 3});  // [e, nh, ws, nw, ws]
    return ops::reshape(r, {e, H, W});
}

namespace {
Var masked_features(const Sda& s, const Var& h) {
    Var n = s.norm(h);
    return ops::mul(n, ops::sigmoid(s.edge1(ops::sub(s.edge3(n), n))));
}
}  // namespace

Var Sda::attention(const Var& h) const {
    const Var f = masked_features(*this, h);
    const int64_t e = h.dim(0);
    Var qw = windows(q(f)), kw = windows(k(f));
    return ops::softmax(ops::scale(ops::matmul_nt(qw, kw), 1.0 / std::sqrt(static_cast<double>(e))), -1);
}

Var Sda::forward(const Var& h) const {
    const Var f = masked_features(*this, h);
    const int64_t e = h.dim(0);
    Var qw = windows(q(f)), kw = windows(k(f)), vw = windows(v(f));
    Var a = ops::softmax(ops::scale(ops::matmul_nt(qw, kw), 1.0 / std::sqrt(static_cast<double>(e))), -1);
    return unwindow(ops::matmul(a, vw), h.dim(1), h.dim(2));
}

// ---------------------------------------------------------------- gate

GatedFusion::GatedFusion(nn::ParamFactory& pf, const std::string& name, int64_t width)
    : conv(pf, name + ".conv", 2 * width, 2, 1) {}

Var GatedFusion::gates(const Var& spe, const Var& spa) const {
    if (spe.shape() != spa.shape()) throw ShapeError("gated fusion branch shapes differ");
    return ops::softmax(conv(ops::concat({spe, spa}, 0)), 0);
}

Var GatedFusion::forward(const Var& spe, const Var& spa) const {
    Var g = gates(spe, spa);
    return ops::add(ops::mul(ops::slice(g, 0, 0, 1), spe), ops::mul(ops::slice(g, 0, 1, 1), spa));
}

// ---------------------------------------------------------------- block / stage

GsrtBlock::GsrtBlock(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg)
    : sga(pf, name + ".sga", cfg),
      sda(pf, name + ".sda", cfg),
      gate(pf, name + ".gate", cfg.embed),
      ffn_norm(pf, name + ".ffn_norm", cfg.embed),
      ffn1(pf, name + ".ffn1", cfg.embed, cfg.ffn_expansion * cfg.embed, 1),
      ffn2(pf, name + ".ffn2", cfg.ffn_expansion * cfg.embed, cfg.embed, 1) {}

Var GsrtBlock::forward(const Var& h, const Var& sp) const {
    Var att = gate.forward(sga.forward(h, sp), sda.forward(h));
    Var mid = ops::add(h, att);
    return ops::add(mid, ffn2(ops::gelu(ffn1(ffn_norm(mid)))));
}

Gsrt::Gsrt(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg)
    : prior(pf, name + ".prior", cfg.bands),
      embed(pf, name + ".embed", cfg.bands, cfg.embed, 3),
      project(pf, name + ".project", cfg.embed, cfg.bands, 3,
              cfg.zero_tail ? nn::Init::zeros : nn::Init::kaiming_uniform),
      cfg_(cfg) {
    cfg.validate();
    for (int64_t b = 0; b < cfg.blocks; ++b) blocks.emplace_back(pf, name + ".block" + std::to_string(b + 1), cfg);
}

Var Gsrt::forward(const Var& z_init, const Var& x) const {
    if (z_init.dim(0) != cfg_.bands || x.dim(0) != cfg_.bands) throw ShapeError("gsrt band count mismatch");
    const Var sp = prior.forward(x);
    Var h = embed(z_init);
    for (const auto& b : blocks) h = b.forward(h, sp);
    return ops::add(z_init, project(h));
}

}  // namespace hsifuse::hpsc
