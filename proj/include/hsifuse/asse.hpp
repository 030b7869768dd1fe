#pragma once

#include <array>
#include <string>
#include <vector>

#include "hsifuse/ast.hpp"

namespace hsifuse::asse {

struct AsseConfig {
    int64_t bands = 31;      // C, hyperspectral bands
    int64_t msi_bands = 3;   // c
    int64_t ratio = 4;       // r
    int64_t hidden = 32;     // h
    int64_t directions = 8;  // K
    int64_t daci_levels = 3; // L
    int64_t predictor_width = 8;
    int64_t predictor_hidden = 32;
    bool use_dae = true;
    bool use_daci = true;
    bool use_fusion = true;
    /// Zero the final Fusion_3 conv so Z_init starts at the upsampled input.
    bool zero_tail = true;

    void validate() const;
};

struct Preprocessed {
    Var x0_raw;  // [C,H,W] bilinear upsample of X
    Var x0;      // [h,H,W]
    Var y0;      // [h,H,W]
};

/// Directional enhancement: AST, a global context path and a local
/// detail path mixed by a learned gate, plus the input residual.
class Dae {
public:
    Dae() = default;
    Dae(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg);
    Var forward(const Var& f) const;

    ast::Ast ast;
    nn::Conv2d glob;        // 1x1 on the pooled descriptor
    nn::Conv2d loc1, loc2;  // 3x3; loc1 has no bias (the norm removes it)
    nn::InstanceNorm loc_norm;
    nn::Conv2d gate;        // 1x1, 2h -> h
};

/// Multi-scale channel cross-attention between the two branches.
class Daci {
public:
    struct Level {
        nn::Conv2d q, k, v;
    };
    Daci() = default;
    Daci(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg);
    Var forward(const Var& fx, const Var& fy) const;
    /// Attention map [h,h] of one level; exposed for normalization checks.
    Var attention(const Var& fx, const Var& fy, int64_t level) const;

    std::vector<Level> levels;
    Var gamma;  // [L]
};

struct VdaeState {
    Var x, y, t;
};

class Vdae {
public:
    Vdae() = default;
    Vdae(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg);
    VdaeState forward(const Var& x_prev, const Var& y_prev) const;

    Dae dae;
    Daci daci;
    nn::Mlp refine;  // h -> h/4 -> h, GELU
    nn::Conv2d out_x, out_y;

private:
    bool use_dae_ = true, use_daci_ = true;
};

/// concat -> 1x1 -> LeakyReLU -> 3x3 -> channel attention -> 3x3.
class FusionBlock {
public:
    FusionBlock() = default;
    FusionBlock(nn::ParamFactory& pf, const std::string& name, int64_t in_ch, int64_t width, int64_t out_ch,
                nn::Init tail_init = nn::Init::kaiming_uniform);
    Var forward(const std::vector<Var>& inputs) const;

    nn::Conv2d mix, body, tail;
    nn::Mlp attn;
    int64_t in_ch = 0;
};

struct AsseOutput {
    Var z_init;  // [C,H,W]
    Var f3;      // learned residual
    Var x0_raw;
    std::array<VdaeState, 3> stages;
};

class Asse {
public:
    Asse() = default;
    Asse(nn::ParamFactory& pf, const std::string& name, const AsseConfig& cfg);

    Preprocessed preprocess(const Var& x, const Var& y) const;
    AsseOutput forward(const Var& x, const Var& y) const;
    const AsseConfig& config() const { return cfg_; }

    nn::Conv2d embed_x;  // 1x1, C -> h
    nn::Conv2d embed_y;  // 3x3, c -> h
    std::array<Vdae, 3> stages;
    std::array<FusionBlock, 3> fusion;
    nn::Conv2d plain_tail;  // 3x3, h -> C, used when the fusion cascade is ablated

private:
    AsseConfig cfg_;
};

}  // namespace hsifuse::asse
