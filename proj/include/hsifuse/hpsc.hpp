#pragma once

#include <string>
#include <vector>

#include "hsifuse/nn.hpp"

namespace hsifuse::hpsc {

struct GsrtConfig {
    int64_t bands = 31;   // C
    int64_t embed = 32;   // e
    int64_t blocks = 1;   // TB
    int64_t window = 8;   // SDA window side
    int64_t ffn_expansion = 2;
    /// Zero the projection back to C so the stage starts as the identity.
    bool zero_tail = true;

    void validate() const;
};

/// Three stride-2 3x3 convs (C -> C), each followed by layer norm and ReLU,
/// then global average pooling. Output: [C].
class SpectralPrior {
public:
    SpectralPrior() = default;
    SpectralPrior(nn::ParamFactory& pf, const std::string& name, int64_t bands);
    Var forward(const Var& x) const;

    std::vector<nn::Conv2d> convs;
    std::vector<nn::LayerNorm> norms;
};

/// Spectral-guided channel attention.
class Sga {
public:
    Sga() = default;
    Sga(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg);
    Var forward(const Var& h, const Var& sp) const;
    /// Channel scaling s in (0,1)^e and guidance vector g for a prior.
    Var scaling(const Var& sp) const;
    Var guidance(const Var& sp) const;
    /// layer_norm(h) scaled per channel by scaling(sp).
    Var modulate(const Var& h, const Var& sp) const;
    /// [e,e] attention map; exposed for normalization checks.
    Var attention(const Var& h, const Var& sp) const;

    nn::LayerNorm norm;
    nn::Mlp scale_mlp, guide_mlp;
    nn::Conv2d q, k, v;
};

/// Edge-masked windowed spatial attention.
class Sda {
public:
    Sda() = default;
    Sda(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg);
    Var forward(const Var& h) const;
    /// Spatial mask [1,H,W] in (0,1).
    Var mask(const Var& h) const;
    /// [windows, T, T] attention of the masked features.
    Var attention(const Var& h) const;

    nn::LayerNorm norm;
    nn::Conv2d edge3, edge1;  // 3x3 e->e, 1x1 e->1
    nn::Conv2d q, k, v;       // k has no bias: a key offset cancels in the softmax
    int64_t window = 8;

private:
    Var windows(const Var& x) const;    // [e,H,W] -> [n,T,e]
    Var unwindow(const Var& x, int64_t H, int64_t W) const;
};

/// Pixelwise convex combination of the two branches.
class GatedFusion {
public:
    GatedFusion() = default;
    GatedFusion(nn::ParamFactory& pf, const std::string& name, int64_t width);
    Var forward(const Var& spe, const Var& spa) const;
    /// [2,H,W] softmax gates.
    Var gates(const Var& spe, const Var& spa) const;

    nn::Conv2d conv;  // 1x1, 2e -> 2
};

class GsrtBlock {
public:
    GsrtBlock() = default;
    GsrtBlock(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg);
    Var forward(const Var& h, const Var& sp) const;

    Sga sga;
    Sda sda;
    GatedFusion gate;
    nn::LayerNorm ffn_norm;
    nn::Conv2d ffn1, ffn2;
};

class Gsrt {
public:
    Gsrt() = default;
    Gsrt(nn::ParamFactory& pf, const std::string& name, const GsrtConfig& cfg);
    /// Z_init [C,H,W] refined with the prior of the low-resolution cube x.
    Var forward(const Var& z_init, const Var& x) const;
    const GsrtConfig& config() const { return cfg_; }

    SpectralPrior prior;
    nn::Conv2d embed, project;
    std::vector<GsrtBlock> blocks;

private:
    GsrtConfig cfg_;
};

}  // namespace hsifuse::hpsc
