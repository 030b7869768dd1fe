#pragma once

#include <array>
#include <string>
#include <vector>

#include "hsifuse/nn.hpp"

namespace hsifuse::ast {

inline constexpr int kLevels = 4;
inline constexpr std::array<int64_t, kLevels> kPyramidSizes{7, 5, 3, 3};
inline constexpr std::array<double, kLevels> kPyramidSigmas{1.5, 1.0, 0.8, 0.8};

/// Detail subbands, each half the size of the previous one. The last
/// level doubles as the coarse approximation.
struct Pyramid {
    std::vector<Var> details;
    const Var& coarse() const { return details.back(); }
};

/// D_1 = blur(F); D_{k+1} = blur(avgpool2(D_k)). Requires H,W >= 16.
Pyramid pyramid_decompose(const Var& f);

/// Rotate-sample-average projections of d [C,h,w] at angles theta [K].
/// Returns [K,C,w]: the row mean of each rotated image.
Var radon_approx(const Var& d, const Var& theta);

/// Single-level orthonormal Haar split along the last axis. Odd lengths are
/// padded by repeating the last sample; `length` remembers the original.
struct HaarBands {
    Var low;
    Var high;
    int64_t length = 0;
};
HaarBands haar_fwd(const Var& p);
Var haar_inv(const HaarBands& bands);

/// Lifts projections q [K,C,w] back to [C,h,w]: tile each along rows, rotate
/// by -theta, average over directions.
Var backproject(const Var& q, const Var& theta, int64_t out_h, int64_t out_w);

struct AstConfig {
    int64_t channels = 8;
    int64_t directions = 4;
    int64_t predictor_width = 8;
    int64_t predictor_hidden = 32;
    nn::Init psi_init = nn::Init::kaiming_uniform;
};

/// conv3x3 -> ReLU -> conv3x3 -> ReLU -> pool(8,8) -> fc -> ReLU -> fc -> pi*sigmoid.
struct DirectionPredictor {
    nn::Conv2d conv1, conv2;
    nn::Linear fc1, fc2;

    DirectionPredictor() = default;
    DirectionPredictor(nn::ParamFactory& pf, const std::string& name, const AstConfig& cfg);
    Var operator()(const Var& f) const;
};

class Ast {
public:
    Ast() = default;
    Ast(nn::ParamFactory& pf, const std::string& name, const AstConfig& cfg);

    Var forward(const Var& f) const;
    /// D_k + alpha_k * backproject(haar_inv(M_k * haar_fwd(radon(D_k)))).
    Var enhance_subband(const Var& d, const Var& theta, int level) const;

    const AstConfig& config() const { return cfg_; }
    DirectionPredictor predictor;
    std::array<Var, kLevels> alpha;
    std::array<Var, kLevels> mask;  // [K,2]: low and high band gain per direction
    nn::Conv2d psi_mix;             // 5C -> C, 1x1
    nn::Conv2d psi_out;             // C -> C, 3x3

private:
    AstConfig cfg_;
};

}  // namespace hsifuse::ast
