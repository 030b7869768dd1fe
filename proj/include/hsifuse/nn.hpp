#pragma once

#include <string>
#include <vector>

#include "hsifuse/ops.hpp"
#include "hsifuse/param_store.hpp"

namespace hsifuse::nn {

enum class PadMode { zero, reflect };

struct ConvSpec {
    int64_t stride = 1;
    int64_t padding = 0;
    PadMode pad_mode = PadMode::zero;
};

/// Index into an axis of length n after padding; -1 means "zero".
int64_t pad_index(int64_t i, int64_t n, PadMode mode);

/// Cross-correlation of x [C,H,W] with w [O,C,kh,kw]; b is [O] or undefined.
/// Output spatial size is floor((H + 2p - kh) / stride) + 1.
Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec);

/// 1-D correlation along `axis` with a fixed kernel. Tap t reads offset
/// t - (size-1)/2, so even kernels lean one sample forward.
Var filter1d(const Var& x, std::vector<double> kernel, int64_t axis, PadMode mode);

/// Normalized 1-D Gaussian taps centred at (size-1)/2.
std::vector<double> gaussian_kernel(int64_t size, double sigma);

/// x *_x g *_y g over the last two axes with reflect padding. Size must be odd.
Var separable_gaussian(const Var& x, int64_t size, double sigma);

/// 2x2 mean pooling with stride 2 over the last two axes (floor sizes).
Var avgpool2(const Var& x);
/// Bins [floor(i*H/out), floor((i+1)*H/out)) along each of the last two axes.
Var adaptive_avgpool(const Var& x, int64_t out_h, int64_t out_w);
/// [C,H,W] -> [C,1,1]
Var global_avgpool(const Var& x);

/// Bilinear resize over the last two axes, half-pixel centres
/// (src = (i + 0.5) * in / out - 0.5, clamped at 0).
Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w);

/// Bilinear sampling at normalized coordinates in [-1,1] (pixel centres,
/// x then y in the last grid axis). Out-of-range coordinates clamp to the
/// border. x: [C,H,W] or [B,C,H,W]; grid: [Ho,Wo,2] or [B,Ho,Wo,2].
/// A rank-3 x with a rank-4 grid samples the same image B times.
Var grid_sample(const Var& x, const Var& grid);

/// Rotated sampling grids for angles theta [K]: output [K,h,w,2] with
/// (x', y') = (cos t * x + sin t * y, -sin t * x + cos t * y) about the centre.
Var rotation_grid(const Var& theta, int64_t h, int64_t w);

/// Channel-axis layer norm of [C,H,W] followed by the per-channel affine.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Per-channel spatial normalization of [C,H,W] followed by the affine.
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// x [in] or [N,in]; w [out,in]; b [out] or undefined.
Var linear(const Var& x, const Var& w, const Var& b);

// ------------------------------------------------------------------ layers

enum class Init { kaiming_uniform, zeros };

/// Parameter factory bound to a store and a seeded generator.
class ParamFactory {
public:
    ParamFactory(ParamStore& store, Rng& rng) : store_(store), rng_(rng) {}
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the kaiming-uniform rule
    /// with a = sqrt(5).
    Var kaiming(const std::string& name, Shape shape, int64_t fan_in);
    Var constant(const std::string& name, Shape shape, double value);
    ParamStore& store() { return store_; }
    Rng& rng() { return rng_; }

private:
    ParamStore& store_;
    Rng& rng_;
};

/// Same-size conv (stride 1) with reflect padding of k/2.
struct Conv2d {
    Var w;
    Var b;
    ConvSpec spec;
    int64_t in_ch = 0;
    int64_t out_ch = 0;

    Conv2d() = default;
    Conv2d(ParamFactory& pf, const std::string& name, int64_t in, int64_t out, int64_t k,
           Init init = Init::kaiming_uniform, int64_t stride = 1, bool bias = true);
    Var operator()(const Var& x) const { return conv2d(x, w, b, spec); }
};

struct Linear {
    Var w;
    Var b;

    Linear() = default;
    Linear(ParamFactory& pf, const std::string& name, int64_t in, int64_t out, Init init = Init::kaiming_uniform);
    Var operator()(const Var& x) const { return linear(x, w, b); }
};

struct LayerNorm {
    Var gamma;
    Var beta;

    LayerNorm() = default;
    LayerNorm(ParamFactory& pf, const std::string& name, int64_t channels);
    Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

struct InstanceNorm {
    Var gamma;
    Var beta;

    InstanceNorm() = default;
    InstanceNorm(ParamFactory& pf, const std::string& name, int64_t channels);
    Var operator()(const Var& x) const { return instance_norm(x, gamma, beta); }
};

enum class Activation { relu, gelu };

/// Two-layer perceptron on a vector: in -> hidden -> out.
struct Mlp {
    Linear fc1;
    Linear fc2;
    Activation act = Activation::relu;

    Mlp() = default;
    Mlp(ParamFactory& pf, const std::string& name, int64_t in, int64_t hidden, int64_t out,
        Activation act = Activation::relu);
    Var operator()(const Var& x) const {
        Var h = fc1(x);
        return fc2(act == Activation::relu ? ops::relu(h) : ops::gelu(h));
    }
};

}  // namespace hsifuse::nn
