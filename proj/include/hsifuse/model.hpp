#pragma once

#include <map>
#include <memory>
#include <string>

#include "hsifuse/asse.hpp"
#include "hsifuse/hpsc.hpp"

namespace hsifuse {

/// Every architecture knob of the two-stage model.
struct FusionConfig {
    int64_t bands = 31;
    int64_t msi_bands = 3;
    int64_t ratio = 4;
    int64_t hidden = 32;
    int64_t directions = 8;
    int64_t daci_levels = 3;
    int64_t predictor_width = 8;
    int64_t predictor_hidden = 32;
    int64_t embed = 32;
    int64_t blocks = 1;
    int64_t window = 8;
    bool use_dae = true;
    bool use_daci = true;
    bool use_fusion = true;
    bool use_gsrt = true;

    asse::AsseConfig asse() const;
    hpsc::GsrtConfig gsrt() const;
    void validate() const;

    /// Canonical "key=value" lines in a fixed order.
    std::string canonical() const;
    /// FNV-1a of canonical(); stored in checkpoints.
    uint64_t hash() const;

    /// Applies one key=value setting. Returns false when the key is not an
    /// architecture key; a malformed value throws ConfigError.
    bool set(const std::string& key, const std::string& value);
};

enum class InitMode {
    /// Residual tails start at zero (exact identity paths).
    training,
    /// Every conv random, used for gradient verification.
    random,
};

struct FusionOutput {
    Var z_init;
    Var z_hat;
};

class FusionModel {
public:
    FusionModel(const FusionConfig& cfg, uint64_t seed, InitMode mode = InitMode::training);
    FusionModel(const FusionModel&) = delete;
    FusionModel& operator=(const FusionModel&) = delete;

    FusionOutput forward(const Var& lr_hsi, const Var& msi) const;

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const FusionConfig& config() const { return cfg_; }
    const asse::Asse& stage1() const { return asse_; }
    const hpsc::Gsrt& stage2() const { return gsrt_; }

private:
    FusionConfig cfg_;
    ParamStore store_;
    asse::Asse asse_;
    hpsc::Gsrt gsrt_;
};

}  // namespace hsifuse
