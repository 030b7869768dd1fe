#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "hsifuse/dataio.hpp"
#include "hsifuse/metrics.hpp"
#include "hsifuse/model.hpp"

namespace hsifuse::train {

struct TrainConfig {
    double alpha = 0.8;
    double beta = 0.2;
    double lr_init = 4e-4;
    double lr_min = 1e-6;
    int64_t steps = 2000;
    int64_t batch = 4;
    int64_t patch = 64;
    uint64_t seed = 0;
    /// Global L2 norm the gradient is clipped to; 0 disables clipping.
    double clip_norm = 1.0;
    int64_t eval_every = 100;
    /// Trailing scenes of the dataset kept out of training for evaluation.
    int64_t holdout = 2;
    DType dtype = DType::f32;
    FusionConfig model;

    void validate() const;
    /// Applies one key=value setting (training key, architecture key, an
    /// ablation flag no_dae/no_daci/no_fusion/no_gsrt, or the K/TB aliases).
    /// Unknown keys and malformed values throw ConfigError.
    void set(const std::string& key, const std::string& value);
    std::string canonical() const;
};

/// Reads a flat key=value file; '#' starts a comment line.
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
void apply_settings(TrainConfig& cfg, const std::string& text, const std::string& origin = "config");

/// alpha * mean|z_hat - z| + beta * mean|z_init - z|
Var loss(const Var& z_hat, const Var& z_init, const Var& z, double alpha = 0.8, double beta = 0.2);

/// lr_min + (lr_init - lr_min)(1 + cos(pi t / T)) / 2, with t clamped to T.
double cosine_lr(int64_t t, int64_t T, double lr_init, double lr_min);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update at step t (1-based) over every parameter,
/// using and updating the moments kept in the store. A non-finite gradient
/// throws NonFiniteError before anything changes.
void adam_step(ParamStore& store, double lr, int64_t t, const AdamOptions& opts = {});

/// Global L2 norm of all gradients.
double grad_norm(const ParamStore& store);
/// Scales every gradient so the global norm is at most max_norm. Returns
/// the norm before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

/// One training crop: HR patch, matching LR and MSI crops.
data::Triple crop(const data::Triple& t, int64_t ratio, int64_t top, int64_t left, int64_t patch);

struct EvalResult {
    double psnr_db = 0.0;
    double sam_deg = 0.0;
    std::vector<metrics::MetricReport> scenes;
    /// Same metrics for the stage I output.
    std::vector<metrics::MetricReport> stage1;
};

/// Fuses every scene (output clipped to [0,1]) and reports the mean metrics.
EvalResult evaluate(const FusionModel& model, const std::vector<data::Triple>& scenes, int64_t ratio);
/// Bilinear upsampling of the LR cube, the reference baseline.
EvalResult evaluate_bilinear(const std::vector<data::Triple>& scenes, int64_t ratio);

struct FuseResult {
    Tensor z_init;
    Tensor z_hat;
};
FuseResult fuse(const FusionModel& model, const Tensor& lr_hsi, const Tensor& msi);

struct LogEntry {
    int64_t step = 0;
    double loss = 0.0;
    double psnr_db = 0.0;
    double sam_deg = 0.0;
    std::string to_text() const;
};

enum class StopReason { finished, non_finite };

struct RunResult {
    StopReason reason = StopReason::finished;
    std::string message;
    std::vector<LogEntry> log;
    /// Training loss of every step taken in this run.
    std::vector<double> losses;
};

/// Two-stage supervised training. The trainer owns the model, the optimizer
/// moments (inside the parameter store), the crop RNG and the step counter.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, const data::Dataset& ds);

    /// Runs until `until` (default: cfg.steps). Each eval point appends a
    /// log entry and writes it to `log` if given. A non-finite loss or
    /// gradient stops the run with the parameters of the last good step.
    RunResult run(int64_t until = -1, std::ostream* log = nullptr);
    /// One optimizer step on one batch; returns the batch loss.
    double step();

    int64_t steps_done() const { return step_; }
    const FusionModel& model() const { return *model_; }
    FusionModel& model() { return *model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<data::Triple>& train_scenes() const { return train_; }
    const std::vector<data::Triple>& eval_scenes() const { return eval_; }

    void save(const std::filesystem::path& path) const;
    /// Restores parameters, moments, step and RNG state. The checkpoint's
    /// architecture hash must match this trainer's model.
    void load(const std::filesystem::path& path);

private:
    TrainConfig cfg_;
    std::unique_ptr<FusionModel> model_;
    std::vector<data::Triple> train_;
    std::vector<data::Triple> eval_;
    Rng rng_;
    int64_t step_ = 0;
};

// ---------------------------------------------------------------- checkpoints

inline constexpr const char* kCheckpointMagic = "HSCK";

struct CheckpointInfo {
    FusionConfig arch;
    uint64_t config_hash = 0;
    int64_t step = 0;
    std::string rng_state;
    DType dtype = DType::f32;
};

/// Header lines (architecture keys, step, hash, RNG, entry table), then the
/// little-endian payload of every parameter with its two moments.
void write_checkpoint(const std::filesystem::path& path, const FusionModel& model, int64_t step,
                      const std::string& rng_state);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
/// Loads values and moments into a model built from the same architecture.
/// A hash mismatch throws ConfigError.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, FusionModel& model);
/// Builds the model described by the checkpoint and loads it.
std::unique_ptr<FusionModel> model_from_checkpoint(const std::filesystem::path& path,
                                                   CheckpointInfo* info = nullptr);

/// FNV-1a of a file's bytes.
uint64_t file_hash(const std::filesystem::path& path);

// ---------------------------------------------------------------- ablation

struct AblationRow {
    bool daci = true;
    bool dae = true;
    bool fusion = true;
    bool gsrt = true;
    std::string label() const;
};

/// The six module combinations of the ablation table, baseline first and
/// the full model last.
std::vector<AblationRow> ablation_rows();

struct AblationResult {
    AblationRow row;
    metrics::MetricReport mean;
    double seconds = 0.0;
};

/// Trains every row with identical seeds, data and step budget and reports
/// mean held-out metrics. `progress` receives one line per finished row.
std::vector<AblationResult> run_ablation(const TrainConfig& cfg, const data::Dataset& ds,
                                         const std::vector<AblationRow>& rows,
                                         const std::function<void(const AblationResult&)>& progress = {});
std::string ablation_table(const std::vector<AblationResult>& results);

}  // namespace hsifuse::train
