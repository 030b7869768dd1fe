#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hsifuse/tensor.hpp"

namespace hsifuse::data {

struct SceneSpec {
    uint64_t seed = 0;
    int64_t bands = 31;
    int64_t height = 64;
    int64_t width = 64;
    int64_t endmembers = 5;
    bool lines = true;
    bool edges = true;
    bool blobs = true;
    bool checker = true;
    /// Line/edge orientations in [0, pi); drawn from the seed when empty.
    std::vector<double> orientations;
};

struct Scene {
    Tensor cube;        // [C,H,W] f64, values in [0,1]
    Tensor abundances;  // [E,H,W], sums to 1 per pixel
    Tensor spectra;     // [E,C]
};

/// Linear mixture of smooth random spectra with structured abundance maps.
Scene gen_scene_detail(const SceneSpec& spec);
Tensor gen_scene(const SceneSpec& spec);

/// Normalized even Gaussian taps; tap t reads offset t - (size-1)/2.
std::vector<double> blur_kernel(int64_t size, double sigma);

/// Blur with a size x size Gaussian (reflect padding), then keep every
/// ratio-th sample starting at the top-left of each block.
Tensor degrade_spatial(const Tensor& z, int64_t ratio = 8, int64_t ksize = 8, double sigma = 3.0);

/// Contiguous floor-partition blocks [start, end) of C bands into `groups`.
std::vector<std::pair<int64_t, int64_t>> spectral_blocks(int64_t bands, int64_t groups);
/// MSI band j = mean of the j-th contiguous block of hyperspectral bands.
Tensor degrade_spectral(const Tensor& z, int64_t groups);

/// High-resolution target plus the two degraded observations.
struct Triple {
    Tensor hr;   // Z [C,H,W]
    Tensor lr;   // X [C,H/r,W/r]
    Tensor msi;  // Y [c,H,W]
};
Triple make_triple(const SceneSpec& spec, int64_t ratio, int64_t msi_bands);

// ---------------------------------------------------------------- HSC1

inline constexpr const char* kCubeMagic = "HSC1";

/// Writes [C,H,W] as f32 little-endian, band-major, after a text header.
/// Values are clipped to [0,1].
void write_cube(const std::filesystem::path& path, const Tensor& cube);
/// Reads a cube as f32. Throws FormatError with the failing byte offset.
Tensor read_cube(const std::filesystem::path& path);

// ---------------------------------------------------------------- datasets

struct DatasetSpec {
    uint64_t seed = 0;
    int64_t count = 4;
    int64_t bands = 31;
    int64_t msi_bands = 3;
    int64_t size = 64;
    int64_t ratio = 4;

    void validate() const;
};

/// Blur used for every generated dataset.
inline constexpr int64_t kBlurSize = 8;
inline constexpr double kBlurSigma = 3.0;

struct Dataset {
    DatasetSpec spec;
    std::vector<Triple> scenes;
};

/// Seed of scene i of a dataset.
uint64_t scene_seed(uint64_t dataset_seed, int64_t index);
Dataset generate_dataset(const DatasetSpec& spec);

/// Writes scene_NNN_{hr,lr,msi}.hsc plus manifest.txt (flat key=value).
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.txt";

}  // namespace hsifuse::data
