#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hsifuse/autograd.hpp"

namespace hsifuse {

struct GradCheckOptions {
    double eps = 1e-4;
    double tol = 1e-5;
    /// Tensors with more elements are checked on a seeded random sample of
    /// this many coordinates.
    int64_t max_coords = 64;
    uint64_t seed = 0;
    /// A coordinate whose one-sided slope difference fails to halve with
    /// the step (relative to the slope) sits near a kink and is skipped.
    double kink_threshold = 1e-3;
    /// Differences are measured against at least this fraction of the
    /// largest analytic gradient entry, so entries that are zero or tiny
    /// next to the rest of the gradient compare in absolute terms.
    double scale_floor = 0.0;
};

struct GradCheckFailure {
    std::string name;
    int64_t index;
    double analytic;
    double numeric;
    double rel_err;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = true;
    int64_t checked = 0;
    int64_t skipped_nonsmooth = 0;
    std::string worst_name;
    int64_t worst_index = -1;
    std::vector<GradCheckFailure> failures;
};

struct NamedVar {
    std::string name;
    Var var;
};

/// Compares reverse-mode gradients of the scalar f() with central finite
/// differences over each input. Inputs must be f64 leaves requiring grad;
/// f reads their current values each time it is called.
GradCheckReport grad_check(const std::function<Var()>& f, const std::vector<NamedVar>& inputs,
                           const GradCheckOptions& opts = {});

}  // namespace hsifuse
