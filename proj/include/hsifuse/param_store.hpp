#pragma once

#include <map>
#include <string>
#include <vector>

#include "hsifuse/autograd.hpp"

namespace hsifuse {

/// Learnable tensor plus its Adam moment buffers. All three share a shape.
struct Param {
    Var var;
    Tensor m;
    Tensor v;
};

/// Named registry of learnable parameters. Iteration is in name order,
/// which fixes the order of optimizer updates and checkpoint payloads.
class ParamStore {
public:
    /// Registers a new parameter; names must be unique.
    Var add(const std::string& name, Tensor init);
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    /// Gradient of a parameter, zeros when backward never reached it.
    Tensor grad(const std::string& name) const;
    void zero_grad();

    std::vector<std::string> names() const;
    size_t size() const { return params_.size(); }
    int64_t total_numel() const;
    DType dtype() const;

    std::map<std::string, Param>& entries() { return params_; }
    const std::map<std::string, Param>& entries() const { return params_; }

    /// Copies values (and moments) from `other` for every shared name.
    void copy_values_from(const ParamStore& other);
    uint64_t content_hash() const;

private:
    std::map<std::string, Param> params_;
};

}  // namespace hsifuse
