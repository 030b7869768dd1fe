#include "hsifuse/param_store.hpp"

namespace hsifuse {

Var ParamStore::add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    Param p;
    p.m = Tensor::zeros(init.shape(), init.dtype());
    p.v = Tensor::zeros(init.shape(), init.dtype());
    p.var = Var(std::move(init), true);
    auto [it, ok] = params_.emplace(name, std::move(p));
    return it->second.var;
}

Var ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second.var;
}

Tensor ParamStore::grad(const std::string& name) const {
    const Var v = get(name);
    if (v.grad().defined()) return v.grad();
    return Tensor::zeros(v.shape(), v.dtype());
}

void ParamStore::zero_grad() {
    for (auto& [_, p] : params_) p.var.zero_grad();
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
}

int64_t ParamStore::total_numel() const {
    int64_t n = 0;
    for (const auto& [_, p] : params_) n += p.var.value().numel();
    return n;
}

DType ParamStore::dtype() const { return params_.empty() ? default_dtype() : params_.begin()->second.var.dtype(); }

void ParamStore::copy_values_from(const ParamStore& other) {
    for (auto& [name, p] : params_) {
        auto it = other.params_.find(name);
        if (it == other.params_.end()) continue;
        p.var.set_value(it->second.var.value().to(p.var.dtype()));
        p.m = it->second.m.to(p.var.dtype());
        p.v = it->second.v.to(p.var.dtype());
    }
}

uint64_t ParamStore::content_hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, p] : params_) {
        h = fnv1a64(name.data(), name.size(), h);
        const uint64_t parts[3] = {p.var.value().content_hash(), p.m.content_hash(), p.v.content_hash()};
        h = fnv1a64(parts, sizeof(parts), h);
    }
    return h;
}

}  // namespace hsifuse
