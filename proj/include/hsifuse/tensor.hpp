#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "hsifuse/error.hpp"

namespace hsifuse {

enum class DType { f32, f64 };

const char* dtype_name(DType dt);

/// Process-wide dtype used by factory functions when none is given.
/// f32 is the training mode, f64 the gradient-verification mode.
DType default_dtype();
void set_default_dtype(DType dt);

/// Restores the previous default dtype on scope exit.
class DTypeScope {
public:
    explicit DTypeScope(DType dt) : saved_(default_dtype()) { set_default_dtype(dt); }
    ~DTypeScope() { set_default_dtype(saved_); }
    DTypeScope(const DTypeScope&) = delete;
    DTypeScope& operator=(const DTypeScope&) = delete;

private:
    DType saved_;
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Rng;

/// Dense row-major array of f32 or f64 scalars with value semantics.
///
/// Storage is shared between copies and cloned on the first mutable access
/// (copy-on-write), so no operation can observe a mutation of its inputs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dt = default_dtype());
    static Tensor ones(Shape shape, DType dt = default_dtype());
    static Tensor full(Shape shape, double value, DType dt = default_dtype());
    static Tensor from(Shape shape, std::span<const double> values, DType dt = default_dtype());
    static Tensor from(Shape shape, std::initializer_list<double> values, DType dt = default_dtype());
    static Tensor from_f32(Shape shape, std::span<const float> values);
    static Tensor scalar(double value, DType dt = default_dtype());
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, DType dt = default_dtype());
    static Tensor normal(Shape shape, Rng& rng, double mean, double stddev, DType dt = default_dtype());

    bool defined() const { return f32_ != nullptr || f64_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    /// Axis length; negative axes count from the back.
    int64_t dim(int64_t axis) const;
    int64_t numel() const { return shape_numel(shape_); }
    DType dtype() const { return dtype_; }

    template <class T>
    std::span<const T> data() const;
    /// Mutable view; detaches from shared storage first.
    template <class T>
    std::span<T> mutable_data();

    double flat(int64_t index) const;
    double at(std::initializer_list<int64_t> index) const;
    double item() const;
    std::vector<double> to_vector() const;

    /// Same storage, new shape. Element count must match.
    Tensor reshape(Shape shape) const;
    Tensor to(DType dt) const;
    Tensor clone() const;

    bool all_finite() const;
    /// FNV-1a over the raw payload bytes; used for value-semantics and
    /// determinism checks.
    uint64_t content_hash() const;

private:
    Shape shape_;
    DType dtype_ = DType::f32;
    std::shared_ptr<std::vector<float>> f32_;
    std::shared_ptr<std::vector<double>> f64_;
};

/// Calls fn(T{}) with T = float or double according to dt.
template <class Fn>
decltype(auto) dispatch(DType dt, Fn&& fn) {
    if (dt == DType::f32) return fn(float{});
    return fn(double{});
}

template <class T>
std::span<const T> Tensor::data() const {
    if constexpr (std::is_same_v<T, float>) {
        if (dtype_ != DType::f32 || !f32_) throw ContractError("tensor is not f32");
        return {f32_->data(), f32_->size()};
    } else {
        static_assert(std::is_same_v<T, double>);
        if (dtype_ != DType::f64 || !f64_) throw ContractError("tensor is not f64");
        return {f64_->data(), f64_->size()};
    }
}

template <class T>
std::span<T> Tensor::mutable_data() {
    if constexpr (std::is_same_v<T, float>) {
        if (dtype_ != DType::f32 || !f32_) throw ContractError("tensor is not f32");
        if (f32_.use_count() > 1) f32_ = std::make_shared<std::vector<float>>(*f32_);
        return {f32_->data(), f32_->size()};
    } else {
        static_assert(std::is_same_v<T, double>);
        if (dtype_ != DType::f64 || !f64_) throw ContractError("tensor is not f64");
        if (f64_.use_count() > 1) f64_ = std::make_shared<std::vector<double>>(*f64_);
        return {f64_->data(), f64_->size()};
    }
}

/// Deterministic 64-bit generator. Uniform and normal draws are computed
/// from raw bits so sequences do not depend on the standard library.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }
    void reseed(uint64_t seed);
    uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n);

    std::string state() const;
    void set_state(const std::string& s);

private:
    uint64_t s_[4]{};
};

uint64_t fnv1a64(const void* bytes, size_t len, uint64_t h = 1469598103934665603ULL);

}  // namespace hsifuse
