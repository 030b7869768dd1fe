#include "hsifuse/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace hsifuse {

namespace {
DType g_default_dtype = DType::f32;

uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dt) { g_default_dtype = dt; }

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

static void check_shape(const Shape& shape) {
    for (int64_t d : shape)
        if (d < 1) throw ShapeError("tensor axes must be >= 1, got " + shape_str(shape));
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
    check_shape(shape);
    Tensor t;
    const auto n = static_cast<size_t>(shape_numel(shape));
    t.shape_ = std::move(shape);
    t.dtype_ = dt;
    if (dt == DType::f32)
        t.f32_ = std::make_shared<std::vector<float>>(n, static_cast<float>(value));
    else
        t.f64_ = std::make_shared<std::vector<double>>(n, value);
    return t;
}

Tensor Tensor::zeros(Shape shape, DType dt) { return full(std::move(shape), 0.0, dt); }
Tensor Tensor::ones(Shape shape, DType dt) { return full(std::move(shape), 1.0, dt); }
Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dt) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    Tensor t = zeros(std::move(shape), dt);
    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
    });
    return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dt) {
    return from(std::move(shape), std::span<const double>(values.begin(), values.size()), dt);
}

Tensor Tensor::from_f32(Shape shape, std::span<const float> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("value count does not match shape " + shape_str(shape));
    check_shape(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = DType::f32;
    t.f32_ = std::make_shared<std::vector<float>>(values.begin(), values.end());
    return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        for (auto& v : t.mutable_data<T>()) v = static_cast<T>(rng.uniform(lo, hi));
    });
    return t;
}

Tensor Tensor::normal(Shape shape, Rng& rng, double mean, double stddev, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        for (auto& v : t.mutable_data<T>()) v = static_cast<T>(mean + stddev * rng.normal());
    });
    return t;
}

int64_t Tensor::dim(int64_t axis) const {
    const int64_t r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    return shape_[static_cast<size_t>(axis)];
}

double Tensor::flat(int64_t index) const {
    if (index < 0 || index >= numel()) throw ShapeError("flat index out of range");
    if (dtype_ == DType::f32) return (*f32_)[static_cast<size_t>(index)];
    return (*f64_)[static_cast<size_t>(index)];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
    if (static_cast<int64_t>(index.size()) != rank()) throw ShapeError("index rank mismatch");
    int64_t off = 0;
    size_t a = 0;
    for (int64_t i : index) {
        if (i < 0 || i >= shape_[a]) throw ShapeError("index out of range");
        off = off * shape_[a] + i;
        ++a;
    }
    return flat(off);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape_));
    return flat(0);
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(static_cast<size_t>(numel()));
    dispatch(dtype_, [&](auto tag) {
        using T = decltype(tag);
        auto d = data<T>();
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(d[i]);
    });
    return out;
}

Tensor Tensor::reshape(Shape shape) const {
    check_shape(shape);
    if (shape_numel(shape) != numel())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::to(DType dt) const {
    if (dt == dtype_) return *this;
    Tensor t = zeros(shape_, dt);
    dispatch(dtype_, [&](auto src_tag) {
        using S = decltype(src_tag);
        auto src = data<S>();
        dispatch(dt, [&](auto dst_tag) {
            using D = decltype(dst_tag);
            auto dst = t.mutable_data<D>();
            for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
        });
    });
    return t;
}

Tensor Tensor::clone() const {
    Tensor t = *this;
    if (f32_) t.f32_ = std::make_shared<std::vector<float>>(*f32_);
    if (f64_) t.f64_ = std::make_shared<std::vector<double>>(*f64_);
    return t;
}

bool Tensor::all_finite() const {
    return dispatch(dtype_, [&](auto tag) {
        using T = decltype(tag);
        for (T v : data<T>())
            if (!std::isfinite(v)) return false;
        return true;
    });
}

uint64_t Tensor::content_hash() const {
    uint64_t h = fnv1a64(shape_.data(), shape_.size() * sizeof(int64_t));
    if (dtype_ == DType::f32) return fnv1a64(f32_->data(), f32_->size() * sizeof(float), h);
    return fnv1a64(f64_->data(), f64_->size() * sizeof(double), h);
}

uint64_t fnv1a64(const void* bytes, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

// xoshiro256** seeded through splitmix64.
void Rng::reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : s_) s = splitmix64(x);
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) throw ContractError("Rng::below(0)");
    return next_u64() % n;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << std::hex << s_[0] << ' ' << s_[1] << ' ' << s_[2] << ' ' << s_[3];
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> std::hex >> s_[0] >> s_[1] >> s_[2] >> s_[3];
    if (!is) throw ConfigError("malformed RNG state '" + s + "'");
}

}  // namespace hsifuse
