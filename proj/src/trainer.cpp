#include "hsifuse/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "hsifuse/nn.hpp"
#include "hsifuse/ops.hpp"

namespace hsifuse::train {

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    model.validate();
    if (!(alpha >= 0) || !(beta >= 0)) throw ConfigError("loss weights must be >= 0");
    if (alpha == 0 && beta == 0) throw ConfigError("at least one loss weight must be positive");
    if (!(lr_init > 0) || !(lr_min >= 0) || lr_min > lr_init) throw ConfigError("need 0 <= lr_min <= lr_init, lr_init > 0");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be >= 0");
    if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (holdout < 1) throw ConfigError("holdout must keep at least one scene");
    if (patch < 1 || patch % model.ratio != 0)
        throw ConfigError("patch " + std::to_string(patch) + " is not divisible by ratio " + std::to_string(model.ratio));
    if (patch % model.window != 0)
        throw ConfigError("patch " + std::to_string(patch) + " is not divisible by the attention window " +
                          std::to_string(model.window));
    if (model.use_gsrt && patch / model.ratio < 8)
        throw ConfigError("the spectral prior needs low-resolution patches of at least 8x8; raise patch to " +
                          std::to_string(8 * model.ratio));
}

namespace {

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const long long d = std::stoll(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
    if (key == "alpha") alpha = parse_double(key, value);
    else if (key == "beta") beta = parse_double(key, value);
    else if (key == "lr_init") lr_init = parse_double(key, value);
    else if (key == "lr_min") lr_min = parse_double(key, value);
    else if (key == "clip_norm") clip_norm = parse_double(key, value);
    else if (key == "steps") steps = parse_int(key, value);
    else if (key == "batch") batch = parse_int(key, value);
    else if (key == "patch") patch = parse_int(key, value);
    else if (key == "eval_every") eval_every = parse_int(key, value);
    else if (key == "holdout") holdout = parse_int(key, value);
    else if (key == "seed") seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "dtype") {
        if (value == "f32") dtype = DType::f32;
        else if (value == "f64") dtype = DType::f64;
        else throw ConfigError("'dtype' expects f32 or f64, got '" + value + "'");
    } else if (key == "no_dae") model.use_dae = !parse_bool(key, value);
    else if (key == "no_daci") model.use_daci = !parse_bool(key, value);
    else if (key == "no_fusion") model.use_fusion = !parse_bool(key, value);
    else if (key == "no_gsrt") model.use_gsrt = !parse_bool(key, value);
    else if (key == "K") model.set("directions", value);
    else if (key == "TB") model.set("blocks", value);
    else if (!model.set(key, value)) throw ConfigError("unknown config key '" + key + "'");
}

std::string TrainConfig::canonical() const {
    std::ostringstream os;
    os << "alpha=" << fmt_double(alpha) << "\n"
       << "beta=" << fmt_double(beta) << "\n"
       << "lr_init=" << fmt_double(lr_init) << "\n"
       << "lr_min=" << fmt_double(lr_min) << "\n"
       << "steps=" << steps << "\n"
       << "batch=" << batch << "\n"
       << "patch=" << patch << "\n"
       << "seed=" << seed << "\n"
       << "clip_norm=" << fmt_double(clip_norm) << "\n"
       << "eval_every=" << eval_every << "\n"
       << "holdout=" << holdout << "\n"
       << "dtype=" << (dtype == DType::f32 ? "f32" : "f64") << "\n"
       << model.canonical();
    return os.str();
}

void apply_settings(TrainConfig& cfg, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    apply_settings(base, os.str(), path.string());
    return base;
}

// ---------------------------------------------------------------- loss / optim

Var loss(const Var& z_hat, const Var& z_init, const Var& z, double alpha, double beta) {
    if (z_hat.shape() != z.shape() || z_init.shape() != z.shape())
        throw ShapeError("loss: shapes " + shape_str(z_hat.shape()) + ", " + shape_str(z_init.shape()) + " and " +
                         shape_str(z.shape()) + " differ");
    Var l1 = ops::mean_all(ops::abs(ops::sub(z_hat, z)));
    Var l2 = ops::mean_all(ops::abs(ops::sub(z_init, z)));
    return ops::add(ops::scale(l1, alpha), ops::scale(l2, beta));
}

double cosine_lr(int64_t t, int64_t T, double lr_init, double lr_min) {
    if (T <= 0 || t >= T) return lr_min;
    if (t <= 0) return lr_init;
    const double c = std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(T));
    return lr_min + (lr_init - lr_min) * (1.0 + c) / 2.0;
}

void adam_step(ParamStore& store, double lr, int64_t t, const AdamOptions& opts) {
    if (t < 1) throw ContractError("adam_step: t is 1-based");
    for (const auto& [name, p] : store.entries()) {
        const Tensor& g = p.var.grad();
        if (g.defined() && !g.all_finite()) throw NonFiniteError("non-finite gradient in '" + name + "'");
    }
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(t));
    for (auto& [name, p] : store.entries()) {
        const Tensor g = p.var.grad().defined() ? p.var.grad() : Tensor::zeros(p.var.shape(), p.var.dtype());
        Tensor w = p.var.value();
        dispatch(w.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const auto gd = g.to(w.dtype()).template data<T>();
            auto wd = w.template mutable_data<T>();
            auto md = p.m.template mutable_data<T>();
            auto vd = p.v.template mutable_data<T>();
            for (size_t i = 0; i < wd.size(); ++i) {
                const double gi = static_cast<double>(gd[i]);
                const double m = opts.beta1 * static_cast<double>(md[i]) + (1.0 - opts.beta1) * gi;
                const double v = opts.beta2 * static_cast<double>(vd[i]) + (1.0 - opts.beta2) * gi * gi;
                md[i] = static_cast<T>(m);
                vd[i] = static_cast<T>(v);
                const double mh = m / c1, vh = v / c2;
                wd[i] = static_cast<T>(static_cast<double>(wd[i]) - lr * mh / (std::sqrt(vh) + opts.eps));
            }
        });
        p.var.set_value(std::move(w));
    }
}

double grad_norm(const ParamStore& store) {
    double s = 0;
    for (const auto& [_, p] : store.entries()) {
        const Tensor& g = p.var.grad();
        if (!g.defined()) continue;
        for (int64_t i = 0; i < g.numel(); ++i) s += g.flat(i) * g.flat(i);
    }
    return std::sqrt(s);
}

double clip_grad_norm(ParamStore& store, double max_norm) {
    const double n = grad_norm(store);
    if (max_norm <= 0 || n <= max_norm) return n;
    const double f = max_norm / (n + 1e-12);
    for (auto& [_, p] : store.entries()) {
        Tensor g = p.var.grad();
        if (!g.defined()) continue;
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            for (auto& x : g.template mutable_data<T>()) x = static_cast<T>(static_cast<double>(x) * f);
        });
        p.var.zero_grad();
        accumulate_grad(*p.var.node(), g);
    }
    return n;
}

// ---------------------------------------------------------------- data

namespace {

Tensor crop_cube(const Tensor& t, int64_t top, int64_t left, int64_t h, int64_t w) {
    const int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    if (top < 0 || left < 0 || top + h > H || left + w > W)
        throw ShapeError("crop outside the cube " + shape_str(t.shape()));
    Tensor out = Tensor::zeros({C, h, w}, t.dtype());
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto src = t.template data<T>();
        auto dst = out.template mutable_data<T>();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < h; ++y)
                std::memcpy(&dst[static_cast<size_t>((c * h + y) * w)],
                            &src[static_cast<size_t>((c * H + top + y) * W + left)], sizeof(T) * static_cast<size_t>(w));
    });
    return out;
}

Tensor clip01(const Tensor& t) {
    std::vector<double> v = t.to_vector();
    for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
    return Tensor::from(t.shape(), v, DType::f64);
}

metrics::MetricReport mean_report(const std::vector<metrics::MetricReport>& rs) {
    metrics::MetricReport m;
    if (rs.empty()) return m;
    for (const auto& r : rs) {
        m.psnr_db += r.psnr_db;
        m.sam_deg += r.sam_deg;
        m.ssim += r.ssim;
        m.uiqi += r.uiqi;
        m.ergas += r.ergas;
    }
    const double n = static_cast<double>(rs.size());
    m.psnr_db /= n;
    m.sam_deg /= n;
    m.ssim /= n;
    m.uiqi /= n;
    m.ergas /= n;
    return m;
}

EvalResult summarize(std::vector<metrics::MetricReport> final, std::vector<metrics::MetricReport> stage1) {
    EvalResult r;
    const auto m = mean_report(final);
    r.psnr_db = m.psnr_db;
    r.sam_deg = m.sam_deg;
    r.scenes = std::move(final);
    r.stage1 = std::move(stage1);
    return r;
}

}  // namespace

data::Triple crop(const data::Triple& t, int64_t ratio, int64_t top, int64_t left, int64_t patch) {
    if (top % ratio != 0 || left % ratio != 0 || patch % ratio != 0)
        throw ShapeError("crop offsets and size must be multiples of the ratio");
    return {crop_cube(t.hr, top, left, patch, patch),
            crop_cube(t.lr, top / ratio, left / ratio, patch / ratio, patch / ratio),
            crop_cube(t.msi, top, left, patch, patch)};
}

FuseResult fuse(const FusionModel& model, const Tensor& lr_hsi, const Tensor& msi) {
    const DType dt = model.params().dtype();
    DTypeScope scope(dt);
    NoGradGuard ng;
    const FusionOutput out = model.forward(Var(lr_hsi.to(dt)), Var(msi.to(dt)));
    return {out.z_init.value(), out.z_hat.value()};
}

EvalResult evaluate(const FusionModel& model, const std::vector<data::Triple>& scenes, int64_t ratio) {
    std::vector<metrics::MetricReport> fin, s1;
    for (const auto& t : scenes) {
        const FuseResult f = fuse(model, t.lr, t.msi);
        fin.push_back(metrics::evaluate(clip01(f.z_hat), t.hr, static_cast<double>(ratio)));
        s1.push_back(metrics::evaluate(clip01(f.z_init), t.hr, static_cast<double>(ratio)));
    }
    return summarize(std::move(fin), std::move(s1));
}

EvalResult evaluate_bilinear(const std::vector<data::Triple>& scenes, int64_t ratio) {
    std::vector<metrics::MetricReport> fin;
    for (const auto& t : scenes) {
        NoGradGuard ng;
        const Tensor up = nn::resize_bilinear(Var(t.lr.to(DType::f64)), t.hr.dim(1), t.hr.dim(2)).value();
        fin.push_back(metrics::evaluate(clip01(up), t.hr, static_cast<double>(ratio)));
    }
    auto copy = fin;
    return summarize(std::move(fin), std::move(copy));
}

std::string LogEntry::to_text() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "step=%lld loss=%.6f psnr_db=%.4f sam_deg=%.4f", static_cast<long long>(step), loss,
                  psnr_db, sam_deg);
    return buf;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(const TrainConfig& cfg, const data::Dataset& ds) : cfg_(cfg), rng_(cfg.seed ^ 0x6372'6f70'7321ULL) {
    cfg_.validate();
    const auto& s = ds.spec;
    if (s.bands != cfg_.model.bands || s.msi_bands != cfg_.model.msi_bands || s.ratio != cfg_.model.ratio)
        throw ConfigError("dataset (bands " + std::to_string(s.bands) + ", msi " + std::to_string(s.msi_bands) +
                          ", ratio " + std::to_string(s.ratio) + ") does not match the model configuration");
    if (static_cast<int64_t>(ds.scenes.size()) <= cfg_.holdout)
        throw ConfigError("dataset has " + std::to_string(ds.scenes.size()) + " scenes; holdout " +
                          std::to_string(cfg_.holdout) + " leaves none for training");
    if (cfg_.patch > s.size)
        throw ConfigError("patch " + std::to_string(cfg_.patch) + " exceeds the scene size " + std::to_string(s.size));
    const size_t n_train = ds.scenes.size() - static_cast<size_t>(cfg_.holdout);
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        const auto& t = ds.scenes[i];
        data::Triple c{t.hr.to(cfg_.dtype), t.lr.to(cfg_.dtype), t.msi.to(cfg_.dtype)};
        (i < n_train ? train_ : eval_).push_back(std::move(c));
    }
    DTypeScope scope(cfg_.dtype);
    model_ = std::make_unique<FusionModel>(cfg_.model, cfg_.seed, InitMode::training);
}

double Trainer::step() {
    DTypeScope scope(cfg_.dtype);
    ParamStore& store = model_->params();
    const int64_t r = cfg_.model.ratio;
    const double lr = cosine_lr(step_, cfg_.steps, cfg_.lr_init, cfg_.lr_min);
    store.zero_grad();
    double total = 0;
    for (int64_t b = 0; b < cfg_.batch; ++b) {
        const auto& scene = train_[static_cast<size_t>(rng_.below(train_.size()))];
        const int64_t span_y = (scene.hr.dim(1) - cfg_.patch) / r + 1;
        const int64_t span_x = (scene.hr.dim(2) - cfg_.patch) / r + 1;
        const int64_t top = r * static_cast<int64_t>(rng_.below(static_cast<uint64_t>(span_y)));
        const int64_t left = r * static_cast<int64_t>(rng_.below(static_cast<uint64_t>(span_x)));
        const data::Triple c = crop(scene, r, top, left, cfg_.patch);
        const FusionOutput out = model_->forward(Var(c.lr), Var(c.msi));
        const Var l = loss(out.z_hat, out.z_init, Var(c.hr), cfg_.alpha, cfg_.beta);
        const double lv = l.value().flat(0);
        if (!std::isfinite(lv)) throw NonFiniteError("non-finite loss at step " + std::to_string(step_));
        backward(ops::scale(l, 1.0 / static_cast<double>(cfg_.batch)));
        total += lv;
    }
    clip_grad_norm(store, cfg_.clip_norm);
    adam_step(store, lr, step_ + 1);
    ++step_;
    return total / static_cast<double>(cfg_.batch);
}

RunResult Trainer::run(int64_t until, std::ostream* log) {
    if (until < 0) until = cfg_.steps;
    RunResult res;
    double acc = 0;
    int64_t n = 0;
    while (step_ < until) {
        double l = 0;
        try {
            l = step();
        } catch (const NonFiniteError& e) {
            // the failed step never reached the optimizer
            model_->params().zero_grad();
            res.reason = StopReason::non_finite;
            res.message = e.what();
            return res;
        }
        res.losses.push_back(l);
        acc += l;
        ++n;
        const bool at_eval = (cfg_.eval_every > 0 && step_ % cfg_.eval_every == 0) || step_ == until;
        if (at_eval) {
            const EvalResult ev = evaluate(*model_, eval_, cfg_.model.ratio);
            LogEntry e{step_, acc / static_cast<double>(n), ev.psnr_db, ev.sam_deg};
            if (log) *log << e.to_text() << "\n" << std::flush;
            res.log.push_back(e);
            acc = 0;
            n = 0;
        }
    }
    return res;
}

void Trainer::save(const std::filesystem::path& path) const { write_checkpoint(path, *model_, step_, rng_.state()); }

void Trainer::load(const std::filesystem::path& path) {
    const CheckpointInfo info = load_checkpoint(path, *model_);
    step_ = info.step;
    rng_.set_state(info.rng_state);
}

// ---------------------------------------------------------------- checkpoints

namespace {

void put_le(std::string& out, const Tensor& t) {
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto d = t.template data<T>();
        const size_t at = out.size();
        out.resize(at + d.size() * sizeof(T));
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out.data() + at, d.data(), d.size() * sizeof(T));
        } else {
            for (size_t i = 0; i < d.size(); ++i) {
                unsigned char b[sizeof(T)];
                std::memcpy(b, &d[i], sizeof(T));
                for (size_t k = 0; k < sizeof(T); ++k) out[at + i * sizeof(T) + k] = static_cast<char>(b[sizeof(T) - 1 - k]);
            }
        }
    });
}

Tensor get_le(const std::string& bytes, size_t& pos, const Shape& shape, DType dt) {
    Tensor t = Tensor::zeros(shape, dt);
    dispatch(dt, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.template mutable_data<T>();
        const size_t n = d.size() * sizeof(T);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(d.data(), bytes.data() + pos, n);
        } else {
            for (size_t i = 0; i < d.size(); ++i) {
                unsigned char b[sizeof(T)];
                for (size_t k = 0; k < sizeof(T); ++k)
                    b[k] = static_cast<unsigned char>(bytes[pos + i * sizeof(T) + sizeof(T) - 1 - k]);
                std::memcpy(&d[i], b, sizeof(T));
            }
        }
        pos += n;
    });
    return t;
}

std::string shape_text(const Shape& s) {
    std::string o;
    for (size_t i = 0; i < s.size(); ++i) o += (i ? "x" : "") + std::to_string(s[i]);
    return o.empty() ? "scalar" : o;
}

Shape parse_shape(const std::string& s, long long at) {
    Shape out;
    if (s == "scalar") return out;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, 'x')) {
        try {
            out.push_back(std::stoll(part));
        } catch (const std::exception&) {
            throw FormatError("bad shape '" + s + "'", at);
        }
    }
    return out;
}

struct ParsedCheckpoint {
    CheckpointInfo info;
    struct Entry {
        std::string name;
        Shape shape;
    };
    std::vector<Entry> entries;
    std::string bytes;
    size_t payload = 0;
};

ParsedCheckpoint parse_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint " + path.string());
    ParsedCheckpoint pc;
    pc.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    const std::string& b = pc.bytes;
    size_t pos = 0;
    auto next = [&](std::string& line) {
        const size_t nl = b.find('\n', pos);
        if (nl == std::string::npos || nl - pos > 4096) return false;
        line = b.substr(pos, nl - pos);
        pos = nl + 1;
        return true;
    };
    std::string line;
    if (!next(line) || line != kCheckpointMagic) throw FormatError("not a checkpoint: bad magic", 0);
    std::map<std::string, std::string> kv;
    bool have_hash = false, have_step = false;
    for (;;) {
        const auto at = static_cast<long long>(pos);
        if (!next(line)) throw FormatError("truncated checkpoint header", at);
        if (line == "end") break;
        const size_t colon = line.find(": ");
        if (colon == std::string::npos) throw FormatError("malformed header line '" + line + "'", at);
        const std::string key = line.substr(0, colon), val = line.substr(colon + 2);
        if (key.rfind("arch.", 0) == 0) {
            if (!pc.info.arch.set(key.substr(5), val)) throw FormatError("unknown architecture key '" + key + "'", at);
        } else if (key == "param") {
            const size_t sp = val.rfind(' ');
            if (sp == std::string::npos) throw FormatError("malformed param entry '" + val + "'", at);
            pc.entries.push_back({val.substr(0, sp), parse_shape(val.substr(sp + 1), at)});
        } else if (key == "config_hash") {
            pc.info.config_hash = std::stoull(val, nullptr, 16);
            have_hash = true;
        } else if (key == "step") {
            pc.info.step = std::stoll(val);
            have_step = true;
        } else if (key == "rng") {
            pc.info.rng_state = val;
        } else if (key == "dtype") {
            if (val == "f32") pc.info.dtype = DType::f32;
            else if (val == "f64") pc.info.dtype = DType::f64;
            else throw FormatError("unsupported dtype '" + val + "'", at);
        } else if (key == "byte_order") {
            if (val != "little") throw FormatError("foreign byte order '" + val + "'", at);
        } else {
            kv[key] = val;
        }
    }
    if (!have_hash || !have_step) throw FormatError("checkpoint header lacks step or config_hash", static_cast<long long>(pos));
    pc.payload = pos;
    size_t need = 0;
    const size_t el = pc.info.dtype == DType::f32 ? 4 : 8;
    for (const auto& e : pc.entries) need += 3 * static_cast<size_t>(shape_numel(e.shape)) * el;
    if (b.size() - pos != need)
        throw FormatError("checkpoint payload holds " + std::to_string(b.size() - pos) + " bytes, expected " +
                              std::to_string(need),
                          static_cast<long long>(pos + std::min(need, b.size() - pos)));
    return pc;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const FusionModel& model, int64_t step,
                      const std::string& rng_state) {
    const ParamStore& store = model.params();
    std::ostringstream h;
    h << kCheckpointMagic << "\n";
    std::istringstream arch(model.config().canonical());
    std::string line;
    while (std::getline(arch, line)) {
        const size_t eq = line.find('=');
        h << "arch." << line.substr(0, eq) << ": " << line.substr(eq + 1) << "\n";
    }
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(model.config().hash()));
    h << "config_hash: " << hex << "\n"
      << "step: " << step << "\n"
      << "rng: " << rng_state << "\n"
      << "dtype: " << (store.dtype() == DType::f32 ? "f32" : "f64") << "\n"
      << "byte_order: little\n";
    for (const auto& [name, p] : store.entries()) h << "param: " << name << " " << shape_text(p.var.shape()) << "\n";
    h << "end\n";
    std::string out = h.str();
    for (const auto& [name, p] : store.entries()) {
        put_le(out, p.var.value());
        put_le(out, p.m);
        put_le(out, p.v);
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw Error("cannot write checkpoint " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) { return parse_checkpoint(path).info; }

CheckpointInfo load_checkpoint(const std::filesystem::path& path, FusionModel& model) {
    ParsedCheckpoint pc = parse_checkpoint(path);
    if (pc.info.config_hash != model.config().hash() || pc.info.arch.hash() != model.config().hash()) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "checkpoint architecture hash %016llx does not match the model's %016llx",
                      static_cast<unsigned long long>(pc.info.config_hash),
                      static_cast<unsigned long long>(model.config().hash()));
        throw ConfigError(buf);
    }
    ParamStore& store = model.params();
    if (pc.entries.size() != store.size())
        throw ConfigError("checkpoint holds " + std::to_string(pc.entries.size()) + " parameters, the model " +
                          std::to_string(store.size()));
    size_t pos = pc.payload;
    for (const auto& e : pc.entries) {
        if (!store.contains(e.name)) throw ConfigError("checkpoint parameter '" + e.name + "' is not in the model");
        Param& p = store.entries().at(e.name);
        if (p.var.shape() != e.shape) throw ConfigError("checkpoint shape mismatch for '" + e.name + "'");
        const DType dt = p.var.dtype();
        Tensor w = get_le(pc.bytes, pos, e.shape, pc.info.dtype).to(dt);
        p.m = get_le(pc.bytes, pos, e.shape, pc.info.dtype).to(dt);
        p.v = get_le(pc.bytes, pos, e.shape, pc.info.dtype).to(dt);
        p.var.set_value(std::move(w));
    }
    store.zero_grad();
    return pc.info;
}

std::unique_ptr<FusionModel> model_from_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
    const CheckpointInfo ci = read_checkpoint_info(path);
    DTypeScope scope(ci.dtype);
    auto model = std::make_unique<FusionModel>(ci.arch, 0, InitMode::training);
    const CheckpointInfo loaded = load_checkpoint(path, *model);
    if (info) *info = loaded;
    return model;
}

uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    const std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(b.data(), b.size());
}

// ---------------------------------------------------------------- ablation

std::string AblationRow::label() const {
    std::string s;
    auto add = [&](bool on, const char* n) {
        if (!on) return;
        if (!s.empty()) s += "+";
        s += n;
    };
    add(daci, "DACI");
    add(dae, "DAE");
    add(fusion, "Fusion");
    add(gsrt, "GSRT");
    return s.empty() ? "baseline" : s;
}

std::vector<AblationRow> ablation_rows() {
    return {
        {false, false, false, false}, {true, false, false, false}, {true, true, false, false},
        {true, true, true, false},    {false, true, true, true},   {true, true, true, true},
    };
}

std::vector<AblationResult> run_ablation(const TrainConfig& cfg, const data::Dataset& ds,
                                         const std::vector<AblationRow>& rows,
                                         const std::function<void(const AblationResult&)>& progress) {
    std::vector<AblationResult> out;
    for (const auto& row : rows) {
        TrainConfig c = cfg;
        c.model.use_daci = row.daci;
        c.model.use_dae = row.dae;
        c.model.use_fusion = row.fusion;
        c.model.use_gsrt = row.gsrt;
        const auto t0 = std::chrono::steady_clock::now();
        Trainer tr(c, ds);
        const RunResult rr = tr.run();
        if (rr.reason != StopReason::finished) throw NonFiniteError(row.label() + ": " + rr.message);
        const EvalResult ev = evaluate(tr.model(), tr.eval_scenes(), c.model.ratio);
        AblationResult res{row, mean_report(ev.scenes),
                           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        if (progress) progress(res);
        out.push_back(std::move(res));
    }
    return out;
}

std::string ablation_table(const std::vector<AblationResult>& results) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-5s %-5s %-6s %-5s %9s %8s %8s %8s %8s\n", "DACI", "DAE", "Fusion", "GSRT", "PSNR",
                  "SAM", "UIQI", "SSIM", "ERGAS");
    os << buf;
    for (const auto& r : results) {
        auto mark = [](bool b) { return b ? "on" : "off"; };
        std::snprintf(buf, sizeof buf, "%-5s %-5s %-6s %-5s %9.4f %8.4f %8.4f %8.4f %8.4f\n", mark(r.row.daci),
                      mark(r.row.dae), mark(r.row.fusion), mark(r.row.gsrt), r.mean.psnr_db, r.mean.sam_deg,
                      r.mean.uiqi, r.mean.ssim, r.mean.ergas);
        os << buf;
    }
    return os.str();
}

}  // namespace hsifuse::train
