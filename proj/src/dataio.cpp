#include "hsifuse/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "hsifuse/error.hpp"
#include "hsifuse/nn.hpp"

namespace hsifuse::data {

namespace {

constexpr double kPi = std::numbers::pi;

void require_cube(const Tensor& z, const char* what) {
    if (!z.defined() || z.rank() != 3) throw ShapeError(std::string(what) + ": expected a [C,H,W] cube");
}

// Catmull-Rom through evenly spaced control points, sampled at n positions.
std::vector<double> smooth_curve(const std::vector<double>& ctrl, int64_t n) {
    std::vector<double> out(static_cast<size_t>(n));
    const auto m = static_cast<int64_t>(ctrl.size());
    auto at = [&](int64_t i) { return ctrl[static_cast<size_t>(std::clamp<int64_t>(i, 0, m - 1))]; };
    for (int64_t i = 0; i < n; ++i) {
        const double pos = n > 1 ? static_cast<double>(i) * static_cast<double>(m - 1) / static_cast<double>(n - 1) : 0;
        const auto k = std::min<int64_t>(static_cast<int64_t>(pos), m - 2);
        const double t = pos - static_cast<double>(k);
        const double p0 = at(k - 1), p1 = at(k), p2 = at(k + 1), p3 = at(k + 2);
        const double v = 0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t * t +
                                (-p0 + 3 * p1 - 3 * p2 + p3) * t * t * t);
        out[static_cast<size_t>(i)] = std::clamp(v, 0.02, 1.0);
    }
    return out;
}

struct Canvas {
    int64_t h, w;
    std::vector<double> v;
    Canvas(int64_t h_, int64_t w_, double fill) : h(h_), w(w_), v(static_cast<size_t>(h_ * w_), fill) {}
    template <class F>
    void add(F&& f) {
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) v[static_cast<size_t>(y * w + x)] += f(x + 0.5, y + 0.5);
    }
};

}  // namespace

Scene gen_scene_detail(const SceneSpec& spec) {
    if (spec.bands < 1 || spec.height < 1 || spec.width < 1) throw ConfigError("gen_scene: sizes must be positive");
    if (spec.endmembers < 2) throw ConfigError("gen_scene: need at least 2 endmembers");
    Rng rng(spec.seed);
    const int64_t C = spec.bands, H = spec.height, W = spec.width, E = spec.endmembers;
    const double size = static_cast<double>(std::min(H, W));

    std::vector<double> spectra;
    spectra.reserve(static_cast<size_t>(E * C));
    for (int64_t e = 0; e < E; ++e) {
        std::vector<double> ctrl(7);
        for (auto& c : ctrl) c = rng.uniform(0.05, 0.95);
        const auto curve = smooth_curve(ctrl, C);
        spectra.insert(spectra.end(), curve.begin(), curve.end());
    }

    std::vector<double> orient = spec.orientations;
    if (orient.empty())
        for (int i = 0; i < 3; ++i) orient.push_back(rng.uniform(0.0, kPi));

    std::vector<Canvas> maps;
    for (int64_t e = 0; e < E; ++e) maps.emplace_back(H, W, rng.uniform(0.05, 0.3));
    auto pick = [&]() -> Canvas& { return maps[static_cast<size_t>(rng.below(static_cast<uint64_t>(E)))]; };
    auto centre = [&](double& cx, double& cy) {
        cx = rng.uniform(0.15, 0.85) * static_cast<double>(W);
        cy = rng.uniform(0.15, 0.85) * static_cast<double>(H);
    };

    size_t next_orient = 0;
    auto next_angle = [&]() { return orient[next_orient++ % orient.size()]; };

    if (spec.lines) {
        for (size_t i = 0; i < orient.size(); ++i) {
            const double phi = next_angle();
            double cx, cy;
            centre(cx, cy);
            const double width = rng.uniform(0.8, 1.6) * size / 64.0;
            const double amp = rng.uniform(1.5, 3.0);
            // lines run along (cos phi, -sin phi); d is the normal distance
            const double nx = std::sin(phi), ny = std::cos(phi);
            pick().add([=](double x, double y) {
                const double d = (x - cx) * nx + (y - cy) * ny;
                return amp * std::exp(-0.5 * d * d / (width * width));
            });
        }
    }
    if (spec.edges) {
        const double phi = next_angle();
        double cx, cy;
        centre(cx, cy);
        const double nx = std::sin(phi), ny = std::cos(phi);
        const double amp = rng.uniform(0.8, 1.5);
        pick().add([=](double x, double y) {
            const double d = (x - cx) * nx + (y - cy) * ny;
            return amp / (1.0 + std::exp(-2.0 * d));
        });
    }
    if (spec.blobs) {
        for (int i = 0; i < 3; ++i) {
            double cx, cy;
            centre(cx, cy);
            const double r = rng.uniform(0.12, 0.25) * size;
            const double amp = rng.uniform(1.0, 2.0);
            // compact bump: the surroundings stay exactly flat
            pick().add([=](double x, double y) {
                const double q = 1.0 - ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
                return q > 0 ? amp * q * q : 0.0;
            });
        }
    }
    if (spec.checker) {
        const double period = rng.uniform(0.2, 0.35) * size;
        const double rot = rng.uniform(0.0, kPi / 2);
        const double c = std::cos(rot), s = std::sin(rot);
        const double amp = rng.uniform(0.3, 0.7);
        pick().add([=](double x, double y) {
            const double u = c * x + s * y, v = -s * x + c * y;
            const double k = 2 * kPi / period;
            return amp * (0.5 + 0.5 * std::tanh(3.0 * std::sin(k * u) * std::sin(k * v)));
        });
    }

    Scene out;
    std::vector<double> ab(static_cast<size_t>(E * H * W));
    for (int64_t p = 0; p < H * W; ++p) {
        double total = 0;
        for (int64_t e = 0; e < E; ++e) total += maps[static_cast<size_t>(e)].v[static_cast<size_t>(p)];
        for (int64_t e = 0; e < E; ++e)
            ab[static_cast<size_t>(e * H * W + p)] = maps[static_cast<size_t>(e)].v[static_cast<size_t>(p)] / total;
    }
    std::vector<double> cube(static_cast<size_t>(C * H * W), 0.0);
    for (int64_t e = 0; e < E; ++e)
        for (int64_t b = 0; b < C; ++b) {
            const double s = spectra[static_cast<size_t>(e * C + b)];
            double* dst = cube.data() + b * H * W;
            const double* a = ab.data() + e * H * W;
            for (int64_t p = 0; p < H * W; ++p) dst[p] += s * a[p];
        }
    for (auto& v : cube) v = std::clamp(v, 0.0, 1.0);
    out.cube = Tensor::from({C, H, W}, cube, DType::f64);
    out.abundances = Tensor::from({E, H, W}, ab, DType::f64);
    out.spectra = Tensor::from({E, C}, spectra, DType::f64);
    return out;
}

Tensor gen_scene(const SceneSpec& spec) { return gen_scene_detail(spec).cube; }

std::vector<double> blur_kernel(int64_t size, double sigma) { return nn::gaussian_kernel(size, sigma); }

Tensor degrade_spatial(const Tensor& z, int64_t ratio, int64_t ksize, double sigma) {
    require_cube(z, "degrade_spatial");
    if (ratio < 1) throw ConfigError("degrade_spatial: ratio must be >= 1");
    const int64_t C = z.dim(0), H = z.dim(1), W = z.dim(2);
    if (H % ratio != 0 || W % ratio != 0)
        throw ShapeError("degrade_spatial: size " + shape_str(z.shape()) + " is not divisible by ratio " +
                         std::to_string(ratio));
    const auto k = blur_kernel(ksize, sigma);
    const int64_t off = (ksize - 1) / 2;
    const int64_t h = H / ratio, w = W / ratio;
    const Tensor src = z.to(DType::f64);
    const auto in = src.data<double>();
    std::vector<double> out(static_cast<size_t>(C * h * w));
    std::vector<double> rows(static_cast<size_t>(W));
    for (int64_t c = 0; c < C; ++c) {
        const double* plane = in.data() + c * H * W;
        for (int64_t i = 0; i < h; ++i) {
            const int64_t y0 = i * ratio;
            // vertical pass for the one row we keep
            for (int64_t x = 0; x < W; ++x) {
                double acc = 0;
                for (int64_t t = 0; t < ksize; ++t) {
                    const int64_t y = nn::pad_index(y0 + t - off, H, nn::PadMode::reflect);
                    acc += k[static_cast<size_t>(t)] * plane[y * W + x];
                }
                rows[static_cast<size_t>(x)] = acc;
            }
            for (int64_t j = 0; j < w; ++j) {
                const int64_t x0 = j * ratio;
                double acc = 0;
                for (int64_t t = 0; t < ksize; ++t) {
                    const int64_t x = nn::pad_index(x0 + t - off, W, nn::PadMode::reflect);
                    acc += k[static_cast<size_t>(t)] * rows[static_cast<size_t>(x)];
                }
                out[static_cast<size_t>((c * h + i) * w + j)] = acc;
            }
        }
    }
    return Tensor::from({C, h, w}, out, DType::f64).to(z.dtype());
}

std::vector<std::pair<int64_t, int64_t>> spectral_blocks(int64_t bands, int64_t groups) {
    if (groups < 1 || groups > bands)
        throw ConfigError("spectral_blocks: need 1 <= groups <= bands (got " + std::to_string(groups) + " for " +
                          std::to_string(bands) + ")");
    std::vector<std::pair<int64_t, int64_t>> out;
    for (int64_t j = 0; j < groups; ++j) out.emplace_back(j * bands / groups, (j + 1) * bands / groups);
    return out;
}

Tensor degrade_spectral(const Tensor& z, int64_t groups) {
    require_cube(z, "degrade_spectral");
    const int64_t C = z.dim(0), P = z.dim(1) * z.dim(2);
    const auto blocks = spectral_blocks(C, groups);
    const Tensor src = z.to(DType::f64);
    const auto in = src.data<double>();
    std::vector<double> out(static_cast<size_t>(groups * P), 0.0);
    for (int64_t j = 0; j < groups; ++j) {
        const auto [b0, b1] = blocks[static_cast<size_t>(j)];
        double* dst = out.data() + j * P;
        for (int64_t b = b0; b < b1; ++b)
            for (int64_t p = 0; p < P; ++p) dst[p] += in[static_cast<size_t>(b * P + p)];
        const double n = static_cast<double>(b1 - b0);
        for (int64_t p = 0; p < P; ++p) dst[p] /= n;
    }
    return Tensor::from({groups, z.dim(1), z.dim(2)}, out, DType::f64).to(z.dtype());
}

Triple make_triple(const SceneSpec& spec, int64_t ratio, int64_t msi_bands) {
    Triple t;
    t.hr = gen_scene(spec);
    t.lr = degrade_spatial(t.hr, ratio);
    t.msi = degrade_spectral(t.hr, msi_bands);
    return t;
}

// ---------------------------------------------------------------- HSC1

void write_cube(const std::filesystem::path& path, const Tensor& cube) {
    require_cube(cube, "write_cube");
    const Tensor src = cube.to(DType::f32);
    const auto in = src.data<float>();
    std::vector<float> payload(in.begin(), in.end());
    for (auto& v : payload) {
        if (std::isnan(v)) throw NonFiniteError("write_cube: NaN in cube");
        v = std::clamp(v, 0.0f, 1.0f);
    }
    std::ostringstream hdr;
    hdr << kCubeMagic << "\n"
        << "bands: " << cube.dim(0) << "\n"
        << "height: " << cube.dim(1) << "\n"
        << "width: " << cube.dim(2) << "\n"
        << "dtype: f32\n"
        << "byte_order: little\n"
        << "value_min: 0\n"
        << "value_max: 1\n"
        << "end\n";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("write_cube: cannot open " + path.string());
    const std::string h = hdr.str();
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (float v : payload) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        const char le[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                            static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
        f.write(le, 4);
    }
    if (!f) throw Error("write_cube: write failed for " + path.string());
}

Tensor read_cube(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("read_cube: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    size_t pos = 0;
    auto next_line = [&](std::string& line) {
        const size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos || nl - pos > 256) return false;
        line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return true;
    };
    std::string line;
    if (!next_line(line) || line != kCubeMagic) throw FormatError("not an HSC1 cube: bad magic", 0);

    std::map<std::string, std::string> fields;
    std::map<std::string, long long> where;
    for (;;) {
        const auto at = static_cast<long long>(pos);
        if (!next_line(line)) throw FormatError("truncated HSC1 header", at);
        if (line == "end") break;
        const size_t colon = line.find(": ");
        if (colon == std::string::npos) throw FormatError("malformed header line '" + line + "'", at);
        fields[line.substr(0, colon)] = line.substr(colon + 2);
        where[line.substr(0, colon)] = at;
    }
    const auto header_end = static_cast<long long>(pos);
    auto field = [&](const std::string& key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) throw FormatError("HSC1 header is missing '" + key + "'", header_end);
        return it->second;
    };
    auto dim = [&](const std::string& key) {
        const std::string& s = field(key);
        size_t used = 0;
        long long v = -1;
        try {
            v = std::stoll(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || v < 1) throw FormatError("bad value '" + s + "' for " + key, where[key]);
        return static_cast<int64_t>(v);
    };
    if (field("dtype") != "f32") throw FormatError("unsupported dtype '" + field("dtype") + "'", where["dtype"]);
    const std::string& order = field("byte_order");
    if (order != "little")
        throw FormatError("foreign byte order '" + order + "': only little-endian cubes are supported",
                          where["byte_order"]);
    const int64_t C = dim("bands"), H = dim("height"), W = dim("width");
    const auto n = static_cast<size_t>(C * H * W);
    const size_t have = bytes.size() - pos;
    if (have != n * 4)
        throw FormatError("payload holds " + std::to_string(have) + " bytes, expected " + std::to_string(n * 4),
                          header_end + static_cast<long long>(std::min(have, n * 4)));
    std::vector<float> vals(n);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (size_t i = 0; i < n; ++i) {
        const uint32_t bits = static_cast<uint32_t>(p[4 * i]) | (static_cast<uint32_t>(p[4 * i + 1]) << 8) |
                              (static_cast<uint32_t>(p[4 * i + 2]) << 16) | (static_cast<uint32_t>(p[4 * i + 3]) << 24);
        std::memcpy(&vals[i], &bits, 4);
    }
    return Tensor::from_f32({C, H, W}, vals);
}

}  // namespace hsifuse::data

namespace hsifuse::data {

void DatasetSpec::validate() const {
    if (count < 1) throw ConfigError("dataset needs at least one scene");
    if (bands < 1) throw ConfigError("bands must be positive");
    if (msi_bands < 1 || msi_bands > bands)
        throw ConfigError("msi bands must be in [1, bands], got " + std::to_string(msi_bands) + " for " +
                          std::to_string(bands) + " bands");
    if (ratio < 1) throw ConfigError("ratio must be positive");
    if (size < 1 || size % ratio != 0)
        throw ConfigError("size " + std::to_string(size) + " is not divisible by ratio " + std::to_string(ratio));
}

uint64_t scene_seed(uint64_t dataset_seed, int64_t index) {
    const uint64_t parts[2] = {dataset_seed, static_cast<uint64_t>(index)};
    return fnv1a64(parts, sizeof(parts));
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    for (int64_t i = 0; i < spec.count; ++i) {
        SceneSpec s;
        s.seed = scene_seed(spec.seed, i);
        s.bands = spec.bands;
        s.height = s.width = spec.size;
        ds.scenes.push_back(make_triple(s, spec.ratio, spec.msi_bands));
    }
    return ds;
}

namespace {

std::string scene_file(int64_t i, const char* kind) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "scene_%03lld_%s.hsc", static_cast<long long>(i), kind);
    return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    ds.spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    std::ostringstream m;
    m << "format=hsifuse-dataset\n"
      << "seed=" << ds.spec.seed << "\n"
      << "count=" << ds.scenes.size() << "\n"
      << "bands=" << ds.spec.bands << "\n"
      << "msi_bands=" << ds.spec.msi_bands << "\n"
      << "size=" << ds.spec.size << "\n"
      << "ratio=" << ds.spec.ratio << "\n"
      << "blur_size=" << kBlurSize << "\n"
      << "blur_sigma=" << kBlurSigma << "\n"
      << "decimation=top-left\n"
      << "spectral_response=block-mean\n";
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        const auto n = static_cast<int64_t>(i);
        const Triple& t = ds.scenes[i];
        write_cube(dir / scene_file(n, "hr"), t.hr);
        write_cube(dir / scene_file(n, "lr"), t.lr);
        write_cube(dir / scene_file(n, "msi"), t.msi);
        m << "scene." << n << ".seed=" << scene_seed(ds.spec.seed, n) << "\n"
          << "scene." << n << ".hr=" << scene_file(n, "hr") << "\n"
          << "scene." << n << ".lr=" << scene_file(n, "lr") << "\n"
          << "scene." << n << ".msi=" << scene_file(n, "msi") << "\n";
    }
    std::ofstream f(dir / kManifestName);
    f << m.str();
    if (!f) throw Error("cannot write " + (dir / kManifestName).string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const auto path = dir / kManifestName;
    std::ifstream f(path);
    if (!f) throw Error("cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(path.string() + ": malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError(path.string() + ": missing '" + k + "'");
        return it->second;
    };
    if (get("format") != "hsifuse-dataset") throw ConfigError(path.string() + ": not a dataset manifest");
    auto num = [&](const std::string& k) {
        try {
            return std::stoll(get(k));
        } catch (const std::logic_error&) {
            throw ConfigError(path.string() + ": bad value for '" + k + "'");
        }
    };
    Dataset ds;
    ds.spec.seed = static_cast<uint64_t>(std::stoull(get("seed")));
    ds.spec.count = num("count");
    ds.spec.bands = num("bands");
    ds.spec.msi_bands = num("msi_bands");
    ds.spec.size = num("size");
    ds.spec.ratio = num("ratio");
    ds.spec.validate();
    for (int64_t i = 0; i < ds.spec.count; ++i) {
        const std::string p = "scene." + std::to_string(i) + ".";
        Triple t{read_cube(dir / get(p + "hr")), read_cube(dir / get(p + "lr")), read_cube(dir / get(p + "msi"))};
        if (t.hr.dim(0) != ds.spec.bands || t.hr.dim(1) != ds.spec.size || t.msi.dim(0) != ds.spec.msi_bands ||
            t.lr.dim(1) * ds.spec.ratio != t.hr.dim(1))
            throw ShapeError(path.string() + ": scene " + std::to_string(i) + " does not match the manifest");
        ds.scenes.push_back(std::move(t));
    }
    return ds;
}

}  // namespace hsifuse::data
