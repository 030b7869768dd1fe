#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hsifuse/dataio.hpp"
#include "hsifuse/error.hpp"
#include "hsifuse/metrics.hpp"

using namespace hsifuse;
namespace fs = std::filesystem;

namespace {

data::SceneSpec small_spec(uint64_t seed) {
    data::SceneSpec s;
    s.seed = seed;
    s.bands = 8;
    s.height = 32;
    s.width = 32;
    s.endmembers = 4;
    return s;
}

fs::path tmp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("hsifuse_dataio_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

int reflect(int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

// Full 2-D convolution with the separable Gaussian written out as one dense
// 8x8 kernel, evaluated everywhere and then sliced.
Tensor dense_oracle(const Tensor& z, int r, int k, double sigma) {
    const int C = static_cast<int>(z.dim(0)), H = static_cast<int>(z.dim(1)), W = static_cast<int>(z.dim(2));
    const double c = 0.5 * (k - 1);
    std::vector<double> k2(static_cast<size_t>(k * k));
    double s = 0;
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) {
            k2[static_cast<size_t>(a * k + b)] = std::exp(-((a - c) * (a - c) + (b - c) * (b - c)) / (2 * sigma * sigma));
            s += k2[static_cast<size_t>(a * k + b)];
        }
    const int off = (k - 1) / 2;
    std::vector<double> full(static_cast<size_t>(C * H * W));
    for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int a = 0; a < k; ++a)
                    for (int b = 0; b < k; ++b)
                        acc += k2[static_cast<size_t>(a * k + b)] / s *
                               z.at({ch, reflect(y + a - off, H), reflect(x + b - off, W)});
                full[static_cast<size_t>((ch * H + y) * W + x)] = acc;
            }
    std::vector<double> out;
    for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < H; y += r)
            for (int x = 0; x < W; x += r) out.push_back(full[static_cast<size_t>((ch * H + y) * W + x)]);
    return Tensor::from({C, H / r, W / r}, out, DType::f64);
}

}  // namespace

TEST_CASE("scene generation") {
    const auto a = data::gen_scene_detail(small_spec(3));
    const auto b = data::gen_scene_detail(small_spec(3));
    CHECK(a.cube.content_hash() == b.cube.content_hash());
    CHECK(a.cube.content_hash() != data::gen_scene(small_spec(4)).content_hash());
    CHECK(a.cube.shape() == Shape{8, 32, 32});
    for (int64_t i = 0; i < a.cube.numel(); ++i) {
        CHECK(a.cube.flat(i) >= 0.0);
        CHECK(a.cube.flat(i) <= 1.0);
    }
    const int64_t E = a.abundances.dim(0);
    REQUIRE(E == 4);
    double worst = 0;
    for (int64_t y = 0; y < 32; ++y)
        for (int64_t x = 0; x < 32; ++x) {
            double s = 0;
            for (int64_t e = 0; e < E; ++e) s += a.abundances.at({e, y, x});
            worst = std::max(worst, std::abs(s - 1));
        }
    CHECK(worst < 1e-6);
    for (int64_t i = 0; i < a.spectra.numel(); ++i) CHECK(a.spectra.flat(i) > 0.0);
}

TEST_CASE("line scenes are more anisotropic than blob scenes") {
    double lines = 0, blobs = 0;
    int wins = 0;
    for (uint64_t s = 0; s < 20; ++s) {
        data::SceneSpec l;
        l.seed = s;
        l.bands = 8;
        l.edges = l.blobs = l.checker = false;
        data::SceneSpec b = l;
        b.lines = false;
        b.blobs = true;
        auto mean = [](const Tensor& t) {
            double m = 0;
            for (int64_t i = 0; i < t.numel(); ++i) m += t.flat(i);
            return m / static_cast<double>(t.numel());
        };
        const double ml = mean(metrics::anisotropy_map(data::gen_scene(l)));
        const double mb = mean(metrics::anisotropy_map(data::gen_scene(b)));
        lines += ml;
        blobs += mb;
        wins += ml > mb;
    }
    INFO("lines=" << lines / 20 << " blobs=" << blobs / 20 << " wins=" << wins);
    CHECK(lines > blobs);
    CHECK(wins >= 15);
}

TEST_CASE("spatial degradation") {
    data::SceneSpec s = small_spec(5);
    s.height = s.width = 64;
    const Tensor z = data::gen_scene(s);
    const Tensor x = data::degrade_spatial(z, 8);
    CHECK(x.shape() == Shape{8, 8, 8});

    const Tensor flat = Tensor::full({2, 16, 16}, 0.37, DType::f64);
    const Tensor xf = data::degrade_spatial(flat, 4);
    for (int64_t i = 0; i < xf.numel(); ++i) CHECK(std::abs(xf.flat(i) - 0.37) < 1e-15);

    SUBCASE("dense convolution oracle") {
        for (int r : {2, 4, 8}) {
            const Tensor got = data::degrade_spatial(z, r);
            const Tensor want = dense_oracle(z, r, 8, 3.0);
            double d = 0;
            for (int64_t i = 0; i < got.numel(); ++i) d = std::max(d, std::abs(got.flat(i) - want.flat(i)));
            INFO("ratio " << r);
            CHECK(d < 1e-6);
        }
        const Tensor got = data::degrade_spatial(z, 4, 5, 1.2);
        const Tensor want = dense_oracle(z, 4, 5, 1.2);
        for (int64_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got.flat(i) - want.flat(i)) < 1e-6);
    }
    SUBCASE("commutes with band slicing") {
        const Tensor full = data::degrade_spatial(z, 4);
        std::vector<double> v = z.to_vector();
        const int64_t n = 64 * 64;
        for (int64_t b = 0; b < 8; ++b) {
            const Tensor band = Tensor::from({1, 64, 64}, std::vector<double>(v.begin() + b * n, v.begin() + (b + 1) * n),
                                             DType::f64);
            const Tensor one = data::degrade_spatial(band, 4);
            for (int64_t i = 0; i < one.numel(); ++i) CHECK(one.flat(i) == full.flat(b * one.numel() + i));
        }
    }
    CHECK_THROWS_AS(data::degrade_spatial(Tensor::zeros({1, 30, 32}, DType::f64), 8), ShapeError);
    CHECK(data::degrade_spatial(Tensor::zeros({1, 16, 16}, DType::f32), 4).dtype() == DType::f32);
}

TEST_CASE("spectral degradation") {
    const auto blocks = data::spectral_blocks(6, 3);
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0] == std::pair<int64_t, int64_t>{0, 2});
    CHECK(blocks[1] == std::pair<int64_t, int64_t>{2, 4});
    CHECK(blocks[2] == std::pair<int64_t, int64_t>{4, 6});
    // floor partition covers every band exactly once
    for (auto [C, c] : {std::pair<int64_t, int64_t>{31, 3}, {31, 4}, {7, 7}, {10, 1}}) {
        const auto bl = data::spectral_blocks(C, c);
        REQUIRE(static_cast<int64_t>(bl.size()) == c);
        CHECK(bl.front().first == 0);
        CHECK(bl.back().second == C);
        for (size_t i = 1; i < bl.size(); ++i) CHECK(bl[i].first == bl[i - 1].second);
        for (const auto& [s0, s1] : bl) CHECK(s1 - s0 >= C / c);
    }
    CHECK_THROWS_AS(data::spectral_blocks(3, 4), ConfigError);

    // constant spectrum: every MSI band equals that constant
    const Tensor flat = Tensor::full({6, 4, 4}, 0.25, DType::f64);
    const Tensor y = data::degrade_spectral(flat, 3);
    CHECK(y.shape() == Shape{3, 4, 4});
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.flat(i) == doctest::Approx(0.25).epsilon(1e-15));

    // response rows sum to 1: a one-hot band contributes 1/|block| to its group only
    for (int64_t b = 0; b < 6; ++b) {
        std::vector<double> v(6, 0.0);
        v[static_cast<size_t>(b)] = 1.0;
        const Tensor yy = data::degrade_spectral(Tensor::from({6, 1, 1}, v, DType::f64), 3);
        CHECK(yy.flat(b / 2) == doctest::Approx(0.5));
        CHECK(yy.flat(0) + yy.flat(1) + yy.flat(2) == doctest::Approx(0.5));
    }
    CHECK_THROWS_AS(data::degrade_spectral(flat, 7), ConfigError);
}

TEST_CASE("triples") {
    const auto t = data::make_triple(small_spec(8), 4, 3);
    CHECK(t.hr.shape() == Shape{8, 32, 32});
    CHECK(t.lr.shape() == Shape{8, 8, 8});
    CHECK(t.msi.shape() == Shape{3, 32, 32});
    CHECK(t.lr.content_hash() == data::degrade_spatial(t.hr, 4).content_hash());
    CHECK(t.msi.content_hash() == data::degrade_spectral(t.hr, 3).content_hash());
}

TEST_CASE("hsc1 container") {
    const fs::path dir = tmp_dir("hsc1");
    const Tensor z = data::gen_scene(small_spec(9));
    const fs::path p = dir / "z.hsc";
    data::write_cube(p, z);
    const Tensor r = data::read_cube(p);
    CHECK(r.dtype() == DType::f32);
    CHECK(r.shape() == z.shape());
    CHECK(r.content_hash() == z.to(DType::f32).content_hash());

    // f32 round-trip is bit-exact
    data::write_cube(dir / "r.hsc", r);
    CHECK(slurp(dir / "r.hsc") == slurp(p));
    CHECK(data::read_cube(dir / "r.hsc").content_hash() == r.content_hash());

    // values are clipped on write
    data::write_cube(dir / "clip.hsc", Tensor::from({1, 1, 2}, {-0.5, 1.5}, DType::f64));
    const Tensor c = data::read_cube(dir / "clip.hsc");
    CHECK(c.flat(0) == 0.0);
    CHECK(c.flat(1) == 1.0);
    CHECK_THROWS_AS(data::write_cube(dir / "nan.hsc", Tensor::from({1, 1, 1}, {std::nan("")}, DType::f64)),
                    NonFiniteError);

    const std::string bytes = slurp(p);
    SUBCASE("bad magic") {
        std::string b = bytes;
        b[0] = 'X';
        spit(dir / "bad.hsc", b);
        try {
            data::read_cube(dir / "bad.hsc");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset() == 0);
        }
    }
    SUBCASE("truncated payload") {
        spit(dir / "short.hsc", bytes.substr(0, bytes.size() - 10));
        CHECK_THROWS_AS(data::read_cube(dir / "short.hsc"), FormatError);
        spit(dir / "long.hsc", bytes + "xxxx");
        CHECK_THROWS_AS(data::read_cube(dir / "long.hsc"), FormatError);
    }
    SUBCASE("dims inconsistent with payload") {
        std::string b = bytes;
        const auto at = b.find("width: 32");
        REQUIRE(at != std::string::npos);
        b.replace(at, 9, "width: 31");
        spit(dir / "dims.hsc", b);
        CHECK_THROWS_AS(data::read_cube(dir / "dims.hsc"), FormatError);
    }
    SUBCASE("foreign byte order") {
        std::string b = bytes;
        const auto at = b.find("byte_order: little");
        REQUIRE(at != std::string::npos);
        b.replace(at, 18, "byte_order: big   ");
        spit(dir / "be.hsc", b);
        try {
            data::read_cube(dir / "be.hsc");
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("byte order") != std::string::npos);
        }
    }
    SUBCASE("truncated header") {
        spit(dir / "hdr.hsc", bytes.substr(0, 12));
        CHECK_THROWS_AS(data::read_cube(dir / "hdr.hsc"), FormatError);
    }
    CHECK_THROWS(data::read_cube(dir / "missing.hsc"));
    fs::remove_all(dir);
}

TEST_CASE("dataset directory round trip") {
    data::DatasetSpec spec;
    spec.seed = 11;
    spec.count = 3;
    spec.bands = 8;
    spec.msi_bands = 2;
    spec.size = 16;
    spec.ratio = 2;
    const data::Dataset ds = data::generate_dataset(spec);
    REQUIRE(ds.scenes.size() == 3);
    CHECK(data::scene_seed(11, 0) != data::scene_seed(11, 1));
    CHECK(data::scene_seed(11, 0) != data::scene_seed(12, 0));

    const fs::path dir = fs::temp_directory_path() / "hsifuse_dataset_rt";
    fs::remove_all(dir);
    data::write_dataset(dir, ds);
    const data::Dataset back = data::read_dataset(dir);
    CHECK(back.spec.seed == 11);
    CHECK(back.spec.count == 3);
    CHECK(back.spec.ratio == 2);
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        const auto& a = ds.scenes[i];
        const auto& b = back.scenes[i];
        CHECK(b.hr.shape() == Shape{8, 16, 16});
        CHECK(b.lr.shape() == Shape{8, 8, 8});
        CHECK(b.msi.shape() == Shape{2, 16, 16});
        // files hold f32, so compare at f32 precision
        CHECK(b.hr.to(DType::f32).content_hash() == a.hr.to(DType::f32).content_hash());
        CHECK(b.lr.to(DType::f32).content_hash() == a.lr.to(DType::f32).content_hash());
    }

    SUBCASE("manifest problems") {
        std::string manifest;
        {
            std::ifstream f(dir / data::kManifestName);
            manifest.assign(std::istreambuf_iterator<char>(f), {});
        }
        auto rewrite = [&](const std::string& text) { std::ofstream(dir / data::kManifestName) << text; };
        std::string m = manifest;
        m.replace(m.find("size=16"), 7, "size=32");
        rewrite(m);
        CHECK_THROWS_AS(data::read_dataset(dir), ShapeError);
        rewrite("format=something-else\n");
        CHECK_THROWS_AS(data::read_dataset(dir), ConfigError);
        rewrite(manifest + "not a key value line\n");
        CHECK_THROWS_AS(data::read_dataset(dir), ConfigError);
    }
    CHECK_THROWS(data::read_dataset(dir / "nope"));
    fs::remove_all(dir);
}
