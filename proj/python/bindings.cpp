#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "hsifuse/dataio.hpp"
#include "hsifuse/error.hpp"
#include "hsifuse/gradsuite.hpp"
#include "hsifuse/metrics.hpp"
#include "hsifuse/trainer.hpp"

namespace py = pybind11;
using namespace hsifuse;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from(shape, std::span<const double>(a.data(), static_cast<size_t>(a.size())), DType::f64);
}

Tensor to_cube(const F64Array& a, const char* what) {
    if (a.ndim() != 3) throw ShapeError(std::string(what) + " must be a [C,H,W] array");
    return to_tensor(a);
}

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    double* dst = out.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i) dst[i] = t.flat(i);
    return out;
}

py::dict report_dict(const metrics::MetricReport& r) {
    py::dict d;
    d["psnr_db"] = r.psnr_db;
    d["sam_deg"] = r.sam_deg;
    d["ssim"] = r.ssim;
    d["uiqi"] = r.uiqi;
    d["ergas"] = r.ergas;
    if (r.qnr) d["qnr"] = *r.qnr;
    return d;
}

class PyModel {
public:
    explicit PyModel(const std::string& ckpt) : model_(train::model_from_checkpoint(ckpt, &info_)) {}

    py::tuple fuse(const F64Array& lr, const F64Array& msi) const {
        Tensor x = to_cube(lr, "lr_hsi"), y = to_cube(msi, "msi");
        if (info_.dtype == DType::f32) {
            x = x.to(DType::f32);
            y = y.to(DType::f32);
        }
        const auto r = train::fuse(*model_, x, y);
        return py::make_tuple(to_numpy(r.z_hat), to_numpy(r.z_init));
    }

    int64_t step() const { return info_.step; }
    int64_t parameters() const { return model_->params().total_numel(); }
    std::string arch() const { return info_.arch.canonical(); }

private:
    train::CheckpointInfo info_;
    std::unique_ptr<FusionModel> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Hyperspectral / multispectral fusion: metrics, synthetic data, training and inference.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
    py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

    m.def("psnr", [](const F64Array& a, const F64Array& b) { return metrics::psnr(to_cube(a, "a"), to_cube(b, "b")); },
          py::arg("pred"), py::arg("ref"));
    m.def("sam", [](const F64Array& a, const F64Array& b) { return metrics::sam(to_cube(a, "a"), to_cube(b, "b")); },
          py::arg("pred"), py::arg("ref"), "Mean spectral angle in degrees.");
    m.def("ssim", [](const F64Array& a, const F64Array& b) { return metrics::ssim(to_cube(a, "a"), to_cube(b, "b")); },
          py::arg("pred"), py::arg("ref"));
    m.def("uiqi", [](const F64Array& a, const F64Array& b) { return metrics::uiqi(to_cube(a, "a"), to_cube(b, "b")); },
          py::arg("pred"), py::arg("ref"));
    m.def(
        "ergas",
        [](const F64Array& ref, const F64Array& est, double ratio) {
            return metrics::ergas(to_cube(ref, "ref"), to_cube(est, "est"), ratio);
        },
        py::arg("ref"), py::arg("est"), py::arg("ratio"));
    m.def(
        "qnr",
        [](const F64Array& fused, const F64Array& lr, const F64Array& msi, int64_t ratio) {
            const auto q = metrics::qnr(to_cube(fused, "fused"), to_cube(lr, "lr_hsi"), to_cube(msi, "msi"), ratio);
            return py::make_tuple(q.qnr, q.d_lambda, q.d_s);
        },
        py::arg("fused"), py::arg("lr_hsi"), py::arg("msi"), py::arg("ratio"),
        "Returns (qnr, d_lambda, d_s).");
    m.def(
        "evaluate",
        [](const F64Array& pred, const F64Array& ref, double ratio, std::optional<F64Array> lr,
           std::optional<F64Array> msi) {
            if (lr.has_value() != msi.has_value()) throw ConfigError("lr_hsi and msi must be given together");
            if (!lr) return report_dict(metrics::evaluate(to_cube(pred, "pred"), to_cube(ref, "ref"), ratio));
            const Tensor x = to_cube(*lr, "lr_hsi"), y = to_cube(*msi, "msi");
            return report_dict(metrics::evaluate(to_cube(pred, "pred"), to_cube(ref, "ref"), ratio, &x, &y));
        },
        py::arg("pred"), py::arg("ref"), py::arg("ratio") = 4.0, py::arg("lr_hsi") = py::none(),
        py::arg("msi") = py::none());
    m.def(
        "anisotropy_map", [](const F64Array& img) { return to_numpy(metrics::anisotropy_map(to_cube(img, "img"))); },
        py::arg("img"));

    m.def(
        "gen_scene",
        [](uint64_t seed, int64_t bands, int64_t size) {
            data::SceneSpec s;
            s.seed = seed;
            s.bands = bands;
            s.height = s.width = size;
            return to_numpy(data::gen_scene(s));
        },
        py::arg("seed") = 0, py::arg("bands") = 31, py::arg("size") = 64);
    m.def(
        "degrade_spatial",
        [](const F64Array& z, int64_t ratio) { return to_numpy(data::degrade_spatial(to_cube(z, "z"), ratio)); },
        py::arg("z"), py::arg("ratio") = 4);
    m.def(
        "degrade_spectral",
        [](const F64Array& z, int64_t groups) { return to_numpy(data::degrade_spectral(to_cube(z, "z"), groups)); },
        py::arg("z"), py::arg("groups") = 3);
    m.def(
        "read_cube", [](const std::string& path) { return to_numpy(data::read_cube(path)); }, py::arg("path"));
    m.def(
        "write_cube", [](const std::string& path, const F64Array& cube) { data::write_cube(path, to_cube(cube, "cube")); },
        py::arg("path"), py::arg("cube"));
    m.def(
        "generate_dataset",
        [](const std::string& out, uint64_t seed, int64_t count, int64_t bands, int64_t msi_bands, int64_t size,
           int64_t ratio) {
            data::DatasetSpec s;
            s.seed = seed;
            s.count = count;
            s.bands = bands;
            s.msi_bands = msi_bands;
            s.size = size;
            s.ratio = ratio;
            data::write_dataset(out, data::generate_dataset(s));
        },
        py::arg("out"), py::arg("seed") = 0, py::arg("count") = 4, py::arg("bands") = 31, py::arg("msi_bands") = 3,
        py::arg("size") = 64, py::arg("ratio") = 4);

    m.def(
        "train",
        [](const std::string& data_dir, const std::string& out, const std::map<std::string, std::string>& settings) {
            const data::Dataset ds = data::read_dataset(data_dir);
            train::TrainConfig cfg;
            cfg.model.bands = ds.spec.bands;
            cfg.model.msi_bands = ds.spec.msi_bands;
            cfg.model.ratio = ds.spec.ratio;
            for (const auto& [k, v] : settings) cfg.set(k, v);
            train::RunResult r;
            {
                py::gil_scoped_release release;
                train::Trainer tr(cfg, ds);
                r = tr.run();
                tr.save(out);
            }
            if (r.reason == train::StopReason::non_finite) throw NonFiniteError(r.message);
            py::list log;
            for (const auto& e : r.log) {
                py::dict d;
                d["step"] = e.step;
                d["loss"] = e.loss;
                d["psnr_db"] = e.psnr_db;
                d["sam_deg"] = e.sam_deg;
                log.append(d);
            }
            return log;
        },
        py::arg("data_dir"), py::arg("out"), py::arg("settings") = std::map<std::string, std::string>{},
        "Trains on a generated dataset directory and writes a checkpoint; returns the metric log.");

    m.def(
        "gradcheck",
        [](const std::string& scope, double tol, uint64_t seed) {
            py::list out;
            for (const auto& r : gradsuite::run(scope, tol, seed)) {
                py::dict d;
                d["scope"] = r.scope;
                d["name"] = r.name;
                d["max_rel_err"] = r.report.max_rel_err;
                d["checked"] = r.report.checked;
                d["passed"] = r.report.pass;
                out.append(d);
            }
            return out;
        },
        py::arg("scope") = "primitives", py::arg("tol") = 1e-4, py::arg("seed") = 0);

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("checkpoint"))
        .def("fuse", &PyModel::fuse, py::arg("lr_hsi"), py::arg("msi"), "Returns (stage II output, stage I output).")
        .def_property_readonly("step", &PyModel::step)
        .def_property_readonly("parameters", &PyModel::parameters)
        .def_property_readonly("arch", &PyModel::arch);
}
