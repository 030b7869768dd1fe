#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "hsifuse/dataio.hpp"
#include "hsifuse/error.hpp"
#include "hsifuse/gradsuite.hpp"
#include "hsifuse/metrics.hpp"
#include "hsifuse/trainer.hpp"

namespace hsifuse::cli {

namespace fs = std::filesystem;

namespace {

std::string hex64(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void apply_sets(train::TrainConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
}

/// Defaults, then the model sizes implied by the data, then the config file,
/// then --set overrides.
train::TrainConfig build_config(int64_t bands, int64_t msi_bands, int64_t ratio, const std::string& config_path,
                                const std::vector<std::string>& sets) {
    train::TrainConfig cfg;
    cfg.model.bands = bands;
    cfg.model.msi_bands = msi_bands;
    cfg.model.ratio = ratio;
    if (!config_path.empty()) cfg = train::load_config(config_path, cfg);
    apply_sets(cfg, sets);
    return cfg;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
    data::DatasetSpec spec;
    std::string out;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    a.spec.validate();
    const data::Dataset ds = data::generate_dataset(a.spec);
    data::write_dataset(a.out, ds);
    out << "wrote " << ds.scenes.size() << " scenes (" << 3 * ds.scenes.size() << " cubes) and "
        << data::kManifestName << " to " << a.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data, config, out, log, resume;
    std::vector<std::string> sets;
    int64_t until = -1;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const data::Dataset ds = data::read_dataset(a.data);
    const train::TrainConfig cfg = build_config(ds.spec.bands, ds.spec.msi_bands, ds.spec.ratio, a.config, a.sets);
    train::Trainer tr(cfg, ds);
    if (!a.resume.empty()) tr.load(a.resume);

    const std::string log_path = a.log.empty() ? a.out + ".log" : a.log;
    std::ofstream log(log_path, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw Error("cannot open log " + log_path);

    struct Tee : std::streambuf {
        std::streambuf* a;
        std::streambuf* b;
        int overflow(int c) override {
            if (traits_type::eq_int_type(c, traits_type::eof())) return traits_type::not_eof(c);
            if (a) a->sputc(static_cast<char>(c));
            if (b) b->sputc(static_cast<char>(c));
            return c;
        }
        int sync() override {
            if (a) a->pubsync();
            if (b) b->pubsync();
            return 0;
        }
    } tee;
    tee.a = log.rdbuf();
    tee.b = a.quiet ? nullptr : out.rdbuf();
    std::ostream both(&tee);

    if (!a.quiet)
        out << "training " << tr.model().params().total_numel() << " parameters on " << tr.train_scenes().size()
            << " scenes, " << tr.eval_scenes().size() << " held out, from step " << tr.steps_done() << "\n";
    const train::RunResult r = tr.run(a.until, &both);
    tr.save(a.out);
    if (r.reason == train::StopReason::non_finite) {
        err << "error: training stopped on a non-finite value (" << r.message << "); saved the last good state (step " << tr.steps_done() << ") to " << a.out
            << "\n";
        return kRuntimeError;
    }
    out << "checkpoint " << a.out << " step " << tr.steps_done() << " hash " << hex64(train::file_hash(a.out)) << "\n";
    return kOk;
}

// ---------------------------------------------------------------- fuse

struct FuseArgs {
    std::string ckpt, lr, msi, out, out_init, config;
    std::vector<std::string> sets;
};

std::string default_init_path(const std::string& out) {
    fs::path p(out);
    const std::string ext = p.has_extension() ? p.extension().string() : ".hsc";
    return (p.parent_path() / (p.stem().string() + "_init" + ext)).string();
}

int cmd_fuse(const FuseArgs& a, std::ostream& out) {
    const Tensor lr = data::read_cube(a.lr), msi = data::read_cube(a.msi);
    train::CheckpointInfo info;
    const auto model = train::model_from_checkpoint(a.ckpt, &info);
    if (!a.config.empty() || !a.sets.empty()) {
        const int64_t ratio = lr.dim(1) > 0 ? msi.dim(1) / lr.dim(1) : 0;
        const train::TrainConfig want = build_config(lr.dim(0), msi.dim(0), ratio, a.config, a.sets);
        if (want.model.hash() != info.config_hash)
            throw ConfigError("architecture flags (hash " + hex64(want.model.hash()) +
                              ") do not match the checkpoint (hash " + hex64(info.config_hash) + ")");
    }
    const train::FuseResult f = train::fuse(*model, lr, msi);
    const std::string init_path = a.out_init.empty() ? default_init_path(a.out) : a.out_init;
    data::write_cube(a.out, f.z_hat);
    data::write_cube(init_path, f.z_init);
    out << "fused " << f.z_hat.dim(0) << "x" << f.z_hat.dim(1) << "x" << f.z_hat.dim(2) << ": " << a.out
        << " (stage II), " << init_path << " (stage I)\n";
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string pred, ref, lr, msi;
    double ratio = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    if (a.lr.empty() != a.msi.empty()) throw ConfigError("--lr-hsi and --msi must be given together");
    const Tensor pred = data::read_cube(a.pred), ref = data::read_cube(a.ref);
    Tensor lr, msi;
    if (!a.lr.empty()) {
        lr = data::read_cube(a.lr);
        msi = data::read_cube(a.msi);
    }
    double ratio = a.ratio;
    if (ratio <= 0) ratio = lr.defined() ? static_cast<double>(ref.dim(1)) / static_cast<double>(lr.dim(1)) : 4.0;
    const auto rep =
        metrics::evaluate(pred, ref, ratio, lr.defined() ? &lr : nullptr, msi.defined() ? &msi : nullptr);
    out << rep.to_text();
    return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
    std::string scope = "all";
    std::string case_name;
    double tol = -1;
    uint64_t seed = 0;
};

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
    std::vector<std::string> scopes;
    if (a.scope == "all") scopes = gradsuite::scopes();
    else scopes = {a.scope};
    bool ok = true;
    for (const auto& scope : scopes) {
        const double tol = a.tol > 0 ? a.tol : (scope == "primitives" ? 1e-4 : 1e-3);
        std::vector<gradsuite::CaseResult> rs;
        if (a.case_name.empty()) rs = gradsuite::run(scope, tol, a.seed);
        else rs.push_back(gradsuite::run_case(scope, a.case_name, tol, a.seed));
        const gradsuite::CaseResult* worst = nullptr;
        for (const auto& r : rs) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "%-10s %-28s checked=%-5lld skipped=%-3lld max_rel_err=%.3e %s (%.2fs)\n",
                          scope.c_str(), r.name.c_str(), static_cast<long long>(r.report.checked),
                          static_cast<long long>(r.report.skipped_nonsmooth), r.report.max_rel_err,
                          r.report.pass ? "PASS" : "FAIL", r.seconds);
            out << buf;
            for (const auto& f : r.report.failures) {
                std::snprintf(buf, sizeof buf, "    %s[%lld] analytic=%.9e numeric=%.9e rel_err=%.3e\n", f.name.c_str(),
                              static_cast<long long>(f.index), f.analytic, f.numeric, f.rel_err);
                out << buf;
            }
            ok = ok && r.report.pass;
            if (!worst || r.report.max_rel_err > worst->report.max_rel_err) worst = &r;
        }
        if (worst) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "worst %s: %.3e (%s, %s[%lld]) tol %.0e\n", scope.c_str(),
                          worst->report.max_rel_err, worst->name.c_str(), worst->report.worst_name.c_str(),
                          static_cast<long long>(worst->report.worst_index), tol);
            out << buf;
        }
    }
    out << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return ok ? kOk : kRuntimeError;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
    std::string data, matrix = "table", config, out;
    std::vector<std::string> sets;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
    const data::Dataset ds = data::read_dataset(a.data);
    const train::TrainConfig cfg = build_config(ds.spec.bands, ds.spec.msi_bands, ds.spec.ratio, a.config, a.sets);
    std::vector<train::AblationRow> rows;
    if (a.matrix == "table") {
        rows = train::ablation_rows();
    } else {
        // the full model and each single-module ablation
        rows = {{true, true, true, true},
                {false, true, true, true},
                {true, false, true, true},
                {true, true, false, true},
                {true, true, true, false}};
    }
    const auto res = train::run_ablation(cfg, ds, rows, [&](const train::AblationResult& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-22s psnr_db=%.4f sam_deg=%.4f (%.1fs)\n", r.row.label().c_str(),
                      r.mean.psnr_db, r.mean.sam_deg, r.seconds);
        out << buf << std::flush;
    });
    const std::string table = train::ablation_table(res);
    out << table;
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        f << table;
        if (!f) throw Error("cannot write " + a.out);
    }
    return kOk;
}

// ---------------------------------------------------------------- anisotropy

struct AnisoArgs {
    std::string in, out;
};

int cmd_anisotropy(const AnisoArgs& a, std::ostream& out) {
    const Tensor m = metrics::anisotropy_map(data::read_cube(a.in));
    double mean = 0, mx = 0;
    for (int64_t i = 0; i < m.numel(); ++i) {
        mean += m.flat(i);
        mx = std::max(mx, m.flat(i));
    }
    mean /= static_cast<double>(m.numel());
    if (!a.out.empty()) data::write_cube(a.out, m);
    char buf[96];
    std::snprintf(buf, sizeof buf, "anisotropy_mean=%.6f\nanisotropy_max=%.6f\n", mean, mx);
    out << buf;
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hyperspectral / multispectral fusion toolkit"};
    app.name("hsifuse");
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate synthetic HR/LR/MSI scene triples");
    g->add_option("--seed", gen.spec.seed, "Dataset seed")->default_val(0);
    g->add_option("--count", gen.spec.count, "Number of scenes")->default_val(4);
    g->add_option("--bands", gen.spec.bands, "Hyperspectral bands")->default_val(31);
    g->add_option("--msi-bands", gen.spec.msi_bands, "Multispectral bands")->default_val(3);
    g->add_option("--size", gen.spec.size, "Scene height and width")->default_val(64);
    g->add_option("--ratio", gen.spec.ratio, "Spatial downsampling ratio")->default_val(4);
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tra;
    auto* t = app.add_subcommand("train", "Train the two-stage model");
    t->add_option("--data", tra.data, "Dataset directory from gen")->required();
    t->add_option("--config", tra.config, "Flat key=value config file");
    t->add_option("--set", tra.sets, "key=value override (repeatable)");
    t->add_option("--out", tra.out, "Checkpoint path")->required();
    t->add_option("--log", tra.log, "Metric log path (default: <out>.log)");
    t->add_option("--resume", tra.resume, "Continue from a checkpoint");
    t->add_option("--until", tra.until, "Stop after this step; the schedule still spans the configured steps");
    t->add_flag("--quiet", tra.quiet, "Only write the log file");

    FuseArgs fu;
    auto* f = app.add_subcommand("fuse", "Fuse an LR-HSI / MSI pair with a trained checkpoint");
    f->add_option("--ckpt", fu.ckpt, "Checkpoint")->required();
    f->add_option("--lr-hsi", fu.lr, "Low-resolution hyperspectral cube")->required();
    f->add_option("--msi", fu.msi, "High-resolution multispectral cube")->required();
    f->add_option("--out", fu.out, "Stage II output cube")->required();
    f->add_option("--out-init", fu.out_init, "Stage I output cube (default: <out>_init)");
    f->add_option("--config", fu.config, "Expected architecture config");
    f->add_option("--set", fu.sets, "Expected architecture key=value (repeatable)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Print quality metrics of a prediction");
    e->add_option("--pred", ev.pred, "Predicted cube")->required();
    e->add_option("--ref", ev.ref, "Reference cube")->required();
    e->add_option("--lr-hsi", ev.lr, "LR-HSI observation (adds qnr)");
    e->add_option("--msi", ev.msi, "MSI observation (adds qnr)");
    e->add_option("--ratio", ev.ratio, "Scale ratio for ergas (default: inferred, else 4)");

    GradArgs ga;
    std::vector<std::string> scope_names = gradsuite::scopes();
    scope_names.push_back("all");
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gc->add_option("--scope", ga.scope, "Scope")->check(CLI::IsMember(scope_names))->default_val("all");
    gc->add_option("--case", ga.case_name, "Run one named case of the scope");
    gc->add_option("--tol", ga.tol, "Relative tolerance (default 1e-4 primitives, 1e-3 composites)");
    gc->add_option("--seed", ga.seed, "Input seed")->default_val(0);

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "Train the module ablation matrix and tabulate held-out metrics");
    a->add_option("--data", ab.data, "Dataset directory from gen")->required();
    a->add_option("--matrix", ab.matrix, "table: the six-row module table; singles: full + single ablations")
        ->check(CLI::IsMember({"table", "singles"}))
        ->default_val("table");
    a->add_option("--config", ab.config, "Flat key=value config file");
    a->add_option("--set", ab.sets, "key=value override (repeatable)");
    a->add_option("--out", ab.out, "Also write the table here");

    AnisoArgs an;
    auto* n = app.add_subcommand("anisotropy", "Structure-tensor anisotropy map of a cube");
    n->add_option("--in", an.in, "Input cube")->required();
    n->add_option("--out", an.out, "Write the [1,H,W] map as a cube");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        if (*g) return cmd_gen(gen, out);
        if (*t) return cmd_train(tra, out, err);
        if (*f) return cmd_fuse(fu, out);
        if (*e) return cmd_eval(ev, out);
        if (*gc) return cmd_gradcheck(ga, out);
        if (*a) return cmd_ablate(ab, out);
        if (*n) return cmd_anisotropy(an, out);
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << "\n";
        return kUsageError;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace hsifuse::cli
