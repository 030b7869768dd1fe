#include "hsifuse/model.hpp"

#include <sstream>

namespace hsifuse {

asse::AsseConfig FusionConfig::asse() const {
    asse::AsseConfig c;
    c.bands = bands;
    c.msi_bands = msi_bands;
    c.ratio = ratio;
    c.hidden = hidden;
    c.directions = directions;
    c.daci_levels = daci_levels;
    c.predictor_width = predictor_width;
    c.predictor_hidden = predictor_hidden;
    c.use_dae = use_dae;
    c.use_daci = use_daci;
    c.use_fusion = use_fusion;
    return c;
}

hpsc::GsrtConfig FusionConfig::gsrt() const {
    hpsc::GsrtConfig c;
    c.bands = bands;
    c.embed = embed;
    c.blocks = blocks;
    c.window = window;
    return c;
}

void FusionConfig::validate() const {
    asse().validate();
    if (use_gsrt) gsrt().validate();
    if (predictor_width < 1 || predictor_hidden < 1) throw ConfigError("direction predictor widths must be positive");
}

namespace {

const char* const kIntKeys[] = {"bands", "msi_bands", "ratio", "hidden", "directions", "daci_levels",
                                "predictor_width", "predictor_hidden", "embed", "blocks", "window"};
const char* const kBoolKeys[] = {"use_dae", "use_daci", "use_fusion", "use_gsrt"};

int64_t* int_field(FusionConfig& c, const std::string& k) {
    if (k == "bands") return &c.bands;
    if (k == "msi_bands") return &c.msi_bands;
    if (k == "ratio") return &c.ratio;
    if (k == "hidden") return &c.hidden;
    if (k == "directions") return &c.directions;
    if (k == "daci_levels") return &c.daci_levels;
    if (k == "predictor_width") return &c.predictor_width;
    if (k == "predictor_hidden") return &c.predictor_hidden;
    if (k == "embed") return &c.embed;
    if (k == "blocks") return &c.blocks;
    if (k == "window") return &c.window;
    return nullptr;
}

bool* bool_field(FusionConfig& c, const std::string& k) {
    if (k == "use_dae") return &c.use_dae;
    if (k == "use_daci") return &c.use_daci;
    if (k == "use_fusion") return &c.use_fusion;
    if (k == "use_gsrt") return &c.use_gsrt;
    return nullptr;
}

}  // namespace

std::string FusionConfig::canonical() const {
    FusionConfig c = *this;
    std::ostringstream os;
    for (const char* k : kIntKeys) os << k << '=' << *int_field(c, k) << '\n';
    for (const char* k : kBoolKeys) os << k << '=' << (*bool_field(c, k) ? "true" : "false") << '\n';
    return os.str();
}

uint64_t FusionConfig::hash() const {
    const std::string s = canonical();
    return fnv1a64(s.data(), s.size());
}

bool FusionConfig::set(const std::string& key, const std::string& value) {
    if (int64_t* f = int_field(*this, key)) {
        try {
            size_t used = 0;
            const long long v = std::stoll(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            *f = v;
        } catch (const std::exception&) {
            throw ConfigError("'" + key + "' expects an integer, got '" + value + "'");
        }
        return true;
    }
    if (bool* f = bool_field(*this, key)) {
        if (value == "true" || value == "1") *f = true;
        else if (value == "false" || value == "0") *f = false;
        else throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
        return true;
    }
    return false;
}

FusionModel::FusionModel(const FusionConfig& cfg, uint64_t seed, InitMode mode) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    nn::ParamFactory pf(store_, rng);
    asse::AsseConfig a = cfg.asse();
    a.zero_tail = mode == InitMode::training;
    asse_ = asse::Asse(pf, "asse", a);
    if (cfg.use_gsrt) {
        hpsc::GsrtConfig g = cfg.gsrt();
        g.zero_tail = mode == InitMode::training;
        gsrt_ = hpsc::Gsrt(pf, "gsrt", g);
    }
}

FusionOutput FusionModel::forward(const Var& lr_hsi, const Var& msi) const {
    FusionOutput out;
    out.z_init = asse_.forward(lr_hsi, msi).z_init;
    out.z_hat = cfg_.use_gsrt ? gsrt_.forward(out.z_init, lr_hsi) : out.z_init;
    return out;
}

}  // namespace hsifuse
