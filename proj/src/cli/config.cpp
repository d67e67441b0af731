#include "nefes/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nefes::cfg {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config: bad boolean for key '" + key + "': " + v);
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t pos;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config: bad number for key '" + key + "': " + v);
    }
}

int parse_int(const std::string& v, const std::string& key) {
    try {
        std::size_t pos;
        const int i = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return i;
    } catch (...) {
        throw std::invalid_argument("config: bad integer for key '" + key + "': " + v);
    }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t pos;
        const std::uint64_t i = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return i;
    } catch (...) {
        throw std::invalid_argument("config: bad integer for key '" + key + "': " + v);
    }
}

refine::RefineMode parse_mode(const std::string& v) {
    if (v == "direct_pose") return refine::RefineMode::direct_pose;
    if (v == "apr_weights") return refine::RefineMode::apr_weights;
    if (v == "photometric_sparse") return refine::RefineMode::photometric_sparse;
    if (v == "photometric_dense") return refine::RefineMode::photometric_dense;
    throw std::invalid_argument("config: unknown refine mode '" + v + "'");
}

void apply_key(RunConfig& rc, const std::string& section, const std::string& key,
               const std::string& val) {
    const std::string full = section + "." + key;
    if (section == "scene") {
        if (key == "seed") rc.scene.seed = parse_u64(val, full);
        else if (key == "n_train") rc.scene.n_train = parse_int(val, full);
        else if (key == "n_test") rc.scene.n_test = parse_int(val, full);
        else if (key == "jitter_fraction") rc.scene.jitter_fraction = parse_double(val, full);
        else throw std::invalid_argument("config: unknown key '" + full + "'");
    } else if (section == "field") {
        if (key == "mlp_width") rc.field.mlp_width = parse_int(val, full);
        else if (key == "base_depth") rc.field.base_depth = parse_int(val, full);
        else if (key == "L_x") rc.field.L_x = parse_int(val, full);
        else if (key == "L_d") rc.field.L_d = parse_int(val, full);
        else if (key == "N_f") rc.field.N_f = parse_int(val, full);
        else if (key == "has_coarse") rc.field.has_coarse = parse_bool(val, full);
        else if (key == "beta_min") rc.field.beta_min = parse_double(val, full);
        else throw std::invalid_argument("config: unknown key '" + full + "'");
    } else if (section == "renderer") {
        if (key == "n_coarse") rc.renderer.n_coarse = parse_int(val, full);
        else if (key == "n_fine") rc.renderer.n_fine = parse_int(val, full);
        else if (key == "near") rc.renderer.near = parse_double(val, full);
        else if (key == "far") rc.renderer.far = parse_double(val, full);
        else if (key == "stratified_jitter") rc.renderer.stratified_jitter = parse_bool(val, full);
        else if (key == "render_short_side") rc.renderer.render_short_side = parse_int(val, full);
        else if (key == "upsample_short_side")
            rc.renderer.upsample_short_side = parse_int(val, full);
        else throw std::invalid_argument("config: unknown key '" + full + "'");
    } else if (section == "train") {
        if (key == "T1") rc.train.T1 = parse_int(val, full);
        else if (key == "T2") rc.train.T2 = parse_int(val, full);
        else if (key == "T3") rc.train.T3 = parse_int(val, full);
        else if (key == "lambda1_stage2") rc.train.lambda1_stage2 = parse_double(val, full);
        else if (key == "lambda1_stage3") rc.train.lambda1_stage3 = parse_double(val, full);
        else if (key == "lambda2_stage3") rc.train.lambda2_stage3 = parse_double(val, full);
        else if (key == "lambda_s") rc.train.lambda_s = parse_double(val, full);
        else if (key == "lr_start") rc.train.lr_start = parse_double(val, full);
        else if (key == "lr_end") rc.train.lr_end = parse_double(val, full);
        else if (key == "rays_per_image") rc.train.rays_per_image = parse_int(val, full);
        else if (key == "batch_images") rc.train.batch_images = parse_int(val, full);
        else if (key == "n_crop") rc.train.n_crop = parse_int(val, full);
        else if (key == "patch_s") rc.train.patch_s = parse_int(val, full);
        else if (key == "use_act") rc.train.use_act = parse_bool(val, full);
        else if (key == "seed") rc.train.seed = parse_u64(val, full);
        else throw std::invalid_argument("config: unknown key '" + full + "'");
    } else if (section == "refine") {
        if (key == "mode") rc.refine.mode = parse_mode(val);
        else if (key == "m") rc.refine.m = parse_int(val, full);
        else if (key == "lr") rc.refine.lr = parse_double(val, full);
        else if (key == "lr_R") rc.refine.lr_R = parse_double(val, full);
        else if (key == "lr_t") rc.refine.lr_t = parse_double(val, full);
        else if (key == "render_short_side") rc.refine.render_short_side = parse_int(val, full);
        else if (key == "upsample_short_side")
            rc.refine.upsample_short_side = parse_int(val, full);
        else if (key == "n_sparse_rays") rc.refine.n_sparse_rays = parse_int(val, full);
        else if (key == "use_fused") rc.refine.use_fused = parse_bool(val, full);
        else if (key == "seed") rc.refine.seed = parse_u64(val, full);
        else throw std::invalid_argument("config: unknown key '" + full + "'");
    } else {
        throw std::invalid_argument("config: unknown section '" + section + "'");
    }
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::preset(const std::string& name) {
    RunConfig rc;
    if (name == "desk") {
        rc.field = field::FieldConfig::desk();
        rc.renderer = render::RendererConfig::desk();
        rc.train = train::TrainConfig::desk();
        rc.refine = refine::RefineConfig::desk();
    } else if (name == "paper") {
        rc.field = field::FieldConfig::paper();
        rc.renderer = render::RendererConfig::paper();
        rc.train = train::TrainConfig::paper();
        rc.refine = refine::RefineConfig::paper_indoor();
    } else {
        throw std::invalid_argument("config: unknown preset '" + name + "'");
    }
    return rc;
}

void apply_config_text(RunConfig& rc, const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config: malformed section at line " +
                                            std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value at line " +
                                        std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (section.empty())
            throw std::invalid_argument("config: key '" + key + "' outside any section");
        apply_key(rc, section, key, val);
    }
}

void apply_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_config_text(rc, ss.str());
}

}  // namespace nefes::cfg
