#include "nefes/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace nefes::ckpt {

namespace {

constexpr char kMagic[8] = {'N', 'E', 'F', 'E', 'S', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
    std::vector<std::uint8_t> buf;

    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void i32(std::int32_t v) { bytes(&v, 4); }
    void i64(std::int64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void tensor(const std::string& name, const Tensor& t) {
        str(name);
        u64(t.rows());
        u64(t.cols());
        bytes(t.data(), t.size() * sizeof(double));
    }
};

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    void bytes(void* out, std::size_t n) {
        if (p + n > end) throw std::runtime_error("checkpoint: truncated");
        std::memcpy(out, p, n);
        p += n;
    }
    std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
    std::int32_t i32() { std::int32_t v; bytes(&v, 4); return v; }
    std::int64_t i64() { std::int64_t v; bytes(&v, 8); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    std::string str() {
        std::string s(u32(), '\0');
        bytes(s.data(), s.size());
        return s;
    }
    std::pair<std::string, Tensor> tensor() {
        std::string name = str();
        const std::uint64_t r = u64(), c = u64();
        Tensor t(r, c);
        bytes(t.data(), t.size() * sizeof(double));
        return {std::move(name), std::move(t)};
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    Writer w;
    w.bytes(kMagic, 8);
    w.u32(kVersion);

    const auto& f = c.fcfg;
    w.i32(f.mlp_width);
    w.i32(f.base_depth);
    w.i32(f.L_x);
    w.i32(f.L_d);
    w.i32(f.N_c);
    w.i32(f.N_f);
    w.u8(f.has_coarse ? 1 : 0);
    w.f64(f.beta_min);
    for (int i = 0; i < 3; ++i) w.f64(f.bounds_min[i]);
    for (int i = 0; i < 3; ++i) w.f64(f.bounds_max[i]);

    const auto& r = c.rcfg;
    w.i32(r.n_coarse);
    w.i32(r.n_fine);
    w.f64(r.near);
    w.f64(r.far);
    for (int i = 0; i < 3; ++i) w.f64(r.background_color[i]);
    w.u8(r.stratified_jitter ? 1 : 0);
    w.i32(r.render_short_side);
    w.i32(r.upsample_short_side);

    const auto& t = c.tcfg;
    w.i32(t.T1);
    w.i32(t.T2);
    w.i32(t.T3);
    w.f64(t.lambda1_stage2);
    w.f64(t.lambda1_stage3);
    w.f64(t.lambda2_stage3);
    w.f64(t.lambda_s);
    w.f64(t.lr_start);
    w.f64(t.lr_end);
    w.i32(t.rays_per_image);
    w.i32(t.batch_images);
    w.i32(t.n_crop);
    w.i32(t.patch_s);
    w.u8(t.use_act ? 1 : 0);
    w.u64(t.seed);

    w.u64(c.extractor_seed);
    w.i32(c.state.epoch);
    w.u64(c.state.rng_state);
    w.f64(c.state.opt.beta1);
    w.f64(c.state.opt.beta2);
    w.f64(c.state.opt.eps);
    w.i64(c.state.opt.steps);

    std::uint32_t n_arrays = static_cast<std::uint32_t>(c.state.params.count() * 3 + 2);
    w.u32(n_arrays);
    for (const auto& e : c.state.params.entries()) w.tensor(e.name, e.value);
    for (const auto& e : c.state.opt.m) w.tensor("adam.m." + e.name, e.value);
    for (const auto& e : c.state.opt.v) w.tensor("adam.v." + e.name, e.value);
    w.tensor("bn.running_mean", c.state.fusion.bn.running_mean);
    w.tensor("bn.running_var", c.state.fusion.bn.running_var);

    const std::uint32_t crc =
        crc32(0, reinterpret_cast<const Bytef*>(w.buf.data()), static_cast<uInt>(w.buf.size()));
    w.u32(crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(w.buf.data()),
              static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 16) throw std::runtime_error("checkpoint: truncated");

    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    const std::uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(buf.data()),
                                    static_cast<uInt>(buf.size() - 4));
    if (crc != stored_crc) throw std::runtime_error("checkpoint: checksum mismatch");

    Reader rd{buf.data(), buf.data() + buf.size() - 4};
    char magic[8];
    rd.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic bytes");
    const std::uint32_t version = rd.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));

    Checkpoint c;
    auto& f = c.fcfg;
    f.mlp_width = rd.i32();
    f.base_depth = rd.i32();
    f.L_x = rd.i32();
    f.L_d = rd.i32();
    f.N_c = rd.i32();
    f.N_f = rd.i32();
    f.has_coarse = rd.u8() != 0;
    f.beta_min = rd.f64();
    for (int i = 0; i < 3; ++i) f.bounds_min[i] = rd.f64();
    for (int i = 0; i < 3; ++i) f.bounds_max[i] = rd.f64();

    auto& r = c.rcfg;
    r.n_coarse = rd.i32();
    r.n_fine = rd.i32();
    r.near = rd.f64();
    r.far = rd.f64();
    for (int i = 0; i < 3; ++i) r.background_color[i] = rd.f64();
    r.stratified_jitter = rd.u8() != 0;
    r.render_short_side = rd.i32();
    r.upsample_short_side = rd.i32();

    auto& t = c.tcfg;
    t.T1 = rd.i32();
    t.T2 = rd.i32();
    t.T3 = rd.i32();
    t.lambda1_stage2 = rd.f64();
    t.lambda1_stage3 = rd.f64();
    t.lambda2_stage3 = rd.f64();
    t.lambda_s = rd.f64();
    t.lr_start = rd.f64();
    t.lr_end = rd.f64();
    t.rays_per_image = rd.i32();
    t.batch_images = rd.i32();
    t.n_crop = rd.i32();
    t.patch_s = rd.i32();
    t.use_act = rd.u8() != 0;
    t.seed = rd.u64();

    c.extractor_seed = rd.u64();
    c.state.epoch = rd.i32();
    c.state.rng_state = rd.u64();
    c.state.opt.beta1 = rd.f64();
    c.state.opt.beta2 = rd.f64();
    c.state.opt.eps = rd.f64();
    c.state.opt.steps = rd.i64();

    const std::uint32_t n_arrays = rd.u32();
    std::vector<std::pair<std::string, Tensor>> adam_m, adam_v;
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        auto [name, tensor] = rd.tensor();
        if (name.rfind("adam.m.", 0) == 0)
            adam_m.emplace_back(name.substr(7), std::move(tensor));
        else if (name.rfind("adam.v.", 0) == 0)
            adam_v.emplace_back(name.substr(7), std::move(tensor));
        else if (name == "bn.running_mean")
            c.state.fusion.bn.running_mean = std::move(tensor);
        else if (name == "bn.running_var")
            c.state.fusion.bn.running_var = std::move(tensor);
        else
            c.state.params.add(name, std::move(tensor));
    }
    for (auto& [name, tensor] : adam_m) c.state.opt.m.push_back({name, std::move(tensor)});
    for (auto& [name, tensor] : adam_v) c.state.opt.v.push_back({name, std::move(tensor)});
    if (c.state.opt.m.size() != c.state.params.count() ||
        c.state.opt.v.size() != c.state.params.count())
        throw std::runtime_error("checkpoint: optimizer state incomplete");
    return c;
}

refine::NeFeSModel to_model(const Checkpoint& c) {
    refine::NeFeSModel m;
    m.params = c.state.params;
    m.fcfg = c.fcfg;
    m.rcfg = c.rcfg;
    m.fusion = c.state.fusion;
    m.extractor = features::make_extractor(c.extractor_seed, c.fcfg.N_f);
    return m;
}

}  // namespace nefes::ckpt
