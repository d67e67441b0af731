#include "nefes/field.hpp"

#include <cmath>
#include <stdexcept>

#include "nefes/rng.hpp"

namespace nefes::field {

using ad::Tape;
using ad::Var;

void FieldConfig::validate() const {
    if (N_c != 3) throw std::invalid_argument("FieldConfig: N_c must be 3");
    if (N_f < 1) throw std::invalid_argument("FieldConfig: N_f must be >= 1");
    if (mlp_width < 4) throw std::invalid_argument("FieldConfig: width must be >= 4");
    if (L_x < 1 || L_d < 1) throw std::invalid_argument("FieldConfig: encoding levels >= 1");
    for (int i = 0; i < 3; ++i)
        if (!(bounds_min[i] < bounds_max[i]))
            throw std::invalid_argument("FieldConfig: empty bounds");
}

FieldConfig FieldConfig::desk() {
    FieldConfig c;
    c.mlp_width = 32;
    c.N_f = 16;
    c.L_x = 6;
    c.L_d = 4;
    return c;
}

FieldConfig FieldConfig::paper() {
    FieldConfig c;
    c.mlp_width = 128;
    c.base_depth = 8;
    c.N_f = 128;
    c.L_x = 10;
    c.L_d = 4;
    return c;
}

namespace {

Tensor he_init(std::size_t in, std::size_t out_dim, Rng& rng) {
    Tensor w(in, out_dim);
    const double s = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = s * rng.normal();
    return w;
}

void add_linear(ad::ParamStore& ps, const std::string& prefix, std::size_t in,
                std::size_t out_dim, Rng& rng) {
    ps.add(prefix + "_W", he_init(in, out_dim, rng));
    ps.add(prefix + "_b", Tensor(1, out_dim, 0.0));
}

}  // namespace

ad::ParamStore init_field_params(const FieldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ad::ParamStore ps;
    const std::size_t w = cfg.mlp_width;
    const std::size_t half = w / 2;

    // base MLP on PE(x)
    std::size_t in = cfg.pe_x_dim();
    for (int i = 0; i < cfg.base_depth; ++i) {
        add_linear(ps, "base_mlp.W" + std::to_string(i), in, w, rng);
        in = w;
    }

    // static head: density + features from position code, color from a
    // direction-conditioned branch
    add_linear(ps, "static_head.sigma", w, 1, rng);
    add_linear(ps, "static_head.feat", w, cfg.N_f, rng);
    add_linear(ps, "static_head.color_h", w + cfg.pe_d_dim(), half, rng);
    add_linear(ps, "static_head.color", half, 3, rng);

    // transient head (position-only)
    add_linear(ps, "transient_head.h", w, half, rng);
    add_linear(ps, "transient_head.sigma", half, 1, rng);
    add_linear(ps, "transient_head.color", half, 3, rng);
    add_linear(ps, "transient_head.beta", half, 1, rng);

    // start nearly transparent: carving fog out of free space is much harder
    // for the optimizer than growing density where the data wants it
    ps.get("static_head.sigma_b")[0] = -1.5;
    ps.get("transient_head.sigma_b")[0] = -3.0;

    // ACT: 10 -> 32 -> 32 -> 32 -> 12, identity at init
    add_linear(ps, "act_mlp.W0", 10, 32, rng);
    add_linear(ps, "act_mlp.W1", 32, 32, rng);
    add_linear(ps, "act_mlp.W2", 32, 32, rng);
    ps.add("act_mlp.W3_W", Tensor(32, 12, 0.0));
    Tensor act_bias(1, 12, 0.0);
    act_bias[0] = act_bias[4] = act_bias[8] = 1.0;  // K = I, b = 0
    ps.add("act_mlp.W3_b", std::move(act_bias));

    // fusion: three 3x3 convs, one 5x5 conv, batchnorm affine
    const std::size_t cin = 3 + cfg.N_f;
    const std::size_t mid = 32;
    auto conv_init = [&rng](std::size_t cout, std::size_t fan_in) {
        Tensor t(cout, fan_in);
        const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = s * rng.normal();
        return t;
    };
    ps.add("fusion.W0", conv_init(mid, cin * 9));
    ps.add("fusion.b0", Tensor(1, mid, 0.0));
    ps.add("fusion.W1", conv_init(mid, mid * 9));
    ps.add("fusion.b1", Tensor(1, mid, 0.0));
    ps.add("fusion.W2", conv_init(mid, mid * 9));
    ps.add("fusion.b2", Tensor(1, mid, 0.0));
    ps.add("fusion.W3", conv_init(cfg.N_f, mid * 25));
    ps.add("fusion.b3", Tensor(1, cfg.N_f, 0.0));
    ps.add("fusion.bn_gamma", Tensor(1, cfg.N_f, 1.0));
    ps.add("fusion.bn_beta", Tensor(1, cfg.N_f, 0.0));

    if (cfg.has_coarse) {
        add_linear(ps, "coarse_mlp.W0", cfg.pe_x_dim(), w, rng);
        add_linear(ps, "coarse_mlp.W1", w, w, rng);
        add_linear(ps, "coarse_mlp.out", w, 4, rng);
    }
    return ps;
}

Var Binding::operator()(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::invalid_argument("Binding: unknown param " + name);
    return it->second;
}

Binding bind(ad::Tape& t, const ad::ParamStore& params, bool requires_grad) {
    Binding b;
    b.tape = &t;
    for (const auto& e : params.entries())
        b.vars.emplace(e.name, t.leaf(e.value, requires_grad, "param"));
    return b;
}

Binding bind_groups(ad::Tape& t, const ad::ParamStore& params,
                    const std::vector<std::string>& grad_groups) {
    Binding b;
    b.tape = &t;
    for (const auto& e : params.entries()) {
        bool rgrad = false;
        for (const auto& g : grad_groups)
            if (e.name.rfind(g + ".", 0) == 0) rgrad = true;
        b.vars.emplace(e.name, t.leaf(e.value, rgrad, "param"));
    }
    return b;
}

namespace {

Var linear_relu(Tape& t, const Binding& b, const std::string& prefix, Var x) {
    return ad::relu(t, ad::affine(t, x, b(prefix + "_W"), b(prefix + "_b")));
}

Var linear(Tape& t, const Binding& b, const std::string& prefix, Var x) {
    return ad::affine(t, x, b(prefix + "_W"), b(prefix + "_b"));
}

// normalize positions into the configured box: (x - center) / half_extent
Var normalize_pos(Tape& t, const FieldConfig& cfg, Var x) {
    Tensor neg_center(1, 3), inv_half(1, 3);
    bool trivial = true;
    for (int i = 0; i < 3; ++i) {
        const double c = 0.5 * (cfg.bounds_min[i] + cfg.bounds_max[i]);
        const double h = 0.5 * (cfg.bounds_max[i] - cfg.bounds_min[i]);
        neg_center[i] = -c;
        inv_half[i] = 1.0 / h;
        if (c != 0.0 || h != 1.0) trivial = false;
    }
    if (trivial) return x;
    Var shifted = ad::add_rowvec(t, x, t.leaf(neg_center, false, "bounds_center"));
    return ad::mul_rowvec(t, shifted, t.leaf(inv_half, false, "bounds_scale"));
}

}  // namespace

FieldOutputs field_forward(ad::Tape& t, const Binding& b, const FieldConfig& cfg,
                           Var x, Var d) {
    Var xn = normalize_pos(t, cfg, x);
    Var h = ad::positional_encode(t, xn, cfg.L_x);
    for (int i = 0; i < cfg.base_depth; ++i)
        h = linear_relu(t, b, "base_mlp.W" + std::to_string(i), h);

    FieldOutputs o;
    o.sigma_s = ad::softplus(t, linear(t, b, "static_head.sigma", h));
    o.feat = linear(t, b, "static_head.feat", h);

    Var dpe = ad::positional_encode(t, d, cfg.L_d);
    Var ch = ad::relu(t, linear(t, b, "static_head.color_h", ad::concat_cols(t, h, dpe)));
    o.rgb_s = ad::sigmoid(t, linear(t, b, "static_head.color", ch));

    Var th = ad::relu(t, linear(t, b, "transient_head.h", h));
    o.sigma_tau = ad::softplus(t, linear(t, b, "transient_head.sigma", th));
    o.rgb_tau = ad::sigmoid(t, linear(t, b, "transient_head.color", th));
    o.beta = ad::add_scalar(t, ad::softplus(t, linear(t, b, "transient_head.beta", th)),
                            cfg.beta_min);
    return o;
}

CoarseOutputs coarse_forward(ad::Tape& t, const Binding& b, const FieldConfig& cfg,
                             Var x) {
    if (!cfg.has_coarse) throw std::logic_error("coarse_forward: has_coarse is off");
    Var xn = normalize_pos(t, cfg, x);
    Var h = ad::positional_encode(t, xn, cfg.L_x);
    h = linear_relu(t, b, "coarse_mlp.W0", h);
    h = linear_relu(t, b, "coarse_mlp.W1", h);
    Var out = linear(t, b, "coarse_mlp.out", h);
    CoarseOutputs c;
    c.sigma = ad::softplus(t, ad::slice_cols(t, out, 0, 1));
    c.rgb = ad::sigmoid(t, ad::slice_cols(t, out, 1, 4));
    return c;
}

FieldSample evaluate(const std::array<double, 3>& x, const std::array<double, 3>& d,
                     const ad::ParamStore& params, const FieldConfig& cfg) {
    Tape t;
    Tensor xt(1, 3), dt(1, 3);
    for (int i = 0; i < 3; ++i) {
        xt[i] = x[i];
        dt[i] = d[i];
    }
    Binding b = bind(t, params, false);
    FieldOutputs o = field_forward(t, b, cfg, t.leaf(std::move(xt), false, "x"),
                                   t.leaf(std::move(dt), false, "d"));
    FieldSample s;
    s.sigma_s = t.value(o.sigma_s)[0];
    for (int i = 0; i < 3; ++i) s.rgb_s[i] = t.value(o.rgb_s)[i];
    const Tensor& f = t.value(o.feat);
    s.feat.assign(f.data(), f.data() + f.size());
    s.sigma_tau = t.value(o.sigma_tau)[0];
    for (int i = 0; i < 3; ++i) s.rgb_tau[i] = t.value(o.rgb_tau)[i];
    s.beta = t.value(o.beta)[0];
    return s;
}

Var act_forward(ad::Tape& t, const Binding& b, const Tensor& hist) {
    if (hist.rows() != 1 || hist.cols() != 10)
        throw std::invalid_argument("act_forward: histogram must be 1x10");
    Var h = t.leaf(hist, false, "histogram");
    h = linear_relu(t, b, "act_mlp.W0", h);
    h = linear_relu(t, b, "act_mlp.W1", h);
    h = linear_relu(t, b, "act_mlp.W2", h);
    return linear(t, b, "act_mlp.W3", h);  // [1,12] = K row-major | b
}

ACTParams act_params(const Tensor& hist, const ad::ParamStore& params) {
    Tape t;
    Binding b = bind(t, params, false);
    const Tensor& out = t.value(act_forward(t, b, hist));
    ACTParams a;
    for (int i = 0; i < 9; ++i) a.K[i] = out[i];
    for (int i = 0; i < 3; ++i) a.b[i] = out[9 + i];
    return a;
}

Tensor luminance_histogram(const ImageBuffer& img) {
    Tensor h(1, 10, 0.0);
    const std::size_t n = static_cast<std::size_t>(img.h) * img.w;
    for (std::size_t p = 0; p < n; ++p) {
        const double y = 0.299 * img.rgb(p, 0) + 0.587 * img.rgb(p, 1) + 0.114 * img.rgb(p, 2);
        // epsilon absorbs roundoff in the channel weights so decimal bin
        // edges (e.g. Y = 0.5 exactly) land in the intended bin
        int bin = static_cast<int>(y * 10.0 + 1e-9);
        if (bin > 9) bin = 9;
        if (bin < 0) bin = 0;
        h[bin] += 1.0;
    }
    for (int i = 0; i < 10; ++i) h[i] /= static_cast<double>(n);
    return h;
}

}  // namespace nefes::field
