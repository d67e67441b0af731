#include "nefes/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nefes::render {

using ad::Tape;
using ad::Var;

void RendererConfig::validate() const {
    if (n_coarse < 1 || n_fine < 1) throw std::invalid_argument("renderer: sample counts >= 1");
    if (!(near < far)) throw std::invalid_argument("renderer: near must be < far");
    if (render_short_side < 1 || upsample_short_side < render_short_side)
        throw std::invalid_argument("renderer: bad resolution config");
}

RendererConfig RendererConfig::desk() { return RendererConfig{}; }

RendererConfig RendererConfig::paper() {
    RendererConfig c;
    c.n_coarse = 64;
    c.n_fine = 64;
    c.render_short_side = 60;
    c.upsample_short_side = 240;
    return c;
}

SampleSet stratified_samples(const lie::Ray& ray, int n, bool jitter, Rng& rng) {
    if (n < 1) throw std::invalid_argument("stratified_samples: n >= 1");
    SampleSet s;
    s.near = ray.near;
    s.far = ray.far;
    s.t.resize(n);
    const double w = (ray.far - ray.near) / n;
    for (int i = 0; i < n; ++i) {
        const double u = jitter ? rng.uniform() : 0.5;
        s.t[i] = ray.near + (i + u) * w;
    }
    s.delta.resize(n);
    for (int i = 0; i + 1 < n; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
    s.delta[n - 1] = ray.far - s.t[n - 1];
    return s;
}

SampleSet hierarchical_resample(const SampleSet& coarse, const std::vector<double>& weights,
                                int n_fine, Rng& rng) {
    const int n = static_cast<int>(coarse.t.size());
    if (static_cast<int>(weights.size()) != n)
        throw std::invalid_argument("hierarchical_resample: weight count mismatch");
    // Piecewise-constant PDF over the n equal-width stratified bins.
    std::vector<double> cdf(n + 1, 0.0);
    for (int i = 0; i < n; ++i) {
        const double wi = std::max(weights[i], 0.0) + 1e-5;
        cdf[i + 1] = cdf[i] + wi;
    }
    const double total = cdf[n];
    for (double& c : cdf) c /= total;

    const double bin_w = (coarse.far - coarse.near) / n;
    SampleSet out;
    out.near = coarse.near;
    out.far = coarse.far;
    out.t = coarse.t;
    out.t.reserve(n + n_fine);
    for (int k = 0; k < n_fine; ++k) {
        const double u = rng.uniform();
        // find bin with cdf[i] <= u < cdf[i+1]
        int lo = 0, hi = n;
        while (lo + 1 < hi) {
            const int mid = (lo + hi) / 2;
            if (cdf[mid] <= u)
                lo = mid;
            else
                hi = mid;
        }
        const double frac = (u - cdf[lo]) / std::max(cdf[lo + 1] - cdf[lo], 1e-300);
        out.t.push_back(coarse.near + (lo + frac) * bin_w);
    }
    std::sort(out.t.begin(), out.t.end());
    const int m = static_cast<int>(out.t.size());
    out.delta.resize(m);
    for (int i = 0; i + 1 < m; ++i) out.delta[i] = out.t[i + 1] - out.t[i];
    out.delta[m - 1] = coarse.far - out.t[m - 1];
    return out;
}

namespace {

// points = origin_r + t * dir_r, flattened to [R*S, 3]
Var sample_points(Tape& t, Var origins, Var dirs, const Tensor& tvals) {
    const std::size_t S = tvals.cols();
    Tensor tcol(tvals.rows() * S, 1);
    for (std::size_t i = 0; i < tvals.size(); ++i) tcol[i] = tvals[i];
    Var o = ad::repeat_rows(t, origins, S);
    Var d = ad::repeat_rows(t, dirs, S);
    return ad::add(t, o, ad::mul_colvec(t, d, t.leaf(std::move(tcol), false, "t_values")));
}

Var background_rows(Tape& t, const RendererConfig& rcfg, std::size_t rows) {
    Tensor bg(rows, 3);
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < 3; ++c) bg(r, c) = rcfg.background_color[c];
    return t.leaf(std::move(bg), false, "background");
}

// residual of a single-medium composite: 1 - sum_i w_i (exact telescoping)
Var residual_from_weights(Tape& t, Var w) {
    const std::size_t S = t.value(w).cols();
    Tensor ones(t.value(w).rows() * S, 1, 1.0);
    Var total = ad::seg_weighted_sum(t, w, t.leaf(std::move(ones), false, "ones"));
    return ad::add_scalar(t, ad::neg(t, total), 1.0);
}

}  // namespace

RenderBatch render_rays(Tape& t, const field::Binding& b, const field::FieldConfig& fcfg,
                        const RendererConfig& rcfg, Var origins, Var dirs, Var act_out,
                        const RenderOptions& opt, Rng& rng) {
    const std::size_t R = t.value(origins).rows();
    const int Sc = rcfg.n_coarse;

    // coarse sampling grid
    Tensor t_coarse(R, Sc), d_coarse(R, Sc);
    {
        lie::Ray proto;
        proto.near = rcfg.near;
        proto.far = rcfg.far;
        for (std::size_t r = 0; r < R; ++r) {
            SampleSet s = stratified_samples(proto, Sc, opt.jitter, rng);
            for (int i = 0; i < Sc; ++i) {
                t_coarse(r, i) = s.t[i];
                d_coarse(r, i) = s.delta[i];
            }
        }
    }

    RenderBatch out;

    // coarse pass: provides resampling weights (non-differentiable placement)
    // and, with a coarse network, a color output for its own loss term
    Tensor coarse_w(R, Sc);
    if (fcfg.has_coarse) {
        Var xc = sample_points(t, origins, dirs, t_coarse);
        field::CoarseOutputs co = field::coarse_forward(t, b, fcfg, xc);
        Var sig = ad::reshape(t, co.sigma, R, Sc);
        Var w = ad::static_weights(t, sig, d_coarse);
        Var resid = residual_from_weights(t, w);
        Var col = ad::add(t, ad::seg_weighted_sum(t, w, co.rgb),
                          ad::mul_colvec(t, background_rows(t, rcfg, R), resid));
        out.coarse_color = col;
        coarse_w = t.value(w);
    } else {
        // evaluate the fine field for weights only
        Var xc = sample_points(t, origins, dirs, t_coarse);
        Var dc = ad::repeat_rows(t, dirs, Sc);
        field::FieldOutputs fo = field::field_forward(t, b, fcfg, ad::stop_gradient(t, xc),
                                                      ad::stop_gradient(t, dc));
        const Tensor& ss = t.value(fo.sigma_s);
        const Tensor& st = t.value(fo.sigma_tau);
        for (std::size_t r = 0; r < R; ++r) {
            double logT = 0.0;
            for (int i = 0; i < Sc; ++i) {
                const double sd = (ss[r * Sc + i] + st[r * Sc + i]) * d_coarse(r, i);
                coarse_w(r, i) = std::exp(logT) * (1.0 - std::exp(-sd));
                logT -= sd;
            }
        }
    }

    // fine sampling: union of coarse grid and importance draws
    const int Su = Sc + rcfg.n_fine;
    Tensor t_fine(R, Su), d_fine(R, Su);
    {
        std::vector<double> w(Sc);
        for (std::size_t r = 0; r < R; ++r) {
            SampleSet cset;
            cset.near = rcfg.near;
            cset.far = rcfg.far;
            cset.t.assign(t_coarse.data() + r * Sc, t_coarse.data() + (r + 1) * Sc);
            cset.delta.assign(d_coarse.data() + r * Sc, d_coarse.data() + (r + 1) * Sc);
            for (int i = 0; i < Sc; ++i) w[i] = coarse_w(r, i);
            SampleSet fset = hierarchical_resample(cset, w, rcfg.n_fine, rng);
            for (int i = 0; i < Su; ++i) {
                t_fine(r, i) = fset.t[i];
                d_fine(r, i) = fset.delta[i];
            }
        }
    }

    Var xf = sample_points(t, origins, dirs, t_fine);
    Var df = ad::repeat_rows(t, dirs, Su);
    field::FieldOutputs fo = field::field_forward(t, b, fcfg, xf, df);

    Var sig_s = ad::reshape(t, fo.sigma_s, R, Su);
    Var sig_t = ad::reshape(t, fo.sigma_tau, R, Su);
    out.sigma_tau = sig_t;

    Var cw = ad::combined_weights(t, sig_s, sig_t, d_fine);
    Var ws = ad::slice_cols(t, cw, 0, Su);
    Var wt = ad::slice_cols(t, cw, Su, 2 * Su);
    Var resid = ad::slice_cols(t, cw, 2 * Su, 2 * Su + 1);
    out.residual = resid;

    Var c_rend = ad::add(t, ad::add(t, ad::seg_weighted_sum(t, ws, fo.rgb_s),
                                    ad::seg_weighted_sum(t, wt, fo.rgb_tau)),
                         ad::mul_colvec(t, background_rows(t, rcfg, R), resid));
    out.color_raw = c_rend;

    if (opt.apply_act && act_out.valid()) {
        Var K = ad::reshape(t, ad::slice_cols(t, act_out, 0, 9), 3, 3);
        Var bias = ad::slice_cols(t, act_out, 9, 12);
        out.color = ad::add_rowvec(t, ad::matmul_nt(t, c_rend, K), bias);
    } else {
        out.color = c_rend;
    }

    Var sig_for_feat = opt.stop_grad_density_in_feature ? ad::stop_gradient(t, sig_s) : sig_s;
    Var sw = ad::static_weights(t, sig_for_feat, d_fine);
    out.feature = ad::seg_weighted_sum(t, sw, fo.feat);

    Var beta = ad::seg_weighted_sum(t, wt, fo.beta);
    out.beta = ad::add_scalar(t, beta, fcfg.beta_min);

    out.t_fine = std::move(t_fine);
    out.delta_fine = std::move(d_fine);
    return out;
}

RenderedPixel composite_pixel(const lie::Ray& ray, const SampleSet& samples,
                              const ad::ParamStore& params, const field::FieldConfig& fcfg,
                              const std::array<double, 3>& background,
                              const field::ACTParams& act, double beta_min) {
    const std::size_t S = samples.t.size();
    RenderedPixel px;
    px.feature.assign(fcfg.N_f, 0.0);
    double logT = 0.0, logTs = 0.0;
    std::array<double, 3> c_rend{0, 0, 0};
    double beta_acc = 0.0;
    for (std::size_t i = 0; i < S; ++i) {
        std::array<double, 3> x{ray.origin[0] + samples.t[i] * ray.direction[0],
                                ray.origin[1] + samples.t[i] * ray.direction[1],
                                ray.origin[2] + samples.t[i] * ray.direction[2]};
        field::FieldSample fs = field::evaluate(x, ray.direction, params, fcfg);
        const double d = samples.delta[i];
        const double T = std::exp(logT);
        const double as = 1.0 - std::exp(-fs.sigma_s * d);
        const double at = 1.0 - std::exp(-fs.sigma_tau * d);
        for (int c = 0; c < 3; ++c) c_rend[c] += T * (as * fs.rgb_s[c] + at * fs.rgb_tau[c]);
        beta_acc += T * at * fs.beta;
        const double Ts = std::exp(logTs);
        const double ws = Ts * as;
        for (int c = 0; c < fcfg.N_f; ++c) px.feature[c] += ws * fs.feat[c];
        logT -= (fs.sigma_s + fs.sigma_tau) * d;
        logTs -= fs.sigma_s * d;
    }
    const double resid = std::exp(logT);
    for (int c = 0; c < 3; ++c) c_rend[c] += resid * background[c];
    for (int r = 0; r < 3; ++r) {
        double v = act.b[r];
        for (int c = 0; c < 3; ++c) v += act.K[r * 3 + c] * c_rend[c];
        px.color[r] = v;
    }
    px.beta = beta_min + beta_acc;
    px.transmittance_residual = resid;
    if (!std::isfinite(px.beta) || !std::isfinite(px.color[0]) ||
        !std::isfinite(px.color[1]) || !std::isfinite(px.color[2]))
        throw std::runtime_error("composite_pixel: non-finite composite");
    return px;
}

std::pair<int, int> render_dims(const lie::CameraIntrinsics& intr, int short_side) {
    int h, w;
    if (intr.width >= intr.height) {
        h = short_side;
        w = static_cast<int>(std::lround(static_cast<double>(short_side) * intr.width / intr.height));
    } else {
        w = short_side;
        h = static_cast<int>(std::lround(static_cast<double>(short_side) * intr.height / intr.width));
    }
    return {h, w};
}

FeatureMapRender render_feature_map(const lie::Pose& pose, const lie::CameraIntrinsics& intr,
                                    const ad::ParamStore& params,
                                    const field::FieldConfig& fcfg,
                                    const RendererConfig& rcfg,
                                    features::FusionState& fusion_state,
                                    const Tensor* histogram) {
    auto [h, w] = render_dims(intr, rcfg.render_short_side);
    lie::CameraIntrinsics k = intr.scaled(w, h);

    std::vector<std::pair<double, double>> pixels;
    pixels.reserve(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) pixels.emplace_back(x, y);
    std::vector<lie::Ray> rays = lie::generate_rays(pose, k, pixels, rcfg.near, rcfg.far);

    Tape t;
    field::Binding b = field::bind(t, params, false);
    Tensor origins(rays.size(), 3), dirs(rays.size(), 3);
    for (std::size_t r = 0; r < rays.size(); ++r)
        for (int c = 0; c < 3; ++c) {
            origins(r, c) = rays[r].origin[c];
            dirs(r, c) = rays[r].direction[c];
        }
    Var vo = t.leaf(std::move(origins), false, "origins");
    Var vd = t.leaf(std::move(dirs), false, "dirs");

    Var act_out;
    if (histogram) act_out = field::act_forward(t, b, *histogram);

    RenderOptions opt;
    opt.jitter = false;
    opt.apply_act = histogram != nullptr;
    Rng rng(0);  // unused with jitter off
    RenderBatch rb = render_rays(t, b, fcfg, rcfg, vo, vd, act_out, opt, rng);

    Var fused = features::fuse_forward(t, b, rb.color, rb.feature, h, w, fusion_state, false);
    auto [uh, uw] = render_dims(intr, rcfg.upsample_short_side);
    Var up = ad::bicubic_upsample(t, fused, h, w, uh, uw);

    FeatureMapRender out;
    out.fused = FeatureMap(uh, uw, fcfg.N_f);
    out.fused.data = t.value(up);
    out.raw = FeatureMap(h, w, fcfg.N_f);
    out.raw.data = t.value(rb.feature);
    out.color = ImageBuffer(h, w);
    out.color.rgb = t.value(rb.color);
    out.beta = FeatureMap(h, w, 1);
    out.beta.data = t.value(rb.beta);
    return out;
}

double partition_of_unity(const std::vector<double>& sigma_s,
                          const std::vector<double>& sigma_tau,
                          const std::vector<double>& delta) {
    double logT = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < sigma_s.size(); ++i) {
        const double sd = (sigma_s[i] + sigma_tau[i]) * delta[i];
        acc += std::exp(logT) * (1.0 - std::exp(-sd));
        logT -= sd;
    }
    return acc + std::exp(logT);
}

}  // namespace nefes::render
