#include "nefes/refine.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace nefes::refine {

using ad::Tape;
using ad::Var;
using lie::Vec3;
using lie::operator+;
using lie::operator-;
using lie::operator*;

void RefineConfig::validate() const {
    if (m < 1) throw std::invalid_argument("refine: m >= 1");
    if (mode == RefineMode::apr_weights) {
        if (lr < 0) throw std::invalid_argument("refine: lr >= 0");
    } else {
        if (lr_R < 0 || lr_t < 0) throw std::invalid_argument("refine: learning rates >= 0");
    }
    if (n_sparse_rays < 1) throw std::invalid_argument("refine: n_sparse_rays >= 1");
}

RefineConfig RefineConfig::desk() { return RefineConfig{}; }

RefineConfig RefineConfig::paper_indoor() {
    RefineConfig c;
    c.lr_R = 0.0087;
    c.lr_t = 0.01;
    return c;
}

RefineConfig RefineConfig::paper_outdoor() {
    RefineConfig c;
    c.lr_R = 0.01;
    c.lr_t = 0.1;
    return c;
}

namespace {

struct Grads {
    double loss = 0;
    Vec3 grad_omega{0, 0, 0};
    Vec3 grad_nu{0, 0, 0};
    Tensor g_origins, g_dirs;  // per-ray, for the APR chain rule
    bool finite = true;
};

struct FrameSetup {
    lie::CameraIntrinsics render_intr;
    int h = 0, w = 0;    // render grid
    int uh = 0, uw = 0;  // upsampled grid
    std::vector<std::pair<double, double>> pixels;  // full render grid
    Tensor query_features;  // [uh*uw, N_f] extractor features of the query
    Tensor query_colors;    // [h*w, 3] query at render resolution
    Tensor hist;            // [1,10]
};

FrameSetup make_setup(const ImageBuffer& query, const NeFeSModel& model,
                      const lie::CameraIntrinsics& intr, const RefineConfig& cfg) {
    FrameSetup s;
    auto [h, w] = render::render_dims(intr, cfg.render_short_side);
    auto [uh, uw] = render::render_dims(intr, cfg.upsample_short_side);
    s.h = h;
    s.w = w;
    s.uh = uh;
    s.uw = uw;
    s.render_intr = intr.scaled(w, h);
    s.pixels.reserve(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) s.pixels.emplace_back(x, y);
    s.query_features =
        features::extract_features(resize_area(query, uh, uw), model.extractor).data;
    s.query_colors = resize_area(query, h, w).rgb;
    s.hist = field::luminance_histogram(query);
    return s;
}

// Loss and its pose-twist gradient in the chart R(eps)=exp([w])R0,
// t(eps)=t0+v: grad_w = sum_r d_r x g_dr, grad_v = sum_r g_or.
Grads eval_objective(const lie::Pose& pose, const NeFeSModel& model, const FrameSetup& s,
                     const RefineConfig& cfg, bool photometric,
                     const std::vector<std::size_t>* pixel_subset, bool want_grads) {
    std::vector<std::pair<double, double>> pix;
    const std::vector<std::pair<double, double>>* use_pix = &s.pixels;
    if (pixel_subset) {
        pix.reserve(pixel_subset->size());
        for (std::size_t i : *pixel_subset) pix.push_back(s.pixels[i]);
        use_pix = &pix;
    }
    auto rays = lie::generate_rays(pose, s.render_intr, *use_pix, model.rcfg.near,
                                   model.rcfg.far);
    Tape t;
    field::Binding b = field::bind(t, model.params, false);
    Tensor o(rays.size(), 3), d(rays.size(), 3);
    for (std::size_t r = 0; r < rays.size(); ++r)
        for (int c = 0; c < 3; ++c) {
            o(r, c) = rays[r].origin[c];
            d(r, c) = rays[r].direction[c];
        }
    Var vo = t.leaf(std::move(o), want_grads, "ray_origins");
    Var vd = t.leaf(std::move(d), want_grads, "ray_dirs");
    Var act_out = field::act_forward(t, b, s.hist);
    render::RenderOptions opt;
    opt.jitter = false;
    opt.apply_act = true;
    Rng rng(0);
    render::RendererConfig rcfg = model.rcfg;
    render::RenderBatch rb = render::render_rays(t, b, model.fcfg, rcfg, vo, vd, act_out,
                                                 opt, rng);

    Var loss;
    if (photometric) {
        Tensor gt(rays.size(), 3);
        if (pixel_subset) {
            for (std::size_t r = 0; r < pixel_subset->size(); ++r)
                for (int c = 0; c < 3; ++c) gt(r, c) = s.query_colors((*pixel_subset)[r], c);
        } else {
            gt = s.query_colors;
        }
        loss = ad::mse(t, rb.color, gt);
    } else {
        Var fm = rb.feature;
        if (cfg.use_fused)
            fm = features::fuse_forward(t, b, rb.color, fm, s.h, s.w,
                                        const_cast<NeFeSModel&>(model).fusion, false);
        Var up = ad::bicubic_upsample(t, fm, s.h, s.w, s.uh, s.uw);
        loss = ad::spatial_cosine_loss(t, up, t.leaf(s.query_features, false, "query_features"));
    }

    Grads g;
    g.loss = t.value(loss).item();
    if (!std::isfinite(g.loss)) {
        g.finite = false;
        return g;
    }
    if (!want_grads) return g;

    t.backward(loss);
    g.g_origins = t.grad(vo);
    g.g_dirs = t.grad(vd);
    const Tensor& dv = t.value(vd);
    for (std::size_t r = 0; r < dv.rows(); ++r) {
        const Vec3 dir{dv(r, 0), dv(r, 1), dv(r, 2)};
        const Vec3 gd{g.g_dirs(r, 0), g.g_dirs(r, 1), g.g_dirs(r, 2)};
        g.grad_omega = g.grad_omega + lie::cross(dir, gd);
        for (int c = 0; c < 3; ++c) g.grad_nu[c] += g.g_origins(r, c);
    }
    for (int c = 0; c < 3; ++c)
        if (!std::isfinite(g.grad_omega[c]) || !std::isfinite(g.grad_nu[c])) g.finite = false;
    return g;
}

TraceRow make_row(int iter, const lie::Pose& pose, double loss, const lie::Pose* gt) {
    TraceRow row;
    row.iter = iter;
    row.pose = pose;
    row.loss = loss;
    if (gt) {
        auto [te, re] = lie::pose_error(pose, *gt);
        row.trans_err = te;
        row.rot_err = re;
    }
    return row;
}

RefineTrace run_pose_loop(const ImageBuffer& query, const lie::Pose& init,
                          const NeFeSModel& model, const lie::CameraIntrinsics& intr,
                          const RefineConfig& cfg, const lie::Pose* gt, bool photometric,
                          bool sparse) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    FrameSetup setup = make_setup(query, model, intr, cfg);
    Rng rng(cfg.seed ^ 0x726566696E65ull);

    const std::size_t npix = setup.pixels.size();
    std::vector<std::size_t> all_idx(npix);
    for (std::size_t i = 0; i < npix; ++i) all_idx[i] = i;

    RefineTrace trace;
    lie::Pose pose = init;
    for (int it = 0; it < cfg.m; ++it) {
        std::vector<std::size_t> subset;
        const std::vector<std::size_t>* subset_ptr = nullptr;
        if (sparse && static_cast<std::size_t>(cfg.n_sparse_rays) < npix) {
            subset = all_idx;
            for (int k = 0; k < cfg.n_sparse_rays; ++k) {
                const std::size_t j = k + rng.uniform_index(npix - k);
                std::swap(subset[k], subset[j]);
            }
            subset.resize(cfg.n_sparse_rays);
            subset_ptr = &subset;
        }
        Grads g = eval_objective(pose, model, setup, cfg, photometric, subset_ptr, true);
        trace.rows.push_back(make_row(it, pose, g.loss, gt));
        if (!g.finite) {
            trace.aborted = true;
            break;
        }
        pose = lie::tangent_step(pose, g.grad_omega, g.grad_nu, cfg.lr_R, cfg.lr_t);
    }
    if (!trace.aborted) {
        Grads g = eval_objective(pose, model, setup, cfg, photometric, nullptr, false);
        trace.rows.push_back(make_row(cfg.m, pose, g.loss, gt));
    }
    trace.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

}  // namespace

RefineTrace refine_direct_pose(const ImageBuffer& query, const lie::Pose& init,
                               const NeFeSModel& model, const lie::CameraIntrinsics& intr,
                               const RefineConfig& cfg, const lie::Pose* gt) {
    return run_pose_loop(query, init, model, intr, cfg, gt, false, false);
}

RefineTrace refine_photometric(const ImageBuffer& query, const lie::Pose& init,
                               const NeFeSModel& model, const lie::CameraIntrinsics& intr,
                               const RefineConfig& cfg, const lie::Pose* gt) {
    return run_pose_loop(query, init, model, intr, cfg, gt, true,
                         cfg.mode == RefineMode::photometric_sparse);
}

RefineTrace refine_apr_weights(const ImageBuffer& query, const scene::APRParams& apr,
                               const NeFeSModel& model, const lie::CameraIntrinsics& intr,
                               const RefineConfig& cfg, const lie::Pose* gt) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    FrameSetup setup = make_setup(query, model, intr, cfg);

    // refinement works on a scratch copy; the caller's weights are untouched
    ad::ParamStore weights = apr.params;
    ImageBuffer down = resize_area(query, apr.in_h, apr.in_w);

    // camera-frame unit directions of the render grid, fixed across iterations
    std::vector<Vec3> cam_dirs(setup.pixels.size());
    for (std::size_t i = 0; i < setup.pixels.size(); ++i) {
        const auto& [u, v] = setup.pixels[i];
        cam_dirs[i] = lie::normalized(Vec3{(u + 0.5 - setup.render_intr.cx) / setup.render_intr.fx,
                                           (v + 0.5 - setup.render_intr.cy) / setup.render_intr.fy,
                                           1.0});
    }

    RefineTrace trace;
    for (int it = 0; it < cfg.m + 1; ++it) {
        Tape t;
        field::Binding b = field::bind(t, weights, true);
        Var in = t.leaf(down.rgb, false, "apr_input");
        scene::APRForward f = scene::apr_forward(t, b, in, apr.in_h, apr.in_w);
        const Tensor& tv = t.value(f.t);
        const Tensor& qv = t.value(f.q);
        lie::Quat q{qv[0], qv[1], qv[2], qv[3]};
        lie::Pose pose;
        pose.rotation = lie::Rotation(lie::nearest_rotation(lie::quat_to_matrix(q)));
        pose.translation = {tv[0], tv[1], tv[2]};

        const bool last = it == cfg.m;
        Grads g = eval_objective(pose, model, setup, cfg, false, nullptr, !last);
        trace.rows.push_back(make_row(it, pose, g.loss, gt));
        if (last) break;
        if (!g.finite) {
            trace.aborted = true;
            break;
        }

        // chain ray-space gradients into the regressor outputs: the origin is
        // the translation; directions are R(q) applied to fixed camera dirs
        Tensor gt_t(1, 3), gt_q(1, 4, 0.0);
        for (int c = 0; c < 3; ++c) {
            double acc = 0;
            for (std::size_t r = 0; r < g.g_origins.rows(); ++r) acc += g.g_origins(r, c);
            gt_t[c] = acc;
        }
        const std::array<lie::Mat3, 4> dR = lie::quat_to_matrix_jacobian(q);
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (std::size_t r = 0; r < g.g_dirs.rows(); ++r) {
                const Vec3 dd = lie::matvec(dR[j], cam_dirs[r]);
                for (int c = 0; c < 3; ++c) acc += g.g_dirs(r, c) * dd[c];
            }
            gt_q[j] = acc;
        }

        // seed the injected gradients through a linear probe and backprop
        Var probe = ad::add(t, ad::sum_all(t, ad::mul(t, f.t, t.leaf(gt_t, false, "gseed_t"))),
                            ad::sum_all(t, ad::mul(t, f.q, t.leaf(gt_q, false, "gseed_q"))));
        t.backward(probe);
        for (auto& e : weights.entries()) {
            const Tensor& gw = t.grad(b(e.name));
            if (gw.size() != e.value.size()) continue;
            for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] -= cfg.lr * gw[k];
        }
        if (!weights.all_finite()) {
            trace.aborted = true;
            break;
        }
    }
    trace.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

void write_trace_csv(const std::string& path, const RefineTrace& trace) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write trace CSV: " + path);
    f << "iter,tx,ty,tz,rx,ry,rz,loss,trans_err,rot_err\n";
    char buf[512];
    for (const auto& row : trace.rows) {
        lie::Pose rot_only;
        rot_only.rotation = row.pose.rotation;
        const Vec3 aa = lie::log_map(rot_only).omega;
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      row.iter, row.pose.translation[0], row.pose.translation[1],
                      row.pose.translation[2], aa[0], aa[1], aa[2], row.loss, row.trans_err,
                      row.rot_err);
        f << buf;
    }
    if (!f) throw std::runtime_error("trace CSV write failed: " + path);
}

}  // namespace nefes::refine
