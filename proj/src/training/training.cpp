#include "nefes/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nefes::train {

using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
    if (T1 < 0 || T2 < 0 || T3 < 0) throw std::invalid_argument("train: epochs >= 0");
    if (!(lr_start > 0) || !(lr_end > 0)) throw std::invalid_argument("train: learning rates > 0");
    if (rays_per_image < 1 || batch_images < 1) throw std::invalid_argument("train: batch sizes >= 1");
    if (n_crop < 1 || patch_s < 1) throw std::invalid_argument("train: patch config >= 1");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.T1 = 600;
    c.T2 = 200;
    c.T3 = 400;
    c.rays_per_image = 1536;
    c.batch_images = 4;
    c.n_crop = 7;
    c.patch_s = 16;
    return c;
}

StagePoint StageSchedule::at(int epoch) const {
    if (epoch < 0 || epoch >= total_epochs()) throw std::out_of_range("schedule: epoch out of range");
    StagePoint sp;
    if (epoch < cfg.T1) {
        sp.stage = Stage::rgb_only;
    } else if (epoch < cfg.T1 + cfg.T2) {
        sp.stage = Stage::rgb_feature;
        sp.lambda1 = cfg.lambda1_stage2;
    } else {
        sp.stage = Stage::rgb_feature_fusion;
        sp.lambda1 = cfg.lambda1_stage3;
        sp.lambda2 = cfg.lambda2_stage3;
    }
    return sp;
}

double StageSchedule::lr_at(int epoch) const {
    StagePoint sp = at(epoch);
    int start = 0, len = cfg.T1;
    if (sp.stage == Stage::rgb_feature) {
        start = cfg.T1;
        len = cfg.T2;
    } else if (sp.stage == Stage::rgb_feature_fusion) {
        start = cfg.T1 + cfg.T2;
        len = cfg.T3;
    }
    const int local = epoch - start;
    if (len <= 1) return cfg.lr_start;
    const double f = static_cast<double>(local) / (len - 1);
    return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, f);
}

double loss_rgb(const std::vector<render::RenderedPixel>& rendered,
                const std::vector<std::array<double, 3>>& gt_colors,
                const std::vector<std::vector<double>>& sigma_tau_samples,
                double lambda_s) {
    if (rendered.size() != gt_colors.size() || rendered.size() != sigma_tau_samples.size())
        throw std::invalid_argument("loss_rgb: batch size mismatch");
    double acc = 0;
    for (std::size_t r = 0; r < rendered.size(); ++r) {
        double sq = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = gt_colors[r][c] - rendered[r].color[c];
            sq += d * d;
        }
        const double b2 = rendered[r].beta * rendered[r].beta;
        double term = sq / (2 * b2) + 0.5 * std::log(b2);
        const auto& st = sigma_tau_samples[r];
        if (!st.empty()) {
            double s = 0;
            for (double v : st) s += v;
            term += lambda_s / static_cast<double>(st.size()) * s;
        }
        acc += term;
    }
    return acc / static_cast<double>(rendered.size());
}

double loss_feature_l1(const FeatureMap& rendered, const FeatureMap& labels) {
    if (rendered.h != labels.h || rendered.w != labels.w || rendered.c != labels.c)
        throw std::invalid_argument("loss_feature_l1: shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < rendered.data.size(); ++i)
        acc += std::abs(rendered.data[i] - labels.data[i]);
    return acc / static_cast<double>(rendered.data.size());
}

double loss_fusion_l1(const FeatureMap& fused, const FeatureMap& labels) {
    return loss_feature_l1(fused, labels);
}

double total_loss(const LossParts& parts, const StagePoint& sp) {
    return parts.rgb + sp.lambda1 * parts.feature + sp.lambda2 * parts.fusion;
}

void Adam::init(const ad::ParamStore& params) {
    steps = 0;
    m.clear();
    v.clear();
    for (const auto& e : params.entries()) {
        m.push_back({e.name, Tensor(e.value.rows(), e.value.cols())});
        v.push_back({e.name, Tensor(e.value.rows(), e.value.cols())});
    }
}

void Adam::step(ad::ParamStore& params, const ad::GradRecord& grads, double lr) {
    if (m.size() != params.count()) throw std::logic_error("adam: not initialized for this store");
    ++steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.count(); ++i) {
        Tensor& p = params.entries()[i].value;
        const Tensor* g = grads.find(params.entries()[i].name);
        if (!g) continue;
        Tensor& mi = m[i].value;
        Tensor& vi = v[i].value;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = (*g)[k];
            mi[k] = beta1 * mi[k] + (1 - beta1) * gk;
            vi[k] = beta2 * vi[k] + (1 - beta2) * gk * gk;
            p[k] -= lr * (mi[k] / bc1) / (std::sqrt(vi[k] / bc2) + eps);
        }
    }
}

ad::GradRecord collect_grads(const Tape& t, const field::Binding& b,
                             const ad::ParamStore& params) {
    ad::GradRecord rec;
    for (const auto& e : params.entries()) {
        Var v = b(e.name);
        Tensor g = t.grad(v);
        if (g.size() == 0) g = Tensor(e.value.rows(), e.value.cols());
        rec.grads.push_back({e.name, std::move(g)});
    }
    return rec;
}

namespace {

struct ImagePrep {
    ImageBuffer down;          // label-grid resolution ground truth
    FeatureMap labels;         // frozen extractor features of `down`
    Tensor hist;               // [1,10] luminance histogram of the full image
    lie::CameraIntrinsics label_intr;
};

ImagePrep prep_image(const DatasetEntry& e, const lie::CameraIntrinsics& intr,
                     const render::RendererConfig& rcfg,
                     const features::ExtractorParams& extractor) {
    auto [h, w] = render::render_dims(intr, rcfg.render_short_side);
    ImagePrep p;
    p.down = resize_area(e.image, h, w);
    p.labels = features::extract_features(p.down, extractor);
    p.hist = field::luminance_histogram(e.image);
    p.label_intr = intr.scaled(w, h);
    return p;
}

std::pair<Var, Var> ray_leaves(Tape& t, const std::vector<lie::Ray>& rays) {
    Tensor o(rays.size(), 3), d(rays.size(), 3);
    for (std::size_t r = 0; r < rays.size(); ++r)
        for (int c = 0; c < 3; ++c) {
            o(r, c) = rays[r].origin[c];
            d(r, c) = rays[r].direction[c];
        }
    return {t.leaf(std::move(o), false, "origins"), t.leaf(std::move(d), false, "dirs")};
}

Tensor rows_at(const Tensor& src, const std::vector<std::size_t>& idx) {
    Tensor out(idx.size(), src.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < src.cols(); ++c) out(r, c) = src(idx[r], c);
    return out;
}

}  // namespace

TrainState init_train_state(const field::FieldConfig& fcfg, const TrainConfig& cfg) {
    TrainState st;
    st.params = field::init_field_params(fcfg, cfg.seed);
    st.fusion = features::make_fusion_state(fcfg.N_f);
    st.opt.init(st.params);
    st.epoch = 0;
    st.rng_state = Rng(cfg.seed ^ 0x7261696Eull).state();
    return st;
}

ImageBuffer render_color_image(const lie::Pose& pose, const lie::CameraIntrinsics& intr,
                               const ad::ParamStore& params, const field::FieldConfig& fcfg,
                               const render::RendererConfig& rcfg, const Tensor* histogram) {
    auto [h, w] = render::render_dims(intr, rcfg.render_short_side);
    lie::CameraIntrinsics k = intr.scaled(w, h);
    std::vector<std::pair<double, double>> pixels;
    pixels.reserve(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) pixels.emplace_back(x, y);
    std::vector<lie::Ray> rays = lie::generate_rays(pose, k, pixels, rcfg.near, rcfg.far);

    Tape t;
    field::Binding b = field::bind(t, params, false);
    auto [vo, vd] = ray_leaves(t, rays);
    Var act_out;
    if (histogram) act_out = field::act_forward(t, b, *histogram);
    render::RenderOptions opt;
    opt.jitter = false;
    opt.apply_act = histogram != nullptr;
    Rng rng(0);
    render::RenderBatch rb = render::render_rays(t, b, fcfg, rcfg, vo, vd, act_out, opt, rng);

    ImageBuffer img(h, w);
    img.rgb = t.value(rb.color);
    img.clamp01();
    return img;
}

TrainResult train_nefes(const Dataset& data, const TrainConfig& cfg,
                        const render::RendererConfig& rcfg, const field::FieldConfig& fcfg,
                        const features::ExtractorParams& extractor, TrainState& state,
                        int max_epochs) {
    cfg.validate();
    rcfg.validate();
    fcfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train: empty training split");
    if (extractor.n_out != fcfg.N_f)
        throw std::invalid_argument("train: extractor output width must match N_f");

    const std::uint64_t extractor_sum = extractor.checksum();

    StageSchedule sched{cfg};
    const int n_img = static_cast<int>(data.train.size());

    std::vector<ImagePrep> prep;
    prep.reserve(n_img);
    for (const auto& e : data.train) prep.push_back(prep_image(e, data.intrinsics, rcfg, extractor));

    const DatasetEntry* heldout = data.test.empty() ? &data.train[0] : &data.test[0];
    ImagePrep heldout_prep = prep_image(*heldout, data.intrinsics, rcfg, extractor);

    Rng rng(0);
    rng.set_state(state.rng_state);

    TrainResult res;
    const int stop = max_epochs < 0 ? sched.total_epochs()
                                    : std::min(sched.total_epochs(), state.epoch + max_epochs);
    const int S = cfg.patch_s;

    for (; state.epoch < stop; ++state.epoch) {
        const int epoch = state.epoch;
        const StagePoint sp = sched.at(epoch);
        const double lr = sched.lr_at(epoch);

        std::vector<int> order(n_img);
        for (int i = 0; i < n_img; ++i) order[i] = i;
        for (int i = n_img - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_index(static_cast<std::uint64_t>(i) + 1)]);

        LossParts epoch_parts;
        int epoch_images = 0;

        for (int base = 0; base < n_img; base += cfg.batch_images) {
            const int bsz = std::min(cfg.batch_images, n_img - base);
            ad::GradRecord acc;
            for (int bi = 0; bi < bsz; ++bi) {
                const int idx = order[base + bi];
                const DatasetEntry& entry = data.train[idx];
                const ImagePrep& pp = prep[idx];

                Tape t;
                field::Binding b = field::bind(t, state.params, true);
                Var act_out;
                if (cfg.use_act) act_out = field::act_forward(t, b, pp.hist);

                render::RenderOptions opt;
                opt.jitter = rcfg.stratified_jitter;
                opt.stop_grad_density_in_feature = sp.stage != Stage::rgb_only;
                opt.apply_act = cfg.use_act;

                Var total;
                LossParts parts;

                if (sp.stage != Stage::rgb_feature_fusion) {
                    // stages 1-2: independent random rays. Stage 1 samples the
                    // full-resolution image; stage 2 samples the label grid so
                    // one render feeds both the color and the feature loss.
                    const bool full_res = sp.stage == Stage::rgb_only;
                    const int H = full_res ? entry.image.h : pp.down.h;
                    const int W = full_res ? entry.image.w : pp.down.w;
                    const lie::CameraIntrinsics& K = full_res ? data.intrinsics : pp.label_intr;
                    const ImageBuffer& gt_img = full_res ? entry.image : pp.down;

                    std::vector<std::pair<double, double>> pixels(cfg.rays_per_image);
                    std::vector<std::size_t> pix_idx(cfg.rays_per_image);
                    for (int r = 0; r < cfg.rays_per_image; ++r) {
                        const int x = static_cast<int>(rng.uniform_index(W));
                        const int y = static_cast<int>(rng.uniform_index(H));
                        pixels[r] = {x, y};
                        pix_idx[r] = static_cast<std::size_t>(y) * W + x;
                    }
                    auto rays = lie::generate_rays(entry.pose, K, pixels, rcfg.near, rcfg.far);
                    auto [vo, vd] = ray_leaves(t, rays);
                    auto rb = render::render_rays(t, b, fcfg, rcfg, vo, vd, act_out, opt, rng);

                    Tensor gt = rows_at(gt_img.rgb, pix_idx);
                    Var l_rgb = ad::rgb_nll(t, rb.color, gt, rb.beta, rb.sigma_tau, cfg.lambda_s);
                    total = l_rgb;
                    if (rb.coarse_color.valid())
                        total = ad::add(t, total, ad::scale(t, ad::mse(t, rb.coarse_color, gt), 0.5));
                    parts.rgb = t.value(l_rgb).item();

                    if (sp.stage == Stage::rgb_feature) {
                        Var l_f = ad::l1_mean(t, rb.feature,
                                              t.leaf(rows_at(pp.labels.data, pix_idx), false, "feat_labels"));
                        total = ad::add(t, total, ad::scale(t, l_f, sp.lambda1));
                        parts.feature = t.value(l_f).item();
                    }
                } else {
                    // stage 3: n_crop SxS patches on the label grid; the patch
                    // layout is what lets the fusion convolutions run.
                    Var l_rgb_sum, l_f_sum, l_fus_sum, coarse_sum;
                    for (int p = 0; p < cfg.n_crop; ++p) {
                        const int x0 = static_cast<int>(rng.uniform_index(pp.down.w - S + 1));
                        const int y0 = static_cast<int>(rng.uniform_index(pp.down.h - S + 1));
                        std::vector<std::pair<double, double>> pixels;
                        std::vector<std::size_t> pix_idx;
                        pixels.reserve(S * S);
                        pix_idx.reserve(S * S);
                        for (int y = y0; y < y0 + S; ++y)
                            for (int x = x0; x < x0 + S; ++x) {
                                pixels.emplace_back(x, y);
                                pix_idx.push_back(static_cast<std::size_t>(y) * pp.down.w + x);
                            }
                        auto rays = lie::generate_rays(entry.pose, pp.label_intr, pixels,
                                                       rcfg.near, rcfg.far);
                        auto [vo, vd] = ray_leaves(t, rays);
                        auto rb = render::render_rays(t, b, fcfg, rcfg, vo, vd, act_out, opt, rng);

                        Tensor gt = rows_at(pp.down.rgb, pix_idx);
                        Var labels = t.leaf(rows_at(pp.labels.data, pix_idx), false, "feat_labels");
                        Var l_rgb = ad::rgb_nll(t, rb.color, gt, rb.beta, rb.sigma_tau, cfg.lambda_s);
                        Var l_f = ad::l1_mean(t, rb.feature, labels);
                        Var fused = features::fuse_forward(t, b, rb.color, rb.feature, S, S,
                                                           state.fusion, true);
                        Var l_fus = ad::l1_mean(t, fused, labels);

                        l_rgb_sum = l_rgb_sum.valid() ? ad::add(t, l_rgb_sum, l_rgb) : l_rgb;
                        l_f_sum = l_f_sum.valid() ? ad::add(t, l_f_sum, l_f) : l_f;
                        l_fus_sum = l_fus_sum.valid() ? ad::add(t, l_fus_sum, l_fus) : l_fus;
                        if (rb.coarse_color.valid()) {
                            Var cm = ad::mse(t, rb.coarse_color, gt);
                            coarse_sum = coarse_sum.valid() ? ad::add(t, coarse_sum, cm) : cm;
                        }
                    }
                    const double inv = 1.0 / cfg.n_crop;
                    Var l_rgb = ad::scale(t, l_rgb_sum, inv);
                    Var l_f = ad::scale(t, l_f_sum, inv);
                    Var l_fus = ad::scale(t, l_fus_sum, inv);
                    total = ad::add(t, l_rgb, ad::add(t, ad::scale(t, l_f, sp.lambda1),
                                                      ad::scale(t, l_fus, sp.lambda2)));
                    if (coarse_sum.valid())
                        total = ad::add(t, total, ad::scale(t, coarse_sum, 0.5 * inv));
                    parts.rgb = t.value(l_rgb).item();
                    parts.feature = t.value(l_f).item();
                    parts.fusion = t.value(l_fus).item();
                }

                if (!std::isfinite(t.value(total).item()))
                    throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                             std::to_string(epoch));

                t.backward(total);
                ad::GradRecord g = collect_grads(t, b, state.params);
                if (acc.grads.empty())
                    acc = std::move(g);
                else
                    acc.axpy(1.0, g);

                epoch_parts.rgb += parts.rgb;
                epoch_parts.feature += parts.feature;
                epoch_parts.fusion += parts.fusion;
                ++epoch_images;
            }
            for (auto& e : acc.grads)
                for (std::size_t k = 0; k < e.value.size(); ++k) e.value[k] /= bsz;
            state.opt.step(state.params, acc, lr);
            if (!state.params.all_finite())
                throw std::runtime_error("training diverged (non-finite parameters) at epoch " +
                                         std::to_string(epoch));
        }

        ImageBuffer held = render_color_image(heldout->pose, data.intrinsics, state.params,
                                              fcfg, rcfg, cfg.use_act ? &heldout_prep.hist : nullptr);

        LogRow row;
        row.epoch = epoch;
        row.stage = static_cast<int>(sp.stage);
        row.L_rgb = epoch_parts.rgb / epoch_images;
        row.L_f = epoch_parts.feature / epoch_images;
        row.L_fusion = epoch_parts.fusion / epoch_images;
        row.lr = lr;
        row.heldout_psnr = psnr(held, heldout_prep.down);
        res.log.push_back(row);

        state.rng_state = rng.state();
    }

    if (extractor.checksum() != extractor_sum)
        throw std::logic_error("training mutated the frozen extractor");
    return res;
}

}  // namespace nefes::train
