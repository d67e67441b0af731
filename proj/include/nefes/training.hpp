#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nefes/autodiff.hpp"
#include "nefes/dataset.hpp"
#include "nefes/features.hpp"
#include "nefes/field.hpp"
#include "nefes/render.hpp"

namespace nefes::train {

enum class Stage : int { rgb_only = 0, rgb_feature = 1, rgb_feature_fusion = 2 };

struct TrainConfig {
    int T1 = 60, T2 = 20, T3 = 40;
    double lambda1_stage2 = 0.04;
    double lambda1_stage3 = 0.02;
    double lambda2_stage3 = 0.02;
    double lambda_s = 0.01;
    double lr_start = 5e-4;
    double lr_end = 8e-5;
    int rays_per_image = 128;
    int batch_images = 4;
    int n_crop = 2;
    int patch_s = 12;
    bool use_act = true;  // exposure-adaptive color transform on rendered colors
    std::uint64_t seed = 1;

    void validate() const;
    static TrainConfig desk();
    static TrainConfig paper();  // 600/200/400, 1536 rays, 7 crops of 16x16
};

struct StagePoint {
    Stage stage = Stage::rgb_only;
    double lambda1 = 0, lambda2 = 0;
};

// Contiguous, exhaustive stage map over [0, T1+T2+T3) with the learning
// rate decayed exponentially lr_start -> lr_end inside each stage and reset
// at every stage boundary.
struct StageSchedule {
    TrainConfig cfg;

    int total_epochs() const { return cfg.T1 + cfg.T2 + cfg.T3; }
    StagePoint at(int epoch) const;
    double lr_at(int epoch) const;
};

// ---- scalar loss evaluators (reference forms of the training objectives) ----

// mean over rays of ||C - C_hat||^2/(2 beta^2) + log(beta^2)/2
//   + (lambda_s / K_ray) * sum_k sigma_tau[ray][k]
double loss_rgb(const std::vector<render::RenderedPixel>& rendered,
                const std::vector<std::array<double, 3>>& gt_colors,
                const std::vector<std::vector<double>>& sigma_tau_samples,
                double lambda_s);

// mean absolute difference over all elements
double loss_feature_l1(const FeatureMap& rendered, const FeatureMap& labels);
double loss_fusion_l1(const FeatureMap& fused, const FeatureMap& labels);

struct LossParts {
    double rgb = 0, feature = 0, fusion = 0;
};
double total_loss(const LossParts& parts, const StagePoint& sp);

// ---- optimizer ----

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t steps = 0;
    std::vector<ad::ParamStore::Entry> m, v;

    void init(const ad::ParamStore& params);
    bool initialized() const { return !m.empty(); }
    void step(ad::ParamStore& params, const ad::GradRecord& grads, double lr);
};

// ---- training loop ----

struct LogRow {
    int epoch = 0;
    int stage = 0;
    double L_rgb = 0, L_f = 0, L_fusion = 0;
    double lr = 0;
    double heldout_psnr = 0;
};

// Everything needed to stop and resume a run mid-schedule.
struct TrainState {
    ad::ParamStore params;
    features::FusionState fusion;
    Adam opt;
    int epoch = 0;
    std::uint64_t rng_state = 0;
};

TrainState init_train_state(const field::FieldConfig& fcfg, const TrainConfig& cfg);

struct TrainResult {
    std::vector<LogRow> log;
};

// Runs epochs [state.epoch, T1+T2+T3), mutating `state` in place so a
// checkpointed state resumes with an identical loss curve. Throws
// std::runtime_error naming the epoch if the loss goes non-finite.
TrainResult train_nefes(const Dataset& data, const TrainConfig& cfg,
                        const render::RendererConfig& rcfg, const field::FieldConfig& fcfg,
                        const features::ExtractorParams& extractor, TrainState& state,
                        int max_epochs = -1);

// Gradients of every parameter bound on the tape, in ParamStore order.
ad::GradRecord collect_grads(const ad::Tape& t, const field::Binding& b,
                             const ad::ParamStore& params);

// Deterministic full-frame color render at the label-grid resolution
// (used for held-out PSNR).
ImageBuffer render_color_image(const lie::Pose& pose, const lie::CameraIntrinsics& intr,
                               const ad::ParamStore& params, const field::FieldConfig& fcfg,
                               const render::RendererConfig& rcfg, const Tensor* histogram);

}  // namespace nefes::train
