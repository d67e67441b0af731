#pragma once

#include <array>
#include <optional>
#include <vector>

#include "nefes/autodiff.hpp"
#include "nefes/features.hpp"
#include "nefes/field.hpp"
#include "nefes/image.hpp"
#include "nefes/lie.hpp"

namespace nefes::render {

struct SampleSet {
    std::vector<double> t;      // strictly ascending, within [near, far]
    std::vector<double> delta;  // delta[i] = t[i+1]-t[i], last = far - t[last]
    double near = 0, far = 0;
};

struct RendererConfig {
    int n_coarse = 24;
    int n_fine = 24;
    double near = 0.5;
    double far = 6.0;
    // must match the data's empty-space color or the field is forced to
    // explain background pixels with spurious density
    std::array<double, 3> background_color{0.05, 0.05, 0.09};
    bool stratified_jitter = true;
    int render_short_side = 30;
    int upsample_short_side = 120;

    void validate() const;
    static RendererConfig desk();
    static RendererConfig paper();
};

struct RenderedPixel {
    std::array<double, 3> color{};  // post-ACT
    std::vector<double> feature;    // static-only composite
    double beta = 0;
    double transmittance_residual = 0;
};

// One stratified sample per equal-width bin on [near, far].
SampleSet stratified_samples(const lie::Ray& ray, int n, bool jitter, Rng& rng);

// Inverse-CDF draws from the piecewise-constant PDF over the coarse bins,
// proportional to weights + 1e-5; result is the sorted union with `coarse`.
SampleSet hierarchical_resample(const SampleSet& coarse, const std::vector<double>& weights,
                                int n_fine, Rng& rng);

// ---- batched differentiable rendering core ----

struct RenderBatch {
    ad::Var color;      // [R,3] post-ACT
    ad::Var color_raw;  // [R,3] pre-ACT
    ad::Var feature;    // [R,N_f]
    ad::Var beta;       // [R,1]
    ad::Var residual;   // [R,1] leftover transmittance
    ad::Var sigma_tau;  // [R,S] transient densities at the fine samples
    ad::Var coarse_color;  // [R,3] when has_coarse, else invalid
    Tensor t_fine;      // [R,S] constants used for the quadrature
    Tensor delta_fine;  // [R,S]
};

struct RenderOptions {
    bool jitter = false;
    bool stop_grad_density_in_feature = false;  // training stages 2+
    bool apply_act = true;
};

// origins/dirs: [R,3] tape leaves (differentiable for pose refinement).
// act_out: [1,12] from field::act_forward, or invalid for identity ACT.
RenderBatch render_rays(ad::Tape& t, const field::Binding& b, const field::FieldConfig& fcfg,
                        const RendererConfig& rcfg, ad::Var origins, ad::Var dirs,
                        ad::Var act_out, const RenderOptions& opt, Rng& rng);

// Spec-level single-ray composite over externally supplied samples.
RenderedPixel composite_pixel(const lie::Ray& ray, const SampleSet& samples,
                              const ad::ParamStore& params, const field::FieldConfig& fcfg,
                              const std::array<double, 3>& background,
                              const field::ACTParams& act, double beta_min);

// Rendered output dims for a camera, short side given, aspect preserved.
std::pair<int, int> render_dims(const lie::CameraIntrinsics& intr, int short_side);

struct FeatureMapRender {
    FeatureMap fused;     // post-fusion, bicubically upsampled
    FeatureMap raw;       // pre-fusion rendered features at render resolution
    ImageBuffer color;    // at render resolution
    FeatureMap beta;      // c=1, at render resolution
};

// Deterministic full-frame render (jitter off). The histogram, when given,
// drives the exposure-adaptive color transform.
FeatureMapRender render_feature_map(const lie::Pose& pose, const lie::CameraIntrinsics& intr,
                                    const ad::ParamStore& params,
                                    const field::FieldConfig& fcfg,
                                    const RendererConfig& rcfg,
                                    features::FusionState& fusion_state,
                                    const Tensor* histogram);

// Combined-medium partition check helper: sum_i T_i alpha_i(total) + resid.
double partition_of_unity(const std::vector<double>& sigma_s,
                          const std::vector<double>& sigma_tau,
                          const std::vector<double>& delta);

}  // namespace nefes::render
