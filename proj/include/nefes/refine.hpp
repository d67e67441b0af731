#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nefes/autodiff.hpp"
#include "nefes/features.hpp"
#include "nefes/field.hpp"
#include "nefes/image.hpp"
#include "nefes/lie.hpp"
#include "nefes/render.hpp"
#include "nefes/scene.hpp"

namespace nefes::refine {

// Everything a refinement job reads (never writes).
struct NeFeSModel {
    ad::ParamStore params;
    field::FieldConfig fcfg;
    render::RendererConfig rcfg;
    features::FusionState fusion;
    features::ExtractorParams extractor;
};

enum class RefineMode { direct_pose, apr_weights, photometric_sparse, photometric_dense };

struct RefineConfig {
    RefineMode mode = RefineMode::direct_pose;
    int m = 50;
    double lr = 1e-5;     // apr_weights mode
    double lr_R = 0.0087;  // direct_pose / photometric modes
    double lr_t = 0.01;
    int render_short_side = 24;
    int upsample_short_side = 96;
    int n_sparse_rays = 256;
    bool use_fused = true;  // Eq. 1 on fused features; false: raw rendered features
    std::uint64_t seed = 0;

    void validate() const;
    static RefineConfig desk();
    static RefineConfig paper_indoor();   // lr_R=0.0087, lr_t=0.01
    static RefineConfig paper_outdoor();  // lr_R=0.01,   lr_t=0.1
};

struct TraceRow {
    int iter = 0;
    lie::Pose pose;
    double loss = 0;
    double trans_err = 0, rot_err = 0;  // vs ground truth when provided
};

struct RefineTrace {
    std::vector<TraceRow> rows;  // length m+1 unless aborted
    double wall_time_sec = 0;
    bool aborted = false;

    const lie::Pose& final_pose() const { return rows.back().pose; }
};

RefineTrace refine_direct_pose(const ImageBuffer& query, const lie::Pose& init,
                               const NeFeSModel& model, const lie::CameraIntrinsics& intr,
                               const RefineConfig& cfg, const lie::Pose* gt = nullptr);

RefineTrace refine_apr_weights(const ImageBuffer& query, const scene::APRParams& apr,
                               const NeFeSModel& model, const lie::CameraIntrinsics& intr,
                               const RefineConfig& cfg, const lie::Pose* gt = nullptr);

// Photometric baseline: MSE between rendered and query colors, dense over the
// full rendered frame or over n_sparse_rays pixels drawn per iteration.
RefineTrace refine_photometric(const ImageBuffer& query, const lie::Pose& init,
                               const NeFeSModel& model, const lie::CameraIntrinsics& intr,
                               const RefineConfig& cfg, const lie::Pose* gt = nullptr);

// CSV columns: iter,tx,ty,tz,rx,ry,rz,loss,trans_err,rot_err (rotation as
// angle-axis, radians).
void write_trace_csv(const std::string& path, const RefineTrace& trace);

}  // namespace nefes::refine
