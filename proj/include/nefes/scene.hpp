#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nefes/autodiff.hpp"
#include "nefes/dataset.hpp"
#include "nefes/field.hpp"
#include "nefes/image.hpp"
#include "nefes/lie.hpp"
#include "nefes/rng.hpp"

namespace nefes::scene {

struct Primitive {
    enum class Kind { sphere, box } kind = Kind::sphere;
    std::array<double, 3> center{};
    // sphere: size[0] is the radius; box: per-axis half extents
    std::array<double, 3> size{};
    std::array<double, 3> albedo{};
};

struct Distractor {
    Primitive prim;
    std::vector<int> active_view_indices;  // train view indices, set by make_dataset
};

struct SyntheticScene {
    std::vector<Primitive> primitives;
    std::array<double, 3> background_color{0.05, 0.05, 0.09};
    std::array<double, 3> bounds_min{-1, -1, -1};
    std::array<double, 3> bounds_max{1, 1, 1};
    std::vector<Distractor> transient_distractors;

    std::array<double, 3> centroid() const;
    double radius() const;  // bounding-sphere radius of the static primitives
};

struct ExposureJitter {
    std::array<double, 9> gain{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    std::array<double, 3> bias{0, 0, 0};
    std::uint64_t seed = 0;

    bool is_identity() const;
    void apply(ImageBuffer& img) const;  // gain*rgb + bias, clamped to [0,1]
};

// 5-12 seeded primitives with pairwise-distinct albedos plus at least one
// transient distractor (its active views are assigned by make_dataset).
SyntheticScene generate_scene(std::uint64_t seed);

// Analytic nearest-hit ray tracer, Lambertian with a fixed directional light
// and 0.3 ambient; jitter applied last. train_view_index selects which
// transient distractors are visible (-1: none, the test-view setting).
ImageBuffer render_ground_truth(const SyntheticScene& scene, const lie::Pose& pose,
                                const lie::CameraIntrinsics& intr, const ExposureJitter& jitter,
                                int train_view_index = -1);

struct DatasetSplit {
    Dataset data;
    std::vector<ExposureJitter> train_jitter;
    std::vector<ExposureJitter> test_jitter;
};

// Spherical-cap poses (half-angle 60 deg, distance 2-3x scene radius) looking
// at the scene centroid; writes manifest / images/NNNN.png / poses.txt under
// out_dir. jitter_fraction of train images get exposure jitter; every test
// image is jittered from a disjoint gain range.
DatasetSplit make_dataset(const SyntheticScene& scene, int n_train, int n_test,
                          std::uint64_t seed, const std::string& out_dir,
                          double jitter_fraction = 0.5);

DatasetSplit load_dataset(const std::string& dir);

lie::CameraIntrinsics default_intrinsics();

// ---- toy absolute pose regressor ----

struct APRParams {
    ad::ParamStore params;
    int in_h = 0, in_w = 0;  // network input resolution (short side 60)
    std::uint64_t checksum() const;
};

struct APRForward {
    ad::Var t;  // [1,3] translation
    ad::Var q;  // [1,4] unit quaternion (w,x,y,z)
};

APRParams init_apr(const lie::CameraIntrinsics& intr, std::uint64_t seed);

// input: [in_h*in_w, 3] downsampled image. Differentiable end to end.
APRForward apr_forward(ad::Tape& t, const field::Binding& b, ad::Var input, int h, int w);

lie::Pose apr_predict(const ImageBuffer& query, const lie::CameraIntrinsics& intr,
                      const APRParams& apr);

APRParams train_toy_apr(const DatasetSplit& split, int epochs, std::uint64_t seed);

// Training pose whose image is nearest to the query in mean squared RGB
// distance; ties go to the lowest index.
lie::Pose nearest_pose_init(const ImageBuffer& query, const DatasetSplit& split);

}  // namespace nefes::scene
