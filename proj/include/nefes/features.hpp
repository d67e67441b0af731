#pragma once

#include <cstdint>
#include <vector>

#include "nefes/autodiff.hpp"
#include "nefes/field.hpp"
#include "nefes/image.hpp"

namespace nefes::features {

// Frozen 2D feature extractor: four stride-1 zero-padded 3x3 convolutions
// (3 -> 16 -> 16 -> 16 -> n_out) with ReLU between layers and none after the
// last. Weights are seeded at creation and never updated.
struct ExtractorParams {
    std::uint64_t seed = 0;
    int n_out = 16;
    std::vector<Tensor> weights;  // [Cout, Cin*9] each
    std::vector<Tensor> biases;   // all zero

    // order-sensitive FNV-style digest of every weight byte
    std::uint64_t checksum() const;
};

ExtractorParams make_extractor(std::uint64_t seed, int n_out);

FeatureMap extract_features(const ImageBuffer& img, const ExtractorParams& params);

// Mutable inference state of the fusion head (frozen outside training).
struct FusionState {
    ad::BatchNormState bn;
};
FusionState make_fusion_state(int n_f);

// Fusion graph: concat(color,[n,3]; feat,[n,NF]) -> 3x3,3x3,3x3 convs (width
// 32, ReLU) -> 5x5 conv -> batchnorm. Spatial extent h x w must match n.
ad::Var fuse_forward(ad::Tape& t, const field::Binding& b, ad::Var color, ad::Var feat,
                     int h, int w, FusionState& state, bool train);

enum class FuseMode { train, eval };
FeatureMap fuse(const ImageBuffer& color, const FeatureMap& feat,
                const ad::ParamStore& params, FusionState& state, FuseMode mode);

FeatureMap bicubic_upsample(const FeatureMap& fm, int short_side);

// Eq.-1-style loss: channels normalized along the spatial direction.
double spatial_cosine_loss(const FeatureMap& a, const FeatureMap& b);

}  // namespace nefes::features
