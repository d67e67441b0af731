#include "nefes/features.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "nefes/rng.hpp"

namespace nefes::features {

using ad::Tape;
using ad::Var;

std::uint64_t ExtractorParams::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::uint64_t bits;
            double v = t[i];
            std::memcpy(&bits, &v, sizeof bits);
            h ^= bits;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& w : weights) mix(w);
    for (const auto& b : biases) mix(b);
    return h;
}

ExtractorParams make_extractor(std::uint64_t seed, int n_out) {
    ExtractorParams p;
    p.seed = seed;
    p.n_out = n_out;
    Rng rng(seed);
    const int chans[5] = {3, 16, 16, 16, n_out};
    for (int l = 0; l < 4; ++l) {
        const std::size_t fan_in = static_cast<std::size_t>(chans[l]) * 9;
        Tensor w(chans[l + 1], fan_in);
        const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = s * rng.normal();
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(1, chans[l + 1], 0.0);
    }
    return p;
}

FeatureMap extract_features(const ImageBuffer& img, const ExtractorParams& params) {
    Tensor x = img.rgb;
    for (int l = 0; l < 4; ++l) {
        x = ad::conv2d_fwd(x, params.weights[l], params.biases[l], img.h, img.w, 3);
        if (l < 3)
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] < 0) x[i] = 0;
    }
    FeatureMap fm(img.h, img.w, params.n_out);
    fm.data = std::move(x);
    return fm;
}

FusionState make_fusion_state(int n_f) {
    FusionState s;
    s.bn.running_mean = Tensor(1, n_f, 0.0);
    s.bn.running_var = Tensor(1, n_f, 1.0);
    return s;
}

Var fuse_forward(ad::Tape& t, const field::Binding& b, Var color, Var feat, int h, int w,
                 FusionState& state, bool train) {
    // leaky slope keeps the head differentiable everywhere; plain ReLU let
    // whole layers die during stage-3 training, zeroing pose gradients
    Var x = ad::concat_cols(t, color, feat);
    x = ad::leaky_relu(t, ad::conv2d(t, x, b("fusion.W0"), b("fusion.b0"), h, w, 3));
    x = ad::leaky_relu(t, ad::conv2d(t, x, b("fusion.W1"), b("fusion.b1"), h, w, 3));
    x = ad::leaky_relu(t, ad::conv2d(t, x, b("fusion.W2"), b("fusion.b2"), h, w, 3));
    x = ad::conv2d(t, x, b("fusion.W3"), b("fusion.b3"), h, w, 5);
    return ad::batchnorm(t, x, b("fusion.bn_gamma"), b("fusion.bn_beta"), state.bn, train);
}

FeatureMap fuse(const ImageBuffer& color, const FeatureMap& feat,
                const ad::ParamStore& params, FusionState& state, FuseMode mode) {
    if (color.h != feat.h || color.w != feat.w)
        throw std::invalid_argument("fuse: misaligned shapes");
    Tape t;
    field::Binding b = field::bind(t, params, false);
    Var c = t.leaf(color.rgb, false, "color");
    Var f = t.leaf(feat.data, false, "feat");
    Var out = fuse_forward(t, b, c, f, color.h, color.w, state, mode == FuseMode::train);
    FeatureMap r(color.h, color.w, static_cast<int>(t.value(out).cols()));
    r.data = t.value(out);
    return r;
}

FeatureMap bicubic_upsample(const FeatureMap& fm, int short_side) {
    const int cur_short = std::min(fm.h, fm.w);
    if (short_side < cur_short)
        throw std::invalid_argument("bicubic_upsample: target smaller than input");
    const double s = static_cast<double>(short_side) / cur_short;
    const int H = static_cast<int>(std::lround(fm.h * s));
    const int W = static_cast<int>(std::lround(fm.w * s));
    FeatureMap out(H, W, fm.c);
    out.data = ad::bicubic_upsample_fwd(fm.data, fm.h, fm.w, H, W);
    return out;
}

double spatial_cosine_loss(const FeatureMap& a, const FeatureMap& b) {
    if (a.h != b.h || a.w != b.w || a.c != b.c)
        throw std::invalid_argument("spatial_cosine_loss: shape mismatch");
    Tape t;
    Var va = t.leaf(a.data, false, "a");
    Var vb = t.leaf(b.data, false, "b");
    return t.value(ad::spatial_cosine_loss(t, va, vb)).item();
}

}  // namespace nefes::features
