#pragma once

#include <array>
#include <string>
#include <unordered_map>

#include "nefes/autodiff.hpp"
#include "nefes/image.hpp"
#include "nefes/tensor.hpp"

namespace nefes::field {

struct FieldConfig {
    int mlp_width = 32;
    int base_depth = 4;  // hidden layers of the base MLP
    int L_x = 6;         // position encoding frequencies
    int L_d = 4;         // direction encoding frequencies
    int N_c = 3;
    int N_f = 16;
    bool has_coarse = true;
    double beta_min = 0.03;
    // axis-aligned normalization box for positions
    std::array<double, 3> bounds_min{-1, -1, -1};
    std::array<double, 3> bounds_max{1, 1, 1};

    void validate() const;
    int pe_x_dim() const { return 3 * (1 + 2 * L_x); }
    int pe_d_dim() const { return 3 * (1 + 2 * L_d); }

    static FieldConfig desk();
    static FieldConfig paper();
};

struct FieldSample {
    double sigma_s = 0;
    std::array<double, 3> rgb_s{};
    std::vector<double> feat;
    double sigma_tau = 0;
    std::array<double, 3> rgb_tau{};
    double beta = 0;
};

struct ACTParams {
    std::array<double, 9> K{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    std::array<double, 3> b{0, 0, 0};
};

// Fresh parameters for all trainable groups: base_mlp, static_head,
// transient_head, act_mlp, fusion (+ coarse_mlp when has_coarse). The ACT
// output layer is zero-initialized with an identity bias so ACT starts as
// the identity transform.
ad::ParamStore init_field_params(const FieldConfig& cfg, std::uint64_t seed);

// Tape bindings for a ParamStore: one leaf per entry.
struct Binding {
    ad::Tape* tape = nullptr;
    std::unordered_map<std::string, ad::Var> vars;
    ad::Var operator()(const std::string& name) const;
};
Binding bind(ad::Tape& t, const ad::ParamStore& params, bool requires_grad);
// Binding that only marks entries under the given group prefixes as
// differentiable.
Binding bind_groups(ad::Tape& t, const ad::ParamStore& params,
                    const std::vector<std::string>& grad_groups);

struct FieldOutputs {
    ad::Var sigma_s;    // [N,1]
    ad::Var rgb_s;      // [N,3]
    ad::Var feat;       // [N,N_f]
    ad::Var sigma_tau;  // [N,1]
    ad::Var rgb_tau;    // [N,3]
    ad::Var beta;       // [N,1]
};

// Batched field forward. x: [N,3] world positions, d: [N,3] unit directions.
FieldOutputs field_forward(ad::Tape& t, const Binding& b, const FieldConfig& cfg,
                           ad::Var x, ad::Var d);

// Coarse network (density + color only); requires cfg.has_coarse.
struct CoarseOutputs {
    ad::Var sigma;  // [N,1]
    ad::Var rgb;    // [N,3]
};
CoarseOutputs coarse_forward(ad::Tape& t, const Binding& b, const FieldConfig& cfg,
                             ad::Var x);

// Single-point convenience evaluation (runs a throwaway tape).
FieldSample evaluate(const std::array<double, 3>& x, const std::array<double, 3>& d,
                     const ad::ParamStore& params, const FieldConfig& cfg);

// ACT head. hist: [1,10] luminance histogram.
ad::Var act_forward(ad::Tape& t, const Binding& b, const Tensor& hist);
ACTParams act_params(const Tensor& hist, const ad::ParamStore& params);

// 10-bin luminance histogram (Y = 0.299R+0.587G+0.114B, equal bins on [0,1],
// Y=1 in the last bin), normalized to sum 1.
Tensor luminance_histogram(const ImageBuffer& img);

}  // namespace nefes::field
