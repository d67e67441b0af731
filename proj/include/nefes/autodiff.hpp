#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nefes/rng.hpp"
#include "nefes/tensor.hpp"

namespace nefes::ad {

// Named, shape-frozen parameter arrays. Entries are registered as
// "<group>.<name>" (e.g. "base_mlp.W0"); group prefixes are the stable
// checkpoint names.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor value;
    };

    void add(const std::string& name, Tensor value);
    bool has(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    std::size_t count() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    std::size_t total_scalars() const;
    bool all_finite() const;

  private:
    std::vector<Entry> entries_;
    int index_of(const std::string& name) const;
};

// Gradients mirroring a ParamStore, plus an optional pose-twist gradient
// (omega xyz, nu xyz).
struct GradRecord {
    std::vector<ParamStore::Entry> grads;
    std::optional<std::array<double, 6>> twist;

    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
    bool all_finite() const;
    // this += s * other (matching entries by name; shapes must agree)
    void axpy(double s, const GradRecord& other);
};

class Tape;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are created by the op functions below; backward()
// walks them in reverse creation order, so gradient accumulation order is
// deterministic.
class Tape {
  public:
    Var leaf(Tensor value, bool requires_grad, const char* name = "leaf");

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    // Gradient buffer (zeros if never written). Valid after backward().
    const Tensor& grad(Var v) const;
    Tensor& grad_buf(Var v);
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    // loss must be 1x1. Clears previous gradients.
    void backward(Var loss);

    // --- internal, used by op implementations ---
    Var make_node(Tensor value, bool requires_grad, const char* opname,
                  std::function<void(Tape&)> backward);
    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        const char* opname = "";
        std::function<void(Tape&)> backward;
    };
    std::vector<Node> nodes_;
};

// ---- elementwise / linear ops ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_scalar(Tape& t, Var a, double s);
Var neg(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var leaky_relu(Tape& t, Var a, double slope = 0.01);
Var sigmoid(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var exp_(Tape& t, Var a);
Var log_(Tape& t, Var a);
Var square(Tape& t, Var a);

// y = x * W   (x: [m,k], W: [k,n])
Var matmul(Tape& t, Var x, Var w);
// y = x * W^T (x: [m,k], W: [n,k])
Var matmul_nt(Tape& t, Var x, Var w);
// y = x + 1*b (b: [1,n] broadcast over rows)
Var add_rowvec(Tape& t, Var x, Var b);
// y = x * W + b
Var affine(Tape& t, Var x, Var w, Var b);

Var concat_cols(Tape& t, Var a, Var b);
Var slice_cols(Tape& t, Var a, std::size_t c0, std::size_t c1);
Var reshape(Tape& t, Var a, std::size_t rows, std::size_t cols);
// each row of a repeated `times` consecutive times
Var repeat_rows(Tape& t, Var a, std::size_t times);
// scale row r of a by s[r] (s: [m,1])
Var mul_colvec(Tape& t, Var a, Var s);
// scale column c of a by s[c] (s: [1,n])
Var mul_rowvec(Tape& t, Var a, Var s);

Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
Var mean_rows(Tape& t, Var a);  // [m,n] -> [1,n]

Var stop_gradient(Tape& t, Var a);

// Positional encoding: [m,d] -> [m, d*(1+2L)], columns
// [x | sin(2^0 pi x) | cos(2^0 pi x) | ... | sin(2^{L-1} pi x) | cos(...)].
Var positional_encode(Tape& t, Var x, int L);
Tensor positional_encode_fwd(const Tensor& x, int L);

// ---- volume rendering quadrature ----
// Combined static+transient compositing weights. sigma_s/sigma_t/delta are
// [R,S]; returns [R, 2S+1]: static weights | transient weights | residual
// transmittance, with T_i = exp(-sum_{j<i} (sig_s+sig_t) delta).
Var combined_weights(Tape& t, Var sigma_s, Var sigma_t, const Tensor& delta);
// Static-only compositing weights, [R,S] -> [R,S].
Var static_weights(Tape& t, Var sigma_s, const Tensor& delta);
// out[r,:] = sum_i w[r,i] * v[r*S+i,:]   (w: [R,S], v: [R*S,C]) -> [R,C]
Var seg_weighted_sum(Tape& t, Var w, Var v);

// ---- convolutions / normalization ----
// x: [H*W, Cin] row-major spatial; weights: [Cout, Cin*k*k]; bias [1,Cout].
// Zero padding such that stride 1 preserves dims; odd k only.
Var conv2d(Tape& t, Var x, Var w, Var b, int h, int width, int k, int stride = 1);
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int h, int width,
                  int k, int stride = 1);

struct BatchNormState {
    Tensor running_mean;  // [1,C]
    Tensor running_var;   // [1,C]
    double eps = 1e-5;
    double momentum = 0.1;
};
// Train mode normalizes with batch statistics and updates `state`;
// eval mode uses the frozen running statistics.
Var batchnorm(Tape& t, Var x, Var gamma, Var beta, BatchNormState& state, bool train);

// ---- losses ----
// mean |a-b| over all elements
Var l1_mean(Tape& t, Var a, Var b);
// mean over rows of ||a-b||^2 (b constant)
Var mse(Tape& t, Var a, const Tensor& b);
// Per-channel spatial cosine loss: sum_i (1 - <a_i,b_i>/(|a_i||b_i|)),
// columns as channels, norms floored at 1e-12.
Var spatial_cosine_loss(Tape& t, Var a, Var b);
// mean over rays of ||c-gt||^2/(2 beta^2) + log(beta^2)/2
//   + (lambda_s/K) sum_k sigma_tau[ray,k]
Var rgb_nll(Tape& t, Var color, const Tensor& gt, Var beta, Var sigma_tau,
            double lambda_s);

// Bicubic (Catmull-Rom, edge-clamped) upsampling of an h x w x C map stored
// as [h*w, C] to H x W.
Var bicubic_upsample(Tape& t, Var x, int h, int w, int H, int W);
Tensor bicubic_upsample_fwd(const Tensor& x, int h, int w, int H, int W);

// ---- finite-difference verification ----
// Central differences on n_probes randomly chosen scalars of `params`;
// relative error denominator max(|analytic|,|numeric|,1e-12).
double finite_diff_check(const std::function<double(const ParamStore&)>& loss_fn,
                         const ParamStore& params, const GradRecord& analytic,
                         int n_probes, double h, Rng& rng);

// Same for a 6-dim twist chart around `loss_fn(eps)` where eps is the twist
// applied to a base pose by the caller.
double finite_diff_twist_check(const std::function<double(const std::array<double, 6>&)>& loss_fn,
                               const std::array<double, 6>& analytic, double h);

}  // namespace nefes::ad
