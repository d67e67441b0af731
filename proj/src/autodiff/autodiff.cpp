#include "nefes/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "nefes/kernels.hpp"
#include "nefes/parallel.hpp"

namespace nefes::ad {

using kern::active;

namespace {

// row-partitioned gemm wrappers; below this flop count the thread spawn
// costs more than the multiply
constexpr std::size_t kParGemmFlops = std::size_t(1) << 21;

void gemm_nn_par(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                 double* C) {
    if (m * k * n < kParGemmFlops || worker_count() == 1) {
        active().gemm_nn(m, k, n, A, B, C);
        return;
    }
    parallel_for_blocks(m, [&](std::size_t, std::size_t b, std::size_t e) {
        active().gemm_nn(e - b, k, n, A + b * k, B, C + b * n);
    });
}

void gemm_nt_par(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                 double* C) {
    if (m * k * n < kParGemmFlops || worker_count() == 1) {
        active().gemm_nt(m, k, n, A, B, C);
        return;
    }
    parallel_for_blocks(m, [&](std::size_t, std::size_t b, std::size_t e) {
        active().gemm_nt(e - b, k, n, A + b * k, B, C + b * n);
    });
}

void gemm_nn_acc_par(std::size_t m, std::size_t k, std::size_t n, const double* A,
                     const double* B, double* C) {
    if (m * k * n < kParGemmFlops || worker_count() == 1) {
        active().gemm_nn_acc(m, k, n, A, B, C);
        return;
    }
    parallel_for_blocks(m, [&](std::size_t, std::size_t b, std::size_t e) {
        active().gemm_nn_acc(e - b, k, n, A + b * k, B, C + b * n);
    });
}

void gemm_nt_acc_par(std::size_t m, std::size_t k, std::size_t n, const double* A,
                     const double* B, double* C) {
    if (m * k * n < kParGemmFlops || worker_count() == 1) {
        active().gemm_nt_acc(m, k, n, A, B, C);
        return;
    }
    parallel_for_blocks(m, [&](std::size_t, std::size_t b, std::size_t e) {
        active().gemm_nt_acc(e - b, k, n, A + b * k, B, C + b * n);
    });
}

// C[m x n] += A^T B with A stored [k x m]: split the contraction dimension
// into per-block partials reduced in block order, so results are stable for
// a fixed worker count
void gemm_tn_acc_par(std::size_t m, std::size_t k, std::size_t n, const double* A,
                     const double* B, double* C) {
    if (m * k * n < kParGemmFlops || worker_count() == 1) {
        active().gemm_tn_acc(m, k, n, A, B, C);
        return;
    }
    const std::size_t blocks = std::min(worker_count(), k);
    std::vector<std::vector<double>> partial(blocks);
    parallel_for_blocks(k, [&](std::size_t blk, std::size_t b, std::size_t e) {
        partial[blk].assign(m * n, 0.0);
        active().gemm_tn_acc(m, e - b, n, A + b * m, B + b * n, partial[blk].data());
    });
    for (const auto& p : partial)
        if (!p.empty()) active().axpy(1.0, p.data(), C, m * n);
}

}  // namespace

// ---------------------------------------------------------------- ParamStore

int ParamStore::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return static_cast<int>(i);
    return -1;
}

void ParamStore::add(const std::string& name, Tensor value) {
    if (index_of(name) >= 0) throw std::invalid_argument("ParamStore: duplicate name " + name);
    entries_.push_back({name, std::move(value)});
}

bool ParamStore::has(const std::string& name) const { return index_of(name) >= 0; }

Tensor& ParamStore::get(const std::string& name) {
    int i = index_of(name);
    if (i < 0) throw std::invalid_argument("ParamStore: unknown name " + name);
    return entries_[i].value;
}

const Tensor& ParamStore::get(const std::string& name) const {
    int i = index_of(name);
    if (i < 0) throw std::invalid_argument("ParamStore: unknown name " + name);
    return entries_[i].value;
}

std::size_t ParamStore::total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

bool ParamStore::all_finite() const {
    for (const auto& e : entries_)
        if (!e.value.all_finite()) return false;
    return true;
}

Tensor* GradRecord::find(const std::string& name) {
    for (auto& e : grads)
        if (e.name == name) return &e.value;
    return nullptr;
}

const Tensor* GradRecord::find(const std::string& name) const {
    for (const auto& e : grads)
        if (e.name == name) return &e.value;
    return nullptr;
}

bool GradRecord::all_finite() const {
    for (const auto& e : grads)
        if (!e.value.all_finite()) return false;
    if (twist)
        for (double v : *twist)
            if (!std::isfinite(v)) return false;
    return true;
}

void GradRecord::axpy(double s, const GradRecord& other) {
    for (const auto& e : other.grads) {
        Tensor* mine = find(e.name);
        if (!mine) {
            grads.push_back(e);
            active().scale(s, grads.back().value.data(), grads.back().value.size());
            continue;
        }
        if (!mine->same_shape(e.value)) throw std::invalid_argument("GradRecord: shape mismatch");
        active().axpy(s, e.value.data(), mine->data(), mine->size());
    }
    if (other.twist) {
        if (!twist) twist = std::array<double, 6>{};
        for (int i = 0; i < 6; ++i) (*twist)[i] += s * (*other.twist)[i];
    }
}

// ---------------------------------------------------------------------- Tape

Var Tape::leaf(Tensor value, bool requires_grad, const char* name) {
    return make_node(std::move(value), requires_grad, name, nullptr);
}

Var Tape::make_node(Tensor value, bool requires_grad, const char* opname,
                    std::function<void(Tape&)> backward) {
    if (!value.all_finite())
        throw std::runtime_error(std::string("non-finite value produced by op '") + opname + "'");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.opname = opname;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::grad(Var v) const {
    static const Tensor empty;
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? empty : n.grad;
}

Tensor& Tape::grad_buf(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor(n.value.rows(), n.value.cols(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (nodes_[loss.id].value.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    for (auto& n : nodes_) n.grad = Tensor();
    grad_buf(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        if (!n.grad.all_finite())
            throw std::runtime_error(std::string("non-finite gradient at op '") + n.opname + "'");
        n.backward(*this);
    }
}

// ----------------------------------------------------------------- helpers

namespace {

bool rg(Tape& t, Var a) { return t.requires_grad(a); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Each op's backward lambda needs its own output Var to read the upstream
// gradient. The lambda captures a shared cell that is filled in right after
// node creation; backward never runs during construction, so the cell is
// always set before use.
struct OutId {
    std::shared_ptr<int> cell = std::make_shared<int>(-1);
    Var get() const { return Var{*cell}; }
};

Var finish(Tape& t, Tensor value, bool need, const char* name,
           const OutId& out, std::function<void(Tape&)> fn) {
    Var v = t.make_node(std::move(value), need, name, need ? std::move(fn) : nullptr);
    *out.cell = v.id;
    return v;
}

}  // namespace

// ------------------------------------------------------------- basic ops


Var add(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    check_same_shape(x, y, "add");
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
    bool need = rg(t, a) || rg(t, b);
    OutId out;
    return finish(t, std::move(z), need, "add", out, [a, b, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        if (tp.requires_grad(a)) active().axpy(1.0, g.data(), tp.grad_buf(a).data(), g.size());
        if (tp.requires_grad(b)) active().axpy(1.0, g.data(), tp.grad_buf(b).data(), g.size());
    });
}

Var sub(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    check_same_shape(x, y, "sub");
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - y[i];
    bool need = rg(t, a) || rg(t, b);
    OutId out;
    return finish(t, std::move(z), need, "sub", out, [a, b, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        if (tp.requires_grad(a)) active().axpy(1.0, g.data(), tp.grad_buf(a).data(), g.size());
        if (tp.requires_grad(b)) active().axpy(-1.0, g.data(), tp.grad_buf(b).data(), g.size());
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    check_same_shape(x, y, "mul");
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] * y[i];
    bool need = rg(t, a) || rg(t, b);
    OutId out;
    return finish(t, std::move(z), need, "mul", out, [a, b, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        const Tensor& y = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = s * x[i];
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "scale", out, [a, s, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        active().axpy(s, g.data(), tp.grad_buf(a).data(), g.size());
    });
}

Var add_scalar(Tape& t, Var a, double s) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + s;
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "add_scalar", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        active().axpy(1.0, g.data(), tp.grad_buf(a).data(), g.size());
    });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var leaky_relu(Tape& t, Var a, double slope) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] > 0 ? x[i] : slope * x[i];
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "leaky_relu", out, [a, out, slope](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (x[i] > 0 ? 1.0 : slope) * g[i];
    });
}

Var relu(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] > 0 ? x[i] : 0.0;
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "relu", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0) ga[i] += g[i];
    });
}

Var sigmoid(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i)
        z[i] = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                         : std::exp(x[i]) / (1.0 + std::exp(x[i]));
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "sigmoid", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& y = tp.value(out.get());
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var softplus(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i)
        z[i] = x[i] > 30 ? x[i] : std::log1p(std::exp(-std::abs(x[i]))) + std::max(x[i], 0.0);
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "softplus", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double s = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                 : std::exp(x[i]) / (1.0 + std::exp(x[i]));
            ga[i] += g[i] * s;
        }
    });
}

Var exp_(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = std::exp(x[i]);
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "exp", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& y = tp.value(out.get());
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
}

Var log_(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = std::log(x[i]);
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "log", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    });
}

Var square(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] * x[i];
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "square", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * x[i];
    });
}

Var matmul(Tape& t, Var x, Var w) {
    const Tensor& a = t.value(x);
    const Tensor& b = t.value(w);
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
    Tensor y(a.rows(), b.cols());
    gemm_nn_par(a.rows(), a.cols(), b.cols(), a.data(), b.data(), y.data());
    bool need = rg(t, x) || rg(t, w);
    OutId out;
    return finish(t, std::move(y), need, "matmul", out, [x, w, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& a = tp.value(x);
        const Tensor& b = tp.value(w);
        if (tp.requires_grad(x))  // dA += g * B^T
            gemm_nt_acc_par(a.rows(), b.cols(), a.cols(), g.data(), b.data(),
                                 tp.grad_buf(x).data());
        if (tp.requires_grad(w))  // dB += A^T * g
            gemm_tn_acc_par(a.cols(), a.rows(), b.cols(), a.data(), g.data(),
                                 tp.grad_buf(w).data());
    });
}

Var matmul_nt(Tape& t, Var x, Var w) {
    const Tensor& a = t.value(x);
    const Tensor& b = t.value(w);  // [n,k]
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    Tensor y(a.rows(), b.rows());
    gemm_nt_par(a.rows(), a.cols(), b.rows(), a.data(), b.data(), y.data());
    bool need = rg(t, x) || rg(t, w);
    OutId out;
    return finish(t, std::move(y), need, "matmul_nt", out, [x, w, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());  // [m,n]
        const Tensor& a = tp.value(x);         // [m,k]
        const Tensor& b = tp.value(w);         // [n,k]
        if (tp.requires_grad(x))  // dA += g * B
            gemm_nn_acc_par(a.rows(), b.rows(), a.cols(), g.data(), b.data(),
                                 tp.grad_buf(x).data());
        if (tp.requires_grad(w))  // dB += g^T * A
            gemm_tn_acc_par(b.rows(), a.rows(), a.cols(), g.data(), a.data(),
                                 tp.grad_buf(w).data());
    });
}

Var add_rowvec(Tape& t, Var x, Var b) {
    const Tensor& a = t.value(x);
    const Tensor& v = t.value(b);
    if (v.rows() != 1 || v.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: bias shape mismatch");
    Tensor y(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) y(r, c) = a(r, c) + v[c];
    bool need = rg(t, x) || rg(t, b);
    OutId out;
    return finish(t, std::move(y), need, "add_rowvec", out, [x, b, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        if (tp.requires_grad(x))
            active().axpy(1.0, g.data(), tp.grad_buf(x).data(), g.size());
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
        }
    });
}

Var affine(Tape& t, Var x, Var w, Var b) { return add_rowvec(t, matmul(t, x, w), b); }

Var concat_cols(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.rows() != y.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Tensor z(x.rows(), x.cols() + y.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) z(r, c) = x(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) z(r, x.cols() + c) = y(r, c);
    }
    bool need = rg(t, a) || rg(t, b);
    OutId out;
    return finish(t, std::move(z), need, "concat_cols", out, [a, b, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const std::size_t ca = tp.value(a).cols();
        const std::size_t cb = tp.value(b).cols();
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < ca; ++c) ga(r, c) += g(r, c);
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < cb; ++c) gb(r, c) += g(r, ca + c);
        }
    });
}

Var slice_cols(Tape& t, Var a, std::size_t c0, std::size_t c1) {
    const Tensor& x = t.value(a);
    if (c1 > x.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    Tensor z(x.rows(), c1 - c0);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = c0; c < c1; ++c) z(r, c - c0) = x(r, c);
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "slice_cols", out, [a, c0, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c0 + c) += g(r, c);
    });
}

Var reshape(Tape& t, Var a, std::size_t rows, std::size_t cols) {
    const Tensor& x = t.value(a);
    if (rows * cols != x.size()) throw std::invalid_argument("reshape: size mismatch");
    Tensor z(rows, cols);
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i];
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "reshape", out, [a, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        active().axpy(1.0, g.data(), tp.grad_buf(a).data(), g.size());
    });
}

Var repeat_rows(Tape& t, Var a, std::size_t times) {
    const Tensor& x = t.value(a);
    Tensor z(x.rows() * times, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t k = 0; k < times; ++k)
            for (std::size_t c = 0; c < x.cols(); ++c) z(r * times + k, c) = x(r, c);
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "repeat_rows", out, [a, times, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t k = 0; k < times; ++k)
                for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r * times + k, c);
    });
}

Var mul_colvec(Tape& t, Var a, Var s) {
    const Tensor& x = t.value(a);
    const Tensor& v = t.value(s);
    if (v.rows() != x.rows() || v.cols() != 1)
        throw std::invalid_argument("mul_colvec: scale shape mismatch");
    Tensor z(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) z(r, c) = x(r, c) * v[r];
    bool need = rg(t, a) || rg(t, s);
    OutId out;
    return finish(t, std::move(z), need, "mul_colvec", out, [a, s, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        const Tensor& v = tp.value(s);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * v[r];
        }
        if (tp.requires_grad(s)) {
            Tensor& gs = tp.grad_buf(s);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                double acc = 0;
                for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * x(r, c);
                gs[r] += acc;
            }
        }
    });
}

Var mul_rowvec(Tape& t, Var a, Var s) {
    const Tensor& x = t.value(a);
    const Tensor& v = t.value(s);
    if (v.rows() != 1 || v.cols() != x.cols())
        throw std::invalid_argument("mul_rowvec: scale shape mismatch");
    Tensor z(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) z(r, c) = x(r, c) * v[c];
    bool need = rg(t, a) || rg(t, s);
    OutId out;
    return finish(t, std::move(z), need, "mul_rowvec", out, [a, s, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& x = tp.value(a);
        const Tensor& v = tp.value(s);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * v[c];
        }
        if (tp.requires_grad(s)) {
            Tensor& gs = tp.grad_buf(s);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gs[c] += g(r, c) * x(r, c);
        }
    });
}

Var sum_all(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z = Tensor::scalar(active().sum(x.data(), x.size()));
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "sum_all", out, [a, out](Tape& tp) {
        const double g = tp.grad(out.get())[0];
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var mean_all(Tape& t, Var a) {
    const double inv = 1.0 / static_cast<double>(t.value(a).size());
    return scale(t, sum_all(t, a), inv);
}

Var mean_rows(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    Tensor z(1, x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) z[c] += x(r, c);
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (std::size_t c = 0; c < x.cols(); ++c) z[c] *= inv;
    bool need = rg(t, a);
    OutId out;
    return finish(t, std::move(z), need, "mean_rows", out, [a, inv, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += inv * g[c];
    });
}

Var stop_gradient(Tape& t, Var a) {
    Tensor copy = t.value(a);
    return t.make_node(std::move(copy), false, "stop_gradient", nullptr);
}

// ------------------------------------------------------ positional encoding

Tensor positional_encode_fwd(const Tensor& x, int L) {
    const std::size_t m = x.rows(), d = x.cols();
    Tensor y(m, d * (1 + 2 * L));
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const double v = x(r, c);
            y(r, c) = v;
            double s = std::sin(M_PI * v);
            double co = std::cos(M_PI * v);
            for (int k = 0; k < L; ++k) {
                y(r, d + 2 * k * d + c) = s;
                y(r, d + (2 * k + 1) * d + c) = co;
                const double s2 = 2.0 * s * co;
                co = 1.0 - 2.0 * s * s;
                s = s2;
            }
        }
    }
    return y;
}

Var positional_encode(Tape& t, Var x, int L) {
    Tensor y = positional_encode_fwd(t.value(x), L);
    bool need = rg(t, x);
    OutId out;
    return finish(t, std::move(y), need, "positional_encode", out, [x, L, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& y = tp.value(out.get());
        Tensor& gx = tp.grad_buf(x);
        const std::size_t d = gx.cols();
        for (std::size_t r = 0; r < gx.rows(); ++r)
            for (std::size_t c = 0; c < d; ++c) {
                double acc = g(r, c);  // identity part
                double freq = M_PI;
                for (int k = 0; k < L; ++k) {
                    const double s = y(r, d + 2 * k * d + c);
                    const double co = y(r, d + (2 * k + 1) * d + c);
                    acc += g(r, d + 2 * k * d + c) * co * freq;
                    acc -= g(r, d + (2 * k + 1) * d + c) * s * freq;
                    freq *= 2.0;
                }
                gx(r, c) += acc;
            }
    });
}

// -------------------------------------------------------------- compositing

Var combined_weights(Tape& t, Var sigma_s, Var sigma_t, const Tensor& delta) {
    const Tensor& ss = t.value(sigma_s);
    const Tensor& st = t.value(sigma_t);
    check_same_shape(ss, st, "combined_weights");
    check_same_shape(ss, delta, "combined_weights(delta)");
    const std::size_t R = ss.rows(), S = ss.cols();
    Tensor w(R, 2 * S + 1);
    for (std::size_t r = 0; r < R; ++r) {
        double logT = 0.0;
        for (std::size_t i = 0; i < S; ++i) {
            const double T = std::exp(logT);
            const double ds = ss(r, i) * delta(r, i);
            const double dt = st(r, i) * delta(r, i);
            w(r, i) = T * (1.0 - std::exp(-ds));
            w(r, S + i) = T * (1.0 - std::exp(-dt));
            logT -= ds + dt;
        }
        w(r, 2 * S) = std::exp(logT);  // residual transmittance
    }
    bool need = rg(t, sigma_s) || rg(t, sigma_t);
    Tensor delta_copy = delta;
    OutId out;
    return finish(t, std::move(w), need, "combined_weights", out,
                  [sigma_s, sigma_t, d = std::move(delta_copy), out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& w = tp.value(out.get());
        const Tensor& ss = tp.value(sigma_s);
        const Tensor& st = tp.value(sigma_t);
        const std::size_t R = ss.rows(), S = ss.cols();
        const bool ns = tp.requires_grad(sigma_s);
        const bool nt = tp.requires_grad(sigma_t);
        Tensor* gs = ns ? &tp.grad_buf(sigma_s) : nullptr;
        Tensor* gt = nt ? &tp.grad_buf(sigma_t) : nullptr;
        for (std::size_t r = 0; r < R; ++r) {
            // suffix = sum_{k>i} (ws_k gws_k + wt_k gwt_k) + resid*gres
            double suffix = w(r, 2 * S) * g(r, 2 * S);
            // recompute T_i forward values from weights:
            // T_i = w_i/(1-exp(-ds)) is ill-conditioned; recompute by scan.
            std::vector<double> T(S);
            double logT = 0.0;
            for (std::size_t i = 0; i < S; ++i) {
                T[i] = std::exp(logT);
                logT -= (ss(r, i) + st(r, i)) * d(r, i);
            }
            for (std::size_t i = S; i-- > 0;) {
                const double ds = ss(r, i) * d(r, i);
                const double dt = st(r, i) * d(r, i);
                if (ns)
                    (*gs)(r, i) += d(r, i) * (T[i] * std::exp(-ds) * g(r, i) - suffix);
                if (nt)
                    (*gt)(r, i) += d(r, i) * (T[i] * std::exp(-dt) * g(r, S + i) - suffix);
                suffix += w(r, i) * g(r, i) + w(r, S + i) * g(r, S + i);
            }
        }
    });
}

Var static_weights(Tape& t, Var sigma_s, const Tensor& delta) {
    const Tensor& ss = t.value(sigma_s);
    check_same_shape(ss, delta, "static_weights(delta)");
    const std::size_t R = ss.rows(), S = ss.cols();
    Tensor w(R, S);
    for (std::size_t r = 0; r < R; ++r) {
        double logT = 0.0;
        for (std::size_t i = 0; i < S; ++i) {
            const double ds = ss(r, i) * delta(r, i);
            w(r, i) = std::exp(logT) * (1.0 - std::exp(-ds));
            logT -= ds;
        }
    }
    bool need = rg(t, sigma_s);
    Tensor delta_copy = delta;
    OutId out;
    return finish(t, std::move(w), need, "static_weights", out,
                  [sigma_s, d = std::move(delta_copy), out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& w = tp.value(out.get());
        const Tensor& ss = tp.value(sigma_s);
        Tensor& gs = tp.grad_buf(sigma_s);
        const std::size_t R = ss.rows(), S = ss.cols();
        for (std::size_t r = 0; r < R; ++r) {
            std::vector<double> T(S);
            double logT = 0.0;
            for (std::size_t i = 0; i < S; ++i) {
                T[i] = std::exp(logT);
                logT -= ss(r, i) * d(r, i);
            }
            double suffix = 0.0;
            for (std::size_t i = S; i-- > 0;) {
                const double ds = ss(r, i) * d(r, i);
                gs(r, i) += d(r, i) * (T[i] * std::exp(-ds) * g(r, i) - suffix);
                suffix += w(r, i) * g(r, i);
            }
        }
    });
}

Var seg_weighted_sum(Tape& t, Var w, Var v) {
    const Tensor& wt = t.value(w);
    const Tensor& vt = t.value(v);
    const std::size_t R = wt.rows(), S = wt.cols(), C = vt.cols();
    if (vt.rows() != R * S) throw std::invalid_argument("seg_weighted_sum: row mismatch");
    Tensor y(R, C, 0.0);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t i = 0; i < S; ++i)
            active().axpy(wt(r, i), vt.data() + (r * S + i) * C, y.data() + r * C, C);
    bool need = rg(t, w) || rg(t, v);
    OutId out;
    return finish(t, std::move(y), need, "seg_weighted_sum", out, [w, v, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& wt = tp.value(w);
        const Tensor& vt = tp.value(v);
        const std::size_t R = wt.rows(), S = wt.cols(), C = vt.cols();
        if (tp.requires_grad(w)) {
            Tensor& gw = tp.grad_buf(w);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t i = 0; i < S; ++i)
                    gw(r, i) += active().dot(g.data() + r * C, vt.data() + (r * S + i) * C, C);
        }
        if (tp.requires_grad(v)) {
            Tensor& gv = tp.grad_buf(v);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t i = 0; i < S; ++i)
                    active().axpy(wt(r, i), g.data() + r * C, gv.data() + (r * S + i) * C, C);
        }
    });
}

// ------------------------------------------------------------- convolutions

namespace {

struct ConvDims {
    int ho, wo, k2;
};

ConvDims conv_dims(int h, int w, int k, int stride) {
    if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be odd");
    ConvDims d;
    d.ho = (h + stride - 1) / stride;
    d.wo = (w + stride - 1) / stride;
    d.k2 = k * k;
    return d;
}

// im2col with zero padding (pad = k/2), sampling input at stride.
Tensor im2col(const Tensor& x, int h, int w, int k, int stride, const ConvDims& d) {
    const int cin = static_cast<int>(x.cols());
    const int pad = k / 2;
    Tensor p(static_cast<std::size_t>(d.ho) * d.wo, static_cast<std::size_t>(cin) * d.k2, 0.0);
    for (int oy = 0; oy < d.ho; ++oy)
        for (int ox = 0; ox < d.wo; ++ox) {
            double* row = p.data() + (static_cast<std::size_t>(oy) * d.wo + ox) * p.cols();
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const double* src = x.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
                    double* dst = row + (ky * k + kx) * cin;
                    for (int c = 0; c < cin; ++c) dst[c] = src[c];
                }
            }
        }
    return p;
}

void col2im_acc(const Tensor& gp, Tensor& gx, int h, int w, int k, int stride,
                const ConvDims& d) {
    const int cin = static_cast<int>(gx.cols());
    const int pad = k / 2;
    for (int oy = 0; oy < d.ho; ++oy)
        for (int ox = 0; ox < d.wo; ++ox) {
            const double* row = gp.data() + (static_cast<std::size_t>(oy) * d.wo + ox) * gp.cols();
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const double* src = row + (ky * k + kx) * cin;
                    double* dst = gx.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
                    for (int c = 0; c < cin; ++c) dst[c] += src[c];
                }
            }
        }
}

}  // namespace

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int h, int width,
                  int k, int stride) {
    const ConvDims d = conv_dims(h, width, k, stride);
    if (x.rows() != static_cast<std::size_t>(h) * width)
        throw std::invalid_argument("conv2d: spatial dims mismatch");
    if (w.cols() != x.cols() * d.k2) throw std::invalid_argument("conv2d: weight shape");
    Tensor patches = im2col(x, h, width, k, stride, d);
    Tensor y(patches.rows(), w.rows());
    gemm_nt_par(patches.rows(), patches.cols(), w.rows(), patches.data(), w.data(),
                     y.data());
    for (std::size_t r = 0; r < y.rows(); ++r)
        for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += b[c];
    return y;
}

Var conv2d(Tape& t, Var x, Var w, Var b, int h, int width, int k, int stride) {
    const Tensor& xt = t.value(x);
    const Tensor& wt = t.value(w);
    const Tensor& bt = t.value(b);
    const ConvDims d = conv_dims(h, width, k, stride);
    Tensor y = conv2d_fwd(xt, wt, bt, h, width, k, stride);
    bool need = rg(t, x) || rg(t, w) || rg(t, b);
    OutId out;
    return finish(t, std::move(y), need, "conv2d", out,
                  [x, w, b, h, width, k, stride, d, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const Tensor& xt = tp.value(x);
        const Tensor& wt = tp.value(w);
        Tensor patches = im2col(xt, h, width, k, stride, d);
        if (tp.requires_grad(w))  // dW += g^T * patches
            gemm_tn_acc_par(wt.rows(), patches.rows(), patches.cols(), g.data(),
                                 patches.data(), tp.grad_buf(w).data());
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
        }
        if (tp.requires_grad(x)) {
            Tensor gp(patches.rows(), patches.cols());
            gemm_nn_par(g.rows(), wt.rows(), wt.cols(), g.data(), wt.data(), gp.data());
            col2im_acc(gp, tp.grad_buf(x), h, width, k, stride, d);
        }
    });
}

Var batchnorm(Tape& t, Var x, Var gamma, Var beta, BatchNormState& state, bool train) {
    const Tensor& xt = t.value(x);
    const std::size_t N = xt.rows(), C = xt.cols();
    const Tensor& gm = t.value(gamma);
    const Tensor& bt = t.value(beta);
    if (gm.cols() != C || bt.cols() != C) throw std::invalid_argument("batchnorm: shape");

    Tensor mean(1, C, 0.0), var(1, C, 0.0);
    if (train) {
        for (std::size_t r = 0; r < N; ++r)
            for (std::size_t c = 0; c < C; ++c) mean[c] += xt(r, c);
        for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(N);
        for (std::size_t r = 0; r < N; ++r)
            for (std::size_t c = 0; c < C; ++c) {
                const double d = xt(r, c) - mean[c];
                var[c] += d * d;
            }
        for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<double>(N);
        for (std::size_t c = 0; c < C; ++c) {
            state.running_mean[c] =
                (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
            state.running_var[c] =
                (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    Tensor xhat(N, C);
    Tensor y(N, C);
    std::vector<double> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + state.eps);
    for (std::size_t r = 0; r < N; ++r)
        for (std::size_t c = 0; c < C; ++c) {
            xhat(r, c) = (xt(r, c) - mean[c]) * inv_std[c];
            y(r, c) = gm[c] * xhat(r, c) + bt[c];
        }

    bool need = rg(t, x) || rg(t, gamma) || rg(t, beta);
    OutId out;
    return finish(t, std::move(y), need, "batchnorm", out,
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
                   train, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        const std::size_t N = g.rows(), C = g.cols();
        const Tensor& gm = tp.value(gamma);
        if (tp.requires_grad(gamma)) {
            Tensor& gg = tp.grad_buf(gamma);
            for (std::size_t r = 0; r < N; ++r)
                for (std::size_t c = 0; c < C; ++c) gg[c] += g(r, c) * xhat(r, c);
        }
        if (tp.requires_grad(beta)) {
            Tensor& gb = tp.grad_buf(beta);
            for (std::size_t r = 0; r < N; ++r)
                for (std::size_t c = 0; c < C; ++c) gb[c] += g(r, c);
        }
        if (tp.requires_grad(x)) {
            Tensor& gx = tp.grad_buf(x);
            if (!train) {
                for (std::size_t r = 0; r < N; ++r)
                    for (std::size_t c = 0; c < C; ++c)
                        gx(r, c) += g(r, c) * gm[c] * inv_std[c];
            } else {
                std::vector<double> mg(C, 0.0), mgx(C, 0.0);
                for (std::size_t r = 0; r < N; ++r)
                    for (std::size_t c = 0; c < C; ++c) {
                        mg[c] += g(r, c);
                        mgx[c] += g(r, c) * xhat(r, c);
                    }
                for (std::size_t c = 0; c < C; ++c) {
                    mg[c] /= static_cast<double>(N);
                    mgx[c] /= static_cast<double>(N);
                }
                for (std::size_t r = 0; r < N; ++r)
                    for (std::size_t c = 0; c < C; ++c)
                        gx(r, c) += gm[c] * inv_std[c] *
                                    (g(r, c) - mg[c] - xhat(r, c) * mgx[c]);
            }
        }
    });
}

// ------------------------------------------------------------------- losses

Var l1_mean(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    check_same_shape(x, y, "l1_mean");
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - y[i]);
    const double inv = 1.0 / static_cast<double>(x.size());
    bool need = rg(t, a) || rg(t, b);
    OutId out;
    return finish(t, Tensor::scalar(acc * inv), need, "l1_mean", out,
                  [a, b, inv, out](Tape& tp) {
        const double g = tp.grad(out.get())[0] * inv;
        const Tensor& x = tp.value(a);
        const Tensor& y = tp.value(b);
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::size_t i = 0; i < x.size(); ++i)
                ga[i] += g * (x[i] > y[i] ? 1.0 : (x[i] < y[i] ? -1.0 : 0.0));
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::size_t i = 0; i < x.size(); ++i)
                gb[i] -= g * (x[i] > y[i] ? 1.0 : (x[i] < y[i] ? -1.0 : 0.0));
        }
    });
}

Var mse(Tape& t, Var a, const Tensor& b) {
    const Tensor& x = t.value(a);
    check_same_shape(x, b, "mse");
    double acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - b[i];
        acc += d * d;
    }
    const double inv = 1.0 / static_cast<double>(x.rows());
    bool need = rg(t, a);
    Tensor bc = b;
    OutId out;
    return finish(t, Tensor::scalar(acc * inv), need, "mse", out,
                  [a, bc = std::move(bc), inv, out](Tape& tp) {
        const double g = tp.grad(out.get())[0] * inv;
        const Tensor& x = tp.value(a);
        Tensor& ga = tp.grad_buf(a);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * 2.0 * (x[i] - bc[i]);
    });
}

Var spatial_cosine_loss(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    check_same_shape(x, y, "spatial_cosine_loss");
    const std::size_t n = x.rows(), c = x.cols();
    constexpr double kFloor = 1e-12;
    double loss = 0;
    std::vector<double> na(c), nb(c), ip(c);
    for (std::size_t j = 0; j < c; ++j) {
        double sa = 0, sb = 0, sab = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = x(i, j), yi = y(i, j);
            sa += xi * xi;
            sb += yi * yi;
            sab += xi * yi;
        }
        na[j] = std::max(std::sqrt(sa), kFloor);
        nb[j] = std::max(std::sqrt(sb), kFloor);
        ip[j] = sab;
        loss += 1.0 - sab / (na[j] * nb[j]);
    }
    bool need = rg(t, a) || rg(t, b);
    OutId out;
    return finish(t, Tensor::scalar(loss), need, "spatial_cosine_loss", out,
                  [a, b, na = std::move(na), nb = std::move(nb), ip = std::move(ip),
                   out](Tape& tp) {
        const double g = tp.grad(out.get())[0];
        const Tensor& x = tp.value(a);
        const Tensor& y = tp.value(b);
        const std::size_t n = x.rows(), c = x.cols();
        // d/dx_i [ -<x,y>/(|x||y|) ] = -y_i/(|x||y|) + <x,y> x_i/(|x|^3 |y|)
        if (tp.requires_grad(a)) {
            Tensor& ga = tp.grad_buf(a);
            for (std::size_t j = 0; j < c; ++j) {
                const double inv = 1.0 / (na[j] * nb[j]);
                const double coef = ip[j] / (na[j] * na[j] * na[j] * nb[j]);
                for (std::size_t i = 0; i < n; ++i)
                    ga(i, j) += g * (-y(i, j) * inv + coef * x(i, j));
            }
        }
        if (tp.requires_grad(b)) {
            Tensor& gb = tp.grad_buf(b);
            for (std::size_t j = 0; j < c; ++j) {
                const double inv = 1.0 / (na[j] * nb[j]);
                const double coef = ip[j] / (nb[j] * nb[j] * nb[j] * na[j]);
                for (std::size_t i = 0; i < n; ++i)
                    gb(i, j) += g * (-x(i, j) * inv + coef * y(i, j));
            }
        }
    });
}

Var rgb_nll(Tape& t, Var color, const Tensor& gt, Var beta, Var sigma_tau,
            double lambda_s) {
    const Tensor& c = t.value(color);
    check_same_shape(c, gt, "rgb_nll");
    const Tensor& bt = t.value(beta);
    if (bt.rows() != c.rows() || bt.cols() != 1)
        throw std::invalid_argument("rgb_nll: beta shape");
    const Tensor& stv = t.value(sigma_tau);
    if (stv.rows() != c.rows()) throw std::invalid_argument("rgb_nll: sigma_tau shape");
    const std::size_t R = c.rows(), K = stv.cols();
    double acc = 0;
    for (std::size_t r = 0; r < R; ++r) {
        double res2 = 0;
        for (std::size_t j = 0; j < c.cols(); ++j) {
            const double d = gt(r, j) - c(r, j);
            res2 += d * d;
        }
        const double b2 = bt[r] * bt[r];
        double sp = 0;
        for (std::size_t k = 0; k < K; ++k) sp += stv(r, k);
        acc += res2 / (2.0 * b2) + 0.5 * std::log(b2) +
               (lambda_s / static_cast<double>(K)) * sp;
    }
    const double inv = 1.0 / static_cast<double>(R);
    bool need = rg(t, color) || rg(t, beta) || rg(t, sigma_tau);
    Tensor gtc = gt;
    OutId out;
    return finish(t, Tensor::scalar(acc * inv), need, "rgb_nll", out,
                  [color, beta, sigma_tau, gtc = std::move(gtc), lambda_s, inv,
                   out](Tape& tp) {
        const double g = tp.grad(out.get())[0] * inv;
        const Tensor& c = tp.value(color);
        const Tensor& bt = tp.value(beta);
        const Tensor& stv = tp.value(sigma_tau);
        const std::size_t R = c.rows(), K = stv.cols();
        if (tp.requires_grad(color)) {
            Tensor& gc = tp.grad_buf(color);
            for (std::size_t r = 0; r < R; ++r) {
                const double b2 = bt[r] * bt[r];
                for (std::size_t j = 0; j < c.cols(); ++j)
                    gc(r, j) += g * (c(r, j) - gtc(r, j)) / b2;
            }
        }
        if (tp.requires_grad(beta)) {
            Tensor& gb = tp.grad_buf(beta);
            for (std::size_t r = 0; r < R; ++r) {
                double res2 = 0;
                for (std::size_t j = 0; j < c.cols(); ++j) {
                    const double d = gtc(r, j) - c(r, j);
                    res2 += d * d;
                }
                gb[r] += g * (-res2 / (bt[r] * bt[r] * bt[r]) + 1.0 / bt[r]);
            }
        }
        if (tp.requires_grad(sigma_tau)) {
            Tensor& gs = tp.grad_buf(sigma_tau);
            const double coef = g * lambda_s / static_cast<double>(K);
            for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += coef;
        }
    });
}

// ----------------------------------------------------------------- bicubic

namespace {

// Catmull-Rom weights for fractional offset f in [0,1).
inline void catmull_rom(double f, double w[4]) {
    const double f2 = f * f, f3 = f2 * f;
    w[0] = -0.5 * f3 + f2 - 0.5 * f;
    w[1] = 1.5 * f3 - 2.5 * f2 + 1.0;
    w[2] = -1.5 * f3 + 2.0 * f2 + 0.5 * f;
    w[3] = 0.5 * f3 - 0.5 * f2;
}

struct BicubicTap {
    int src;     // clamped source index (flattened)
    double wgt;
};

// Precompute sample taps for each output pixel (up to 16 each).
std::vector<std::vector<BicubicTap>> bicubic_taps(int h, int w, int H, int W) {
    std::vector<std::vector<BicubicTap>> taps(static_cast<std::size_t>(H) * W);
    const double sy = static_cast<double>(h) / H;
    const double sx = static_cast<double>(w) / W;
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    for (int oy = 0; oy < H; ++oy) {
        const double fy = (oy + 0.5) * sy - 0.5;
        const int iy = static_cast<int>(std::floor(fy));
        double wy[4];
        catmull_rom(fy - iy, wy);
        for (int ox = 0; ox < W; ++ox) {
            const double fx = (ox + 0.5) * sx - 0.5;
            const int ix = static_cast<int>(std::floor(fx));
            double wx[4];
            catmull_rom(fx - ix, wx);
            auto& cell = taps[static_cast<std::size_t>(oy) * W + ox];
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) {
                    const int yy = clampi(iy - 1 + a, 0, h - 1);
                    const int xx = clampi(ix - 1 + b, 0, w - 1);
                    cell.push_back({yy * w + xx, wy[a] * wx[b]});
                }
        }
    }
    return taps;
}

}  // namespace

Tensor bicubic_upsample_fwd(const Tensor& x, int h, int w, int H, int W) {
    if (x.rows() != static_cast<std::size_t>(h) * w)
        throw std::invalid_argument("bicubic: spatial dims mismatch");
    const std::size_t C = x.cols();
    auto taps = bicubic_taps(h, w, H, W);
    Tensor y(static_cast<std::size_t>(H) * W, C, 0.0);
    for (std::size_t p = 0; p < taps.size(); ++p)
        for (const auto& tp_ : taps[p])
            active().axpy(tp_.wgt, x.data() + tp_.src * C, y.data() + p * C, C);
    return y;
}

Var bicubic_upsample(Tape& t, Var x, int h, int w, int H, int W) {
    Tensor y = bicubic_upsample_fwd(t.value(x), h, w, H, W);
    bool need = rg(t, x);
    OutId out;
    return finish(t, std::move(y), need, "bicubic_upsample", out,
                  [x, h, w, H, W, out](Tape& tp) {
        const Tensor& g = tp.grad(out.get());
        Tensor& gx = tp.grad_buf(x);
        const std::size_t C = gx.cols();
        auto taps = bicubic_taps(h, w, H, W);
        for (std::size_t p = 0; p < taps.size(); ++p)
            for (const auto& tp_ : taps[p])
                active().axpy(tp_.wgt, g.data() + p * C, gx.data() + tp_.src * C, C);
    });
}

// --------------------------------------------------------- finite differences

double finite_diff_check(const std::function<double(const ParamStore&)>& loss_fn,
                         const ParamStore& params, const GradRecord& analytic,
                         int n_probes, double h, Rng& rng) {
    const std::size_t total = params.total_scalars();
    if (total == 0) return 0.0;
    double max_rel = 0.0;
    for (int p = 0; p < n_probes; ++p) {
        std::size_t flat = rng.uniform_index(total);
        // locate entry
        std::size_t idx = flat;
        const ParamStore::Entry* entry = nullptr;
        for (const auto& e : params.entries()) {
            if (idx < e.value.size()) {
                entry = &e;
                break;
            }
            idx -= e.value.size();
        }
        ParamStore plus = params;
        ParamStore minus = params;
        plus.get(entry->name)[idx] += h;
        minus.get(entry->name)[idx] -= h;
        const double numeric = (loss_fn(plus) - loss_fn(minus)) / (2.0 * h);
        const Tensor* g = analytic.find(entry->name);
        const double an = g ? (*g)[idx] : 0.0;
        const double denom = std::max({std::abs(an), std::abs(numeric), 1e-12});
        max_rel = std::max(max_rel, std::abs(an - numeric) / denom);
    }
    return max_rel;
}

double finite_diff_twist_check(const std::function<double(const std::array<double, 6>&)>& loss_fn,
                               const std::array<double, 6>& analytic, double h) {
    double max_rel = 0.0;
    for (int i = 0; i < 6; ++i) {
        std::array<double, 6> plus{}, minus{};
        plus[i] = h;
        minus[i] = -h;
        const double numeric = (loss_fn(plus) - loss_fn(minus)) / (2.0 * h);
        const double an = analytic[i];
        const double denom = std::max({std::abs(an), std::abs(numeric), 1e-12});
        max_rel = std::max(max_rel, std::abs(an - numeric) / denom);
    }
    return max_rel;
}

}  // namespace nefes::ad
