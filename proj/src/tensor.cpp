#include "textseg/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "textseg/errors.hpp"
#include "textseg/tensor_detail.hpp"

#ifdef TEXTSEG_USE_CBLAS
#include <cblas.h>
#endif

namespace textseg {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

uint64_t next_seq() {
    static std::atomic<uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

#ifndef NDEBUG
void check_finite(const Node& n) {
    for (double v : n.value) assert(std::isfinite(v) && "non-finite value after forward op");
}
#endif

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->seq = next_seq();
    return n;
}

std::shared_ptr<Node> make_op(Shape shape, std::vector<double> value, const char* op,
                              std::vector<std::shared_ptr<Node>> inputs,
                              std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in->requires_grad;
    n->requires_grad = rg;
    if (rg) {
        n->inputs = std::move(inputs);
        n->backprop = std::move(backprop);
    }
    n->seq = next_seq();
#ifndef NDEBUG
    check_finite(*n);
#endif
    return n;
}

}  // namespace detail

using detail::Node;

Tensor wrap_node(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

// ---- Tensor handle -------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return wrap_node(detail::make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    int64_t n = shape_numel(shape);
    return wrap_node(detail::make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " elements");
    return wrap_node(detail::make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return n_->shape; }
int Tensor::dim(int i) const { return n_->shape.at(i); }
int64_t Tensor::numel() const { return n_->numel(); }
bool Tensor::requires_grad() const { return n_->requires_grad; }
const std::vector<double>& Tensor::data() const { return n_->value; }
std::vector<double>& Tensor::mutable_data() { return n_->value; }
bool Tensor::has_grad() const { return n_ && n_->grad.size() == n_->value.size(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw UsageError("grad(): no gradient present; run backward first");
    return n_->grad;
}

void Tensor::zero_grad() {
    if (n_) n_->grad.clear();
}

double Tensor::item() const {
    if (numel() != 1) throw UsageError("item(): tensor has " + std::to_string(numel()) + " elements");
    return n_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = n_->shape;
    if (idx.size() != s.size()) throw UsageError("at(): rank mismatch");
    int64_t flat = 0;
    size_t i = 0;
    for (int v : idx) {
        flat = flat * s[i] + v;
        ++i;
    }
    return n_->value[flat];
}

// ---- GEMM kernel ---------------------------------------------------------
// Row-major C[m,n] = alpha * opA(A) * opB(B) + beta * C.

namespace {

#ifdef TEXTSEG_USE_CBLAS
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
                k, alpha, a, lda, b, ldb, beta, c, ldc);
}
#else
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    constexpr int kb = 64;
    for (int k0 = 0; k0 < k; k0 += kb) {
        int k1 = std::min(k, k0 + kb);
        for (int i = 0; i < m; ++i) {
            for (int kk = k0; kk < k1; ++kk) {
                double av = alpha * (ta ? a[kk * lda + i] : a[i * lda + kk]);
                if (av == 0.0) continue;
                const double* brow = tb ? nullptr : &b[kk * ldb];
                double* crow = &c[i * ldc];
                if (tb) {
                    for (int j = 0; j < n; ++j) crow[j] += av * b[j * ldb + kk];
                } else {
                    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
            }
        }
    }
}
#endif

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace

// ---- elementwise ---------------------------------------------------------

namespace {

enum class EwKind { add, sub, mul, div };

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind, const char* name) {
    bool bscalar = b.numel() == 1 && !same_shape(a, b);
    require(same_shape(a, b) || bscalar,
            std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(av.size());
    auto bval = [&](size_t i) { return bscalar ? bv[0] : bv[i]; };
    switch (kind) {
        case EwKind::add:
            for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bval(i);
            break;
        case EwKind::sub:
            for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bval(i);
            break;
        case EwKind::mul:
            for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bval(i);
            break;
        case EwKind::div:
            for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bval(i);
            break;
    }
    return wrap_node(detail::make_op(
        a.shape(), std::move(out), name, {a.node(), b.node()}, [kind, bscalar](Node& self) {
            auto& ia = *self.inputs[0];
            auto& ib = *self.inputs[1];
            const auto& g = self.grad;
            auto bval = [&](size_t i) { return bscalar ? ib.value[0] : ib.value[i]; };
            if (ia.requires_grad) {
                ia.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) {
                    double d = g[i];
                    if (kind == EwKind::mul) d *= bval(i);
                    if (kind == EwKind::div) d /= bval(i);
                    ia.grad[i] += d;
                }
            }
            if (ib.requires_grad) {
                ib.ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) {
                    double d = 0;
                    switch (kind) {
                        case EwKind::add: d = g[i]; break;
                        case EwKind::sub: d = -g[i]; break;
                        case EwKind::mul: d = g[i] * ia.value[i]; break;
                        case EwKind::div: d = -g[i] * ia.value[i] / (bval(i) * bval(i)); break;
                    }
                    ib.grad[bscalar ? 0 : i] += d;
                }
            }
        }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::div, "div"); }

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data());
    for (double& v : out) v += s;
    return wrap_node(detail::make_op(a.shape(), std::move(out), "add_scalar", {a.node()},
                                     [](Node& self) {
                                         auto& in = *self.inputs[0];
                                         in.ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             in.grad[i] += self.grad[i];
                                     }));
}

Tensor mul_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data());
    for (double& v : out) v *= s;
    return wrap_node(detail::make_op(a.shape(), std::move(out), "mul_scalar", {a.node()},
                                     [s](Node& self) {
                                         auto& in = *self.inputs[0];
                                         in.ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             in.grad[i] += s * self.grad[i];
                                     }));
}

Tensor abs(const Tensor& a) {
    std::vector<double> out(a.data());
    for (double& v : out) v = std::fabs(v);
    // derivative at 0 taken as 0
    return wrap_node(detail::make_op(a.shape(), std::move(out), "abs", {a.node()}, [](Node& self) {
        auto& in = *self.inputs[0];
        in.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double x = in.value[i];
            in.grad[i] += self.grad[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
        }
    }));
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data());
    for (double& v : out) v = v > 0 ? v : 0.0;
    return wrap_node(detail::make_op(a.shape(), std::move(out), "relu", {a.node()}, [](Node& self) {
        auto& in = *self.inputs[0];
        in.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (in.value[i] > 0) in.grad[i] += self.grad[i];
    }));
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.data());
    for (double& v : out) {
        if (v >= 0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    return wrap_node(
        detail::make_op(a.shape(), std::move(out), "sigmoid", {a.node()}, [](Node& self) {
            auto& in = *self.inputs[0];
            in.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                double s = self.value[i];
                in.grad[i] += self.grad[i] * s * (1.0 - s);
            }
        }));
}

// ---- matmul / bias -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2,
            "matmul: expects rank-2 tensors, got " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    require(k == k2, "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0, out.data(), n);
    return wrap_node(detail::make_op(
        {m, n}, std::move(out), "matmul", {a.node(), b.node()}, [m, n, k](Node& self) {
            auto& ia = *self.inputs[0];
            auto& ib = *self.inputs[1];
            if (ia.requires_grad) {
                ia.ensure_grad();  // dA += dC * B^T
                gemm(false, true, m, k, n, 1.0, self.grad.data(), n, ib.value.data(), n, 1.0,
                     ia.grad.data(), k);
            }
            if (ib.requires_grad) {
                ib.ensure_grad();  // dB += A^T * dC
                gemm(true, false, k, n, m, 1.0, ia.value.data(), k, self.grad.data(), n, 1.0,
                     ib.grad.data(), n);
            }
        }));
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require(x.shape().size() == 2 && bias.shape().size() == 1 && x.dim(1) == bias.dim(0),
            "add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
    int m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.data());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += bias.data()[j];
    return wrap_node(detail::make_op(
        x.shape(), std::move(out), "add_row_bias", {x.node(), bias.node()}, [m, n](Node& self) {
            auto& ix = *self.inputs[0];
            auto& ibias = *self.inputs[1];
            if (ix.requires_grad) {
                ix.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) ix.grad[i] += self.grad[i];
            }
            if (ibias.requires_grad) {
                ibias.ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        ibias.grad[j] += self.grad[static_cast<size_t>(i) * n + j];
            }
        }));
}

// ---- convolution ---------------------------------------------------------

namespace {

struct ConvGeom {
    int n, cin, h, w;      // input
    int cout, kh, kw;      // kernel
    int stride, pad;
    int oh, ow;            // output
};

// col is [cin*kh*kw, oh*ow]; src is one sample [cin, h, w].
void im2col(const double* src, const ConvGeom& g, double* col) {
    int ohw = g.oh * g.ow;
    for (int c = 0; c < g.cin; ++c) {
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                double* dst = col + (static_cast<size_t>(c) * g.kh * g.kw + ki * g.kw + kj) * ohw;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.ow, 0.0);
                        dst += g.ow;
                        continue;
                    }
                    const double* srow = src + (static_cast<size_t>(c) * g.h + iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        int ix = ox * g.stride - g.pad + kj;
                        *dst++ = (ix >= 0 && ix < g.w) ? srow[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates col entries back into dst [cin, h, w].
void col2im_add(const double* col, const ConvGeom& g, double* dst) {
    int ohw = g.oh * g.ow;
    for (int c = 0; c < g.cin; ++c) {
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const double* srcp =
                    col + (static_cast<size_t>(c) * g.kh * g.kw + ki * g.kw + kj) * ohw;
                for (int oy = 0; oy < g.oh; ++oy) {
                    int iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) {
                        srcp += g.ow;
                        continue;
                    }
                    double* drow = dst + (static_cast<size_t>(c) * g.h + iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        int ix = ox * g.stride - g.pad + kj;
                        if (ix >= 0 && ix < g.w) drow[ix] += srcp[ox];
                    }
                    srcp += g.ow;
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    require(x.shape().size() == 4 && w.shape().size() == 4 && bias.shape().size() == 1,
            "conv2d: expects x[N,Cin,H,W], w[Cout,Cin,kh,kw], bias[Cout]");
    ConvGeom g;
    g.n = x.dim(0);
    g.cin = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.cout = w.dim(0);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    g.stride = stride;
    g.pad = pad;
    require(w.dim(1) == g.cin, "conv2d: kernel expects " + std::to_string(w.dim(1)) +
                                   " input channels, tensor has " + std::to_string(g.cin));
    require(bias.dim(0) == g.cout, "conv2d: bias/cout mismatch");
    require(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
    require(g.kh >= 1 && g.kw >= 1 && g.kh <= g.h + 2 * pad && g.kw <= g.w + 2 * pad,
            "conv2d: kernel larger than padded input");
    g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
    g.ow = (g.w + 2 * pad - g.kw) / stride + 1;

    int ckk = g.cin * g.kh * g.kw;
    int ohw = g.oh * g.ow;
    std::vector<double> out(static_cast<size_t>(g.n) * g.cout * ohw);
    std::vector<double> col(static_cast<size_t>(ckk) * ohw);
    for (int n = 0; n < g.n; ++n) {
        const double* src = x.data().data() + static_cast<size_t>(n) * g.cin * g.h * g.w;
        double* dst = out.data() + static_cast<size_t>(n) * g.cout * ohw;
        im2col(src, g, col.data());
        gemm(false, false, g.cout, ohw, ckk, 1.0, w.data().data(), ckk, col.data(), ohw, 0.0, dst,
             ohw);
        for (int co = 0; co < g.cout; ++co) {
            double b = bias.data()[co];
            double* row = dst + static_cast<size_t>(co) * ohw;
            for (int i = 0; i < ohw; ++i) row[i] += b;
        }
    }
    return wrap_node(detail::make_op(
        {g.n, g.cout, g.oh, g.ow}, std::move(out), "conv2d", {x.node(), w.node(), bias.node()},
        [g, ckk, ohw](Node& self) {
            auto& ix = *self.inputs[0];
            auto& iw = *self.inputs[1];
            auto& ibias = *self.inputs[2];
            std::vector<double> col(static_cast<size_t>(ckk) * ohw);
            std::vector<double> dcol;
            if (ix.requires_grad) {
                ix.ensure_grad();
                dcol.resize(static_cast<size_t>(ckk) * ohw);
            }
            if (iw.requires_grad) iw.ensure_grad();
            if (ibias.requires_grad) ibias.ensure_grad();
            for (int n = 0; n < g.n; ++n) {
                const double* gout = self.grad.data() + static_cast<size_t>(n) * g.cout * ohw;
                if (iw.requires_grad || ix.requires_grad) {
                    if (iw.requires_grad) {
                        const double* src =
                            ix.value.data() + static_cast<size_t>(n) * g.cin * g.h * g.w;
                        im2col(src, g, col.data());
                        // dW += dOut * col^T
                        gemm(false, true, g.cout, ckk, ohw, 1.0, gout, ohw, col.data(), ohw, 1.0,
                             iw.grad.data(), ckk);
                    }
                    if (ix.requires_grad) {
                        // dcol = W^T * dOut, then scatter
                        gemm(true, false, ckk, ohw, g.cout, 1.0, iw.value.data(), ckk, gout, ohw,
                             0.0, dcol.data(), ohw);
                        double* dst = ix.grad.data() + static_cast<size_t>(n) * g.cin * g.h * g.w;
                        col2im_add(dcol.data(), g, dst);
                    }
                }
                if (ibias.requires_grad) {
                    for (int co = 0; co < g.cout; ++co) {
                        const double* row = gout + static_cast<size_t>(co) * ohw;
                        double s = 0;
                        for (int i = 0; i < ohw; ++i) s += row[i];
                        ibias.grad[co] += s;
                    }
                }
            }
        }));
}

Tensor transpose_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    require(x.shape().size() == 4 && w.shape().size() == 4 && bias.shape().size() == 1,
            "transpose_conv2d: expects x[N,Cin,H,W], w[Cin,Cout,kh,kw], bias[Cout]");
    int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(0) == cin, "transpose_conv2d: kernel expects " + std::to_string(w.dim(0)) +
                                 " input channels, tensor has " + std::to_string(cin));
    require(bias.dim(0) == cout, "transpose_conv2d: bias/cout mismatch");
    require(stride >= 1 && pad >= 0, "transpose_conv2d: invalid stride/pad");
    int oh = (h - 1) * stride - 2 * pad + kh;
    int ow = (wd - 1) * stride - 2 * pad + kw;
    require(oh >= 1 && ow >= 1, "transpose_conv2d: empty output geometry");

    // The output plays the conv-input role in the shared im2col geometry.
    ConvGeom g;
    g.n = n;
    g.cin = cout;  // channels of the large grid
    g.h = oh;
    g.w = ow;
    g.cout = cin;
    g.kh = kh;
    g.kw = kw;
    g.stride = stride;
    g.pad = pad;
    g.oh = h;
    g.ow = wd;

    int ckk = cout * kh * kw;
    int hw = h * wd;
    std::vector<double> out(static_cast<size_t>(n) * cout * oh * ow, 0.0);
    std::vector<double> col(static_cast<size_t>(ckk) * hw);
    for (int i = 0; i < n; ++i) {
        const double* src = x.data().data() + static_cast<size_t>(i) * cin * hw;
        double* dst = out.data() + static_cast<size_t>(i) * cout * oh * ow;
        // col = W^T * x  with W viewed [cin, cout*kh*kw]
        gemm(true, false, ckk, hw, cin, 1.0, w.data().data(), ckk, src, hw, 0.0, col.data(), hw);
        col2im_add(col.data(), g, dst);
        for (int co = 0; co < cout; ++co) {
            double b = bias.data()[co];
            double* row = dst + static_cast<size_t>(co) * oh * ow;
            for (int j = 0; j < oh * ow; ++j) row[j] += b;
        }
    }
    return wrap_node(detail::make_op(
        {n, cout, oh, ow}, std::move(out), "transpose_conv2d", {x.node(), w.node(), bias.node()},
        [g, n, cin, cout, hw, ckk, oh, ow](Node& self) {
            auto& ix = *self.inputs[0];
            auto& iw = *self.inputs[1];
            auto& ibias = *self.inputs[2];
            std::vector<double> col(static_cast<size_t>(ckk) * hw);
            if (ix.requires_grad) ix.ensure_grad();
            if (iw.requires_grad) iw.ensure_grad();
            if (ibias.requires_grad) ibias.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* gout = self.grad.data() + static_cast<size_t>(i) * cout * oh * ow;
                if (ix.requires_grad || iw.requires_grad) {
                    im2col(gout, g, col.data());  // patches of dOut, [cout*kh*kw, hw]
                    if (ix.requires_grad) {
                        // dx += W * col, W viewed [cin, cout*kh*kw]
                        gemm(false, false, cin, hw, ckk, 1.0, iw.value.data(), ckk, col.data(), hw,
                             1.0, ix.grad.data() + static_cast<size_t>(i) * cin * hw, hw);
                    }
                    if (iw.requires_grad) {
                        // dW += x * col^T
                        gemm(false, true, cin, ckk, hw, 1.0,
                             ix.value.data() + static_cast<size_t>(i) * cin * hw, hw, col.data(),
                             hw, 1.0, iw.grad.data(), ckk);
                    }
                }
                if (ibias.requires_grad) {
                    for (int co = 0; co < cout; ++co) {
                        const double* row = gout + static_cast<size_t>(co) * oh * ow;
                        double s = 0;
                        for (int j = 0; j < oh * ow; ++j) s += row[j];
                        ibias.grad[co] += s;
                    }
                }
            }
        }));
}

// ---- shape ops -----------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    require(shape_numel(new_shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    return wrap_node(detail::make_op(std::move(new_shape), std::vector<double>(x.data()), "reshape",
                                     {x.node()}, [](Node& self) {
                                         auto& in = *self.inputs[0];
                                         in.ensure_grad();
                                         for (size_t i = 0; i < self.grad.size(); ++i)
                                             in.grad[i] += self.grad[i];
                                     }));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.shape().size() == 4 && b.shape().size() == 4, "concat_channels: expects NCHW");
    require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> out(static_cast<size_t>(n) * (ca + cb) * plane);
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + static_cast<size_t>(i) * (ca + cb) * plane,
                    a.data().data() + static_cast<size_t>(i) * ca * plane,
                    ca * plane * sizeof(double));
        std::memcpy(out.data() + (static_cast<size_t>(i) * (ca + cb) + ca) * plane,
                    b.data().data() + static_cast<size_t>(i) * cb * plane,
                    cb * plane * sizeof(double));
    }
    return wrap_node(detail::make_op(
        {n, ca + cb, h, w}, std::move(out), "concat_channels", {a.node(), b.node()},
        [n, ca, cb, plane](Node& self) {
            auto& ia = *self.inputs[0];
            auto& ib = *self.inputs[1];
            for (int i = 0; i < n; ++i) {
                const double* g = self.grad.data() + static_cast<size_t>(i) * (ca + cb) * plane;
                if (ia.requires_grad) {
                    ia.ensure_grad();
                    double* d = ia.grad.data() + static_cast<size_t>(i) * ca * plane;
                    for (size_t j = 0; j < ca * plane; ++j) d[j] += g[j];
                }
                if (ib.requires_grad) {
                    ib.ensure_grad();
                    double* d = ib.grad.data() + static_cast<size_t>(i) * cb * plane;
                    const double* gb = g + ca * plane;
                    for (size_t j = 0; j < cb * plane; ++j) d[j] += gb[j];
                }
            }
        }));
}

Tensor slice_channels(const Tensor& x, int c_begin, int c_end) {
    require(x.shape().size() == 4, "slice_channels: expects NCHW");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    require(0 <= c_begin && c_begin < c_end && c_end <= c, "slice_channels: bad channel range");
    int cs = c_end - c_begin;
    size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> out(static_cast<size_t>(n) * cs * plane);
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data() + static_cast<size_t>(i) * cs * plane,
                    x.data().data() + (static_cast<size_t>(i) * c + c_begin) * plane,
                    cs * plane * sizeof(double));
    return wrap_node(detail::make_op(
        {n, cs, h, w}, std::move(out), "slice_channels", {x.node()},
        [n, c, c_begin, cs, plane](Node& self) {
            auto& in = *self.inputs[0];
            in.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* g = self.grad.data() + static_cast<size_t>(i) * cs * plane;
                double* d = in.grad.data() + (static_cast<size_t>(i) * c + c_begin) * plane;
                for (size_t j = 0; j < cs * plane; ++j) d[j] += g[j];
            }
        }));
}

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0;
    for (double v : x.data()) s += v;
    return wrap_node(detail::make_op({1}, {s}, "sum", {x.node()}, [](Node& self) {
        auto& in = *self.inputs[0];
        in.ensure_grad();
        double g = self.grad[0];
        for (double& d : in.grad) d += g;
    }));
}

Tensor mean(const Tensor& x) {
    double s = 0;
    for (double v : x.data()) s += v;
    double inv = 1.0 / static_cast<double>(x.numel());
    return wrap_node(detail::make_op({1}, {s * inv}, "mean", {x.node()}, [inv](Node& self) {
        auto& in = *self.inputs[0];
        in.ensure_grad();
        double g = self.grad[0] * inv;
        for (double& d : in.grad) d += g;
    }));
}

Tensor sum_per_sample(const Tensor& x) {
    require(x.shape().size() >= 1, "sum_per_sample: rank >= 1 required");
    int n = x.dim(0);
    size_t per = static_cast<size_t>(x.numel() / n);
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* p = x.data().data() + i * per;
        double s = 0;
        for (size_t j = 0; j < per; ++j) s += p[j];
        out[i] = s;
    }
    return wrap_node(
        detail::make_op({n}, std::move(out), "sum_per_sample", {x.node()}, [n, per](Node& self) {
            auto& in = *self.inputs[0];
            in.ensure_grad();
            for (int i = 0; i < n; ++i) {
                double g = self.grad[i];
                double* d = in.grad.data() + i * per;
                for (size_t j = 0; j < per; ++j) d[j] += g;
            }
        }));
}

// ---- backward ------------------------------------------------------------

namespace {

std::vector<Node*> collect_graph(Node* root, bool grad_only) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& in : n->inputs)
            if (!grad_only || in->requires_grad) stack.push_back(in.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq < b->seq; });
    return order;
}

}  // namespace

void backward(const Tensor& loss) {
    if (!loss.defined()) throw UsageError("backward: undefined tensor");
    if (loss.numel() != 1)
        throw UsageError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    Node* root = loss.node().get();
    if (!root->requires_grad) return;
    auto order = collect_graph(root, /*grad_only=*/true);
    for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

void zero_all_grads(const Tensor& root) {
    if (!root.defined()) return;
    for (Node* n : collect_graph(root.node().get(), /*grad_only=*/false)) n->grad.clear();
}

// ---- finite differences ----------------------------------------------------

static double rel_err(double a, double n) {
    return std::fabs(a - n) / std::max({1.0, std::fabs(a), std::fabs(n)});
}

double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                             double h) {
    Tensor xv = x;
    if (!xv.requires_grad()) throw UsageError("finite_diff_gradcheck: x must require gradients");
    Tensor y = f(xv);
    backward(y);
    std::vector<double> analytic = xv.grad();
    auto& data = xv.mutable_data();
    double worst = 0.0;
    for (size_t i = 0; i < data.size(); ++i) {
        double orig = data[i];
        data[i] = orig + h;
        double yp = f(xv).item();
        data[i] = orig - h;
        double ym = f(xv).item();
        data[i] = orig;
        double numeric = (yp - ym) / (2.0 * h);
        worst = std::max(worst, rel_err(analytic[i], numeric));
    }
    return worst;
}

GradCheckResult gradcheck(const std::function<Tensor()>& f, std::span<Tensor> leaves, double h,
                          int64_t max_coords_per_leaf, bool kink_filter) {
    Tensor y = f();
    backward(y);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    GradCheckResult res;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].mutable_data();
        int64_t n = static_cast<int64_t>(data.size());
        int64_t count = (max_coords_per_leaf < 0) ? n : std::min<int64_t>(n, max_coords_per_leaf);
        if (count <= 0) continue;
        int64_t step = std::max<int64_t>(1, n / count);
        int64_t done = 0;
        for (int64_t i = 0; i < n && done < count; i += step, ++done) {
            double orig = data[i];
            auto eval_at = [&](double v) {
                data[i] = v;
                return f().item();
            };
            double d1 = (eval_at(orig + h) - eval_at(orig - h)) / (2.0 * h);
            double numeric = d1;
            bool usable = true;
            if (kink_filter) {
                // Central differences quietly go wrong when the step crosses a
                // ReLU kink. A crossing inside either stencil leaves the h and
                // h/2 estimates disagreeing by the size of the error itself,
                // while in smooth regions they agree to O(h^2) — so a second
                // estimate at half step exposes (and rejects) bad coordinates.
                double d2 = (eval_at(orig + h / 2) - eval_at(orig - h / 2)) / h;
                usable = std::fabs(d1 - d2) <=
                         1e-6 * std::max({1.0, std::fabs(d1), std::fabs(d2)});
                numeric = d2;
            }
            data[i] = orig;
            if (!usable) {
                ++res.coords_skipped;
                continue;
            }
            res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[li][i], numeric));
            ++res.coords_checked;
        }
    }
    return res;
}

}  // namespace textseg
