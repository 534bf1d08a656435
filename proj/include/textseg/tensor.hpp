#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace textseg {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct Node;
}

// Dense row-major tensor of 64-bit reals, recorded on a reverse-mode tape.
// A Tensor is a cheap handle; the node it points to is immutable after the
// forward op that created it (gradients and leaf parameter updates are the
// two sanctioned mutations).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const;
    int dim(int i) const;
    int64_t numel() const;
    bool requires_grad() const;

    const std::vector<double>& data() const;
    // In-place mutation is reserved for leaves (parameter updates between
    // graphs) and for finite-difference probes.
    std::vector<double>& mutable_data();

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;
    double at(std::initializer_list<int> idx) const;

    std::shared_ptr<detail::Node> node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;

    friend Tensor wrap_node(std::shared_ptr<detail::Node>);
};

Tensor wrap_node(std::shared_ptr<detail::Node> n);

// ---- recorded ops ------------------------------------------------------
// Elementwise ops accept equal shapes, or a single-element b broadcast over a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k] x [k,n]
Tensor add_row_bias(const Tensor& x, const Tensor& bias);  // [m,n] + [n]

// x [N,Cin,H,W], w [Cout,Cin,kh,kw], bias [Cout]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// Adjoint of conv2d. x [N,Cin,H,W], w [Cin,Cout,kh,kw], bias [Cout];
// output H' = (H-1)*stride - 2*pad + kh.
Tensor transpose_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);      // [N,Ca,H,W]+[N,Cb,H,W]
Tensor slice_channels(const Tensor& x, int c_begin, int c_end);

Tensor sum(const Tensor& x);             // -> scalar [1]
Tensor mean(const Tensor& x);            // -> scalar [1]
Tensor sum_per_sample(const Tensor& x);  // [N,...] -> [N]

// ---- backward ----------------------------------------------------------
// Seeds d(loss)=1 and walks the recorded graph once in reverse creation
// order. Gradients of every node reachable from `loss` are overwritten, not
// accumulated across calls.
void backward(const Tensor& loss);
void zero_all_grads(const Tensor& root);

// ---- finite-difference oracle ------------------------------------------
// Central differences against the analytic gradient. Error metric per
// coordinate: |a - n| / max(1, |a|, |n|); returns the max.
double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                             double h = 1e-4);

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
    int64_t coords_skipped = 0;  // kink_filter rejections (0 when the filter is off)
};

// Multi-leaf variant: `f` rebuilds the graph from the given leaves, whose
// data is perturbed in place. `max_coords_per_leaf` < 0 checks everything;
// otherwise an evenly strided subset is probed (deterministic).
//
// kink_filter makes the oracle honest on ReLU graphs: a probe step that
// crosses an activation kink invalidates the central difference at that
// coordinate, so each coordinate is estimated at step h and h/2 and dropped
// (counted in coords_skipped) when the two disagree beyond O(h^2). Callers
// should assert coords_checked stayed large enough to mean something.
GradCheckResult gradcheck(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                          double h = 1e-4, int64_t max_coords_per_leaf = -1,
                          bool kink_filter = false);

}  // namespace textseg
