#pragma once

#include <vector>

#include "textseg/rng.hpp"
#include "textseg/tensor.hpp"

namespace textseg {

// Spatial augmentation parameters. Sampled values stay inside the ranges
// below; hand-built params may use anything.
struct AugParams {
    double angle = 0.0;  // degrees
    double tx = 0.0;     // fraction of width
    double ty = 0.0;     // fraction of height
    double scale = 1.0;
    bool hflip = false;
    bool vflip = false;

    static AugParams identity() { return {}; }
    bool operator==(const AugParams&) const = default;
};

struct AugEnable {
    bool rotate = true;
    bool translate = true;
    bool scale = true;
    bool hflip = true;
    bool vflip = true;

    static AugEnable none() { return {false, false, false, false, false}; }
};

// 2x3 affine map from normalized output coordinates in [-1,1]^2 to
// normalized input coordinates: (u,v) = (m[0][0]x + m[0][1]y + m[0][2], ...).
struct AffineMat {
    double m[2][3] = {{1, 0, 0}, {0, 1, 0}};

    static AffineMat identity() { return {}; }
    bool operator==(const AffineMat&) const = default;
};

// a(b(v)): b applies first.
AffineMat compose(const AffineMat& a, const AffineMat& b);
AffineMat inverse(const AffineMat& a);

// Draws, in a fixed order (angle, tx, ty, scale, hflip, vflip), only the
// components that are enabled: angle U[-15,15] degrees, tx/ty U[-0.10,0.10],
// scale U[0.9,1.1], flips Bernoulli(0.5). Disabled components stay identity
// and consume nothing from the stream.
AugParams sample_aug(Rng& rng, const AugEnable& enable);

// Sampling map for the content transform "flip, then scale, then rotate,
// then translate": the returned matrix applies the inverse steps to output
// coordinates, translate(-t) first, then rotate(-angle), scale(1/s), flip.
AffineMat affine_matrix(const AugParams& p);

enum class WarpMode { bilinear, nearest };

// Backward grid sampling: output pixel (i,j) reads the input at m applied to
// its normalized center, out-of-bounds reads 0, every channel uses the same
// grid. Bilinear is differentiable wrt x; nearest routes the gradient to the
// source pixel. The batched overload gives each sample its own matrix.
Tensor warp(const Tensor& x, const AffineMat& m, WarpMode mode);
Tensor warp(const Tensor& x, const std::vector<AffineMat>& ms, WarpMode mode);

// Eq-style early fusion: image channels first, pseudo channels second.
Tensor fuse_concat(const Tensor& image, const Tensor& pseudo);

// One shared matrix from p: fused tensor warped bilinear, mask warped
// nearest. The batched overload consumes one AugParams per sample.
std::pair<Tensor, Tensor> augment_pair(const Tensor& fused, const Tensor& mask,
                                       const AugParams& p);
std::pair<Tensor, Tensor> augment_pair(const Tensor& fused, const Tensor& mask,
                                       const std::vector<AugParams>& ps);

// Deliberately broken variant for the alignment ablation: image channels
// (first half) and mask are warped, pseudo channels (second half) are left
// untouched, so the pseudo image no longer points at the object.
std::pair<Tensor, Tensor> augment_pair_misaligned(const Tensor& fused, const Tensor& mask,
                                                  const std::vector<AugParams>& ps);

// Bilinear resize with the same half-pixel center convention as warp;
// differentiable wrt x.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

}  // namespace textseg
