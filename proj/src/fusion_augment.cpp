#include "textseg/fusion_augment.hpp"

#include <cmath>

#include "textseg/errors.hpp"
#include "textseg/tensor_detail.hpp"

namespace textseg {

AffineMat compose(const AffineMat& a, const AffineMat& b) {
    AffineMat r;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j)
            r.m[i][j] = a.m[i][0] * b.m[0][j] + a.m[i][1] * b.m[1][j];
        r.m[i][2] = a.m[i][0] * b.m[0][2] + a.m[i][1] * b.m[1][2] + a.m[i][2];
    }
    return r;
}

AffineMat inverse(const AffineMat& a) {
    double det = a.m[0][0] * a.m[1][1] - a.m[0][1] * a.m[1][0];
    if (det == 0) throw UsageError("inverse: singular affine matrix");
    AffineMat r;
    r.m[0][0] = a.m[1][1] / det;
    r.m[0][1] = -a.m[0][1] / det;
    r.m[1][0] = -a.m[1][0] / det;
    r.m[1][1] = a.m[0][0] / det;
    r.m[0][2] = -(r.m[0][0] * a.m[0][2] + r.m[0][1] * a.m[1][2]);
    r.m[1][2] = -(r.m[1][0] * a.m[0][2] + r.m[1][1] * a.m[1][2]);
    return r;
}

AugParams sample_aug(Rng& rng, const AugEnable& enable) {
    AugParams p;
    if (enable.rotate) p.angle = rng.uniform(-15.0, 15.0);
    if (enable.translate) {
        p.tx = rng.uniform(-0.10, 0.10);
        p.ty = rng.uniform(-0.10, 0.10);
    }
    if (enable.scale) p.scale = rng.uniform(0.9, 1.1);
    if (enable.hflip) p.hflip = rng.bernoulli(0.5);
    if (enable.vflip) p.vflip = rng.bernoulli(0.5);
    return p;
}

AffineMat affine_matrix(const AugParams& p) {
    // Output coordinate v samples the input at  F * (1/s) * R(-angle) * (v - t)
    // with t = (2*tx, 2*ty) in normalized units (a full width is 2 units).
    // angle=0 and scale=1 keep the trig terms exact, so pure flips and pure
    // translations stay exact in floating point.
    double theta = p.angle * std::acos(-1.0) / 180.0;
    double c = std::cos(theta), s = std::sin(theta);
    double inv = 1.0 / p.scale;
    double fx = p.hflip ? -1.0 : 1.0;
    double fy = p.vflip ? -1.0 : 1.0;
    AffineMat m;
    m.m[0][0] = fx * c * inv;
    m.m[0][1] = fx * s * inv;
    m.m[1][0] = -fy * s * inv;
    m.m[1][1] = fy * c * inv;
    double tx = 2.0 * p.tx, ty = 2.0 * p.ty;
    m.m[0][2] = -(m.m[0][0] * tx + m.m[0][1] * ty);
    m.m[1][2] = -(m.m[1][0] * tx + m.m[1][1] * ty);
    return m;
}

namespace {

// Per-sample sampling coefficients in pixel space. For output pixel (i,j),
//   u = a*(j+0.5-W/2) + b*(i+0.5-H/2) + cu
//   v = d*(j+0.5-W/2) + e*(i+0.5-H/2) + cv
// which is the normalized-coordinate map evaluated at pixel centers
// (half-pixel convention), rearranged so that identity gives u == j and
// a horizontal flip gives u == W-1-j bitwise.
struct PixelMap {
    double a, b, cu, d, e, cv;

    PixelMap(const AffineMat& m, int h, int w) {
        double aspect = static_cast<double>(w) / h;
        a = m.m[0][0];
        b = m.m[0][1] * aspect;
        cu = (m.m[0][2] + 1.0) * w * 0.5 - 0.5;
        d = m.m[1][0] / aspect;
        e = m.m[1][1];
        cv = (m.m[1][2] + 1.0) * h * 0.5 - 0.5;
    }
};

void check_warp_input(const Tensor& x, size_t nmats) {
    if (x.shape().size() != 4)
        throw ShapeError("warp: expected NCHW, got " + shape_str(x.shape()));
    if (nmats != 1 && nmats != static_cast<size_t>(x.dim(0)))
        throw ShapeError("warp: " + std::to_string(nmats) + " matrices for batch " +
                         std::to_string(x.dim(0)));
}

}  // namespace

Tensor warp(const Tensor& x, const std::vector<AffineMat>& ms, WarpMode mode) {
    check_warp_input(x, ms.size());
    const int n = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t sample = static_cast<size_t>(k) * plane;

    std::vector<double> out(static_cast<size_t>(n) * sample, 0.0);
    const double* src = x.data().data();
    for (int ni = 0; ni < n; ++ni) {
        PixelMap pm(ms[ms.size() == 1 ? 0 : ni], h, w);
        const double* sp = src + ni * sample;
        double* op = out.data() + ni * sample;
        for (int i = 0; i < h; ++i) {
            double yo = i + 0.5 - h * 0.5;
            for (int j = 0; j < w; ++j) {
                double xo = j + 0.5 - w * 0.5;
                double u = pm.a * xo + pm.b * yo + pm.cu;
                double v = pm.d * xo + pm.e * yo + pm.cv;
                size_t o = static_cast<size_t>(i) * w + j;
                if (mode == WarpMode::nearest) {
                    int sx = static_cast<int>(std::floor(u + 0.5));
                    int sy = static_cast<int>(std::floor(v + 0.5));
                    if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;
                    size_t s0 = static_cast<size_t>(sy) * w + sx;
                    for (int c = 0; c < k; ++c) op[c * plane + o] = sp[c * plane + s0];
                } else {
                    int x0 = static_cast<int>(std::floor(u));
                    int y0 = static_cast<int>(std::floor(v));
                    double wx = u - x0, wy = v - y0;
                    const double tw[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy,
                                          wx * wy};
                    const int txy[4][2] = {{x0, y0}, {x0 + 1, y0}, {x0, y0 + 1}, {x0 + 1, y0 + 1}};
                    for (int c = 0; c < k; ++c) {
                        double acc = 0.0;
                        for (int t = 0; t < 4; ++t) {
                            int px = txy[t][0], py = txy[t][1];
                            if (px < 0 || px >= w || py < 0 || py >= h) continue;
                            acc += tw[t] * sp[c * plane + static_cast<size_t>(py) * w + px];
                        }
                        op[c * plane + o] = acc;
                    }
                }
            }
        }
    }

    auto mats = ms;  // captured for the backward pass
    return wrap_node(detail::make_op(
        x.shape(), std::move(out), "warp", {x.node()}, [mats, mode, n, k, h, w](detail::Node& self) {
            auto& in = *self.inputs[0];
            in.ensure_grad();
            const size_t plane = static_cast<size_t>(h) * w;
            const size_t sample = static_cast<size_t>(k) * plane;
            for (int ni = 0; ni < n; ++ni) {
                PixelMap pm(mats[mats.size() == 1 ? 0 : ni], h, w);
                const double* gp = self.grad.data() + ni * sample;
                double* dp = in.grad.data() + ni * sample;
                for (int i = 0; i < h; ++i) {
                    double yo = i + 0.5 - h * 0.5;
                    for (int j = 0; j < w; ++j) {
                        double xo = j + 0.5 - w * 0.5;
                        double u = pm.a * xo + pm.b * yo + pm.cu;
                        double v = pm.d * xo + pm.e * yo + pm.cv;
                        size_t o = static_cast<size_t>(i) * w + j;
                        if (mode == WarpMode::nearest) {
                            int sx = static_cast<int>(std::floor(u + 0.5));
                            int sy = static_cast<int>(std::floor(v + 0.5));
                            if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;
                            size_t s0 = static_cast<size_t>(sy) * w + sx;
                            for (int c = 0; c < k; ++c) dp[c * plane + s0] += gp[c * plane + o];
                        } else {
                            int x0 = static_cast<int>(std::floor(u));
                            int y0 = static_cast<int>(std::floor(v));
                            double wx = u - x0, wy = v - y0;
                            const double tw[4] = {(1 - wx) * (1 - wy), wx * (1 - wy),
                                                  (1 - wx) * wy, wx * wy};
                            const int txy[4][2] = {
                                {x0, y0}, {x0 + 1, y0}, {x0, y0 + 1}, {x0 + 1, y0 + 1}};
                            for (int c = 0; c < k; ++c) {
                                double g = gp[c * plane + o];
                                if (g == 0.0) continue;
                                for (int t = 0; t < 4; ++t) {
                                    int px = txy[t][0], py = txy[t][1];
                                    if (px < 0 || px >= w || py < 0 || py >= h) continue;
                                    dp[c * plane + static_cast<size_t>(py) * w + px] += tw[t] * g;
                                }
                            }
                        }
                    }
                }
            }
        }));
}

Tensor warp(const Tensor& x, const AffineMat& m, WarpMode mode) {
    return warp(x, std::vector<AffineMat>{m}, mode);
}

Tensor fuse_concat(const Tensor& image, const Tensor& pseudo) {
    if (image.shape() != pseudo.shape())
        throw ShapeError("fuse_concat: image " + shape_str(image.shape()) + " vs pseudo " +
                         shape_str(pseudo.shape()));
    return concat_channels(image, pseudo);
}

namespace {

void check_pair(const Tensor& fused, const Tensor& mask, size_t nparams) {
    if (fused.shape().size() != 4 || mask.shape().size() != 4 || mask.dim(1) != 1 ||
        mask.dim(0) != fused.dim(0) || mask.dim(2) != fused.dim(2) || mask.dim(3) != fused.dim(3))
        throw ShapeError("augment_pair: fused " + shape_str(fused.shape()) + " vs mask " +
                         shape_str(mask.shape()));
    if (nparams != static_cast<size_t>(fused.dim(0)))
        throw ShapeError("augment_pair: " + std::to_string(nparams) + " params for batch " +
                         std::to_string(fused.dim(0)));
}

std::vector<AffineMat> matrices_of(const std::vector<AugParams>& ps) {
    std::vector<AffineMat> ms;
    ms.reserve(ps.size());
    for (const auto& p : ps) ms.push_back(affine_matrix(p));
    return ms;
}

}  // namespace

std::pair<Tensor, Tensor> augment_pair(const Tensor& fused, const Tensor& mask,
                                       const std::vector<AugParams>& ps) {
    check_pair(fused, mask, ps.size());
    auto ms = matrices_of(ps);
    return {warp(fused, ms, WarpMode::bilinear), warp(mask, ms, WarpMode::nearest)};
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& fused, const Tensor& mask,
                                       const AugParams& p) {
    check_pair(fused, mask, 1);
    return augment_pair(fused, mask, std::vector<AugParams>{p});
}

std::pair<Tensor, Tensor> augment_pair_misaligned(const Tensor& fused, const Tensor& mask,
                                                  const std::vector<AugParams>& ps) {
    check_pair(fused, mask, ps.size());
    if (fused.dim(1) % 2 != 0)
        throw ShapeError("augment_pair_misaligned: fused tensor must hold image+pseudo halves");
    int c = fused.dim(1) / 2;
    auto ms = matrices_of(ps);
    auto image_warped = warp(slice_channels(fused, 0, c), ms, WarpMode::bilinear);
    auto pseudo_fixed = slice_channels(fused, c, 2 * c);
    return {concat_channels(image_warped, pseudo_fixed), warp(mask, ms, WarpMode::nearest)};
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    if (x.shape().size() != 4)
        throw ShapeError("resize_bilinear: expected NCHW, got " + shape_str(x.shape()));
    if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: bad output size");
    const int n = x.dim(0), k = x.dim(1), h = x.dim(2), w = x.dim(3);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    const size_t iplane = static_cast<size_t>(h) * w;
    const size_t oplane = static_cast<size_t>(out_h) * out_w;

    // half-pixel centers, edge taps clamped (replication at the border)
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

    std::vector<double> out(static_cast<size_t>(n) * k * oplane);
    for (int ni = 0; ni < n; ++ni) {
        for (int i = 0; i < out_h; ++i) {
            double v = (i + 0.5) * sy - 0.5;
            int y0 = static_cast<int>(std::floor(v));
            double wy = v - y0;
            int ya = clamp(y0, h - 1), yb = clamp(y0 + 1, h - 1);
            for (int j = 0; j < out_w; ++j) {
                double u = (j + 0.5) * sx - 0.5;
                int x0 = static_cast<int>(std::floor(u));
                double wx = u - x0;
                int xa = clamp(x0, w - 1), xb = clamp(x0 + 1, w - 1);
                for (int c = 0; c < k; ++c) {
                    const double* sp = x.data().data() + (static_cast<size_t>(ni) * k + c) * iplane;
                    double top = (1 - wx) * sp[static_cast<size_t>(ya) * w + xa] +
                                 wx * sp[static_cast<size_t>(ya) * w + xb];
                    double bot = (1 - wx) * sp[static_cast<size_t>(yb) * w + xa] +
                                 wx * sp[static_cast<size_t>(yb) * w + xb];
                    out[((static_cast<size_t>(ni) * k + c) * out_h + i) * out_w + j] =
                        (1 - wy) * top + wy * bot;
                }
            }
        }
    }
    return wrap_node(detail::make_op(
        {n, k, out_h, out_w}, std::move(out), "resize_bilinear", {x.node()},
        [n, k, h, w, out_h, out_w, sx, sy](detail::Node& self) {
            auto& in = *self.inputs[0];
            in.ensure_grad();
            const size_t iplane = static_cast<size_t>(h) * w;
            auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
            size_t o = 0;
            for (int ni = 0; ni < n; ++ni) {
                for (int c = 0; c < k; ++c) {
                    double* dp = in.grad.data() + (static_cast<size_t>(ni) * k + c) * iplane;
                    for (int i = 0; i < out_h; ++i) {
                        double v = (i + 0.5) * sy - 0.5;
                        int y0 = static_cast<int>(std::floor(v));
                        double wy = v - y0;
                        int ya = clamp(y0, h - 1), yb = clamp(y0 + 1, h - 1);
                        for (int j = 0; j < out_w; ++j, ++o) {
                            double u = (j + 0.5) * sx - 0.5;
                            int x0 = static_cast<int>(std::floor(u));
                            double wx = u - x0;
                            int xa = clamp(x0, w - 1), xb = clamp(x0 + 1, w - 1);
                            double g = self.grad[o];
                            dp[static_cast<size_t>(ya) * w + xa] += (1 - wx) * (1 - wy) * g;
                            dp[static_cast<size_t>(ya) * w + xb] += wx * (1 - wy) * g;
                            dp[static_cast<size_t>(yb) * w + xa] += (1 - wx) * wy * g;
                            dp[static_cast<size_t>(yb) * w + xb] += wx * wy * g;
                        }
                    }
                }
            }
        }));
}

}  // namespace textseg
