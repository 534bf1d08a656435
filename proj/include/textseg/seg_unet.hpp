#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "textseg/tensor.hpp"

namespace textseg {

// Compact UNet sized for desk-scale experiments. Channel width stays
// constant across levels (base_width everywhere) instead of doubling per
// level; on a single core that buys back most of the conv time at the
// resolutions we run, and capacity is not what these experiments measure.
// Downsampling is a stride-2 conv (4x4, pad 1 — exact halving), upsampling
// a stride-2 transpose conv (2x2 — exact doubling).
struct UNetConfig {
    int in_channels = 2;  // C for image-only input, 2C once a pseudo-image is fused in
    int depth = 3;        // encoder levels; bottleneck sits at H / 2^depth
    int base_width = 16;
    int image_h = 64;
    int image_w = 64;

    void validate() const;  // ConfigError on violation
};

// conv3x3 + ReLU + conv3x3 + ReLU, the block used at every level.
struct ConvBlock {
    Tensor w1, b1, w2, b2;
};

// Level i runs at H/2^i; vectors are indexed by level. up[i]/dec[i] bring
// the signal back from level i+1 to level i, so the forward pass walks them
// deepest-first. dec blocks take 2*base_width inputs (skip concatenated
// with the upsampled path).
struct UNetParams {
    UNetConfig cfg;
    std::vector<ConvBlock> enc;
    std::vector<Tensor> down_w, down_b;
    ConvBlock mid;
    std::vector<Tensor> up_w, up_b;
    std::vector<ConvBlock> dec;
    Tensor head_w, head_b;  // 1x1 conv to a single logit channel

    std::vector<std::pair<std::string, Tensor>> named() const;
    size_t param_count() const;
};

// Kaiming-uniform weights, zero biases, one seed substream per tensor
// (same scheme as the pseudo-image generator).
UNetParams init_unet(const UNetConfig& cfg, uint64_t seed);

// x is [N, in_channels, H, W]; returns a [N,1,H,W] logit map (sigmoid is
// applied by the losses/metrics, not here). Differentiable wrt x and all
// parameters. zero_skips replaces every skip connection with zeros — a
// diagnostic for checking the skips actually carry signal, not a training
// mode.
Tensor unet_forward(const UNetParams& params, const Tensor& x, bool zero_skips = false);

}  // namespace textseg
