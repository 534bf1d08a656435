#include "textseg/pseudo_generator.hpp"

#include <cmath>

#include "textseg/errors.hpp"
#include "textseg/fusion_augment.hpp"
#include "textseg/rng.hpp"
#include "textseg/text_grounding.hpp"

namespace textseg {

void GeneratorConfig::validate() const {
    if (image_h != image_w)
        throw ConfigError("generator: image must be square, got " + std::to_string(image_h) + "x" +
                          std::to_string(image_w));
    if (image_h < 8 || image_h % 8 != 0)
        throw ConfigError("generator: image size must be a positive multiple of 8, got " +
                          std::to_string(image_h));
    if (image_c < 1) throw ConfigError("generator: image_c must be >= 1");
}

std::vector<std::pair<std::string, Tensor>> GeneratorParams::named() const {
    return {{"fc_w", fc_w},   {"fc_b", fc_b},   {"tc1_w", tc1_w}, {"tc1_b", tc1_b},
            {"tc2_w", tc2_w}, {"tc2_b", tc2_b}, {"tc3_w", tc3_w}, {"tc3_b", tc3_b}};
}

namespace {

Tensor kaiming_uniform(Shape shape, int fan_in, uint64_t seed, const std::string& name) {
    Rng rng(derive_seed(seed, "init." + name));
    double bound = std::sqrt(6.0 / fan_in);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

GeneratorParams init_generator(const GeneratorConfig& cfg, uint64_t seed) {
    cfg.validate();
    GeneratorParams p;
    p.cfg = cfg;
    int fc_out = cfg.fc_out();
    p.fc_w = kaiming_uniform({kEmbedDim, fc_out}, kEmbedDim, seed, "fc_w");
    p.fc_b = Tensor::zeros({fc_out}, true);
    p.tc1_w = kaiming_uniform({1, 16, 4, 4}, 1 * 16, seed, "tc1_w");
    p.tc1_b = Tensor::zeros({16}, true);
    p.tc2_w = kaiming_uniform({16, 8, 4, 4}, 16 * 16, seed, "tc2_w");
    p.tc2_b = Tensor::zeros({8}, true);
    p.tc3_w = kaiming_uniform({8, cfg.image_c, 4, 4}, 8 * 16, seed, "tc3_w");
    p.tc3_b = Tensor::zeros({cfg.image_c}, true);
    return p;
}

namespace {

Tensor fc_grid(const GeneratorParams& params, const Tensor& b, Shape* fc_shape) {
    if (b.shape().size() != 2 || b.dim(1) != kEmbedDim)
        throw ShapeError("generate_pseudo: embeddings must be [N," + std::to_string(kEmbedDim) +
                         "], got " + shape_str(b.shape()));
    auto fc = add_row_bias(matmul(b, params.fc_w), params.fc_b);
    if (fc_shape) *fc_shape = fc.shape();
    int base = params.cfg.base();
    return reshape(fc, {b.dim(0), 1, base, base});
}

}  // namespace

Tensor generate_pseudo(const GeneratorParams& params, const Tensor& b, GeneratorTrace* trace) {
    auto grid = fc_grid(params, b, trace ? &trace->fc : nullptr);
    auto h1 = relu(transpose_conv2d(grid, params.tc1_w, params.tc1_b, 2, 1));
    auto h2 = relu(transpose_conv2d(h1, params.tc2_w, params.tc2_b, 2, 1));
    auto out = sigmoid(transpose_conv2d(h2, params.tc3_w, params.tc3_b, 2, 1));
    if (trace) {
        trace->grid = grid.shape();
        trace->tc1 = h1.shape();
        trace->tc2 = h2.shape();
        trace->out = out.shape();
    }
    return out;
}

Tensor generate_pseudo_interp(const GeneratorParams& params, const Tensor& b) {
    auto grid = fc_grid(params, b, nullptr);
    auto up = resize_bilinear(grid, params.cfg.image_h, params.cfg.image_w);
    // single-channel grid broadcast to the configured channel count
    Tensor stacked = up;
    for (int c = 1; c < params.cfg.image_c; ++c) stacked = concat_channels(stacked, up);
    return sigmoid(stacked);
}

Tensor embedding_tensor(const std::vector<double>& embedding) {
    if (static_cast<int>(embedding.size()) != kEmbedDim)
        throw ShapeError("embedding_tensor: expected " + std::to_string(kEmbedDim) +
                         " values, got " + std::to_string(embedding.size()));
    return Tensor::from_data({1, kEmbedDim}, embedding);
}

}  // namespace textseg
