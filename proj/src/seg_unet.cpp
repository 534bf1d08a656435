#include "textseg/seg_unet.hpp"

#include <cmath>

#include "textseg/errors.hpp"
#include "textseg/rng.hpp"

namespace textseg {

void UNetConfig::validate() const {
    if (in_channels < 1) throw ConfigError("unet: in_channels must be >= 1");
    if (depth < 1) throw ConfigError("unet: depth must be >= 1");
    if (base_width < 1) throw ConfigError("unet: base_width must be >= 1");
    if (image_h < 1 || image_w < 1) throw ConfigError("unet: image size must be positive");
    int f = 1 << depth;
    if (image_h % f != 0 || image_w % f != 0)
        throw ConfigError("unet: image " + std::to_string(image_h) + "x" +
                          std::to_string(image_w) + " not divisible by 2^depth = " +
                          std::to_string(f));
}

std::vector<std::pair<std::string, Tensor>> UNetParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto block = [&out](const std::string& prefix, const ConvBlock& b) {
        out.emplace_back(prefix + ".w1", b.w1);
        out.emplace_back(prefix + ".b1", b.b1);
        out.emplace_back(prefix + ".w2", b.w2);
        out.emplace_back(prefix + ".b2", b.b2);
    };
    for (size_t i = 0; i < enc.size(); ++i) {
        std::string lvl = std::to_string(i);
        block("enc" + lvl, enc[i]);
        out.emplace_back("down" + lvl + ".w", down_w[i]);
        out.emplace_back("down" + lvl + ".b", down_b[i]);
    }
    block("mid", mid);
    for (size_t i = 0; i < dec.size(); ++i) {
        std::string lvl = std::to_string(i);
        out.emplace_back("up" + lvl + ".w", up_w[i]);
        out.emplace_back("up" + lvl + ".b", up_b[i]);
        block("dec" + lvl, dec[i]);
    }
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    return out;
}

size_t UNetParams::param_count() const {
    size_t n = 0;
    for (const auto& [name, t] : named()) n += t.numel();
    return n;
}

namespace {

Tensor kaiming_uniform(Shape shape, int fan_in, uint64_t seed, const std::string& name) {
    Rng rng(derive_seed(seed, "init." + name));
    double bound = std::sqrt(6.0 / fan_in);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

// conv weight [Cout,Cin,k,k] with fan_in = Cin*k*k
ConvBlock init_block(int cin, int w, uint64_t seed, const std::string& prefix) {
    ConvBlock b;
    b.w1 = kaiming_uniform({w, cin, 3, 3}, cin * 9, seed, prefix + ".w1");
    b.b1 = Tensor::zeros({w}, true);
    b.w2 = kaiming_uniform({w, w, 3, 3}, w * 9, seed, prefix + ".w2");
    b.b2 = Tensor::zeros({w}, true);
    return b;
}

Tensor run_block(const ConvBlock& b, const Tensor& x) {
    return relu(conv2d(relu(conv2d(x, b.w1, b.b1, 1, 1)), b.w2, b.b2, 1, 1));
}

}  // namespace

UNetParams init_unet(const UNetConfig& cfg, uint64_t seed) {
    cfg.validate();
    UNetParams p;
    p.cfg = cfg;
    int w = cfg.base_width;
    for (int i = 0; i < cfg.depth; ++i) {
        std::string lvl = std::to_string(i);
        p.enc.push_back(init_block(i == 0 ? cfg.in_channels : w, w, seed, "enc" + lvl));
        p.down_w.push_back(kaiming_uniform({w, w, 4, 4}, w * 16, seed, "down" + lvl + ".w"));
        p.down_b.push_back(Tensor::zeros({w}, true));
    }
    p.mid = init_block(w, w, seed, "mid");
    for (int i = 0; i < cfg.depth; ++i) {
        std::string lvl = std::to_string(i);
        // transpose-conv weight [Cin,Cout,2,2], fan_in = Cin*k*k
        p.up_w.push_back(kaiming_uniform({w, w, 2, 2}, w * 4, seed, "up" + lvl + ".w"));
        p.up_b.push_back(Tensor::zeros({w}, true));
        p.dec.push_back(init_block(2 * w, w, seed, "dec" + lvl));
    }
    p.head_w = kaiming_uniform({1, w, 1, 1}, w, seed, "head.w");
    p.head_b = Tensor::zeros({1}, true);
    return p;
}

Tensor unet_forward(const UNetParams& params, const Tensor& x, bool zero_skips) {
    const UNetConfig& cfg = params.cfg;
    if (x.shape().size() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.image_h ||
        x.dim(3) != cfg.image_w)
        throw ShapeError("unet_forward: expected [N," + std::to_string(cfg.in_channels) + "," +
                         std::to_string(cfg.image_h) + "," + std::to_string(cfg.image_w) +
                         "], got " + shape_str(x.shape()));

    std::vector<Tensor> skips;
    Tensor cur = x;
    for (int i = 0; i < cfg.depth; ++i) {
        cur = run_block(params.enc[i], cur);
        skips.push_back(cur);
        cur = relu(conv2d(cur, params.down_w[i], params.down_b[i], 2, 1));
    }
    cur = run_block(params.mid, cur);
    for (int i = cfg.depth - 1; i >= 0; --i) {
        cur = relu(transpose_conv2d(cur, params.up_w[i], params.up_b[i], 2, 0));
        Tensor skip = zero_skips ? Tensor::zeros(skips[i].shape()) : skips[i];
        cur = run_block(params.dec[i], concat_channels(skip, cur));
    }
    return conv2d(cur, params.head_w, params.head_b, 1, 0);
}

}  // namespace textseg
