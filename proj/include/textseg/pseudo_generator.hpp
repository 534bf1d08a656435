#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "textseg/tensor.hpp"

namespace textseg {

// Text-to-pseudo-image generator: FC projection, reshape to a coarse
// base x base grid, then three stride-2 transpose convolutions back to full
// resolution. base = H/8, so 224 -> 28x28 grid -> 784-d FC output; smaller
// desk resolutions keep the same structure.
struct GeneratorConfig {
    int image_h = 224;
    int image_w = 224;
    int image_c = 1;

    int base() const { return image_h / 8; }
    int fc_out() const { return base() * base(); }
    void validate() const;  // ConfigError on violation
};

// Learnable state. Weight layouts: fc_w [768, fc_out]; transpose-conv
// weights [Cin, Cout, 4, 4] along the channel chain 1 -> 16 -> 8 -> C.
struct GeneratorParams {
    GeneratorConfig cfg;
    Tensor fc_w, fc_b;
    Tensor tc1_w, tc1_b;
    Tensor tc2_w, tc2_b;
    Tensor tc3_w, tc3_b;

    std::vector<std::pair<std::string, Tensor>> named() const;
};

// Kaiming-uniform fan-in weights (bound sqrt(6/fan_in), fan_in = input
// channels x kernel area, or the 768 input width for the FC), zero biases.
// Each tensor gets its own substream of `seed`, so the result is independent
// of initialization order.
GeneratorParams init_generator(const GeneratorConfig& cfg, uint64_t seed);

// Stage shapes recorded during a forward pass, for inspection.
struct GeneratorTrace {
    Shape fc, grid, tc1, tc2, out;
};

// b is [N,768] (one embedding per row). Output [N,C,H,W] in [0,1]:
//   sigmoid(TC3(relu(TC2(relu(TC1(reshape(FC(b))))))))
// Differentiable wrt every parameter and b.
Tensor generate_pseudo(const GeneratorParams& params, const Tensor& b,
                       GeneratorTrace* trace = nullptr);

// Ablation variant that replaces the transpose-conv stack with plain
// bilinear upsampling of the FC grid: sigmoid(resize(reshape(FC(b)))).
Tensor generate_pseudo_interp(const GeneratorParams& params, const Tensor& b);

// Convenience: wrap one embedding vector as a [1,768] constant tensor.
Tensor embedding_tensor(const std::vector<double>& embedding);

}  // namespace textseg
