#pragma once

#include <cstdint>
#include <vector>

#include "textseg/tensor.hpp"

namespace textseg {

// AdamW with decoupled weight decay and a constant learning rate. One
// moment pair per parameter tensor; `step()` consumes whatever gradients
// the last backward() left behind and skips tensors that did not receive
// one this step (e.g. a frozen branch), leaving their moments and values
// untouched.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, double lr, double weight_decay = 1e-4,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();
    int64_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace textseg
