#pragma once

// Node plumbing shared by the op implementations (tensor.cpp, augment.cpp).
// Not part of the public surface.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "textseg/tensor.hpp"

namespace textseg::detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
    uint64_t seq = 0;  // creation order; inputs always precede outputs
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this->grad, accumulates into inputs' grads.
    std::function<void(Node&)> backprop;
    const char* op = "leaf";

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

uint64_t next_seq();

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> value, bool requires_grad);

// requires_grad is inferred from inputs; backprop is dropped when no input
// needs gradients so dead subgraphs are not retained.
std::shared_ptr<Node> make_op(Shape shape, std::vector<double> value, const char* op,
                              std::vector<std::shared_ptr<Node>> inputs,
                              std::function<void(Node&)> backprop);

#ifndef NDEBUG
void check_finite(const Node& n);
#endif

}  // namespace textseg::detail
