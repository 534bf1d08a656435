#include "textseg/losses.hpp"

#include "textseg/errors.hpp"

namespace textseg {

namespace {

constexpr double kDiceEps = 1e-6;

void require_nchw(const Tensor& t, const char* who) {
    if (t.shape().size() != 4)
        throw ShapeError(std::string(who) + ": expected NCHW, got " + shape_str(t.shape()));
}

}  // namespace

Tensor dice_loss(const Tensor& logits, const Tensor& target_mask) {
    require_nchw(logits, "dice_loss");
    if (logits.shape() != target_mask.shape() || logits.dim(1) != 1)
        throw ShapeError("dice_loss: want matching [N,1,H,W], got " + shape_str(logits.shape()) +
                         " vs " + shape_str(target_mask.shape()));
    auto p = sigmoid(logits);
    auto inter = sum_per_sample(mul(p, target_mask));                      // [N]
    auto denom = add(sum_per_sample(p), sum_per_sample(target_mask));      // [N]
    auto frac = div(add_scalar(mul_scalar(inter, 2.0), kDiceEps), add_scalar(denom, kDiceEps));
    return mean(add_scalar(mul_scalar(frac, -1.0), 1.0));
}

Tensor l1_roi_loss(const Tensor& pseudo, const Tensor& image, const Tensor& mask) {
    require_nchw(pseudo, "l1_roi_loss");
    if (pseudo.shape() != image.shape())
        throw ShapeError("l1_roi_loss: pseudo " + shape_str(pseudo.shape()) + " vs image " +
                         shape_str(image.shape()));
    if (mask.shape().size() != 4 || mask.dim(0) != pseudo.dim(0) || mask.dim(1) != 1 ||
        mask.dim(2) != pseudo.dim(2) || mask.dim(3) != pseudo.dim(3))
        throw ShapeError("l1_roi_loss: mask " + shape_str(mask.shape()) + " does not cover " +
                         shape_str(pseudo.shape()));
    Tensor mask_c = mask;
    for (int c = 1; c < pseudo.dim(1); ++c) mask_c = concat_channels(mask_c, mask);
    return mean(abs(sub(pseudo, mul(image, mask_c))));
}

Tensor total_loss(const Tensor& dice, const Tensor& l1, const LossWeights& w) {
    if (w.lambda < 0)
        throw ConfigError("total_loss: lambda must be >= 0, got " + std::to_string(w.lambda));
    return add(dice, mul_scalar(l1, w.lambda));
}

namespace {

struct PairCounts {
    double inter = 0, p = 0, g = 0;
};

// Per-image overlap counts; inputs binarized at 0.5.
std::vector<PairCounts> overlap_counts(const Tensor& pred, const Tensor& target,
                                       const char* who) {
    if (pred.shape() != target.shape() || pred.shape().size() != 4 || pred.dim(1) != 1)
        throw ShapeError(std::string(who) + ": want matching [N,1,H,W], got " +
                         shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    int n = pred.dim(0);
    size_t per = static_cast<size_t>(pred.numel() / n);
    std::vector<PairCounts> out(n);
    for (int i = 0; i < n; ++i) {
        const double* pp = pred.data().data() + i * per;
        const double* gg = target.data().data() + i * per;
        for (size_t j = 0; j < per; ++j) {
            bool p = pp[j] > 0.5, g = gg[j] > 0.5;
            out[i].p += p;
            out[i].g += g;
            out[i].inter += p && g;
        }
    }
    return out;
}

}  // namespace

double dice_metric(const Tensor& pred_mask, const Tensor& target) {
    auto counts = overlap_counts(pred_mask, target, "dice_metric");
    double acc = 0;
    for (const auto& c : counts)
        acc += (c.p + c.g == 0) ? 1.0 : 2.0 * c.inter / (c.p + c.g);
    return acc / static_cast<double>(counts.size());
}

double miou_metric(const Tensor& pred_mask, const Tensor& target) {
    auto counts = overlap_counts(pred_mask, target, "miou_metric");
    double acc = 0;
    for (const auto& c : counts) {
        double uni = c.p + c.g - c.inter;
        acc += (uni == 0) ? 1.0 : c.inter / uni;
    }
    return acc / static_cast<double>(counts.size());
}

}  // namespace textseg
