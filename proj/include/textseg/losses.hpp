#pragma once

#include "textseg/tensor.hpp"

namespace textseg {

struct LossWeights {
    double lambda = 0.1;  // weight of the L1 term; must be >= 0
};

// Soft Dice on sigmoid(logits) against a binary mask, per sample
//   1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps),   eps = 1e-6
// averaged over the batch. Both tensors [N,1,H,W].
Tensor dice_loss(const Tensor& logits, const Tensor& target_mask);

// Mean |pseudo - image*mask| over every element. pseudo/image [N,C,H,W],
// mask [N,1,H,W] broadcast across channels. Pixels outside the mask only
// enter through the masked image, so they pull the pseudo image toward zero
// there and changes to the raw image outside the mask cannot affect the loss.
Tensor l1_roi_loss(const Tensor& pseudo, const Tensor& image, const Tensor& mask);

// dice + lambda * l1 (both scalars).
Tensor total_loss(const Tensor& dice, const Tensor& l1, const LossWeights& w);

// Evaluation metrics over binary masks [N,1,H,W] (values are binarized at
// 0.5). Per-image scores averaged over the batch; an image where both masks
// are empty scores 1.0.
double dice_metric(const Tensor& pred_mask, const Tensor& target);
double miou_metric(const Tensor& pred_mask, const Tensor& target);

}  // namespace textseg
