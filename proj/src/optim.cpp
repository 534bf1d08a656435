#include "textseg/optim.hpp"

#include <cmath>

#include "textseg/errors.hpp"

namespace textseg {

AdamW::AdamW(std::vector<Tensor> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    if (lr_ <= 0) throw ConfigError("AdamW: lr must be positive");
    if (wd_ < 0) throw ConfigError("AdamW: weight decay must be >= 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
        if (!p.requires_grad()) throw UsageError("AdamW: parameter does not require gradients");
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& d = p.mutable_data();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < d.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mh = m[i] / bc1;
            double vh = v[i] / bc2;
            d[i] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * d[i]);
        }
    }
}

}  // namespace textseg
