#pragma once

// Training losses over the three overlapping tumor regions. Probabilities and
// targets are [K,D,H,W] or [N,K,D,H,W] with K region channels (WT, TC, ET);
// targets may be hard masks or soft ensemble probabilities.

#include <cmath>
#include <cstdint>

#include "distillvol/ops.hpp"
#include "distillvol/tensor.hpp"

namespace dv {

constexpr double kDiceEps = 1e-5;
constexpr double kBceClamp = 1e-7;

namespace detail {

template <typename S>
void check_loss_shapes(const TensorT<S>& p, const TensorT<S>& g, const char* op) {
    if (p.rank() != 4 && p.rank() != 5)
        throw ShapeError(std::string(op) + ": expected rank 4 or 5 input, got shape " +
                         shape_str(p.shape()));
    require_same_shape(p, g, op);
}

// Channel axis is 0 for [K,D,H,W] and 1 for [N,K,D,H,W]. Returns {K, batch,
// spatial} where the per-class slice for (b,k) starts at (b*K + k)*spatial.
template <typename S>
void loss_layout(const TensorT<S>& p, std::int64_t& K, std::int64_t& batch,
                 std::int64_t& spatial) {
    if (p.rank() == 4) {
        batch = 1;
        K = p.dim(0);
        spatial = p.dim(1) * p.dim(2) * p.dim(3);
    } else {
        batch = p.dim(0);
        K = p.dim(1);
        spatial = p.dim(2) * p.dim(3) * p.dim(4);
    }
}

}  // namespace detail

// 1 - (1/K) * sum_k (2*sum(p_k*g_k) + eps) / (sum(p_k^2 + g_k^2) + eps).
// Class sums run over all voxels of the class channel (batch folded in);
// the epsilon makes mutually empty regions score a loss of ~0.
template <typename S>
TensorT<S> soft_dice_loss(const TensorT<S>& p, const TensorT<S>& g, double eps = kDiceEps) {
    detail::check_loss_shapes(p, g, "soft_dice_loss");
    std::int64_t K, batch, spatial;
    detail::loss_layout(p, K, batch, spatial);

    const S* pp = p.data();
    const S* gp = g.data();
    std::vector<double> inter(static_cast<std::size_t>(K), 0.0);
    std::vector<double> denom(static_cast<std::size_t>(K), 0.0);
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t k = 0; k < K; ++k) {
            const S* pk = pp + (b * K + k) * spatial;
            const S* gk = gp + (b * K + k) * spatial;
            double i = 0, d = 0;
            for (std::int64_t v = 0; v < spatial; ++v) {
                const double pv = pk[v], gv = gk[v];
                i += pv * gv;
                d += pv * pv + gv * gv;
            }
            inter[static_cast<std::size_t>(k)] += i;
            denom[static_cast<std::size_t>(k)] += d;
        }

    double sim = 0;
    for (std::int64_t k = 0; k < K; ++k)
        sim += (2.0 * inter[static_cast<std::size_t>(k)] + eps) /
               (denom[static_cast<std::size_t>(k)] + eps);
    const double loss = 1.0 - sim / static_cast<double>(K);

    return detail::make_op<S>(
        "soft_dice_loss", {1}, {static_cast<S>(loss)}, {p, g},
        [eps, inter, denom](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
            if (!ig[0]) return;  // targets are constants; gradient w.r.t. p only
            const auto& pt = *self.inputs[0];
            const auto& gt = *self.inputs[1];
            std::int64_t K, batch, spatial;
            if (pt.shape.size() == 4) {
                batch = 1;
                K = pt.shape[0];
                spatial = pt.shape[1] * pt.shape[2] * pt.shape[3];
            } else {
                batch = pt.shape[0];
                K = pt.shape[1];
                spatial = pt.shape[2] * pt.shape[3] * pt.shape[4];
            }
            const double gscale = og[0];
            for (std::int64_t b = 0; b < batch; ++b)
                for (std::int64_t k = 0; k < K; ++k) {
                    const double num = 2.0 * inter[static_cast<std::size_t>(k)] + eps;
                    const double den = denom[static_cast<std::size_t>(k)] + eps;
                    const S* pk = pt.data.data() + (b * K + k) * spatial;
                    const S* gk = gt.data.data() + (b * K + k) * spatial;
                    S* dk = ig[0] + (b * K + k) * spatial;
                    const double c = gscale / (static_cast<double>(K) * den * den);
                    for (std::int64_t v = 0; v < spatial; ++v) {
                        // d/dp of -(1/K)*num/den
                        dk[v] += static_cast<S>(-c * (2.0 * gk[v] * den - num * 2.0 * pk[v]));
                    }
                }
        });
}

// Mean binary cross-entropy over all elements (K channels x voxels), with
// probabilities clamped to [1e-7, 1-1e-7] before the log.
template <typename S>
TensorT<S> bce_loss(const TensorT<S>& p, const TensorT<S>& g) {
    detail::check_loss_shapes(p, g, "bce_loss");
    const std::int64_t total = p.numel();
    const S* pp = p.data();
    const S* gp = g.data();
    const double lo = kBceClamp, hi = 1.0 - kBceClamp;

    double acc = 0;
    for (std::int64_t i = 0; i < total; ++i) {
        const double pv = std::min(hi, std::max(lo, static_cast<double>(pp[i])));
        const double gv = gp[i];
        acc += gv * std::log(pv) + (1.0 - gv) * std::log(1.0 - pv);
    }
    const double loss = -acc / static_cast<double>(total);

    return detail::make_op<S>(
        "bce_loss", {1}, {static_cast<S>(loss)}, {p, g},
        [lo, hi](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
            if (!ig[0]) return;
            const auto& pt = *self.inputs[0];
            const auto& gt = *self.inputs[1];
            const std::int64_t total = pt.numel();
            const double c = static_cast<double>(og[0]) / static_cast<double>(total);
            for (std::int64_t i = 0; i < total; ++i) {
                const double pv = pt.data[static_cast<std::size_t>(i)];
                if (pv <= lo || pv >= hi) continue;  // clamp region: zero gradient
                const double gv = gt.data[static_cast<std::size_t>(i)];
                ig[0][i] += static_cast<S>(-c * (gv / pv - (1.0 - gv) / (1.0 - pv)));
            }
        });
}

template <typename S>
struct LossValueT {
    TensorT<S> dice_part;
    TensorT<S> bce_part;
    TensorT<S> total;  // dice_part + bce_part, differentiable
    int num_classes = 0;
    std::int64_t voxel_count = 0;  // voxels per class channel, batch included
};

using LossValue = LossValueT<float>;

template <typename S>
LossValueT<S> combined_loss(const TensorT<S>& p, const TensorT<S>& g) {
    LossValueT<S> lv;
    lv.dice_part = soft_dice_loss(p, g);
    lv.bce_part = bce_loss(p, g);
    lv.total = add(lv.dice_part, lv.bce_part);
    std::int64_t K, batch, spatial;
    detail::loss_layout(p, K, batch, spatial);
    lv.num_classes = static_cast<int>(K);
    lv.voxel_count = batch * spatial;
    return lv;
}

}  // namespace dv
