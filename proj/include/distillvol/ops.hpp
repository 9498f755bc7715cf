#pragma once

// Differentiable operations on TensorT. 5-D data is laid out [N,C,D,H,W],
// contiguous with W fastest. No broadcasting beyond the conv bias and the
// norm affine parameters.

#include <cmath>
#include <cstdint>
#include <vector>

#include "distillvol/tensor.hpp"
#include "distillvol/util.hpp"

namespace dv {

namespace detail {

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return a > 0 ? (a + b - 1) / b : a / b;
}

// Output-index range [lo,hi] for kernel offset k so that the source index
// k - p + o*s stays inside [0, in_extent).
struct ConvRange {
    std::int64_t lo, hi;
};

inline ConvRange conv_range(std::int64_t k, std::int64_t p, std::int64_t s,
                            std::int64_t in_extent, std::int64_t out_extent) {
    return {std::max<std::int64_t>(0, ceil_div(p - k, s)),
            std::min(out_extent - 1, (in_extent - 1 + p - k) / s)};
}

// Dot product with a fixed 4-way accumulation order (deterministic and
// instruction-parallel without -ffast-math).
template <typename S>
S dot(const S* a, const S* b, std::int64_t n) {
    S a0 = 0, a1 = 0, a2 = 0, a3 = 0;
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        a0 += a[i] * b[i];
        a1 += a[i + 1] * b[i + 1];
        a2 += a[i + 2] * b[i + 2];
        a3 += a[i + 3] * b[i + 3];
    }
    S acc = (a0 + a1) + (a2 + a3);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename S>
void axpy(S alpha, const S* x, S* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename S>
void require_rank(const TensorT<S>& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

template <typename S>
void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// --------------------------------------------------------------------------
// conv3d
// --------------------------------------------------------------------------

// input [N,Cin,D,H,W], weight [Cout,Cin,k,k,k], optional bias [Cout].
// Output extent per axis: floor((ext + 2*padding - k)/stride) + 1.
template <typename S>
TensorT<S> conv3d(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                  int stride, int padding) {
    detail::require_rank(input, 5, "conv3d input");
    detail::require_rank(weight, 5, "conv3d weight");
    const std::int64_t N = input.dim(0), Ci = input.dim(1);
    const std::int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    const std::int64_t Co = weight.dim(0), K = weight.dim(2);
    if (weight.dim(1) != Ci)
        throw ShapeError("conv3d: weight input-channel dim " + std::to_string(weight.dim(1)) +
                         " does not match input channel dim " + std::to_string(Ci));
    if (weight.dim(3) != K || weight.dim(4) != K)
        throw ShapeError("conv3d: kernel must be cubic, got " + shape_str(weight.shape()));
    if (K % 2 == 0) throw ShapeError("conv3d: kernel size must be odd, got " + std::to_string(K));
    if (stride != 1 && stride != 2)
        throw ShapeError("conv3d: stride must be 1 or 2, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("conv3d: padding must be >= 0");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Co))
        throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()) +
                         " does not match output channel dim " + std::to_string(Co));

    const std::int64_t s = stride, p = padding;
    const std::int64_t Do = (D + 2 * p - K) / s + 1;
    const std::int64_t Ho = (H + 2 * p - K) / s + 1;
    const std::int64_t Wo = (W + 2 * p - K) / s + 1;
    if (Do < 1 || Ho < 1 || Wo < 1)
        throw ShapeError("conv3d: kernel " + std::to_string(K) + " with padding " +
                         std::to_string(p) + " exceeds input extents " + shape_str(input.shape()));

    const std::int64_t in_cs = D * H * W, out_cs = Do * Ho * Wo, ksz = K * K * K;
    std::vector<S> out(static_cast<std::size_t>(N * Co * out_cs), S(0));
    const S* in = input.data();
    const S* w = weight.data();
    const S* b = bias.defined() ? bias.data() : nullptr;

    parallel_for(N * Co, [&](std::int64_t nc) {
        const std::int64_t n = nc / Co, co = nc % Co;
        S* out_c = out.data() + nc * out_cs;
        if (b)
            for (std::int64_t i = 0; i < out_cs; ++i) out_c[i] = b[co];
        for (std::int64_t ci = 0; ci < Ci; ++ci) {
            const S* in_c = in + (n * Ci + ci) * in_cs;
            const S* w_c = w + (co * Ci + ci) * ksz;
            for (std::int64_t kd = 0; kd < K; ++kd) {
                const auto [odl, odh] = detail::conv_range(kd, p, s, D, Do);
                for (std::int64_t kh = 0; kh < K; ++kh) {
                    const auto [ohl, ohh] = detail::conv_range(kh, p, s, H, Ho);
                    for (std::int64_t kw = 0; kw < K; ++kw) {
                        const S wv = w_c[(kd * K + kh) * K + kw];
                        const auto [owl, owh] = detail::conv_range(kw, p, s, W, Wo);
                        for (std::int64_t od = odl; od <= odh; ++od) {
                            const std::int64_t id = od * s + kd - p;
                            for (std::int64_t oh = ohl; oh <= ohh; ++oh) {
                                const std::int64_t ih = oh * s + kh - p;
                                const S* in_row = in_c + (id * H + ih) * W + (kw - p);
                                S* out_row = out_c + (od * Ho + oh) * Wo;
                                if (s == 1) {
                                    for (std::int64_t ow = owl; ow <= owh; ++ow)
                                        out_row[ow] += wv * in_row[ow];
                                } else {
                                    for (std::int64_t ow = owl; ow <= owh; ++ow)
                                        out_row[ow] += wv * in_row[ow * 2];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    std::vector<TensorT<S>> ins{input, weight};
    if (bias.defined()) ins.push_back(bias);
    const bool has_bias = bias.defined();
    return detail::make_op<S>(
        "conv3d", {N, Co, Do, Ho, Wo}, std::move(out), std::move(ins),
        [s, p, has_bias](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
            const auto& xin = *self.inputs[0];
            const auto& win = *self.inputs[1];
            const std::int64_t N = xin.shape[0], Ci = xin.shape[1];
            const std::int64_t D = xin.shape[2], H = xin.shape[3], W = xin.shape[4];
            const std::int64_t Co = win.shape[0], K = win.shape[2];
            const std::int64_t Do = self.shape[2], Ho = self.shape[3], Wo = self.shape[4];
            const std::int64_t in_cs = D * H * W, out_cs = Do * Ho * Wo, ksz = K * K * K;
            const S* in = xin.data.data();
            const S* w = win.data.data();

            if (ig[0]) {
                S* din = ig[0];
                parallel_for(N * Ci, [&](std::int64_t ni) {
                    const std::int64_t n = ni / Ci, ci = ni % Ci;
                    S* din_c = din + ni * in_cs;
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const S* og_c = og + (n * Co + co) * out_cs;
                        const S* w_c = w + (co * Ci + ci) * ksz;
                        for (std::int64_t kd = 0; kd < K; ++kd) {
                            const auto [odl, odh] = detail::conv_range(kd, p, s, D, Do);
                            for (std::int64_t kh = 0; kh < K; ++kh) {
                                const auto [ohl, ohh] = detail::conv_range(kh, p, s, H, Ho);
                                for (std::int64_t kw = 0; kw < K; ++kw) {
                                    const S wv = w_c[(kd * K + kh) * K + kw];
                                    const auto [owl, owh] = detail::conv_range(kw, p, s, W, Wo);
                                    for (std::int64_t od = odl; od <= odh; ++od) {
                                        const std::int64_t id = od * s + kd - p;
                                        for (std::int64_t oh = ohl; oh <= ohh; ++oh) {
                                            const std::int64_t ih = oh * s + kh - p;
                                            S* din_row = din_c + (id * H + ih) * W + (kw - p);
                                            const S* og_row = og_c + (od * Ho + oh) * Wo;
                                            if (s == 1) {
                                                for (std::int64_t ow = owl; ow <= owh; ++ow)
                                                    din_row[ow] += wv * og_row[ow];
                                            } else {
                                                for (std::int64_t ow = owl; ow <= owh; ++ow)
                                                    din_row[ow * 2] += wv * og_row[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (ig[1]) {
                S* dw = ig[1];
                parallel_for(Co * Ci, [&](std::int64_t cc) {
                    const std::int64_t co = cc / Ci, ci = cc % Ci;
                    for (std::int64_t kd = 0; kd < K; ++kd) {
                        const auto [odl, odh] = detail::conv_range(kd, p, s, D, Do);
                        for (std::int64_t kh = 0; kh < K; ++kh) {
                            const auto [ohl, ohh] = detail::conv_range(kh, p, s, H, Ho);
                            for (std::int64_t kw = 0; kw < K; ++kw) {
                                const auto [owl, owh] = detail::conv_range(kw, p, s, W, Wo);
                                S acc = 0;
                                for (std::int64_t n = 0; n < N; ++n) {
                                    const S* in_c = in + (n * Ci + ci) * in_cs;
                                    const S* og_c = og + (n * Co + co) * out_cs;
                                    for (std::int64_t od = odl; od <= odh; ++od) {
                                        const std::int64_t id = od * s + kd - p;
                                        for (std::int64_t oh = ohl; oh <= ohh; ++oh) {
                                            const std::int64_t ih = oh * s + kh - p;
                                            const S* in_row = in_c + (id * H + ih) * W + (kw - p);
                                            const S* og_row = og_c + (od * Ho + oh) * Wo;
                                            if (s == 1) {
                                                acc += detail::dot(in_row + owl, og_row + owl,
                                                                   owh - owl + 1);
                                            } else {
                                                for (std::int64_t ow = owl; ow <= owh; ++ow)
                                                    acc += in_row[ow * 2] * og_row[ow];
                                            }
                                        }
                                    }
                                }
                                dw[(cc * K + kd) * K * K + kh * K + kw] += acc;
                            }
                        }
                    }
                });
            }
            if (has_bias && ig[2]) {
                S* db = ig[2];
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        const S* og_c = og + (n * Co + co) * out_cs;
                        S acc = 0;
                        for (std::int64_t i = 0; i < out_cs; ++i) acc += og_c[i];
                        db[co] += acc;
                    }
            }
        });
}

template <typename S>
TensorT<S> conv3d(const TensorT<S>& input, const TensorT<S>& weight, int stride, int padding) {
    return conv3d(input, weight, TensorT<S>(), stride, padding);
}

// --------------------------------------------------------------------------
// trilinear upsampling (fixed scale factor 2, align-corners=false)
// --------------------------------------------------------------------------

namespace detail {

// Per output index: the two source indices (edge-clamped) and the weight of
// the upper one, for src = (o + 0.5)/2 - 0.5.
struct LerpTap {
    std::int64_t i0, i1;
    double w1;
};

inline std::vector<LerpTap> upsample_taps(std::int64_t in_extent) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(2 * in_extent));
    for (std::int64_t o = 0; o < 2 * in_extent; ++o) {
        const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
        const double w1 = src - static_cast<double>(i0);
        std::int64_t i1 = i0 + 1;
        i0 = std::max<std::int64_t>(0, std::min(in_extent - 1, i0));
        i1 = std::max<std::int64_t>(0, std::min(in_extent - 1, i1));
        taps[static_cast<std::size_t>(o)] = {i0, i1, w1};
    }
    return taps;
}

}  // namespace detail

// input [N,C,D,H,W] -> [N,C,2D,2H,2W]; each output voxel interpolates its 8
// nearest input voxels.
template <typename S>
TensorT<S> upsample_trilinear2x(const TensorT<S>& input) {
    detail::require_rank(input, 5, "upsample_trilinear2x input");
    const std::int64_t N = input.dim(0), C = input.dim(1);
    const std::int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    const std::int64_t Do = 2 * D, Ho = 2 * H, Wo = 2 * W;
    const auto td = detail::upsample_taps(D), th = detail::upsample_taps(H),
               tw = detail::upsample_taps(W);

    std::vector<S> out(static_cast<std::size_t>(N * C * Do * Ho * Wo));
    const S* in = input.data();
    parallel_for(N * C, [&](std::int64_t nc) {
        const S* in_c = in + nc * D * H * W;
        S* out_c = out.data() + nc * Do * Ho * Wo;
        for (std::int64_t od = 0; od < Do; ++od) {
            const auto& d = td[static_cast<std::size_t>(od)];
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
                const auto& h = th[static_cast<std::size_t>(oh)];
                const S* r00 = in_c + (d.i0 * H + h.i0) * W;
                const S* r01 = in_c + (d.i0 * H + h.i1) * W;
                const S* r10 = in_c + (d.i1 * H + h.i0) * W;
                const S* r11 = in_c + (d.i1 * H + h.i1) * W;
                const double wd1 = d.w1, wh1 = h.w1;
                S* out_row = out_c + (od * Ho + oh) * Wo;
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    const auto& w = tw[static_cast<std::size_t>(ow)];
                    const double c00 = r00[w.i0] + w.w1 * (r00[w.i1] - r00[w.i0]);
                    const double c01 = r01[w.i0] + w.w1 * (r01[w.i1] - r01[w.i0]);
                    const double c10 = r10[w.i0] + w.w1 * (r10[w.i1] - r10[w.i0]);
                    const double c11 = r11[w.i0] + w.w1 * (r11[w.i1] - r11[w.i0]);
                    const double c0 = c00 + wh1 * (c01 - c00);
                    const double c1 = c10 + wh1 * (c11 - c10);
                    out_row[ow] = static_cast<S>(c0 + wd1 * (c1 - c0));
                }
            }
        }
    });

    return detail::make_op<S>(
        "upsample_trilinear2x", {N, C, Do, Ho, Wo}, std::move(out), {input},
        [td, th, tw](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
            if (!ig[0]) return;
            const auto& xin = *self.inputs[0];
            const std::int64_t N = xin.shape[0], C = xin.shape[1];
            const std::int64_t D = xin.shape[2], H = xin.shape[3], W = xin.shape[4];
            const std::int64_t Do = 2 * D, Ho = 2 * H, Wo = 2 * W;
            parallel_for(N * C, [&](std::int64_t nc) {
                S* din_c = ig[0] + nc * D * H * W;
                const S* og_c = og + nc * Do * Ho * Wo;
                for (std::int64_t od = 0; od < Do; ++od) {
                    const auto& d = td[static_cast<std::size_t>(od)];
                    for (std::int64_t oh = 0; oh < Ho; ++oh) {
                        const auto& h = th[static_cast<std::size_t>(oh)];
                        const S* og_row = og_c + (od * Ho + oh) * Wo;
                        for (std::int64_t ow = 0; ow < Wo; ++ow) {
                            const auto& w = tw[static_cast<std::size_t>(ow)];
                            const double g = og_row[ow];
                            const double wd0 = 1.0 - d.w1, wh0 = 1.0 - h.w1, ww0 = 1.0 - w.w1;
                            din_c[(d.i0 * H + h.i0) * W + w.i0] += static_cast<S>(g * wd0 * wh0 * ww0);
                            din_c[(d.i0 * H + h.i0) * W + w.i1] += static_cast<S>(g * wd0 * wh0 * w.w1);
                            din_c[(d.i0 * H + h.i1) * W + w.i0] += static_cast<S>(g * wd0 * h.w1 * ww0);
                            din_c[(d.i0 * H + h.i1) * W + w.i1] += static_cast<S>(g * wd0 * h.w1 * w.w1);
                            din_c[(d.i1 * H + h.i0) * W + w.i0] += static_cast<S>(g * d.w1 * wh0 * ww0);
                            din_c[(d.i1 * H + h.i0) * W + w.i1] += static_cast<S>(g * d.w1 * wh0 * w.w1);
                            din_c[(d.i1 * H + h.i1) * W + w.i0] += static_cast<S>(g * d.w1 * h.w1 * ww0);
                            din_c[(d.i1 * H + h.i1) * W + w.i1] += static_cast<S>(g * d.w1 * h.w1 * w.w1);
                        }
                    }
                }
            });
        });
}

// --------------------------------------------------------------------------
// 2x average pooling (the cascade's scale-reduction step)
// --------------------------------------------------------------------------

template <typename S>
TensorT<S> avg_pool2(const TensorT<S>& input) {
    detail::require_rank(input, 5, "avg_pool2 input");
    const std::int64_t N = input.dim(0), C = input.dim(1);
    const std::int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    if (D % 2 || H % 2 || W % 2)
        throw ShapeError("avg_pool2: spatial extents must be even, got " +
                         shape_str(input.shape()));
    const std::int64_t Do = D / 2, Ho = H / 2, Wo = W / 2;
    std::vector<S> out(static_cast<std::size_t>(N * C * Do * Ho * Wo));
    const S* in = input.data();
    parallel_for(N * C, [&](std::int64_t nc) {
        const S* in_c = in + nc * D * H * W;
        S* out_c = out.data() + nc * Do * Ho * Wo;
        for (std::int64_t od = 0; od < Do; ++od)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    S acc = 0;
                    for (std::int64_t dz = 0; dz < 2; ++dz)
                        for (std::int64_t dy = 0; dy < 2; ++dy)
                            for (std::int64_t dx = 0; dx < 2; ++dx)
                                acc += in_c[((od * 2 + dz) * H + oh * 2 + dy) * W + ow * 2 + dx];
                    out_c[(od * Ho + oh) * Wo + ow] = acc / S(8);
                }
    });
    return detail::make_op<S>(
        "avg_pool2", {N, C, Do, Ho, Wo}, std::move(out), {input},
        [](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
            if (!ig[0]) return;
            const auto& xin = *self.inputs[0];
            const std::int64_t N = xin.shape[0], C = xin.shape[1];
            const std::int64_t D = xin.shape[2], H = xin.shape[3], W = xin.shape[4];
            const std::int64_t Do = D / 2, Ho = H / 2, Wo = W / 2;
            parallel_for(N * C, [&](std::int64_t nc) {
                S* din_c = ig[0] + nc * D * H * W;
                const S* og_c = og + nc * Do * Ho * Wo;
                for (std::int64_t od = 0; od < Do; ++od)
                    for (std::int64_t oh = 0; oh < Ho; ++oh)
                        for (std::int64_t ow = 0; ow < Wo; ++ow) {
                            const S g = og_c[(od * Ho + oh) * Wo + ow] / S(8);
                            for (std::int64_t dz = 0; dz < 2; ++dz)
                                for (std::int64_t dy = 0; dy < 2; ++dy)
                                    for (std::int64_t dx = 0; dx < 2; ++dx)
                                        din_c[((od * 2 + dz) * H + oh * 2 + dy) * W + ow * 2 + dx] += g;
                        }
            });
        });
}

// --------------------------------------------------------------------------
// normalization
// --------------------------------------------------------------------------

// Normalizes over (C/groups, D, H, W) per sample and group, then applies the
// per-channel affine. groups == C is instance normalization.
template <typename S>
TensorT<S> group_norm(const TensorT<S>& input, int groups, const TensorT<S>& gamma,
                      const TensorT<S>& beta, double eps = 1e-5) {
    detail::require_rank(input, 5, "group_norm input");
    const std::int64_t N = input.dim(0), C = input.dim(1);
    const std::int64_t D = input.dim(2), H = input.dim(3), W = input.dim(4);
    if (groups < 1 || C % groups != 0)
        throw ShapeError("group_norm: channel count " + std::to_string(C) +
                         " not divisible by groups " + std::to_string(groups));
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw ShapeError("group_norm: affine parameters must have shape [" + std::to_string(C) +
                         "]");
    const std::int64_t G = groups, Cg = C / G, sp = D * H * W, M = Cg * sp;

    std::vector<double> mean(static_cast<std::size_t>(N * G)), invstd(static_cast<std::size_t>(N * G));
    const S* in = input.data();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t g = 0; g < G; ++g) {
            const S* base = in + (n * C + g * Cg) * sp;
            double sum = 0, sumsq = 0;
            for (std::int64_t i = 0; i < M; ++i) {
                const double v = base[i];
                sum += v;
                sumsq += v * v;
            }
            const double mu = sum / static_cast<double>(M);
            const double var = std::max(0.0, sumsq / static_cast<double>(M) - mu * mu);
            mean[static_cast<std::size_t>(n * G + g)] = mu;
            invstd[static_cast<std::size_t>(n * G + g)] = 1.0 / std::sqrt(var + eps);
        }

    std::vector<S> out(static_cast<std::size_t>(N * C * sp));
    const S* gm = gamma.data();
    const S* bt = beta.data();
    parallel_for(N * C, [&](std::int64_t nc) {
        const std::int64_t n = nc / C, c = nc % C, g = c / Cg;
        const double mu = mean[static_cast<std::size_t>(n * G + g)];
        const double is = invstd[static_cast<std::size_t>(n * G + g)];
        const double gam = gm[c], bet = bt[c];
        const S* in_c = in + nc * sp;
        S* out_c = out.data() + nc * sp;
        for (std::int64_t i = 0; i < sp; ++i)
            out_c[i] = static_cast<S>((static_cast<double>(in_c[i]) - mu) * is * gam + bet);
    });

    const int groups_cap = groups;
    return detail::make_op<S>(
        "group_norm", input.shape(), std::move(out), {input, gamma, beta},
        [groups_cap, mean, invstd](const TensorImpl<S>& self, const S* og,
                                   const std::vector<S*>& ig) {
            const auto& xin = *self.inputs[0];
            const S* in = xin.data.data();
            const S* gm = self.inputs[1]->data.data();
            const std::int64_t N = xin.shape[0], C = xin.shape[1];
            const std::int64_t sp = xin.shape[2] * xin.shape[3] * xin.shape[4];
            const std::int64_t G = groups_cap, Cg = C / G, M = Cg * sp;

            if (ig[1] || ig[2]) {
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t c = 0; c < C; ++c) {
                        const std::int64_t g = c / Cg;
                        const double mu = mean[static_cast<std::size_t>(n * G + g)];
                        const double is = invstd[static_cast<std::size_t>(n * G + g)];
                        const S* in_c = in + (n * C + c) * sp;
                        const S* og_c = og + (n * C + c) * sp;
                        double dg = 0, db = 0;
                        for (std::int64_t i = 0; i < sp; ++i) {
                            const double xhat = (static_cast<double>(in_c[i]) - mu) * is;
                            dg += static_cast<double>(og_c[i]) * xhat;
                            db += og_c[i];
                        }
                        if (ig[1]) ig[1][c] += static_cast<S>(dg);
                        if (ig[2]) ig[2][c] += static_cast<S>(db);
                    }
            }
            if (ig[0]) {
                parallel_for(N * G, [&](std::int64_t ng) {
                    const std::int64_t n = ng / G, g = ng % G;
                    const double mu = mean[static_cast<std::size_t>(ng)];
                    const double is = invstd[static_cast<std::size_t>(ng)];
                    const S* in_g = in + (n * C + g * Cg) * sp;
                    const S* og_g = og + (n * C + g * Cg) * sp;
                    // dxhat_i = og_i * gamma_c(i); two reductions over the group
                    double s1 = 0, s2 = 0;
                    for (std::int64_t i = 0; i < M; ++i) {
                        const double gam = gm[g * Cg + i / sp];
                        const double dxh = static_cast<double>(og_g[i]) * gam;
                        const double xhat = (static_cast<double>(in_g[i]) - mu) * is;
                        s1 += dxh;
                        s2 += dxh * xhat;
                    }
                    const double inv_m = 1.0 / static_cast<double>(M);
                    S* din_g = ig[0] + (n * C + g * Cg) * sp;
                    for (std::int64_t i = 0; i < M; ++i) {
                        const double gam = gm[g * Cg + i / sp];
                        const double dxh = static_cast<double>(og_g[i]) * gam;
                        const double xhat = (static_cast<double>(in_g[i]) - mu) * is;
                        din_g[i] += static_cast<S>(is * (dxh - s1 * inv_m - xhat * s2 * inv_m));
                    }
                });
            }
        });
}

// Per (sample, channel) normalization over D,H,W with learnable affine.
template <typename S>
TensorT<S> instance_norm(const TensorT<S>& input, const TensorT<S>& gamma, const TensorT<S>& beta,
                         double eps = 1e-5) {
    detail::require_rank(input, 5, "instance_norm input");
    return group_norm(input, static_cast<int>(input.dim(1)), gamma, beta, eps);
}

// --------------------------------------------------------------------------
// elementwise ops
// --------------------------------------------------------------------------

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
    std::vector<S> out(x.vec());
    for (auto& v : out) v = v > S(0) ? v : S(0);
    return detail::make_op<S>("relu", x.shape(), std::move(out), {x},
                              [](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  if (!ig[0]) return;
                                  const S* in = self.inputs[0]->data.data();
                                  for (std::int64_t i = 0; i < self.numel(); ++i)
                                      if (in[i] > S(0)) ig[0][i] += og[i];
                              });
}

template <typename S>
TensorT<S> leaky_relu(const TensorT<S>& x, double slope = 1e-2) {
    std::vector<S> out(x.vec());
    const S a = static_cast<S>(slope);
    for (auto& v : out) v = v > S(0) ? v : a * v;
    return detail::make_op<S>("leaky_relu", x.shape(), std::move(out), {x},
                              [a](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  if (!ig[0]) return;
                                  const S* in = self.inputs[0]->data.data();
                                  for (std::int64_t i = 0; i < self.numel(); ++i)
                                      ig[0][i] += in[i] > S(0) ? og[i] : a * og[i];
                              });
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    std::vector<S> out(x.vec());
    for (auto& v : out) v = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    return detail::make_op<S>("sigmoid", x.shape(), std::move(out), {x},
                              [](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  if (!ig[0]) return;
                                  const S* y = self.data.data();
                                  for (std::int64_t i = 0; i < self.numel(); ++i)
                                      ig[0][i] += og[i] * y[i] * (S(1) - y[i]);
                              });
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<S> out(a.vec());
    const S* bp = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
    return detail::make_op<S>("add", a.shape(), std::move(out), {a, b},
                              [](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  for (int k = 0; k < 2; ++k)
                                      if (ig[k])
                                          for (std::int64_t i = 0; i < self.numel(); ++i)
                                              ig[k][i] += og[i];
                              });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<S> out(a.vec());
    const S* bp = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bp[i];
    return detail::make_op<S>("mul", a.shape(), std::move(out), {a, b},
                              [](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  const S* ap = self.inputs[0]->data.data();
                                  const S* bp = self.inputs[1]->data.data();
                                  for (std::int64_t i = 0; i < self.numel(); ++i) {
                                      if (ig[0]) ig[0][i] += og[i] * bp[i];
                                      if (ig[1]) ig[1][i] += og[i] * ap[i];
                                  }
                              });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& x, double factor) {
    std::vector<S> out(x.vec());
    const S f = static_cast<S>(factor);
    for (auto& v : out) v *= f;
    return detail::make_op<S>("scale", x.shape(), std::move(out), {x},
                              [f](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  if (!ig[0]) return;
                                  for (std::int64_t i = 0; i < self.numel(); ++i)
                                      ig[0][i] += f * og[i];
                              });
}

// Gradient routes to the larger input; ties go to the first operand.
template <typename S>
TensorT<S> elementwise_max(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "elementwise_max");
    std::vector<S> out(a.vec());
    const S* bp = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] >= bp[i] ? out[i] : bp[i];
    return detail::make_op<S>("elementwise_max", a.shape(), std::move(out), {a, b},
                              [](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  const S* ap = self.inputs[0]->data.data();
                                  const S* bp = self.inputs[1]->data.data();
                                  for (std::int64_t i = 0; i < self.numel(); ++i) {
                                      if (ap[i] >= bp[i]) {
                                          if (ig[0]) ig[0][i] += og[i];
                                      } else if (ig[1]) {
                                          ig[1][i] += og[i];
                                      }
                                  }
                              });
}

// --------------------------------------------------------------------------
// concat / sum
// --------------------------------------------------------------------------

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: needs at least one input");
    const int rank = parts[0].rank();
    if (axis < 0 || axis >= rank)
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    Shape out_shape = parts[0].shape();
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank)
            throw ShapeError("concat: rank mismatch between inputs");
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != parts[0].dim(d))
                throw ShapeError("concat: inputs differ on non-concat dimension " +
                                 std::to_string(d) + ": " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(p.shape()));
        out_shape[static_cast<std::size_t>(axis)] += p.dim(axis);
    }

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= parts[0].dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= parts[0].dim(d);

    std::vector<S> out(static_cast<std::size_t>(shape_numel(out_shape)));
    const std::int64_t out_block = out_shape[static_cast<std::size_t>(axis)] * inner;
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t blk = p.dim(axis) * inner;
        const S* src = p.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(src + o * blk, src + (o + 1) * blk, out.data() + o * out_block + offset);
        offset += blk;
    }

    const std::int64_t inner_cap = inner, outer_cap = outer, out_block_cap = out_block;
    return detail::make_op<S>(
        "concat", out_shape, std::move(out), parts,
        [axis, inner_cap, outer_cap, out_block_cap](const TensorImpl<S>& self, const S* og,
                                                    const std::vector<S*>& ig) {
            std::int64_t offset = 0;
            for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                const std::int64_t blk =
                    self.inputs[k]->shape[static_cast<std::size_t>(axis)] * inner_cap;
                if (ig[k]) {
                    for (std::int64_t o = 0; o < outer_cap; ++o) {
                        const S* src = og + o * out_block_cap + offset;
                        S* dst = ig[k] + o * blk;
                        for (std::int64_t i = 0; i < blk; ++i) dst[i] += src[i];
                    }
                }
                offset += blk;
            }
        });
}

template <typename S>
TensorT<S> sum(const TensorT<S>& x) {
    double acc = 0;
    const S* p = x.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += p[i];
    return detail::make_op<S>("sum", {1}, {static_cast<S>(acc)}, {x},
                              [](const TensorImpl<S>& self, const S* og, const std::vector<S*>& ig) {
                                  if (!ig[0]) return;
                                  const S g = og[0];
                                  const std::int64_t n = self.inputs[0]->numel();
                                  for (std::int64_t i = 0; i < n; ++i) ig[0][i] += g;
                              });
}

}  // namespace dv
