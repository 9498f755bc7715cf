#include "distillvol/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "distillvol/errors.hpp"
#include "distillvol/regions.hpp"
#include "distillvol/util.hpp"

namespace dv {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct FgStats {
    double mean = 0, var = 0;
    std::int64_t count = 0;
};

FgStats foreground_stats(const std::vector<float>& voxels) {
    double sum = 0, sumsq = 0;
    std::int64_t n = 0;
    for (float v : voxels) {
        if (v != 0.0f) {
            sum += v;
            sumsq += static_cast<double>(v) * v;
            ++n;
        }
    }
    FgStats s;
    s.count = n;
    if (n > 0) {
        s.mean = sum / static_cast<double>(n);
        s.var = std::max(0.0, sumsq / static_cast<double>(n) - s.mean * s.mean);
    }
    return s;
}

}  // namespace

Volume normalize(const Volume& v) {
    const FgStats s = foreground_stats(v.voxels);
    Volume out;
    out.extents = v.extents;
    out.voxels = v.voxels;
    if (s.count == 0) return out;  // all-zero volume stays as is
    if (s.var == 0.0) {
        // constant foreground collapses to 0
        for (auto& x : out.voxels)
            if (x != 0.0f) x = 0.0f;
        return out;
    }
    const double inv_std = 1.0 / std::sqrt(s.var);
    for (auto& x : out.voxels)
        if (x != 0.0f) x = static_cast<float>((static_cast<double>(x) - s.mean) * inv_std);
    return out;
}

void normalize_scan(MultiModalScan& scan) {
    for (auto& m : scan.modalities) m = normalize(m);
}

// ---- resampling ------------------------------------------------------------

namespace {

struct AxisTap {
    std::int64_t i0, i1;
    double w1;
};

std::vector<AxisTap> resample_taps(std::int64_t in_extent, std::int64_t out_extent) {
    std::vector<AxisTap> taps(static_cast<std::size_t>(out_extent));
    const double ratio = static_cast<double>(in_extent) / static_cast<double>(out_extent);
    for (std::int64_t o = 0; o < out_extent; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
        const double w1 = src - static_cast<double>(i0);
        std::int64_t i1 = i0 + 1;
        i0 = std::clamp<std::int64_t>(i0, 0, in_extent - 1);
        i1 = std::clamp<std::int64_t>(i1, 0, in_extent - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, w1};
    }
    return taps;
}

std::int64_t nearest_index(std::int64_t in_extent, std::int64_t out_extent, std::int64_t o) {
    const double ratio = static_cast<double>(in_extent) / static_cast<double>(out_extent);
    const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(src + 0.5)), 0,
                                    in_extent - 1);
}

// One [D,H,W] channel, trilinear.
void resample_channel_trilinear(const float* in, const Extents3& ie, float* out,
                                const Extents3& oe) {
    const auto td = resample_taps(ie[0], oe[0]);
    const auto th = resample_taps(ie[1], oe[1]);
    const auto tw = resample_taps(ie[2], oe[2]);
    const std::int64_t H = ie[1], W = ie[2];
    std::int64_t idx = 0;
    for (std::int64_t d = 0; d < oe[0]; ++d) {
        const auto& zd = td[static_cast<std::size_t>(d)];
        for (std::int64_t h = 0; h < oe[1]; ++h) {
            const auto& yh = th[static_cast<std::size_t>(h)];
            const float* r00 = in + (zd.i0 * H + yh.i0) * W;
            const float* r01 = in + (zd.i0 * H + yh.i1) * W;
            const float* r10 = in + (zd.i1 * H + yh.i0) * W;
            const float* r11 = in + (zd.i1 * H + yh.i1) * W;
            for (std::int64_t w = 0; w < oe[2]; ++w) {
                const auto& xw = tw[static_cast<std::size_t>(w)];
                const double c00 = r00[xw.i0] + xw.w1 * (r00[xw.i1] - r00[xw.i0]);
                const double c01 = r01[xw.i0] + xw.w1 * (r01[xw.i1] - r01[xw.i0]);
                const double c10 = r10[xw.i0] + xw.w1 * (r10[xw.i1] - r10[xw.i0]);
                const double c11 = r11[xw.i0] + xw.w1 * (r11[xw.i1] - r11[xw.i0]);
                const double c0 = c00 + yh.w1 * (c01 - c00);
                const double c1 = c10 + yh.w1 * (c11 - c10);
                out[idx++] = static_cast<float>(c0 + zd.w1 * (c1 - c0));
            }
        }
    }
}

}  // namespace

Volume resample(const Volume& v, const Extents3& target, ResampleMode mode) {
    for (int i = 0; i < 3; ++i)
        if (target[static_cast<std::size_t>(i)] < 1)
            throw ShapeError("resample: target extent must be >= 1 on axis " + std::to_string(i));
    if (target == v.extents) return v;  // bit-identical copy
    Volume out;
    out.extents = target;
    out.voxels.resize(static_cast<std::size_t>(extents_numel(target)));
    if (mode == ResampleMode::trilinear) {
        resample_channel_trilinear(v.voxels.data(), v.extents, out.voxels.data(), target);
    } else {
        const std::int64_t H = v.extents[1], W = v.extents[2];
        std::int64_t idx = 0;
        for (std::int64_t d = 0; d < target[0]; ++d) {
            const std::int64_t sd = nearest_index(v.extents[0], target[0], d);
            for (std::int64_t h = 0; h < target[1]; ++h) {
                const std::int64_t sh = nearest_index(v.extents[1], target[1], h);
                for (std::int64_t w = 0; w < target[2]; ++w) {
                    const std::int64_t sw = nearest_index(v.extents[2], target[2], w);
                    out.voxels[static_cast<std::size_t>(idx++)] =
                        v.voxels[static_cast<std::size_t>((sd * H + sh) * W + sw)];
                }
            }
        }
    }
    return out;
}

LabelMap resample_labels(const LabelMap& labels, const Extents3& target) {
    if (target == labels.extents) return labels;
    LabelMap out;
    out.extents = target;
    out.labels.resize(static_cast<std::size_t>(extents_numel(target)));
    const std::int64_t H = labels.extents[1], W = labels.extents[2];
    std::int64_t idx = 0;
    for (std::int64_t d = 0; d < target[0]; ++d) {
        const std::int64_t sd = nearest_index(labels.extents[0], target[0], d);
        for (std::int64_t h = 0; h < target[1]; ++h) {
            const std::int64_t sh = nearest_index(labels.extents[1], target[1], h);
            for (std::int64_t w = 0; w < target[2]; ++w) {
                const std::int64_t sw = nearest_index(labels.extents[2], target[2], w);
                out.labels[static_cast<std::size_t>(idx++)] =
                    labels.labels[static_cast<std::size_t>((sd * H + sh) * W + sw)];
            }
        }
    }
    return out;
}

RegionProbs resample_probs(const RegionProbs& probs, const Extents3& target) {
    if (target == probs.extents) return probs;
    RegionProbs out;
    out.extents = target;
    const std::int64_t in_n = extents_numel(probs.extents);
    const std::int64_t out_n = extents_numel(target);
    out.probs.resize(static_cast<std::size_t>(3 * out_n));
    for (int k = 0; k < 3; ++k)
        resample_channel_trilinear(probs.probs.data() + k * in_n, probs.extents,
                                   out.probs.data() + k * out_n, target);
    return out;
}

void resample_scan(MultiModalScan& scan, const Extents3& target) {
    for (auto& m : scan.modalities) m = resample(m, target, ResampleMode::trilinear);
    if (scan.labels) scan.labels = resample_labels(*scan.labels, target);
    if (scan.soft_labels) scan.soft_labels = resample_probs(*scan.soft_labels, target);
}

// ---- patch sampling --------------------------------------------------------

namespace {

// Foreground indicator for crop sampling: nonzero label, or any soft region
// probability above 0.5.
bool patch_has_foreground(const MultiModalScan& scan, const Extents3& off, const Extents3& patch) {
    const Extents3& e = scan.extents();
    const std::int64_t H = e[1], W = e[2];
    if (scan.labels) {
        const auto& lbl = scan.labels->labels;
        for (std::int64_t d = 0; d < patch[0]; ++d)
            for (std::int64_t h = 0; h < patch[1]; ++h) {
                const std::int64_t base = ((off[0] + d) * H + off[1] + h) * W + off[2];
                for (std::int64_t w = 0; w < patch[2]; ++w)
                    if (lbl[static_cast<std::size_t>(base + w)] != 0) return true;
            }
        return false;
    }
    const std::int64_t n = extents_numel(e);
    const float* probs = scan.soft_labels->probs.data();
    for (int k = 0; k < 3; ++k)
        for (std::int64_t d = 0; d < patch[0]; ++d)
            for (std::int64_t h = 0; h < patch[1]; ++h) {
                const std::int64_t base =
                    k * n + ((off[0] + d) * H + off[1] + h) * W + off[2];
                for (std::int64_t w = 0; w < patch[2]; ++w)
                    if (probs[base + w] > 0.5f) return true;
            }
    return false;
}

MultiModalScan crop_scan(const MultiModalScan& scan, const Extents3& off, const Extents3& patch) {
    MultiModalScan out;
    out.case_id = scan.case_id;
    out.grade = scan.grade;
    out.provenance = scan.provenance;
    const Extents3& e = scan.extents();
    const std::int64_t H = e[1], W = e[2];

    auto crop_channel = [&](const auto& src, auto& dst) {
        dst.resize(static_cast<std::size_t>(extents_numel(patch)));
        std::int64_t idx = 0;
        for (std::int64_t d = 0; d < patch[0]; ++d)
            for (std::int64_t h = 0; h < patch[1]; ++h) {
                const std::int64_t base = ((off[0] + d) * H + off[1] + h) * W + off[2];
                for (std::int64_t w = 0; w < patch[2]; ++w)
                    dst[static_cast<std::size_t>(idx++)] = src[static_cast<std::size_t>(base + w)];
            }
    };

    for (int m = 0; m < 4; ++m) {
        out.modalities[static_cast<std::size_t>(m)].extents = patch;
        crop_channel(scan.modalities[static_cast<std::size_t>(m)].voxels,
                     out.modalities[static_cast<std::size_t>(m)].voxels);
    }
    if (scan.labels) {
        LabelMap lm;
        lm.extents = patch;
        crop_channel(scan.labels->labels, lm.labels);
        out.labels = std::move(lm);
    }
    if (scan.soft_labels) {
        RegionProbs rp;
        rp.extents = patch;
        const std::int64_t in_n = extents_numel(e);
        const std::int64_t out_n = extents_numel(patch);
        rp.probs.resize(static_cast<std::size_t>(3 * out_n));
        for (int k = 0; k < 3; ++k) {
            std::vector<float> tmp;
            std::vector<float> src(scan.soft_labels->probs.begin() + k * in_n,
                                   scan.soft_labels->probs.begin() + (k + 1) * in_n);
            crop_channel(src, tmp);
            std::copy(tmp.begin(), tmp.end(), rp.probs.begin() + k * out_n);
        }
        out.soft_labels = std::move(rp);
    }
    return out;
}

}  // namespace

MultiModalScan random_crop_foreground(const MultiModalScan& scan, const Extents3& patch,
                                      std::mt19937_64& rng) {
    const Extents3& e = scan.extents();
    for (int i = 0; i < 3; ++i)
        if (patch[static_cast<std::size_t>(i)] > e[static_cast<std::size_t>(i)])
            throw ShapeError("random_crop_foreground: patch extent " +
                             std::to_string(patch[static_cast<std::size_t>(i)]) +
                             " exceeds volume extent " +
                             std::to_string(e[static_cast<std::size_t>(i)]) + " on axis " +
                             std::to_string(i));
    if (!scan.has_target())
        throw Error("random_crop_foreground: case " + scan.case_id + " has no labels");

    for (int attempt = 0; attempt < 100; ++attempt) {
        Extents3 off{uniform_int(rng, 0, e[0] - patch[0]), uniform_int(rng, 0, e[1] - patch[1]),
                     uniform_int(rng, 0, e[2] - patch[2])};
        if (patch_has_foreground(scan, off, patch)) return crop_scan(scan, off, patch);
    }

    // fall back to a crop centered on a uniformly chosen foreground voxel
    std::vector<std::int64_t> fg;
    const std::int64_t n = extents_numel(e);
    if (scan.labels) {
        for (std::int64_t i = 0; i < n; ++i)
            if (scan.labels->labels[static_cast<std::size_t>(i)] != 0) fg.push_back(i);
    } else {
        const float* probs = scan.soft_labels->probs.data();
        for (std::int64_t i = 0; i < n; ++i)
            if (probs[i] > 0.5f || probs[n + i] > 0.5f || probs[2 * n + i] > 0.5f)
                fg.push_back(i);
    }
    if (fg.empty()) throw Error("no foreground available in case " + scan.case_id);

    const std::int64_t pick = fg[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(fg.size()) - 1))];
    const std::int64_t H = e[1], W = e[2];
    const Extents3 voxel{pick / (H * W), (pick / W) % H, pick % W};
    Extents3 off;
    for (int i = 0; i < 3; ++i)
        off[static_cast<std::size_t>(i)] = std::clamp<std::int64_t>(
            voxel[static_cast<std::size_t>(i)] - patch[static_cast<std::size_t>(i)] / 2, 0,
            e[static_cast<std::size_t>(i)] - patch[static_cast<std::size_t>(i)]);
    return crop_scan(scan, off, patch);
}

// ---- augmentation ----------------------------------------------------------

namespace {

// Inverse-mapping spatial resample: scale about the center on all axes,
// rotate about Z (the D axis), zeros outside. Trilinear for intensities.
template <typename Sampler>
void warp_channel(const Extents3& e, double inv_scale, double cos_t, double sin_t,
                  Sampler&& sample_src) {
    const double cd = static_cast<double>(e[0] - 1) / 2.0;
    const double ch = static_cast<double>(e[1] - 1) / 2.0;
    const double cw = static_cast<double>(e[2] - 1) / 2.0;
    for (std::int64_t d = 0; d < e[0]; ++d) {
        const double sd = cd + (static_cast<double>(d) - cd) * inv_scale;
        for (std::int64_t h = 0; h < e[1]; ++h) {
            const double y = static_cast<double>(h) - ch;
            for (std::int64_t w = 0; w < e[2]; ++w) {
                const double x = static_cast<double>(w) - cw;
                // R(-theta) applied to the (x, y) offsets, then 1/s
                const double sx = cw + (cos_t * x + sin_t * y) * inv_scale;
                const double sy = ch + (-sin_t * x + cos_t * y) * inv_scale;
                sample_src(d, h, w, sd, sy, sx);
            }
        }
    }
}

float sample_trilinear_zero(const std::vector<float>& v, const Extents3& e, double sd, double sy,
                            double sx) {
    if (sd < -0.5 || sy < -0.5 || sx < -0.5 || sd > static_cast<double>(e[0]) - 0.5 ||
        sy > static_cast<double>(e[1]) - 0.5 || sx > static_cast<double>(e[2]) - 0.5)
        return 0.0f;
    const auto tap = [](double s, std::int64_t extent, std::int64_t& i0, std::int64_t& i1,
                        double& w1) {
        i0 = static_cast<std::int64_t>(std::floor(s));
        w1 = s - static_cast<double>(i0);
        i1 = std::clamp<std::int64_t>(i0 + 1, 0, extent - 1);
        i0 = std::clamp<std::int64_t>(i0, 0, extent - 1);
    };
    std::int64_t d0, d1, h0, h1, w0, w1i;
    double wd, wh, ww;
    tap(sd, e[0], d0, d1, wd);
    tap(sy, e[1], h0, h1, wh);
    tap(sx, e[2], w0, w1i, ww);
    const std::int64_t H = e[1], W = e[2];
    auto at = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
        return static_cast<double>(v[static_cast<std::size_t>((d * H + h) * W + w)]);
    };
    const double c00 = at(d0, h0, w0) + ww * (at(d0, h0, w1i) - at(d0, h0, w0));
    const double c01 = at(d0, h1, w0) + ww * (at(d0, h1, w1i) - at(d0, h1, w0));
    const double c10 = at(d1, h0, w0) + ww * (at(d1, h0, w1i) - at(d1, h0, w0));
    const double c11 = at(d1, h1, w0) + ww * (at(d1, h1, w1i) - at(d1, h1, w0));
    const double c0 = c00 + wh * (c01 - c00);
    const double c1 = c10 + wh * (c11 - c10);
    return static_cast<float>(c0 + wd * (c1 - c0));
}

std::uint8_t sample_nearest_zero(const std::vector<std::uint8_t>& v, const Extents3& e, double sd,
                                 double sy, double sx) {
    const std::int64_t d = static_cast<std::int64_t>(std::floor(sd + 0.5));
    const std::int64_t h = static_cast<std::int64_t>(std::floor(sy + 0.5));
    const std::int64_t w = static_cast<std::int64_t>(std::floor(sx + 0.5));
    if (d < 0 || h < 0 || w < 0 || d >= e[0] || h >= e[1] || w >= e[2]) return 0;
    return v[static_cast<std::size_t>((d * e[1] + h) * e[2] + w)];
}

template <typename T>
void mirror_axis(std::vector<T>& v, const Extents3& e, int axis) {
    const std::int64_t D = e[0], H = e[1], W = e[2];
    std::vector<T> out(v.size());
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) {
                const std::int64_t sh = axis == 1 ? H - 1 - h : h;
                const std::int64_t sw = axis == 2 ? W - 1 - w : w;
                out[static_cast<std::size_t>((d * H + h) * W + w)] =
                    v[static_cast<std::size_t>((d * H + sh) * W + sw)];
            }
    v.swap(out);
}

}  // namespace

MultiModalScan augment(const MultiModalScan& patch, const AugmentParams& params,
                       std::mt19937_64& rng) {
    // fixed draw order keeps seeded pipelines reproducible regardless of
    // which transforms end up active
    const double scale = uniform(rng, params.scale_min, params.scale_max);
    const double theta_deg = params.rotation_deg > 0.0
                                 ? uniform(rng, -params.rotation_deg, params.rotation_deg)
                                 : 0.0;
    const bool flip_x = params.mirror_x && uniform01(rng) < 0.5;
    const bool flip_y = params.mirror_y && uniform01(rng) < 0.5;
    std::array<double, 4> shift{}, contrast{};
    for (int m = 0; m < 4; ++m) {
        shift[static_cast<std::size_t>(m)] =
            params.intensity_shift > 0.0
                ? uniform(rng, -params.intensity_shift, params.intensity_shift)
                : 0.0;
        contrast[static_cast<std::size_t>(m)] = uniform(rng, params.contrast_min, params.contrast_max);
    }

    MultiModalScan out = patch;
    const Extents3& e = patch.extents();
    const bool warp = scale != 1.0 || theta_deg != 0.0;

    if (warp) {
        const double inv_scale = 1.0 / scale;
        const double theta = theta_deg * kPi / 180.0;
        const double cos_t = std::cos(theta), sin_t = std::sin(theta);
        for (int m = 0; m < 4; ++m) {
            const auto& src = patch.modalities[static_cast<std::size_t>(m)].voxels;
            auto& dst = out.modalities[static_cast<std::size_t>(m)].voxels;
            warp_channel(e, inv_scale, cos_t, sin_t,
                         [&](std::int64_t d, std::int64_t h, std::int64_t w, double sd, double sy,
                             double sx) {
                             dst[static_cast<std::size_t>((d * e[1] + h) * e[2] + w)] =
                                 sample_trilinear_zero(src, e, sd, sy, sx);
                         });
        }
        if (patch.labels) {
            const auto& src = patch.labels->labels;
            auto& dst = out.labels->labels;
            warp_channel(e, inv_scale, cos_t, sin_t,
                         [&](std::int64_t d, std::int64_t h, std::int64_t w, double sd, double sy,
                             double sx) {
                             dst[static_cast<std::size_t>((d * e[1] + h) * e[2] + w)] =
                                 sample_nearest_zero(src, e, sd, sy, sx);
                         });
        }
        if (patch.soft_labels) {
            const std::int64_t n = extents_numel(e);
            for (int k = 0; k < 3; ++k) {
                std::vector<float> src(patch.soft_labels->probs.begin() + k * n,
                                       patch.soft_labels->probs.begin() + (k + 1) * n);
                float* dst = out.soft_labels->probs.data() + k * n;
                warp_channel(e, inv_scale, cos_t, sin_t,
                             [&](std::int64_t d, std::int64_t h, std::int64_t w, double sd,
                                 double sy, double sx) {
                                 dst[(d * e[1] + h) * e[2] + w] =
                                     sample_trilinear_zero(src, e, sd, sy, sx);
                             });
            }
        }
    }

    for (int axis : {1, 2}) {
        const bool flip = axis == 1 ? flip_y : flip_x;
        if (!flip) continue;
        for (auto& m : out.modalities) mirror_axis(m.voxels, e, axis);
        if (out.labels) mirror_axis(out.labels->labels, e, axis);
        if (out.soft_labels) {
            const std::int64_t n = extents_numel(e);
            for (int k = 0; k < 3; ++k) {
                std::vector<float> ch(out.soft_labels->probs.begin() + k * n,
                                      out.soft_labels->probs.begin() + (k + 1) * n);
                mirror_axis(ch, e, axis);
                std::copy(ch.begin(), ch.end(), out.soft_labels->probs.begin() + k * n);
            }
        }
    }

    for (int m = 0; m < 4; ++m) {
        const double c = contrast[static_cast<std::size_t>(m)];
        const double sh = shift[static_cast<std::size_t>(m)];
        if (c == 1.0 && sh == 0.0) continue;  // exact identity path
        auto& vox = out.modalities[static_cast<std::size_t>(m)].voxels;
        const FgStats st = foreground_stats(vox);
        if (st.count == 0) continue;
        const double add = sh * std::sqrt(st.var);
        for (auto& v : vox)
            if (v != 0.0f)
                v = static_cast<float>(st.mean + (static_cast<double>(v) - st.mean) * c + add);
    }

    return out;
}

// ---- synthetic generator ---------------------------------------------------

namespace {

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radii;

    bool contains(double d, double h, double w) const {
        const double zd = (d - center[0]) / radii[0];
        const double yh = (h - center[1]) / radii[1];
        const double xw = (w - center[2]) / radii[2];
        return zd * zd + yh * yh + xw * xw <= 1.0;
    }
};

struct Tumor {
    Ellipsoid wt, tc, et;  // nested, shared center
};

struct CosField {
    std::array<double, 3> freq;
    double phase, amp;

    double at(double d, double h, double w) const {
        return amp * std::cos(2.0 * kPi * (freq[0] * d + freq[1] * h + freq[2] * w) + phase);
    }
};

}  // namespace

MultiModalScan generate_synthetic_case(std::uint64_t seed, const Extents3& extents) {
    for (int i = 0; i < 3; ++i)
        if (extents[static_cast<std::size_t>(i)] < 16)
            throw Error("generate_synthetic_case: extents must be >= 16, got " +
                        std::to_string(extents[static_cast<std::size_t>(i)]) + " on axis " +
                        std::to_string(i));

    auto rng = make_rng(hash_combine(0x53594e5448ull /* "SYNTH" */, seed));
    const double D = static_cast<double>(extents[0]);
    const double H = static_cast<double>(extents[1]);
    const double W = static_cast<double>(extents[2]);

    Ellipsoid brain;
    brain.center = {(D - 1.0) / 2.0, (H - 1.0) / 2.0, (W - 1.0) / 2.0};
    brain.radii = {D / 2.0 * uniform(rng, 0.78, 0.9), H / 2.0 * uniform(rng, 0.78, 0.9),
                   W / 2.0 * uniform(rng, 0.78, 0.9)};

    std::array<double, 4> base;
    std::array<std::array<CosField, 3>, 4> fields;
    std::array<double, 4> noise_sigma;
    for (int m = 0; m < 4; ++m) {
        base[static_cast<std::size_t>(m)] = uniform(rng, 0.55, 0.95);
        for (int j = 0; j < 3; ++j) {
            CosField f;
            f.freq = {uniform(rng, 0.5, 1.5) / D, uniform(rng, 0.5, 1.5) / H,
                      uniform(rng, 0.5, 1.5) / W};
            f.phase = uniform(rng, 0.0, 2.0 * kPi);
            f.amp = uniform(rng, 0.03, 0.08);
            fields[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] = f;
        }
        noise_sigma[static_cast<std::size_t>(m)] = uniform(rng, 0.015, 0.035);
    }

    const double min_extent = static_cast<double>(
        std::min(extents[0], std::min(extents[1], extents[2])));
    const int tumor_count = static_cast<int>(uniform_int(rng, 1, 3));
    std::vector<Tumor> tumors;
    for (int t = 0; t < tumor_count; ++t) {
        Tumor tm;
        for (int i = 0; i < 3; ++i)
            tm.wt.center[static_cast<std::size_t>(i)] =
                brain.center[static_cast<std::size_t>(i)] +
                uniform(rng, -0.4, 0.4) * brain.radii[static_cast<std::size_t>(i)];
        const double base_r = uniform(rng, 0.14, 0.2) * min_extent;
        const double q_tc = uniform(rng, 0.55, 0.75);
        const double q_et = uniform(rng, 0.5, 0.7);
        for (int i = 0; i < 3; ++i) {
            double r_wt = base_r * uniform(rng, 0.85, 1.2);
            r_wt = std::max(3.2, std::min(r_wt, 0.55 * brain.radii[static_cast<std::size_t>(i)]));
            const double r_tc = std::clamp(q_tc * r_wt, 2.4, r_wt - 0.8);
            const double r_et = std::clamp(q_et * r_tc, 1.6, r_tc - 0.8);
            tm.wt.radii[static_cast<std::size_t>(i)] = r_wt;
            tm.tc.radii[static_cast<std::size_t>(i)] = r_tc;
            tm.et.radii[static_cast<std::size_t>(i)] = r_et;
        }
        tm.tc.center = tm.et.center = tm.wt.center;
        tumors.push_back(tm);
    }

    // per-modality intensity offsets for edema(2) / core(1) / enhancing(4)
    const double offs[4][3] = {
        {-0.12, -0.30, +0.10},  // T1
        {-0.08, -0.25, +0.55},  // T1Gd
        {+0.45, +0.20, +0.15},  // T2
        {+0.50, +0.25, +0.20},  // FLAIR
    };
    std::array<std::array<double, 3>, 4> region_off;
    for (int m = 0; m < 4; ++m)
        for (int r = 0; r < 3; ++r)
            region_off[static_cast<std::size_t>(m)][static_cast<std::size_t>(r)] =
                offs[m][r] + uniform(rng, -0.05, 0.05);

    MultiModalScan scan;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "syn%06llu", static_cast<unsigned long long>(seed));
    scan.case_id = idbuf;
    scan.grade = (seed % 2 == 0) ? "HGG" : "LGG";
    scan.provenance = Provenance::manual;

    const std::int64_t n = extents_numel(extents);
    for (auto& m : scan.modalities) {
        m.extents = extents;
        m.voxels.assign(static_cast<std::size_t>(n), 0.0f);
    }
    LabelMap lm;
    lm.extents = extents;
    lm.labels.assign(static_cast<std::size_t>(n), 0);

    std::int64_t idx = 0;
    for (std::int64_t d = 0; d < extents[0]; ++d)
        for (std::int64_t h = 0; h < extents[1]; ++h)
            for (std::int64_t w = 0; w < extents[2]; ++w, ++idx) {
                const double fd = static_cast<double>(d), fh = static_cast<double>(h),
                             fw = static_cast<double>(w);
                if (!brain.contains(fd, fh, fw)) {
                    for (int m = 0; m < 4; ++m) (void)0;
                    continue;  // background stays exactly 0 (no draws outside the brain)
                }
                int region = -1;  // 0 edema, 1 core, 2 enhancing
                for (const auto& tm : tumors) {
                    if (tm.et.contains(fd, fh, fw)) {
                        region = 2;
                        break;
                    }
                    if (tm.tc.contains(fd, fh, fw)) region = std::max(region, 1);
                    else if (tm.wt.contains(fd, fh, fw)) region = std::max(region, 0);
                }
                if (region == 2) lm.labels[static_cast<std::size_t>(idx)] = 4;
                else if (region == 1) lm.labels[static_cast<std::size_t>(idx)] = 1;
                else if (region == 0) lm.labels[static_cast<std::size_t>(idx)] = 2;

                for (int m = 0; m < 4; ++m) {
                    double v = base[static_cast<std::size_t>(m)];
                    for (const auto& f : fields[static_cast<std::size_t>(m)]) v += f.at(fd, fh, fw);
                    if (region >= 0)
                        v += region_off[static_cast<std::size_t>(m)][static_cast<std::size_t>(region)];
                    v += noise_sigma[static_cast<std::size_t>(m)] * gaussian(rng);
                    if (v < 0.05) v = 0.05;  // keep brain voxels nonzero
                    scan.modalities[static_cast<std::size_t>(m)]
                        .voxels[static_cast<std::size_t>(idx)] = static_cast<float>(v);
                }
            }

    scan.labels = std::move(lm);
    return scan;
}

RegionProbs target_probs(const MultiModalScan& scan) {
    if (scan.soft_labels) return *scan.soft_labels;
    if (scan.labels) return masks_to_probs(labels_to_regions(*scan.labels));
    throw Error("case " + scan.case_id + " has no target labels");
}

}  // namespace dv
