#pragma once

// Preprocessing, augmentation, patch sampling and the synthetic-tumor
// generator that makes dataset-free end-to-end runs possible.

#include <cstdint>
#include <random>

#include "distillvol/volume.hpp"

namespace dv {

// Numeric ranges are configurable defaults; only the axis restrictions come
// from the source protocol (mirroring across X and Y, rotation about Z only).
struct AugmentParams {
    double scale_min = 0.9, scale_max = 1.1;
    double rotation_deg = 15.0;    // Z-axis rotation drawn from [-r, +r]
    bool mirror_x = true;          // each enabled axis flips with prob 0.5
    bool mirror_y = true;
    double intensity_shift = 0.1;  // shift in units of foreground std
    double contrast_min = 0.9, contrast_max = 1.1;

    static AugmentParams identity() {
        AugmentParams p;
        p.scale_min = p.scale_max = 1.0;
        p.rotation_deg = 0.0;
        p.mirror_x = p.mirror_y = false;
        p.intensity_shift = 0.0;
        p.contrast_min = p.contrast_max = 1.0;
        return p;
    }
};

// Zero mean / unit variance over the non-zero foreground, computed per
// modality; background voxels stay exactly 0. All-zero volumes are returned
// unchanged; constant foregrounds map to 0.
Volume normalize(const Volume& v);
void normalize_scan(MultiModalScan& scan);

enum class ResampleMode { trilinear, nearest };

// Align-corners=false resampling to arbitrary target extents; identity
// extents return a bit-identical copy.
Volume resample(const Volume& v, const Extents3& target, ResampleMode mode);
LabelMap resample_labels(const LabelMap& labels, const Extents3& target);
RegionProbs resample_probs(const RegionProbs& probs, const Extents3& target);
void resample_scan(MultiModalScan& scan, const Extents3& target);

// Uniform random crop rejected until the patch holds at least one foreground
// voxel (100 tries, then a crop centered on a uniformly chosen foreground
// voxel). Foreground means nonzero labels, or any soft probability > 0.5 for
// ensemble-labeled cases. Throws Error when the case has no foreground.
MultiModalScan random_crop_foreground(const MultiModalScan& scan, const Extents3& patch,
                                      std::mt19937_64& rng);

// Spatial transform (scale, Z rotation, optional X/Y mirror) applied
// identically to all modalities and targets; intensity shift and contrast
// drawn independently per modality and applied to foreground voxels only.
MultiModalScan augment(const MultiModalScan& patch, const AugmentParams& params,
                       std::mt19937_64& rng);

// Deterministic per seed: 1-3 tumor sites of nested ellipsoids (edema 2 /
// core 1 / enhancing 4) inside a smooth noisy brain ellipsoid, 4 modalities
// with distinct per-region contrast. Extents must be >= 16 per axis.
MultiModalScan generate_synthetic_case(std::uint64_t seed, const Extents3& extents);

// The hard or soft region target of a labeled case, as [3,D,H,W] floats.
RegionProbs target_probs(const MultiModalScan& scan);

}  // namespace dv
