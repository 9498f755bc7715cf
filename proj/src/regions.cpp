#include "distillvol/regions.hpp"

#include "distillvol/errors.hpp"

namespace dv {

bool is_valid_label(std::uint8_t v) { return v == 0 || v == 1 || v == 2 || v == 4; }

RegionMasks labels_to_regions(const LabelMap& labels) {
    const std::int64_t n = extents_numel(labels.extents);
    RegionMasks out;
    out.extents = labels.extents;
    out.masks.assign(static_cast<std::size_t>(3 * n), 0);
    std::uint8_t* wt = out.masks.data();
    std::uint8_t* tc = wt + n;
    std::uint8_t* et = tc + n;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint8_t v = labels.labels[static_cast<std::size_t>(i)];
        if (!is_valid_label(v))
            throw Error("invalid label value " + std::to_string(v) + " at voxel " +
                        std::to_string(i) + " (expected one of 0,1,2,4)");
        if (v != 0) wt[i] = 1;
        if (v == 1 || v == 4) tc[i] = 1;
        if (v == 4) et[i] = 1;
    }
    return out;
}

LabelMap regions_to_labels(const RegionProbs& probs, float threshold) {
    if (threshold <= 0.0f || threshold >= 1.0f)
        throw Error("regions_to_labels threshold must be in (0,1), got " +
                    std::to_string(threshold));
    const std::int64_t n = extents_numel(probs.extents);
    LabelMap out;
    out.extents = probs.extents;
    out.labels.assign(static_cast<std::size_t>(n), 0);
    const float* wt = probs.probs.data();
    const float* tc = wt + n;
    const float* et = tc + n;
    for (std::int64_t i = 0; i < n; ++i) {
        if (et[i] > threshold)
            out.labels[static_cast<std::size_t>(i)] = 4;
        else if (tc[i] > threshold)
            out.labels[static_cast<std::size_t>(i)] = 1;
        else if (wt[i] > threshold)
            out.labels[static_cast<std::size_t>(i)] = 2;
    }
    return out;
}

RegionProbs masks_to_probs(const RegionMasks& masks) {
    RegionProbs out;
    out.extents = masks.extents;
    out.probs.resize(masks.masks.size());
    for (std::size_t i = 0; i < masks.masks.size(); ++i)
        out.probs[i] = static_cast<float>(masks.masks[i]);
    return out;
}

}  // namespace dv
