#pragma once

// Mapping between raw label values {0,1,2,4} and the three overlapping
// regions: WT = {1,2,4}, TC = {1,4}, ET = {4}. The regions nest
// (ET subset of TC subset of WT) for every valid label map.

#include "distillvol/volume.hpp"

namespace dv {

bool is_valid_label(std::uint8_t v);

// Throws Error when the label map contains a value outside {0,1,2,4}.
RegionMasks labels_to_regions(const LabelMap& labels);

// Binarizes each channel at `threshold` and assigns per voxel with priority
// ET -> 4, else TC -> 1, else WT -> 2, else 0, so the round trip through
// labels_to_regions is exact.
LabelMap regions_to_labels(const RegionProbs& probs, float threshold = 0.5f);

// Hard masks viewed as probabilities (0/1 floats).
RegionProbs masks_to_probs(const RegionMasks& masks);

}  // namespace dv
