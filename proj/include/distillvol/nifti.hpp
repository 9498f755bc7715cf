#pragma once

// Minimal reader for single-file uncompressed NIfTI-1 volumes (.nii), enough
// to import externally preprocessed scans into the native case layout.
// Supported datatypes: uint8, int16, int32, float32, float64, uint16.

#include <filesystem>

#include "distillvol/volume.hpp"

namespace dv {

// Scanner x maps to W, y to H, z to D. scl_slope/scl_inter are applied
// (slope 0 treated as 1).
Volume read_nifti_volume(const std::filesystem::path& path);

// Same file read as integer labels; values are validated against {0,1,2,4}.
LabelMap read_nifti_labels(const std::filesystem::path& path);

}  // namespace dv
