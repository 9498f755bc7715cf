#pragma once

// Volume containers and disk layout. A case directory holds one .dvv file per
// modality (t1, t1gd, t2, flair), an optional seg.dvv label map, and a
// case.meta sidecar with case id, tumor grade tag and label provenance.
//
// DVV container: magic "DVV1", u8 dtype (0 = float32, 1 = uint8), u8 rank,
// rank x u64 little-endian extents, then the raw little-endian buffer.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dv {

using Extents3 = std::array<std::int64_t, 3>;  // D,H,W

inline std::int64_t extents_numel(const Extents3& e) { return e[0] * e[1] * e[2]; }

struct Volume {
    Extents3 extents{0, 0, 0};
    std::vector<float> voxels;  // length D*H*W, W fastest
};

struct LabelMap {
    Extents3 extents{0, 0, 0};
    std::vector<std::uint8_t> labels;  // values in {0,1,2,4}
};

// Binary masks for the three overlapping regions, channel order WT, TC, ET.
struct RegionMasks {
    Extents3 extents{0, 0, 0};
    std::vector<std::uint8_t> masks;  // [3,D,H,W]
};

// Per-voxel region probabilities, same channel order, values in [0,1].
struct RegionProbs {
    Extents3 extents{0, 0, 0};
    std::vector<float> probs;  // [3,D,H,W]
};

enum class Provenance { manual, ensemble, none };

const char* provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);

inline constexpr std::array<const char*, 4> kModalityNames = {"t1", "t1gd", "t2", "flair"};
inline constexpr int kRegionWT = 0, kRegionTC = 1, kRegionET = 2;
inline constexpr std::array<const char*, 3> kRegionNames = {"WT", "TC", "ET"};

struct MultiModalScan {
    std::string case_id;
    std::string grade;                      // "HGG" / "LGG" stratification tag
    std::array<Volume, 4> modalities;       // T1, T1Gd, T2, FLAIR
    std::optional<LabelMap> labels;         // manual annotation
    std::optional<RegionProbs> soft_labels; // ensemble annotation
    Provenance provenance = Provenance::none;

    const Extents3& extents() const { return modalities[0].extents; }
    bool has_target() const { return labels.has_value() || soft_labels.has_value(); }
};

// ---- DVV container -------------------------------------------------------

void save_dvv_f32(const std::filesystem::path& path, const std::vector<std::int64_t>& extents,
                  const float* data);
void save_dvv_u8(const std::filesystem::path& path, const std::vector<std::int64_t>& extents,
                 const std::uint8_t* data);

struct DvvContents {
    int dtype = 0;  // 0 = f32, 1 = u8
    std::vector<std::int64_t> extents;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
};

DvvContents load_dvv(const std::filesystem::path& path);

// ---- case directories ----------------------------------------------------

// Loads the 4 modalities (+ optional seg + sidecar) from a case directory.
// Throws IoError naming the modality when a file is missing and ShapeError
// when the volumes disagree on extents.
MultiModalScan load_scan(const std::filesystem::path& case_dir);

void save_scan(const MultiModalScan& scan, const std::filesystem::path& case_dir);

// Loads every case directory under root (sorted by case id).
std::vector<MultiModalScan> load_dataset(const std::filesystem::path& root);

// Case ids (subdirectories containing a case.meta), sorted.
std::vector<std::string> list_cases(const std::filesystem::path& root);

}  // namespace dv
