#include "distillvol/nifti.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "distillvol/errors.hpp"
#include "distillvol/regions.hpp"

namespace fs = std::filesystem;

namespace dv {

namespace {

struct NiftiHeader {
    std::int16_t dim[8];
    std::int16_t datatype;
    float vox_offset;
    float scl_slope, scl_inter;
};

// datatype codes from the NIfTI-1 standard
constexpr std::int16_t kUint8 = 2, kInt16 = 4, kInt32 = 8, kFloat32 = 16, kFloat64 = 64,
                       kUint16 = 512;

NiftiHeader read_header(std::ifstream& is, const fs::path& path) {
    std::vector<char> raw(348);
    is.read(raw.data(), 348);
    if (is.gcount() != 348) throw IoError("truncated NIfTI header: " + path.string());

    std::int32_t sizeof_hdr = 0;
    std::memcpy(&sizeof_hdr, raw.data(), 4);
    if (sizeof_hdr != 348)
        throw IoError("unsupported NIfTI header (sizeof_hdr=" + std::to_string(sizeof_hdr) +
                      ", big-endian or NIfTI-2 files are not supported): " + path.string());
    char magic[4];
    std::memcpy(magic, raw.data() + 344, 4);
    if (std::memcmp(magic, "n+1", 3) != 0 && std::memcmp(magic, "ni1", 3) != 0)
        throw IoError("missing NIfTI magic in " + path.string());
    if (std::memcmp(magic, "ni1", 3) == 0)
        throw IoError("two-file NIfTI (.hdr/.img) is not supported: " + path.string());

    NiftiHeader h{};
    std::memcpy(h.dim, raw.data() + 40, 16);
    std::memcpy(&h.datatype, raw.data() + 70, 2);
    std::memcpy(&h.vox_offset, raw.data() + 108, 4);
    std::memcpy(&h.scl_slope, raw.data() + 112, 4);
    std::memcpy(&h.scl_inter, raw.data() + 116, 4);

    if (h.dim[0] < 3)
        throw IoError("expected a 3-D NIfTI volume, got dim[0]=" + std::to_string(h.dim[0]) +
                      " in " + path.string());
    for (int i = 4; i <= h.dim[0]; ++i)
        if (h.dim[i] > 1)
            throw IoError("NIfTI volume has a non-trivial dimension " + std::to_string(i) + " in " +
                          path.string());
    return h;
}

std::vector<double> read_raw(const fs::path& path, Extents3& extents) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    const NiftiHeader h = read_header(is, path);

    const std::int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    extents = {nz, ny, nx};  // D,H,W = z,y,x
    const std::int64_t n = nx * ny * nz;

    std::size_t elem = 0;
    switch (h.datatype) {
        case kUint8: elem = 1; break;
        case kInt16: case kUint16: elem = 2; break;
        case kInt32: case kFloat32: elem = 4; break;
        case kFloat64: elem = 8; break;
        default:
            throw IoError("unsupported NIfTI datatype " + std::to_string(h.datatype) + " in " +
                          path.string());
    }

    is.seekg(static_cast<std::streamoff>(h.vox_offset));
    std::vector<char> raw(static_cast<std::size_t>(n) * elem);
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        throw IoError("truncated NIfTI data in " + path.string());

    const double slope = (h.scl_slope == 0.0f) ? 1.0 : static_cast<double>(h.scl_slope);
    const double inter = static_cast<double>(h.scl_inter);

    std::vector<double> values(static_cast<std::size_t>(n));
    auto convert = [&](auto tag) {
        using T = decltype(tag);
        const T* src = reinterpret_cast<const T*>(raw.data());
        for (std::int64_t i = 0; i < n; ++i)
            values[static_cast<std::size_t>(i)] = slope * static_cast<double>(src[i]) + inter;
    };
    switch (h.datatype) {
        case kUint8: convert(std::uint8_t{}); break;
        case kInt16: convert(std::int16_t{}); break;
        case kUint16: convert(std::uint16_t{}); break;
        case kInt32: convert(std::int32_t{}); break;
        case kFloat32: convert(float{}); break;
        case kFloat64: convert(double{}); break;
        default: break;
    }

    // reorder from x-fastest (x,y,z) to the native W-fastest (D,H,W) layout;
    // both are x-fastest so the buffer order already matches
    return values;
}

}  // namespace

Volume read_nifti_volume(const fs::path& path) {
    Volume v;
    const std::vector<double> values = read_raw(path, v.extents);
    v.voxels.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) v.voxels[i] = static_cast<float>(values[i]);
    return v;
}

LabelMap read_nifti_labels(const fs::path& path) {
    Extents3 extents;
    const std::vector<double> values = read_raw(path, extents);
    LabelMap lm;
    lm.extents = extents;
    lm.labels.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        const auto rounded = static_cast<std::int64_t>(std::llround(v));
        if (std::abs(v - static_cast<double>(rounded)) > 1e-6 || rounded < 0 || rounded > 255 ||
            !is_valid_label(static_cast<std::uint8_t>(rounded)))
            throw IoError("label value " + std::to_string(v) + " in " + path.string() +
                          " is not one of 0,1,2,4");
        lm.labels[i] = static_cast<std::uint8_t>(rounded);
    }
    return lm;
}

}  // namespace dv
