#include "distillvol/volume.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "distillvol/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dv {

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::manual: return "manual";
        case Provenance::ensemble: return "ensemble";
        default: return "none";
    }
}

Provenance provenance_from_name(const std::string& name) {
    if (name == "manual") return Provenance::manual;
    if (name == "ensemble") return Provenance::ensemble;
    if (name == "none") return Provenance::none;
    throw IoError("unknown provenance tag '" + name + "'");
}

namespace {

constexpr char kDvvMagic[4] = {'D', 'V', 'V', '1'};

void write_exact(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_exact(std::ifstream& is, void* p, std::size_t n, const fs::path& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw IoError("truncated DVV file: " + path.string());
}

void save_dvv(const fs::path& path, std::uint8_t dtype, const std::vector<std::int64_t>& extents,
              const void* data, std::size_t elem_size) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    write_exact(os, kDvvMagic, 4);
    write_exact(os, &dtype, 1);
    const std::uint8_t rank = static_cast<std::uint8_t>(extents.size());
    write_exact(os, &rank, 1);
    std::int64_t n = 1;
    for (auto e : extents) {
        const std::uint64_t ext = static_cast<std::uint64_t>(e);
        write_exact(os, &ext, 8);
        n *= e;
    }
    write_exact(os, data, static_cast<std::size_t>(n) * elem_size);
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

void save_dvv_f32(const fs::path& path, const std::vector<std::int64_t>& extents,
                  const float* data) {
    save_dvv(path, 0, extents, data, 4);
}

void save_dvv_u8(const fs::path& path, const std::vector<std::int64_t>& extents,
                 const std::uint8_t* data) {
    save_dvv(path, 1, extents, data, 1);
}

DvvContents load_dvv(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4];
    read_exact(is, magic, 4, path);
    if (std::memcmp(magic, kDvvMagic, 4) != 0)
        throw IoError("not a DVV file (bad magic): " + path.string());
    std::uint8_t dtype = 0, rank = 0;
    read_exact(is, &dtype, 1, path);
    read_exact(is, &rank, 1, path);
    if (dtype > 1) throw IoError("unknown DVV dtype code " + std::to_string(dtype));
    DvvContents out;
    out.dtype = dtype;
    std::int64_t n = 1;
    for (int i = 0; i < rank; ++i) {
        std::uint64_t ext = 0;
        read_exact(is, &ext, 8, path);
        out.extents.push_back(static_cast<std::int64_t>(ext));
        n *= static_cast<std::int64_t>(ext);
    }
    if (dtype == 0) {
        out.f32.resize(static_cast<std::size_t>(n));
        read_exact(is, out.f32.data(), static_cast<std::size_t>(n) * 4, path);
    } else {
        out.u8.resize(static_cast<std::size_t>(n));
        read_exact(is, out.u8.data(), static_cast<std::size_t>(n), path);
    }
    return out;
}

namespace {

Extents3 to_extents3(const std::vector<std::int64_t>& e, const fs::path& path) {
    if (e.size() != 3)
        throw IoError("expected a rank-3 volume in " + path.string() + ", got rank " +
                      std::to_string(e.size()));
    return {e[0], e[1], e[2]};
}

void write_meta(const fs::path& path, const MultiModalScan& scan) {
    json meta{{"case_id", scan.case_id},
              {"grade", scan.grade},
              {"provenance", provenance_name(scan.provenance)}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << meta.dump(2) << "\n";
}

}  // namespace

MultiModalScan load_scan(const fs::path& case_dir) {
    MultiModalScan scan;
    scan.case_id = case_dir.filename().string();

    const fs::path meta_path = case_dir / "case.meta";
    if (fs::exists(meta_path)) {
        std::ifstream is(meta_path);
        json meta = json::parse(is);
        scan.case_id = meta.value("case_id", scan.case_id);
        scan.grade = meta.value("grade", "");
        scan.provenance = provenance_from_name(meta.value("provenance", "none"));
    }

    static constexpr std::array<const char*, 4> kDisplayNames = {"T1", "T1Gd", "T2", "FLAIR"};
    for (int m = 0; m < 4; ++m) {
        const fs::path p = case_dir / (std::string(kModalityNames[m]) + ".dvv");
        if (!fs::exists(p))
            throw IoError("modality " + std::string(kDisplayNames[static_cast<std::size_t>(m)]) +
                          " not found in " + case_dir.string());
        DvvContents c = load_dvv(p);
        if (c.dtype != 0) throw IoError("modality volume must be float32: " + p.string());
        scan.modalities[static_cast<std::size_t>(m)].extents = to_extents3(c.extents, p);
        scan.modalities[static_cast<std::size_t>(m)].voxels = std::move(c.f32);
        if (m > 0 && scan.modalities[static_cast<std::size_t>(m)].extents != scan.extents())
            throw ShapeError("modality " + std::string(kModalityNames[m]) + " extents differ from t1 in " +
                             case_dir.string());
    }

    const fs::path seg = case_dir / "seg.dvv";
    if (fs::exists(seg)) {
        DvvContents c = load_dvv(seg);
        if (c.dtype != 1) throw IoError("label map must be uint8: " + seg.string());
        LabelMap lm;
        lm.extents = to_extents3(c.extents, seg);
        lm.labels = std::move(c.u8);
        if (lm.extents != scan.extents())
            throw ShapeError("label map extents differ from modalities in " + case_dir.string());
        scan.labels = std::move(lm);
        if (scan.provenance == Provenance::none) scan.provenance = Provenance::manual;
    }

    const fs::path pseudo = case_dir / "pseudo.dvv";
    if (fs::exists(pseudo)) {
        DvvContents c = load_dvv(pseudo);
        if (c.dtype != 0 || c.extents.size() != 4 || c.extents[0] != 3)
            throw IoError("pseudo-label volume must be float32 [3,D,H,W]: " + pseudo.string());
        RegionProbs rp;
        rp.extents = {c.extents[1], c.extents[2], c.extents[3]};
        rp.probs = std::move(c.f32);
        if (rp.extents != scan.extents())
            throw ShapeError("pseudo-label extents differ from modalities in " + case_dir.string());
        scan.soft_labels = std::move(rp);
    }

    return scan;
}

void save_scan(const MultiModalScan& scan, const fs::path& case_dir) {
    fs::create_directories(case_dir);
    for (int m = 0; m < 4; ++m) {
        const auto& vol = scan.modalities[static_cast<std::size_t>(m)];
        save_dvv_f32(case_dir / (std::string(kModalityNames[m]) + ".dvv"),
                     {vol.extents[0], vol.extents[1], vol.extents[2]}, vol.voxels.data());
    }
    if (scan.labels) {
        const auto& lm = *scan.labels;
        save_dvv_u8(case_dir / "seg.dvv", {lm.extents[0], lm.extents[1], lm.extents[2]},
                    lm.labels.data());
    }
    if (scan.soft_labels) {
        const auto& rp = *scan.soft_labels;
        save_dvv_f32(case_dir / "pseudo.dvv", {3, rp.extents[0], rp.extents[1], rp.extents[2]},
                     rp.probs.data());
    }
    write_meta(case_dir / "case.meta", scan);
}

std::vector<std::string> list_cases(const fs::path& root) {
    std::vector<std::string> ids;
    if (!fs::exists(root)) throw IoError("dataset root does not exist: " + root.string());
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "case.meta"))
            ids.push_back(entry.path().filename().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<MultiModalScan> load_dataset(const fs::path& root) {
    std::vector<MultiModalScan> scans;
    for (const auto& id : list_cases(root)) scans.push_back(load_scan(root / id));
    return scans;
}

}  // namespace dv
