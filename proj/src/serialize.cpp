#include "distillvol/serialize.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "distillvol/errors.hpp"
#include "distillvol/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dv {

namespace {

constexpr char kMagic[4] = {'D', 'V', 'W', '1'};

void put(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get(std::ifstream& is, void* p, std::size_t n, const fs::path& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw IoError("truncated weight file: " + path.string());
}

}  // namespace

void save_weights(const fs::path& path, const std::vector<std::pair<std::string, Tensor>>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    put(os, kMagic, 4);
    const std::uint64_t count = params.size();
    put(os, &count, 8);
    for (const auto& [name, t] : params) {
        const std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
        put(os, &name_len, 4);
        put(os, name.data(), name.size());
        const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
        put(os, &rank, 4);
        for (int i = 0; i < t.rank(); ++i) {
            const std::uint64_t ext = static_cast<std::uint64_t>(t.dim(i));
            put(os, &ext, 8);
        }
        put(os, t.data(), static_cast<std::size_t>(t.numel()) * 4);
    }
    if (!os) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensorData> load_weights(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4];
    get(is, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a DVW weight file (bad magic): " + path.string());
    std::uint64_t count = 0;
    get(is, &count, 8, path);
    std::vector<NamedTensorData> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensorData t;
        std::uint32_t name_len = 0;
        get(is, &name_len, 4, path);
        t.name.resize(name_len);
        get(is, t.name.data(), name_len, path);
        std::uint32_t rank = 0;
        get(is, &rank, 4, path);
        std::int64_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            std::uint64_t ext = 0;
            get(is, &ext, 8, path);
            t.shape.push_back(static_cast<std::int64_t>(ext));
            n *= static_cast<std::int64_t>(ext);
        }
        t.data.resize(static_cast<std::size_t>(n));
        get(is, t.data.data(), static_cast<std::size_t>(n) * 4, path);
        out.push_back(std::move(t));
    }
    return out;
}

void apply_weights(Network& net, const std::vector<NamedTensorData>& weights,
                   const std::string& source_label) {
    std::map<std::string, const NamedTensorData*> by_name;
    for (const auto& w : weights) by_name[w.name] = &w;
    for (auto& [name, param] : net.params) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw IoError("checkpoint " + source_label + " does not provide parameter '" + name +
                          "' required by architecture " + net.cfg.arch);
        const NamedTensorData& w = *it->second;
        if (w.shape != param.shape())
            throw IoError("checkpoint " + source_label + ": parameter '" + name + "' has shape " +
                          shape_str(w.shape) + " but architecture " + net.cfg.arch + " expects " +
                          shape_str(param.shape()));
        std::copy(w.data.begin(), w.data.end(), param.data());
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw IoError("checkpoint " + source_label + " holds parameter '" +
                      by_name.begin()->first + "' unknown to architecture " + net.cfg.arch);
}

namespace {

json extents_to_json(const Extents3& e) { return json::array({e[0], e[1], e[2]}); }

Extents3 extents_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw IoError("expected a 3-element extents array");
    return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

fs::path sidecar_path(const fs::path& dvw_path) {
    fs::path p = dvw_path;
    p.replace_extension(".json");
    return p;
}

}  // namespace

void save_checkpoint(const fs::path& dvw_path, const Network& net, const CheckpointMeta& meta) {
    save_weights(dvw_path, net.params);
    json j{{"architecture", meta.net.arch},
           {"base_channels", meta.net.base_channels},
           {"levels", meta.net.levels},
           {"groups", meta.net.groups},
           {"stages", meta.net.stages},
           {"norm", meta.net.norm == NormKind::group ? "group" : "instance"},
           {"activation", meta.net.activation == ActKind::relu ? "relu" : "leaky_relu"},
           {"leaky_slope", meta.net.leaky_slope},
           {"patch", extents_to_json(meta.patch)},
           {"overlap", meta.overlap}};
    if (meta.resample) j["resample"] = extents_to_json(*meta.resample);
    std::ofstream os(sidecar_path(dvw_path), std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + sidecar_path(dvw_path).string());
    os << j.dump(2) << "\n";
}

std::pair<Network, CheckpointMeta> load_checkpoint(const fs::path& dvw_path) {
    const fs::path side = sidecar_path(dvw_path);
    if (!fs::exists(side)) throw IoError("checkpoint sidecar not found: " + side.string());
    std::ifstream is(side);
    json j = json::parse(is);

    CheckpointMeta meta;
    meta.net.arch = j.at("architecture").get<std::string>();
    meta.net.base_channels = j.value("base_channels", 16);
    meta.net.levels = j.value("levels", 4);
    meta.net.groups = j.value("groups", 8);
    meta.net.stages = j.value("stages", 2);
    meta.net.norm = j.value("norm", "instance") == std::string("group") ? NormKind::group
                                                                        : NormKind::instance;
    meta.net.activation = j.value("activation", "leaky_relu") == std::string("relu")
                              ? ActKind::relu
                              : ActKind::leaky_relu;
    meta.net.leaky_slope = j.value("leaky_slope", 1e-2);
    if (j.contains("patch")) meta.patch = extents_from_json(j.at("patch"));
    meta.overlap = j.value("overlap", 0.5);
    if (j.contains("resample")) meta.resample = extents_from_json(j.at("resample"));

    Network net = build_network(meta.net);
    apply_weights(net, load_weights(dvw_path), dvw_path.string());
    return {std::move(net), meta};
}

std::uint64_t file_checksum_fnv1a(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char buf[1 << 16];
    std::uint64_t h = 0xcbf29ce484222325ull;
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    return h;
}

}  // namespace dv
