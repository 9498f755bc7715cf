#pragma once

// Weight container: magic "DVW1", u64 tensor count, then per tensor
// u32 name length + UTF-8 name, u32 rank, rank x u64 little-endian extents,
// raw 32-bit little-endian floats. Checkpoints pair a .dvw file with a .json
// sidecar describing the architecture and its inference settings.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "distillvol/nets.hpp"
#include "distillvol/volume.hpp"

namespace dv {

struct NamedTensorData {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void save_weights(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& params);
std::vector<NamedTensorData> load_weights(const std::filesystem::path& path);

// Copies loaded tensors into the network by name; throws on missing, extra
// or shape-mismatched entries.
void apply_weights(Network& net, const std::vector<NamedTensorData>& weights,
                   const std::string& source_label);

struct CheckpointMeta {
    NetConfig net;
    Extents3 patch{32, 32, 32};
    double overlap = 0.5;
    std::optional<Extents3> resample;  // input resolution the model was trained at
};

// Writes <path> (weights) and <path with .json extension> (metadata).
void save_checkpoint(const std::filesystem::path& dvw_path, const Network& net,
                     const CheckpointMeta& meta);

std::pair<Network, CheckpointMeta> load_checkpoint(const std::filesystem::path& dvw_path);

std::uint64_t file_checksum_fnv1a(const std::filesystem::path& path);

}  // namespace dv
