#pragma once

// Command implementations shared by the CLI and the python bindings. All of
// them throw: ConfigError maps to exit 2, NumericalError to exit 3, anything
// else to exit 1.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "distillvol/config.hpp"
#include "distillvol/metrics.hpp"

namespace dv {

struct CommonOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
};

// Trains the configured model on the labeled split; writes loss_log.csv,
// checkpoint_final.dvw(+.json), periodic checkpoints and run.log (the one
// file that may carry timestamps).
void run_train(const std::filesystem::path& config_path, const CommonOverrides& ov = {});

// Pseudo-labels every case under `unlabeled_root` with the checkpoint
// ensemble; writes the store + manifest into `store_out`.
void run_ensemble_label(const std::filesystem::path& config_path,
                        const std::vector<std::filesystem::path>& checkpoints,
                        const std::filesystem::path& unlabeled_root,
                        const std::filesystem::path& store_out, const CommonOverrides& ov = {});

// Trains the student on manual + pseudo labels (config points at the store).
void run_distill(const std::filesystem::path& config_path, const CommonOverrides& ov = {});

// Evaluates a checkpoint on the config's eval split; writes per_case.csv,
// boxplot.csv and summary.txt; returns the records.
std::vector<CaseDice> run_evaluate(const std::filesystem::path& config_path,
                                   const std::filesystem::path& checkpoint,
                                   const CommonOverrides& ov = {});

// Finite-difference suite over all ops and one block per architecture.
// Returns 0 when every case passes; prints one line per case.
int run_gradcheck(const std::string& corrupt_op = "");

// Writes `count` synthetic cases (HGG/LGG grade tags alternating) plus a
// manifest.json into out_dir.
void run_synth(std::uint64_t seed, int count, const Extents3& extents,
               const std::filesystem::path& out_dir);

// Converts a directory of uncompressed .nii files into the native case
// layout, driven by a name-mapping config.
void run_import(const std::filesystem::path& mapping_config,
                const std::filesystem::path& input_dir, const std::filesystem::path& out_dir);

}  // namespace dv
