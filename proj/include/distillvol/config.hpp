#pragma once

// Experiment configuration: one JSON file with dataset / model / train / eval
// sections captures a full run. Parse errors and missing keys raise
// ConfigError with the offending key path (CLI exit code 2).

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "distillvol/train.hpp"

namespace dv {

struct EvalSplitSpec {
    double ratio = 0.0;                  // stratified fraction per grade stratum
    std::vector<std::string> cases;      // explicit case list (overrides ratio)
};

struct RunConfig {
    std::filesystem::path dataset_root;
    std::filesystem::path unlabeled_root;  // optional
    std::filesystem::path pseudo_store;    // optional
    EvalSplitSpec eval_split;

    TrainConfig train;

    Extents3 eval_patch{32, 32, 32};
    double eval_overlap = 0.5;
    float eval_threshold = 0.5f;

    std::filesystem::path output;
};

// Loads, parses and validates. `require_dataset` additionally checks that
// dataset_root exists on disk.
RunConfig load_run_config(const std::filesystem::path& path, bool require_dataset = true);

// Deterministic stratified split: cases grouped by grade, ordered inside each
// stratum by fnv1a64(case_id), the first round(ratio*n) go to eval.
void stratified_split(const std::vector<std::pair<std::string, std::string>>& id_grade,
                      double ratio, std::vector<std::string>& train_ids,
                      std::vector<std::string>& eval_ids);

// Applies the config's split spec to the dataset under dataset_root.
void resolve_split(const RunConfig& rc, const std::vector<std::string>& all_ids,
                   const std::vector<std::string>& grades, std::vector<std::string>& train_ids,
                   std::vector<std::string>& eval_ids);

}  // namespace dv
