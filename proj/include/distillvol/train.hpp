#pragma once

// The training loop: seeded batch sampling (foreground-aware crop +
// augmentation), Dice+BCE objective against hard or soft region targets,
// optimizer updates under a learning-rate schedule.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "distillvol/nets.hpp"
#include "distillvol/optim.hpp"
#include "distillvol/pipeline.hpp"
#include "distillvol/volume.hpp"

namespace dv {

struct TrainConfig {
    NetConfig net;
    Extents3 patch{32, 32, 32};
    int batch = 2;
    std::int64_t iterations = 200;  // used when epochs == 0
    std::int64_t epochs = 0;        // epoch mode: one pass over the dataset per epoch
    OptimizerSpec optimizer;
    LrSchedule schedule;
    std::uint64_t seed = 1;
    std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
    AugmentParams augment;
    std::optional<Extents3> resample;  // dataset resampled to this before training
    double overlap = 0.5;              // stored with checkpoints for inference
};

void validate_train_config(const TrainConfig& cfg);

struct LossRecord {
    std::int64_t iteration = 0;
    double lr = 0;
    float dice_part = 0, bce_part = 0, total = 0;
};

struct TrainResult {
    std::vector<LossRecord> history;  // one record per iteration
};

using CheckpointHook = std::function<void(std::int64_t iteration, const Network& net)>;

// Dataset cases must carry a target (manual labels or ensemble soft labels)
// and are expected to be normalized (and resampled) already; train() applies
// cfg.resample itself when set. Aborts with NumericalError on non-finite
// loss. Bit-reproducible for a fixed seed.
TrainResult train(Network& net, std::vector<MultiModalScan> dataset, const TrainConfig& cfg,
                  const CheckpointHook& checkpoint_hook = nullptr);

}  // namespace dv
