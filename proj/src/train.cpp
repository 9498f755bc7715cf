#include "distillvol/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "distillvol/errors.hpp"
#include "distillvol/losses.hpp"
#include "distillvol/util.hpp"

namespace dv {

void validate_train_config(const TrainConfig& cfg) {
    validate_net_config(cfg.net);
    validate_schedule(cfg.schedule);
    if (cfg.batch < 1) throw ConfigError("train.batch must be >= 1");
    if (cfg.epochs == 0 && cfg.iterations < 1)
        throw ConfigError("train.iterations must be >= 1 (or set train.epochs)");
    if (cfg.epochs < 0 || cfg.iterations < 0)
        throw ConfigError("train.iterations/epochs must be >= 0");
    for (int i = 0; i < 3; ++i)
        if (cfg.patch[static_cast<std::size_t>(i)] < 1)
            throw ConfigError("train.patch extents must be >= 1");
}

namespace {

// One training example: input modalities + region target, both cropped and
// augmented identically.
void fill_batch_slot(const MultiModalScan& scan, const TrainConfig& cfg, std::mt19937_64& rng,
                     float* input_dst, float* target_dst) {
    MultiModalScan patch = random_crop_foreground(scan, cfg.patch, rng);
    patch = augment(patch, cfg.augment, rng);
    const std::int64_t n = extents_numel(cfg.patch);
    for (int m = 0; m < 4; ++m)
        std::copy(patch.modalities[static_cast<std::size_t>(m)].voxels.begin(),
                  patch.modalities[static_cast<std::size_t>(m)].voxels.end(), input_dst + m * n);
    const RegionProbs target = target_probs(patch);
    std::copy(target.probs.begin(), target.probs.end(), target_dst);
}

}  // namespace

TrainResult train(Network& net, std::vector<MultiModalScan> dataset, const TrainConfig& cfg,
                  const CheckpointHook& checkpoint_hook) {
    validate_train_config(cfg);
    if (dataset.empty()) throw Error("train: dataset is empty");
    for (const auto& scan : dataset)
        if (!scan.has_target())
            throw Error("train: case " + scan.case_id + " has no labels (manual or ensemble)");
    for (int i = 0; i < 3; ++i)
        if (cfg.patch[static_cast<std::size_t>(i)] % net.spatial_divisor != 0)
            throw ConfigError("train.patch extent " +
                              std::to_string(cfg.patch[static_cast<std::size_t>(i)]) +
                              " is not divisible by the architecture's factor " +
                              std::to_string(net.spatial_divisor));

    if (cfg.resample)
        for (auto& scan : dataset) resample_scan(scan, *cfg.resample);

    const std::int64_t cases = static_cast<std::int64_t>(dataset.size());
    const std::int64_t iters_per_epoch =
        cfg.epochs > 0 ? (cases + cfg.batch - 1) / cfg.batch : 0;
    const std::int64_t total_iters =
        cfg.epochs > 0 ? cfg.epochs * iters_per_epoch : cfg.iterations;

    std::vector<Tensor> params;
    params.reserve(net.params.size());
    for (auto& [name, p] : net.params) params.push_back(p);
    Optimizer opt(cfg.optimizer, params);

    const std::int64_t patch_n = extents_numel(cfg.patch);
    const Shape in_shape{cfg.batch, 4, cfg.patch[0], cfg.patch[1], cfg.patch[2]};
    const Shape tgt_shape{cfg.batch, 3, cfg.patch[0], cfg.patch[1], cfg.patch[2]};

    TrainResult result;
    result.history.reserve(static_cast<std::size_t>(total_iters));

    std::vector<std::int64_t> epoch_order;
    for (std::int64_t it = 0; it < total_iters; ++it) {
        const std::int64_t epoch = cfg.epochs > 0 ? it / iters_per_epoch : 0;
        const double lr = lr_at(cfg.schedule, cfg.epochs > 0 ? epoch : it);

        if (cfg.epochs > 0 && it % iters_per_epoch == 0) {
            epoch_order.resize(static_cast<std::size_t>(cases));
            for (std::int64_t i = 0; i < cases; ++i) epoch_order[static_cast<std::size_t>(i)] = i;
            auto shuffle_rng = make_rng(hash_combine(cfg.seed, 0x45504f43ull /* "EPOC" */, epoch));
            for (std::int64_t i = cases - 1; i > 0; --i)
                std::swap(epoch_order[static_cast<std::size_t>(i)],
                          epoch_order[static_cast<std::size_t>(uniform_int(shuffle_rng, 0, i))]);
        }

        std::vector<float> input(static_cast<std::size_t>(cfg.batch * 4 * patch_n));
        std::vector<float> target(static_cast<std::size_t>(cfg.batch * 3 * patch_n));
        for (int slot = 0; slot < cfg.batch; ++slot) {
            // per-(iteration, slot) stream so batch assembly order never
            // changes the samples
            auto rng = make_rng(hash_combine(cfg.seed, 0x42415443ull /* "BATC" */, it, slot));
            std::int64_t case_idx;
            if (cfg.epochs > 0) {
                const std::int64_t pos = (it % iters_per_epoch) * cfg.batch + slot;
                case_idx = epoch_order[static_cast<std::size_t>(pos % cases)];
            } else {
                case_idx = uniform_int(rng, 0, cases - 1);
            }
            fill_batch_slot(dataset[static_cast<std::size_t>(case_idx)], cfg, rng,
                            input.data() + slot * 4 * patch_n, target.data() + slot * 3 * patch_n);
        }

        const Tensor x = Tensor::from_vector(in_shape, std::move(input));
        const Tensor g = Tensor::from_vector(tgt_shape, std::move(target));
        const Tensor logits = net.forward(x);
        const Tensor probs = sigmoid(logits);
        const LossValue loss = combined_loss(probs, g);

        const float total = loss.total.item();
        if (!std::isfinite(total)) {
            std::ostringstream os;
            os << "non-finite loss at iteration " << it << " (lr=" << lr
               << ", dice=" << loss.dice_part.item() << ", bce=" << loss.bce_part.item() << ")";
            throw NumericalError(os.str());
        }

        backward(loss.total);
        opt.step(lr);
        net.zero_grads();

        result.history.push_back({it, lr, loss.dice_part.item(), loss.bce_part.item(), total});
        if (checkpoint_hook && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 &&
            it + 1 != total_iters)
            checkpoint_hook(it + 1, net);
    }

    if (checkpoint_hook) checkpoint_hook(total_iters, net);
    return result;
}

}  // namespace dv
