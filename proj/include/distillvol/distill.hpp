#pragma once

// Ensemble fusion, pseudo-labeling of unlabeled cases, student distillation
// and model evaluation.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "distillvol/metrics.hpp"
#include "distillvol/nets.hpp"
#include "distillvol/serialize.hpp"
#include "distillvol/train.hpp"
#include "distillvol/volume.hpp"

namespace dv {

struct EnsembleMember {
    Network net;
    Extents3 patch{32, 32, 32};
    double overlap = 0.5;
    std::optional<Extents3> resample;  // evaluate at this resolution, map output back

    static EnsembleMember from_checkpoint_pair(Network net, const CheckpointMeta& meta) {
        EnsembleMember m;
        m.net = std::move(net);
        m.patch = meta.patch;
        m.overlap = meta.overlap;
        m.resample = meta.resample;
        return m;
    }
};

// Normalizes a copy of the scan, applies the member's inference protocol
// (optional resampling to its training resolution and back) and returns the
// sigmoid probability map at the scan's native extents.
RegionProbs predict_probs(const EnsembleMember& member, const MultiModalScan& scan);

// Uniform average of the members' probability maps.
RegionProbs ensemble_predict(const std::vector<EnsembleMember>& members,
                             const MultiModalScan& scan);

struct PseudoLabeledCase {
    std::string case_id;
    RegionProbs probs;
    Provenance provenance = Provenance::ensemble;
};

// Annotates every unlabeled case with the ensemble. Cases that already carry
// labels are skipped with a warning line appended to `warnings`. Cases may be
// processed concurrently (DISTILLVOL_THREADS); output order is input order.
std::vector<PseudoLabeledCase> pseudo_label(const std::vector<EnsembleMember>& members,
                                            const std::vector<MultiModalScan>& cases,
                                            std::vector<std::string>* warnings = nullptr);

// Pseudo-label store: <store>/<case_id>.dvv ([3,D,H,W] float32) +
// <case_id>.meta sidecar + manifest.json with case ids and member checksums.
void save_pseudo_store(const std::filesystem::path& store,
                       const std::vector<PseudoLabeledCase>& cases,
                       const std::vector<std::pair<std::string, std::uint64_t>>& member_checksums);

// Loads stored probabilities for `case_id`; throws IoError when absent.
RegionProbs load_pseudo_labels(const std::filesystem::path& store, const std::string& case_id);

// Builds and trains the student (residual UNet, no VAE branch) on the union
// of manually labeled and pseudo-labeled cases. Throws when any training case
// id appears in eval_case_ids (the held-out split must never leak in).
Network distill(const std::vector<MultiModalScan>& labeled,
                const std::vector<MultiModalScan>& pseudo_labeled, const TrainConfig& student_cfg,
                const std::vector<std::string>& eval_case_ids,
                TrainResult* train_result = nullptr);

// Per-case region Dice of a model against manual labels:
// probabilities -> label map -> regions, compared to the ground-truth regions.
CaseDice evaluate_case(const EnsembleMember& member, const MultiModalScan& scan,
                       float threshold = 0.5f);
std::vector<CaseDice> evaluate_cases(const EnsembleMember& member,
                                     const std::vector<MultiModalScan>& cases,
                                     float threshold = 0.5f);

CaseDice dice_from_probs(const RegionProbs& probs, const LabelMap& gt, const std::string& case_id,
                         float threshold = 0.5f);

}  // namespace dv
