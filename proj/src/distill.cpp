#include "distillvol/distill.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "distillvol/errors.hpp"
#include "distillvol/pipeline.hpp"
#include "distillvol/regions.hpp"
#include "distillvol/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dv {

RegionProbs predict_probs(const EnsembleMember& member, const MultiModalScan& scan) {
    MultiModalScan prepared = scan;
    normalize_scan(prepared);
    const Extents3 native = prepared.extents();
    if (member.resample && *member.resample != native) {
        resample_scan(prepared, *member.resample);
        RegionProbs probs = forward_full_volume(member.net, prepared, member.patch, member.overlap);
        return resample_probs(probs, native);
    }
    return forward_full_volume(member.net, prepared, member.patch, member.overlap);
}

RegionProbs ensemble_predict(const std::vector<EnsembleMember>& members,
                             const MultiModalScan& scan) {
    if (members.empty()) throw Error("ensemble_predict: needs at least one member");
    RegionProbs acc = predict_probs(members[0], scan);
    if (members.size() == 1) return acc;
    std::vector<double> sums(acc.probs.begin(), acc.probs.end());
    for (std::size_t m = 1; m < members.size(); ++m) {
        const RegionProbs p = predict_probs(members[m], scan);
        for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += p.probs[i];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t i = 0; i < sums.size(); ++i)
        acc.probs[i] = static_cast<float>(sums[i] * inv);
    return acc;
}

std::vector<PseudoLabeledCase> pseudo_label(const std::vector<EnsembleMember>& members,
                                            const std::vector<MultiModalScan>& cases,
                                            std::vector<std::string>* warnings) {
    if (members.empty()) throw Error("pseudo_label: needs at least one ensemble member");
    std::vector<int> keep;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (cases[i].has_target()) {
            if (warnings)
                warnings->push_back("case " + cases[i].case_id +
                                    " already has labels; skipping pseudo-labeling");
            continue;
        }
        keep.push_back(static_cast<int>(i));
    }

    std::vector<PseudoLabeledCase> out(keep.size());
    parallel_for(static_cast<std::int64_t>(keep.size()), [&](std::int64_t j) {
        const MultiModalScan& scan = cases[static_cast<std::size_t>(keep[static_cast<std::size_t>(j)])];
        PseudoLabeledCase& pc = out[static_cast<std::size_t>(j)];
        pc.case_id = scan.case_id;
        pc.probs = ensemble_predict(members, scan);
        pc.provenance = Provenance::ensemble;
    });
    return out;
}

void save_pseudo_store(const fs::path& store, const std::vector<PseudoLabeledCase>& cases,
                       const std::vector<std::pair<std::string, std::uint64_t>>& member_checksums) {
    fs::create_directories(store);
    json manifest;
    manifest["cases"] = json::array();
    for (const auto& pc : cases) {
        const auto& e = pc.probs.extents;
        save_dvv_f32(store / (pc.case_id + ".dvv"), {3, e[0], e[1], e[2]}, pc.probs.probs.data());
        json meta{{"case_id", pc.case_id}, {"provenance", provenance_name(pc.provenance)}};
        std::ofstream ms(store / (pc.case_id + ".meta"), std::ios::trunc);
        if (!ms) throw IoError("cannot write pseudo-label sidecar for " + pc.case_id);
        ms << meta.dump(2) << "\n";
        manifest["cases"].push_back(pc.case_id);
    }
    manifest["members"] = json::array();
    for (const auto& [path, checksum] : member_checksums) {
        char hex[24];
        std::snprintf(hex, sizeof(hex), "0x%016llx", static_cast<unsigned long long>(checksum));
        manifest["members"].push_back({{"checkpoint", path}, {"fnv1a64", hex}});
    }
    std::ofstream os(store / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot write manifest in " + store.string());
    os << manifest.dump(2) << "\n";
}

RegionProbs load_pseudo_labels(const fs::path& store, const std::string& case_id) {
    const fs::path p = store / (case_id + ".dvv");
    if (!fs::exists(p)) throw IoError("no pseudo labels for case " + case_id + " in " + store.string());
    DvvContents c = load_dvv(p);
    if (c.dtype != 0 || c.extents.size() != 4 || c.extents[0] != 3)
        throw IoError("pseudo-label file must be float32 [3,D,H,W]: " + p.string());
    RegionProbs probs;
    probs.extents = {c.extents[1], c.extents[2], c.extents[3]};
    probs.probs = std::move(c.f32);
    return probs;
}

Network distill(const std::vector<MultiModalScan>& labeled,
                const std::vector<MultiModalScan>& pseudo_labeled, const TrainConfig& student_cfg,
                const std::vector<std::string>& eval_case_ids, TrainResult* train_result) {
    std::unordered_set<std::string> eval_ids(eval_case_ids.begin(), eval_case_ids.end());
    std::vector<MultiModalScan> combined;
    combined.reserve(labeled.size() + pseudo_labeled.size());
    for (const auto* pool : {&labeled, &pseudo_labeled})
        for (const auto& scan : *pool) {
            if (eval_ids.count(scan.case_id))
                throw Error("evaluation case " + scan.case_id +
                            " overlaps the distillation training set");
            combined.push_back(scan);
        }
    if (combined.empty()) throw Error("distill: combined dataset is empty");

    NetConfig cfg = student_cfg.net;
    cfg.arch = "res_unet";  // the student is the residual UNet without the VAE branch
    Network student = build_res_unet(cfg);

    TrainConfig tc = student_cfg;
    tc.net = cfg;
    TrainResult result = train(student, std::move(combined), tc);
    if (train_result) *train_result = std::move(result);
    return student;
}

CaseDice dice_from_probs(const RegionProbs& probs, const LabelMap& gt, const std::string& case_id,
                         float threshold) {
    const LabelMap pred_labels = regions_to_labels(probs, threshold);
    const RegionMasks pred = labels_to_regions(pred_labels);
    const RegionMasks truth = labels_to_regions(gt);
    const std::int64_t n = extents_numel(gt.extents);
    CaseDice d;
    d.case_id = case_id;
    auto region_dice = [&](int k) {
        std::vector<std::uint8_t> a(pred.masks.begin() + k * n, pred.masks.begin() + (k + 1) * n);
        std::vector<std::uint8_t> b(truth.masks.begin() + k * n, truth.masks.begin() + (k + 1) * n);
        return dice_score(a, b);
    };
    d.wt = region_dice(kRegionWT);
    d.tc = region_dice(kRegionTC);
    d.et = region_dice(kRegionET);
    return d;
}

CaseDice evaluate_case(const EnsembleMember& member, const MultiModalScan& scan, float threshold) {
    if (!scan.labels) throw Error("evaluate: case " + scan.case_id + " has no manual labels");
    return dice_from_probs(predict_probs(member, scan), *scan.labels, scan.case_id, threshold);
}

std::vector<CaseDice> evaluate_cases(const EnsembleMember& member,
                                     const std::vector<MultiModalScan>& cases, float threshold) {
    std::vector<CaseDice> out(cases.size());
    parallel_for(static_cast<std::int64_t>(cases.size()), [&](std::int64_t i) {
        out[static_cast<std::size_t>(i)] =
            evaluate_case(member, cases[static_cast<std::size_t>(i)], threshold);
    });
    return out;
}

}  // namespace dv
