#include "distillvol/runner.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <unordered_set>

#include <json.hpp>

#include "distillvol/distill.hpp"
#include "distillvol/errors.hpp"
#include "distillvol/gradcheck.hpp"
#include "distillvol/nifti.hpp"
#include "distillvol/pipeline.hpp"
#include "distillvol/serialize.hpp"
#include "distillvol/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dv {

namespace {

void apply_overrides(RunConfig& rc, const CommonOverrides& ov) {
    if (ov.seed) {
        rc.train.seed = *ov.seed;
        rc.train.net.init_seed = *ov.seed;
    }
    if (ov.out) rc.output = *ov.out;
}

void write_loss_log(const fs::path& path, const std::vector<LossRecord>& history) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "iteration,lr,dice_part,bce_part,total\n";
    for (const auto& r : history)
        os << r.iteration << ',' << fmt_double(r.lr) << ',' << fmt_float(r.dice_part) << ','
           << fmt_float(r.bce_part) << ',' << fmt_float(r.total) << '\n';
}

// wall-clock notes live here and only here, keeping every other output
// byte-reproducible
void append_run_log(const fs::path& out_dir, const std::string& line) {
    std::ofstream os(out_dir / "run.log", std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%F %T", std::gmtime(&now));
    os << "[" << stamp << "] " << line << "\n";
}

std::vector<MultiModalScan> load_and_normalize(const fs::path& root,
                                               const std::vector<std::string>& ids) {
    std::vector<MultiModalScan> scans;
    scans.reserve(ids.size());
    for (const auto& id : ids) {
        MultiModalScan scan = load_scan(root / id);
        normalize_scan(scan);
        scans.push_back(std::move(scan));
    }
    return scans;
}

std::vector<std::string> grades_of(const fs::path& root, const std::vector<std::string>& ids) {
    std::vector<std::string> grades;
    grades.reserve(ids.size());
    for (const auto& id : ids) {
        std::ifstream is(root / id / "case.meta");
        if (!is) {
            grades.emplace_back();
            continue;
        }
        json meta = json::parse(is);
        grades.push_back(meta.value("grade", ""));
    }
    return grades;
}

CheckpointMeta meta_from_config(const RunConfig& rc) {
    CheckpointMeta meta;
    meta.net = rc.train.net;
    meta.patch = rc.eval_patch;
    meta.overlap = rc.eval_overlap;
    meta.resample = rc.train.resample;
    return meta;
}

}  // namespace

void run_train(const fs::path& config_path, const CommonOverrides& ov) {
    RunConfig rc = load_run_config(config_path);
    apply_overrides(rc, ov);
    fs::create_directories(rc.output);

    const auto all_ids = list_cases(rc.dataset_root);
    if (all_ids.empty()) throw ConfigError("dataset.root holds no cases: " + rc.dataset_root.string());
    std::vector<std::string> train_ids, eval_ids;
    resolve_split(rc, all_ids, grades_of(rc.dataset_root, all_ids), train_ids, eval_ids);
    if (train_ids.empty()) throw ConfigError("training split is empty after dataset.eval split");

    std::vector<MultiModalScan> dataset = load_and_normalize(rc.dataset_root, train_ids);
    Network net = build_network(rc.train.net);
    const CheckpointMeta meta = meta_from_config(rc);

    append_run_log(rc.output, "train start: " + rc.train.net.arch + ", " +
                                  std::to_string(dataset.size()) + " cases");
    TrainResult result =
        train(net, std::move(dataset), rc.train, [&](std::int64_t iter, const Network& snapshot) {
            save_checkpoint(rc.output / ("checkpoint_" + std::to_string(iter) + ".dvw"), snapshot,
                            meta);
        });
    save_checkpoint(rc.output / "checkpoint_final.dvw", net, meta);
    write_loss_log(rc.output / "loss_log.csv", result.history);
    append_run_log(rc.output, "train done: " + std::to_string(result.history.size()) + " iterations");
}

void run_ensemble_label(const fs::path& config_path, const std::vector<fs::path>& checkpoints,
                        const fs::path& unlabeled_root, const fs::path& store_out,
                        const CommonOverrides& ov) {
    RunConfig rc = load_run_config(config_path, /*require_dataset=*/false);
    apply_overrides(rc, ov);
    if (checkpoints.empty()) throw ConfigError("ensemble-label needs at least one --checkpoint");

    std::vector<EnsembleMember> members;
    std::vector<std::pair<std::string, std::uint64_t>> checksums;
    for (const auto& ckpt : checkpoints) {
        auto [net, meta] = load_checkpoint(ckpt);
        members.push_back(EnsembleMember::from_checkpoint_pair(std::move(net), meta));
        checksums.emplace_back(ckpt.string(), file_checksum_fnv1a(ckpt));
    }

    const auto ids = list_cases(unlabeled_root);
    if (ids.empty()) throw ConfigError("no cases found under " + unlabeled_root.string());
    std::vector<MultiModalScan> cases;
    for (const auto& id : ids) cases.push_back(load_scan(unlabeled_root / id));

    std::vector<std::string> warnings;
    const auto pseudo = pseudo_label(members, cases, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    save_pseudo_store(store_out, pseudo, checksums);
    std::cout << "pseudo-labeled " << pseudo.size() << " cases into " << store_out.string()
              << "\n";
}

void run_distill(const fs::path& config_path, const CommonOverrides& ov) {
    RunConfig rc = load_run_config(config_path);
    apply_overrides(rc, ov);
    if (rc.unlabeled_root.empty() || rc.pseudo_store.empty())
        throw ConfigError(
            "distill requires dataset.unlabeled_root and dataset.pseudo_store in the config");
    fs::create_directories(rc.output);

    const auto all_ids = list_cases(rc.dataset_root);
    std::vector<std::string> train_ids, eval_ids;
    resolve_split(rc, all_ids, grades_of(rc.dataset_root, all_ids), train_ids, eval_ids);
    if (train_ids.empty()) throw ConfigError("labeled training split is empty");

    std::vector<MultiModalScan> labeled = load_and_normalize(rc.dataset_root, train_ids);

    std::vector<MultiModalScan> pseudo;
    for (const auto& id : list_cases(rc.unlabeled_root)) {
        MultiModalScan scan = load_scan(rc.unlabeled_root / id);
        normalize_scan(scan);
        scan.soft_labels = load_pseudo_labels(rc.pseudo_store, id);
        scan.provenance = Provenance::ensemble;
        pseudo.push_back(std::move(scan));
    }

    append_run_log(rc.output, "distill start: " + std::to_string(labeled.size()) + " manual + " +
                                  std::to_string(pseudo.size()) + " pseudo cases");
    TrainResult result;
    Network student = distill(labeled, pseudo, rc.train, eval_ids, &result);
    save_checkpoint(rc.output / "student.dvw", student, meta_from_config(rc));
    write_loss_log(rc.output / "loss_log.csv", result.history);
    append_run_log(rc.output, "distill done");
}

std::vector<CaseDice> run_evaluate(const fs::path& config_path, const fs::path& checkpoint,
                                   const CommonOverrides& ov) {
    RunConfig rc = load_run_config(config_path);
    apply_overrides(rc, ov);
    fs::create_directories(rc.output);

    auto [net, meta] = load_checkpoint(checkpoint);
    EnsembleMember member = EnsembleMember::from_checkpoint_pair(std::move(net), meta);

    const auto all_ids = list_cases(rc.dataset_root);
    std::vector<std::string> train_ids, eval_ids;
    resolve_split(rc, all_ids, grades_of(rc.dataset_root, all_ids), train_ids, eval_ids);
    if (eval_ids.empty()) throw ConfigError("evaluation split is empty (set dataset.eval)");

    std::vector<MultiModalScan> cases;
    for (const auto& id : eval_ids) {
        MultiModalScan scan = load_scan(rc.dataset_root / id);
        if (!scan.labels)
            throw Error("evaluation case " + id + " has no manual labels");
        cases.push_back(std::move(scan));
    }

    const std::vector<CaseDice> records = evaluate_cases(member, cases, rc.eval_threshold);
    const MetricsSummary summary = summarize_metrics(records);
    write_per_case_csv(rc.output / "per_case.csv", records);
    write_boxplot_csv(rc.output / "boxplot.csv", summary);
    const std::string table = format_metrics_table(member.net.cfg.arch, summary);
    std::ofstream os(rc.output / "summary.txt", std::ios::trunc);
    os << table;
    std::cout << table;
    return records;
}

int run_gradcheck(const std::string& corrupt_op) {
    const auto reports = run_gradcheck_suite(corrupt_op);
    int failures = 0;
    for (const auto& r : reports) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " max_rel_err=" << r.max_rel_err
                  << "\n";
        if (!r.pass) ++failures;
    }
    if (failures > 0) {
        std::cout << failures << " op(s) failed the gradient check\n";
        return 1;
    }
    std::cout << "all " << reports.size() << " gradient checks passed\n";
    return 0;
}

void run_synth(std::uint64_t seed, int count, const Extents3& extents, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    json manifest;
    manifest["cases"] = json::array();
    for (int i = 0; i < count; ++i) {
        MultiModalScan scan = generate_synthetic_case(seed + static_cast<std::uint64_t>(i), extents);
        scan.grade = (i % 2 == 0) ? "HGG" : "LGG";  // alternating grade tags
        save_scan(scan, out_dir / scan.case_id);
        manifest["cases"].push_back(scan.case_id);
    }
    manifest["seed"] = seed;
    manifest["extents"] = {extents[0], extents[1], extents[2]};
    std::ofstream os(out_dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot write manifest in " + out_dir.string());
    os << manifest.dump(2) << "\n";
}

void run_import(const fs::path& mapping_config, const fs::path& input_dir, const fs::path& out_dir) {
    std::ifstream is(mapping_config);
    if (!is) throw ConfigError("cannot open import mapping config: " + mapping_config.string());
    json map;
    try {
        map = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("import mapping parse error: " + std::string(e.what()));
    }
    if (!map.contains("suffixes")) throw ConfigError("import mapping needs a 'suffixes' section");
    const json& suf = map["suffixes"];
    std::array<std::string, 4> suffixes;
    for (int m = 0; m < 4; ++m) {
        const char* key = kModalityNames[static_cast<std::size_t>(m)];
        if (!suf.contains(key))
            throw ConfigError(std::string("import mapping misses suffixes.") + key);
        suffixes[static_cast<std::size_t>(m)] = suf[key].get<std::string>();
    }
    const std::string seg_suffix = suf.value("seg", "");
    const std::string default_grade = map.value("grade", "HGG");

    auto ends_with = [](const std::string& s, const std::string& tail) {
        return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
    };

    int imported = 0;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(input_dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    for (const auto& file : files) {
        const std::string name = file.filename().string();
        if (!ends_with(name, suffixes[0])) continue;
        const std::string case_id = name.substr(0, name.size() - suffixes[0].size());

        MultiModalScan scan;
        scan.case_id = case_id;
        scan.grade = default_grade;
        for (int m = 0; m < 4; ++m) {
            const fs::path p = input_dir / (case_id + suffixes[static_cast<std::size_t>(m)]);
            if (!fs::exists(p))
                throw IoError("modality " + std::string(kModalityNames[static_cast<std::size_t>(m)]) +
                              " file not found for case " + case_id + ": " + p.string());
            scan.modalities[static_cast<std::size_t>(m)] = read_nifti_volume(p);
            if (m > 0 && scan.modalities[static_cast<std::size_t>(m)].extents != scan.extents())
                throw ShapeError("imported modalities disagree on extents for case " + case_id);
        }
        if (!seg_suffix.empty()) {
            const fs::path p = input_dir / (case_id + seg_suffix);
            if (fs::exists(p)) {
                scan.labels = read_nifti_labels(p);
                scan.provenance = Provenance::manual;
            }
        }
        save_scan(scan, out_dir / case_id);
        ++imported;
    }
    if (imported == 0)
        throw ConfigError("no cases matched suffix '" + suffixes[0] + "' under " +
                          input_dir.string());
    std::cout << "imported " << imported << " case(s) into " << out_dir.string() << "\n";
}

}  // namespace dv
