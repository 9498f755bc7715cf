#include "distillvol/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "distillvol/errors.hpp"
#include "distillvol/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dv {

namespace {

const json& require_key(const json& j, const std::string& section, const char* key) {
    auto it = j.find(key);
    if (it == j.end())
        throw ConfigError("missing required config key '" + section + "." + key + "'");
    return *it;
}

Extents3 parse_extents(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError("config key '" + where + "' must be a 3-element array [D,H,W]");
    Extents3 e;
    for (int i = 0; i < 3; ++i) {
        if (!j[static_cast<std::size_t>(i)].is_number_integer())
            throw ConfigError("config key '" + where + "' must hold integers");
        e[static_cast<std::size_t>(i)] = j[static_cast<std::size_t>(i)].get<std::int64_t>();
    }
    return e;
}

NetConfig parse_model(const json& model) {
    NetConfig cfg;
    cfg.arch = require_key(model, "model", "arch").get<std::string>();
    if (cfg.arch != "unet" && cfg.arch != "res_unet" && cfg.arch != "cascaded_unet")
        throw ConfigError("model.arch must be one of unet, res_unet, cascaded_unet; got '" +
                          cfg.arch + "'");

    // architecture-appropriate defaults; explicit keys override
    if (cfg.arch == "unet") {
        cfg.norm = NormKind::instance;
        cfg.activation = ActKind::leaky_relu;
    } else if (cfg.arch == "res_unet") {
        cfg.norm = NormKind::group;
        cfg.activation = ActKind::relu;
    } else {
        cfg.norm = NormKind::instance;
        cfg.activation = ActKind::relu;
    }

    cfg.base_channels = model.value("base_channels", 16);
    cfg.levels = model.value("levels", cfg.arch == "cascaded_unet" ? 3 : 4);
    cfg.groups = model.value("groups", 8);
    cfg.stages = model.value("stages", 2);
    cfg.leaky_slope = model.value("leaky_slope", 1e-2);
    if (model.contains("norm")) {
        const std::string n = model["norm"].get<std::string>();
        if (n == "instance") cfg.norm = NormKind::instance;
        else if (n == "group") cfg.norm = NormKind::group;
        else throw ConfigError("model.norm must be 'instance' or 'group', got '" + n + "'");
    }
    if (model.contains("activation")) {
        const std::string a = model["activation"].get<std::string>();
        if (a == "relu") cfg.activation = ActKind::relu;
        else if (a == "leaky_relu") cfg.activation = ActKind::leaky_relu;
        else throw ConfigError("model.activation must be 'relu' or 'leaky_relu', got '" + a + "'");
    }
    return cfg;
}

OptimizerSpec parse_optimizer(const json& opt) {
    OptimizerSpec spec;
    const std::string kind = require_key(opt, "train.optimizer", "kind").get<std::string>();
    if (kind == "adam") {
        spec.kind = OptimizerSpec::Kind::adam;
        spec.beta1 = opt.value("beta1", 0.9);
        spec.beta2 = opt.value("beta2", 0.999);
        spec.eps = opt.value("eps", 1e-8);
    } else if (kind == "sgd_momentum") {
        spec.kind = OptimizerSpec::Kind::sgd_momentum;
        spec.momentum = opt.value("momentum", 0.9);
    } else {
        throw ConfigError("train.optimizer.kind must be 'adam' or 'sgd_momentum', got '" + kind +
                          "'");
    }
    return spec;
}

LrSchedule parse_schedule(const json& sched) {
    LrSchedule s;
    const std::string kind = require_key(sched, "train.lr_schedule", "kind").get<std::string>();
    s.initial = require_key(sched, "train.lr_schedule", "initial").get<double>();
    if (kind == "step_drop") {
        s.kind = LrSchedule::Kind::step_drop;
        s.drop_iteration = sched.value("drop_iteration", std::int64_t{120000});
        s.factor = sched.value("factor", 0.1);
    } else if (kind == "exp_epoch") {
        s.kind = LrSchedule::Kind::exp_epoch;
        s.rate = sched.value("rate", 0.99);
    } else {
        throw ConfigError("train.lr_schedule.kind must be 'step_drop' or 'exp_epoch', got '" +
                          kind + "'");
    }
    validate_schedule(s);
    return s;
}

AugmentParams parse_augment(const json& aug) {
    AugmentParams p;
    if (aug.contains("scale")) {
        const auto& s = aug["scale"];
        if (!s.is_array() || s.size() != 2)
            throw ConfigError("train.augment.scale must be [min,max]");
        p.scale_min = s[0].get<double>();
        p.scale_max = s[1].get<double>();
    }
    p.rotation_deg = aug.value("rotation_deg", 15.0);
    if (aug.contains("mirror")) {
        p.mirror_x = p.mirror_y = false;
        for (const auto& axis : aug["mirror"]) {
            const std::string a = axis.get<std::string>();
            if (a == "x") p.mirror_x = true;
            else if (a == "y") p.mirror_y = true;
            else
                throw ConfigError("train.augment.mirror axis '" + a +
                                  "' is not allowed (only x and y; the Z orientation is kept)");
        }
    }
    p.intensity_shift = aug.value("intensity_shift", 0.1);
    if (aug.contains("contrast")) {
        const auto& c = aug["contrast"];
        if (!c.is_array() || c.size() != 2)
            throw ConfigError("train.augment.contrast must be [min,max]");
        p.contrast_min = c[0].get<double>();
        p.contrast_max = c[1].get<double>();
    }
    if (!(p.scale_min <= p.scale_max) || !(p.contrast_min <= p.contrast_max) ||
        !std::isfinite(p.scale_min + p.scale_max + p.rotation_deg + p.intensity_shift))
        throw ConfigError("train.augment ranges must be finite and ordered");
    return p;
}

}  // namespace

RunConfig load_run_config(const fs::path& path, bool require_dataset) {
    if (!fs::exists(path)) throw ConfigError("config file does not exist: " + path.string());
    std::ifstream is(path);
    json root;
    try {
        root = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }

    RunConfig rc;

    const json& dataset = require_key(root, "(root)", "dataset");
    rc.dataset_root = require_key(dataset, "dataset", "root").get<std::string>();
    if (require_dataset && !fs::exists(rc.dataset_root))
        throw ConfigError("dataset.root path does not exist: " + rc.dataset_root.string());
    if (dataset.contains("unlabeled_root"))
        rc.unlabeled_root = dataset["unlabeled_root"].get<std::string>();
    if (dataset.contains("pseudo_store"))
        rc.pseudo_store = dataset["pseudo_store"].get<std::string>();
    if (dataset.contains("eval")) {
        const json& ev = dataset["eval"];
        if (ev.contains("cases"))
            for (const auto& c : ev["cases"]) rc.eval_split.cases.push_back(c.get<std::string>());
        rc.eval_split.ratio = ev.value("ratio", 0.0);
        if (rc.eval_split.cases.empty() &&
            (rc.eval_split.ratio <= 0.0 || rc.eval_split.ratio >= 1.0))
            throw ConfigError("dataset.eval needs either 'cases' or a 'ratio' in (0,1)");
    }

    rc.train.net = parse_model(require_key(root, "(root)", "model"));

    const json& train = require_key(root, "(root)", "train");
    rc.train.patch = parse_extents(require_key(train, "train", "patch"), "train.patch");
    rc.train.batch = train.value("batch", 2);
    rc.train.iterations = train.value("iterations", std::int64_t{0});
    rc.train.epochs = train.value("epochs", std::int64_t{0});
    if (rc.train.iterations <= 0 && rc.train.epochs <= 0)
        throw ConfigError("one of train.iterations or train.epochs must be > 0");
    rc.train.optimizer = parse_optimizer(require_key(train, "train", "optimizer"));
    rc.train.schedule = parse_schedule(require_key(train, "train", "lr_schedule"));
    rc.train.seed = train.value("seed", std::uint64_t{1});
    rc.train.net.init_seed = rc.train.seed;
    rc.train.checkpoint_every = train.value("checkpoint_every", std::int64_t{0});
    if (train.contains("augment")) rc.train.augment = parse_augment(train["augment"]);
    if (train.contains("resample"))
        rc.train.resample = parse_extents(train["resample"], "train.resample");

    if (root.contains("eval")) {
        const json& ev = root["eval"];
        if (ev.contains("patch")) rc.eval_patch = parse_extents(ev["patch"], "eval.patch");
        else rc.eval_patch = rc.train.patch;
        rc.eval_overlap = ev.value("overlap", 0.5);
        rc.eval_threshold = ev.value("threshold", 0.5f);
        if (rc.eval_overlap < 0.0 || rc.eval_overlap >= 1.0)
            throw ConfigError("eval.overlap must be in [0,1)");
        if (rc.eval_threshold <= 0.0f || rc.eval_threshold >= 1.0f)
            throw ConfigError("eval.threshold must be in (0,1)");
    } else {
        rc.eval_patch = rc.train.patch;
    }
    rc.train.overlap = rc.eval_overlap;

    rc.output = root.value("output", std::string("runs/out"));

    validate_train_config(rc.train);
    return rc;
}

void stratified_split(const std::vector<std::pair<std::string, std::string>>& id_grade,
                      double ratio, std::vector<std::string>& train_ids,
                      std::vector<std::string>& eval_ids) {
    train_ids.clear();
    eval_ids.clear();
    std::vector<std::string> strata;
    for (const auto& [id, grade] : id_grade)
        if (std::find(strata.begin(), strata.end(), grade) == strata.end())
            strata.push_back(grade);
    std::sort(strata.begin(), strata.end());

    for (const auto& grade : strata) {
        std::vector<std::string> ids;
        for (const auto& [id, g] : id_grade)
            if (g == grade) ids.push_back(id);
        std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
            const auto ha = fnv1a64(a), hb = fnv1a64(b);
            return ha != hb ? ha < hb : a < b;
        });
        const auto take = static_cast<std::size_t>(
            std::llround(ratio * static_cast<double>(ids.size())));
        for (std::size_t i = 0; i < ids.size(); ++i)
            (i < take ? eval_ids : train_ids).push_back(ids[i]);
    }
    std::sort(train_ids.begin(), train_ids.end());
    std::sort(eval_ids.begin(), eval_ids.end());
}

void resolve_split(const RunConfig& rc, const std::vector<std::string>& all_ids,
                   const std::vector<std::string>& grades, std::vector<std::string>& train_ids,
                   std::vector<std::string>& eval_ids) {
    if (!rc.eval_split.cases.empty()) {
        std::unordered_set<std::string> known(all_ids.begin(), all_ids.end());
        std::unordered_set<std::string> eval_set;
        for (const auto& id : rc.eval_split.cases) {
            if (!known.count(id))
                throw ConfigError("dataset.eval.cases entry '" + id + "' is not in the dataset");
            eval_set.insert(id);
        }
        train_ids.clear();
        eval_ids.assign(eval_set.begin(), eval_set.end());
        std::sort(eval_ids.begin(), eval_ids.end());
        for (const auto& id : all_ids)
            if (!eval_set.count(id)) train_ids.push_back(id);
        return;
    }
    if (rc.eval_split.ratio > 0.0) {
        std::vector<std::pair<std::string, std::string>> id_grade;
        for (std::size_t i = 0; i < all_ids.size(); ++i)
            id_grade.emplace_back(all_ids[i], grades[i]);
        stratified_split(id_grade, rc.eval_split.ratio, train_ids, eval_ids);
        return;
    }
    train_ids = all_ids;
    eval_ids.clear();
}

}  // namespace dv
