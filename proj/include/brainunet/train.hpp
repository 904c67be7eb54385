#pragma once
// Training engine: pretrain / fine-tune regimes, k-fold cross-validation and
// per-epoch logging.
//
// Samples are processed one at a time (batch norm statistics are per sample);
// gradients of batch_size * accumulation_steps samples are averaged into one
// Adam step.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainunet/augment.hpp"
#include "brainunet/checkpoint.hpp"
#include "brainunet/error.hpp"
#include "brainunet/loss.hpp"
#include "brainunet/manifest.hpp"
#include "brainunet/metrics.hpp"
#include "brainunet/model.hpp"
#include "brainunet/optim.hpp"
#include "brainunet/preprocess.hpp"

namespace brainunet {

enum class Stage { Pretrain, Finetune };

inline const char* stage_name(Stage s) { return s == Stage::Pretrain ? "pretrain" : "finetune"; }
inline Stage parse_stage(const std::string& s) {
    if (s == "pretrain") return Stage::Pretrain;
    if (s == "finetune") return Stage::Finetune;
    throw ValueError("unknown stage '" + s + "' (expected pretrain or finetune)");
}

struct TrainConfig {
    Stage stage = Stage::Pretrain;
    double learning_rate = 1e-3;
    int epochs = 30;
    AdamConfig adam;  // lr is taken from learning_rate
    int batch_size = 1;
    int accumulation_steps = 2;
    TverskyParams tversky;
    AugmentConfig augment;
    bool augment_enabled = false;
    bool freeze_encoder = false;
    std::uint64_t seed = 0;
    int folds = 5;
    ModelConfig model;
    PreprocessConfig preprocess;

    /// Defaults of the two regimes: pretrain 30 epochs at 1e-3 without
    /// augmentation, fine-tune 50 epochs at 1e-4 with augmentation.
    static TrainConfig for_stage(Stage s) {
        TrainConfig c;
        c.stage = s;
        if (s == Stage::Finetune) {
            c.learning_rate = 1e-4;
            c.epochs = 50;
            c.augment_enabled = true;
        }
        return c;
    }

    void validate() const {
        if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ValueError("learning rate must be positive");
        if (epochs < 0) throw ValueError("epochs must be non-negative");
        if (batch_size < 1 || accumulation_steps < 1) throw ValueError("batch size and accumulation must be >= 1");
        if (folds < 2) throw ValueError("cross-validation needs at least 2 folds");
        tversky.validate();
        augment.validate();
        model.validate();
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"stage", stage_name(c.stage)},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
            {"batch_size", c.batch_size},
            {"accumulation_steps", c.accumulation_steps},
            {"tversky", to_json(c.tversky)},
            {"augment", to_json(c.augment)},
            {"augment_enabled", c.augment_enabled},
            {"freeze_encoder", c.freeze_encoder},
            {"seed", c.seed},
            {"folds", c.folds},
            {"model", to_json(c.model)},
            {"preprocess", to_json(c.preprocess)}};
}

/// Missing keys take the defaults of the configured stage.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c = TrainConfig::for_stage(parse_stage(j.value("stage", std::string("pretrain"))));
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("adam")) {
        const auto& a = j["adam"];
        c.adam.beta1 = a.value("beta1", c.adam.beta1);
        c.adam.beta2 = a.value("beta2", c.adam.beta2);
        c.adam.eps = a.value("eps", c.adam.eps);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
    if (j.contains("tversky")) c.tversky = tversky_params_from_json(j["tversky"]);
    if (j.contains("augment")) c.augment = augment_config_from_json(j["augment"]);
    c.augment_enabled = j.value("augment_enabled", c.augment_enabled);
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("preprocess")) c.preprocess = preprocess_config_from_json(j["preprocess"]);
    c.validate();
    return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    try {
        return train_config_from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed config " + path.string() + ": " + e.what());
    }
}

/// One preprocessed training case.
struct TrainingCase {
    std::string id;
    MultiModalVolume volume;
    LabelMask mask;
};

using Dataset = std::vector<TrainingCase>;

/// Loads and preprocesses every labelled case of a manifest.
inline Dataset load_dataset(const DatasetManifest& manifest, const PreprocessConfig& config,
                            Warnings* warnings = nullptr) {
    Dataset out;
    for (const auto& rec : manifest.cases) {
        if (!rec.mask) throw ValueError("case '" + rec.case_id + "' has no segmentation mask");
        auto vol = load_case_volume(rec);
        auto mask = load_mask(*rec.mask);
        auto pre = preprocess_case(vol, mask, config, warnings);
        out.push_back({rec.case_id, std::move(pre.volume), std::move(*pre.mask)});
    }
    return out;
}

struct EpochLog {
    int epoch = 0;
    double train_loss = 0, train_dice = 0, train_iou = 0;
    double val_loss = std::nan(""), val_dice = std::nan(""), val_iou = std::nan("");
    double seconds = 0;
};

inline const std::vector<std::string>& epoch_log_columns() {
    static const std::vector<std::string> cols{"epoch",    "train_loss", "train_dice", "train_iou",
                                               "val_loss", "val_dice",   "val_iou",    "seconds"};
    return cols;
}

inline void write_epoch_csv(std::ostream& os, const std::vector<EpochLog>& logs) {
    const auto& cols = epoch_log_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    os.precision(10);
    for (const auto& l : logs) {
        os << l.epoch << ',' << l.train_loss << ',' << l.train_dice << ',' << l.train_iou << ',' << l.val_loss << ','
           << l.val_dice << ',' << l.val_iou << ',' << l.seconds << '\n';
    }
}

/// Hard Dice and IoU of the argmax prediction, averaged over tumor labels.
struct OverlapScores {
    double dice = 0, iou = 0;
};

inline OverlapScores tumor_overlap(const LabelMask& pred, const LabelMask& truth) {
    OverlapScores s;
    for (int l = 1; l < kNumClasses; ++l) {
        const auto p = label_mask(pred, l), t = label_mask(truth, l);
        s.dice += dice_score(p, t);
        s.iou += iou_score(p, t);
    }
    s.dice /= kNumClasses - 1;
    s.iou /= kNumClasses - 1;
    return s;
}

struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

/// Shuffles the ids with `seed` and deals them round-robin into K validation
/// folds; each fold trains on the remaining ids.
inline std::vector<Fold> make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
    if (k < 2) throw ValueError("need at least 2 folds, got " + std::to_string(k));
    if (static_cast<std::int64_t>(ids.size()) < k) {
        throw ValueError("cannot make " + std::to_string(k) + " folds from " + std::to_string(ids.size()) + " cases");
    }
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) throw ValueError("duplicate case ids");
    std::vector<std::string> order = ids;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Fold> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < order.size(); ++i) folds[i % k].val_ids.push_back(order[i]);
    for (int f = 0; f < k; ++f) {
        const std::set<std::string> val(folds[f].val_ids.begin(), folds[f].val_ids.end());
        for (const auto& id : ids) {
            if (!val.count(id)) folds[f].train_ids.push_back(id);
        }
    }
    return folds;
}

struct TrainOptions {
    std::vector<std::string> train_ids;  // empty: every case
    std::vector<std::string> val_ids;
    std::optional<std::filesystem::path> out_dir;  // checkpoints, epoch log, run manifest
    nlohmann::json manifest_extra = nlohmann::json::object();
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    ModelConfig config;
    ParameterSet<float> final_params;
    ParameterSet<float> best_params;
    int best_epoch = 0;  // 0: initial parameters
    std::vector<EpochLog> logs;
    std::set<std::string> updated_ids;  // cases whose gradients reached an optimizer step
};

namespace train_detail {

inline std::vector<const TrainingCase*> select(const Dataset& data, const std::vector<std::string>& ids) {
    std::vector<const TrainingCase*> out;
    for (const auto& id : ids) {
        auto it = std::find_if(data.begin(), data.end(), [&](const TrainingCase& c) { return c.id == id; });
        if (it == data.end()) throw ValueError("unknown case id '" + id + "'");
        out.push_back(&*it);
    }
    return out;
}

inline Tensor<float> target_of(const LabelMask& mask, int classes) { return one_hot_encode<float>(mask, classes); }

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline bool finite_log(const EpochLog& l) {
    return std::isfinite(l.train_loss) && (std::isnan(l.val_loss) || std::isfinite(l.val_loss));
}

}  // namespace train_detail

/// Evaluation-mode loss, Dice and IoU averaged over cases.
inline EpochLog evaluate_cases(BrainUNet<float>& model, const std::vector<const TrainingCase*>& cases,
                               const TverskyParams& tversky) {
    EpochLog l;
    l.train_loss = l.train_dice = l.train_iou = 0;
    double loss = 0, dice = 0, iou = 0;
    for (const auto* c : cases) {
        const auto probs = model.forward(c->volume.data, NormMode{false, false});
        loss += tversky_loss(probs, train_detail::target_of(c->mask, model.config().out_classes), tversky);
        const auto s = tumor_overlap(one_hot_decode(probs), c->mask);
        dice += s.dice;
        iou += s.iou;
    }
    const double n = static_cast<double>(cases.size());
    l.val_loss = loss / n;
    l.val_dice = dice / n;
    l.val_iou = iou / n;
    return l;
}

inline nlohmann::json run_manifest(const TrainConfig& config, const TrainResult& r, const TrainOptions& opt) {
    nlohmann::json j;
    j["config"] = to_json(config);
    j["seed"] = config.seed;
    j["augment_seed"] = config.augment.seed;
    j["train_ids"] = opt.train_ids;
    j["val_ids"] = opt.val_ids;
    j["best_epoch"] = r.best_epoch;
    j["selection_criterion"] = "max mean validation Dice over tumor labels 1-3";
    j["epochs_run"] = r.logs.size();
    j["extra"] = opt.manifest_extra;
    return j;
}

/// Minibatch Tversky-loss training from `initial` (fresh initialization from
/// config.seed when absent). With validation ids, the best checkpoint is the
/// epoch of highest mean validation Dice; otherwise it is the final epoch.
inline TrainResult train(const TrainConfig& config, const Dataset& data, std::optional<ParameterSet<float>> initial = {},
                         TrainOptions opt = {}) {
    config.validate();
    if (data.empty()) throw ValueError("training dataset is empty");
    if (opt.train_ids.empty()) {
        for (const auto& c : data) {
            if (std::find(opt.val_ids.begin(), opt.val_ids.end(), c.id) == opt.val_ids.end()) opt.train_ids.push_back(c.id);
        }
    }
    const auto train_cases = train_detail::select(data, opt.train_ids);
    const auto val_cases = train_detail::select(data, opt.val_ids);
    if (train_cases.empty()) throw ValueError("no training cases");
    for (const auto* c : train_cases) config.model.check_input(c->volume.dims());
    for (const auto* c : val_cases) config.model.check_input(c->volume.dims());

    BrainUNet<float> model = initial ? BrainUNet<float>(config.model, std::move(*initial))
                                     : BrainUNet<float>(config.model, config.seed);
    if (config.freeze_encoder) model.set_frozen_prefixes({"enc", "down"});
    const auto frozen = [&](const std::string& name) { return model.is_frozen(name); };
    AdamConfig adam = config.adam;
    adam.lr = config.learning_rate;
    Adam<float> optimizer(adam);

    TrainResult result;
    result.config = config.model;
    result.best_params = model.parameters();
    double best_score = -std::numeric_limits<double>::infinity();
    const int per_step = config.batch_size * config.accumulation_steps;
    const int classes = config.model.out_classes;

    std::vector<std::size_t> order(train_cases.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(train_detail::mix(config.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        ParameterSet<float> grads = model.gradient_buffers();
        std::vector<std::string> pending;
        EpochLog log;
        log.epoch = epoch;
        auto flush = [&] {
            if (pending.empty()) return;
            const float scale = 1.0f / static_cast<float>(pending.size());
            for (auto& e : grads.entries())
                for (auto& v : e.value.storage()) v *= scale;
            optimizer.step(model.parameters(), grads, frozen);
            result.updated_ids.insert(pending.begin(), pending.end());
            pending.clear();
            grads.fill(0.0f);
        };
        for (std::size_t i = 0; i < order.size(); ++i) {
            const TrainingCase& c = *train_cases[order[i]];
            const TrainingCase* sample = &c;
            TrainingCase augmented;
            if (config.augment_enabled) {
                Rng rng(train_detail::mix(train_detail::mix(config.augment.seed ^ config.seed, epoch), fnv1a(c.id)));
                auto a = apply_pipeline(c.volume, c.mask, config.augment, rng);
                augmented = {c.id, std::move(a.volume), std::move(a.mask)};
                sample = &augmented;
            }
            ForwardCache<float> cache;
            const auto probs = model.forward(sample->volume.data, NormMode{true, true}, &cache);
            const auto target = train_detail::target_of(sample->mask, classes);
            const double loss = tversky_loss(probs, target, config.tversky);
            if (!std::isfinite(loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", case '" + c.id + "'");
            }
            const auto s = tumor_overlap(one_hot_decode(probs), sample->mask);
            log.train_loss += loss;
            log.train_dice += s.dice;
            log.train_iou += s.iou;
            model.backward(cache, tversky_loss_gradient(probs, target, config.tversky), grads);
            pending.push_back(c.id);
            if (static_cast<int>(pending.size()) == per_step) flush();
        }
        flush();
        const double n = static_cast<double>(order.size());
        log.train_loss /= n;
        log.train_dice /= n;
        log.train_iou /= n;
        if (!val_cases.empty()) {
            const auto v = evaluate_cases(model, val_cases, config.tversky);
            log.val_loss = v.val_loss;
            log.val_dice = v.val_dice;
            log.val_iou = v.val_iou;
        }
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!train_detail::finite_log(log)) {
            throw TrainingError("non-finite loss logged at epoch " + std::to_string(epoch));
        }
        result.logs.push_back(log);
        if (opt.on_epoch) opt.on_epoch(log);
        const double score = val_cases.empty() ? static_cast<double>(epoch) : log.val_dice;
        if (score > best_score) {
            best_score = score;
            result.best_epoch = epoch;
            result.best_params = model.parameters();
        }
    }
    result.final_params = model.parameters();

    if (opt.out_dir) {
        const auto& dir = *opt.out_dir;
        std::filesystem::create_directories(dir);
        CheckpointInfo info;
        info.stage = stage_name(config.stage);
        info.extra = opt.manifest_extra;
        info.epoch = static_cast<int>(result.logs.size());
        if (!result.logs.empty()) {
            const auto& l = result.logs.back();
            info.metrics = {{"train_loss", l.train_loss}, {"train_dice", l.train_dice}};
            if (!val_cases.empty()) info.metrics["val_dice"] = l.val_dice;
        }
        save_checkpoint(result.final_params, config.model, info, dir / "final");
        info.epoch = result.best_epoch;
        if (result.best_epoch > 0) {
            const auto& l = result.logs[result.best_epoch - 1];
            info.metrics = {{"train_loss", l.train_loss}, {"train_dice", l.train_dice}};
            if (!val_cases.empty()) info.metrics["val_dice"] = l.val_dice;
        }
        save_checkpoint(result.best_params, config.model, info, dir / "best");
        std::ofstream csv(dir / "epochs.csv");
        write_epoch_csv(csv, result.logs);
        std::ofstream man(dir / "run_manifest.json");
        man << run_manifest(config, result, opt).dump(2) << '\n';
    }
    return result;
}

/// Initializes from a pretrained checkpoint via transfer_load, then trains.
/// The run manifest records the source checkpoint identity and transfer report.
inline TrainResult finetune(const std::filesystem::path& pretrained, const TrainConfig& config, const Dataset& data,
                            TrainOptions opt = {}) {
    auto transferred = transfer_load(pretrained, config.model, config.seed);
    opt.manifest_extra["source_checkpoint"] = pretrained.string();
    opt.manifest_extra["source_checkpoint_id"] = checkpoint_identity(pretrained);
    opt.manifest_extra["transfer_copied"] = transferred.report.copied.size();
    opt.manifest_extra["transfer_reinitialized"] = transferred.report.reinitialized;
    return train(config, data, std::move(transferred.params), std::move(opt));
}

struct CrossValidationResult {
    std::vector<Fold> folds;
    std::vector<std::vector<EpochLog>> fold_logs;
    std::vector<EpochLog> mean_logs;
    std::vector<std::set<std::string>> updated_ids;
};

/// Field-wise arithmetic mean of equally long log series, epoch by epoch.
inline std::vector<EpochLog> mean_epoch_logs(const std::vector<std::vector<EpochLog>>& series) {
    if (series.empty()) return {};
    std::vector<EpochLog> out(series.front().size());
    for (std::size_t e = 0; e < out.size(); ++e) {
        EpochLog m;
        m.epoch = series.front()[e].epoch;
        m.val_loss = m.val_dice = m.val_iou = 0;
        for (const auto& s : series) {
            if (s.size() != out.size()) throw ValueError("log series differ in length");
            const auto& l = s[e];
            m.train_loss += l.train_loss;
            m.train_dice += l.train_dice;
            m.train_iou += l.train_iou;
            m.val_loss += l.val_loss;
            m.val_dice += l.val_dice;
            m.val_iou += l.val_iou;
            m.seconds += l.seconds;
        }
        const double k = static_cast<double>(series.size());
        m.train_loss /= k;
        m.train_dice /= k;
        m.train_iou /= k;
        m.val_loss /= k;
        m.val_dice /= k;
        m.val_iou /= k;
        m.seconds /= k;
        out[e] = m;
    }
    return out;
}

/// Trains one model per fold from the same initialization (config.seed).
inline CrossValidationResult cross_validate(const TrainConfig& config, const Dataset& data,
                                            const std::optional<std::filesystem::path>& out_dir = {}) {
    config.validate();
    std::vector<std::string> ids;
    for (const auto& c : data) ids.push_back(c.id);
    CrossValidationResult cv;
    cv.folds = make_folds(ids, config.folds, config.seed);
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        TrainOptions opt;
        opt.train_ids = cv.folds[f].train_ids;
        opt.val_ids = cv.folds[f].val_ids;
        opt.manifest_extra["fold"] = f;
        if (out_dir) opt.out_dir = *out_dir / ("fold" + std::to_string(f));
        auto r = train(config, data, std::nullopt, opt);
        cv.fold_logs.push_back(std::move(r.logs));
        cv.updated_ids.push_back(std::move(r.updated_ids));
    }
    cv.mean_logs = mean_epoch_logs(cv.fold_logs);
    if (out_dir) {
        std::ofstream csv(*out_dir / "mean_epochs.csv");
        write_epoch_csv(csv, cv.mean_logs);
    }
    return cv;
}

}  // namespace brainunet
