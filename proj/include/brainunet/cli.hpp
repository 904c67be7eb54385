#pragma once
// Command-line front end. Every subcommand returns 0 on success and 1 with a
// one-line "error: ..." diagnostic otherwise.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "brainunet/checkpoint.hpp"
#include "brainunet/inference.hpp"
#include "brainunet/manifest.hpp"
#include "brainunet/metrics.hpp"
#include "brainunet/nifti.hpp"
#include "brainunet/phantom.hpp"
#include "brainunet/preprocess.hpp"
#include "brainunet/train.hpp"

namespace brainunet {

namespace cli_detail {

namespace fs = std::filesystem;

inline Dims3 parse_dims(const std::string& s) {
    std::vector<std::int64_t> v;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            v.push_back(std::stoll(part));
        } catch (const std::exception&) {
            throw ValueError("invalid dims '" + s + "' (expected N or XxYxZ)");
        }
    }
    if (v.size() == 1) return Dims3::cube(v[0]);
    if (v.size() == 3) return {v[0], v[1], v[2]};
    throw ValueError("invalid dims '" + s + "' (expected N or XxYxZ)");
}

inline std::string device_label(std::string d) {
    std::transform(d.begin(), d.end(), d.begin(), [](unsigned char c) { return std::toupper(c); });
    if (d != "CPU") throw ValueError("unsupported device '" + d + "' (this build runs on CPU only)");
    return d;
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    f << text;
    if (!f) throw IoError("cannot write " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

struct Options {
    std::string config, checkpoint, manifest, out, device = "cpu", mode = "sliding", pred, style = "A", dims = "64",
                                                  patch;
    std::uint64_t seed = 0;
    bool seed_set = false;
    double overlap = 0.5;
    int count = 1;
    int epochs = -1;
    bool cross_validate = false;
    bool freeze_encoder = false;
};

inline TrainConfig resolve_train_config(const Options& o, Stage stage) {
    TrainConfig c = TrainConfig::for_stage(stage);
    if (!o.config.empty()) {
        auto j = read_json(o.config);
        if (!j.contains("stage")) j["stage"] = stage_name(stage);
        c = train_config_from_json(j);
        if (c.stage != stage) throw ValueError("config stage '" + std::string(stage_name(c.stage)) + "' does not match command");
    }
    if (o.seed_set) c.seed = o.seed;
    if (o.epochs >= 0) c.epochs = o.epochs;
    if (o.freeze_encoder) c.freeze_encoder = true;
    c.validate();
    return c;
}

inline BrainUNet<float> load_model(const std::string& checkpoint) {
    if (checkpoint.empty()) throw ValueError("--checkpoint is required");
    auto ck = load_checkpoint(checkpoint);
    return BrainUNet<float>(ck.manifest.config, std::move(ck.params));
}

inline PredictOptions predict_options(const Options& o, const ModelConfig& model) {
    PredictOptions p;
    p.mode = parse_mode(o.mode);
    p.window.overlap = o.overlap;
    if (!o.patch.empty()) p.window.patch = parse_dims(o.patch);
    if (!o.config.empty()) {
        const auto j = read_json(o.config);
        if (j.contains("preprocess")) p.preprocess = preprocess_config_from_json(j["preprocess"]);
    }
    p.window.validate(model);
    return p;
}

inline std::vector<std::string> ids_with_split(const DatasetManifest& m, const std::string& split) {
    std::vector<std::string> ids;
    for (const auto& c : m.cases) {
        if (c.split == split) ids.push_back(c.case_id);
    }
    return ids;
}

inline int run_phantom(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw ValueError("--out is required");
    if (o.count < 1) throw ValueError("--count must be at least 1");
    const Dims3 dims = parse_dims(o.dims);
    const PhantomStyle style = o.style == "A" ? PhantomStyle::A
                               : o.style == "B" ? PhantomStyle::B
                                                : throw ValueError("--style must be A or B");
    const fs::path dir(o.out);
    fs::create_directories(dir);
    DatasetManifest m;
    for (int i = 0; i < o.count; ++i) {
        const auto seed = o.seed + static_cast<std::uint64_t>(i);
        const auto ph = generate_phantom(seed, dims, style);
        const std::string id = "phantom-" + o.style + "-" + std::to_string(seed);
        CaseRecord rec;
        rec.case_id = id;
        for (int c = 0; c < kNumModalities; ++c) {
            const fs::path p = dir / id / (std::string(kModalityNames[c]) + ".nii.gz");
            fs::create_directories(p.parent_path());
            save_volume(ph.volume.channel(c), p);
            (c == kFlair ? rec.flair : c == kT1ce ? rec.t1ce : rec.t2w) = p;
        }
        rec.mask = dir / id / "seg.nii.gz";
        save_mask(ph.mask, *rec.mask);
        m.cases.push_back(std::move(rec));
    }
    save_manifest(m, dir / "manifest.json");
    out << "wrote " << o.count << " phantom case(s) and " << (dir / "manifest.json").string() << "\n";
    return 0;
}

inline int run_preprocess(const Options& o, std::ostream& out) {
    if (o.manifest.empty() || o.out.empty()) throw ValueError("--manifest and --out are required");
    PreprocessConfig pc;
    if (!o.config.empty()) {
        const auto j = read_json(o.config);
        pc = preprocess_config_from_json(j.contains("preprocess") ? j["preprocess"] : j);
    }
    const auto m = load_manifest(o.manifest);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    DatasetManifest result;
    nlohmann::json crops = nlohmann::json::object();
    Warnings warnings;
    for (const auto& rec : m.cases) {
        const auto vol = load_case_volume(rec);
        std::optional<LabelMask> mask;
        if (rec.mask) mask = load_mask(*rec.mask);
        const auto pre = preprocess_case(vol, mask, pc, &warnings);
        CaseRecord r = rec;
        r.preprocessed = true;
        for (int c = 0; c < kNumModalities; ++c) {
            const fs::path p = dir / rec.case_id / (std::string(kModalityNames[c]) + ".nii.gz");
            fs::create_directories(p.parent_path());
            save_volume(pre.volume.channel(c), p);
            (c == kFlair ? r.flair : c == kT1ce ? r.t1ce : r.t2w) = p;
        }
        if (pre.mask) {
            r.mask = dir / rec.case_id / "seg.nii.gz";
            save_mask(*pre.mask, *r.mask);
        }
        if (pre.crop) crops[rec.case_id] = to_json(*pre.crop);
        result.cases.push_back(std::move(r));
    }
    save_manifest(result, dir / "manifest.json");
    nlohmann::json record{{"preprocess", to_json(pc)}, {"crops", crops}, {"warnings", warnings.messages}};
    write_text(dir / "preprocess.json", record.dump(2) + "\n");
    for (const auto& w : warnings.messages) out << "warning: " << w << "\n";
    out << "preprocessed " << result.cases.size() << " case(s) into " << dir.string() << "\n";
    return 0;
}

inline void print_log(std::ostream& out, const EpochLog& l) {
    out << "epoch " << l.epoch << " train_loss " << l.train_loss << " train_dice " << l.train_dice;
    if (!std::isnan(l.val_dice)) out << " val_loss " << l.val_loss << " val_dice " << l.val_dice;
    out << " (" << l.seconds << " s)\n";
}

inline int run_train(const Options& o, Stage stage, std::ostream& out) {
    if (o.manifest.empty() || o.out.empty()) throw ValueError("--manifest and --out are required");
    const auto config = resolve_train_config(o, stage);
    const auto m = load_manifest(o.manifest);
    const auto data = load_dataset(m, config.preprocess);
    const fs::path dir(o.out);
    if (o.cross_validate) {
        const auto cv = cross_validate(config, data, dir);
        for (std::size_t f = 0; f < cv.fold_logs.size(); ++f) {
            out << "fold " << f << ": " << cv.fold_logs[f].size() << " epoch(s)\n";
        }
        if (!cv.mean_logs.empty()) print_log(out, cv.mean_logs.back());
        return 0;
    }
    TrainOptions opt;
    opt.val_ids = ids_with_split(m, "val");
    for (const auto& c : m.cases) {
        if (c.split != "val" && c.split != "test") opt.train_ids.push_back(c.case_id);
    }
    opt.out_dir = dir;
    opt.on_epoch = [&](const EpochLog& l) { print_log(out, l); };
    const auto r = stage == Stage::Finetune ? (o.checkpoint.empty() ? throw ValueError("--checkpoint is required")
                                                                    : finetune(o.checkpoint, config, data, opt))
                                            : train(config, data, std::nullopt, opt);
    out << "best epoch " << r.best_epoch << "; checkpoints in " << dir.string() << "\n";
    return 0;
}

inline int run_predict(const Options& o, std::ostream& out) {
    if (o.manifest.empty() || o.out.empty()) throw ValueError("--manifest and --out are required");
    auto model = load_model(o.checkpoint);
    const auto opt = predict_options(o, model.config());
    const auto m = load_manifest(o.manifest);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    for (const auto& rec : m.cases) {
        const auto mask = predict_volume(model, load_case_volume(rec), opt);
        save_mask(mask, dir / (rec.case_id + "_pred.nii.gz"));
        out << rec.case_id << " -> " << (dir / (rec.case_id + "_pred.nii.gz")).string() << "\n";
    }
    return 0;
}

inline int run_evaluate(const Options& o, std::ostream& out) {
    if (o.manifest.empty() || o.pred.empty() || o.out.empty()) {
        throw ValueError("--manifest, --pred and --out are required");
    }
    const auto m = load_manifest(o.manifest);
    std::vector<MetricsReport> reports;
    for (const auto& rec : m.cases) {
        if (!rec.mask) continue;
        const auto truth = load_mask(*rec.mask);
        const auto pred = load_mask(fs::path(o.pred) / (rec.case_id + "_pred.nii.gz"));
        reports.push_back(evaluate_case(pred, truth, truth.geometry.spacing, rec.case_id));
    }
    if (reports.empty()) throw ValueError("no labelled cases to evaluate");
    const fs::path csv(o.out);
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    {
        std::ofstream f(csv);
        write_metrics_csv(f, reports);
        if (!f) throw IoError("cannot write " + csv.string());
    }
    fs::path js = csv;
    js.replace_extension(".json");
    write_text(js, metrics_json(reports).dump(2) + "\n");
    write_metrics_csv(out, reports);
    return 0;
}

inline int run_benchmark(const Options& o, std::ostream& out) {
    if (o.manifest.empty() || o.out.empty()) throw ValueError("--manifest and --out are required");
    const auto device = device_label(o.device);
    auto model = load_model(o.checkpoint);
    const auto opt = predict_options(o, model.config());
    const auto m = load_manifest(o.manifest);
    const fs::path dir(o.out);
    const auto report = benchmark_inference(m.cases, model, device, opt, dir / "predictions");
    std::ostringstream csv;
    write_timing_csv(csv, report);
    write_text(dir / "timing.csv", csv.str());
    write_text(dir / "timing.json", timing_json(report).dump(2) + "\n");
    out << csv.str();
    return 0;
}

}  // namespace cli_detail

/// Parses argv and runs one subcommand.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
    using namespace cli_detail;
    CLI::App app{"BrainUNet: 3D brain tumor segmentation toolkit", "brainunet"};
    app.require_subcommand(1);
    Options o;

    auto add_seed = [&](CLI::App* s) {
        s->add_option("--seed", o.seed, "Random seed")->each([&](const std::string&) { o.seed_set = true; });
    };
    auto add_window = [&](CLI::App* s) {
        s->add_option("--patch", o.patch, "Window / crop size, N or XxYxZ (default 128)");
        s->add_option("--overlap", o.overlap, "Sliding-window overlap in [0,1) (default 0.5)");
        s->add_option("--mode", o.mode, "sliding | crop (default sliding)");
        s->add_option("--config", o.config, "JSON config whose \"preprocess\" section is applied");
    };

    auto* phantom = app.add_subcommand("phantom", "Write synthetic phantom cases and a manifest");
    add_seed(phantom);
    phantom->add_option("--dims", o.dims, "Volume size, N or XxYxZ (default 64)");
    phantom->add_option("--count", o.count, "Number of cases (default 1)");
    phantom->add_option("--style", o.style, "Acquisition style A or B (default A)");
    phantom->add_option("--out", o.out, "Output directory")->required();

    auto* preprocess = app.add_subcommand("preprocess", "Clip, normalize and crop every case of a manifest");
    preprocess->add_option("--manifest", o.manifest, "Dataset manifest (JSON)")->required();
    preprocess->add_option("--config", o.config, "JSON preprocessing config");
    preprocess->add_option("--out", o.out, "Output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "Train from scratch (pretrain regime)");
    auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune from a pretrained checkpoint");
    for (auto* s : {train_cmd, finetune_cmd}) {
        s->add_option("--config", o.config, "JSON training config");
        s->add_option("--manifest", o.manifest, "Dataset manifest (JSON); split \"val\" cases validate")->required();
        s->add_option("--out", o.out, "Output directory for checkpoints and logs")->required();
        s->add_option("--epochs", o.epochs, "Override the configured epoch count");
        s->add_option("--device", o.device, "Compute device (cpu)");
        add_seed(s);
    }
    train_cmd->add_flag("--cross-validate", o.cross_validate, "Run k-fold cross-validation instead");
    finetune_cmd->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint directory")->required();
    finetune_cmd->add_flag("--freeze-encoder", o.freeze_encoder, "Keep encoder weights fixed");

    auto* predict = app.add_subcommand("predict", "Segment every case of a manifest");
    predict->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
    predict->add_option("--manifest", o.manifest, "Dataset manifest (JSON)")->required();
    predict->add_option("--out", o.out, "Output directory for <case>_pred.nii.gz")->required();
    predict->add_option("--device", o.device, "Compute device (cpu)");
    add_window(predict);

    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against manifest masks");
    evaluate->add_option("--manifest", o.manifest, "Dataset manifest with masks")->required();
    evaluate->add_option("--pred", o.pred, "Directory of <case>_pred.nii.gz files")->required();
    evaluate->add_option("--out", o.out, "Metrics CSV path (a .json twin is written too)")->required();

    auto* bench = app.add_subcommand("benchmark", "Time load -> predict -> save per case");
    bench->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
    bench->add_option("--manifest", o.manifest, "Dataset manifest (JSON)")->required();
    bench->add_option("--out", o.out, "Output directory (timing.csv, timing.json, predictions/)")->required();
    bench->add_option("--device", o.device, "Device label for the timing table (cpu)");
    add_window(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }
    try {
        if (*phantom) return run_phantom(o, out);
        if (*preprocess) return run_preprocess(o, out);
        if (*train_cmd || *finetune_cmd) {
            device_label(o.device);
            return run_train(o, *train_cmd ? Stage::Pretrain : Stage::Finetune, out);
        }
        if (*predict) {
            device_label(o.device);
            return run_predict(o, out);
        }
        if (*evaluate) return run_evaluate(o, out);
        if (*bench) return run_benchmark(o, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace brainunet
