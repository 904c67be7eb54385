#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "brainunet/phantom.hpp"
#include "brainunet/train.hpp"
#include "support.hpp"

using namespace brainunet;
using testing_support::TempDir;

namespace {

Dataset tiny_dataset(int n, Dims3 d = Dims3::cube(16), std::uint64_t seed0 = 0) {
    Dataset data;
    for (int i = 0; i < n; ++i) {
        auto p = generate_phantom(seed0 + i, d);
        for (auto& v : p.volume.data.storage()) v = std::clamp(v, 0.0f, 1.0f);
        data.push_back({"case" + std::to_string(i), std::move(p.volume), std::move(p.mask)});
    }
    return data;
}

TrainConfig tiny_config(int epochs) {
    TrainConfig c;
    c.model.base_filters = 2;
    c.model.depth = 2;
    c.epochs = epochs;
    c.seed = 4;
    return c;
}

bool same_tensors(const ParameterSet<float>& a, const ParameterSet<float>& b, const std::string& prefix) {
    for (const auto& e : a.entries()) {
        if (e.name.rfind(prefix, 0) == 0 && !(e.value == b[e.name])) return false;
    }
    return true;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
    ParameterSet<float> p, g;
    p.add("w", Tensor<float>({3}, 1.5f));
    g.add("w", Tensor<float>({3}));
    Adam<float> opt;
    opt.step(p, g);
    EXPECT_EQ(opt.steps(), 1);
    for (float v : p["w"].storage()) EXPECT_EQ(v, 1.5f);
}

TEST(Adam, FirstStepArithmetic) {
    ParameterSet<double> p, g;
    p.add("w", Tensor<double>({1}, 0.0));
    g.add("w", Tensor<double>({1}, 1.0));
    Adam<double> opt(AdamConfig{0.1});
    opt.step(p, g);
    EXPECT_NEAR(p["w"][0], -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, DecreasesQuadratic) {
    ParameterSet<double> p, g;
    p.add("x", Tensor<double>({1}, 3.0));
    g.add("x", Tensor<double>({1}));
    Adam<double> opt(AdamConfig{0.1});
    auto f = [&] { return (p["x"][0] - 1.0) * (p["x"][0] - 1.0); };
    double prev = f();
    for (int i = 0; i < 10; ++i) {
        g["x"][0] = 2 * (p["x"][0] - 1.0);
        opt.step(p, g);
        EXPECT_LT(f(), prev);
        prev = f();
    }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    ParameterSet<float> p, g;
    p.add("enc0.conv1.weight", Tensor<float>({2}));
    g.add("enc0.conv1.weight", Tensor<float>({2}));
    g["enc0.conv1.weight"][1] = std::numeric_limits<float>::infinity();
    Adam<float> opt;
    try {
        opt.step(p, g);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("enc0.conv1.weight"), std::string::npos);
    }
    EXPECT_EQ(opt.steps(), 0);
}

TEST(Adam, SkipPredicateFreezes) {
    ParameterSet<float> p, g;
    p.add("a", Tensor<float>({1}, 1.0f));
    p.add("b", Tensor<float>({1}, 1.0f));
    g.add("a", Tensor<float>({1}, 1.0f));
    g.add("b", Tensor<float>({1}, 1.0f));
    Adam<float> opt;
    opt.step(p, g, [](const std::string& n) { return n == "a"; });
    EXPECT_EQ(p["a"][0], 1.0f);
    EXPECT_LT(p["b"][0], 1.0f);
}

TEST(Folds, TenIdsFiveFolds) {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
    const auto folds = make_folds(ids, 5, 1);
    ASSERT_EQ(folds.size(), 5u);
    std::multiset<std::string> all;
    for (const auto& f : folds) {
        EXPECT_EQ(f.val_ids.size(), 2u);
        EXPECT_EQ(f.train_ids.size(), 8u);
        all.insert(f.val_ids.begin(), f.val_ids.end());
    }
    EXPECT_EQ(all, std::multiset<std::string>(ids.begin(), ids.end()));
    const auto again = make_folds(ids, 5, 1);
    for (std::size_t i = 0; i < folds.size(); ++i) EXPECT_EQ(folds[i].val_ids, again[i].val_ids);
}

TEST(Folds, Errors) {
    EXPECT_THROW(make_folds({"a", "b"}, 1, 0), ValueError);
    EXPECT_THROW(make_folds({"a", "b"}, 3, 0), ValueError);
    EXPECT_THROW(make_folds({"a", "a", "b"}, 2, 0), ValueError);
}

TEST(TrainConfigTest, StageDefaults) {
    const auto pre = TrainConfig::for_stage(Stage::Pretrain), fine = TrainConfig::for_stage(Stage::Finetune);
    EXPECT_EQ(pre.learning_rate, 1e-3);
    EXPECT_EQ(pre.epochs, 30);
    EXPECT_EQ(fine.learning_rate, 1e-4);
    EXPECT_EQ(fine.epochs, 50);
    EXPECT_EQ(pre.adam.beta1, 0.9);
    EXPECT_EQ(pre.adam.beta2, 0.999);
    EXPECT_EQ(pre.adam.eps, 1e-8);
    EXPECT_EQ(pre.folds, 5);
    EXPECT_EQ(pre.tversky.alpha, 0.3);
    EXPECT_EQ(pre.tversky.beta, 0.7);
}

TEST(TrainConfigTest, JsonRoundTripAndStageFill) {
    auto c = tiny_config(3);
    c.augment.ghost_count = 2;
    c.tversky.alpha = 0.4;
    const auto back = train_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    const auto fine = train_config_from_json({{"stage", "finetune"}});
    EXPECT_EQ(fine.learning_rate, 1e-4);
    EXPECT_EQ(fine.epochs, 50);
    EXPECT_THROW(train_config_from_json({{"learning_rate", -1.0}}), ValueError);
    EXPECT_THROW(train_config_from_json({{"stage", "warmup"}}), ValueError);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
    const auto data = tiny_dataset(2);
    const auto c = tiny_config(0);
    const auto init = initialize_parameters<float>(c.model, 77);
    const auto r = train(c, data, init);
    EXPECT_TRUE(r.logs.empty());
    EXPECT_TRUE(r.final_params == init);
}

TEST(Train, ResumeForZeroEpochsIsBitwiseEqual) {
    TempDir dir("train");
    const auto data = tiny_dataset(2);
    TrainOptions opt;
    opt.out_dir = dir.path();
    const auto r = train(tiny_config(1), data, std::nullopt, opt);
    const auto ck = load_checkpoint(dir / "final");
    const auto resumed = train(tiny_config(0), data, ck.params);
    EXPECT_TRUE(resumed.final_params == r.final_params);
    for (const char* f : {"final/manifest", "best/weights.bin", "epochs.csv", "run_manifest.json"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    std::ifstream man(dir / "run_manifest.json");
    const auto j = nlohmann::json::parse(man);
    EXPECT_EQ(j["config"]["seed"], 4);
    EXPECT_TRUE(j.contains("config"));
}

TEST(Train, DeterministicGivenSeed) {
    const auto data = tiny_dataset(3);
    auto c = tiny_config(2);
    c.augment_enabled = true;
    const auto a = train(c, data), b = train(c, data);
    EXPECT_TRUE(a.final_params == b.final_params);
    ASSERT_EQ(a.logs.size(), 2u);
    EXPECT_EQ(a.logs[1].train_loss, b.logs[1].train_loss);
}

TEST(Train, LogsAreFiniteAndBounded) {
    const auto data = tiny_dataset(3);
    TrainOptions opt;
    opt.val_ids = {"case2"};
    const auto r = train(tiny_config(2), data, std::nullopt, opt);
    for (const auto& l : r.logs) {
        EXPECT_TRUE(std::isfinite(l.train_loss));
        EXPECT_TRUE(std::isfinite(l.val_loss));
        for (double v : {l.train_dice, l.train_iou, l.val_dice, l.val_iou}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_EQ(r.updated_ids, (std::set<std::string>{"case0", "case1"}));
}

TEST(Train, FreezeKeepsEncoderFixed) {
    const auto data = tiny_dataset(2);
    auto c = tiny_config(2);
    c.freeze_encoder = true;
    const auto init = initialize_parameters<float>(c.model, 4);
    const auto r = train(c, data, init);
    EXPECT_TRUE(same_tensors(r.final_params, init, "enc"));
    EXPECT_TRUE(same_tensors(r.final_params, init, "down"));
    EXPECT_FALSE(same_tensors(r.final_params, init, "dec"));
}

TEST(Finetune, ZeroEpochsEqualsTransferredAndRecordsSource) {
    TempDir dir("ft");
    const auto data = tiny_dataset(2);
    BrainUNet<float> src(tiny_config(1).model, 8);
    save_checkpoint(src, {}, dir / "src");
    auto c = tiny_config(0);
    c.stage = Stage::Finetune;
    TrainOptions opt;
    opt.out_dir = dir / "run";
    const auto r = finetune(dir / "src", c, data, opt);
    EXPECT_TRUE(r.final_params == src.parameters());
    std::ifstream man(dir / "run" / "run_manifest.json");
    const auto j = nlohmann::json::parse(man);
    EXPECT_EQ(j["extra"]["source_checkpoint_id"], checkpoint_identity(dir / "src"));
}

TEST(CrossValidate, KSeriesAndMean) {
    const auto data = tiny_dataset(4);
    auto c = tiny_config(2);
    c.folds = 2;
    const auto cv = cross_validate(c, data);
    ASSERT_EQ(cv.fold_logs.size(), 2u);
    ASSERT_EQ(cv.mean_logs.size(), 2u);
    for (std::size_t e = 0; e < 2; ++e) {
        EXPECT_DOUBLE_EQ(cv.mean_logs[e].train_loss, (cv.fold_logs[0][e].train_loss + cv.fold_logs[1][e].train_loss) / 2);
        EXPECT_DOUBLE_EQ(cv.mean_logs[e].val_dice, (cv.fold_logs[0][e].val_dice + cv.fold_logs[1][e].val_dice) / 2);
    }
    for (std::size_t f = 0; f < 2; ++f) {
        for (const auto& id : cv.folds[f].val_ids) EXPECT_FALSE(cv.updated_ids[f].count(id)) << id;
    }
}

TEST(EpochCsv, Columns) {
    std::ostringstream os;
    write_epoch_csv(os, {EpochLog{}});
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), [] {
        std::string h;
        for (const auto& c : epoch_log_columns()) h += (h.empty() ? "" : ",") + c;
        return h;
    }());
}
