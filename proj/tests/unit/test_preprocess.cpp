#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "brainunet/phantom.hpp"
#include "brainunet/preprocess.hpp"
#include "support.hpp"

using namespace brainunet;

namespace {

MultiModalVolume from_channel(const std::vector<float>& values, Dims3 d) {
    MultiModalVolume v{Tensor<float>(3, d), {}};
    for (int c = 0; c < 3; ++c) std::copy(values.begin(), values.end(), v.data.channel(c));
    return v;
}

// Nearest-rank percentile written out longhand.
float nearest_rank(std::vector<float> v, double q) {
    std::sort(v.begin(), v.end());
    const double rank = std::ceil(q / 100.0 * static_cast<double>(v.size()));
    const auto idx = static_cast<std::size_t>(std::max(1.0, rank)) - 1;
    return v[std::min(idx, v.size() - 1)];
}

}  // namespace

TEST(PercentileClip, ConstantChannelUnchanged) {
    const auto v = from_channel(std::vector<float>(27, 4.0f), Dims3::cube(3));
    EXPECT_EQ(percentile_clip(v, 1, 99).data, v.data);
}

TEST(PercentileClip, MatchesSortAndIndexOracle) {
    std::vector<float> vals(125, 0.0f);
    for (int i = 0; i < 100; ++i) vals[i + 10] = static_cast<float>(i + 1);
    const auto v = from_channel(vals, Dims3::cube(5));
    const auto out = percentile_clip(v, 1, 99);
    std::vector<float> nz;
    for (float x : vals)
        if (x != 0) nz.push_back(x);
    const float lo = nearest_rank(nz, 1), hi = nearest_rank(nz, 99);
    EXPECT_EQ(lo, 1.0f);
    EXPECT_EQ(hi, 99.0f);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const float expect = vals[i] == 0 ? 0.0f : std::clamp(vals[i], lo, hi);
        EXPECT_EQ(out.data[i], expect);
    }
}

TEST(PercentileClip, IdempotentAndChannelIndependent) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = testing_support::random_volume(rng, {6, 7, 5}, -2.0f, 5.0f);
        for (std::int64_t i = 0; i < v.data.size(); i += 3) v.data[i] = 0;
        const auto once = percentile_clip(v, 2.5, 97.5);
        EXPECT_EQ(percentile_clip(once, 2.5, 97.5).data, once.data);

        MultiModalVolume perm = v;
        const auto n = v.data.voxels();
        std::copy(v.data.channel(2), v.data.channel(2) + n, perm.data.channel(0));
        std::copy(v.data.channel(0), v.data.channel(0) + n, perm.data.channel(2));
        const auto po = percentile_clip(perm, 2.5, 97.5);
        EXPECT_TRUE(std::equal(po.data.channel(0), po.data.channel(0) + n, once.data.channel(2)));
        EXPECT_TRUE(std::equal(po.data.channel(2), po.data.channel(2) + n, once.data.channel(0)));
    }
}

TEST(PercentileClip, ZeroChannelWarns) {
    Warnings w;
    const auto v = from_channel(std::vector<float>(8, 0.0f), Dims3::cube(2));
    EXPECT_EQ(percentile_clip(v, 1, 99, &w).data, v.data);
    EXPECT_EQ(w.messages.size(), 3u);
}

TEST(PercentileClip, RejectsBadBounds) {
    const auto v = from_channel(std::vector<float>(8, 1.0f), Dims3::cube(2));
    EXPECT_THROW(percentile_clip(v, 50, 50), ValueError);
    EXPECT_THROW(percentile_clip(v, -1, 50), ValueError);
    EXPECT_THROW(percentile_clip(v, 1, 101), ValueError);
}

TEST(Normalize, AffineMapOfNonzeroValues) {
    const auto v = from_channel({0, 2, 4, 6, 0, 0, 0, 0}, Dims3::cube(2));
    const auto out = normalize(v);
    EXPECT_FLOAT_EQ(out.data[1], 0.0f);
    EXPECT_FLOAT_EQ(out.data[2], 0.5f);
    EXPECT_FLOAT_EQ(out.data[3], 1.0f);
    EXPECT_EQ(out.data[0], 0.0f);
}

TEST(Normalize, UnitRangeChannelUnchanged) {
    // Zero is background, so the channel minimum sits just above it.
    const std::vector<float> vals{1e-30f, 0.25f, 1.0f, 0.5f, 0, 0, 0, 0};
    const auto out = normalize(from_channel(vals, Dims3::cube(2)));
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.data[i], vals[i], 1e-6);
}

TEST(Normalize, DegenerateChannelMapsToZeroWithWarning) {
    Warnings w;
    const auto v = from_channel({3, 3, 3, 0, 3, 3, 3, 3}, Dims3::cube(2));
    const auto out = normalize(v, Normalization::MinMax, &w);
    for (float x : out.data.storage()) EXPECT_EQ(x, 0.0f);
    EXPECT_FALSE(w.messages.empty());
}

TEST(Normalize, OutputInUnitIntervalAndBackgroundKept) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        auto v = testing_support::random_volume(rng, {5, 6, 7}, -10.0f, 30.0f);
        for (std::int64_t i = 0; i < v.data.size(); i += 4) v.data[i] = 0;
        const auto out = normalize(v);
        for (std::int64_t i = 0; i < v.data.size(); ++i) {
            EXPECT_GE(out.data[i], 0.0f);
            EXPECT_LE(out.data[i], 1.0f);
            if (v.data[i] == 0) EXPECT_EQ(out.data[i], 0.0f);
        }
    }
}

TEST(Normalize, ZScoreOption) {
    const auto v = from_channel({1, 2, 3, 4, 5, 0, 0, 0}, Dims3::cube(2));
    const auto out = normalize(v, Normalization::ZScore);
    double s = 0, s2 = 0;
    for (int i = 0; i < 5; ++i) {
        s += out.data[i];
        s2 += out.data[i] * out.data[i];
    }
    EXPECT_NEAR(s / 5, 0.0, 1e-6);
    EXPECT_NEAR(s2 / 5, 1.0, 1e-5);
}

TEST(ComputeCrop, CenteredOnForegroundBoundingBox) {
    LabelMask m({240, 240, 155});
    for (std::int64_t i = 100; i <= 140; ++i)
        for (std::int64_t j = 90; j <= 130; ++j)
            for (std::int64_t k = 60; k <= 90; ++k) m(i, j, k) = 1;
    const auto s = compute_crop(m);
    EXPECT_EQ(s.dims, Dims3::cube(128));
    // Oracle: bounding-box midpoint minus half the window, clamped.
    auto start = [](std::int64_t lo, std::int64_t hi, std::int64_t n) {
        const std::int64_t mid2 = lo + hi;  // twice the midpoint
        std::int64_t st = (mid2 + 1 - 128) / 2;
        return std::clamp<std::int64_t>(st, 0, n - 128);
    };
    EXPECT_EQ(s.start[0], start(100, 140, 240));
    EXPECT_EQ(s.start[1], start(90, 130, 240));
    EXPECT_EQ(s.start[2], start(60, 90, 155));
    // The crop window contains the whole bounding box.
    EXPECT_LE(s.start[0], 100);
    EXPECT_GE(s.start[0] + 128, 141);
}

TEST(ComputeCrop, SmallAxisIsPaddedSymmetrically) {
    LabelMask m({200, 100, 64});
    m(100, 50, 32) = 2;
    const auto s = compute_crop(m);
    EXPECT_EQ(s.padded.y, 128);
    EXPECT_EQ(s.pad_before[1], 14);
    EXPECT_EQ(s.start[1], 0);
    EXPECT_EQ(s.padded.z, 128);
    EXPECT_EQ(s.pad_before[2], 32);
    EXPECT_EQ(s.start[2], 0);
}

TEST(ComputeCrop, CornerForegroundClamped) {
    LabelMask m({200, 200, 200});
    m(2, 3, 197) = 1;
    const auto s = compute_crop(m);
    EXPECT_EQ(s.start[0], 0);
    EXPECT_EQ(s.start[1], 0);
    EXPECT_EQ(s.start[2], 200 - 128);
}

TEST(ComputeCrop, FallsBackToBrainForeground) {
    MultiModalVolume v{Tensor<float>(3, {200, 200, 200}), {}};
    v.data.at(1, 190, 190, 190) = 1.0f;
    const auto s = compute_crop(v);
    EXPECT_EQ(s.start[0], 72);
}

TEST(ApplyCrop, IdentitySpec) {
    std::mt19937_64 rng(1);
    const auto m = testing_support::random_labels(rng, {9, 8, 7});
    const auto s = compute_crop(m, m.dims);
    EXPECT_EQ(apply_crop(m, s).voxels, m.voxels);
}

TEST(ApplyCrop, CaseSizeToTrainingShape) {
    MultiModalVolume v{Tensor<float>(3, {240, 240, 155}, 1.0f), {}};
    const auto s = compute_crop(v);
    EXPECT_EQ(apply_crop(v, s).data.shape(), (std::vector<std::int64_t>{3, 128, 128, 128}));
}

TEST(ApplyCrop, RejectsSpecForOtherDims) {
    LabelMask m({10, 10, 10});
    const auto s = compute_crop(m, Dims3::cube(4));
    LabelMask other({11, 10, 10});
    EXPECT_THROW(apply_crop(other, s), ShapeError);
    CropSpec bad = s;
    bad.start[0] = 9;
    EXPECT_THROW(apply_crop(m, bad), ValueError);
}

TEST(RestorePrediction, InverseOfCropOnWindowZeroElsewhere) {
    std::mt19937_64 rng(9);
    for (const Dims3 d : {Dims3{40, 20, 30}, Dims3{16, 16, 16}, Dims3{50, 10, 33}}) {
        auto m = testing_support::random_labels(rng, d);
        const auto s = compute_crop(m, {24, 24, 24});
        const auto cropped = apply_crop(m, s);
        const auto back = restore_prediction(cropped, s, d);
        for (std::int64_t i = 0; i < d.x; ++i)
            for (std::int64_t j = 0; j < d.y; ++j)
                for (std::int64_t k = 0; k < d.z; ++k) {
                    const std::array<std::int64_t, 3> p{i + s.pad_before[0] - s.start[0], j + s.pad_before[1] - s.start[1],
                                                        k + s.pad_before[2] - s.start[2]};
                    const bool inside = p[0] >= 0 && p[0] < 24 && p[1] >= 0 && p[1] < 24 && p[2] >= 0 && p[2] < 24;
                    EXPECT_EQ(back(i, j, k), inside ? m(i, j, k) : 0);
                }
    }
}

TEST(RestorePrediction, DimensionMismatch) {
    LabelMask m({30, 30, 30});
    const auto s = compute_crop(m, Dims3::cube(16));
    EXPECT_THROW(restore_prediction(LabelMask(Dims3::cube(15)), s, m.dims), ShapeError);
    EXPECT_THROW(restore_prediction(LabelMask(Dims3::cube(16)), s, Dims3::cube(31)), ShapeError);
}

TEST(OneHot, ZerosMask) {
    const LabelMask m(Dims3::cube(3));
    const auto t = one_hot_encode(m);
    for (std::int64_t i = 0; i < 27; ++i) {
        EXPECT_EQ(t[i], 1.0f);
        for (int c = 1; c < 4; ++c) EXPECT_EQ(t[c * 27 + i], 0.0f);
    }
}

TEST(OneHot, DecodeEncodeIdentityAndRowSums) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = testing_support::random_labels(rng, {4, 5, 6});
        const auto t = one_hot_encode(m);
        const auto n = m.dims.count();
        for (std::int64_t i = 0; i < n; ++i) {
            float s = 0;
            for (int c = 0; c < 4; ++c) s += t[c * n + i];
            EXPECT_EQ(s, 1.0f);
        }
        EXPECT_EQ(one_hot_decode(t).voxels, m.voxels);
    }
}

TEST(OneHot, TieBreakLowestIndex) {
    Tensor<float> t(4, Dims3::cube(1), 0.25f);
    EXPECT_EQ(one_hot_decode(t).voxels[0], 0);
    t[0] = 0.1f;
    t[2] = 0.4f;
    t[3] = 0.4f;
    EXPECT_EQ(one_hot_decode(t).voxels[0], 2);
}

TEST(OneHot, OutOfRangeLabel) {
    LabelMask m(Dims3::cube(2));
    m.voxels[0] = 4;
    EXPECT_THROW(one_hot_encode(m), ValueError);
}

TEST(PreprocessCase, CropsVolumeAndMaskTogether) {
    const auto p = generate_phantom(1, {48, 40, 36});
    PreprocessConfig c;
    c.crop = Dims3::cube(32);
    const auto out = preprocess_case(p.volume, p.mask, c);
    EXPECT_EQ(out.volume.dims(), Dims3::cube(32));
    ASSERT_TRUE(out.mask);
    EXPECT_EQ(out.mask->dims, Dims3::cube(32));
    ASSERT_TRUE(out.crop);
    EXPECT_EQ(apply_crop(p.mask, *out.crop).voxels, out.mask->voxels);
    for (float x : out.volume.data.storage()) {
        EXPECT_GE(x, 0.0f);
        EXPECT_LE(x, 1.0f);
    }
}

TEST(PreprocessConfigJson, RoundTrip) {
    PreprocessConfig c;
    c.clip_low = 1;
    c.clip_high = 98;
    c.normalization = Normalization::ZScore;
    c.crop = {64, 32, 16};
    c.crop_enabled = false;
    const auto back = preprocess_config_from_json(to_json(c));
    EXPECT_EQ(back.clip_low, 1);
    EXPECT_EQ(back.clip_high, 98);
    EXPECT_EQ(back.normalization, Normalization::ZScore);
    EXPECT_EQ(back.crop, c.crop);
    EXPECT_FALSE(back.crop_enabled);
}
