#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>
#include <set>

#include "brainunet/augment.hpp"
#include "brainunet/phantom.hpp"
#include "support.hpp"

using namespace brainunet;

namespace {

std::set<int> labels_of(const LabelMask& m) { return {m.voxels.begin(), m.voxels.end()}; }

double max_abs_diff(const MultiModalVolume& a, const MultiModalVolume& b) {
    double d = 0;
    for (std::int64_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(double(a.data[i]) - b.data[i]));
    return d;
}

PhantomCase normalized_phantom(std::uint64_t seed, Dims3 d) {
    auto p = generate_phantom(seed, d);
    for (auto& v : p.volume.data.storage()) v = std::clamp(v, 0.0f, 1.0f);
    return p;
}

LabelMask ball(Dims3 d, double r) {
    LabelMask m(d);
    const double c[3] = {(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0};
    for (std::int64_t i = 0; i < d.x; ++i)
        for (std::int64_t j = 0; j < d.y; ++j)
            for (std::int64_t k = 0; k < d.z; ++k) {
                const double dx = i - c[0], dy = j - c[1], dz = k - c[2];
                if (dx * dx + dy * dy + dz * dz <= r * r) m(i, j, k) = 1;
            }
    return m;
}

}  // namespace

TEST(Flip, InvolutionAndHistogramPreserved) {
    const auto p = normalized_phantom(0, {20, 18, 16});
    for (int axis = 0; axis < 3; ++axis) {
        const auto once = flip_axis(p.volume, p.mask, axis);
        const auto twice = flip_axis(once.volume, once.mask, axis);
        EXPECT_EQ(twice.volume.data, p.volume.data);
        EXPECT_EQ(twice.mask.voxels, p.mask.voxels);
        std::array<int, 4> h0{}, h1{};
        for (auto v : p.mask.voxels) ++h0[v];
        for (auto v : once.mask.voxels) ++h1[v];
        EXPECT_EQ(h0, h1);
    }
}

TEST(Flip, ExplicitIndexMapping) {
    const auto p = normalized_phantom(3, {17, 16, 18});
    const auto f = flip_axis(p.volume, p.mask, 1);
    const Dims3 d = p.mask.dims;
    for (std::int64_t i = 0; i < d.x; ++i)
        for (std::int64_t j = 0; j < d.y; ++j)
            for (std::int64_t k = 0; k < d.z; ++k) {
                ASSERT_EQ(f.mask(i, j, k), p.mask(i, d.y - 1 - j, k));
                ASSERT_EQ(f.volume.data.at(2, i, j, k), p.volume.data.at(2, i, d.y - 1 - j, k));
            }
}

TEST(Flip, SeededDeterminism) {
    const auto p = normalized_phantom(1, Dims3::cube(16));
    Rng a(42), b(42);
    const auto x = random_flip(p.volume, p.mask, a), y = random_flip(p.volume, p.mask, b);
    EXPECT_EQ(x.volume.data, y.volume.data);
    EXPECT_EQ(x.mask.voxels, y.mask.voxels);
}

TEST(Scale, UnitFactorIsIdentity) {
    const auto p = normalized_phantom(2, {18, 20, 16});
    const auto s = scale_volume(p.volume, p.mask, 1.0);
    EXPECT_LE(max_abs_diff(s.volume, p.volume), 1e-6);
    EXPECT_EQ(s.mask.voxels, p.mask.voxels);
}

TEST(Scale, BallVolumeGrowsByCube) {
    const Dims3 d = Dims3::cube(48);
    const auto m = ball(d, 9.0);
    MultiModalVolume v{Tensor<float>(3, d), {}};
    const auto s = scale_volume(v, m, 1.1);
    double before = 0, after = 0;
    for (auto x : m.voxels) before += x;
    for (auto x : s.mask.voxels) after += x;
    EXPECT_NEAR(after / before, 1.331, 0.1 * 1.331);
}

TEST(Scale, VolumeAndMaskShareGeometry) {
    // The mask rendered as an intensity image follows the mask after scaling.
    const Dims3 d = Dims3::cube(32);
    const auto m = ball(d, 7.0);
    MultiModalVolume v{Tensor<float>(3, d), {}};
    for (std::int64_t i = 0; i < d.count(); ++i)
        for (int c = 0; c < 3; ++c) v.data.channel(c)[i] = m.voxels[i];
    for (double f : {0.9, 1.07, 1.1}) {
        const auto s = scale_volume(v, m, f);
        // Trilinear and nearest sampling may only disagree next to the mask surface.
        auto on_surface = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj)
                    for (int dk = -1; dk <= 1; ++dk) {
                        const auto a = i + di, b = j + dj, c = k + dk;
                        if (a < 0 || b < 0 || c < 0 || a >= d.x || b >= d.y || c >= d.z) continue;
                        if (s.mask(a, b, c) != s.mask(i, j, k)) return true;
                    }
            return false;
        };
        std::int64_t agree = 0;
        for (std::int64_t i = 0; i < d.x; ++i)
            for (std::int64_t j = 0; j < d.y; ++j)
                for (std::int64_t k = 0; k < d.z; ++k) {
                    const auto idx = d.index(i, j, k);
                    const bool same = (s.volume.data[idx] > 0.5f) == (s.mask.voxels[idx] != 0);
                    agree += same;
                    if (!same) ASSERT_TRUE(on_surface(i, j, k)) << f << " at " << i << "," << j << "," << k;
                }
        EXPECT_GT(static_cast<double>(agree) / d.count(), 0.98) << f;
    }
}

TEST(Gamma, FixedPointsAndArithmetic) {
    MultiModalVolume v{Tensor<float>(3, Dims3::cube(2)), {}};
    v.data[0] = 0.0f;
    v.data[1] = 1.0f;
    v.data[2] = 0.25f;
    const auto g = adjust_gamma(v, 2.0);
    EXPECT_EQ(g.data[0], 0.0f);
    EXPECT_EQ(g.data[1], 1.0f);
    EXPECT_FLOAT_EQ(g.data[2], 0.0625f);
    EXPECT_EQ(adjust_gamma(v, 1.0).data, v.data);
    for (double gamma : {0.8, 1.2, 3.0}) {
        const auto h = adjust_gamma(v, gamma);
        EXPECT_EQ(h.data[0], 0.0f);
        EXPECT_EQ(h.data[1], 1.0f);
    }
}

TEST(Gamma, RejectsUnnormalizedInput) {
    MultiModalVolume v{Tensor<float>(3, Dims3::cube(2)), {}};
    v.data[4] = 1.5f;
    EXPECT_THROW(adjust_gamma(v, 1.1), ValueError);
}

TEST(Motion, ZeroSeverityIsIdentity) {
    const auto p = normalized_phantom(0, Dims3::cube(16));
    Rng rng(1);
    EXPECT_EQ(motion_artifact(p.volume, 0.0, rng).data, p.volume.data);
}

TEST(Motion, FullSeverityChangesImage) {
    const auto p = normalized_phantom(0, Dims3::cube(24));
    Rng rng(1);
    const auto m = motion_artifact(p.volume, 1.0, rng);
    EXPECT_EQ(m.data.shape(), p.volume.data.shape());
    double mad = 0;
    for (std::int64_t i = 0; i < m.data.size(); ++i) {
        ASSERT_TRUE(std::isfinite(m.data[i]));
        mad += std::abs(m.data[i] - p.volume.data[i]);
    }
    EXPECT_GT(mad / m.data.size(), 1e-4);
}

TEST(Ghosting, NeutralParametersAreIdentity) {
    const auto p = normalized_phantom(4, Dims3::cube(16));
    Rng rng(3);
    EXPECT_LE(max_abs_diff(ghosting_artifact(p.volume, 0.0, 4, 1, rng), p.volume), 1e-6);
    EXPECT_LE(max_abs_diff(ghosting_artifact(p.volume, 0.5, 0, 1, rng), p.volume), 1e-6);
}

TEST(Ghosting, MatchesRealSpaceReplicaSum) {
    // Attenuating k-lines r, r+G, ... equals subtracting intensity/G times the
    // phase-weighted sum of copies shifted by multiples of n/G (plus a DC fix
    // when r = 0), then taking the modulus.
    const Dims3 d{16, 16, 16};
    const auto p = normalized_phantom(3, d);
    const int ghosts = 4, axis = 1;
    const double intensity = 0.4;
    const std::int64_t period = d.y / ghosts;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed), replay(seed);
        const int r = std::uniform_int_distribution<int>(0, ghosts - 1)(replay);
        const auto g = ghosting_artifact(p.volume, intensity, ghosts, axis, rng);
        const auto n = d.count();
        for (int c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < d.x; ++i)
                for (std::int64_t k = 0; k < d.z; ++k) {
                    auto f = [&](std::int64_t j) { return static_cast<double>(p.volume.data[c * n + d.index(i, j % d.y, k)]); };
                    double mean = 0;
                    for (std::int64_t j = 0; j < d.y; ++j) mean += f(j);
                    mean /= static_cast<double>(d.y);
                    for (std::int64_t j = 0; j < d.y; ++j) {
                        std::complex<double> comp = 0;
                        for (int m = 0; m < ghosts; ++m) {
                            const double phase = 2 * M_PI * r * m / ghosts;
                            comp += std::polar(1.0, phase) * f(j + d.y - m * period);
                        }
                        comp /= static_cast<double>(ghosts);
                        if (r == 0) comp -= mean;
                        const double expected = std::abs(f(j) - intensity * comp);
                        ASSERT_NEAR(g.data[c * n + d.index(i, j, k)], expected, 1e-5) << "seed " << seed;
                    }
                }
    }
}

TEST(Ghosting, AutocorrelationPeaksAtReplicaSpacing) {
    // The change image repeats at multiples of n / num_ghosts, so its
    // autocorrelation is strongest at one of those lags.
    const Dims3 d = Dims3::cube(32);
    const auto p = normalized_phantom(7, d);
    const int ghosts = 4, axis = 1;
    const std::int64_t period = d.y / ghosts;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        Rng rng(seed);
        const auto g = ghosting_artifact(p.volume, 0.5, ghosts, axis, rng);
        std::vector<double> diff(static_cast<std::size_t>(g.data.size()));
        for (std::int64_t i = 0; i < g.data.size(); ++i) diff[i] = g.data[i] - p.volume.data[i];
        const auto n = d.count();
        auto acf = [&](std::int64_t lag) {
            double s = 0;
            for (int c = 0; c < 3; ++c)
                for (std::int64_t i = 0; i < d.x; ++i)
                    for (std::int64_t j = 0; j < d.y; ++j)
                        for (std::int64_t k = 0; k < d.z; ++k)
                            s += diff[c * n + d.index(i, j, k)] * diff[c * n + d.index(i, (j + lag) % d.y, k)];
            return std::abs(s);
        };
        double peak = 0;
        for (std::int64_t m = 1; m < ghosts; ++m) peak = std::max(peak, acf(m * period));
        EXPECT_GT(peak, 0.0);
        for (std::int64_t lag = 2; lag <= d.y - 2; ++lag) {
            const auto off = lag % period;
            if (off < 2 || off > period - 2) continue;
            EXPECT_GT(peak, acf(lag)) << "seed " << seed << " lag " << lag;
        }
    }
}

TEST(Pipeline, AllProbabilitiesZeroIsIdentity) {
    const auto p = normalized_phantom(0, Dims3::cube(16));
    Rng rng(0);
    const auto out = apply_pipeline(p.volume, p.mask, AugmentConfig::none(), rng);
    EXPECT_EQ(out.volume.data, p.volume.data);
    EXPECT_EQ(out.mask.voxels, p.mask.voxels);
}

TEST(Pipeline, SameSeedSameOutput) {
    const auto p = normalized_phantom(0, Dims3::cube(16));
    AugmentConfig c;
    c.p_flip = c.p_scale = c.p_gamma = c.p_motion = c.p_ghosting = 1.0;
    Rng a(9), b(9);
    const auto x = apply_pipeline(p.volume, p.mask, c, a), y = apply_pipeline(p.volume, p.mask, c, b);
    EXPECT_EQ(x.volume.data, y.volume.data);
    EXPECT_EQ(x.mask.voxels, y.mask.voxels);
}

TEST(Pipeline, FlipOnlyEqualsRandomFlip) {
    const auto p = normalized_phantom(0, Dims3::cube(16));
    AugmentConfig c = AugmentConfig::none();
    c.p_flip = 1.0;
    Rng a(17), b(17);
    const auto x = apply_pipeline(p.volume, p.mask, c, a);
    const auto y = random_flip(p.volume, p.mask, b);
    EXPECT_EQ(x.volume.data, y.volume.data);
    EXPECT_EQ(x.mask.voxels, y.mask.voxels);
}

TEST(Pipeline, LabelSetNeverGrows) {
    std::mt19937_64 gen(23);
    AugmentConfig c;
    c.p_flip = c.p_scale = 1.0;
    for (int t = 0; t < 10; ++t) {
        auto p = normalized_phantom(t, Dims3::cube(16));
        for (auto& v : p.mask.voxels)
            if (v == 1) v = 0;
        const auto before = labels_of(p.mask);
        Rng rng(gen());
        const auto out = apply_pipeline(p.volume, p.mask, c, rng);
        for (int l : labels_of(out.mask)) EXPECT_TRUE(before.count(l)) << l;
    }
}

TEST(AugmentConfigTest, ValidationAndJson) {
    AugmentConfig c;
    c.scale_range = {1.2, 1.1};
    EXPECT_THROW(c.validate(), ValueError);
    c = {};
    c.gamma_range = {0.0, 1.0};
    EXPECT_THROW(c.validate(), ValueError);
    c = {};
    c.p_motion = 1.5;
    EXPECT_THROW(c.validate(), ValueError);
    c = {};
    c.ghost_count = 7;
    c.seed = 99;
    const auto back = augment_config_from_json(to_json(c));
    EXPECT_EQ(back.ghost_count, 7);
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.scale_range, c.scale_range);
}
