#pragma once
// Overlap and boundary metrics on binary masks, and per-case reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainunet/components.hpp"
#include "brainunet/edt.hpp"
#include "brainunet/error.hpp"
#include "brainunet/stats.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

/// HD95 reported when exactly one of the two masks is empty.
inline constexpr double kHd95EmptySentinel = 373.13;

namespace metrics_detail {

inline void check_same(const Image<std::uint8_t>& a, const Image<std::uint8_t>& b) {
    if (!(a.dims == b.dims)) {
        throw ShapeError("mask dims " + to_string(a.dims) + " and " + to_string(b.dims) + " differ");
    }
}

struct Overlap {
    std::int64_t a = 0, b = 0, both = 0;
};

inline Overlap overlap(const Image<std::uint8_t>& a, const Image<std::uint8_t>& b) {
    check_same(a, b);
    Overlap o;
    for (std::size_t i = 0; i < a.voxels.size(); ++i) {
        const bool x = a.voxels[i] != 0, y = b.voxels[i] != 0;
        o.a += x;
        o.b += y;
        o.both += x && y;
    }
    return o;
}

}  // namespace metrics_detail

/// 2|P n T| / (|P| + |T|); 1 when both are empty.
inline double dice_score(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& truth) {
    const auto o = metrics_detail::overlap(pred, truth);
    if (o.a + o.b == 0) return 1.0;
    return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

/// |P n T| / |P u T|; 1 when both are empty.
inline double iou_score(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& truth) {
    const auto o = metrics_detail::overlap(pred, truth);
    const auto uni = o.a + o.b - o.both;
    if (uni == 0) return 1.0;
    return static_cast<double>(o.both) / static_cast<double>(uni);
}

/// Foreground voxels with at least one 6-neighbour that is background or
/// outside the volume.
inline Image<std::uint8_t> boundary(const Image<std::uint8_t>& mask) {
    const Dims3 d = mask.dims;
    Image<std::uint8_t> out(d, 0, mask.geometry);
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z) {
                if (!mask(x, y, z)) continue;
                const bool edge = x == 0 || y == 0 || z == 0 || x == d.x - 1 || y == d.y - 1 || z == d.z - 1 ||
                                  !mask(x - 1, y, z) || !mask(x + 1, y, z) || !mask(x, y - 1, z) ||
                                  !mask(x, y + 1, z) || !mask(x, y, z - 1) || !mask(x, y, z + 1);
                out(x, y, z) = edge;
            }
    return out;
}

/// Nearest boundary distances in both directions (P -> T, then T -> P).
inline std::vector<double> surface_distances(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& truth,
                                             std::array<double, 3> spacing) {
    metrics_detail::check_same(pred, truth);
    const auto bp = boundary(pred), bt = boundary(truth);
    const auto dt = squared_distance_transform(bt, spacing);
    const auto dp = squared_distance_transform(bp, spacing);
    std::vector<double> out;
    for (std::size_t i = 0; i < bp.voxels.size(); ++i) {
        if (bp.voxels[i]) out.push_back(std::sqrt(dt[i]));
    }
    for (std::size_t i = 0; i < bt.voxels.size(); ++i) {
        if (bt.voxels[i]) out.push_back(std::sqrt(dp[i]));
    }
    return out;
}

/// 95th percentile (linear interpolation) of the pooled symmetric boundary
/// distances, in spacing units. 0 when both masks are empty,
/// kHd95EmptySentinel when exactly one is.
inline double hd95(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& truth, std::array<double, 3> spacing) {
    const auto o = metrics_detail::overlap(pred, truth);
    for (double s : spacing) {
        if (!(s > 0)) throw ValueError("spacing must be positive");
    }
    if (o.a == 0 && o.b == 0) return 0.0;
    if (o.a == 0 || o.b == 0) return kHd95EmptySentinel;
    auto d = surface_distances(pred, truth, spacing);
    std::sort(d.begin(), d.end());
    return percentile_sorted<double>(d, 95.0, PercentileRule::Linear);
}

enum class Region { ET, TC, WT };
inline constexpr std::array<Region, 3> kRegions{Region::ET, Region::TC, Region::WT};
inline const char* region_name(Region r) { return r == Region::ET ? "ET" : (r == Region::TC ? "TC" : "WT"); }

struct RegionMasks {
    Image<std::uint8_t> et, tc, wt;
    const Image<std::uint8_t>& operator[](Region r) const { return r == Region::ET ? et : (r == Region::TC ? tc : wt); }
};

inline Image<std::uint8_t> label_mask(const LabelMask& mask, int label) {
    Image<std::uint8_t> out(mask.dims, 0, mask.geometry);
    for (std::size_t i = 0; i < mask.voxels.size(); ++i) out.voxels[i] = mask.voxels[i] == label;
    return out;
}

/// ET = {3}, TC = {1, 3}, WT = {1, 2, 3}.
inline RegionMasks compose_regions(const LabelMask& mask) {
    RegionMasks r{Image<std::uint8_t>(mask.dims, 0, mask.geometry), Image<std::uint8_t>(mask.dims, 0, mask.geometry),
                  Image<std::uint8_t>(mask.dims, 0, mask.geometry)};
    for (std::size_t i = 0; i < mask.voxels.size(); ++i) {
        const auto v = mask.voxels[i];
        r.et.voxels[i] = v == kEt;
        r.tc.voxels[i] = v == kEt || v == kNetc;
        r.wt.voxels[i] = v != kBackground;
    }
    return r;
}

/// Lesion-wise Dice. Ground-truth lesions are 26-connected components; each
/// is dilated by one voxel and matched to every predicted component that
/// touches the dilated region. A lesion scores the Dice of the union of its
/// matches against itself (0 with no match); predicted components matched
/// to no lesion each contribute a 0. Returns the mean score, or 1 when both
/// masks are empty.
inline double lesion_wise_dice(const Image<std::uint8_t>& pred, const Image<std::uint8_t>& truth,
                               std::array<double, 3> /*spacing*/ = {1, 1, 1}) {
    metrics_detail::check_same(pred, truth);
    const auto gt = connected_components(truth);
    const auto pc = connected_components(pred);
    if (gt.count == 0 && pc.count == 0) return 1.0;
    const Dims3 d = truth.dims;
    std::vector<char> pred_matched(static_cast<std::size_t>(pc.count) + 1, 0);
    std::vector<std::int64_t> pred_size(static_cast<std::size_t>(pc.count) + 1, 0);
    for (auto l : pc.labels) pred_size[l]++;
    double total = 0;
    for (std::int32_t g = 1; g <= gt.count; ++g) {
        Image<std::uint8_t> lesion(d, 0);
        std::int64_t lesion_size = 0;
        for (std::size_t i = 0; i < gt.labels.size(); ++i) {
            if (gt.labels[i] == g) {
                lesion.voxels[i] = 1;
                ++lesion_size;
            }
        }
        const auto grown = dilate_cube(lesion);
        std::vector<char> hit(static_cast<std::size_t>(pc.count) + 1, 0);
        for (std::size_t i = 0; i < grown.voxels.size(); ++i) {
            if (grown.voxels[i] && pc.labels[i]) hit[pc.labels[i]] = 1;
        }
        std::int64_t union_size = 0, inter = 0;
        for (std::int32_t p = 1; p <= pc.count; ++p) {
            if (hit[p]) {
                union_size += pred_size[p];
                pred_matched[p] = 1;
            }
        }
        for (std::size_t i = 0; i < gt.labels.size(); ++i) {
            if (lesion.voxels[i] && pc.labels[i] && hit[pc.labels[i]]) ++inter;
        }
        total += 2.0 * static_cast<double>(inter) / static_cast<double>(union_size + lesion_size);
    }
    std::int64_t false_components = 0;
    for (std::int32_t p = 1; p <= pc.count; ++p) false_components += !pred_matched[p];
    return total / static_cast<double>(gt.count + false_components);
}

struct MetricsReport {
    std::string case_id;
    // indexed by label 1..3 (entry 0 unused)
    std::array<double, kNumClasses> label_dice{}, label_iou{}, label_hd95{};
    // indexed by Region
    std::array<double, 3> region_dice{}, region_hd95{}, region_lesion_dice{};
};

inline MetricsReport evaluate_case(const LabelMask& pred, const LabelMask& truth, std::array<double, 3> spacing,
                                   std::string case_id = {}) {
    if (!(pred.dims == truth.dims)) {
        throw ShapeError("prediction " + to_string(pred.dims) + " and truth " + to_string(truth.dims) + " differ");
    }
    MetricsReport r;
    r.case_id = std::move(case_id);
    for (int l = 1; l < kNumClasses; ++l) {
        const auto p = label_mask(pred, l), t = label_mask(truth, l);
        r.label_dice[l] = dice_score(p, t);
        r.label_iou[l] = iou_score(p, t);
        r.label_hd95[l] = hd95(p, t, spacing);
    }
    const auto rp = compose_regions(pred), rt = compose_regions(truth);
    for (std::size_t i = 0; i < kRegions.size(); ++i) {
        r.region_dice[i] = dice_score(rp[kRegions[i]], rt[kRegions[i]]);
        r.region_hd95[i] = hd95(rp[kRegions[i]], rt[kRegions[i]], spacing);
        r.region_lesion_dice[i] = lesion_wise_dice(rp[kRegions[i]], rt[kRegions[i]], spacing);
    }
    return r;
}

/// Column names of the flattened report, in CSV order.
inline std::vector<std::string> report_columns() {
    static const char* labels[] = {"", "NETC", "SNFH", "ET"};
    std::vector<std::string> cols;
    for (int l : {3, 1, 2}) {
        cols.push_back(std::string(labels[l]) + "_Dice");
        cols.push_back(std::string(labels[l]) + "_IoU");
        cols.push_back(std::string(labels[l]) + "_HD95");
    }
    for (auto r : kRegions) cols.push_back(std::string(region_name(r)) + "_LegacyDice");
    for (auto r : kRegions) cols.push_back(std::string(region_name(r)) + "_LesionDice");
    for (auto r : kRegions) cols.push_back(std::string(region_name(r)) + "_HD95");
    return cols;
}

inline std::vector<double> report_values(const MetricsReport& m) {
    std::vector<double> v;
    for (int l : {3, 1, 2}) {
        v.push_back(m.label_dice[l]);
        v.push_back(m.label_iou[l]);
        v.push_back(m.label_hd95[l]);
    }
    for (double x : m.region_dice) v.push_back(x);
    for (double x : m.region_lesion_dice) v.push_back(x);
    for (double x : m.region_hd95) v.push_back(x);
    return v;
}

/// Element-wise arithmetic mean of the reports, labelled "Mean".
inline std::vector<double> mean_values(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw ValueError("no reports to average");
    std::vector<double> acc(report_columns().size(), 0.0);
    for (const auto& r : reports) {
        const auto v = report_values(r);
        for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
    }
    for (auto& x : acc) x /= static_cast<double>(reports.size());
    return acc;
}

/// One row per case followed by a "Mean" row.
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsReport>& reports) {
    os << "Case ID";
    for (const auto& c : report_columns()) os << ',' << c;
    os << '\n';
    auto row = [&](const std::string& id, const std::vector<double>& v) {
        os << id;
        for (double x : v) os << ',' << x;
        os << '\n';
    };
    for (const auto& r : reports) row(r.case_id, report_values(r));
    row("Mean", mean_values(reports));
}

inline nlohmann::json metrics_json(const std::vector<MetricsReport>& reports) {
    const auto cols = report_columns();
    auto obj = [&](const std::vector<double>& v) {
        nlohmann::json j;
        for (std::size_t i = 0; i < cols.size(); ++i) j[cols[i]] = v[i];
        return j;
    };
    nlohmann::json out;
    out["cases"] = nlohmann::json::array();
    for (const auto& r : reports) {
        auto j = obj(report_values(r));
        j["case_id"] = r.case_id;
        out["cases"].push_back(std::move(j));
    }
    out["mean"] = obj(mean_values(reports));
    out["hd95_empty_sentinel"] = kHd95EmptySentinel;
    return out;
}

}  // namespace brainunet
