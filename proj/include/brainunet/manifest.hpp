#pragma once
// Dataset manifest: a JSON document listing cases and their per-modality files.
//
//   {
//     "cases": [
//       {"case_id": "BraTS-SSA-00126-000",
//        "flair": "00126/flair.nii.gz", "t1ce": "00126/t1ce.nii.gz", "t2w": "00126/t2w.nii.gz",
//        "mask": "00126/seg.nii.gz",            (optional)
//        "split": "train" | "val" | "test",     (optional, default "train")
//        "fold": 3,                             (optional, -1 = unassigned)
//        "preprocessed": false}                 (optional)
//     ]
//   }
//
// Relative paths are resolved against the manifest's directory.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brainunet/error.hpp"
#include "brainunet/nifti.hpp"
#include "brainunet/volume.hpp"

namespace brainunet {

struct CaseRecord {
    std::string case_id;
    std::filesystem::path flair;
    std::filesystem::path t1ce;
    std::filesystem::path t2w;
    std::optional<std::filesystem::path> mask;
    std::string split = "train";
    int fold = -1;
    bool preprocessed = false;
};

struct DatasetManifest {
    std::vector<CaseRecord> cases;

    std::vector<CaseRecord> with_split(const std::string& split) const {
        std::vector<CaseRecord> out;
        for (const auto& c : cases) {
            if (c.split == split) out.push_back(c);
        }
        return out;
    }
};

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    DatasetManifest m;
    std::set<std::string> seen;
    try {
        for (const auto& c : doc.at("cases")) {
            CaseRecord r;
            r.case_id = c.at("case_id").get<std::string>();
            if (!seen.insert(r.case_id).second) {
                throw FormatError("manifest " + path.string() + ": duplicate case_id '" + r.case_id + "'");
            }
            r.flair = resolve(c.at("flair").get<std::string>());
            r.t1ce = resolve(c.at("t1ce").get<std::string>());
            r.t2w = resolve(c.at("t2w").get<std::string>());
            if (c.contains("mask") && !c["mask"].is_null()) r.mask = resolve(c["mask"].get<std::string>());
            r.split = c.value("split", std::string("train"));
            r.fold = c.value("fold", -1);
            r.preprocessed = c.value("preprocessed", false);
            m.cases.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

/// Writes paths relative to the manifest directory when they live below it.
inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
    auto rel = [&](const std::filesystem::path& p) {
        auto r = p.lexically_relative(base);
        return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
    };
    nlohmann::json doc;
    doc["cases"] = nlohmann::json::array();
    for (const auto& c : m.cases) {
        nlohmann::json j{{"case_id", c.case_id}, {"flair", rel(c.flair)}, {"t1ce", rel(c.t1ce)},
                         {"t2w", rel(c.t2w)},   {"split", c.split},     {"fold", c.fold}};
        if (c.mask) j["mask"] = rel(*c.mask);
        if (c.preprocessed) j["preprocessed"] = true;
        doc["cases"].push_back(std::move(j));
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << doc.dump(2) << "\n";
}

/// Loads and stacks the three modalities of a case.
inline MultiModalVolume load_case_volume(const CaseRecord& c) {
    try {
        return stack_modalities(load_volume(c.flair), load_volume(c.t1ce), load_volume(c.t2w));
    } catch (const ShapeError& e) {
        throw ShapeError("case " + c.case_id + ": " + e.what());
    }
}

}  // namespace brainunet
