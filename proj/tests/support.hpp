#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "brainunet/volume.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Fresh, empty directory under the system temp dir. Removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("brainunet_" + tag + "_" + std::to_string(rd()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline brainunet::Image<std::uint8_t> random_binary(std::mt19937_64& rng, brainunet::Dims3 d, double p) {
    brainunet::Image<std::uint8_t> m(d);
    std::bernoulli_distribution b(p);
    for (auto& v : m.voxels) v = b(rng) ? 1 : 0;
    return m;
}

inline brainunet::LabelMask random_labels(std::mt19937_64& rng, brainunet::Dims3 d, int classes = 4) {
    brainunet::LabelMask m(d);
    std::uniform_int_distribution<int> u(0, classes - 1);
    for (auto& v : m.voxels) v = static_cast<std::uint8_t>(u(rng));
    return m;
}

inline brainunet::MultiModalVolume random_volume(std::mt19937_64& rng, brainunet::Dims3 d, float lo = 0.0f,
                                                 float hi = 1.0f) {
    brainunet::MultiModalVolume v{brainunet::Tensor<float>(3, d), {}};
    std::uniform_real_distribution<float> u(lo, hi);
    for (auto& x : v.data.storage()) x = u(rng);
    return v;
}

}  // namespace testing_support
