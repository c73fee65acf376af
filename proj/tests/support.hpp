#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "sswl/dose_sim.hpp"
#include "sswl/feature_extractor.hpp"
#include "sswl/rvae.hpp"

namespace sswl::testing {

/// Directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("sswl-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

template <class T>
Tensor<T> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(n, c, h, w);
    for (auto& v : t.values()) v = static_cast<T>(u(rng));
    return t;
}

/// Relative difference with a floor on the denominator.
inline double rel_diff(long double a, long double b, long double floor = 1e-8L) {
    return double(std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor}));
}

}  // namespace sswl::testing
