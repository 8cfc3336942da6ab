#pragma once

#include "pianotimbre/audio_io.hpp"
#include "pianotimbre/error.hpp"
#include "pianotimbre/tensor.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <unistd.h>

namespace pt::test {

class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("pt_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline AudioClip sine(double hz, double amplitude, std::size_t n, int rate, double phase = 0.0)
{
    AudioClip c{std::vector<float>(n), rate};
    for (std::size_t i = 0; i < n; ++i)
        c.samples[i] =
            static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate + phase));
    return c;
}

template <typename T>
Tensor<T> random_tensor(const Dims& dims, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    Tensor<T> t(dims);
    for (auto& v : t.values())
        v = static_cast<T>(n(rng));
    return t;
}

inline ErrorCode code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return static_cast<ErrorCode>(0);
}

/// Worst relative error max|a-n| / max(|a|,|n|, floor) over all entries.
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-8)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

} // namespace pt::test
