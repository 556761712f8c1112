#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "beetlescan/nn.hpp"
#include "beetlescan/random.hpp"
#include "beetlescan/spectra.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir
{
  public:
    explicit TempDir(const std::string& tag)
    {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("beetlescan-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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

inline std::vector<char> slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline beetlescan::nn::Matrix random_matrix(std::size_t rows, std::size_t cols, beetlescan::Rng& rng)
{
    beetlescan::nn::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = beetlescan::standard_normal(rng);
    return m;
}

inline std::vector<std::vector<double>> rows_of(const beetlescan::nn::Matrix& m)
{
    std::vector<std::vector<double>> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        out.emplace_back(m.row(i).begin(), m.row(i).end());
    return out;
}

inline beetlescan::AbundanceVector random_abundance(beetlescan::Rng& rng)
{
    // Uniform on the simplex via normalized exponentials.
    double e[3];
    double s = 0.0;
    for (double& v : e)
    {
        v = -std::log(1.0 - beetlescan::uniform(rng, 0.0, 1.0));
        s += v;
    }
    return beetlescan::AbundanceVector::renormalized(e[0] / s, e[1] / s, e[2] / s);
}

inline std::vector<beetlescan::Spectrum> random_spectra(std::size_t count, std::size_t bands, beetlescan::Rng& rng)
{
    std::vector<beetlescan::Spectrum> out(count, beetlescan::Spectrum(bands));
    for (auto& s : out)
        for (auto& v : s)
            v = beetlescan::uniform(rng, 0.0, 1.0);
    return out;
}

} // namespace testing_support
