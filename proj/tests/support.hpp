#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "idkl/gradcheck.hpp"
#include "idkl/tensor.hpp"

namespace idkl::test {

inline Tensor randn(Shape shape, std::uint64_t seed, double scale = 1.0, double offset = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) v = offset + scale * n(rng);
    return Tensor(std::move(shape), std::move(d));
}

inline Tensor uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) v = u(rng);
    return Tensor(std::move(shape), std::move(d));
}

inline Tensor with_entry(const Tensor& t, std::size_t i, double value) {
    std::vector<double> d = t.vec();
    d[i] = value;
    return Tensor(t.shape(), std::move(d));
}

// Central differences of a scalar function of one tensor.
template <typename F>
std::vector<double> numeric_grad(F&& f, const Tensor& x, double h = 1e-5) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double plus = f(with_entry(x, i, x[i] + h)).item();
        const double minus = f(with_entry(x, i, x[i] - h)).item();
        g[i] = (plus - minus) / (2.0 * h);
    }
    return g;
}

template <typename F>
Tensor analytic_grad(F&& f, const Tensor& x) {
    Tape tape;
    const Tensor w = tape.watch(x);
    return tape.backward(f(w)).grad(w);
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, gradcheck::relative_error(a[i], b[i]));
    return worst;
}

template <typename F>
double grad_error(F&& f, const Tensor& x, double h = 1e-5) {
    const Tensor a = analytic_grad(f, x);
    const std::vector<double> n = numeric_grad(f, x, h);
    return max_rel_err(a.data(), n);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("idkl_" + tag + "_" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

 private:
    std::filesystem::path path_;
};

}  // namespace idkl::test
