#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "metaview/errors.hpp"

namespace mv {

// Dense row-major tensor of 64-bit reals. Rank 0 (scalar), 1 and 2 are the
// shapes the library actually uses; the container is rank-agnostic.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

    static std::size_t volume(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = volume(s);
        return Tensor{std::move(s), std::vector<double>(n, 0.0)};
    }

    static Tensor scalar(double x) { return Tensor{{}, {x}}; }

    static Tensor vector(std::vector<double> d) {
        std::size_t n = d.size();
        return Tensor{{n}, std::move(d)};
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> d) {
        if (d.size() != r * c) throw DimensionError("matrix data size does not match " + std::to_string(r) + "x" + std::to_string(c));
        return Tensor{{r, c}, std::move(d)};
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 1 ? 1 : 1); }
    std::size_t cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

    double& operator()(std::size_t i) { return data[i]; }
    double operator()(std::size_t i) const { return data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        if (shape.empty()) return "[scalar]";
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline double relative_error(double a, double b) {
    double diff = std::fabs(a - b);
    double scale = std::fabs(a) > std::fabs(b) ? std::fabs(a) : std::fabs(b);
    return diff / (scale > 1.0 ? scale : 1.0);
}

}  // namespace mv
