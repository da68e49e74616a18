#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "fairstitch/errors.hpp"

namespace fairstitch {

// Dense row-major 2-D array of 64-bit reals. The only broadcasting the
// library performs is bias-over-rows inside affine().
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    Tensor(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    Tensor(std::size_t r, std::size_t c, std::vector<double> values)
        : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != rows * cols) {
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(rows, cols));
        }
    }

    // Nested-list constructor for small literals in tests and fixtures.
    Tensor(std::initializer_list<std::initializer_list<double>> m) {
        rows = m.size();
        cols = rows == 0 ? 0 : m.begin()->size();
        data.reserve(rows * cols);
        for (const auto& row : m) {
            if (row.size() != cols) {
                throw ShapeError("tensor: ragged initializer rows");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    static Tensor column(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor(n, 1, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor t(n, n, 0.0);
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape() const { return shape_str(rows, cols); }

    static std::string shape_str(std::size_t r, std::size_t c) {
        return std::to_string(r) + "x" + std::to_string(c);
    }
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        // Bit-level comparison: distinguishes -0.0/0.0 and treats NaN != NaN.
        if (a.data[i] != b.data[i]) return false;
        if (std::signbit(a.data[i]) != std::signbit(b.data[i])) return false;
    }
    return true;
}

} // namespace fairstitch
