#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace estoisep {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. Small helper, not a linear algebra
/// library; everything the toolkit needs is matvec-shaped.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) {
        assert(r < rows && c < cols);
        return a[r * cols + c];
    }
    double operator()(std::size_t r, std::size_t c) const {
        assert(r < rows && c < cols);
        return a[r * cols + c];
    }

    std::size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(a.begin(), a.end(), v); }

    bool all_finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

/// y = M x  (y resized)
inline void matvec(const Mat& m, const double* x, double* y) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = &m.a[r * m.cols];
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

/// y += M^T x
inline void matvec_transpose_add(const Mat& m, const double* x, double* y) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* row = &m.a[r * m.cols];
        const double xr = x[r];
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
    }
}

/// M += x y^T (outer product accumulate)
inline void outer_add(Mat& m, const double* x, const double* y) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* row = &m.a[r * m.cols];
        const double xr = x[r];
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += xr * y[c];
    }
}

inline double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

}  // namespace estoisep
