#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "feddisc/errors.hpp"

namespace feddisc {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double squared_distance(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

inline bool all_finite(const Vec& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

// Kahan-compensated per-coordinate mean; keeps prototype extraction and
// domain averaging insensitive to input order well below 1e-9.
class MeanAccumulator {
public:
    explicit MeanAccumulator(std::size_t dim) : sum_(dim, 0.0), comp_(dim, 0.0) {}

    void add(const Vec& v) {
        if (v.size() != sum_.size()) throw DimensionMismatch("MeanAccumulator::add", sum_.size(), v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double y = v[i] - comp_[i];
            double t = sum_[i] + y;
            comp_[i] = (t - sum_[i]) - y;
            sum_[i] = t;
        }
        ++count_;
    }

    std::size_t count() const { return count_; }

    Vec mean() const {
        Vec m(sum_.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = sum_[i] / static_cast<double>(count_);
        return m;
    }

private:
    Vec sum_;
    Vec comp_;
    std::size_t count_ = 0;
};

// Dense row-major matrix, just enough for the frozen encoder and the MLP.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    Vec multiply(const Vec& x) const {
        if (x.size() != cols) throw DimensionMismatch("Matrix::multiply", cols, x.size());
        Vec y(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = a.data() + r * cols;
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
            y[r] = s;
        }
        return y;
    }

    // y += A^T g, used in backprop
    void multiply_transpose_into(const Vec& g, Vec& y) const {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* row = a.data() + r * cols;
            double gr = g[r];
            for (std::size_t c = 0; c < cols; ++c) y[c] += row[c] * gr;
        }
    }
};

}  // namespace feddisc
