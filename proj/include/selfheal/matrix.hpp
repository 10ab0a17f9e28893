#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace selfheal::numerics {

/// Minimal dense row-major double matrix; sized for the small (d <= ~50)
/// problems this pipeline solves.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    Matrix transpose() const;
    Matrix hadamard(const Matrix& other) const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }
    Matrix operator*(const Matrix& other) const;  // matrix product

    double trace() const;
    double frobenius_norm() const;
    double max_abs() const;
    /// Maximum absolute row sum (induced infinity norm).
    double inf_norm() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// e^M by scaling-and-squaring over a truncated Taylor series: scale M so
/// its norm is <= 0.5, sum terms until they vanish at double precision,
/// square back up.
Matrix matrix_exponential(const Matrix& m);

}  // namespace selfheal::numerics
