#pragma once

#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace kdclip {

// Dense row-major matrix of doubles. The only tensor type in the project.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;
    std::string shape_str() const;  // e.g. "3x4"

    void fill(double v) { data_.assign(data_.size(), v); }

    bool operator==(const Matrix& o) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Trainable matrix with paired gradient accumulator. Gradients accumulate;
// the owning loop zeroes them. A frozen tensor is skipped by both backward
// accumulation and optimizer steps.
struct ParamTensor {
    Matrix value;
    Matrix grad;
    bool frozen = false;
    std::string name;

    ParamTensor() = default;
    ParamTensor(Matrix v, std::string n)
        : value(std::move(v)), grad(value.rows(), value.cols()), name(std::move(n)) {}

    void zero_grad() { grad.fill(0.0); }
};

// FNV-1a over the raw double bytes; bit-exact identity check for params.
std::uint64_t checksum(const Matrix& m);

// Binary matrix block: magic "KDM1", u32 LE rows, u32 LE cols, then
// rows*cols little-endian f64 values, row-major. The stream forms exist
// so several blocks can share one file (checkpoints).
void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

}  // namespace kdclip
