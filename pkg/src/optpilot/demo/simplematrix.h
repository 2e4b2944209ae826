#pragma once

#include <cstddef>
#include <vector>

struct SimpleMatrix {
    using value_type = long double; // element type

    SimpleMatrix(int rows, int cols)
        : rows_(rows), cols_(cols), data_(std::size_t(rows) * std::size_t(cols)) {}

    value_type operator()(int row, int col) const { return data_[index(row, col)]; }
    value_type& operator()(int row, int col) { return data_[index(row, col)]; }

    int rows() const { return rows_; }
    int columns() const { return cols_; }

  private:
    std::size_t index(int row, int col) const {
        return std::size_t(row) * std::size_t(cols_) + std::size_t(col);
    }

    int rows_;
    int cols_;
    std::vector<value_type> data_;
};

SimpleMatrix operator*(const SimpleMatrix& lhs, const SimpleMatrix& rhs);
