#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace vgold {

/// Dense rectangular weight matrix, row-major.
class WeightMatrix {
public:
    WeightMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] std::size_t cols() const { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    [[nodiscard]] double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

namespace detail {

// Shortest augmenting path Hungarian method with potentials, O(n^2 m), n <= m.
// Returns, for every row, the column assigned to it.
template <class CostFn>
std::vector<int> hungarian_min(std::size_t n, std::size_t m, CostFn cost) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
    return row_to_col;
}

} // namespace detail

/// Maximum-weight one-to-one assignment. Every row of the smaller side is paired;
/// the returned vector maps each row to a column, or -1 when cols < rows left it out.
inline std::vector<int> max_weight_assignment(const WeightMatrix& w) {
    const std::size_t r = w.rows(), c = w.cols();
    if (r == 0 || c == 0) return std::vector<int>(r, -1);
    if (r <= c) return detail::hungarian_min(r, c, [&](std::size_t i, std::size_t j) { return -w(i, j); });
    auto col_to_row = detail::hungarian_min(c, r, [&](std::size_t i, std::size_t j) { return -w(j, i); });
    std::vector<int> row_to_col(r, -1);
    for (std::size_t j = 0; j < c; ++j)
        if (col_to_row[j] >= 0) row_to_col[static_cast<std::size_t>(col_to_row[j])] = static_cast<int>(j);
    return row_to_col;
}

} // namespace vgold
