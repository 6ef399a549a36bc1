#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace fortet {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

/// Pairwise summation in a fixed order; the result depends only on the
/// sequence, never on thread count.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t block = 32;
    if (xs.size() <= block) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    [[nodiscard]] double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// exp(x) underflows to a subnormal or zero below this shift; such terms
/// cannot change a sum whose largest term is 1.
inline constexpr double lse_cutoff = -745.0;

/// log(sum_i exp(terms_i)); -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> terms) {
    double m = neg_inf;
    for (double t : terms) m = std::max(m, t);
    if (m == neg_inf) return neg_inf;
    CompensatedSum s;
    for (double t : terms) {
        const double d = t - m;
        if (d > lse_cutoff) s.add(std::exp(d));
    }
    return m + std::log(s.value());
}

/// Row-wise log-sum-exp of a row-major log-matrix against a log-vector:
/// out_i = log sum_j exp(mat_ij + vec_j).
inline void log_matvec_row(std::span<const double> mat, std::size_t cols,
                           std::span<const double> vec, std::size_t row,
                           double& out) {
    const double* r = mat.data() + row * cols;
    double m = neg_inf;
    for (std::size_t j = 0; j < cols; ++j) m = std::max(m, r[j] + vec[j]);
    if (m == neg_inf) {
        out = neg_inf;
        return;
    }
    CompensatedSum s;
    for (std::size_t j = 0; j < cols; ++j) {
        const double d = r[j] + vec[j] - m;
        if (d > lse_cutoff) s.add(std::exp(d));
    }
    out = m + std::log(s.value());
}

/// Worker count for internal loops: FORTET_THREADS caps it, default is the
/// hardware concurrency.
inline unsigned worker_count() {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("FORTET_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(v));
    }
    return hw;
}

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker,
/// so per-index results are identical for every thread count.
template <class Body>
void parallel_for(std::size_t n, std::size_t work_per_index, Body&& body) {
    const unsigned workers = worker_count();
    if (workers <= 1 || n < 2 || n * work_per_index < (1u << 16)) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t chunks = std::min<std::size_t>(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(chunks - 1);
    auto run = [&](std::size_t c) {
        const std::size_t lo = n * c / chunks;
        const std::size_t hi = n * (c + 1) / chunks;
        for (std::size_t i = lo; i < hi; ++i) body(i);
    };
    for (std::size_t c = 1; c < chunks; ++c) pool.emplace_back(run, c);
    run(0);
    for (auto& t : pool) t.join();
}

/// Dense row-major log-matrix with its transpose kept alongside, so both
/// row and column reductions walk contiguous memory.
struct LogMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;     // rows x cols
    std::vector<double> transposed; // cols x rows

    LogMatrix() = default;
    LogMatrix(std::size_t r, std::size_t c, std::vector<double> v)
        : rows(r), cols(c), values(std::move(v)), transposed(r * c) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) transposed[j * r + i] = values[i * c + j];
    }

    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    /// out_i = log sum_j exp(M_ij + v_j)
    void row_reduce(std::span<const double> v, std::span<double> out) const {
        parallel_for(rows, cols, [&](std::size_t i) { log_matvec_row(values, cols, v, i, out[i]); });
    }
    /// out_j = log sum_i exp(M_ij + v_i)
    void col_reduce(std::span<const double> v, std::span<double> out) const {
        parallel_for(cols, rows, [&](std::size_t j) { log_matvec_row(transposed, rows, v, j, out[j]); });
    }
};

/// Safe log of a nonnegative value (0 -> -inf).
inline double safe_log(double x) { return x > 0.0 ? std::log(x) : neg_inf; }

inline double median(std::vector<double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t mid = xs.size() / 2;
    std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
    double hi = xs[mid];
    if (xs.size() % 2 == 1) return hi;
    const double lo = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

} // namespace fortet
