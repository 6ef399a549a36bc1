#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/numeric.hpp"

namespace fortet {

/// Hilbert projective distance on the positive orthant:
/// log(max_i x_i/y_i) - log(min_i x_i/y_i).
inline double hilbert_distance(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw invalid_input("hilbert_distance: length mismatch");
    if (x.empty()) throw invalid_input("hilbert_distance: empty rays");
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(x[i]) || !std::isfinite(y[i]))
            throw invalid_input("hilbert_distance: entry " + std::to_string(i) + " is not strictly positive");
        const double r = std::log(x[i]) - std::log(y[i]);
        hi = std::max(hi, r);
        lo = std::min(lo, r);
    }
    return hi - lo;
}

/// Same distance for rays given by their logarithms.
inline double hilbert_distance_log(std::span<const double> lx, std::span<const double> ly) {
    if (lx.size() != ly.size()) throw invalid_input("hilbert_distance_log: length mismatch");
    if (lx.empty()) throw invalid_input("hilbert_distance_log: empty rays");
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lx.size(); ++i) {
        if (!std::isfinite(lx[i]) || !std::isfinite(ly[i]))
            throw invalid_input("hilbert_distance_log: entry " + std::to_string(i) + " is not a finite log");
        const double r = lx[i] - ly[i];
        hi = std::max(hi, r);
        lo = std::min(lo, r);
    }
    return hi - lo;
}

struct ProjectiveDiameter {
    double value = 0.0;
    bool infinite = false;
    /// False when only a subset of column pairs was examined (lower bound).
    bool exact = true;
};

/// Entries at or below this are treated as zero (boundary of the cone).
inline constexpr double diameter_zero_threshold = 1e-280;

/// Diameter of the image cone of a positive map given as a log-matrix
/// (rows x cols, row-major): the largest Hilbert distance between two
/// columns. Exact up to max_exact_cols columns, sampled beyond.
inline ProjectiveDiameter projective_diameter_log(std::size_t rows, std::size_t cols, std::span<const double> logs,
                                                  std::size_t max_exact_cols = 1024) {
    if (logs.size() != rows * cols) throw invalid_input("projective_diameter: shape mismatch");
    ProjectiveDiameter pd;
    const double zero_log = std::log(diameter_zero_threshold);
    for (double v : logs)
        if (!(v > zero_log)) {
            pd.infinite = true;
            pd.value = std::numeric_limits<double>::infinity();
            return pd;
        }
    std::vector<std::size_t> picked;
    if (cols <= max_exact_cols) {
        for (std::size_t j = 0; j < cols; ++j) picked.push_back(j);
    } else {
        pd.exact = false;
        for (std::size_t s = 0; s < max_exact_cols; ++s) picked.push_back(s * (cols - 1) / (max_exact_cols - 1));
    }
    // column-major copy so column differences stream
    std::vector<double> colmaj(rows * picked.size());
    for (std::size_t c = 0; c < picked.size(); ++c)
        for (std::size_t i = 0; i < rows; ++i) colmaj[c * rows + i] = logs[i * cols + picked[c]];
    double best = 0.0;
    for (std::size_t a = 0; a < picked.size(); ++a) {
        const double* ca = colmaj.data() + a * rows;
        for (std::size_t b = a + 1; b < picked.size(); ++b) {
            const double* cb = colmaj.data() + b * rows;
            double hi = -std::numeric_limits<double>::infinity();
            double lo = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < rows; ++i) {
                const double d = ca[i] - cb[i];
                hi = std::max(hi, d);
                lo = std::min(lo, d);
            }
            best = std::max(best, hi - lo);
        }
    }
    pd.value = best;
    return pd;
}

inline ProjectiveDiameter projective_diameter(const Eigen::MatrixXd& m) {
    const auto rows = static_cast<std::size_t>(m.rows());
    const auto cols = static_cast<std::size_t>(m.cols());
    std::vector<double> logs(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            logs[i * cols + j] = v > 0.0 ? std::log(v) : neg_inf;
        }
    return projective_diameter_log(rows, cols, logs);
}

struct Contraction {
    double ratio = 1.0;
    bool guaranteed = false; ///< false when the diameter is infinite
};

inline Contraction birkhoff_contraction(const ProjectiveDiameter& pd) {
    if (pd.infinite) return {1.0, false};
    return {std::tanh(pd.value / 4.0), true};
}

inline Contraction birkhoff_contraction(const Eigen::MatrixXd& m) { return birkhoff_contraction(projective_diameter(m)); }

struct ContractionCheck {
    bool passed = true;
    double worst_excess = -std::numeric_limits<double>::infinity(); ///< max of d(Fx,Fy) - p d(x,y)
    std::optional<std::size_t> witness;                              ///< first failing sample pair
};

/// Checks d_H(F x, F y) <= p d_H(x, y) + slack over sample pairs of
/// positive vectors (linear coordinates).
template <class Map>
ContractionCheck homogeneous_map_contraction_check(Map&& map, double p,
                                                   const std::vector<std::pair<std::vector<double>, std::vector<double>>>& samples,
                                                   double slack = 1e-10) {
    ContractionCheck out;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& [x, y] = samples[s];
        const std::vector<double> fx = map(x);
        const std::vector<double> fy = map(y);
        const double excess = hilbert_distance(fx, fy) - p * hilbert_distance(x, y);
        out.worst_excess = std::max(out.worst_excess, excess);
        if (excess > slack && out.passed) {
            out.passed = false;
            out.witness = s;
        }
    }
    return out;
}

/// Log-coordinate variant: samples and the map work on logarithms.
template <class LogMap>
ContractionCheck homogeneous_map_contraction_check_log(LogMap&& map, double p,
                                                       const std::vector<std::pair<std::vector<double>, std::vector<double>>>& samples,
                                                       double slack = 1e-10) {
    ContractionCheck out;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& [lx, ly] = samples[s];
        const std::vector<double> fx = map(lx);
        const std::vector<double> fy = map(ly);
        const double excess = hilbert_distance_log(fx, fy) - p * hilbert_distance_log(lx, ly);
        out.worst_excess = std::max(out.worst_excess, excess);
        if (excess > slack && out.passed) {
            out.passed = false;
            out.witness = s;
        }
    }
    return out;
}

} // namespace fortet
