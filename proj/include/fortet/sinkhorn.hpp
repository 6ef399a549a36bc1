#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/fortet_solver.hpp"
#include "fortet/hilbert.hpp"
#include "fortet/numeric.hpp"
#include "fortet/problem.hpp"

namespace fortet {

struct SinkhornOptions {
    double tol = 1e-10;
    std::size_t max_iter = 100000;
    /// Force log-domain updates; otherwise chosen from the kernel's dynamic range.
    bool force_log_domain = false;
    bool record_hilbert = false;
};

struct SinkhornStep {
    std::size_t k = 0;
    double change = 0.0; ///< max sup-log-change of u and v
};

/// Scalings of the IPF fixed point, as logarithms (-inf where the
/// corresponding marginal vanishes). Normalized so that max u = 1.
struct ScalingPair {
    GridPtr grid1;
    GridPtr grid2;
    std::vector<double> log_u;
    std::vector<double> log_v;
    std::size_t iterations = 0;
    double final_change = 0.0;
    bool log_domain = false;
    std::vector<SinkhornStep> trace;
    /// d_H(u_k, u_{k+1}) per iteration when recorded.
    std::vector<double> hilbert_steps;

    /// (phi, psi) = (u, v): u (G_w v) = omega1 is the first equation.
    [[nodiscard]] PotentialPair potentials() const { return {grid1, grid2, log_u, log_v}; }
};

/// True when the kernel spans more than 300 decades (or has exact zeros),
/// so linear updates would underflow.
inline bool sinkhorn_needs_log_domain(const KernelOperator& k) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : k.log_matrix().values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return !(lo > hi + std::log(1e-300));
}

namespace detail {

struct SinkhornUpdater {
    const KernelOperator& k;
    bool log_domain;
    std::vector<double> lin;   // g, rows x cols
    std::vector<double> lin_t; // g^T
    std::vector<double> w1, w2, lw1, lw2;

    SinkhornUpdater(const KernelOperator& kk, bool logd) : k(kk), log_domain(logd) {
        const auto gw1 = k.x_grid()->weights();
        const auto gw2 = k.y_grid()->weights();
        w1.assign(gw1.begin(), gw1.end());
        w2.assign(gw2.begin(), gw2.end());
        const auto l1 = k.x_grid()->log_weights();
        const auto l2 = k.y_grid()->log_weights();
        lw1.assign(l1.begin(), l1.end());
        lw2.assign(l2.begin(), l2.end());
        if (!log_domain) {
            lin.resize(k.log_matrix().values.size());
            lin_t.resize(lin.size());
            for (std::size_t e = 0; e < lin.size(); ++e) {
                lin[e] = std::exp(k.log_matrix().values[e]);
                lin_t[e] = std::exp(k.log_matrix().transposed[e]);
            }
        }
    }

    /// out_r = log sum_c M[r,c] w_c exp(lx_c) with M = g (forward) or g^T.
    void apply(bool forward, std::span<const double> lx, std::span<double> out) const {
        const std::size_t rows = forward ? k.rows() : k.cols();
        const std::size_t cols = forward ? k.cols() : k.rows();
        const auto& lw = forward ? lw2 : lw1;
        std::vector<double> b(cols);
        for (std::size_t c = 0; c < cols; ++c) b[c] = lw[c] + lx[c];
        if (log_domain) {
            const auto& mat = forward ? k.log_matrix().values : k.log_matrix().transposed;
            parallel_for(rows, cols, [&](std::size_t r) { log_matvec_row(mat, cols, b, r, out[r]); });
            return;
        }
        const auto& mat = forward ? lin : lin_t;
        std::vector<double> x(cols);
        for (std::size_t c = 0; c < cols; ++c) x[c] = std::exp(b[c]);
        parallel_for(rows, cols, [&](std::size_t r) {
            CompensatedSum s;
            const double* row = mat.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) s.add(row[c] * x[c]);
            out[r] = safe_log(s.value());
        });
    }
};

inline double sup_log_change(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::isfinite(a[i]) && std::isfinite(b[i])) s = std::max(s, std::abs(a[i] - b[i]));
    return s;
}

} // namespace detail

/// Alternating scaling u <- omega1 / (G_w v), v <- omega2 / (G_w^T u).
inline ScalingPair run_sinkhorn(const KernelOperator& k, const MarginalPair& m, const SinkhornOptions& opts = {}) {
    require_compatible(k, m);
    if (!(opts.tol > 0.0)) throw invalid_input("tolerance must be positive");
    const bool logd = opts.force_log_domain || sinkhorn_needs_log_domain(k);
    const detail::SinkhornUpdater up(k, logd);
    const std::vector<double> lo1 = m.omega1.log_values();
    const std::vector<double> lo2 = m.omega2.log_values();

    ScalingPair sp;
    sp.grid1 = k.x_grid();
    sp.grid2 = k.y_grid();
    sp.log_domain = logd;
    std::vector<double> lu(k.rows(), 0.0), lv(k.cols(), 0.0), nu(k.rows()), nv(k.cols()), tmp1(k.rows()), tmp2(k.cols());
    for (std::size_t j = 0; j < k.cols(); ++j) lv[j] = lo2[j] == neg_inf ? neg_inf : 0.0;
    bool first = true;
    for (std::size_t it = 1; it <= opts.max_iter; ++it) {
        up.apply(true, lv, tmp1);
        for (std::size_t i = 0; i < k.rows(); ++i) {
            if (lo1[i] == neg_inf) {
                nu[i] = neg_inf;
                continue;
            }
            if (tmp1[i] == neg_inf)
                throw hypothesis_failure("sinkhorn: G_w v vanishes at x-node " + std::to_string(i) +
                                         " where omega1 > 0");
            nu[i] = lo1[i] - tmp1[i];
        }
        up.apply(false, nu, tmp2);
        for (std::size_t j = 0; j < k.cols(); ++j) {
            if (lo2[j] == neg_inf) {
                nv[j] = neg_inf;
                continue;
            }
            if (tmp2[j] == neg_inf)
                throw hypothesis_failure("sinkhorn: G_w^T u vanishes at y-node " + std::to_string(j) +
                                         " where omega2 > 0");
            nv[j] = lo2[j] - tmp2[j];
        }
        const double change = first ? std::numeric_limits<double>::infinity()
                                    : std::max(detail::sup_log_change(nu, lu), detail::sup_log_change(nv, lv));
        if (opts.record_hilbert && !first) {
            std::vector<double> a, b;
            for (std::size_t i = 0; i < k.rows(); ++i)
                if (lo1[i] != neg_inf) {
                    a.push_back(nu[i]);
                    b.push_back(lu[i]);
                }
            sp.hilbert_steps.push_back(a.empty() ? 0.0 : hilbert_distance_log(a, b));
        }
        lu.swap(nu);
        lv.swap(nv);
        sp.iterations = it;
        sp.final_change = change;
        sp.trace.push_back({it, change});
        first = false;
        if (change < opts.tol) break;
        if (it == opts.max_iter)
            throw numerical_failure("sinkhorn: no convergence after " + std::to_string(it) +
                                    " iterations (last change " + std::to_string(change) + ")");
    }
    double mx = neg_inf;
    for (double v : lu) mx = std::max(mx, v);
    for (double& v : lu) v -= mx;
    for (double& v : lv) v += mx;
    sp.log_u = std::move(lu);
    sp.log_v = std::move(lv);
    return sp;
}

/// Per-iteration Hilbert distances d_H(u_k, u_{k+1}).
inline std::vector<double> sinkhorn_trace_hilbert(const KernelOperator& k, const MarginalPair& m,
                                                  SinkhornOptions opts = {}) {
    opts.record_hilbert = true;
    return run_sinkhorn(k, m, opts).hilbert_steps;
}

} // namespace fortet
