#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/fortet_solver.hpp"
#include "fortet/numeric.hpp"
#include "fortet/problem.hpp"

namespace fortet {

/// Joint density pi(x_i, y_j) on the product grid (row-major), with the
/// sup-norm deviations of its weighted marginals.
struct Coupling {
    GridPtr grid1;
    GridPtr grid2;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    double row_marginal_resid = 0.0;
    double col_marginal_resid = 0.0;
    double total_mass = 0.0;

    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    /// Wraps a given matrix and measures it against the marginals.
    static Coupling from_matrix(GridPtr g1, GridPtr g2, std::vector<double> v, const MarginalPair& m) {
        Coupling c;
        c.rows = g1->size();
        c.cols = g2->size();
        if (v.size() != c.rows * c.cols) throw invalid_input("coupling matrix has the wrong shape");
        for (std::size_t e = 0; e < v.size(); ++e)
            if (!std::isfinite(v[e]) || v[e] < 0.0)
                throw invalid_input("coupling entry " + std::to_string(e) + " is negative or non-finite");
        c.grid1 = std::move(g1);
        c.grid2 = std::move(g2);
        c.values = std::move(v);
        c.measure(m);
        return c;
    }

    void measure(const MarginalPair& m) {
        const auto w1 = grid1->weights();
        const auto w2 = grid2->weights();
        std::vector<CompensatedSum> colsum(cols);
        CompensatedSum total;
        row_marginal_resid = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            CompensatedSum r;
            for (std::size_t j = 0; j < cols; ++j) {
                r.add(w2[j] * values[i * cols + j]);
                colsum[j].add(w1[i] * values[i * cols + j]);
            }
            row_marginal_resid = std::max(row_marginal_resid, std::abs(r.value() - m.omega1.values[i]));
            total.add(w1[i] * r.value());
        }
        col_marginal_resid = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
            col_marginal_resid = std::max(col_marginal_resid, std::abs(colsum[j].value() - m.omega2.values[j]));
        total_mass = total.value();
    }
};

/// pi(x, y) = phi(x) g(x, y) psi(y).
inline Coupling build_coupling(const PotentialPair& p, const KernelOperator& k, const MarginalPair& m) {
    require_compatible(k, m);
    if (p.log_phi.size() != k.rows() || p.log_psi.size() != k.cols())
        throw invalid_input("build_coupling: potentials do not match the kernel shape");
    std::vector<double> v(k.rows() * k.cols());
    for (std::size_t i = 0; i < k.rows(); ++i)
        for (std::size_t j = 0; j < k.cols(); ++j) {
            const double l = p.log_phi[i] + k.log_value(i, j) + p.log_psi[j];
            v[i * k.cols() + j] = std::isnan(l) ? 0.0 : std::exp(l);
        }
    return Coupling::from_matrix(k.x_grid(), k.y_grid(), std::move(v), m);
}

struct KLValue {
    double value = 0.0;
    bool infinite = false;
};

/// Relative entropy of pi with respect to the prior coupling omega1(x) g(x, y).
inline KLValue kl_objective(const Coupling& pi, const KernelOperator& k, const MarginalPair& m) {
    require_compatible(k, m);
    const auto lw1 = k.x_grid()->log_weights();
    const auto lw2 = k.y_grid()->log_weights();
    CompensatedSum s;
    for (std::size_t i = 0; i < pi.rows; ++i) {
        const double lo1 = m.omega1.log_value(i);
        for (std::size_t j = 0; j < pi.cols; ++j) {
            const double p = pi.at(i, j);
            if (p == 0.0) continue;
            const double lprior = lo1 + k.log_value(i, j);
            if (lprior == neg_inf) return {std::numeric_limits<double>::infinity(), true};
            s.add(std::exp(lw1[i] + lw2[j]) * p * (std::log(p) - lprior));
        }
    }
    return {s.value(), false};
}

struct CostDecomposition {
    double transport_term = 0.0; ///< sum w w |x - y|^2 / 2 pi
    double entropy_term = 0.0;   ///< sum w w pi log pi
    double total = 0.0;          ///< transport + epsilon * entropy
};

inline CostDecomposition entropic_cost_decomposition(const Coupling& pi, double epsilon) {
    const auto w1 = pi.grid1->weights();
    const auto w2 = pi.grid2->weights();
    const int d = pi.grid1->dim();
    if (pi.grid2->dim() != d) throw invalid_input("coupling grids differ in dimension");
    CompensatedSum tr, en;
    for (std::size_t i = 0; i < pi.rows; ++i) {
        const auto x = pi.grid1->point(i);
        for (std::size_t j = 0; j < pi.cols; ++j) {
            const double p = pi.at(i, j);
            if (p == 0.0) continue;
            const auto y = pi.grid2->point(j);
            double d2 = 0.0;
            for (int a = 0; a < d; ++a) {
                const double diff = x[static_cast<std::size_t>(a)] - y[static_cast<std::size_t>(a)];
                d2 += diff * diff;
            }
            const double w = w1[i] * w2[j];
            tr.add(w * 0.5 * d2 * p);
            en.add(w * p * std::log(p));
        }
    }
    CostDecomposition c{tr.value(), en.value(), 0.0};
    c.total = c.transport_term + epsilon * c.entropy_term;
    return c;
}

namespace detail {

/// Heat kernel over time span s (covariance s * Sigma) between two grids.
inline KernelOperator heat_kernel_span(const KernelOperator& k, const GridPtr& from, const GridPtr& to, double s) {
    const Eigen::MatrixXd cov = k.covariance() * s;
    if (from->dim() == 1) return KernelOperator::gaussian(from, to, std::sqrt(cov(0, 0)));
    return KernelOperator::gaussian_multivariate(from, to, cov);
}

} // namespace detail

/// Marginal of the bridge at time t, rho_t = phi_hat(t, .) phi(t, .), on the
/// (shared) grid. The returned field is renormalized; its raw_mass is the
/// mass before renormalization.
inline DensityField entropic_interpolation(const PotentialPair& p, const KernelOperator& k, const MarginalPair& m,
                                           double t, double max_drift = 1e-4) {
    if (!(t >= 0.0 && t <= 1.0)) throw invalid_input("interpolation time must lie in [0, 1]");
    if (!k.is_heat_kernel()) throw hypothesis_failure("entropic interpolation needs a heat kernel");
    require_compatible(k, m);
    if (!k.x_grid()->same_nodes(*k.y_grid()))
        throw invalid_input("entropic interpolation needs the same grid on both sides");
    const GridPtr& g = k.x_grid();
    const std::size_t n = g->size();

    std::vector<double> log_hat(n), log_fwd(n);
    if (t == 0.0) {
        log_hat = p.log_phi;
    } else {
        const KernelOperator kt = t == 1.0 ? k : detail::heat_kernel_span(k, g, g, t);
        std::vector<double> a(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = g->log_weights()[i] + p.log_phi[i];
        kt.log_matrix().col_reduce(a, log_hat);
    }
    if (t == 1.0) {
        log_fwd = p.log_psi;
    } else {
        const KernelOperator ks = t == 0.0 ? k : detail::heat_kernel_span(k, g, g, 1.0 - t);
        std::vector<double> b(n);
        for (std::size_t j = 0; j < n; ++j) b[j] = g->log_weights()[j] + p.log_psi[j];
        ks.log_matrix().row_reduce(b, log_fwd);
    }
    std::vector<double> rho(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double l = log_hat[i] + log_fwd[i];
        rho[i] = std::isnan(l) ? 0.0 : std::exp(l);
    }
    DensityField out = DensityField::from_values(g, std::move(rho), m.omega1.bounded_support && m.omega2.bounded_support);
    if (!(std::abs(out.raw_mass - 1.0) <= max_drift))
        throw numerical_failure("rho_t mass drifted to " + std::to_string(out.raw_mass) + " at t = " +
                                std::to_string(t));
    return out;
}

/// Closed-form potentials for centered Gaussian marginals N(0, sigma1^2),
/// N(0, sigma2^2) and heat kernel N(y; x, sigma^2):
/// phi(x) = c_phi exp(-a x^2 / 2), psi(y) = c_psi exp(-b y^2 / 2).
struct GaussianBridgeSpec {
    double sigma = 0.0;
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double a_phi = 0.0;
    double b_psi = 0.0;
    double log_c_phi = 0.0;
    double log_c_psi = 0.0;

    [[nodiscard]] double log_phi(double x) const { return log_c_phi - 0.5 * a_phi * x * x; }
    [[nodiscard]] double log_psi(double y) const { return log_c_psi - 0.5 * b_psi * y * y; }

    /// Variance of rho_t.
    [[nodiscard]] double interpolation_variance(double t) const {
        const double s2 = sigma * sigma;
        const double alpha = a_phi / (1.0 + s2 * t * a_phi) + b_psi / (1.0 + s2 * (1.0 - t) * b_psi);
        return 1.0 / alpha;
    }

    [[nodiscard]] PotentialPair sample(const GridPtr& g1, const GridPtr& g2) const {
        PotentialPair p{g1, g2, std::vector<double>(g1->size()), std::vector<double>(g2->size())};
        for (std::size_t i = 0; i < g1->size(); ++i) p.log_phi[i] = log_phi(g1->coordinate(i));
        for (std::size_t j = 0; j < g2->size(); ++j) p.log_psi[j] = log_psi(g2->coordinate(j));
        return p;
    }
};

/// Residuals of the closed-form pair inserted into the system on a grid.
inline SystemResiduals gaussian_oracle_residuals(const GaussianBridgeSpec& s, const GridPtr& g) {
    const KernelOperator k = KernelOperator::gaussian(g, g, s.sigma);
    const MarginalPair m{gaussian_density(g, 0.0, s.sigma1), gaussian_density(g, 0.0, s.sigma2)};
    return verify_system(s.sample(g, g), k, m);
}

/// With v = 1 + sigma^2 b and u = 1 + sigma^2 a the system reduces to
/// u - 1/v = sigma^2/sigma1^2 and v - 1/u = sigma^2/sigma2^2, whose positive
/// root is explicit. The pair is checked by quadrature before returning.
inline GaussianBridgeSpec gaussian_oracle(double sigma, double sigma1, double sigma2) {
    if (!(sigma > 0.0) || !(sigma1 > 0.0) || !(sigma2 > 0.0))
        throw invalid_input("gaussian_oracle: parameters must be positive");
    const double s2 = sigma * sigma;
    const double k1 = s2 / (sigma1 * sigma1);
    const double k2 = s2 / (sigma2 * sigma2);
    const double v = (k1 * k2 + std::sqrt(k1 * k1 * k2 * k2 + 4.0 * k1 * k2)) / (2.0 * k1);
    const double u = k1 + 1.0 / v;
    if (!(v > 0.0) || !(u > 0.0) || !std::isfinite(u) || !std::isfinite(v))
        throw invalid_input("gaussian_oracle: no admissible root for these parameters");
    GaussianBridgeSpec spec;
    spec.sigma = sigma;
    spec.sigma1 = sigma1;
    spec.sigma2 = sigma2;
    spec.a_phi = (u - 1.0) / s2;
    spec.b_psi = (v - 1.0) / s2;
    spec.log_c_psi = 0.0;
    spec.log_c_phi = 0.5 * std::log(v) - 0.5 * std::log(2.0 * std::numbers::pi * sigma1 * sigma1);

    const double smax = std::max({sigma1, sigma2});
    const double smin = std::min({sigma, sigma1, sigma2, 1.0 / std::sqrt(std::abs(spec.b_psi) + 1e-300),
                                  1.0 / std::sqrt(std::abs(spec.a_phi) + 1e-300)});
    const double radius = 8.0 * smax;
    const auto points = static_cast<std::size_t>(
        std::clamp(std::ceil(2.0 * radius / (0.25 * smin)) + 1.0, 401.0, 4001.0));
    const GridPtr g = make_grid(GridSpec{1, radius, points, QuadratureRule::trapezoid});
    const SystemResiduals r = gaussian_oracle_residuals(spec, g);
    if (!(r.s1_resid <= 1e-8 && r.s2_resid <= 1e-8))
        throw numerical_failure("gaussian_oracle: quadrature residuals " + std::to_string(r.s1_resid) + ", " +
                                std::to_string(r.s2_resid) + " exceed 1e-8");
    return spec;
}

} // namespace fortet
