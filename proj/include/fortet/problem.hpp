#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/grid.hpp"
#include "fortet/numeric.hpp"

namespace fortet {

enum class MassPolicy {
    renormalize, ///< divide by the quadrature mass so the density integrates to 1
    keep         ///< keep raw values; only for diagnostics of unbalanced inputs
};

/// Sampled density. Values are stored as given (after renormalization);
/// negative entries are kept so feasibility checks can report them.
struct DensityField {
    GridPtr grid;
    std::vector<double> values;
    /// Quadrature mass before renormalization.
    double raw_mass = 1.0;
    /// True when the density lives on a compact domain that the grid covers
    /// entirely; false when the grid truncates an unbounded support.
    bool bounded_support = false;

    static DensityField from_values(GridPtr g, std::vector<double> v, bool bounded,
                                    MassPolicy policy = MassPolicy::renormalize) {
        GridFunction checked(g, std::move(v));
        DensityField d;
        d.grid = std::move(checked.grid);
        d.values = std::move(checked.values);
        d.bounded_support = bounded;
        d.raw_mass = d.grid->integrate(d.values);
        if (policy == MassPolicy::renormalize) {
            if (!(d.raw_mass > 0.0))
                throw invalid_input("density has non-positive total mass " + std::to_string(d.raw_mass));
            for (double& x : d.values) x /= d.raw_mass;
        }
        return d;
    }

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] double mass() const { return grid->integrate(values); }
    [[nodiscard]] double log_value(std::size_t i) const { return safe_log(values[i]); }
    [[nodiscard]] std::vector<double> log_values() const {
        std::vector<double> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = safe_log(values[i]);
        return out;
    }
};

/// Centered-or-shifted 1-D normal density sampled on the grid.
inline DensityField gaussian_density(GridPtr g, double mean, double sigma) {
    if (!(sigma > 0.0)) throw invalid_input("gaussian marginal needs sigma > 0");
    if (g->dim() != 1) throw invalid_input("scalar gaussian marginal on a multi-dimensional grid");
    std::vector<double> v(g->size());
    const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi * sigma * sigma);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double z = (g->coordinate(i) - mean) / sigma;
        v[i] = c * std::exp(-0.5 * z * z);
    }
    return DensityField::from_values(std::move(g), std::move(v), false);
}

/// Multivariate normal density N(mean, cov) sampled on a d-dimensional grid.
inline DensityField gaussian_density(GridPtr g, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
    const auto d = static_cast<Eigen::Index>(g->dim());
    if (cov.rows() != d || cov.cols() != d || mean.size() != d)
        throw invalid_input("covariance/mean shape does not match the grid dimension");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw invalid_input("covariance matrix is not positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    const double log_det = 2.0 * L.diagonal().array().log().sum();
    const double log_c = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
    std::vector<double> v(g->size());
    Eigen::VectorXd x(d);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto p = g->point(i);
        for (Eigen::Index k = 0; k < d; ++k) x[k] = p[static_cast<std::size_t>(k)] - mean[k];
        const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(x);
        v[i] = std::exp(log_c - 0.5 * z.squaredNorm());
    }
    return DensityField::from_values(std::move(g), std::move(v), false);
}

inline DensityField uniform_density(GridPtr g) {
    std::vector<double> v(g->size(), 1.0);
    return DensityField::from_values(std::move(g), std::move(v), true);
}

/// Piecewise-linear interpolation of a tabulated density onto the grid
/// (zero outside the table's range), then renormalization.
inline DensityField tabulated_density(GridPtr g, const std::vector<double>& xs, const std::vector<double>& ys) {
    if (g->dim() != 1) throw invalid_input("tabulated marginals are supported on 1-D grids only");
    if (xs.size() != ys.size() || xs.size() < 2) throw invalid_input("density table needs >= 2 (x, value) rows");
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] > xs[i - 1])) throw invalid_input("density table x column must be strictly increasing");
    std::vector<double> v(g->size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = g->coordinate(i);
        if (x < xs.front() || x > xs.back()) continue;
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        std::size_t k = static_cast<std::size_t>(it - xs.begin());
        if (k == xs.size()) k = xs.size() - 1;
        const std::size_t j = k - 1;
        const double t = (x - xs[j]) / (xs[k] - xs[j]);
        v[i] = (1.0 - t) * ys[j] + t * ys[k];
    }
    return DensityField::from_values(std::move(g), std::move(v), true);
}

/// The two prescribed marginals: omega1 on the x-grid, omega2 on the y-grid.
struct MarginalPair {
    DensityField omega1;
    DensityField omega2;

    [[nodiscard]] MarginalPair swapped() const { return {omega2, omega1}; }
};

enum class KernelKind { analytic_gaussian, table };

/// Discretized kernel g(x_i, y_j), stored as log-values so analytic kernels
/// never underflow. Exact zeros are -inf.
class KernelOperator {
public:
    KernelOperator() = default;

    /// Heat kernel g(x, y) = N(y; x, sigma^2) on 1-D grids, evaluated pointwise.
    static KernelOperator gaussian(GridPtr x, GridPtr y, double sigma) {
        if (!(sigma > 0.0)) throw invalid_input("gaussian kernel needs sigma > 0");
        if (x->dim() != 1 || y->dim() != 1) throw invalid_input("scalar gaussian kernel on multi-dimensional grids");
        const double log_c = -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
        std::vector<double> lv(x->size() * y->size());
        for (std::size_t i = 0; i < x->size(); ++i)
            for (std::size_t j = 0; j < y->size(); ++j) {
                const double d = (y->coordinate(j) - x->coordinate(i)) / sigma;
                lv[i * y->size() + j] = log_c - 0.5 * d * d;
            }
        KernelOperator k(std::move(x), std::move(y), std::move(lv), KernelKind::analytic_gaussian);
        k.covariance_ = Eigen::MatrixXd::Constant(1, 1, sigma * sigma);
        k.sigma_bound_ = std::exp(log_c) * (1.0 + 1e-12);
        k.difference_profile_ = [sigma, log_c](double t) {
            const double d = t / sigma;
            return std::exp(log_c - 0.5 * d * d);
        };
        return k;
    }

    /// Heat kernel with covariance matrix Sigma on d-dimensional grids.
    static KernelOperator gaussian_multivariate(GridPtr x, GridPtr y, const Eigen::MatrixXd& cov) {
        const auto d = static_cast<Eigen::Index>(x->dim());
        if (y->dim() != x->dim() || cov.rows() != d || cov.cols() != d)
            throw invalid_input("kernel covariance shape does not match the grids");
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) throw invalid_input("kernel covariance is not positive definite");
        const Eigen::MatrixXd L = llt.matrixL();
        const double log_det = 2.0 * L.diagonal().array().log().sum();
        const double log_c = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
        std::vector<double> lv(x->size() * y->size());
        Eigen::VectorXd diff(d);
        for (std::size_t i = 0; i < x->size(); ++i) {
            const auto px = x->point(i);
            for (std::size_t j = 0; j < y->size(); ++j) {
                const auto py = y->point(j);
                for (Eigen::Index k = 0; k < d; ++k)
                    diff[k] = py[static_cast<std::size_t>(k)] - px[static_cast<std::size_t>(k)];
                const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(diff);
                lv[i * y->size() + j] = log_c - 0.5 * z.squaredNorm();
            }
        }
        KernelOperator k(std::move(x), std::move(y), std::move(lv), KernelKind::analytic_gaussian);
        k.covariance_ = cov;
        k.sigma_bound_ = std::exp(log_c) * (1.0 + 1e-12);
        return k;
    }

    /// Tabulated kernel from row-major linear values. Negative entries are
    /// recorded (and treated as zero) so the hypothesis check can name them.
    static KernelOperator from_table(GridPtr x, GridPtr y, const std::vector<double>& values,
                                     std::optional<double> sigma_bound = std::nullopt) {
        if (values.size() != x->size() * y->size())
            throw invalid_input("kernel table has " + std::to_string(values.size()) + " entries, expected " +
                                std::to_string(x->size() * y->size()));
        std::vector<double> lv(values.size());
        std::vector<std::size_t> negative;
        double vmax = 0.0;
        for (std::size_t e = 0; e < values.size(); ++e) {
            if (!std::isfinite(values[e])) throw invalid_input("non-finite kernel entry " + std::to_string(e));
            if (values[e] < 0.0) negative.push_back(e);
            lv[e] = safe_log(values[e]);
            vmax = std::max(vmax, values[e]);
        }
        KernelOperator k(std::move(x), std::move(y), std::move(lv), KernelKind::table);
        k.negative_entries_ = std::move(negative);
        k.sigma_bound_ = sigma_bound.value_or(vmax * (1.0 + 1e-12));
        return k;
    }

    /// Difference kernel g(x, y) = U(x - y) on 1-D grids, tagged so the
    /// monotone-tail hypothesis can be scanned.
    static KernelOperator from_difference(GridPtr x, GridPtr y, std::function<double(double)> U) {
        if (x->dim() != 1 || y->dim() != 1) throw invalid_input("difference kernels need 1-D grids");
        std::vector<double> vals(x->size() * y->size());
        for (std::size_t i = 0; i < x->size(); ++i)
            for (std::size_t j = 0; j < y->size(); ++j)
                vals[i * y->size() + j] = U(x->coordinate(i) - y->coordinate(j));
        KernelOperator k = from_table(std::move(x), std::move(y), vals);
        k.difference_profile_ = std::move(U);
        return k;
    }

    [[nodiscard]] const GridPtr& x_grid() const noexcept { return x_; }
    [[nodiscard]] const GridPtr& y_grid() const noexcept { return y_; }
    [[nodiscard]] std::size_t rows() const noexcept { return log_.rows; }
    [[nodiscard]] std::size_t cols() const noexcept { return log_.cols; }
    [[nodiscard]] const LogMatrix& log_matrix() const noexcept { return log_; }
    [[nodiscard]] double log_value(std::size_t i, std::size_t j) const { return log_.at(i, j); }
    [[nodiscard]] double value(std::size_t i, std::size_t j) const { return std::exp(log_.at(i, j)); }
    [[nodiscard]] double sigma_bound() const noexcept { return sigma_bound_; }
    [[nodiscard]] KernelKind kind() const noexcept { return kind_; }
    [[nodiscard]] const std::vector<std::size_t>& negative_entries() const noexcept { return negative_entries_; }
    [[nodiscard]] bool is_heat_kernel() const noexcept { return kind_ == KernelKind::analytic_gaussian; }
    /// Covariance of the heat kernel (1x1 for scalar kernels); empty otherwise.
    [[nodiscard]] const Eigen::MatrixXd& covariance() const noexcept { return covariance_; }
    [[nodiscard]] const std::function<double(double)>& difference_profile() const noexcept {
        return difference_profile_;
    }
    [[nodiscard]] bool is_difference_kernel() const noexcept { return static_cast<bool>(difference_profile_); }

    /// g^T as a kernel from the y-grid to the x-grid.
    [[nodiscard]] KernelOperator transposed() const {
        KernelOperator k = *this;
        std::swap(k.x_, k.y_);
        k.log_ = LogMatrix(log_.cols, log_.rows, log_.transposed);
        k.negative_entries_.clear();
        for (std::size_t e : negative_entries_) {
            const std::size_t i = e / log_.cols;
            const std::size_t j = e % log_.cols;
            k.negative_entries_.push_back(j * log_.rows + i);
        }
        std::sort(k.negative_entries_.begin(), k.negative_entries_.end());
        if (difference_profile_) {
            auto U = difference_profile_;
            k.difference_profile_ = [U](double t) { return U(-t); };
        }
        return k;
    }

    /// Copy rescaled so that sum_j w_j g(x_i, y_j) = 1 for every row (a
    /// transition kernel on the y-grid). The result is tabulated.
    [[nodiscard]] KernelOperator row_normalized() const {
        std::vector<double> lv = log_.values;
        std::vector<double> lw(y_->log_weights().begin(), y_->log_weights().end());
        std::vector<double> rs(log_.rows);
        log_.row_reduce(lw, rs);
        double peak = 0.0;
        for (std::size_t i = 0; i < log_.rows; ++i) {
            if (rs[i] == neg_inf) throw invalid_input("cannot normalize an all-zero kernel row " + std::to_string(i));
            for (std::size_t j = 0; j < log_.cols; ++j) {
                lv[i * log_.cols + j] -= rs[i];
                peak = std::max(peak, std::exp(lv[i * log_.cols + j]));
            }
        }
        KernelOperator k(x_, y_, std::move(lv), KernelKind::table);
        k.negative_entries_ = negative_entries_;
        k.sigma_bound_ = peak * (1.0 + 1e-12);
        return k;
    }

    /// Overrides the bound Sigma used by the g < Sigma check.
    void set_sigma_bound(double s) { sigma_bound_ = s; }

private:
    KernelOperator(GridPtr x, GridPtr y, std::vector<double> lv, KernelKind kind)
        : x_(std::move(x)), y_(std::move(y)), kind_(kind) {
        const std::size_t r = x_->size();
        const std::size_t c = y_->size();
        for (double v : lv)
            if (std::isnan(v)) throw invalid_input("NaN kernel entry");
        log_ = LogMatrix(r, c, std::move(lv));
    }

    GridPtr x_;
    GridPtr y_;
    LogMatrix log_;
    KernelKind kind_ = KernelKind::table;
    double sigma_bound_ = 0.0;
    Eigen::MatrixXd covariance_;
    std::function<double(double)> difference_profile_;
    std::vector<std::size_t> negative_entries_;
};

/// Rejects marginals/kernel whose grids do not line up.
inline void require_compatible(const KernelOperator& k, const MarginalPair& m) {
    if (m.omega1.size() != k.rows() || m.omega2.size() != k.cols())
        throw invalid_input("kernel is " + std::to_string(k.rows()) + "x" + std::to_string(k.cols()) +
                            " but marginals have " + std::to_string(m.omega1.size()) + " and " +
                            std::to_string(m.omega2.size()) + " nodes");
    if (!k.x_grid()->same_nodes(*m.omega1.grid) || !k.y_grid()->same_nodes(*m.omega2.grid))
        throw invalid_input("kernel and marginals are sampled on different grids");
}

} // namespace fortet
