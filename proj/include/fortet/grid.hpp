#pragma once

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/numeric.hpp"

namespace fortet {

enum class QuadratureRule { trapezoid, gauss_legendre };

inline std::string to_string(QuadratureRule r) {
    return r == QuadratureRule::trapezoid ? "trapezoid" : "gauss-legendre";
}

inline QuadratureRule parse_rule(const std::string& s) {
    if (s == "trapezoid") return QuadratureRule::trapezoid;
    if (s == "gauss-legendre" || s == "gauss_legendre") return QuadratureRule::gauss_legendre;
    throw invalid_input("unknown quadrature rule '" + s + "' (expected trapezoid or gauss-legendre)");
}

/// Box [-radius, radius]^dim sampled with points_per_axis nodes per axis.
struct GridSpec {
    int dim = 1;
    double radius = 1.0;
    std::size_t points_per_axis = 2;
    QuadratureRule rule = QuadratureRule::trapezoid;
    /// Upper bound on the total node count (points_per_axis^dim).
    std::size_t max_nodes = std::size_t{1} << 22;
};

namespace detail {

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on P_n.
inline void gauss_legendre_unit(std::size_t n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    const std::size_t m = (n + 1) / 2;
    // P_n(z) and P_n'(z) by the three-term recurrence
    auto legendre = [n](double z, double& p, double& dp) {
        double p0 = 1.0;
        double p1 = z;
        for (std::size_t k = 2; k <= n; ++k) {
            const double kk = static_cast<double>(k);
            const double p2 = ((2.0 * kk - 1.0) * z * p1 - (kk - 1.0) * p0) / kk;
            p0 = p1;
            p1 = p2;
        }
        p = p1;
        dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1.0);
    };
    for (std::size_t i = 0; i < m; ++i) {
        double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                            (static_cast<double>(n) + 0.5));
        double p = 0.0;
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            legendre(z, p, dp);
            const double dz = p / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        legendre(z, p, dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

} // namespace detail

/// Tensor-product quadrature grid over a truncated box. Immutable after
/// construction; nodes are ordered lexicographically with the last axis
/// varying fastest.
class QuadratureGrid {
public:
    static QuadratureGrid build(const GridSpec& spec) {
        if (spec.dim < 1) throw invalid_input("grid dimension must be >= 1");
        if (!(spec.radius > 0.0) || !std::isfinite(spec.radius))
            throw invalid_input("grid radius must be positive and finite");
        if (spec.points_per_axis < 2) throw invalid_input("points_per_axis must be >= 2");
        const double total = std::pow(static_cast<double>(spec.points_per_axis), spec.dim);
        if (total > static_cast<double>(spec.max_nodes)) {
            std::ostringstream msg;
            msg << std::fixed << std::setprecision(0) << "grid of " << spec.points_per_axis << "^" << spec.dim << " = " << total
                << " nodes exceeds the cap of " << spec.max_nodes << " nodes (a kernel on it needs ~"
                << total * total * 16.0 / (1024.0 * 1024.0) << " MiB)";
            throw invalid_input(msg.str());
        }

        std::vector<double> axis(spec.points_per_axis);
        std::vector<double> axis_w(spec.points_per_axis);
        const double r = spec.radius;
        if (spec.rule == QuadratureRule::trapezoid) {
            const double h = 2.0 * r / static_cast<double>(spec.points_per_axis - 1);
            for (std::size_t i = 0; i < axis.size(); ++i) {
                axis[i] = -r + h * static_cast<double>(i);
                axis_w[i] = h;
            }
            axis.back() = r;
            axis_w.front() = axis_w.back() = 0.5 * h;
        } else {
            std::vector<double> ux, uw;
            detail::gauss_legendre_unit(spec.points_per_axis, ux, uw);
            for (std::size_t i = 0; i < axis.size(); ++i) {
                axis[i] = r * ux[i];
                axis_w[i] = r * uw[i];
            }
        }
        QuadratureGrid g = tensor(spec.dim, axis, axis_w);
        g.radius_ = r;
        g.rule_ = spec.rule;
        return g;
    }

    /// 1-D grid from explicit nodes and weights.
    static QuadratureGrid from_nodes(std::vector<double> nodes, std::vector<double> weights) {
        if (nodes.size() != weights.size()) throw invalid_input("nodes and weights differ in length");
        if (nodes.size() < 2) throw invalid_input("a grid needs at least 2 nodes");
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!std::isfinite(nodes[i]) || !(weights[i] > 0.0) || !std::isfinite(weights[i])) {
                throw invalid_input("grid node " + std::to_string(i) +
                                    " has a non-finite position or a non-positive weight");
            }
            if (i > 0 && !(nodes[i] > nodes[i - 1]))
                throw invalid_input("grid nodes must be strictly increasing (node " + std::to_string(i) + ")");
        }
        QuadratureGrid g = tensor(1, nodes, weights);
        g.radius_ = std::max(std::abs(nodes.front()), std::abs(nodes.back()));
        return g;
    }

    [[nodiscard]] std::size_t size() const noexcept { return weights_.size(); }
    [[nodiscard]] int dim() const noexcept { return dim_; }
    [[nodiscard]] double radius() const noexcept { return radius_; }
    [[nodiscard]] QuadratureRule rule() const noexcept { return rule_; }
    [[nodiscard]] std::size_t points_per_axis() const noexcept { return axis_nodes_.size(); }
    [[nodiscard]] std::span<const double> axis_nodes() const noexcept { return axis_nodes_; }
    [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }
    [[nodiscard]] std::span<const double> log_weights() const noexcept { return log_weights_; }
    [[nodiscard]] double weight(std::size_t i) const { return weights_[i]; }

    /// Coordinates of node i (dim entries).
    [[nodiscard]] std::span<const double> point(std::size_t i) const {
        return std::span<const double>(coords_).subspan(i * static_cast<std::size_t>(dim_),
                                                        static_cast<std::size_t>(dim_));
    }
    [[nodiscard]] double coordinate(std::size_t i, int axis = 0) const {
        return coords_[i * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(axis)];
    }

    /// Sum of the weights: the covered volume.
    [[nodiscard]] double volume() const { return pairwise_sum(weights_); }

    /// sum_i w_i f_i with pairwise summation; rejects non-finite values.
    [[nodiscard]] double integrate(std::span<const double> values) const {
        if (values.size() != size())
            throw invalid_input("integrand has " + std::to_string(values.size()) + " values, grid has " +
                                std::to_string(size()) + " nodes");
        std::vector<double> terms(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i]))
                throw invalid_input("non-finite integrand value at node " + std::to_string(i));
            terms[i] = weights_[i] * values[i];
        }
        return pairwise_sum(terms);
    }

    [[nodiscard]] bool same_nodes(const QuadratureGrid& other) const {
        return dim_ == other.dim_ && coords_ == other.coords_ && weights_ == other.weights_;
    }

private:
    static QuadratureGrid tensor(int dim, const std::vector<double>& axis, const std::vector<double>& axis_w) {
        QuadratureGrid g;
        g.dim_ = dim;
        g.axis_nodes_ = axis;
        const std::size_t p = axis.size();
        std::size_t n = 1;
        for (int d = 0; d < dim; ++d) n *= p;
        g.coords_.resize(n * static_cast<std::size_t>(dim));
        g.weights_.resize(n);
        g.log_weights_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t rem = i;
            double w = 1.0;
            for (int d = dim - 1; d >= 0; --d) {
                const std::size_t k = rem % p;
                rem /= p;
                g.coords_[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(d)] = axis[k];
                w *= axis_w[k];
            }
            g.weights_[i] = w;
            g.log_weights_[i] = std::log(w);
        }
        return g;
    }

    int dim_ = 1;
    double radius_ = 0.0;
    QuadratureRule rule_ = QuadratureRule::trapezoid;
    std::vector<double> axis_nodes_;
    std::vector<double> coords_;
    std::vector<double> weights_;
    std::vector<double> log_weights_;
};

using GridPtr = std::shared_ptr<const QuadratureGrid>;

inline GridPtr make_grid(const GridSpec& spec) {
    return std::make_shared<const QuadratureGrid>(QuadratureGrid::build(spec));
}

inline GridPtr make_grid(std::vector<double> nodes, std::vector<double> weights) {
    return std::make_shared<const QuadratureGrid>(QuadratureGrid::from_nodes(std::move(nodes), std::move(weights)));
}

/// Sampled function on a grid; one finite value per node.
struct GridFunction {
    GridPtr grid;
    std::vector<double> values;

    GridFunction() = default;
    GridFunction(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
        if (!grid) throw invalid_input("grid function without a grid");
        if (values.size() != grid->size())
            throw invalid_input("grid function has " + std::to_string(values.size()) + " values for " +
                                std::to_string(grid->size()) + " nodes");
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!std::isfinite(values[i]))
                throw invalid_input("non-finite grid function value at node " + std::to_string(i));
    }
};

inline double integrate(const GridFunction& f) { return f.grid->integrate(f.values); }

} // namespace fortet
