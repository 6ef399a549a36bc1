#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/numeric.hpp"
#include "fortet/problem.hpp"

namespace fortet {

enum class CheckStatus { pass, fail, best_effort_pass, best_effort_fail, not_applicable };

inline std::string to_string(CheckStatus s) {
    switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::best_effort_pass: return "best-effort-pass";
    case CheckStatus::best_effort_fail: return "best-effort-fail";
    case CheckStatus::not_applicable: return "not-applicable";
    }
    return "unknown";
}

struct HypothesisCheck {
    std::string id;
    CheckStatus status = CheckStatus::pass;
    /// Offending node indices (flat kernel index i*cols+j for kernel checks).
    std::vector<std::size_t> offending;
    std::string note;

    [[nodiscard]] bool hard_failure() const { return status == CheckStatus::fail; }
};

enum class StarVerdict { finite, suspected_divergent };

inline std::string to_string(StarVerdict v) {
    return v == StarVerdict::finite ? "finite" : "suspected-divergent";
}

struct ConditionStar {
    double estimate = 0.0;
    StarVerdict verdict = StarVerdict::finite;
    /// Slope of log(integrand) against distance from the grid center over
    /// the outer 20% of the y-grid; NaN when not fitted.
    double tail_exponent = std::numeric_limits<double>::quiet_NaN();
    /// y-nodes where the denominator vanishes while omega2 > 0.
    std::vector<std::size_t> zero_denominator_nodes;
};

struct Theorem2Result {
    CheckStatus status = CheckStatus::not_applicable;
    int condition = 0; ///< 1 or 2 when matched
    double T1 = 0.0;
    double T2 = 0.0;
    std::string note;
};

struct FeasibilityReport {
    std::vector<HypothesisCheck> hypotheses_h;
    ConditionStar condition_star;
    bool swap_recommended = false;
    Theorem2Result theorem2_difference_kernel;

    [[nodiscard]] bool hard_checks_passed() const {
        return std::none_of(hypotheses_h.begin(), hypotheses_h.end(),
                            [](const HypothesisCheck& h) { return h.hard_failure(); });
    }
    [[nodiscard]] const HypothesisCheck* find(const std::string& id) const {
        for (const auto& h : hypotheses_h)
            if (h.id == id) return &h;
        return nullptr;
    }
};

namespace detail {

/// Continuity smoke test on a 1-D sampled function: for a continuous
/// function the sampled modulus of continuity roughly doubles when the step
/// doubles, while a jump keeps it flat.
inline CheckStatus continuity_smoke(const std::vector<std::vector<double>>& series, std::string& note) {
    double w1 = 0.0;
    double w2 = 0.0;
    double scale = 0.0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) w1 = std::max(w1, std::abs(s[i + 1] - s[i]));
        for (std::size_t i = 0; i + 2 < s.size(); ++i) w2 = std::max(w2, std::abs(s[i + 2] - s[i]));
        for (double v : s) scale = std::max(scale, std::abs(v));
    }
    if (w1 <= 1e-14 * std::max(scale, 1e-300)) {
        note = "sampled modulus of continuity is zero";
        return CheckStatus::best_effort_pass;
    }
    const double ratio = w2 / w1;
    note = "modulus ratio w(2h)/w(h) = " + std::to_string(ratio);
    return ratio >= 1.5 ? CheckStatus::best_effort_pass : CheckStatus::best_effort_fail;
}

inline HypothesisCheck nonneg_check(const std::string& id, const DensityField& d) {
    HypothesisCheck c{id, CheckStatus::pass, {}, {}};
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.values[i] < 0.0) c.offending.push_back(i);
    if (!c.offending.empty()) {
        c.status = CheckStatus::fail;
        c.note = std::to_string(c.offending.size()) + " negative node value(s)";
    }
    return c;
}

inline HypothesisCheck mass_check(const std::string& id, const DensityField& d) {
    HypothesisCheck c{id, CheckStatus::pass, {}, {}};
    const double m = d.mass();
    c.note = "mass = " + std::to_string(m);
    if (!(std::abs(m - 1.0) <= 1e-8)) c.status = CheckStatus::fail;
    return c;
}

inline std::vector<double> row_of(const KernelOperator& k, std::size_t i) {
    std::vector<double> r(k.cols());
    for (std::size_t j = 0; j < k.cols(); ++j) r[j] = k.value(i, j);
    return r;
}

inline std::vector<double> col_of(const KernelOperator& k, std::size_t j) {
    std::vector<double> c(k.rows());
    for (std::size_t i = 0; i < k.rows(); ++i) c[i] = k.value(i, j);
    return c;
}

} // namespace detail

/// Grid versions of H.i-H.viii. H.i, H.ii, H.iii, H.v are exact; H.iv and
/// H.viii are best-effort continuity smoke tests; H.vi/H.vii require every
/// kernel row/column to carry a positive entry.
inline FeasibilityReport check_assumptions_H(const KernelOperator& k, const MarginalPair& m) {
    require_compatible(k, m);
    FeasibilityReport r;
    auto& hs = r.hypotheses_h;

    HypothesisCheck hi{"H.i", CheckStatus::pass, k.negative_entries(), {}};
    if (!hi.offending.empty()) {
        hi.status = CheckStatus::fail;
        hi.note = std::to_string(hi.offending.size()) + " negative kernel entries";
    }
    hs.push_back(hi);

    hs.push_back(detail::nonneg_check("H.ii.omega1", m.omega1));
    hs.push_back(detail::nonneg_check("H.ii.omega2", m.omega2));
    hs.push_back(detail::mass_check("H.iii.omega1", m.omega1));
    hs.push_back(detail::mass_check("H.iii.omega2", m.omega2));

    HypothesisCheck hiv{"H.iv", CheckStatus::not_applicable, {}, "continuity smoke test needs 1-D grids with >= 3 nodes"};
    if (k.x_grid()->dim() == 1 && k.rows() >= 3 && k.cols() >= 3) {
        std::vector<std::vector<double>> series;
        for (std::size_t i = 0; i < k.rows(); ++i) series.push_back(detail::row_of(k, i));
        for (std::size_t j = 0; j < k.cols(); ++j) series.push_back(detail::col_of(k, j));
        hiv.status = detail::continuity_smoke(series, hiv.note);
    }
    hs.push_back(hiv);

    HypothesisCheck hv{"H.v", CheckStatus::pass, {}, "Sigma = " + std::to_string(k.sigma_bound())};
    for (std::size_t i = 0; i < k.rows(); ++i)
        for (std::size_t j = 0; j < k.cols(); ++j)
            if (!(k.value(i, j) < k.sigma_bound())) hv.offending.push_back(i * k.cols() + j);
    if (!hv.offending.empty()) hv.status = CheckStatus::fail;
    hs.push_back(hv);

    HypothesisCheck hvi{"H.vi", CheckStatus::pass, {}, "every kernel row has a positive entry"};
    for (std::size_t i = 0; i < k.rows(); ++i) {
        bool any = false;
        for (std::size_t j = 0; j < k.cols() && !any; ++j) any = k.value(i, j) > 0.0;
        if (!any) hvi.offending.push_back(i);
    }
    if (!hvi.offending.empty()) {
        hvi.status = CheckStatus::fail;
        hvi.note = "kernel rows without a positive entry";
    }
    hs.push_back(hvi);

    HypothesisCheck hvii{"H.vii", CheckStatus::pass, {}, "every kernel column has a positive entry"};
    for (std::size_t j = 0; j < k.cols(); ++j) {
        bool any = false;
        for (std::size_t i = 0; i < k.rows() && !any; ++i) any = k.value(i, j) > 0.0;
        if (!any) hvii.offending.push_back(j);
    }
    if (!hvii.offending.empty()) {
        hvii.status = CheckStatus::fail;
        hvii.note = "kernel columns without a positive entry";
    }
    hs.push_back(hvii);

    HypothesisCheck hviii{"H.viii", CheckStatus::not_applicable, {}, "continuity smoke test needs 1-D grids with >= 3 nodes"};
    if (m.omega1.grid->dim() == 1 && m.omega1.size() >= 3 && m.omega2.size() >= 3) {
        hviii.status = detail::continuity_smoke({m.omega1.values, m.omega2.values}, hviii.note);
    }
    hs.push_back(hviii);
    return r;
}

/// Truncated-grid estimate of the integral of omega2 / (g^T omega1) with a
/// tail-slope heuristic; on a bounded support the grid covers the whole
/// domain and the finite sum is the integral itself.
inline ConditionStar condition_star(const KernelOperator& k, const MarginalPair& m) {
    require_compatible(k, m);
    const auto& gx = *k.x_grid();
    const auto& gy = *k.y_grid();
    std::vector<double> lw1(k.rows());
    for (std::size_t i = 0; i < k.rows(); ++i) lw1[i] = gx.log_weights()[i] + m.omega1.log_value(i);
    std::vector<double> log_den(k.cols());
    k.log_matrix().col_reduce(lw1, log_den);

    ConditionStar cs;
    std::vector<double> log_integrand(k.cols(), neg_inf);
    std::vector<double> terms;
    for (std::size_t j = 0; j < k.cols(); ++j) {
        if (!(m.omega2.values[j] > 0.0)) continue;
        if (log_den[j] == neg_inf) {
            cs.zero_denominator_nodes.push_back(j);
            continue;
        }
        log_integrand[j] = m.omega2.log_value(j) - log_den[j];
        terms.push_back(gy.log_weights()[j] + log_integrand[j]);
    }
    if (!cs.zero_denominator_nodes.empty()) {
        cs.verdict = StarVerdict::suspected_divergent;
        cs.estimate = std::numeric_limits<double>::infinity();
        return cs;
    }
    cs.estimate = std::exp(log_sum_exp(terms));

    // distance of each y-node from the center of the grid's bounding box
    const int d = gy.dim();
    std::vector<double> lo(static_cast<std::size_t>(d), std::numeric_limits<double>::infinity());
    std::vector<double> hi(static_cast<std::size_t>(d), -std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < gy.size(); ++j)
        for (int a = 0; a < d; ++a) {
            lo[static_cast<std::size_t>(a)] = std::min(lo[static_cast<std::size_t>(a)], gy.coordinate(j, a));
            hi[static_cast<std::size_t>(a)] = std::max(hi[static_cast<std::size_t>(a)], gy.coordinate(j, a));
        }
    std::vector<double> dist(gy.size());
    double dmax = 0.0;
    for (std::size_t j = 0; j < gy.size(); ++j) {
        double s = 0.0;
        for (int a = 0; a < d; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            const double c = gy.coordinate(j, a) - 0.5 * (lo[ua] + hi[ua]);
            s += c * c;
        }
        dist[j] = std::sqrt(s);
        dmax = std::max(dmax, dist[j]);
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < gy.size(); ++j) {
        if (dist[j] < 0.8 * dmax || log_integrand[j] == neg_inf) continue;
        sx += dist[j];
        sy += log_integrand[j];
        sxx += dist[j] * dist[j];
        sxy += dist[j] * log_integrand[j];
        ++n;
    }
    if (n >= 3) {
        const double nn = static_cast<double>(n);
        const double den = nn * sxx - sx * sx;
        if (den > 0.0) cs.tail_exponent = (nn * sxy - sx * sy) / den;
    }
    const bool bounded = m.omega1.bounded_support && m.omega2.bounded_support;
    const bool finite_estimate = std::isfinite(cs.estimate) && cs.estimate > 0.0;
    if (!finite_estimate)
        cs.verdict = StarVerdict::suspected_divergent;
    else if (!bounded && std::isfinite(cs.tail_exponent) && cs.tail_exponent >= 0.0)
        cs.verdict = StarVerdict::suspected_divergent;
    else
        cs.verdict = StarVerdict::finite;
    return cs;
}

inline bool bernstein_gaussian_condition(double sigma, double sigma1, double sigma2) {
    if (!(sigma > 0.0) || !(sigma1 > 0.0) || !(sigma2 > 0.0))
        throw invalid_input("Gaussian parameters must be positive");
    return sigma * sigma + sigma1 * sigma1 - sigma2 * sigma2 > 0.0;
}

namespace detail {
inline void require_spd(const Eigen::MatrixXd& m, const char* name) {
    if (m.rows() != m.cols() || m.rows() == 0) throw invalid_input(std::string(name) + " is not square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw invalid_input(std::string(name) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 0.0))
        throw invalid_input(std::string(name) + " is not positive definite");
}
} // namespace detail

/// True iff every eigenvalue of S2^-1 - (S + S1)^-1 is positive.
inline bool bernstein_multivariate_condition(const Eigen::MatrixXd& S, const Eigen::MatrixXd& S1,
                                             const Eigen::MatrixXd& S2) {
    detail::require_spd(S, "Sigma");
    detail::require_spd(S1, "Sigma1");
    detail::require_spd(S2, "Sigma2");
    if (S.rows() != S1.rows() || S.rows() != S2.rows()) throw invalid_input("covariance dimensions differ");
    const Eigen::MatrixXd M = S2.inverse() - (S + S1).inverse();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() > 0.0;
}

/// Monotone-tail scan of a 1-D difference kernel U over the range of
/// differences x - y covered by the grids. Each tail must span at least a
/// quarter of that range.
inline Theorem2Result theorem2_applicability(const KernelOperator& k, std::size_t lattice = 4001) {
    Theorem2Result res;
    if (!k.is_difference_kernel() || k.x_grid()->dim() != 1) {
        res.note = "kernel is not tagged as a 1-D difference kernel";
        return res;
    }
    const auto& gx = *k.x_grid();
    const auto& gy = *k.y_grid();
    const double tmin = gx.coordinate(0) - gy.coordinate(gy.size() - 1);
    const double tmax = gx.coordinate(gx.size() - 1) - gy.coordinate(0);
    std::vector<double> t(lattice), u(lattice);
    for (std::size_t i = 0; i < lattice; ++i) {
        t[i] = tmin + (tmax - tmin) * static_cast<double>(i) / static_cast<double>(lattice - 1);
        u[i] = k.difference_profile()(t[i]);
    }
    double scale = 0.0;
    for (double v : u) scale = std::max(scale, std::abs(v));
    const double slack = 1e-12 * scale;
    const auto nondecr = [&](std::size_t i) { return u[i + 1] >= u[i] - slack; };
    const auto nonincr = [&](std::size_t i) { return u[i + 1] <= u[i] + slack; };

    auto scan = [&](auto&& left_ok, auto&& right_ok, int cond) {
        std::size_t a = 0; // left tail ends at a
        while (a + 1 < lattice && left_ok(a)) ++a;
        std::size_t b = lattice - 1; // right tail starts at b
        while (b > 0 && right_ok(b - 1)) --b;
        const std::size_t quarter = (lattice - 1) / 4;
        if (a >= quarter && b <= lattice - 1 - quarter) {
            res.status = CheckStatus::pass;
            res.condition = cond;
            res.T1 = t[std::min(a, b)];
            res.T2 = t[b];
            return true;
        }
        return false;
    };
    if (scan(nondecr, nonincr, 1)) {
        res.note = "U non-decreasing below T1 and non-increasing above T2";
        return res;
    }
    if (scan(nonincr, nondecr, 2)) {
        res.note = "U non-increasing below T1 and non-decreasing above T2";
        return res;
    }
    res.status = CheckStatus::fail;
    res.note = "no monotone tails found on [" + std::to_string(tmin) + ", " + std::to_string(tmax) + "]";
    return res;
}

/// Full report: H checks, condition (*) for the given ordering, the swap
/// recommendation and the difference-kernel scan.
inline FeasibilityReport feasibility_report(const KernelOperator& k, const MarginalPair& m) {
    FeasibilityReport r = check_assumptions_H(k, m);
    r.condition_star = condition_star(k, m);
    if (r.condition_star.verdict == StarVerdict::suspected_divergent) {
        const ConditionStar swapped = condition_star(k.transposed(), m.swapped());
        r.swap_recommended = swapped.verdict == StarVerdict::finite;
    }
    r.theorem2_difference_kernel = theorem2_applicability(k);
    return r;
}

} // namespace fortet
