#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/feasibility.hpp"
#include "fortet/hilbert.hpp"
#include "fortet/numeric.hpp"
#include "fortet/problem.hpp"

namespace fortet {

/// Lower floor eps_n applied to H_n. Any strictly decreasing schedule with
/// eps_n -> 0 keeps H_n bounded below by a positive constant at each step.
struct FloorSchedule {
    enum class Kind { harmonic, geometric } kind = Kind::geometric;
    double ratio = 1e-6; ///< geometric: eps_n = ratio^(n-1)

    static FloorSchedule harmonic() { return {Kind::harmonic, 0.0}; }
    static FloorSchedule geometric(double r = 1e-6) {
        if (!(r > 0.0 && r < 1.0)) throw invalid_input("geometric floor ratio must lie in (0, 1)");
        return {Kind::geometric, r};
    }

    /// log eps_n for n >= 1 (p may be a large refinement index).
    [[nodiscard]] double log_floor(double n) const {
        if (kind == Kind::harmonic) return -std::log(n);
        return (n - 1.0) * std::log(ratio);
    }
};

inline std::string to_string(const FloorSchedule& f) {
    return f.kind == FloorSchedule::Kind::harmonic ? "harmonic" : "geometric(" + std::to_string(f.ratio) + ")";
}

struct FortetOptions {
    double tol = 1e-10;
    std::size_t max_iter = 10000;
    double case1_eps = 1e-12;
    double degenerate_threshold = 1e-13;
    double jset_eps = 1e-6;
    FloorSchedule floor{};
    /// Run the exact H checks before iterating.
    bool check_hypotheses = true;
};

struct IterationDiagnostics {
    std::size_t n = 0;
    double sup_change = std::numeric_limits<double>::quiet_NaN();             ///< sup |H'_n - H'_{n-1}|
    double normalization_residual = std::numeric_limits<double>::quiet_NaN(); ///< |sum w omega1 H'/H - 1|
    double hilbert_step = std::numeric_limits<double>::quiet_NaN();           ///< d_H(H'_n, H'_{n-1})
    bool case1_candidate = false;
    double max_h_prime = 0.0;
    double j_weight = 0.0; ///< quadrature weight of {H'_n > 1}
    double log_floor = 0.0;
};

/// One step of the truncated scheme, all functions stored as logarithms.
struct IterationState {
    std::size_t n = 0;
    std::vector<double> log_H;
    std::vector<double> log_H_prime;
    std::vector<double> log_H_dprime;
    std::vector<double> log_G;
    std::vector<bool> J_mask;
    IterationDiagnostics diagnostics;
};

/// The map H -> Omega(H) for a fixed problem, with the weighted log-marginals
/// precomputed.
class OmegaMap {
public:
    OmegaMap(const KernelOperator& k, const MarginalPair& m) : k_(&k) {
        require_compatible(k, m);
        lw1o1_.resize(k.rows());
        lw2o2_.resize(k.cols());
        pos1_.resize(k.rows());
        pos2_.resize(k.cols());
        for (std::size_t i = 0; i < k.rows(); ++i) {
            pos1_[i] = m.omega1.values[i] > 0.0;
            lw1o1_[i] = pos1_[i] ? k.x_grid()->log_weights()[i] + std::log(m.omega1.values[i]) : neg_inf;
        }
        for (std::size_t j = 0; j < k.cols(); ++j) {
            pos2_[j] = m.omega2.values[j] > 0.0;
            lw2o2_[j] = pos2_[j] ? k.y_grid()->log_weights()[j] + std::log(m.omega2.values[j]) : neg_inf;
        }
    }

    /// log G(H, y) for every y-node.
    void log_G(std::span<const double> log_H, std::span<double> out) const {
        std::vector<double> a(k_->rows());
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!pos1_[i]) {
                a[i] = neg_inf;
                continue;
            }
            if (!std::isfinite(log_H[i]))
                throw invalid_input("omega_map: H is not positive and finite at node " + std::to_string(i));
            a[i] = lw1o1_[i] - log_H[i];
        }
        k_->log_matrix().col_reduce(a, out);
    }

    /// log Omega(H) given precomputed log G.
    void apply_G(std::span<const double> log_G, std::span<double> out) const {
        std::vector<double> b(k_->cols());
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (!pos2_[j]) {
                b[j] = neg_inf;
                continue;
            }
            if (log_G[j] == neg_inf)
                throw hypothesis_failure("G(H, y) vanishes at y-node " + std::to_string(j) +
                                         " where omega2 > 0 (kernel column carries no omega1 mass)");
            b[j] = lw2o2_[j] - log_G[j];
        }
        k_->log_matrix().row_reduce(b, out);
    }

    [[nodiscard]] std::vector<double> operator()(std::span<const double> log_H) const {
        std::vector<double> g(k_->cols()), out(k_->rows());
        log_G(log_H, g);
        apply_G(g, out);
        return out;
    }

    [[nodiscard]] const std::vector<bool>& omega1_positive() const noexcept { return pos1_; }
    [[nodiscard]] const std::vector<bool>& omega2_positive() const noexcept { return pos2_; }
    [[nodiscard]] std::span<const double> log_w1_omega1() const noexcept { return lw1o1_; }
    [[nodiscard]] std::span<const double> log_w2_omega2() const noexcept { return lw2o2_; }
    [[nodiscard]] const KernelOperator& kernel() const noexcept { return *k_; }

private:
    const KernelOperator* k_;
    std::vector<double> lw1o1_;
    std::vector<double> lw2o2_;
    std::vector<bool> pos1_;
    std::vector<bool> pos2_;
};

struct OmegaResult {
    std::vector<double> log_H_prime;
    std::vector<double> log_G;
};

inline OmegaResult omega_map(std::span<const double> log_H, const KernelOperator& k, const MarginalPair& m) {
    const OmegaMap om(k, m);
    OmegaResult r{std::vector<double>(k.rows()), std::vector<double>(k.cols())};
    om.log_G(log_H, r.log_G);
    om.apply_G(r.log_G, r.log_H_prime);
    return r;
}

/// Linear-coordinate convenience wrapper.
inline std::vector<double> omega_map_linear(std::span<const double> H, const KernelOperator& k, const MarginalPair& m) {
    std::vector<double> lh(H.size());
    for (std::size_t i = 0; i < H.size(); ++i) {
        if (!(H[i] > 0.0) || !std::isfinite(H[i]))
            throw invalid_input("omega_map: H must be positive and finite (node " + std::to_string(i) + ")");
        lh[i] = std::log(H[i]);
    }
    auto r = omega_map(lh, k, m);
    for (double& v : r.log_H_prime) v = std::exp(v);
    return r.log_H_prime;
}

namespace detail {

inline double sup_abs_change(std::span<const double> la, std::span<const double> lb) {
    double s = 0.0;
    for (std::size_t i = 0; i < la.size(); ++i) {
        const double a = std::exp(la[i]);
        const double b = std::exp(lb[i]);
        s = std::max(s, std::abs(a - b));
    }
    return s;
}

inline double masked_hilbert_log(std::span<const double> la, std::span<const double> lb, const std::vector<bool>& mask) {
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < la.size(); ++i) {
        if (!mask[i]) continue;
        if (!std::isfinite(la[i]) || !std::isfinite(lb[i])) return std::numeric_limits<double>::quiet_NaN();
        hi = std::max(hi, la[i] - lb[i]);
        lo = std::min(lo, la[i] - lb[i]);
    }
    return hi >= lo ? hi - lo : 0.0;
}

inline void fill_diagnostics(IterationState& s, const IterationState* prev, const OmegaMap& om,
                             const FortetOptions& opts, std::span<const double> w1) {
    auto& d = s.diagnostics;
    d.n = s.n;
    const auto& pos = om.omega1_positive();
    std::vector<double> terms;
    terms.reserve(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i)
        if (pos[i]) terms.push_back(om.log_w1_omega1()[i] + s.log_H_prime[i] - s.log_H[i]);
    d.normalization_residual = std::abs(std::exp(log_sum_exp(terms)) - 1.0);

    double mx = neg_inf;
    for (double v : s.log_H_prime) mx = std::max(mx, v);
    d.max_h_prime = std::exp(mx);
    d.case1_candidate = mx <= std::log1p(opts.case1_eps);

    s.J_mask.assign(s.log_H_prime.size(), false);
    CompensatedSum jw;
    for (std::size_t i = 0; i < s.log_H_prime.size(); ++i)
        if (s.log_H_prime[i] > 0.0) {
            s.J_mask[i] = true;
            jw.add(w1[i]);
        }
    d.j_weight = jw.value();

    if (prev) {
        d.sup_change = sup_abs_change(s.log_H_prime, prev->log_H_prime);
        d.hilbert_step = masked_hilbert_log(s.log_H_prime, prev->log_H_prime, pos);
    }
}

} // namespace detail

/// Advances the scheme one step. With prev == nullptr this is step 1
/// (H_1 = 1); otherwise H_n = max(H''_{n-1}, eps_n).
inline IterationState fortet_step(const IterationState* prev, const OmegaMap& om, const FortetOptions& opts) {
    const KernelOperator& k = om.kernel();
    IterationState s;
    s.n = prev ? prev->n + 1 : 1;
    s.diagnostics.log_floor = opts.floor.log_floor(static_cast<double>(s.n));
    s.log_H.assign(k.rows(), 0.0);
    if (prev) {
        for (std::size_t i = 0; i < k.rows(); ++i)
            s.log_H[i] = std::max(prev->log_H_dprime[i], s.diagnostics.log_floor);
    }
    s.log_G.resize(k.cols());
    s.log_H_prime.resize(k.rows());
    om.log_G(s.log_H, s.log_G);
    om.apply_G(s.log_G, s.log_H_prime);
    s.log_H_dprime.resize(k.rows());
    for (std::size_t i = 0; i < k.rows(); ++i) s.log_H_dprime[i] = std::min(0.0, s.log_H_prime[i]);
    detail::fill_diagnostics(s, prev, om, opts, k.x_grid()->weights());
    return s;
}

inline IterationState fortet_step(const IterationState* prev, const KernelOperator& k, const MarginalPair& m,
                                  const FortetOptions& opts = {}) {
    return fortet_step(prev, OmegaMap(k, m), opts);
}

/// (phi, psi) as logarithms; exact zeros are -inf.
struct PotentialPair {
    GridPtr grid1;
    GridPtr grid2;
    std::vector<double> log_phi;
    std::vector<double> log_psi;

    [[nodiscard]] std::vector<double> phi() const {
        std::vector<double> v(log_phi.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(log_phi[i]);
        return v;
    }
    [[nodiscard]] std::vector<double> psi() const {
        std::vector<double> v(log_psi.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(log_psi[i]);
        return v;
    }
    /// (c phi, psi / c)
    [[nodiscard]] PotentialPair rescaled(double c) const {
        PotentialPair p = *this;
        const double lc = std::log(c);
        for (double& v : p.log_phi) v += lc;
        for (double& v : p.log_psi) v -= lc;
        return p;
    }
};

struct SystemResiduals {
    double s1_resid = 0.0;
    double s2_resid = 0.0;
    double marginal_resid = 0.0; ///< |total coupling mass - 1|
};

enum class CaseTag { case1, case2, degenerate };

inline std::string to_string(CaseTag c) {
    switch (c) {
    case CaseTag::case1: return "case1";
    case CaseTag::case2: return "case2";
    case CaseTag::degenerate: return "degenerate";
    }
    return "unknown";
}

struct FortetSolution {
    std::vector<double> log_h;
    CaseTag case_tag = CaseTag::case2;
    std::size_t n0 = 0; ///< Case-1 trigger step
    std::size_t iterations = 0;
    std::size_t refinement_evaluations = 0;
    PotentialPair potentials;
    SystemResiduals residuals;
    std::vector<IterationDiagnostics> trace;

    [[nodiscard]] std::string case_label() const {
        return case_tag == CaseTag::case1 ? "case1{" + std::to_string(n0) + "}" : to_string(case_tag);
    }
};

/// Raised when the iteration cap is reached; carries the full trace.
class non_convergence : public numerical_failure {
public:
    non_convergence(const std::string& what, std::vector<IterationDiagnostics> trace, std::vector<double> last_log_h)
        : numerical_failure(what), trace_(std::move(trace)), last_log_h_(std::move(last_log_h)) {}
    [[nodiscard]] const std::vector<IterationDiagnostics>& trace() const noexcept { return trace_; }
    /// Last H' iterate (logarithms).
    [[nodiscard]] const std::vector<double>& last_log_h() const noexcept { return last_log_h_; }

private:
    std::vector<IterationDiagnostics> trace_;
    std::vector<double> last_log_h_;
};

/// phi = omega1 / h (0 where omega1 = 0), psi = omega2 / int g phi.
inline PotentialPair extract_potentials(std::span<const double> log_h, const KernelOperator& k, const MarginalPair& m) {
    require_compatible(k, m);
    if (log_h.size() != k.rows()) throw invalid_input("extract_potentials: h has the wrong length");
    PotentialPair p{k.x_grid(), k.y_grid(), std::vector<double>(k.rows()), std::vector<double>(k.cols())};
    std::vector<double> a(k.rows());
    for (std::size_t i = 0; i < k.rows(); ++i) {
        if (m.omega1.values[i] > 0.0) {
            if (!std::isfinite(log_h[i]))
                throw numerical_failure("extract_potentials: h vanishes at node " + std::to_string(i) +
                                        " where omega1 > 0");
            p.log_phi[i] = std::log(m.omega1.values[i]) - log_h[i];
        } else {
            p.log_phi[i] = neg_inf;
        }
        a[i] = k.x_grid()->log_weights()[i] + p.log_phi[i];
    }
    std::vector<double> den(k.cols());
    k.log_matrix().col_reduce(a, den);
    for (std::size_t j = 0; j < k.cols(); ++j) {
        if (m.omega2.values[j] > 0.0) {
            if (den[j] == neg_inf)
                throw hypothesis_failure("extract_potentials: int g phi vanishes at y-node " + std::to_string(j) +
                                         " where omega2 > 0");
            p.log_psi[j] = std::log(m.omega2.values[j]) - den[j];
        } else {
            p.log_psi[j] = neg_inf;
        }
    }
    return p;
}

/// Sup-norm residuals of both equations of the Schroedinger system.
inline SystemResiduals verify_system(const PotentialPair& p, const KernelOperator& k, const MarginalPair& m) {
    require_compatible(k, m);
    if (p.log_phi.size() != k.rows() || p.log_psi.size() != k.cols())
        throw invalid_input("verify_system: potentials do not match the kernel shape");
    std::vector<double> b(k.cols()), a(k.rows()), row(k.rows()), col(k.cols());
    for (std::size_t j = 0; j < k.cols(); ++j) b[j] = k.y_grid()->log_weights()[j] + p.log_psi[j];
    for (std::size_t i = 0; i < k.rows(); ++i) a[i] = k.x_grid()->log_weights()[i] + p.log_phi[i];
    k.log_matrix().row_reduce(b, row);
    k.log_matrix().col_reduce(a, col);
    SystemResiduals r;
    std::vector<double> mass_terms(k.rows());
    for (std::size_t i = 0; i < k.rows(); ++i) {
        const double lhs = std::exp(p.log_phi[i] + row[i]);
        r.s1_resid = std::max(r.s1_resid, std::abs(lhs - m.omega1.values[i]));
        mass_terms[i] = a[i] + row[i];
    }
    for (std::size_t j = 0; j < k.cols(); ++j) {
        const double lhs = std::exp(p.log_psi[j] + col[j]);
        r.s2_resid = std::max(r.s2_resid, std::abs(lhs - m.omega2.values[j]));
    }
    r.marginal_resid = std::abs(std::exp(log_sum_exp(mass_terms)) - 1.0);
    return r;
}

struct UniquenessReport {
    double ratio_spread_phi = 0.0;
    double ratio_spread_psi = 0.0;
    double constant = 1.0;         ///< median of phi_a / phi_b
    double constant_product = 1.0; ///< median(c_phi) * median(psi_a / psi_b)
    bool consistent = false;
};

/// Ray comparison of two potential pairs of the same problem:
/// (phi_a, psi_a) = (c phi_b, psi_b / c) for one c > 0.
inline UniquenessReport verify_uniqueness(const PotentialPair& a, const PotentialPair& b, const MarginalPair& m,
                                          double threshold = 1e-12, double tol = 1e-8) {
    if (a.log_phi.size() != b.log_phi.size() || a.log_psi.size() != b.log_psi.size() ||
        a.log_phi.size() != m.omega1.size() || a.log_psi.size() != m.omega2.size())
        throw invalid_input("verify_uniqueness: potentials of different problems");
    auto spread = [](const std::vector<double>& logs, double& med) {
        if (logs.empty()) {
            med = 0.0;
            return std::numeric_limits<double>::infinity();
        }
        med = median(logs);
        const auto [lo, hi] = std::minmax_element(logs.begin(), logs.end());
        return std::exp(*hi - med) - std::exp(*lo - med);
    };
    std::vector<double> lphi, lpsi;
    for (std::size_t i = 0; i < m.omega1.size(); ++i)
        if (m.omega1.values[i] > threshold) lphi.push_back(a.log_phi[i] - b.log_phi[i]);
    for (std::size_t j = 0; j < m.omega2.size(); ++j)
        if (m.omega2.values[j] > threshold) lpsi.push_back(b.log_psi[j] - a.log_psi[j]);
    UniquenessReport r;
    double mphi = 0.0, mpsi = 0.0;
    r.ratio_spread_phi = spread(lphi, mphi);
    r.ratio_spread_psi = spread(lpsi, mpsi);
    r.constant = std::exp(mphi);
    r.constant_product = std::exp(mphi - mpsi);
    const bool finite = std::isfinite(r.ratio_spread_phi) && std::isfinite(r.ratio_spread_psi);
    r.consistent = finite && r.ratio_spread_phi < tol && r.ratio_spread_psi < tol &&
                   std::abs(r.constant_product - 1.0) <= tol;
    return r;
}

using IterationObserver = std::function<void(const IterationState&)>;

namespace detail {

/// Ray rescale so that max h = 1 when it exceeds 1.
inline void clamp_ray(std::vector<double>& log_h) {
    double mx = neg_inf;
    for (double v : log_h) mx = std::max(mx, v);
    if (mx > 0.0)
        for (double& v : log_h) v -= mx;
}

inline void require_hypotheses(const KernelOperator& k, const MarginalPair& m) {
    const FeasibilityReport rep = check_assumptions_H(k, m);
    for (const auto& h : rep.hypotheses_h)
        if (h.hard_failure()) {
            std::string msg = "hypothesis " + h.id + " fails";
            if (!h.offending.empty()) {
                msg += " at index";
                for (std::size_t q = 0; q < std::min<std::size_t>(h.offending.size(), 8); ++q)
                    msg += " " + std::to_string(h.offending[q]);
                if (h.offending.size() > 8) msg += " ...";
            }
            if (!h.note.empty()) msg += " (" + h.note + ")";
            throw hypothesis_failure(msg);
        }
}

} // namespace detail

/// Runs the truncated scheme until Case 1, Case 2 or collapse is detected.
inline FortetSolution run_fortet(const KernelOperator& k, const MarginalPair& m, const FortetOptions& opts = {},
                                 const IterationObserver& observer = {}) {
    if (!(opts.tol > 0.0)) throw invalid_input("tolerance must be positive");
    if (opts.max_iter < 1) throw invalid_input("max_iter must be >= 1");
    if (opts.check_hypotheses) detail::require_hypotheses(k, m);
    const OmegaMap om(k, m);
    const auto w1 = k.x_grid()->weights();

    FortetSolution sol;
    IterationState prev;
    bool have_prev = false;
    for (std::size_t n = 1; n <= opts.max_iter; ++n) {
        IterationState cur = fortet_step(have_prev ? &prev : nullptr, om, opts);
        sol.trace.push_back(cur.diagnostics);
        if (observer) observer(cur);
        sol.iterations = n;

        const double log_deg = std::log(opts.degenerate_threshold);
        if (std::all_of(cur.log_H_prime.begin(), cur.log_H_prime.end(), [&](double v) { return v < log_deg; })) {
            sol.case_tag = CaseTag::degenerate;
            sol.log_h = cur.log_H_prime;
            return sol;
        }

        if (cur.diagnostics.case1_candidate) {
            // K_p = max(H'_{n0}, eps_p), K'_p = Omega(K_p), p doubling from n0 + 1
            sol.case_tag = CaseTag::case1;
            sol.n0 = n;
            const std::vector<double>& hp = cur.log_H_prime;
            double min_hp = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < hp.size(); ++i)
                if (om.omega1_positive()[i]) min_hp = std::min(min_hp, hp[i]);
            std::vector<double> kp(hp.size()), kprime, last;
            double p = static_cast<double>(n + 1);
            for (;;) {
                const double lf = opts.floor.log_floor(p);
                for (std::size_t i = 0; i < hp.size(); ++i) kp[i] = std::max(hp[i], lf);
                kprime = om(kp);
                ++sol.refinement_evaluations;
                if (lf <= min_hp) break; // K_p = H'_{n0} on the support: the limit is reached
                if (!last.empty() && detail::sup_abs_change(kprime, last) < opts.tol) break;
                last = kprime;
                p *= 2.0;
                if (sol.refinement_evaluations > 4096)
                    throw non_convergence("Case-1 refinement did not settle", sol.trace, kprime);
            }
            sol.log_h = std::move(kprime);
            detail::clamp_ray(sol.log_h);
            break;
        }

        if (have_prev && cur.diagnostics.sup_change < opts.tol) {
            sol.case_tag = CaseTag::case2;
            CompensatedSum jw;
            for (std::size_t i = 0; i < cur.log_H_prime.size(); ++i)
                if (cur.log_H_prime[i] > std::log1p(opts.jset_eps)) jw.add(w1[i]);
            if (jw.value() >= opts.tol)
                throw hypothesis_failure("Case-2 limit keeps {H' > 1} at quadrature weight " +
                                         std::to_string(jw.value()));
            sol.log_h = cur.log_H_prime;
            detail::clamp_ray(sol.log_h);
            break;
        }
        prev = std::move(cur);
        have_prev = true;
        if (n == opts.max_iter)
            throw non_convergence("no termination after " + std::to_string(n) + " iterations", sol.trace,
                                  prev.log_H_prime);
    }
    sol.potentials = extract_potentials(sol.log_h, k, m);
    sol.residuals = verify_system(sol.potentials, k, m);
    return sol;
}

} // namespace fortet
