#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fortet/bridge.hpp"
#include "fortet/feasibility.hpp"
#include "fortet/fortet_solver.hpp"
#include "fortet/hilbert.hpp"
#include "fortet/io.hpp"
#include "fortet/sinkhorn.hpp"

namespace fortet::cli {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int io = 1;
inline constexpr int hypothesis = 2;
inline constexpr int nonconvergence = 3;
} // namespace exit_code

using io::json;
namespace fs = std::filesystem;

inline json check_json(const HypothesisCheck& h) {
    json j;
    j["id"] = h.id;
    j["status"] = to_string(h.status);
    std::vector<std::size_t> first(h.offending.begin(),
                                   h.offending.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(h.offending.size(), 64)));
    j["offending"] = first;
    j["offending_count"] = h.offending.size();
    j["note"] = h.note;
    return j;
}

inline json star_json(const ConditionStar& cs) {
    return json{{"estimate", io::num(cs.estimate)},
                {"verdict", to_string(cs.verdict)},
                {"tail_exponent", io::num(cs.tail_exponent)},
                {"zero_denominator_nodes", cs.zero_denominator_nodes}};
}

inline json report_json(const FeasibilityReport& r, const io::Problem& pb) {
    json j;
    j["problem_hash"] = pb.hash;
    j["swapped"] = pb.swapped;
    json hs = json::array();
    for (const auto& h : r.hypotheses_h) hs.push_back(check_json(h));
    j["hypotheses_h"] = hs;
    j["hard_checks_passed"] = r.hard_checks_passed();
    j["condition_star"] = star_json(r.condition_star);
    j["swap_recommended"] = r.swap_recommended;
    const auto& t2 = r.theorem2_difference_kernel;
    j["theorem2_difference_kernel"] = json{{"status", to_string(t2.status)},
                                           {"condition", t2.condition},
                                           {"T1", io::num(t2.T1)},
                                           {"T2", io::num(t2.T2)},
                                           {"note", t2.note}};
    // closed-form integrability test when every ingredient is a centered 1-D Gaussian
    const auto& cfg = pb.config;
    if (pb.kernel.is_heat_kernel() && pb.grid->dim() == 1 && cfg["marginals"][0]["type"] == "gaussian" &&
        cfg["marginals"][1]["type"] == "gaussian") {
        double s = std::sqrt(pb.kernel.covariance()(0, 0));
        double s1 = cfg["marginals"][0]["params"]["sigma"].get<double>();
        double s2 = cfg["marginals"][1]["params"]["sigma"].get<double>();
        if (pb.swapped) std::swap(s1, s2);
        j["bernstein"] = json{{"value", s * s + s1 * s1 - s2 * s2},
                              {"holds", bernstein_gaussian_condition(s, s1, s2)},
                              {"holds_swapped", bernstein_gaussian_condition(s, s2, s1)}};
    }
    return j;
}

/// Maps library exceptions to the exit-code contract and prints the message.
template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const io_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::io;
    } catch (const invalid_input& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::io;
    } catch (const hypothesis_failure& e) {
        err << "hypothesis failure: " << e.what() << "\n";
        return exit_code::hypothesis;
    } catch (const numerical_failure& e) {
        err << "numerical failure: " << e.what() << "\n";
        return exit_code::nonconvergence;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::io;
    }
}

inline int cmd_check(const fs::path& config, bool swap, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        io::Problem pb = io::load_problem(config);
        if (swap) pb = pb.swapped_problem();
        const FeasibilityReport r = feasibility_report(pb.kernel, pb.marginals);
        out << report_json(r, pb).dump(2) << "\n";
        return r.hard_checks_passed() ? exit_code::ok : exit_code::hypothesis;
    });
}

struct SolveOptions {
    fs::path config;
    std::string solver = "fortet";
    double tol = 1e-10;
    std::size_t max_iter = 10000;
    std::optional<fs::path> trace;
    std::optional<fs::path> out;
    std::optional<fs::path> potentials;
    bool force = false;
    bool swap = false;
    std::string floor = "geometric";
    double floor_ratio = 1e-6;
};

inline int cmd_solve(const SolveOptions& o, std::ostream& out, std::ostream& err) {
    const auto started = std::chrono::steady_clock::now();
    return guarded(err, [&] {
        if (o.solver != "fortet" && o.solver != "sinkhorn")
            throw io_error("--solver must be fortet or sinkhorn");
        io::Problem pb = io::load_problem(o.config);
        if (o.swap) pb = pb.swapped_problem();

        FortetOptions fo;
        fo.tol = o.tol;
        fo.max_iter = o.max_iter;
        if (o.floor == "harmonic")
            fo.floor = FloorSchedule::harmonic();
        else if (o.floor == "geometric")
            fo.floor = FloorSchedule::geometric(o.floor_ratio);
        else
            throw io_error("--floor must be geometric or harmonic");

        json s;
        s["problem_hash"] = pb.hash;
        s["config"] = fs::weakly_canonical(fs::absolute(o.config)).string();
        s["solver"] = o.solver;
        s["swapped"] = pb.swapped;
        s["status"] = "ok";
        s["message"] = "";
        s["case_tag"] = "none";
        s["n0"] = nullptr;
        s["iterations"] = 0;
        s["refinement_evaluations"] = 0;
        s["final_change"] = nullptr;
        s["residuals"] = json{{"s1_resid", nullptr}, {"s2_resid", nullptr}, {"marginal_resid", nullptr}};
        s["options"] = json{{"tol", o.tol},
                            {"max_iter", o.max_iter},
                            {"case1_eps", fo.case1_eps},
                            {"degenerate_threshold", fo.degenerate_threshold},
                            {"jset_eps", fo.jset_eps},
                            {"floor", to_string(fo.floor)},
                            {"force", o.force},
                            {"grid", json{{"dim", pb.grid->dim()},
                                          {"radius", pb.radius},
                                          {"points_per_axis", pb.points},
                                          {"rule", pb.rule},
                                          {"radius_setting", pb.config["grid"].value("radius", json("explicit"))}}}};
        s["potentials"] = nullptr;
        s["trace"] = o.trace ? json(o.trace->filename().string()) : json(nullptr);

        const FeasibilityReport rep = feasibility_report(pb.kernel, pb.marginals);
        s["condition_star"] = star_json(rep.condition_star);
        s["swap_recommended"] = rep.swap_recommended;

        std::string trace_text = io::trace_csv({});
        std::optional<PotentialPair> pots;
        int code = exit_code::ok;

        auto set_residuals = [&](const SystemResiduals& r) {
            s["residuals"] = json{{"s1_resid", io::num(r.s1_resid)},
                                  {"s2_resid", io::num(r.s2_resid)},
                                  {"marginal_resid", io::num(r.marginal_resid)}};
        };

        if (!rep.hard_checks_passed()) {
            std::string failed;
            for (const auto& h : rep.hypotheses_h)
                if (h.hard_failure()) failed += (failed.empty() ? "" : ", ") + h.id;
            s["status"] = "hypothesis-failure";
            s["message"] = "failed checks: " + failed;
            code = exit_code::hypothesis;
        } else if (rep.condition_star.verdict == StarVerdict::suspected_divergent && !o.force) {
            s["status"] = "hypothesis-failure";
            s["message"] = std::string("condition (*) suspected divergent") +
                           (rep.swap_recommended ? "; swapping the marginals makes it finite (use --swap)" : "") +
                           "; --force overrides";
            code = exit_code::hypothesis;
        } else if (o.solver == "fortet") {
            try {
                const FortetSolution sol = run_fortet(pb.kernel, pb.marginals, fo);
                trace_text = io::trace_csv(sol.trace);
                s["case_tag"] = sol.case_label();
                s["n0"] = sol.case_tag == CaseTag::case1 ? json(sol.n0) : json(nullptr);
                s["iterations"] = sol.iterations;
                s["refinement_evaluations"] = sol.refinement_evaluations;
                s["final_change"] = io::num(sol.trace.back().sup_change);
                if (sol.case_tag != CaseTag::degenerate) {
                    set_residuals(sol.residuals);
                    pots = sol.potentials;
                } else {
                    s["message"] = "H' collapsed below the degeneracy threshold";
                }
            } catch (const non_convergence& e) {
                trace_text = io::trace_csv(e.trace());
                s["status"] = "non-converged";
                s["message"] = e.what();
                s["iterations"] = e.trace().size();
                s["final_change"] = e.trace().empty() ? json(nullptr) : io::num(e.trace().back().sup_change);
                try {
                    const PotentialPair p = extract_potentials(e.last_log_h(), pb.kernel, pb.marginals);
                    set_residuals(verify_system(p, pb.kernel, pb.marginals));
                } catch (const error&) {
                }
                code = exit_code::nonconvergence;
            } catch (const hypothesis_failure& e) {
                s["status"] = "hypothesis-failure";
                s["message"] = e.what();
                code = exit_code::hypothesis;
            } catch (const numerical_failure& e) {
                s["status"] = "numerical-failure";
                s["message"] = e.what();
                code = exit_code::nonconvergence;
            }
        } else {
            SinkhornOptions so;
            so.tol = o.tol;
            so.max_iter = o.max_iter;
            so.record_hilbert = true;
            try {
                const ScalingPair sp = run_sinkhorn(pb.kernel, pb.marginals, so);
                std::vector<IterationDiagnostics> tr;
                for (std::size_t q = 0; q < sp.trace.size(); ++q) {
                    IterationDiagnostics d;
                    d.n = sp.trace[q].k;
                    d.sup_change = q == 0 ? std::numeric_limits<double>::quiet_NaN() : sp.trace[q].change;
                    d.hilbert_step = q == 0 ? std::numeric_limits<double>::quiet_NaN() : sp.hilbert_steps[q - 1];
                    tr.push_back(d);
                }
                trace_text = io::trace_csv(tr);
                s["iterations"] = sp.iterations;
                s["final_change"] = io::num(sp.final_change);
                s["log_domain"] = sp.log_domain;
                pots = sp.potentials();
                set_residuals(verify_system(*pots, pb.kernel, pb.marginals));
            } catch (const hypothesis_failure& e) {
                s["status"] = "hypothesis-failure";
                s["message"] = e.what();
                code = exit_code::hypothesis;
            } catch (const numerical_failure& e) {
                s["status"] = "non-converged";
                s["message"] = e.what();
                code = exit_code::nonconvergence;
            }
        }

        if (o.trace) io::write_file(*o.trace, trace_text);
        if (pots) {
            std::optional<fs::path> ppath = o.potentials;
            if (!ppath && o.out) ppath = fs::path(o.out->string() + ".potentials.csv");
            if (ppath) {
                io::write_file(*ppath, io::potentials_csv(*pots));
                const fs::path base = o.out ? fs::absolute(*o.out).parent_path() : fs::current_path();
                s["potentials"] = fs::absolute(*ppath).lexically_relative(base).string();
            }
        }
        const std::string text = s.dump(2) + "\n";
        if (o.out)
            io::write_file(*o.out, text);
        else
            out << text;
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        err << "wall_time_s=" << io::fmt_double(wall) << "\n";
        if (code != exit_code::ok) err << s["status"].get<std::string>() << ": " << s["message"].get<std::string>() << "\n";
        return code;
    });
}

struct InterpolateOptions {
    fs::path config;
    fs::path potentials;
    std::string t_list;
    std::optional<fs::path> out;
    bool swap = false;
};

inline std::vector<double> parse_t_list(const std::string& text) {
    std::vector<double> ts;
    for (const auto& cell : io::split_csv_line(text)) {
        if (cell.empty()) continue;
        const double t = io::parse_number(cell, "--t-list");
        if (!(t >= 0.0 && t <= 1.0)) throw io_error("--t-list: " + cell + " is outside [0, 1]");
        ts.push_back(t);
    }
    if (ts.empty()) throw io_error("--t-list is empty");
    return ts;
}

inline int cmd_interpolate(const InterpolateOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const std::vector<double> ts = parse_t_list(o.t_list);
        io::Problem pb = io::load_problem(o.config);
        if (o.swap) pb = pb.swapped_problem();
        if (!pb.kernel.is_heat_kernel()) throw hypothesis_failure("interpolation needs a Gaussian heat kernel");
        const PotentialPair p = io::read_potentials(o.potentials, pb.grid, pb.grid);
        const int d = pb.grid->dim();
        std::string csv = "t";
        if (d == 1) {
            csv += ",x";
        } else {
            for (int a = 0; a < d; ++a) csv += ",x" + std::to_string(a);
        }
        csv += ",rho,renormalization_factor\n";
        for (double t : ts) {
            const DensityField rho = entropic_interpolation(p, pb.kernel, pb.marginals, t);
            const std::string tf = io::fmt_double(t);
            const std::string ff = io::fmt_double(rho.raw_mass);
            for (std::size_t i = 0; i < rho.size(); ++i) {
                csv += tf;
                for (int a = 0; a < d; ++a) csv += "," + io::fmt_double(pb.grid->coordinate(i, a));
                csv += "," + io::fmt_double(rho.values[i]) + "," + ff + "\n";
            }
        }
        if (o.out)
            io::write_file(*o.out, csv);
        else
            out << csv;
        return exit_code::ok;
    });
}

/// Successive ratios d_{k+1}/d_k of a Hilbert-step sequence from the
/// second step on, skipping steps at rounding level.
inline std::vector<double> observed_ratios(const std::vector<double>& steps, double floor = 1e-7) {
    std::vector<double> r;
    for (std::size_t k = 1; k + 1 < steps.size(); ++k)
        if (steps[k] > floor && steps[k + 1] > floor) r.push_back(steps[k + 1] / steps[k]);
    return r;
}

struct DiagnoseOptions {
    fs::path config;
    double tol = 1e-12;
    std::size_t max_iter = 100000;
};

inline int cmd_diagnose(const DiagnoseOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const io::Problem pb = io::load_problem(o.config);
        const auto& lm = pb.kernel.log_matrix();
        const ProjectiveDiameter pd = projective_diameter_log(lm.rows, lm.cols, lm.values);
        const Contraction c = birkhoff_contraction(pd);
        SinkhornOptions so;
        so.tol = o.tol;
        so.max_iter = o.max_iter;
        so.record_hilbert = true;
        const ScalingPair sp = run_sinkhorn(pb.kernel, pb.marginals, so);
        const std::vector<double> ratios = observed_ratios(sp.hilbert_steps);
        double observed = 0.0;
        for (double r : ratios) observed = std::max(observed, r);
        // least-squares slope of log d_H over the steps above the noise floor
        double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
        for (std::size_t k = 0; k < sp.hilbert_steps.size(); ++k) {
            if (!(sp.hilbert_steps[k] > 1e-7)) continue;
            const double x = static_cast<double>(k), y = std::log(sp.hilbert_steps[k]);
            sx += x, sy += y, sxx += x * x, sxy += x * y, n += 1;
        }
        json fitted = nullptr;
        if (n >= 2 && n * sxx - sx * sx > 0) fitted = std::exp((n * sxy - sx * sy) / (n * sxx - sx * sx));
        json j;
        j["problem_hash"] = pb.hash;
        j["projective_diameter"] = io::num(pd.value);
        j["diameter_infinite"] = pd.infinite;
        j["diameter_exact"] = pd.exact;
        j["birkhoff_ratio"] = c.ratio;
        j["guarantee"] = c.guaranteed ? "contraction" : "no-guarantee";
        j["observed_ratio"] = observed;
        j["observed_ratio_count"] = ratios.size();
        j["fitted_ratio"] = fitted;
        j["bound_satisfied"] = observed <= c.ratio + 1e-9;
        j["sinkhorn_iterations"] = sp.iterations;
        out << j.dump(2) << "\n";
        return exit_code::ok;
    });
}

struct CompareOptions {
    fs::path summary_a;
    fs::path summary_b;
    double tol = 1e-8;
    double threshold = 1e-12;
};

inline int cmd_compare(const CompareOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto load = [](const fs::path& p) {
            try {
                return json::parse(io::read_file(p));
            } catch (const json::parse_error& e) {
                throw io_error(p.string() + ": " + e.what());
            }
        };
        const json a = load(o.summary_a);
        const json b = load(o.summary_b);
        if (a.at("problem_hash") != b.at("problem_hash") || a.value("swapped", false) != b.value("swapped", false))
            throw io_error("summaries describe different problems");
        if (a.at("potentials").is_null() || b.at("potentials").is_null())
            throw io_error("both summaries need a potentials file");
        io::Problem pb = io::load_problem(a.at("config").get<std::string>());
        if (pb.hash != a.at("problem_hash").get<std::string>())
            throw io_error("problem definition changed since the summaries were written");
        if (a.value("swapped", false)) pb = pb.swapped_problem();
        auto pots = [&](const fs::path& summary, const json& s) {
            return io::read_potentials(fs::absolute(summary).parent_path() / s.at("potentials").get<std::string>(),
                                       pb.grid, pb.grid);
        };
        const UniquenessReport u =
            verify_uniqueness(pots(o.summary_a, a), pots(o.summary_b, b), pb.marginals, o.threshold, o.tol);
        json j;
        j["problem_hash"] = pb.hash;
        j["solvers"] = {a.at("solver"), b.at("solver")};
        j["ratio_spread_phi"] = io::num(u.ratio_spread_phi);
        j["ratio_spread_psi"] = io::num(u.ratio_spread_psi);
        j["constant"] = io::num(u.constant);
        j["constant_product"] = io::num(u.constant_product);
        j["consistent"] = u.consistent;
        out << j.dump(2) << "\n";
        return u.consistent ? exit_code::ok : exit_code::hypothesis;
    });
}

} // namespace fortet::cli
