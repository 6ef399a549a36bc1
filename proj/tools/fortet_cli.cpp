#include <CLI11.hpp>

#include <iostream>

#include "fortet/cli.hpp"

namespace cli = fortet::cli;

int main(int argc, char** argv) {
    CLI::App app{"Schroedinger system solver: Fortet iteration, Sinkhorn baseline, bridge diagnostics"};
    app.require_subcommand(1);

    std::string config;
    bool swap = false;

    auto* check = app.add_subcommand("check", "Validate a problem and print the feasibility report as JSON");
    check->add_option("config", config, "problem JSON")->required();
    check->add_flag("--swap", swap, "exchange the two marginals first");

    cli::SolveOptions so;
    std::string trace, out, pots;
    auto* solve = app.add_subcommand("solve", "Solve for the potentials and write a run summary");
    solve->add_option("config", so.config, "problem JSON")->required();
    solve->add_option("--solver", so.solver, "fortet or sinkhorn")->capture_default_str();
    solve->add_option("--tol", so.tol, "stopping tolerance")->capture_default_str();
    solve->add_option("--max-iter", so.max_iter, "iteration cap")->capture_default_str();
    solve->add_option("--trace", trace, "per-iteration CSV");
    solve->add_option("--out", out, "summary JSON (stdout when omitted)");
    solve->add_option("--potentials", pots, "potentials CSV (default: <out>.potentials.csv)");
    solve->add_option("--floor", so.floor, "floor schedule: geometric or harmonic")->capture_default_str();
    solve->add_option("--floor-ratio", so.floor_ratio, "ratio of the geometric floor")->capture_default_str();
    solve->add_flag("--force", so.force, "solve even when condition (*) looks divergent");
    solve->add_flag("--swap", so.swap, "exchange the two marginals first");

    cli::InterpolateOptions io;
    std::string iout;
    auto* interp = app.add_subcommand("interpolate", "Evaluate the bridge marginals rho_t as CSV");
    interp->add_option("config", io.config, "problem JSON")->required();
    interp->add_option("potentials", io.potentials, "potentials CSV from solve")->required();
    interp->add_option("--t-list", io.t_list, "comma-separated times in [0, 1]")->required();
    interp->add_option("--out", iout, "output CSV (stdout when omitted)");
    interp->add_flag("--swap", io.swap, "the potentials belong to the swapped problem");

    cli::DiagnoseOptions dopt;
    auto* diag = app.add_subcommand("diagnose", "Birkhoff contraction bound versus observed Sinkhorn contraction");
    diag->add_option("config", dopt.config, "problem JSON")->required();
    diag->add_option("--tol", dopt.tol, "Sinkhorn tolerance")->capture_default_str();
    diag->add_option("--max-iter", dopt.max_iter, "Sinkhorn iteration cap")->capture_default_str();

    cli::CompareOptions copt;
    auto* cmp = app.add_subcommand("compare", "Ray comparison of two solve summaries");
    cmp->add_option("summary_a", copt.summary_a)->required();
    cmp->add_option("summary_b", copt.summary_b)->required();
    cmp->add_option("--tol", copt.tol, "spread tolerance")->capture_default_str();
    cmp->add_option("--threshold", copt.threshold, "marginal mask threshold")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::exit_code::io;
    }

    if (*check) return cli::cmd_check(config, swap, std::cout, std::cerr);
    if (*solve) {
        if (!trace.empty()) so.trace = trace;
        if (!out.empty()) so.out = out;
        if (!pots.empty()) so.potentials = pots;
        return cli::cmd_solve(so, std::cout, std::cerr);
    }
    if (*interp) {
        if (!iout.empty()) io.out = iout;
        return cli::cmd_interpolate(io, std::cout, std::cerr);
    }
    if (*diag) return cli::cmd_diagnose(dopt, std::cout, std::cerr);
    if (*cmp) return cli::cmd_compare(copt, std::cout, std::cerr);
    return cli::exit_code::io;
}
