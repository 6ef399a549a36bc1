#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fortet/error.hpp"
#include "fortet/fortet_solver.hpp"
#include "fortet/grid.hpp"
#include "fortet/problem.hpp"

namespace fortet::io {

using json = nlohmann::json;

/// Shortest round-trip decimal form; "inf"/"-inf"/"nan" spelled out.
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

/// JSON number, or null when not finite.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw io_error("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw io_error("write to '" + p.string() + "' failed");
}

/// Splits one CSV line honoring RFC-4180 double quotes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else if (c != '\r') {
            out.back() += c;
        }
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name, const std::string& where) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return c;
        throw io_error(where + ": missing column '" + name + "'");
    }
};

inline CsvTable parse_csv(const std::string& text, const std::string& where) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw io_error(where + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                           " fields, found " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) throw io_error(where + ": empty CSV file");
    return t;
}

inline double parse_number(const std::string& s, const std::string& where) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw io_error(where + ": '" + s + "' is not a number");
    return v;
}

/// A loaded problem: shared grid, kernel, marginals and bookkeeping.
struct Problem {
    std::filesystem::path config_path;
    json config;
    GridPtr grid;
    KernelOperator kernel;
    MarginalPair marginals;
    std::string hash;
    double radius = 0.0;
    std::size_t points = 0;
    std::string rule;
    bool swapped = false;

    /// Same problem with omega1/omega2 exchanged and the kernel transposed.
    [[nodiscard]] Problem swapped_problem() const {
        Problem p = *this;
        p.kernel = kernel.transposed();
        p.marginals = marginals.swapped();
        p.swapped = !swapped;
        return p;
    }
};

namespace detail {

inline const json& field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw io_error(where + ": missing field '" + key + "'");
    return j.at(key);
}

inline double number_field(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    if (!v.is_number()) throw io_error(where + "." + key + ": expected a number");
    return v.get<double>();
}

inline std::string string_field(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    if (!v.is_string()) throw io_error(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

inline std::vector<double> number_array(const json& v, const std::string& where) {
    if (!v.is_array()) throw io_error(where + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw io_error(where + "[" + std::to_string(i) + "]: expected a number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

inline Eigen::MatrixXd matrix_field(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) throw io_error(where + ": expected a non-empty matrix");
    const auto n = static_cast<Eigen::Index>(v.size());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto row = number_array(v[static_cast<std::size_t>(r)], where + "[" + std::to_string(r) + "]");
        if (static_cast<Eigen::Index>(row.size()) != n) throw io_error(where + ": matrix must be square");
        for (Eigen::Index c = 0; c < n; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
    }
    return m;
}

/// Largest standard deviation a Gaussian marginal spec implies.
inline double marginal_scale(const json& mj) {
    if (!mj.is_object() || !mj.contains("type") || !mj.contains("params")) return 0.0;
    const auto& p = mj.at("params");
    if (mj.at("type") == "gaussian" && p.contains("sigma") && p.at("sigma").is_number())
        return std::abs(p.at("sigma").get<double>()) + (p.contains("mean") && p.at("mean").is_number()
                                                            ? std::abs(p.at("mean").get<double>()) / 6.5
                                                            : 0.0);
    if (mj.at("type") == "gaussian_multivariate" && p.contains("Sigma")) {
        double s = 0.0;
        for (const auto& row : p.at("Sigma"))
            for (const auto& v : row)
                if (v.is_number()) s = std::max(s, std::sqrt(std::abs(v.get<double>())));
        return s;
    }
    return 0.0;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& rel) {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : base / p;
}

} // namespace detail

/// Builds a problem from parsed JSON; relative table paths resolve against base_dir.
inline Problem load_problem_json(const json& cfg, const std::filesystem::path& base_dir,
                                 const std::filesystem::path& config_path = {}) {
    using namespace detail;
    Problem pb;
    pb.config_path = config_path;
    pb.config = cfg;
    std::string hash_input = cfg.dump();

    // grid
    const json& gj = field(cfg, "grid", "config");
    GridPtr grid;
    if (gj.contains("nodes")) {
        auto nodes = number_array(gj.at("nodes"), "grid.nodes");
        std::vector<double> weights = gj.contains("weights") ? number_array(gj.at("weights"), "grid.weights")
                                                             : std::vector<double>(nodes.size(), 1.0);
        try {
            grid = make_grid(std::move(nodes), std::move(weights));
        } catch (const invalid_input& e) {
            throw io_error(std::string("grid: ") + e.what());
        }
        pb.rule = "explicit";
    } else {
        GridSpec spec;
        spec.dim = gj.contains("dim") ? static_cast<int>(number_field(gj, "dim", "grid")) : 1;
        const double pts = number_field(gj, "points", "grid");
        if (!(pts >= 2) || pts != std::floor(pts)) throw io_error("grid.points: expected an integer >= 2");
        spec.points_per_axis = static_cast<std::size_t>(pts);
        spec.rule = QuadratureRule::trapezoid;
        if (gj.contains("rule")) {
            try {
                spec.rule = parse_rule(string_field(gj, "rule", "grid"));
            } catch (const invalid_input& e) {
                throw io_error(std::string("grid.rule: ") + e.what());
            }
        }
        const json& rj = field(gj, "radius", "grid");
        if (rj.is_string() && rj.get<std::string>() == "auto") {
            double s = 0.0;
            if (cfg.contains("marginals") && cfg.at("marginals").is_array())
                for (const auto& mj : cfg.at("marginals")) s = std::max(s, marginal_scale(mj));
            if (!(s > 0.0)) throw io_error("grid.radius: \"auto\" needs at least one Gaussian marginal");
            spec.radius = 6.5 * s;
        } else if (rj.is_number()) {
            spec.radius = rj.get<double>();
        } else {
            throw io_error("grid.radius: expected a number or \"auto\"");
        }
        try {
            grid = make_grid(spec);
        } catch (const invalid_input& e) {
            throw io_error(std::string("grid: ") + e.what());
        }
        pb.rule = to_string(spec.rule);
    }
    pb.grid = grid;
    pb.radius = grid->radius();
    pb.points = grid->points_per_axis();

    // marginals
    const json& mj = field(cfg, "marginals", "config");
    if (!mj.is_array() || mj.size() != 2) throw io_error("marginals: expected an array of two entries");
    std::vector<DensityField> dens;
    for (std::size_t s = 0; s < 2; ++s) {
        const std::string where = "marginals[" + std::to_string(s) + "]";
        const json& e = mj[s];
        const std::string type = string_field(e, "type", where);
        try {
            if (type == "gaussian") {
                const json& p = field(e, "params", where);
                const double sigma = number_field(p, "sigma", where + ".params");
                const double mean = p.contains("mean") ? number_field(p, "mean", where + ".params") : 0.0;
                dens.push_back(gaussian_density(grid, mean, sigma));
            } else if (type == "gaussian_multivariate") {
                const json& p = field(e, "params", where);
                const Eigen::MatrixXd S = matrix_field(field(p, "Sigma", where + ".params"), where + ".params.Sigma");
                Eigen::VectorXd mean = Eigen::VectorXd::Zero(S.rows());
                if (p.contains("mean")) {
                    const auto mv = number_array(p.at("mean"), where + ".params.mean");
                    if (static_cast<Eigen::Index>(mv.size()) != S.rows())
                        throw io_error(where + ".params.mean: wrong length");
                    for (std::size_t q = 0; q < mv.size(); ++q) mean[static_cast<Eigen::Index>(q)] = mv[q];
                }
                dens.push_back(gaussian_density(grid, mean, S));
            } else if (type == "uniform") {
                dens.push_back(uniform_density(grid));
            } else if (type == "table") {
                if (e.contains("values")) {
                    auto v = number_array(e.at("values"), where + ".values");
                    dens.push_back(DensityField::from_values(grid, std::move(v), true));
                } else {
                    const auto path = resolve(base_dir, string_field(e, "path", where));
                    const std::string text = read_file(path);
                    hash_input += text;
                    const CsvTable t = parse_csv(text, path.string());
                    const std::size_t cx = t.column("x", path.string());
                    const std::size_t cv = t.column("value", path.string());
                    std::vector<double> xs, ys;
                    for (std::size_t r = 0; r < t.rows.size(); ++r) {
                        const std::string at = path.string() + ":" + std::to_string(r + 2);
                        xs.push_back(parse_number(t.rows[r][cx], at));
                        ys.push_back(parse_number(t.rows[r][cv], at));
                    }
                    dens.push_back(tabulated_density(grid, xs, ys));
                }
            } else if (type == "pushforward") {
                if (s != 1) throw io_error(where + ": pushforward is only valid for the second marginal");
                dens.emplace_back(); // filled once the kernel exists
            } else {
                throw io_error(where + ".type: unknown marginal type '" + type + "'");
            }
        } catch (const invalid_input& ex) {
            throw io_error(where + ": " + ex.what());
        }
    }

    // kernel
    const json& kj = field(cfg, "kernel", "config");
    const std::string ktype = string_field(kj, "type", "kernel");
    try {
        if (ktype == "gaussian") {
            pb.kernel = KernelOperator::gaussian(grid, grid, number_field(kj, "sigma", "kernel"));
        } else if (ktype == "gaussian_multivariate") {
            pb.kernel = KernelOperator::gaussian_multivariate(grid, grid, matrix_field(field(kj, "Sigma", "kernel"), "kernel.Sigma"));
        } else if (ktype == "table") {
            std::vector<double> vals;
            const std::size_t n = grid->size();
            if (kj.contains("values")) {
                const json& v = kj.at("values");
                if (!v.is_array() || v.size() != n) throw io_error("kernel.values: expected " + std::to_string(n) + " rows");
                for (std::size_t r = 0; r < n; ++r) {
                    const auto row = number_array(v[r], "kernel.values[" + std::to_string(r) + "]");
                    if (row.size() != n) throw io_error("kernel.values[" + std::to_string(r) + "]: expected " + std::to_string(n) + " entries");
                    vals.insert(vals.end(), row.begin(), row.end());
                }
            } else {
                if (grid->dim() != 1) throw io_error("kernel.path: tabulated kernels from CSV need a 1-D grid");
                const auto path = resolve(base_dir, string_field(kj, "path", "kernel"));
                const std::string text = read_file(path);
                hash_input += text;
                const CsvTable t = parse_csv(text, path.string());
                const std::size_t cx = t.column("x", path.string());
                const std::size_t cy = t.column("y", path.string());
                const std::size_t cv = t.column("value", path.string());
                vals.assign(n * n, std::numeric_limits<double>::quiet_NaN());
                auto locate = [&](double x, const std::string& at) {
                    const auto nodes = grid->axis_nodes();
                    auto it = std::lower_bound(nodes.begin(), nodes.end(), x - 1e-9 * (1.0 + std::abs(x)));
                    if (it == nodes.end() || std::abs(*it - x) > 1e-9 * (1.0 + std::abs(x)))
                        throw io_error(at + ": " + fmt_double(x) + " is not a grid node");
                    return static_cast<std::size_t>(it - nodes.begin());
                };
                for (std::size_t r = 0; r < t.rows.size(); ++r) {
                    const std::string at = path.string() + ":" + std::to_string(r + 2);
                    const std::size_t i = locate(parse_number(t.rows[r][cx], at), at);
                    const std::size_t j = locate(parse_number(t.rows[r][cy], at), at);
                    vals[i * n + j] = parse_number(t.rows[r][cv], at);
                }
                for (std::size_t e = 0; e < vals.size(); ++e)
                    if (std::isnan(vals[e]))
                        throw io_error(path.string() + ": no entry for node pair (" + std::to_string(e / n) + ", " +
                                       std::to_string(e % n) + ")");
            }
            std::optional<double> sb;
            if (kj.contains("sigma_bound")) sb = number_field(kj, "sigma_bound", "kernel");
            pb.kernel = KernelOperator::from_table(grid, grid, vals, sb);
        } else {
            throw io_error("kernel.type: unknown kernel type '" + ktype + "'");
        }
        if (kj.contains("normalize")) {
            const std::string how = string_field(kj, "normalize", "kernel");
            if (how != "rows") throw io_error("kernel.normalize: only \"rows\" is supported");
            pb.kernel = pb.kernel.row_normalized();
        }
    } catch (const invalid_input& ex) {
        throw io_error(std::string("kernel: ") + ex.what());
    }

    if (string_field(mj[1], "type", "marginals[1]") == "pushforward") {
        // omega2(y) = sum_z w_z g(z, y) omega1(z)
        std::vector<double> a(grid->size()), out(grid->size());
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = grid->log_weights()[i] + dens[0].log_value(i);
        pb.kernel.log_matrix().col_reduce(a, out);
        for (double& v : out) v = std::exp(v);
        dens[1] = DensityField::from_values(grid, std::move(out), dens[0].bounded_support);
    }
    pb.marginals = MarginalPair{dens[0], dens[1]};
    pb.hash = hex64(fnv1a(hash_input));
    return pb;
}

inline Problem load_problem(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    json cfg;
    try {
        cfg = json::parse(text);
    } catch (const json::parse_error& e) {
        throw io_error(path.string() + ": " + e.what());
    }
    return load_problem_json(cfg, path.parent_path(), path);
}

inline std::string trace_csv(const std::vector<IterationDiagnostics>& trace) {
    auto cell = [](double v) { return std::isnan(v) ? std::string() : fmt_double(v); };
    std::string s = "n,sup_change,normalization_residual,hilbert_step,case1_candidate\n";
    for (const auto& d : trace) {
        s += std::to_string(d.n) + "," + cell(d.sup_change) + "," + cell(d.normalization_residual) + "," +
             cell(d.hilbert_step) + "," + (d.case1_candidate ? "true" : "false") + "\n";
    }
    return s;
}

/// side,node,x[,x1...],log_value; side is phi or psi.
inline std::string potentials_csv(const PotentialPair& p) {
    const int d = p.grid1->dim();
    std::string s = "side,node";
    if (d == 1) {
        s += ",x";
    } else {
        for (int a = 0; a < d; ++a) s += ",x" + std::to_string(a);
    }
    s += ",log_value\n";
    auto emit = [&](const char* side, const GridPtr& g, const std::vector<double>& lv) {
        for (std::size_t i = 0; i < lv.size(); ++i) {
            s += side;
            s += "," + std::to_string(i);
            for (int a = 0; a < d; ++a) s += "," + fmt_double(g->coordinate(i, a));
            s += "," + fmt_double(lv[i]) + "\n";
        }
    };
    emit("phi", p.grid1, p.log_phi);
    emit("psi", p.grid2, p.log_psi);
    return s;
}

inline PotentialPair read_potentials(const std::filesystem::path& path, const GridPtr& g1, const GridPtr& g2) {
    const CsvTable t = parse_csv(read_file(path), path.string());
    const std::size_t cs = t.column("side", path.string());
    const std::size_t cn = t.column("node", path.string());
    const std::size_t cv = t.column("log_value", path.string());
    PotentialPair p{g1, g2, std::vector<double>(g1->size(), std::numeric_limits<double>::quiet_NaN()),
                    std::vector<double>(g2->size(), std::numeric_limits<double>::quiet_NaN())};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string at = path.string() + ":" + std::to_string(r + 2);
        const double node = parse_number(t.rows[r][cn], at);
        auto& target = t.rows[r][cs] == "phi" ? p.log_phi : t.rows[r][cs] == "psi" ? p.log_psi
                                                                                    : throw io_error(at + ": side must be phi or psi");
        if (!(node >= 0) || node >= static_cast<double>(target.size()))
            throw io_error(at + ": node index out of range");
        target[static_cast<std::size_t>(node)] = parse_number(t.rows[r][cv], at);
    }
    for (double v : p.log_phi)
        if (std::isnan(v)) throw io_error(path.string() + ": missing phi values for this grid");
    for (double v : p.log_psi)
        if (std::isnan(v)) throw io_error(path.string() + ": missing psi values for this grid");
    return p;
}

} // namespace fortet::io
