// report.hpp: CSV and JSON output. Floats are written with 17 significant digits,
// which round-trips every double exactly.
#pragma once

#include "qlbgk/errors.hpp"
#include "qlbgk/solvers.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace qlbgk {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing: " + std::strerror(errno));
    return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << cells[i];
    }
    out << '\n';
}

}  // namespace detail

// time, n_0, ..., n_{N-1}
inline void write_density_series(const std::filesystem::path& path, const std::vector<double>& times,
                                 const std::vector<Eigen::VectorXd>& densities) {
    if (times.size() != densities.size()) throw InvalidInput("write_density_series: times/densities size mismatch");
    std::ofstream out = detail::open_output(path);
    const Eigen::Index n = densities.empty() ? 0 : densities.front().size();
    std::vector<std::string> header{"time"};
    for (Eigen::Index i = 0; i < n; ++i) header.push_back("n_" + std::to_string(i));
    detail::write_row(out, header);
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (densities[k].size() != n) throw InvalidInput("write_density_series: ragged density rows");
        std::vector<std::string> row{format_double(times[k])};
        for (Eigen::Index i = 0; i < n; ++i) row.push_back(format_double(densities[k](i)));
        detail::write_row(out, row);
    }
    detail::finish(out, path);
}

inline const std::vector<std::string>& diagnostics_columns() {
    static const std::vector<std::string> cols{
        "step",         "time",      "mass",        "density_mass", "min_eigenvalue", "hermiticity_residual",
        "free_energy",  "trace_norm", "e2_norm",    "equilibrium_current", "el_residual", "iterations",
        "positivity_violation"};
    return cols;
}

inline void write_diagnostics(const std::filesystem::path& path, const RunRecord& records) {
    std::ofstream out = detail::open_output(path);
    detail::write_row(out, diagnostics_columns());
    for (const StepRecord& r : records) {
        detail::write_row(out, {std::to_string(r.step), format_double(r.time), format_double(r.mass),
                                format_double(r.density_mass), format_double(r.min_eigenvalue),
                                format_double(r.hermiticity_residual), format_double(r.free_energy),
                                format_double(r.trace_norm), format_double(r.e2_norm),
                                format_double(r.equilibrium_current), format_double(r.el_residual),
                                std::to_string(r.iterations), r.positivity_violation ? "1" : "0"});
    }
    detail::finish(out, path);
}

struct SweepRow {
    double epsilon{0.0};
    double dt{0.0};
    double max_l1_density_error{0.0};
    double max_e2_operator_error{0.0};
    double fitted_order{0.0};  // per epsilon, repeated on every row of that epsilon
};

inline void write_sweep(const std::filesystem::path& path, const std::vector<SweepRow>& table) {
    std::ofstream out = detail::open_output(path);
    detail::write_row(out, {"epsilon", "dt", "max_l1_density_error", "max_e2_operator_error", "fitted_order"});
    for (const SweepRow& r : table) {
        detail::write_row(out, {format_double(r.epsilon), format_double(r.dt), format_double(r.max_l1_density_error),
                                format_double(r.max_e2_operator_error), format_double(r.fitted_order)});
    }
    detail::finish(out, path);
}

struct LemmaRow {
    double epsilon{0.0};
    double gap{0.0};
    double e2_norm{0.0};
    double div_current_l1{0.0};
    double e2_ratio{0.0};   // e2_norm / (eps^2 ^ gap)
    double div_ratio{0.0};  // div_current_l1 / (eps (eps^2 ^ gap))
};

inline void write_lemma(const std::filesystem::path& path, const std::vector<LemmaRow>& table) {
    std::ofstream out = detail::open_output(path);
    detail::write_row(out, {"epsilon", "gap", "e2_norm", "div_current_l1", "e2_ratio", "div_ratio"});
    for (const LemmaRow& r : table) {
        detail::write_row(out, {format_double(r.epsilon), format_double(r.gap), format_double(r.e2_norm),
                                format_double(r.div_current_l1), format_double(r.e2_ratio),
                                format_double(r.div_ratio)});
    }
    detail::finish(out, path);
}

// Header plus numeric rows; "nan" and "inf" parse through strtod.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    if (!std::getline(in, line)) return t;
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        for (const std::string& c : split(line)) {
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            if (end == c.c_str()) throw IoError("'" + path.string() + "': non-numeric cell '" + c + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out = detail::open_output(path);
    out << j.dump(2) << '\n';
    detail::finish(out, path);
}

}  // namespace qlbgk
