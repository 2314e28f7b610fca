#include "comlab/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace comlab {

namespace {

// Shortest representation that round-trips a double; keeps file bytes
// reproducible across runs.
std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == x) {
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[32];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, x);
            std::sscanf(shorter, "%lf", &back);
            if (back == x) return shorter;
        }
    }
    return buf;
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("dataset: cannot open '" + path + "' for writing");
    out << "comlab-dataset\n";
    out << "format_version 1\n";
    out << "system " << ds.system << "\n";
    out << "sigma " << fmt_double(ds.sigma) << "\n";
    out << "seed " << ds.seed << "\n";
    out << "n_s " << ds.n_s << "\n";
    out << "n_f " << ds.n_f << "\n";
    out << "n_samples " << ds.samples.size() << "\n";
    out << "data t";
    for (int i = 0; i < ds.n_s; ++i) out << ",s_" << i;
    for (int i = 0; i < ds.n_s; ++i) out << ",sdot_" << i;
    for (int i = 0; i < ds.n_f; ++i) out << ",F_" << i;
    out << "\n";
    for (const Sample& s : ds.samples) {
        out << fmt_double(s.t);
        for (double x : s.s) out << "," << fmt_double(x);
        for (double x : s.sdot) out << "," << fmt_double(x);
        for (double x : s.F) out << "," << fmt_double(x);
        out << "\n";
    }
    if (!out) throw std::runtime_error("dataset: write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("dataset: cannot open '" + path + "'");

    auto next_line = [&](const char* what) {
        std::string line;
        if (!std::getline(in, line))
            throw std::runtime_error(std::string("dataset: truncated header, expected ") + what);
        return line;
    };
    auto field = [&](const std::string& key) {
        std::istringstream ss(next_line(key.c_str()));
        std::string k, v;
        ss >> k >> v;
        if (k != key || v.empty())
            throw std::runtime_error("dataset: malformed field '" + key + "'");
        return v;
    };

    if (next_line("magic") != "comlab-dataset") throw std::runtime_error("dataset: bad magic line");
    if (field("format_version") != "1")
        throw std::runtime_error("dataset: unsupported format_version");

    Dataset ds;
    ds.system = field("system");
    ds.sigma = std::stod(field("sigma"));
    ds.seed = std::stoull(field("seed"));
    ds.n_s = std::stoi(field("n_s"));
    ds.n_f = std::stoi(field("n_f"));
    const size_t n_samples = std::stoul(field("n_samples"));
    const std::string data_line = next_line("data");
    if (data_line.rfind("data ", 0) != 0) throw std::runtime_error("dataset: missing data marker");

    ds.samples.reserve(n_samples);
    const size_t n_cols = 1 + 2 * static_cast<size_t>(ds.n_s) + static_cast<size_t>(ds.n_f);
    for (size_t row = 0; row < n_samples; ++row) {
        std::string line;
        if (!std::getline(in, line))
            throw std::runtime_error("dataset: truncated body at row " + std::to_string(row));
        std::istringstream ss(line);
        std::vector<double> vals;
        vals.reserve(n_cols);
        std::string cell;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() != n_cols)
            throw std::runtime_error("dataset: row " + std::to_string(row) + " has " +
                                     std::to_string(vals.size()) + " columns, expected " +
                                     std::to_string(n_cols));
        Sample s;
        s.t = vals[0];
        s.s.assign(vals.begin() + 1, vals.begin() + 1 + ds.n_s);
        s.sdot.assign(vals.begin() + 1 + ds.n_s, vals.begin() + 1 + 2 * ds.n_s);
        s.F.assign(vals.begin() + 1 + 2 * ds.n_s, vals.end());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace comlab
