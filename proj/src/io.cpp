#include "pcmf/io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <tuple>

#include "pcmf/common.hpp"

namespace pcmf {
namespace {

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_number(const std::string& tok, const std::string& path) {
    double v = 0.0;
    const char* begin = tok.data();
    const char* end = begin + tok.size();
    auto [p, ec] = std::from_chars(begin, end, v);
    require_input(ec == std::errc() && p == end, path + ": cannot parse number '" + tok + "'");
    return v;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    require_input(in.good(), "cannot open for reading: " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    require_input(out.good(), "cannot open for writing: " + path);
    return out;
}

void finish_write(std::ofstream& out, const std::string& path) {
    out.flush();
    require_input(out.good(), "write failed: " + path);
}

std::vector<std::string> read_name_lines(const std::string& path, std::size_t expected) {
    std::ifstream in(path);
    if (!in.good()) return default_names(path.ends_with(".cells") ? "cell_" : "gene_", expected);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        strip_cr(line);
        names.push_back(line);
    }
    require_input(names.size() == expected,
                  path + ": expected " + std::to_string(expected) + " names, found " +
                      std::to_string(names.size()));
    return names;
}

void write_name_lines(const std::string& path, const std::vector<std::string>& names) {
    std::ofstream out = open_out(path);
    for (const auto& name : names) out << name << '\n';
    finish_write(out, path);
}

bool ends_with_any(const std::string& path, std::initializer_list<const char*> exts) {
    return std::any_of(exts.begin(), exts.end(),
                       [&](const char* e) { return path.ends_with(e); });
}

}  // namespace

std::string format_number(double v) {
    std::array<char, 40> buf;
    auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), p};
}

std::vector<std::string> default_names(const std::string& prefix, std::size_t count) {
    std::vector<std::string> names(count);
    for (std::size_t i = 0; i < count; ++i) names[i] = prefix + std::to_string(i + 1);
    return names;
}

void write_table_csv(const std::string& path, const Mat& values,
                     const std::vector<std::string>& row_ids,
                     const std::vector<std::string>& col_names, const std::string& id_header) {
    require_input(row_ids.size() == values.rows(), path + ": row id count mismatch");
    require_input(col_names.size() == values.cols(), path + ": column name count mismatch");
    std::ofstream out = open_out(path);
    out << id_header;
    for (const auto& name : col_names) out << ',' << name;
    out << '\n';
    for (std::size_t i = 0; i < values.rows(); ++i) {
        out << row_ids[i];
        const double* row = values.row(i);
        for (std::size_t j = 0; j < values.cols(); ++j) out << ',' << format_number(row[j]);
        out << '\n';
    }
    finish_write(out, path);
}

Mat read_table_csv(const std::string& path, std::vector<std::string>* row_ids,
                   std::vector<std::string>* col_names) {
    std::ifstream in = open_in(path);
    std::string line;
    require_input(static_cast<bool>(std::getline(in, line)), path + ": empty file");
    strip_cr(line);
    std::vector<std::string> header = split_csv(line);
    require_input(header.size() >= 2, path + ": header needs an id column and data columns");
    const std::size_t cols = header.size() - 1;
    if (col_names) col_names->assign(header.begin() + 1, header.end());

    std::vector<std::string> ids;
    std::vector<double> data;
    while (std::getline(in, line)) {
        strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> toks = split_csv(line);
        require_input(toks.size() == cols + 1,
                      path + ": row " + std::to_string(ids.size() + 2) + " has " +
                          std::to_string(toks.size()) + " fields, expected " +
                          std::to_string(cols + 1));
        ids.push_back(toks.front());
        for (std::size_t j = 1; j < toks.size(); ++j) data.push_back(parse_number(toks[j], path));
    }
    require_input(!ids.empty(), path + ": no data rows");
    Mat values(ids.size(), cols);
    std::copy(data.begin(), data.end(), values.data());
    if (row_ids) *row_ids = std::move(ids);
    return values;
}

NamedCounts read_counts_csv(const std::string& path) {
    NamedCounts out;
    Mat values = read_table_csv(path, &out.cell_ids, &out.gene_names);
    out.x = CountMatrix::from_dense(std::move(values));
    return out;
}

void write_counts_csv(const std::string& path, const CountMatrix& x,
                      const std::vector<std::string>& cell_ids,
                      const std::vector<std::string>& gene_names) {
    write_table_csv(path, x.dense(), cell_ids, gene_names);
}

NamedCounts read_counts_mm(const std::string& path) {
    std::ifstream in = open_in(path);
    std::string line;
    require_input(static_cast<bool>(std::getline(in, line)), path + ": empty file");
    strip_cr(line);
    std::istringstream banner(line);
    std::string tag, object, layout, field, symmetry;
    banner >> tag >> object >> layout >> field >> symmetry;
    std::transform(object.begin(), object.end(), object.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    for (std::string* s : {&layout, &field, &symmetry})
        std::transform(s->begin(), s->end(), s->begin(),
                       [](unsigned char c) { return std::tolower(c); });
    require_input(tag == "%%MatrixMarket" && object == "matrix" && layout == "coordinate",
                  path + ": expected a Matrix Market coordinate header");
    require_input(field == "integer" || field == "real",
                  path + ": unsupported field type '" + field + "'");
    require_input(symmetry == "general", path + ": only general symmetry is supported");

    do {
        require_input(static_cast<bool>(std::getline(in, line)), path + ": missing size line");
        strip_cr(line);
    } while (line.empty() || line.front() == '%');

    std::istringstream sizes(line);
    std::size_t n = 0, m = 0, nnz = 0;
    sizes >> n >> m >> nnz;
    require_input(!sizes.fail(), path + ": cannot parse size line");

    std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
    triplets.reserve(nnz);
    while (triplets.size() < nnz) {
        require_input(static_cast<bool>(std::getline(in, line)),
                      path + ": fewer entries than the header promised");
        strip_cr(line);
        if (line.empty() || line.front() == '%') continue;
        std::istringstream entry(line);
        std::size_t i = 0, j = 0;
        double v = 0.0;
        entry >> i >> j >> v;
        require_input(!entry.fail(), path + ": cannot parse entry '" + line + "'");
        require_input(i >= 1 && j >= 1, path + ": indices are 1-based");
        triplets.emplace_back(i - 1, j - 1, v);
    }

    NamedCounts out;
    out.x = CountMatrix::from_coo(n, m, triplets);
    out.cell_ids = read_name_lines(path + ".cells", n);
    out.gene_names = read_name_lines(path + ".genes", m);
    return out;
}

void write_counts_mm(const std::string& path, const CountMatrix& x,
                     const std::vector<std::string>& cell_ids,
                     const std::vector<std::string>& gene_names) {
    require_input(cell_ids.size() == x.n_rows(), path + ": cell id count mismatch");
    require_input(gene_names.size() == x.n_cols(), path + ": gene name count mismatch");
    std::ofstream out = open_out(path);
    out << "%%MatrixMarket matrix coordinate integer general\n";
    out << x.n_rows() << ' ' << x.n_cols() << ' ' << x.nnz() << '\n';
    for (std::size_t i = 0; i < x.n_rows(); ++i) {
        const double* row = x.row(i);
        for (std::size_t j = 0; j < x.n_cols(); ++j) {
            if (row[j] == 0.0) continue;
            out << (i + 1) << ' ' << (j + 1) << ' '
                << format_number(row[j]) << '\n';
        }
    }
    finish_write(out, path);
    write_name_lines(path + ".cells", cell_ids);
    write_name_lines(path + ".genes", gene_names);
}

NamedCounts read_counts(const std::string& path) {
    if (ends_with_any(path, {".mtx", ".mm"})) return read_counts_mm(path);
    return read_counts_csv(path);
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries) {
    std::ofstream out = open_out(path);
    for (const auto& [key, value] : entries) out << key << '=' << value << '\n';
    finish_write(out, path);
}

std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
    std::ifstream in = open_in(path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    while (std::getline(in, line)) {
        strip_cr(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        require_input(eq != std::string::npos, path + ": malformed manifest line '" + line + "'");
        entries.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return entries;
}

}  // namespace pcmf
