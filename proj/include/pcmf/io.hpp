#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pcmf/count_matrix.hpp"
#include "pcmf/mat.hpp"

namespace pcmf {

struct NamedCounts {
    CountMatrix x;
    std::vector<std::string> cell_ids;    // n
    std::vector<std::string> gene_names;  // m
};

// shortest decimal text that parses back to the same double
std::string format_number(double v);

// "<prefix>1".."<prefix>count"
std::vector<std::string> default_names(const std::string& prefix, std::size_t count);

// CSV layout: header "id,<gene names...>", then one "<cell id>,<counts...>"
// row per cell. No quoting; names must not contain commas.
NamedCounts read_counts_csv(const std::string& path);
void write_counts_csv(const std::string& path, const CountMatrix& x,
                      const std::vector<std::string>& cell_ids,
                      const std::vector<std::string>& gene_names);

// Matrix Market "coordinate integer general" (1-based indices) with sidecar
// name files at <path>.cells and <path>.genes, one name per line. Missing
// sidecars fall back to generated names.
NamedCounts read_counts_mm(const std::string& path);
void write_counts_mm(const std::string& path, const CountMatrix& x,
                     const std::vector<std::string>& cell_ids,
                     const std::vector<std::string>& gene_names);

// dispatch on extension: .mtx / .mm read as Matrix Market, anything else CSV
NamedCounts read_counts(const std::string& path);

// numeric table with a leading id column, same CSV layout as the counts
void write_table_csv(const std::string& path, const Mat& values,
                     const std::vector<std::string>& row_ids,
                     const std::vector<std::string>& col_names,
                     const std::string& id_header = "id");
Mat read_table_csv(const std::string& path, std::vector<std::string>* row_ids = nullptr,
                   std::vector<std::string>* col_names = nullptr);

// flat "key=value" lines, order preserved
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& entries);
std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path);

}  // namespace pcmf
