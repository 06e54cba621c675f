#ifndef CORRGROUP_DATA_MODEL_HPP
#define CORRGROUP_DATA_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "csv.hpp"
#include "error.hpp"

/**
 * @file data_model.hpp
 * @brief Expression matrices, their ingestion, z-scoring and Pearson correlation.
 */

namespace corrgroup {

/**
 * Genes with a sample standard deviation below this (in original units) are treated as constant.
 */
inline constexpr double constant_sd_threshold = 1e-12;

/**
 * Layout of a delimited matrix file.
 * `genes_in_rows`: header row holds cell identifiers and the first column holds gene identifiers.
 * `genes_in_columns`: the transpose.
 */
enum class Orientation { genes_in_rows, genes_in_columns };

/**
 * @brief Dense cells-by-genes expression matrix with identifiers.
 *
 * Construction validates that there are at least two cells and one gene,
 * that all entries are finite and that identifiers are unique.
 * The values are column-major so that each gene is a contiguous vector.
 */
class ExpressionMatrix {
public:
    ExpressionMatrix(Eigen::MatrixXd values, std::vector<std::string> gene_ids, std::vector<std::string> cell_ids)
        : values_(std::move(values)), gene_ids_(std::move(gene_ids)), cell_ids_(std::move(cell_ids)) {
        if (static_cast<std::size_t>(values_.cols()) != gene_ids_.size()) {
            throw ValidationError("gene identifier count does not match matrix columns");
        }
        if (static_cast<std::size_t>(values_.rows()) != cell_ids_.size()) {
            throw ValidationError("cell identifier count does not match matrix rows");
        }
        if (values_.rows() < 2) {
            throw ValidationError("expression matrix needs at least 2 cells");
        }
        if (values_.cols() < 1) {
            throw ValidationError("expression matrix needs at least 1 gene");
        }
        if (!values_.allFinite()) {
            throw ValidationError("expression matrix contains non-finite values");
        }
        gene_lookup_.reserve(gene_ids_.size());
        for (std::size_t j = 0; j < gene_ids_.size(); ++j) {
            if (!gene_lookup_.emplace(gene_ids_[j], j).second) {
                throw ValidationError("duplicate gene identifier '" + gene_ids_[j] + "'");
            }
        }
        std::unordered_set<std::string> seen;
        for (const auto& c : cell_ids_) {
            if (!seen.insert(c).second) {
                throw ValidationError("duplicate cell identifier '" + c + "'");
            }
        }
    }

    const Eigen::MatrixXd& values() const { return values_; }
    const std::vector<std::string>& gene_ids() const { return gene_ids_; }
    const std::vector<std::string>& cell_ids() const { return cell_ids_; }
    std::size_t n_cells() const { return static_cast<std::size_t>(values_.rows()); }
    std::size_t n_genes() const { return static_cast<std::size_t>(values_.cols()); }

    std::span<const double> gene(std::size_t j) const {
        return {values_.col(static_cast<Eigen::Index>(j)).data(), n_cells()};
    }

    /// Column index of a gene identifier, or -1.
    std::ptrdiff_t find_gene(const std::string& id) const {
        auto it = gene_lookup_.find(id);
        return it == gene_lookup_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
    }

private:
    Eigen::MatrixXd values_;
    std::vector<std::string> gene_ids_;
    std::vector<std::string> cell_ids_;
    std::unordered_map<std::string, std::size_t> gene_lookup_;
};

/**
 * @brief Z-scored copy of an `ExpressionMatrix`.
 *
 * `values` keeps all `p` columns so gene indices stay aligned with the source;
 * columns of constant genes are zero and those genes are listed in `constant_genes`.
 */
struct StandardizedMatrix {
    Eigen::MatrixXd values;
    std::vector<double> gene_means;
    std::vector<double> gene_sds;
    std::vector<std::size_t> constant_genes;
    std::vector<std::size_t> retained;
    std::vector<std::string> gene_ids;
    std::vector<std::string> cell_ids;

    std::size_t n_cells() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t n_genes() const { return static_cast<std::size_t>(values.cols()); }

    bool is_constant(std::size_t j) const { return gene_sds[j] < constant_sd_threshold; }

    std::span<const double> gene(std::size_t j) const {
        return {values.col(static_cast<Eigen::Index>(j)).data(), n_cells()};
    }
};

/**
 * The single expression used to z-score a value, shared by training-time
 * standardization and by representatives built from stored parameters.
 */
inline double standardize_value(double x, double mean, double sd) {
    return (x - mean) / sd;
}

/**
 * Mean and sample standard deviation (denominator n - 1) by the corrected two-pass algorithm.
 */
inline std::pair<double, double> mean_sd(std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    double sum = 0;
    for (double v : x) {
        sum += v;
    }
    double mean = sum / n;
    double ss = 0, comp = 0;
    for (double v : x) {
        double d = v - mean;
        ss += d * d;
        comp += d;
    }
    mean += comp / n;
    double var = (ss - comp * comp / n) / (n - 1);
    return {mean, std::sqrt(std::max(var, 0.0))};
}

inline StandardizedMatrix standardize(const ExpressionMatrix& x) {
    const auto n = x.n_cells();
    const auto p = x.n_genes();
    StandardizedMatrix out;
    out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    out.gene_means.resize(p);
    out.gene_sds.resize(p);
    out.gene_ids = x.gene_ids();
    out.cell_ids = x.cell_ids();

    for (std::size_t j = 0; j < p; ++j) {
        auto col = x.gene(j);
        auto [mean, sd] = mean_sd(col);
        out.gene_means[j] = mean;
        out.gene_sds[j] = sd;
        if (sd < constant_sd_threshold) {
            out.constant_genes.push_back(j);
            continue;
        }
        out.retained.push_back(j);
        double* dest = out.values.col(static_cast<Eigen::Index>(j)).data();
        for (std::size_t i = 0; i < n; ++i) {
            dest[i] = standardize_value(col[i], mean, sd);
        }
    }
    return out;
}

/**
 * Pearson product-moment correlation, clamped to [-1, 1].
 * Throws `UndefinedCorrelation` if either input is constant.
 */
inline double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidArgument("pearson: vectors differ in length");
    }
    if (a.size() < 2) {
        throw InvalidArgument("pearson: need at least 2 observations");
    }
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (std::sqrt(saa / (n - 1)) < constant_sd_threshold || std::sqrt(sbb / (n - 1)) < constant_sd_threshold) {
        throw UndefinedCorrelation("pearson: correlation undefined for a constant vector");
    }
    double r = sab / std::sqrt(saa * sbb);
    return std::clamp(r, -1.0, 1.0);
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return pearson(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                   std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

/**
 * Read a delimited matrix file (CSV, or TSV for `.tsv`/`.tab`/`.txt`) with one header row
 * and one identifier column. The result is always cells by genes.
 */
inline ExpressionMatrix load_matrix(const std::string& path, Orientation orientation = Orientation::genes_in_rows) {
    const char delim = csv::delimiter_for(path);
    auto records = csv::read_file(path, delim);
    if (records.empty()) {
        throw ParseError("empty matrix file '" + path + "'", 1);
    }

    const auto& header = records.front();
    if (header.fields.size() < 2) {
        throw ParseError("header needs an identifier column and at least one data column", header.line);
    }
    std::vector<std::string> col_ids(header.fields.begin() + 1, header.fields.end());
    const std::size_t ncol = col_ids.size();
    const std::size_t nrow = records.size() - 1;

    std::vector<std::string> row_ids;
    row_ids.reserve(nrow);
    std::vector<double> buffer(nrow * ncol);
    for (std::size_t r = 0; r < nrow; ++r) {
        const auto& rec = records[r + 1];
        if (rec.fields.size() != ncol + 1) {
            throw ParseError("expected " + std::to_string(ncol + 1) + " fields, found " + std::to_string(rec.fields.size()),
                             rec.line);
        }
        row_ids.push_back(rec.fields[0]);
        for (std::size_t c = 0; c < ncol; ++c) {
            auto v = csv::parse_double(rec.fields[c + 1]);
            if (!v) {
                throw ParseError("non-numeric value '" + rec.fields[c + 1] + "' in column '" + col_ids[c] + "'", rec.line);
            }
            buffer[r * ncol + c] = *v;
        }
    }

    auto check_unique = [&](const std::vector<std::string>& ids, const char* what) {
        std::unordered_set<std::string> seen;
        for (const auto& id : ids) {
            if (!seen.insert(id).second) {
                throw ValidationError(std::string("duplicate ") + what + " identifier '" + id + "' in '" + path + "'");
            }
        }
    };

    if (orientation == Orientation::genes_in_rows) {
        check_unique(row_ids, "gene");
        check_unique(col_ids, "cell");
        Eigen::MatrixXd values(static_cast<Eigen::Index>(ncol), static_cast<Eigen::Index>(nrow));
        for (std::size_t r = 0; r < nrow; ++r) {
            for (std::size_t c = 0; c < ncol; ++c) {
                values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) = buffer[r * ncol + c];
            }
        }
        return ExpressionMatrix(std::move(values), std::move(row_ids), std::move(col_ids));
    }

    check_unique(row_ids, "cell");
    check_unique(col_ids, "gene");
    Eigen::MatrixXd values(static_cast<Eigen::Index>(nrow), static_cast<Eigen::Index>(ncol));
    for (std::size_t r = 0; r < nrow; ++r) {
        for (std::size_t c = 0; c < ncol; ++c) {
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = buffer[r * ncol + c];
        }
    }
    return ExpressionMatrix(std::move(values), std::move(col_ids), std::move(row_ids));
}

inline void write_matrix(const std::string& path, const ExpressionMatrix& x, Orientation orientation = Orientation::genes_in_rows) {
    const char delim = csv::delimiter_for(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    const auto& v = x.values();
    std::vector<std::string> row;
    if (orientation == Orientation::genes_in_rows) {
        row.push_back("gene");
        row.insert(row.end(), x.cell_ids().begin(), x.cell_ids().end());
        csv::write_row(out, row, delim);
        for (std::size_t j = 0; j < x.n_genes(); ++j) {
            row.assign(1, x.gene_ids()[j]);
            for (std::size_t i = 0; i < x.n_cells(); ++i) {
                row.push_back(csv::format_double(v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
            }
            csv::write_row(out, row, delim);
        }
    } else {
        row.push_back("cell");
        row.insert(row.end(), x.gene_ids().begin(), x.gene_ids().end());
        csv::write_row(out, row, delim);
        for (std::size_t i = 0; i < x.n_cells(); ++i) {
            row.assign(1, x.cell_ids()[i]);
            for (std::size_t j = 0; j < x.n_genes(); ++j) {
                row.push_back(csv::format_double(v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
            }
            csv::write_row(out, row, delim);
        }
    }
    if (!out) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

/**
 * Read binary labels from a two-column file (`cell_id,label` with a header row)
 * and align them to `cell_ids`. Labels must be 0 or 1.
 */
inline std::vector<int> load_labels(const std::string& path, const std::vector<std::string>& cell_ids) {
    auto records = csv::read_file(path, csv::delimiter_for(path));
    if (records.empty()) {
        throw ParseError("empty label file '" + path + "'", 1);
    }
    std::unordered_map<std::string, int> by_cell;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.fields.size() != 2) {
            throw ParseError("expected 2 fields (cell_id,label), found " + std::to_string(rec.fields.size()), rec.line);
        }
        auto v = csv::parse_double(rec.fields[1]);
        if (!v || (*v != 0.0 && *v != 1.0)) {
            throw ParseError("label must be 0 or 1, found '" + rec.fields[1] + "'", rec.line);
        }
        if (!by_cell.emplace(rec.fields[0], static_cast<int>(*v)).second) {
            throw ValidationError("duplicate cell identifier '" + rec.fields[0] + "' in '" + path + "'");
        }
    }
    std::vector<int> y;
    y.reserve(cell_ids.size());
    for (const auto& c : cell_ids) {
        auto it = by_cell.find(c);
        if (it == by_cell.end()) {
            throw ValidationError("no label for cell '" + c + "' in '" + path + "'");
        }
        y.push_back(it->second);
    }
    return y;
}

inline void write_labels(const std::string& path, const std::vector<std::string>& cell_ids, const std::vector<int>& y) {
    const char delim = csv::delimiter_for(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    csv::write_row(out, {"cell_id", "label"}, delim);
    for (std::size_t i = 0; i < cell_ids.size(); ++i) {
        csv::write_row(out, {cell_ids[i], std::to_string(y[i])}, delim);
    }
}

}

#endif
