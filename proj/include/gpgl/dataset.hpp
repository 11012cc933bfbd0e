#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gpgl/errors.hpp"
#include "gpgl/rng.hpp"

namespace gpgl {

struct Dataset {
    Eigen::MatrixXd inputs;   // N x d
    std::vector<int> labels;  // values in [0, C)
    long class_count = 0;

    [[nodiscard]] long size() const { return inputs.rows(); }
    [[nodiscard]] long dim() const { return inputs.cols(); }

    void validate() const {
        if (size() != static_cast<long>(labels.size()))
            throw ConfigError("Dataset: " + std::to_string(size()) + " rows vs " +
                              std::to_string(labels.size()) + " labels");
        if (class_count < 2) throw ConfigError("Dataset: need at least 2 classes");
        if (size() < class_count)
            throw ConfigError("Dataset: fewer samples than classes");
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || labels[i] >= class_count)
                throw ConfigError("Dataset: label " + std::to_string(labels[i]) +
                                  " out of range at row " + std::to_string(i));
    }

    [[nodiscard]] Dataset subset(const std::vector<int>& rows) const {
        Dataset out;
        out.class_count = class_count;
        out.inputs.resize(static_cast<long>(rows.size()), dim());
        out.labels.reserve(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            out.inputs.row(static_cast<long>(i)) = inputs.row(rows[i]);
            out.labels.push_back(labels[static_cast<size_t>(rows[i])]);
        }
        return out;
    }
};

// Seeded train/validation split; the first ceil(N * val_fraction) rows of
// a shuffled permutation become the validation set.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& data, double val_fraction,
                                                   uint64_t seed) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0))
        throw ConfigError("split_train_val: val_fraction must be in [0, 1)");
    std::vector<int> perm(static_cast<size_t>(data.size()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, "val-split"));
    rng.shuffle(perm);
    const long n_val = static_cast<long>(
        std::ceil(static_cast<double>(data.size()) * val_fraction));
    std::vector<int> val_rows(perm.begin(), perm.begin() + n_val);
    std::vector<int> train_rows(perm.begin() + n_val, perm.end());
    return {data.subset(train_rows), data.subset(val_rows)};
}

// Standardize every dimension to zero mean / unit variance using moments
// from the given rows (the training split). Returns {mean, std}.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> standardize(Dataset& data,
                                                               const Dataset& reference) {
    const Eigen::VectorXd mean = reference.inputs.colwise().mean();
    Eigen::VectorXd var = Eigen::VectorXd::Zero(reference.dim());
    for (long i = 0; i < reference.size(); ++i) {
        const Eigen::VectorXd d = reference.inputs.row(i).transpose() - mean;
        var += d.cwiseProduct(d);
    }
    var /= std::max<double>(1.0, static_cast<double>(reference.size()));
    Eigen::VectorXd stddev = var.cwiseSqrt().cwiseMax(1e-12);
    for (long i = 0; i < data.size(); ++i)
        data.inputs.row(i) =
            ((data.inputs.row(i).transpose() - mean).cwiseQuotient(stddev)).transpose();
    return {mean, stddev};
}

// Gaussian class blobs in d dimensions. Class means are drawn by seeded
// rejection until every pair is at least `separation` apart; points are
// isotropic with spread `noise`.
inline Dataset gen_blobs(int class_count, int per_class, int dim, double separation,
                         double noise, uint64_t seed) {
    if (!(separation > 0.0)) throw ConfigError("gen_blobs: separation must be > 0");
    if (per_class < 1) throw ConfigError("gen_blobs: per_class must be >= 1");
    if (class_count < 2 || dim < 1) throw ConfigError("gen_blobs: bad class count or dim");

    Rng mean_rng(derive_seed(seed, "blob-means"));
    Eigen::MatrixXd means(class_count, dim);
    double scale = separation * 1.25;
    int placed = 0, failures = 0;
    while (placed < class_count) {
        Eigen::VectorXd cand(dim);
        for (int k = 0; k < dim; ++k) cand(k) = mean_rng.normal(0.0, scale);
        bool ok = true;
        for (int p = 0; p < placed; ++p)
            if ((means.row(p).transpose() - cand).norm() < separation) {
                ok = false;
                break;
            }
        if (ok) {
            means.row(placed++) = cand.transpose();
            failures = 0;
        } else if (++failures >= 200) {
            scale *= 1.3;
            failures = 0;
        }
    }

    Dataset data;
    data.class_count = class_count;
    data.inputs.resize(static_cast<long>(class_count) * per_class, dim);
    data.labels.reserve(static_cast<size_t>(class_count) * per_class);
    Rng point_rng(derive_seed(seed, "blob-points"));
    long r = 0;
    for (int c = 0; c < class_count; ++c)
        for (int i = 0; i < per_class; ++i) {
            for (int k = 0; k < dim; ++k)
                data.inputs(r, k) = means(c, k) + point_rng.normal(0.0, noise);
            data.labels.push_back(c);
            ++r;
        }
    return data;
}

// The parametric curve behind gen_interleaved; exposed so tests can check
// the zero-noise case exactly.
inline Eigen::Vector2d spiral_point(int arm, int arms, double t) {
    const double radius = 0.5 + 2.5 * t;
    const double angle = 3.0 * M_PI * t + 2.0 * M_PI * arm / arms;
    return {radius * std::cos(angle), radius * std::sin(angle)};
}

// Interleaved 2-D spiral arms, one per class; not linearly separable.
inline Dataset gen_interleaved(int class_count, int per_class, double noise, uint64_t seed) {
    if (class_count != 2 && class_count != 3)
        throw ConfigError("gen_interleaved: class_count must be 2 or 3");
    if (per_class < 2) throw ConfigError("gen_interleaved: per_class must be >= 2");

    Dataset data;
    data.class_count = class_count;
    data.inputs.resize(static_cast<long>(class_count) * per_class, 2);
    data.labels.reserve(static_cast<size_t>(class_count) * per_class);
    Rng rng(derive_seed(seed, "spiral-points"));
    long r = 0;
    for (int c = 0; c < class_count; ++c)
        for (int i = 0; i < per_class; ++i) {
            const double t = static_cast<double>(i) / (per_class - 1);
            const Eigen::Vector2d p = spiral_point(c, class_count, t);
            data.inputs(r, 0) = p.x() + rng.normal(0.0, noise);
            data.inputs(r, 1) = p.y() + rng.normal(0.0, noise);
            data.labels.push_back(c);
            ++r;
        }
    return data;
}

// ----- CSV ----------------------------------------------------------------
//
// Row format: integer label, comma, d float features. The loader rejects
// ragged rows, non-numeric fields and negative labels, citing the line.

inline Dataset load_csv(const std::string& path, bool has_header = false) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_csv: cannot open '" + path + "'");

    Dataset data;
    std::vector<std::vector<double>> rows;
    std::string line;
    long line_no = 0;
    long dim = -1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && has_header) continue;
        if (line.empty()) continue;

        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.push_back("");

        if (fields.size() < 2)
            throw ConfigError("load_csv: line " + std::to_string(line_no) +
                              ": need a label and at least one feature");
        if (dim < 0) dim = static_cast<long>(fields.size()) - 1;
        if (static_cast<long>(fields.size()) - 1 != dim)
            throw ConfigError("load_csv: line " + std::to_string(line_no) + ": ragged row (" +
                              std::to_string(fields.size() - 1) + " features, expected " +
                              std::to_string(dim) + ")");

        size_t pos = 0;
        int label = 0;
        try {
            label = std::stoi(fields[0], &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != fields[0].size() || label < 0)
            throw ConfigError("load_csv: line " + std::to_string(line_no) +
                              ": bad label '" + fields[0] + "'");
        max_label = std::max(max_label, label);
        data.labels.push_back(label);

        std::vector<double> values;
        values.reserve(static_cast<size_t>(dim));
        for (long f = 1; f <= dim; ++f) {
            const std::string& s = fields[static_cast<size_t>(f)];
            size_t fpos = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &fpos);
            } catch (const std::exception&) {
                fpos = 0;
            }
            if (fpos == 0 || fpos != s.size())
                throw ConfigError("load_csv: line " + std::to_string(line_no) +
                                  ": non-numeric field '" + s + "'");
            values.push_back(v);
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw ConfigError("load_csv: '" + path + "' has no data rows");

    data.class_count = max_label + 1;
    data.inputs.resize(static_cast<long>(rows.size()), dim);
    for (size_t i = 0; i < rows.size(); ++i)
        for (long j = 0; j < dim; ++j)
            data.inputs(static_cast<long>(i), j) = rows[i][static_cast<size_t>(j)];
    data.validate();
    return data;
}

inline void save_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("save_csv: cannot open '" + path + "'");
    out.precision(17);
    for (long i = 0; i < data.size(); ++i) {
        out << data.labels[static_cast<size_t>(i)];
        for (long j = 0; j < data.dim(); ++j) out << ',' << data.inputs(i, j);
        out << '\n';
    }
    if (!out) throw ConfigError("save_csv: write failure for '" + path + "'");
}

// ----- declarative dataset source ------------------------------------------

struct DatasetSpec {
    std::string kind = "blobs";  // blobs | interleaved | csv
    int classes = 3;
    int per_class = 100;
    int dim = 2;
    double separation = 3.0;
    double noise = 1.0;
    std::string csv_path;
    bool csv_has_header = false;
    // standardize features using train-split moments; defaults to on for
    // csv data (unknown units), off for generated data
    std::optional<bool> standardize;

    [[nodiscard]] bool standardize_enabled() const {
        return standardize.value_or(kind == "csv");
    }

    void validate() const {
        if (kind != "blobs" && kind != "interleaved" && kind != "csv")
            throw ConfigError("DatasetSpec: unknown kind '" + kind + "'");
        if (kind == "csv" && csv_path.empty())
            throw ConfigError("DatasetSpec: csv kind needs csv_path");
    }
};

inline Dataset make_dataset(const DatasetSpec& spec, uint64_t seed) {
    spec.validate();
    if (spec.kind == "blobs")
        return gen_blobs(spec.classes, spec.per_class, spec.dim, spec.separation, spec.noise,
                         seed);
    if (spec.kind == "interleaved")
        return gen_interleaved(spec.classes, spec.per_class, spec.noise, seed);
    return load_csv(spec.csv_path, spec.csv_has_header);
}

}  // namespace gpgl
