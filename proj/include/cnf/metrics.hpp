#pragma once

#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cnf/errors.hpp"

namespace cnf {

/// K x K count matrix; rows index the true class, columns the predicted
/// class.
struct ConfusionMatrix {
    std::vector<std::vector<std::uint64_t>> counts;
    std::vector<std::string> class_names;

    std::size_t k() const { return counts.size(); }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& row : counts)
            for (std::uint64_t c : row) t += c;
        return t;
    }

    std::uint64_t trace() const {
        std::uint64_t t = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
        return t;
    }

    std::uint64_t row_sum(std::size_t i) const {
        std::uint64_t t = 0;
        for (std::uint64_t c : counts[i]) t += c;
        return t;
    }

    std::uint64_t col_sum(std::size_t j) const {
        std::uint64_t t = 0;
        for (const auto& row : counts) t += row[j];
        return t;
    }

    static ConfusionMatrix from_counts(std::vector<std::vector<std::uint64_t>> counts,
                                       std::vector<std::string> names = {}) {
        ConfusionMatrix cm;
        cm.counts = std::move(counts);
        for (const auto& row : cm.counts)
            if (row.size() != cm.counts.size())
                throw shape_error("confusion matrix must be square");
        if (names.empty())
            for (std::size_t i = 0; i < cm.counts.size(); ++i)
                names.push_back("class-" + std::to_string(i));
        if (names.size() != cm.counts.size())
            throw shape_error("confusion matrix: class name count mismatch");
        cm.class_names = std::move(names);
        return cm;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& y_true,
                                        const std::vector<std::size_t>& y_pred,
                                        std::size_t k,
                                        std::vector<std::string> names = {}) {
    if (y_true.size() != y_pred.size())
        throw shape_error("confusion_matrix: " + std::to_string(y_true.size()) +
                          " true labels vs " + std::to_string(y_pred.size()) +
                          " predictions");
    ConfusionMatrix cm = ConfusionMatrix::from_counts(
        std::vector<std::vector<std::uint64_t>>(k, std::vector<std::uint64_t>(k, 0)),
        std::move(names));
    for (std::size_t t = 0; t < y_true.size(); ++t) {
        if (y_true[t] >= k)
            throw data_error("confusion_matrix: true label " + std::to_string(y_true[t]) +
                             " out of range at index " + std::to_string(t));
        if (y_pred[t] >= k)
            throw data_error("confusion_matrix: predicted label " +
                             std::to_string(y_pred[t]) + " out of range at index " +
                             std::to_string(t));
        cm.counts[y_true[t]][y_pred[t]] += 1;
    }
    return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw data_error("accuracy: empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

/// Result of the accuracy-versus-majority-prior test. `margin` is
/// accuracy - (prior + epsilon); the check passes when it is >= 0.
struct SkewResult {
    bool pass = false;
    double accuracy = 0.0;
    double prior = 0.0;
    double margin = 0.0;
};

/// Guards against degenerate always-predict-the-majority classifiers:
/// pass iff accuracy >= max_i r(i)/total + epsilon.
inline SkewResult skew_check(const ConfusionMatrix& cm, double epsilon) {
    if (epsilon < 0.0) throw config_error("skew_check: epsilon must be >= 0");
    const std::uint64_t total = cm.total();
    if (total == 0) throw data_error("skew_check: empty confusion matrix");
    std::uint64_t max_row = 0;
    for (std::size_t i = 0; i < cm.k(); ++i) max_row = std::max(max_row, cm.row_sum(i));
    const std::uint64_t trace = cm.trace();
    SkewResult res;
    res.accuracy = static_cast<double>(trace) / static_cast<double>(total);
    res.prior = static_cast<double>(max_row) / static_cast<double>(total);
    // the count difference is exact; one division and one subtraction keep
    // the epsilon = 0 equality case exact
    res.margin = (static_cast<double>(trace) - static_cast<double>(max_row)) /
                     static_cast<double>(total) -
                 epsilon;
    res.pass = res.margin >= 0.0;
    return res;
}

/// C_kk / r(k); classes that never occur report no value rather than 0.
inline std::optional<double> sensitivity(const ConfusionMatrix& cm, std::size_t k) {
    if (k >= cm.k()) throw data_error("sensitivity: class index out of range");
    const std::uint64_t r = cm.row_sum(k);
    if (r == 0) return std::nullopt;
    return static_cast<double>(cm.counts[k][k]) / static_cast<double>(r);
}

/// Fraction of true-k1 samples predicted as k2; f(k,k) equals the
/// sensitivity of class k.
inline std::optional<double> class_confusion(const ConfusionMatrix& cm, std::size_t k1,
                                             std::size_t k2) {
    if (k1 >= cm.k() || k2 >= cm.k())
        throw data_error("class_confusion: class index out of range");
    const std::uint64_t r = cm.row_sum(k1);
    if (r == 0) return std::nullopt;
    return static_cast<double>(cm.counts[k1][k2]) / static_cast<double>(r);
}

struct ClassMetrics {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
    bool empty_column = false; // precision reported as 0 because nothing was predicted k
};

struct ClassReport {
    std::vector<ClassMetrics> per_class;
    double accuracy = 0.0;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
    std::uint64_t total = 0;
};

inline ClassReport classification_report(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw data_error("classification_report: empty confusion matrix");
    ClassReport rep;
    rep.total = total;
    rep.accuracy = accuracy(cm);
    for (std::size_t k = 0; k < cm.k(); ++k) {
        ClassMetrics m;
        m.name = cm.class_names[k];
        m.support = cm.row_sum(k);
        const std::uint64_t col = cm.col_sum(k);
        const std::uint64_t diag = cm.counts[k][k];
        if (col == 0) {
            m.precision = 0.0;
            m.empty_column = true;
        } else {
            m.precision = static_cast<double>(diag) / static_cast<double>(col);
        }
        m.recall = m.support == 0
                       ? 0.0
                       : static_cast<double>(diag) / static_cast<double>(m.support);
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        rep.per_class.push_back(m);

        rep.macro_precision += m.precision;
        rep.macro_recall += m.recall;
        rep.macro_f1 += m.f1;
        const double w = static_cast<double>(m.support) / static_cast<double>(total);
        rep.weighted_precision += w * m.precision;
        rep.weighted_recall += w * m.recall;
        rep.weighted_f1 += w * m.f1;
    }
    const double invk = 1.0 / static_cast<double>(cm.k());
    rep.macro_precision *= invk;
    rep.macro_recall *= invk;
    rep.macro_f1 *= invk;
    return rep;
}

/// Text table with the layout precision / recall / f1-score / support and
/// a support-weighted average row, metrics at 2 decimals.
inline std::string render_report(const ClassReport& rep) {
    std::ostringstream os;
    std::size_t name_w = 9; // "Avg/total"
    for (const auto& m : rep.per_class) name_w = std::max(name_w, m.name.size());
    os << std::left << std::setw(static_cast<int>(name_w)) << "" << std::right
       << std::setw(11) << "precision" << std::setw(9) << "recall" << std::setw(10)
       << "f1-score" << std::setw(9) << "support" << "\n";
    os << std::fixed << std::setprecision(2);
    for (const auto& m : rep.per_class) {
        os << std::left << std::setw(static_cast<int>(name_w)) << m.name << std::right
           << std::setw(11) << m.precision << std::setw(9) << m.recall << std::setw(10)
           << m.f1 << std::setw(9) << m.support;
        if (m.empty_column) os << "  (no predictions)";
        os << "\n";
    }
    os << std::left << std::setw(static_cast<int>(name_w)) << "Avg/total" << std::right
       << std::setw(11) << rep.weighted_precision << std::setw(9) << rep.weighted_recall
       << std::setw(10) << rep.weighted_f1 << std::setw(9) << rep.total << "\n";
    return os.str();
}

inline void write_confusion_csv(const ConfusionMatrix& cm, std::ostream& os) {
    os << "true\\pred";
    for (const auto& n : cm.class_names) os << "," << n;
    os << "\n";
    for (std::size_t i = 0; i < cm.k(); ++i) {
        os << cm.class_names[i];
        for (std::size_t j = 0; j < cm.k(); ++j) os << "," << cm.counts[i][j];
        os << "\n";
    }
}

} // namespace cnf
