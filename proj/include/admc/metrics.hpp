#pragma once

#include <cstdint>
#include <vector>

#include "admc/errors.hpp"

namespace admc {

// Rows are true classes, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int64_t classes) : classes_(classes) {
        if (classes < 2) raise(ErrorCategory::Metric, "confusion matrix needs >= 2 classes");
        counts_.assign(static_cast<size_t>(classes * classes), 0);
    }

    static ConfusionMatrix from_counts(const std::vector<std::vector<int64_t>>& rows) {
        ConfusionMatrix cm(static_cast<int64_t>(rows.size()));
        for (size_t t = 0; t < rows.size(); ++t) {
            if (rows[t].size() != rows.size())
                raise(ErrorCategory::Metric, "confusion matrix rows must be square");
            for (size_t p = 0; p < rows[t].size(); ++p)
                cm.add(static_cast<int64_t>(t), static_cast<int64_t>(p), rows[t][p]);
        }
        return cm;
    }

    void add(int64_t truth, int64_t predicted, int64_t count = 1) {
        if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_)
            raise(ErrorCategory::Metric,
                  "confusion matrix: class pair (" + std::to_string(truth) + "," +
                      std::to_string(predicted) + ") outside [0," + std::to_string(classes_) +
                      ")");
        if (count < 0) raise(ErrorCategory::Metric, "confusion matrix: negative count");
        counts_[static_cast<size_t>(truth * classes_ + predicted)] += count;
    }

    int64_t classes() const { return classes_; }
    int64_t count(int64_t truth, int64_t predicted) const {
        return counts_[static_cast<size_t>(truth * classes_ + predicted)];
    }

    int64_t support(int64_t truth) const {
        int64_t n = 0;
        for (int64_t p = 0; p < classes_; ++p) n += count(truth, p);
        return n;
    }

    int64_t predicted_total(int64_t predicted) const {
        int64_t n = 0;
        for (int64_t t = 0; t < classes_; ++t) n += count(t, predicted);
        return n;
    }

    int64_t total() const {
        int64_t n = 0;
        for (int64_t c : counts_) n += c;
        return n;
    }

private:
    int64_t classes_;
    std::vector<int64_t> counts_;
};

// WA is support-weighted recall by default. The literal variant computes
// sum w_i (TP_i + TN_i) / sum w_i N_i with w_i = 1/N_i; it is not bounded by
// one and is kept only behind this switch.
enum class WaVariant { SupportWeightedRecall, LiteralEquation };

struct WaUa {
    double wa = 0.0;
    double ua = 0.0;
};

WaUa compute_wa_ua(const ConfusionMatrix& cm,
                   WaVariant variant = WaVariant::SupportWeightedRecall);

struct F1Acc {
    double macro_f1 = 0.0;
    double accuracy = 0.0;
};

F1Acc compute_f1_acc(const ConfusionMatrix& cm);

} // namespace admc
