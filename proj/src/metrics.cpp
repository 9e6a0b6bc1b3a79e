#include "admc/metrics.hpp"

namespace admc {

namespace {

void require_full_support(const ConfusionMatrix& cm) {
    for (int64_t c = 0; c < cm.classes(); ++c)
        if (cm.support(c) == 0)
            raise(ErrorCategory::Metric,
                  "class " + std::to_string(c) + " has no samples");
}

} // namespace

WaUa compute_wa_ua(const ConfusionMatrix& cm, WaVariant variant) {
    require_full_support(cm);
    const int64_t c = cm.classes();
    const double total = static_cast<double>(cm.total());

    WaUa out;
    for (int64_t i = 0; i < c; ++i) {
        const double n = static_cast<double>(cm.support(i));
        const double recall = static_cast<double>(cm.count(i, i)) / n;
        out.ua += recall / static_cast<double>(c);
        if (variant == WaVariant::SupportWeightedRecall) out.wa += n * recall / total;
    }
    if (variant == WaVariant::LiteralEquation) {
        double num = 0.0, den = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            const double n = static_cast<double>(cm.support(i));
            const double tp = static_cast<double>(cm.count(i, i));
            const double tn = total - n - static_cast<double>(cm.predicted_total(i)) + tp;
            const double w = 1.0 / n;
            num += w * (tp + tn);
            den += w * n;
        }
        out.wa = num / den;
    }
    return out;
}

F1Acc compute_f1_acc(const ConfusionMatrix& cm) {
    require_full_support(cm);
    const int64_t c = cm.classes();

    F1Acc out;
    double diagonal = 0.0;
    for (int64_t i = 0; i < c; ++i) {
        const double tp = static_cast<double>(cm.count(i, i));
        diagonal += tp;
        const double predicted = static_cast<double>(cm.predicted_total(i));
        const double precision = predicted > 0.0 ? tp / predicted : 0.0;
        const double recall = tp / static_cast<double>(cm.support(i));
        if (precision + recall > 0.0)
            out.macro_f1 += 2.0 * precision * recall / (precision + recall);
    }
    out.macro_f1 /= static_cast<double>(c);
    out.accuracy = diagonal / static_cast<double>(cm.total());
    return out;
}

} // namespace admc
