#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "admc/nn.hpp"
#include "admc/rng.hpp"

namespace admc::train {

// Stops when the tracked metric has not improved (by more than min_delta)
// for `patience` consecutive epochs. Lower is better.
struct EarlyStopper {
    int64_t patience = 10;
    double min_delta = 0.0;

    double best = std::numeric_limits<double>::infinity();
    int64_t best_epoch = -1;
    int64_t wait = 0;

    // Returns true when this epoch set a new best.
    bool observe(int64_t epoch, double value) {
        if (value < best - min_delta) {
            best = value;
            best_epoch = epoch;
            wait = 0;
            return true;
        }
        ++wait;
        return false;
    }

    bool should_stop() const { return wait >= patience; }
};

// Multiplicative per-epoch decay that starts after `hold` epochs. Epochs are
// 0-based: epochs 0..hold-1 run at base rate.
inline double lambda_lr(double base, int64_t epoch, double decay = 0.97, int64_t hold = 10) {
    const int64_t past = std::max<int64_t>(0, epoch + 1 - hold);
    return base * std::pow(decay, static_cast<double>(past));
}

// Shuffled sample indices partitioned into batches; the final batch may be short.
inline std::vector<std::vector<size_t>> epoch_batches(size_t count, int64_t batch_size,
                                                      rng::Stream& order) {
    std::vector<size_t> idx(count);
    std::iota(idx.begin(), idx.end(), size_t{0});
    order.shuffle(idx);
    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < count; start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(count, start + static_cast<size_t>(batch_size));
        batches.emplace_back(idx.begin() + static_cast<ptrdiff_t>(start),
                             idx.begin() + static_cast<ptrdiff_t>(end));
    }
    return batches;
}

template <typename T>
std::vector<std::vector<T>> snapshot_params(const nn::ParamMap<T>& params) {
    std::vector<std::vector<T>> copy;
    copy.reserve(params.size());
    for (const auto& [_, t] : params.items())
        copy.emplace_back(t.data(), t.data() + t.numel());
    return copy;
}

template <typename T>
void restore_params(nn::ParamMap<T>& params, const std::vector<std::vector<T>>& saved) {
    if (saved.size() != params.size())
        raise(ErrorCategory::State, "restore_params: snapshot has " +
                                        std::to_string(saved.size()) + " entries for " +
                                        std::to_string(params.size()) + " parameters");
    auto& items = params.items();
    for (size_t i = 0; i < items.size(); ++i) {
        auto& t = items[i].second;
        if (static_cast<int64_t>(saved[i].size()) != t.numel())
            raise(ErrorCategory::State,
                  "restore_params: size mismatch for '" + items[i].first + "'");
        std::copy(saved[i].begin(), saved[i].end(), t.mutable_data());
    }
}

} // namespace admc::train
