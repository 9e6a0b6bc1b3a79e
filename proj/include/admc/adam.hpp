#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "admc/tensor.hpp"

namespace admc {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Parameters are registered once (with a name used
// in diagnostics); step() consumes the gradients accumulated on them and
// zeroes them afterwards. Parameters without a gradient this round are
// skipped (their moments do not advance).
template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.lr <= 0.0) raise(ErrorCategory::Optimizer, "Adam lr must be positive");
        if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
            raise(ErrorCategory::Optimizer, "Adam betas must lie in [0,1)");
    }

    void add_param(const std::string& name, Tensor<T> param) {
        if (!param.requires_grad())
            raise(ErrorCategory::Optimizer, "parameter '" + name + "' does not require grad");
        slots_.push_back({name, std::move(param), {}, {}});
        auto& s = slots_.back();
        s.m.assign(static_cast<size_t>(s.param.numel()), 0.0);
        s.v.assign(static_cast<size_t>(s.param.numel()), 0.0);
    }

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) {
        if (lr <= 0.0) raise(ErrorCategory::Optimizer, "Adam lr must be positive");
        cfg_.lr = lr;
    }

    size_t param_count() const { return slots_.size(); }

    // One update over all registered parameters with pending gradients.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& s : slots_) {
            if (!s.param.has_grad()) continue;
            const auto& g = s.param.grad();
            T* p = s.param.mutable_data();
            for (size_t i = 0; i < g.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                if (!std::isfinite(gi))
                    raise(ErrorCategory::Optimizer,
                          "non-finite gradient in parameter '" + s.name + "'");
                s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
                s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mh = s.m[i] / bc1;
                const double vh = s.v[i] / bc2;
                p[i] = static_cast<T>(static_cast<double>(p[i]) -
                                      cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
            }
            s.param.zero_grad();
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param.zero_grad();
    }

private:
    struct Slot {
        std::string name;
        Tensor<T> param;
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamConfig cfg_;
    std::vector<Slot> slots_;
    int64_t t_ = 0;
};

} // namespace admc
