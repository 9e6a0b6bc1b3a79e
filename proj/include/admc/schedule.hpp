#pragma once

#include <cstdint>
#include <vector>

#include "admc/errors.hpp"

namespace admc {

enum class PosteriorVariance { Beta, BetaTilde };

// Linear variance schedule for the diffusion process. Timesteps are 1-based
// (n = 1..steps); accessors take n and validate the range. All quantities are
// precomputed in double and kept that way — the consumers cast at use sites.
class NoiseSchedule {
public:
    NoiseSchedule(int steps, double beta_start, double beta_end,
                  PosteriorVariance variance = PosteriorVariance::Beta);

    int steps() const { return steps_; }

    double beta(int n) const { return at(betas_, n); }
    double alpha(int n) const { return at(alphas_, n); }
    double alpha_bar(int n) const { return at(alpha_bars_, n); }
    // Reverse-step noise variance sigma_n^2.
    double sigma2(int n) const { return at(sigma2_, n); }

    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

private:
    double at(const std::vector<double>& v, int n) const {
        if (n < 1 || n > steps_)
            raise(ErrorCategory::Step, "timestep " + std::to_string(n) + " outside [1," +
                                           std::to_string(steps_) + "]");
        return v[static_cast<size_t>(n - 1)];
    }

    int steps_;
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
    std::vector<double> sigma2_;
};

} // namespace admc
