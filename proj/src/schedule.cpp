#include "admc/schedule.hpp"

namespace admc {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end,
                             PosteriorVariance variance)
    : steps_(steps) {
    if (steps < 1)
        raise(ErrorCategory::Config, "schedule needs at least 1 step, got " + std::to_string(steps));
    if (beta_start <= 0.0 || beta_end >= 1.0 || beta_start > beta_end)
        raise(ErrorCategory::Config,
              "schedule requires 0 < beta_start <= beta_end < 1, got [" +
                  std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");

    betas_.resize(static_cast<size_t>(steps));
    alphas_.resize(static_cast<size_t>(steps));
    alpha_bars_.resize(static_cast<size_t>(steps));
    sigma2_.resize(static_cast<size_t>(steps));

    double running = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double t = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas_[static_cast<size_t>(i)] = beta_start + t * (beta_end - beta_start);
        alphas_[static_cast<size_t>(i)] = 1.0 - betas_[static_cast<size_t>(i)];
        running *= alphas_[static_cast<size_t>(i)];
        alpha_bars_[static_cast<size_t>(i)] = running;
    }
    for (int i = 0; i < steps; ++i) {
        if (variance == PosteriorVariance::Beta || i == 0) {
            sigma2_[static_cast<size_t>(i)] = betas_[static_cast<size_t>(i)];
        } else {
            sigma2_[static_cast<size_t>(i)] = (1.0 - alpha_bars_[static_cast<size_t>(i - 1)]) /
                                              (1.0 - alpha_bars_[static_cast<size_t>(i)]) *
                                              betas_[static_cast<size_t>(i)];
        }
    }
}

} // namespace admc
