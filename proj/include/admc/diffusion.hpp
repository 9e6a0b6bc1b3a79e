#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "admc/denoiser.hpp"
#include "admc/rng.hpp"
#include "admc/schedule.hpp"
#include "admc/tensor.hpp"

namespace admc {

// F^n = sqrt(abar_n) F^0 + sqrt(1 - abar_n) eps
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& f0, int n, const Tensor<T>& eps,
                          const NoiseSchedule& sched) {
    if (f0.dims() != eps.dims())
        raise(ErrorCategory::Shape, "forward_diffuse: feature shape " + shape_str(f0.dims()) +
                                        " != noise shape " + shape_str(eps.dims()));
    const double ab = sched.alpha_bar(n);
    const T signal = static_cast<T>(std::sqrt(ab));
    const T noise = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out = Tensor<T>::zeros(f0.dims());
    T* o = out.mutable_data();
    const T* a = f0.data();
    const T* e = eps.data();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] = signal * a[i] + noise * e[i];
    return out;
}

template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& f0, int n, rng::Stream& noise,
                          const NoiseSchedule& sched) {
    Tensor<T> eps = Tensor<T>::zeros(f0.dims());
    noise.fill_normal(eps.mutable_data(), static_cast<size_t>(eps.numel()));
    return forward_diffuse(f0, n, eps, sched);
}

// Per-step constants of the ancestral update
//   F^{n-1} = inv_sqrt_alpha * (F^n - noise_coeff * eps_hat) + sigma * z.
struct StepCoeffs {
    double inv_sqrt_alpha;
    double noise_coeff;
    double sigma;
};

inline StepCoeffs step_coeffs(const NoiseSchedule& sched, int n) {
    return {1.0 / std::sqrt(sched.alpha(n)),
            sched.beta(n) / std::sqrt(1.0 - sched.alpha_bar(n)),
            std::sqrt(sched.sigma2(n))};
}

// One update with the noise prediction and z supplied by the caller.
template <typename T>
Tensor<T> reverse_step_with(const Tensor<T>& fn, const Tensor<T>& eps_hat, const Tensor<T>& z,
                            int n, const NoiseSchedule& sched) {
    if (fn.dims() != eps_hat.dims() || fn.dims() != z.dims())
        raise(ErrorCategory::Shape, "reverse_step: mismatched shapes " + shape_str(fn.dims()) +
                                        ", " + shape_str(eps_hat.dims()) + ", " +
                                        shape_str(z.dims()));
    const StepCoeffs c = step_coeffs(sched, n);
    Tensor<T> out = Tensor<T>::zeros(fn.dims());
    T* o = out.mutable_data();
    const T* f = fn.data();
    const T* e = eps_hat.data();
    const T* zd = z.data();
    for (int64_t i = 0; i < out.numel(); ++i)
        o[i] = static_cast<T>(c.inv_sqrt_alpha * (f[i] - c.noise_coeff * e[i]) + c.sigma * zd[i]);
    return out;
}

// One ancestral sampling step; z ~ N(0, I) for n > 1, z = 0 at the final step.
// `predict` maps (F^n, n) -> predicted noise of the same shape.
template <typename T, typename Predictor>
Tensor<T> reverse_step(Predictor&& predict, const Tensor<T>& fn, int n, const NoiseSchedule& sched,
                       rng::Stream& noise) {
    Tensor<T> z = Tensor<T>::zeros(fn.dims());
    if (n > 1) noise.fill_normal(z.mutable_data(), static_cast<size_t>(z.numel()));
    return reverse_step_with(fn, predict(fn, n), z, n, sched);
}

// One feature stack to complete. Rows of `observed` whose modality is marked
// available are treated as ground truth; the other rows are ignored on input
// and replaced by generated features on output.
struct InpaintTask {
    Tensor<float> observed;           // (3, feature_dim)
    std::array<bool, 3> available{};  // (text, visual, acoustic)
    int start_n = 50;
    rng::Key noise_key{0};            // all sampling for this task derives from here

    bool fully_observed() const { return available[0] && available[1] && available[2]; }
    bool fully_missing() const { return !available[0] && !available[1] && !available[2]; }
};

struct InpaintOptions {
    bool allow_pure_generation = false;
};

namespace detail {

inline void refresh_available_rows(std::vector<float>& state, const InpaintTask& task,
                                   int level, const NoiseSchedule& sched, int64_t dim) {
    // Chain level 0 restores the ground truth rows exactly.
    for (int m = 0; m < 3; ++m) {
        if (!task.available[static_cast<size_t>(m)]) continue;
        float* row = state.data() + static_cast<int64_t>(m) * dim;
        const float* obs = task.observed.data() + static_cast<int64_t>(m) * dim;
        if (level == 0) {
            std::copy_n(obs, dim, row);
            continue;
        }
        const double ab = sched.alpha_bar(level);
        const float signal = static_cast<float>(std::sqrt(ab));
        const float noise = static_cast<float>(std::sqrt(1.0 - ab));
        auto s = task.noise_key.child("fwd").child(static_cast<uint64_t>(level))
                     .child(static_cast<uint64_t>(m)).stream();
        for (int64_t j = 0; j < dim; ++j)
            row[j] = signal * obs[j] + noise * static_cast<float>(s.next_normal());
    }
}

} // namespace detail

// Mask-replacement inpainting over a batch of tasks. Tasks may carry distinct
// masks and start steps; the denoiser is invoked once per chain step on all
// tasks whose chain is active at that step. Per-task keyed streams make every
// random draw independent of which other tasks share the batch; identical
// ordered task lists reproduce bitwise. Regrouping the same tasks can still
// shift generated rows by float rounding, because the predictor's batched
// arithmetic depends on the batch shape.
// `predict_batch` maps ((B,3,D) stack, step) -> (B,3,D) noise prediction.
template <typename Predictor>
std::vector<Tensor<float>> inpaint_many(Predictor&& predict_batch,
                                        const std::vector<InpaintTask>& tasks,
                                        const NoiseSchedule& sched,
                                        const InpaintOptions& opt = {}) {
    if (tasks.empty()) return {};
    const int64_t dim = tasks.front().observed.dim(1);
    int max_start = 0;
    for (const auto& t : tasks) {
        if (t.observed.rank() != 2 || t.observed.dim(0) != 3 || t.observed.dim(1) != dim)
            raise(ErrorCategory::Shape, "inpaint: expected (3," + std::to_string(dim) +
                                            ") features, got " + shape_str(t.observed.dims()));
        if (t.start_n < 1 || t.start_n > sched.steps())
            raise(ErrorCategory::Step, "inpaint: start_n " + std::to_string(t.start_n) +
                                           " outside [1," + std::to_string(sched.steps()) + "]");
        if (t.fully_missing() && !opt.allow_pure_generation)
            raise(ErrorCategory::Usage,
                  "inpaint: all-missing mask requires pure-generation mode");
        if (!t.fully_observed()) max_start = std::max(max_start, t.start_n);
    }

    const size_t count = tasks.size();
    std::vector<std::vector<float>> state(count);
    std::vector<Tensor<float>> out(count);
    std::vector<size_t> active; // tasks whose reverse chain includes the current step

    for (size_t i = 0; i < count; ++i) {
        if (tasks[i].fully_observed()) {
            // All-ones mask makes every replacement an identity: skip the chain.
            out[i] = Tensor<float>::zeros({3, dim});
            std::copy_n(tasks[i].observed.data(), 3 * dim, out[i].mutable_data());
        }
    }

    for (int n = max_start; n >= 1; --n) {
        // Chains starting at this step join the batch.
        for (size_t i = 0; i < count; ++i) {
            const auto& task = tasks[i];
            if (task.fully_observed() || task.start_n != n) continue;
            auto& st = state[i];
            st.assign(static_cast<size_t>(3 * dim), 0.0f);
            for (int m = 0; m < 3; ++m) {
                if (task.available[static_cast<size_t>(m)]) continue;
                auto s = task.noise_key.child("gen").child(static_cast<uint64_t>(m)).stream();
                float* row = st.data() + static_cast<int64_t>(m) * dim;
                for (int64_t j = 0; j < dim; ++j) row[j] = static_cast<float>(s.next_normal());
            }
            detail::refresh_available_rows(st, task, n, sched, dim);
            active.push_back(i);
        }
        if (active.empty()) continue;

        const int64_t b = static_cast<int64_t>(active.size());
        Tensor<float> batch = Tensor<float>::zeros({b, 3, dim});
        float* bd = batch.mutable_data();
        for (int64_t r = 0; r < b; ++r)
            std::copy_n(state[active[static_cast<size_t>(r)]].data(), 3 * dim, bd + r * 3 * dim);

        Tensor<float> eps_hat = predict_batch(batch, n);
        if (eps_hat.dims() != batch.dims())
            raise(ErrorCategory::Shape, "inpaint: predictor returned " +
                                            shape_str(eps_hat.dims()) + " for input " +
                                            shape_str(batch.dims()));

        const StepCoeffs c = step_coeffs(sched, n);
        for (int64_t r = 0; r < b; ++r) {
            const size_t i = active[static_cast<size_t>(r)];
            const auto& task = tasks[i];
            auto& st = state[i];
            const float* eh = eps_hat.data() + r * 3 * dim;
            for (int m = 0; m < 3; ++m) {
                if (task.available[static_cast<size_t>(m)]) continue; // row is refreshed below
                float* row = st.data() + static_cast<int64_t>(m) * dim;
                const float* e = eh + static_cast<int64_t>(m) * dim;
                if (n > 1) {
                    auto zs = task.noise_key.child("rev").child(static_cast<uint64_t>(n))
                                  .child(static_cast<uint64_t>(m)).stream();
                    for (int64_t j = 0; j < dim; ++j)
                        row[j] = static_cast<float>(
                            c.inv_sqrt_alpha * (row[j] - c.noise_coeff * e[j]) +
                            c.sigma * zs.next_normal());
                } else {
                    for (int64_t j = 0; j < dim; ++j)
                        row[j] = static_cast<float>(c.inv_sqrt_alpha *
                                                    (row[j] - c.noise_coeff * e[j]));
                }
            }
            detail::refresh_available_rows(st, task, n - 1, sched, dim);
        }
    }

    for (size_t i = 0; i < count; ++i) {
        if (tasks[i].fully_observed()) continue;
        out[i] = Tensor<float>::zeros({3, dim});
        std::copy_n(state[i].data(), 3 * dim, out[i].mutable_data());
    }
    return out;
}

// Single-stack completion.
template <typename Predictor>
Tensor<float> inpaint(Predictor&& predict_batch, const Tensor<float>& observed,
                      const std::array<bool, 3>& available, int start_n,
                      const NoiseSchedule& sched, rng::Key noise_key,
                      const InpaintOptions& opt = {}) {
    std::vector<InpaintTask> tasks(1);
    tasks[0].observed = observed;
    tasks[0].available = available;
    tasks[0].start_n = start_n;
    tasks[0].noise_key = noise_key;
    return inpaint_many(predict_batch, tasks, sched, opt)[0];
}

struct AdnTrainConfig {
    int64_t batch_size = 64;
    int64_t max_epochs = 200;
    int64_t patience = 10;
    double min_delta = 0.0;
    double lr = 1e-4;
    double lr_decay = 0.97;
    int64_t lr_hold_epochs = 10; // decay kicks in after this many epochs
    uint64_t seed = 1;
};

struct AdnTrainReport {
    std::vector<double> train_mse; // per-epoch mean over batches
    std::vector<double> val_mse;   // per-epoch, fixed corruption
    double trivial_val_mse = 0.0;  // zero-predictor baseline on the same corruption
    int64_t best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
};

// Trains the denoiser on full-modality feature stacks; returns the
// best-validation parameters in `model`.
AdnTrainReport train_adn(DenoiserModel<float>& model,
                         const std::vector<Tensor<float>>& train_features,
                         const std::vector<Tensor<float>>& val_features,
                         const NoiseSchedule& sched, const AdnTrainConfig& cfg);

} // namespace admc
