#include "admc/diffusion.hpp"

#include <cmath>

#include "admc/adam.hpp"
#include "admc/training.hpp"

namespace admc {

namespace {

struct CorruptedBatch {
    Tensor<float> noisy;
    Tensor<float> target;
    std::vector<int64_t> steps;
};

// Stacks the selected samples, corrupting each to its own step.
CorruptedBatch corrupt_batch(const std::vector<Tensor<float>>& features,
                             const std::vector<size_t>& index, const std::vector<int>& steps,
                             const std::vector<std::vector<float>>& noise,
                             const NoiseSchedule& sched, int64_t dim) {
    const int64_t b = static_cast<int64_t>(index.size());
    CorruptedBatch out{Tensor<float>::zeros({b, 3, dim}), Tensor<float>::zeros({b, 3, dim}), {}};
    out.steps.reserve(index.size());
    float* nd = out.noisy.mutable_data();
    float* td = out.target.mutable_data();
    for (int64_t r = 0; r < b; ++r) {
        const size_t i = index[static_cast<size_t>(r)];
        const int n = steps[static_cast<size_t>(r)];
        const double ab = sched.alpha_bar(n);
        const float signal = static_cast<float>(std::sqrt(ab));
        const float scale = static_cast<float>(std::sqrt(1.0 - ab));
        const float* f0 = features[i].data();
        const float* eps = noise[static_cast<size_t>(r)].data();
        float* nrow = nd + r * 3 * dim;
        float* trow = td + r * 3 * dim;
        for (int64_t j = 0; j < 3 * dim; ++j) {
            nrow[j] = signal * f0[j] + scale * eps[j];
            trow[j] = eps[j];
        }
        out.steps.push_back(n);
    }
    return out;
}

double batch_loss_eval(const DenoiserModel<float>& model, const CorruptedBatch& batch) {
    autograd::NoGradGuard guard;
    return static_cast<double>(denoising_loss(model, batch.noisy, batch.target, batch.steps)
                                   .data()[0]);
}

void check_feature_set(const std::vector<Tensor<float>>& features, int64_t dim,
                       const char* which) {
    if (features.empty())
        raise(ErrorCategory::Config, std::string("train_adn: empty ") + which + " set");
    for (const auto& f : features)
        if (f.rank() != 2 || f.dim(0) != 3 || f.dim(1) != dim)
            raise(ErrorCategory::Shape, std::string("train_adn: ") + which +
                                            " sample has shape " + shape_str(f.dims()) +
                                            ", expected (3," + std::to_string(dim) + ")");
}

} // namespace

AdnTrainReport train_adn(DenoiserModel<float>& model,
                         const std::vector<Tensor<float>>& train_features,
                         const std::vector<Tensor<float>>& val_features,
                         const NoiseSchedule& sched, const AdnTrainConfig& cfg) {
    const int64_t dim = model.config().feature_dim;
    check_feature_set(train_features, dim, "train");
    check_feature_set(val_features, dim, "validation");
    if (sched.steps() > model.config().max_steps)
        raise(ErrorCategory::Config,
              "train_adn: schedule has " + std::to_string(sched.steps()) +
                  " steps but the model conditions on at most " +
                  std::to_string(model.config().max_steps));
    if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1)
        raise(ErrorCategory::Config, "train_adn: batch size, epochs and patience must be positive");

    nn::ParamMap<float> params;
    model.collect("adn", params);
    Adam<float> opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    params.register_into(opt);

    const rng::Key root = rng::Key(cfg.seed).child("train-adn");
    const size_t elems = static_cast<size_t>(3 * dim);

    // Validation corruption is drawn once so the metric is comparable across epochs.
    std::vector<CorruptedBatch> val_batches;
    double trivial_sum = 0.0;
    {
        auto vs = root.child("val").stream();
        std::vector<size_t> index;
        std::vector<int> steps;
        std::vector<std::vector<float>> noise;
        auto flush = [&] {
            if (index.empty()) return;
            val_batches.push_back(corrupt_batch(val_features, index, steps, noise, sched, dim));
            index.clear();
            steps.clear();
            noise.clear();
        };
        for (size_t i = 0; i < val_features.size(); ++i) {
            index.push_back(i);
            steps.push_back(static_cast<int>(vs.next_below(static_cast<uint64_t>(sched.steps()))) + 1);
            auto& eps = noise.emplace_back(elems, 0.0f);
            vs.fill_normal(eps.data(), elems);
            for (float e : eps) trivial_sum += static_cast<double>(e) * e;
            if (index.size() == static_cast<size_t>(cfg.batch_size)) flush();
        }
        flush();
    }
    const double val_elems = static_cast<double>(val_features.size() * elems);

    AdnTrainReport report;
    report.trivial_val_mse = trivial_sum / val_elems;

    train::EarlyStopper stopper{cfg.patience, cfg.min_delta};
    std::vector<std::vector<float>> best = train::snapshot_params(params);

    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        opt.set_lr(train::lambda_lr(cfg.lr, epoch, cfg.lr_decay, cfg.lr_hold_epochs));

        auto order = root.child("order").child(static_cast<uint64_t>(epoch)).stream();
        auto corrupt = root.child("corrupt").child(static_cast<uint64_t>(epoch)).stream();

        double epoch_sum = 0.0;
        size_t epoch_count = 0;
        for (const auto& index : train::epoch_batches(train_features.size(), cfg.batch_size, order)) {
            std::vector<int> steps;
            std::vector<std::vector<float>> noise;
            steps.reserve(index.size());
            noise.reserve(index.size());
            for (size_t r = 0; r < index.size(); ++r) {
                steps.push_back(
                    static_cast<int>(corrupt.next_below(static_cast<uint64_t>(sched.steps()))) + 1);
                auto& eps = noise.emplace_back(elems, 0.0f);
                corrupt.fill_normal(eps.data(), elems);
            }
            CorruptedBatch batch = corrupt_batch(train_features, index, steps, noise, sched, dim);
            Tensor<float> loss = denoising_loss(model, batch.noisy, batch.target, batch.steps);
            const double value = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(value))
                raise(ErrorCategory::Training,
                      "train_adn: non-finite loss at epoch " + std::to_string(epoch));
            try {
                loss.backward();
                opt.step();
            } catch (const Error& e) {
                raise(e.category(),
                      std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
            }
            epoch_sum += value * static_cast<double>(index.size());
            epoch_count += index.size();
        }
        report.train_mse.push_back(epoch_sum / static_cast<double>(epoch_count));

        double val_sum = 0.0;
        for (const auto& batch : val_batches)
            val_sum += batch_loss_eval(model, batch) *
                       static_cast<double>(batch.steps.size() * elems);
        const double val = val_sum / val_elems;
        report.val_mse.push_back(val);

        if (stopper.observe(epoch, val)) best = train::snapshot_params(params);
        if (stopper.should_stop()) break;
    }

    train::restore_params(params, best);
    report.best_epoch = stopper.best_epoch;
    report.best_val = stopper.best;
    return report;
}

} // namespace admc
