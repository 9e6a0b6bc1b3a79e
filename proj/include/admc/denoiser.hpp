#pragma once

#include <string>
#include <vector>

#include "admc/nn.hpp"
#include "admc/ops.hpp"
#include "admc/rng.hpp"
#include "admc/tensor.hpp"

namespace admc {

// Noise-prediction network over a stack of modality feature rows.
// Tokens are the three modality rows; conditioning on the diffusion step
// comes from a fixed sinusoidal table, and learned modality embeddings give
// the permutation-equivariant attention stack a notion of row identity.
struct DenoiserConfig {
    int64_t feature_dim = 256;
    int64_t model_dim = 1024;
    int64_t layers = 4;
    int64_t heads = 8;
    int64_t ff_hidden = 1024;
    int64_t max_steps = 1000; // highest diffusion step the model can condition on

    void validate() const {
        if (feature_dim < 1 || model_dim < 1 || layers < 1 || heads < 1 || ff_hidden < 1)
            raise(ErrorCategory::Config, "denoiser: all dimensions must be positive");
        if (model_dim % heads != 0)
            raise(ErrorCategory::Config,
                  "denoiser: model_dim " + std::to_string(model_dim) +
                      " not divisible by heads " + std::to_string(heads));
        if (model_dim % 2 != 0)
            raise(ErrorCategory::Config, "denoiser: model_dim must be even");
        if (max_steps < 1)
            raise(ErrorCategory::Config, "denoiser: max_steps must be positive");
    }
};

template <typename T>
class DenoiserModel {
public:
    DenoiserModel(const DenoiserConfig& cfg, rng::Key init_key) : cfg_(cfg) {
        cfg.validate();
        input_proj_ = nn::Linear<T>(cfg.feature_dim, cfg.model_dim, init_key.child("in"));
        output_proj_ = nn::Linear<T>(cfg.model_dim, cfg.feature_dim, init_key.child("out"));
        modality_embedding_ = Tensor<T>::zeros({3, cfg.model_dim});
        {
            auto s = init_key.child("modality").stream();
            T* d = modality_embedding_.mutable_data();
            const int64_t n = modality_embedding_.numel();
            s.fill_normal(d, static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) d[i] = static_cast<T>(d[i] * T(0.02));
            modality_embedding_.set_requires_grad(true);
        }
        // row n holds the embedding of step n; row 0 is unused
        step_table_ = ops::sinusoidal_table<T>(cfg.max_steps + 1, cfg.model_dim);
        layers_.reserve(static_cast<size_t>(cfg.layers));
        for (int64_t l = 0; l < cfg.layers; ++l)
            layers_.emplace_back(cfg.model_dim, cfg.heads, cfg.ff_hidden, 0.0,
                                 init_key.child("layer").child(static_cast<uint64_t>(l)));
    }

    const DenoiserConfig& config() const { return cfg_; }

    // noisy: (B, 3, feature_dim); steps: one diffusion step per batch row.
    Tensor<T> forward(const Tensor<T>& noisy, const std::vector<int64_t>& steps) const {
        if (noisy.rank() != 3 || noisy.dim(1) != 3 || noisy.dim(2) != cfg_.feature_dim)
            raise(ErrorCategory::Shape,
                  "denoiser: expected (B,3," + std::to_string(cfg_.feature_dim) + "), got " +
                      shape_str(noisy.dims()));
        if (static_cast<int64_t>(steps.size()) != noisy.dim(0))
            raise(ErrorCategory::Shape, "denoiser: steps count " + std::to_string(steps.size()) +
                                            " != batch " + std::to_string(noisy.dim(0)));
        for (int64_t n : steps)
            if (n < 1 || n > cfg_.max_steps)
                raise(ErrorCategory::Step, "denoiser: step " + std::to_string(n) +
                                               " outside [1," + std::to_string(cfg_.max_steps) +
                                               "]");
        Tensor<T> x = ops::matmul(noisy, input_proj_.weight);
        x = ops::add_bias(x, input_proj_.bias);
        x = ops::add_broadcast_batch(x, modality_embedding_);
        x = ops::add_broadcast_tokens(x, ops::gather_rows(step_table_, steps));
        for (const auto& layer : layers_) x = layer.forward(x, nullptr);
        return output_proj_.forward(x);
    }

    // Inference-only batch prediction at one shared step.
    Tensor<T> predict(const Tensor<T>& noisy, int64_t n) const {
        autograd::NoGradGuard guard;
        return forward(noisy, std::vector<int64_t>(static_cast<size_t>(noisy.dim(0)), n));
    }

    void collect(const std::string& prefix, nn::ParamMap<T>& out) {
        input_proj_.collect(prefix + ".in", out);
        out.add(prefix + ".modality_embedding", modality_embedding_);
        for (size_t l = 0; l < layers_.size(); ++l)
            layers_[l].collect(prefix + ".layer" + std::to_string(l), out);
        output_proj_.collect(prefix + ".out", out);
    }

private:
    DenoiserConfig cfg_;
    nn::Linear<T> input_proj_;
    nn::Linear<T> output_proj_;
    Tensor<T> modality_embedding_;
    Tensor<T> step_table_;
    std::vector<nn::EncoderLayer<T>> layers_;
};

// eps prediction for a single (3, feature_dim) stack.
template <typename T>
Tensor<T> predict_noise(const DenoiserModel<T>& model, const Tensor<T>& noisy, int64_t n) {
    autograd::NoGradGuard guard;
    const int64_t f = model.config().feature_dim;
    if (noisy.rank() != 2 || noisy.dim(0) != 3 || noisy.dim(1) != f)
        raise(ErrorCategory::Shape,
              "predict_noise: expected (3," + std::to_string(f) + "), got " +
                  shape_str(noisy.dims()));
    Tensor<T> batch = Tensor<T>::zeros({1, 3, f});
    std::copy_n(noisy.data(), noisy.numel(), batch.mutable_data());
    Tensor<T> pred = model.forward(batch, {n});
    Tensor<T> out = Tensor<T>::zeros({3, f});
    std::copy_n(pred.data(), out.numel(), out.mutable_data());
    return out;
}

// Mean squared error between predicted and actual noise; the training objective.
template <typename T>
Tensor<T> denoising_loss(const DenoiserModel<T>& model, const Tensor<T>& noisy,
                         const Tensor<T>& target_noise, const std::vector<int64_t>& steps) {
    return ops::mse_loss(model.forward(noisy, steps), target_noise);
}

} // namespace admc
