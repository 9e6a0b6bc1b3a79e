#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "admc/diffusion.hpp"
#include "admc/itfn.hpp"
#include "admc/nn.hpp"

namespace admc {

// Availability pattern over (text, visual, acoustic). The string form is
// positional: "101" means text and acoustic present, visual missing.
struct ModalityMask {
    std::array<bool, 3> available{};

    static ModalityMask from_string(const std::string& s);
    static ModalityMask from_bits(uint8_t bits);

    std::string to_string() const;
    uint8_t bits() const {
        return static_cast<uint8_t>((available[0] ? 1 : 0) | (available[1] ? 2 : 0) |
                                    (available[2] ? 4 : 0));
    }
    bool all() const { return available[0] && available[1] && available[2]; }
    bool none() const { return !available[0] && !available[1] && !available[2]; }
    int count() const {
        return (available[0] ? 1 : 0) + (available[1] ? 1 : 0) + (available[2] ? 1 : 0);
    }
    bool operator==(const ModalityMask&) const = default;
};

// Every non-empty pattern gets its own classifier; the full pattern doubles
// as the plain fusion baseline.
std::vector<ModalityMask> supported_patterns();

struct FusionConfig {
    int64_t input_width = 256; // feature width per modality row (512 for enhanced features)
    int64_t model_dim = 1024;
    int64_t layers = 2;
    int64_t heads = 4;
    int64_t ff_hidden = 1024;
    double dropout = 0.3;
    int64_t head_hidden = 128;
    int64_t num_classes = 4;

    void validate() const {
        if (input_width < 1 || model_dim < 1 || layers < 1 || heads < 1 || ff_hidden < 1 ||
            head_hidden < 1 || num_classes < 2)
            raise(ErrorCategory::Config, "fusion: all dimensions must be positive (classes >= 2)");
        if (model_dim % heads != 0)
            raise(ErrorCategory::Config, "fusion: model_dim " + std::to_string(model_dim) +
                                             " not divisible by heads " + std::to_string(heads));
        if (dropout < 0.0 || dropout >= 1.0)
            raise(ErrorCategory::Config, "fusion: dropout must lie in [0,1)");
    }
};

// Attention over the three modality rows, mean over the output tokens, then a
// two-layer classifier. Tagged with the availability pattern it was trained for.
template <typename T>
class FusionModel {
public:
    FusionModel() = default;
    FusionModel(const FusionConfig& cfg, ModalityMask pattern, rng::Key init_key)
        : cfg_(cfg), pattern_(pattern) {
        cfg.validate();
        input_proj_ = nn::Linear<T>(cfg.input_width, cfg.model_dim, init_key.child("in"));
        output_proj_ = nn::Linear<T>(cfg.model_dim, cfg.input_width, init_key.child("out"));
        head_ = nn::MlpHead<T>(cfg.input_width, cfg.head_hidden, cfg.num_classes,
                               init_key.child("head"));
        layers_.reserve(static_cast<size_t>(cfg.layers));
        for (int64_t l = 0; l < cfg.layers; ++l)
            layers_.emplace_back(cfg.model_dim, cfg.heads, cfg.ff_hidden, cfg.dropout,
                                 init_key.child("layer").child(static_cast<uint64_t>(l)));
    }

    const FusionConfig& config() const { return cfg_; }
    const ModalityMask& pattern() const { return pattern_; }

    // x: (B, 3, input_width) -> logits (B, num_classes). Dropout is active
    // only when a stream is supplied.
    Tensor<T> forward(const Tensor<T>& x, rng::Stream* drop = nullptr) const {
        if (x.rank() != 3 || x.dim(1) != 3 || x.dim(2) != cfg_.input_width)
            raise(ErrorCategory::Shape,
                  "fusion: expected (B,3," + std::to_string(cfg_.input_width) + "), got " +
                      shape_str(x.dims()));
        Tensor<T> h = ops::add_bias(ops::matmul(x, input_proj_.weight), input_proj_.bias);
        for (const auto& layer : layers_) h = layer.forward(h, drop);
        h = output_proj_.forward(h);
        return head_.forward(ops::mean_tokens(h));
    }

    void collect(const std::string& prefix, nn::ParamMap<T>& out) {
        input_proj_.collect(prefix + ".in", out);
        for (size_t l = 0; l < layers_.size(); ++l)
            layers_[l].collect(prefix + ".layer" + std::to_string(l), out);
        output_proj_.collect(prefix + ".out", out);
        head_.collect(prefix + ".head", out);
    }

private:
    FusionConfig cfg_;
    ModalityMask pattern_{};
    nn::Linear<T> input_proj_;
    nn::Linear<T> output_proj_;
    std::vector<nn::EncoderLayer<T>> layers_;
    nn::MlpHead<T> head_;
};

// Inference logits for a single (3, input_width) stack; dropout off.
template <typename T>
Tensor<T> fuse_classify(const FusionModel<T>& mf, const Tensor<T>& stack) {
    autograd::NoGradGuard guard;
    const int64_t w = mf.config().input_width;
    if (stack.rank() != 2 || stack.dim(0) != 3 || stack.dim(1) != w)
        raise(ErrorCategory::Shape, "fuse_classify: expected (3," + std::to_string(w) +
                                        "), got " + shape_str(stack.dims()));
    Tensor<T> batch = Tensor<T>::zeros({1, 3, w});
    std::copy_n(stack.data(), stack.numel(), batch.mutable_data());
    Tensor<T> logits = mf.forward(batch);
    Tensor<T> out = Tensor<T>::zeros({mf.config().num_classes});
    std::copy_n(logits.data(), out.numel(), out.mutable_data());
    return out;
}

// One classifier per availability pattern, plus an optional classifier over
// enhanced (double-width) features. Immutable once constructed.
class PatternRegistry {
public:
    PatternRegistry() = default;
    explicit PatternRegistry(std::map<uint8_t, FusionModel<float>> models,
                             std::optional<FusionModel<float>> enhanced = std::nullopt)
        : models_(std::move(models)), enhanced_(std::move(enhanced)) {}

    bool has(const ModalityMask& mask) const { return models_.count(mask.bits()) > 0; }
    const FusionModel<float>& model_for(const ModalityMask& mask) const;
    const FusionModel<float>* enhanced() const {
        return enhanced_ ? &*enhanced_ : nullptr;
    }
    std::vector<ModalityMask> patterns() const;
    size_t size() const { return models_.size(); }

private:
    std::map<uint8_t, FusionModel<float>> models_;
    std::optional<FusionModel<float>> enhanced_;
};

// Frozen denoiser + schedule wrapped as the feature-completion engine shared
// by training, inference, and the ablation harness. Counts denoiser
// invocations so callers can assert the sampler never ran.
class Completer {
public:
    Completer(const DenoiserModel<float>& model, const NoiseSchedule& sched, int start_n)
        : model_(&model), sched_(&sched), start_n_(start_n) {
        if (start_n < 1 || start_n > sched.steps())
            raise(ErrorCategory::Step, "completer: start_n " + std::to_string(start_n) +
                                           " outside [1," + std::to_string(sched.steps()) + "]");
    }

    Tensor<float> complete(const Tensor<float>& stack, const ModalityMask& mask,
                           rng::Key key) const;
    // Per-index keys derive from `base`, so all noise draws depend only on
    // (stack, mask, base, index). Identical calls reproduce bitwise; different
    // groupings of the same items agree up to float rounding in the denoiser.
    std::vector<Tensor<float>> complete_many(const std::vector<Tensor<float>>& stacks,
                                             const std::vector<ModalityMask>& masks,
                                             rng::Key base) const;
    // Raw task interface; callers set per-task keys. Chunked internally to
    // bound peak activation memory.
    std::vector<Tensor<float>> complete_tasks(const std::vector<InpaintTask>& tasks) const;

    const DenoiserModel<float>& model() const { return *model_; }
    const NoiseSchedule& schedule() const { return *sched_; }
    int start_n() const { return start_n_; }
    int64_t predictor_calls() const { return predictor_calls_; }

private:
    std::vector<Tensor<float>> complete_tasks_unchunked(
        const std::vector<InpaintTask>& tasks) const;

    const DenoiserModel<float>* model_ = nullptr;
    const NoiseSchedule* sched_ = nullptr;
    int start_n_ = 1;
    mutable int64_t predictor_calls_ = 0;
};

// Leave-one-out enhancement: each row is regenerated from the other two and
// appended to the original, giving a (3, 2*width) stack. Original entries
// come first in each row.
Tensor<float> mmer_enhance(const Completer& completer, const Tensor<float>& full_stack,
                           const ModalityMask& mask, rng::Key key);
std::vector<Tensor<float>> mmer_enhance_many(const Completer& completer,
                                             const std::vector<Tensor<float>>& stacks,
                                             rng::Key base);

// Copy of the stack with unavailable rows zeroed: the no-completion baseline.
Tensor<float> zero_fill_missing(const Tensor<float>& stack, const ModalityMask& mask);

// Completion-then-classification: missing rows are generated, then the
// pattern's classifier labels the completed stack.
Tensor<float> mmcr_logits(const PatternRegistry& registry, const Completer& completer,
                          const Tensor<float>& stack, const ModalityMask& mask, rng::Key key);
int64_t mmcr_infer(const PatternRegistry& registry, const FrozenExtractors& extractors,
                   const Completer& completer, const Sample& sample, const ModalityMask& mask,
                   rng::Key key);

struct FusionTrainConfig {
    FusionConfig arch;
    int64_t batch_size = 64;
    int64_t max_epochs = 50;
    int64_t patience = 8;
    double min_delta = 0.0;
    double lr = 1e-4;
    double lr_decay = 0.97;
    int64_t lr_hold_epochs = 10;
    uint64_t seed = 1;
};

struct FusionTrainResult {
    FusionModel<float> model;
    std::vector<EpochRecord> history;
    int64_t best_epoch = -1;
    double best_val_wa = 0.0;
};

// Trains one pattern's classifier on feature stacks produced exactly as at
// inference for that pattern. Restores the best-validation parameters.
FusionTrainResult train_mf(ModalityMask pattern, const std::vector<Tensor<float>>& train_stacks,
                           const std::vector<int64_t>& train_labels,
                           const std::vector<Tensor<float>>& val_stacks,
                           const std::vector<int64_t>& val_labels,
                           const FusionTrainConfig& cfg);

struct PatternTrainSummary {
    ModalityMask pattern;
    bool enhanced = false;
    int64_t best_epoch = -1;
    double best_val_wa = 0.0;
    int64_t epochs_run = 0;
};

struct RegistryTrainOptions {
    FusionTrainConfig fusion;
    bool include_enhanced = false; // also train the double-width classifier
    rng::Key completion_key{1};    // base key for completing training features
};

// Builds the full registry: completes train/val features per pattern with the
// frozen completer, trains each classifier, and verifies the extractor and
// denoiser parameters were untouched (integrity error otherwise). A null
// completer zero-fills missing rows instead (and cannot train the enhanced
// classifier, which needs generated features).
PatternRegistry train_fusion_registry(const FrozenExtractors& extractors,
                                      const Completer* completer,
                                      const std::vector<Sample>& train,
                                      const std::vector<Sample>& val, int64_t num_classes,
                                      const RegistryTrainOptions& opt,
                                      std::vector<PatternTrainSummary>* summaries = nullptr);

// Fingerprint of the denoiser parameters, used by the freeze check and
// checkpoint manifests.
uint64_t denoiser_fingerprint(const DenoiserModel<float>& model);

} // namespace admc
