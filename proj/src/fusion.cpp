#include "admc/fusion.hpp"

#include <algorithm>
#include <numeric>

#include "admc/adam.hpp"
#include "admc/hash.hpp"
#include "admc/metrics.hpp"
#include "admc/training.hpp"

namespace admc {

namespace {

// Tasks handed to the denoiser in one go; bounds peak activation memory while
// per-task keys keep outputs independent of the grouping.
constexpr size_t kTaskChunk = 256;

int64_t argmax_row(const float* row, int64_t n) {
    return std::max_element(row, row + n) - row;
}

Tensor<float> stack_batch(const std::vector<Tensor<float>>& stacks,
                          const std::vector<size_t>& indices, int64_t width) {
    const int64_t b = static_cast<int64_t>(indices.size());
    Tensor<float> out = Tensor<float>::zeros({b, 3, width});
    float* o = out.mutable_data();
    for (int64_t r = 0; r < b; ++r)
        std::copy_n(stacks[indices[static_cast<size_t>(r)]].data(), 3 * width, o + r * 3 * width);
    return out;
}

void check_feature_set(const std::vector<Tensor<float>>& stacks,
                       const std::vector<int64_t>& labels, int64_t width, int64_t num_classes,
                       const char* which) {
    if (stacks.empty())
        raise(ErrorCategory::Config, std::string("train_mf: empty ") + which + " set");
    if (stacks.size() != labels.size())
        raise(ErrorCategory::Shape, std::string("train_mf: ") + which + " has " +
                                        std::to_string(stacks.size()) + " stacks but " +
                                        std::to_string(labels.size()) + " labels");
    for (const auto& t : stacks)
        if (t.rank() != 2 || t.dim(0) != 3 || t.dim(1) != width)
            raise(ErrorCategory::Shape, std::string("train_mf: ") + which + " stack " +
                                            shape_str(t.dims()) + ", expected (3," +
                                            std::to_string(width) + ")");
    for (int64_t y : labels)
        if (y < 0 || y >= num_classes)
            raise(ErrorCategory::Input, "train_mf: label " + std::to_string(y) +
                                            " outside [0," + std::to_string(num_classes) + ")");
}

double validation_wa(const FusionModel<float>& model, const std::vector<Tensor<float>>& stacks,
                     const std::vector<int64_t>& labels, int64_t batch_size) {
    autograd::NoGradGuard guard;
    ConfusionMatrix cm(model.config().num_classes);
    const int64_t width = model.config().input_width;
    std::vector<size_t> indices;
    for (size_t start = 0; start < stacks.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(stacks.size(), start + static_cast<size_t>(batch_size));
        indices.resize(end - start);
        std::iota(indices.begin(), indices.end(), start);
        Tensor<float> logits = model.forward(stack_batch(stacks, indices, width));
        for (int64_t r = 0; r < logits.dim(0); ++r)
            cm.add(labels[start + static_cast<size_t>(r)],
                   argmax_row(logits.data() + r * logits.dim(1), logits.dim(1)));
    }
    return compute_wa_ua(cm).wa;
}

} // namespace

ModalityMask ModalityMask::from_string(const std::string& s) {
    if (s.size() != 3 || s.find_first_not_of("01") != std::string::npos)
        raise(ErrorCategory::Config,
              "mask '" + s + "' must be three characters of 0/1 (text, visual, acoustic)");
    ModalityMask m;
    for (size_t i = 0; i < 3; ++i) m.available[i] = s[i] == '1';
    return m;
}

ModalityMask ModalityMask::from_bits(uint8_t bits) {
    if (bits > 7)
        raise(ErrorCategory::Config, "mask bits " + std::to_string(bits) + " outside [0,7]");
    ModalityMask m;
    for (size_t i = 0; i < 3; ++i) m.available[i] = (bits >> i) & 1;
    return m;
}

std::string ModalityMask::to_string() const {
    std::string s(3, '0');
    for (size_t i = 0; i < 3; ++i)
        if (available[i]) s[i] = '1';
    return s;
}

std::vector<ModalityMask> supported_patterns() {
    std::vector<ModalityMask> out;
    out.reserve(7);
    for (const char* s : {"100", "010", "001", "110", "101", "011", "111"})
        out.push_back(ModalityMask::from_string(s));
    return out;
}

const FusionModel<float>& PatternRegistry::model_for(const ModalityMask& mask) const {
    auto it = models_.find(mask.bits());
    if (it == models_.end())
        raise(ErrorCategory::Registry,
              "no fusion model registered for pattern " + mask.to_string());
    return it->second;
}

std::vector<ModalityMask> PatternRegistry::patterns() const {
    std::vector<ModalityMask> out;
    out.reserve(models_.size());
    for (const auto& [bits, _] : models_) out.push_back(ModalityMask::from_bits(bits));
    return out;
}

std::vector<Tensor<float>> Completer::complete_tasks(const std::vector<InpaintTask>& tasks) const {
    std::vector<Tensor<float>> out;
    out.reserve(tasks.size());
    for (size_t start = 0; start < tasks.size(); start += kTaskChunk) {
        const size_t end = std::min(tasks.size(), start + kTaskChunk);
        std::vector<InpaintTask> chunk(tasks.begin() + static_cast<std::ptrdiff_t>(start),
                                       tasks.begin() + static_cast<std::ptrdiff_t>(end));
        for (auto& t : complete_tasks_unchunked(chunk)) out.push_back(std::move(t));
    }
    return out;
}

std::vector<Tensor<float>> Completer::complete_tasks_unchunked(
    const std::vector<InpaintTask>& tasks) const {
    auto predict = [this](const Tensor<float>& batch, int n) {
        ++predictor_calls_;
        return model_->predict(batch, n);
    };
    return inpaint_many(predict, tasks, *sched_);
}

Tensor<float> Completer::complete(const Tensor<float>& stack, const ModalityMask& mask,
                                  rng::Key key) const {
    InpaintTask task;
    task.observed = stack;
    task.available = mask.available;
    task.start_n = start_n_;
    task.noise_key = key;
    return complete_tasks_unchunked({task})[0];
}

std::vector<Tensor<float>> Completer::complete_many(const std::vector<Tensor<float>>& stacks,
                                                    const std::vector<ModalityMask>& masks,
                                                    rng::Key base) const {
    if (stacks.size() != masks.size())
        raise(ErrorCategory::Shape, "complete_many: " + std::to_string(stacks.size()) +
                                        " stacks but " + std::to_string(masks.size()) + " masks");
    std::vector<InpaintTask> tasks(stacks.size());
    for (size_t i = 0; i < stacks.size(); ++i) {
        tasks[i].observed = stacks[i];
        tasks[i].available = masks[i].available;
        tasks[i].start_n = start_n_;
        tasks[i].noise_key = base.child(static_cast<uint64_t>(i));
    }
    return complete_tasks(tasks);
}

Tensor<float> zero_fill_missing(const Tensor<float>& stack, const ModalityMask& mask) {
    if (stack.rank() != 2 || stack.dim(0) != 3)
        raise(ErrorCategory::Shape,
              "zero_fill_missing: expected (3, width), got " + shape_str(stack.dims()));
    const int64_t width = stack.dim(1);
    Tensor<float> out = Tensor<float>::zeros({3, width});
    float* o = out.mutable_data();
    for (int64_t m = 0; m < 3; ++m)
        if (mask.available[static_cast<size_t>(m)])
            std::copy_n(stack.data() + m * width, width, o + m * width);
    return out;
}

Tensor<float> mmer_enhance(const Completer& completer, const Tensor<float>& full_stack,
                           const ModalityMask& mask, rng::Key key) {
    if (!mask.all())
        raise(ErrorCategory::Usage,
              "mmer_enhance: enhancement requires all modalities, got " + mask.to_string());
    if (full_stack.rank() != 2 || full_stack.dim(0) != 3)
        raise(ErrorCategory::Shape,
              "mmer_enhance: expected (3, width), got " + shape_str(full_stack.dims()));
    const int64_t width = full_stack.dim(1);

    // One leave-one-out task per row, sharing the denoiser batch.
    std::vector<InpaintTask> tasks(3);
    for (int m = 0; m < 3; ++m) {
        tasks[static_cast<size_t>(m)].observed = full_stack;
        tasks[static_cast<size_t>(m)].available = {true, true, true};
        tasks[static_cast<size_t>(m)].available[static_cast<size_t>(m)] = false;
        tasks[static_cast<size_t>(m)].start_n = completer.start_n();
        tasks[static_cast<size_t>(m)].noise_key = key.child(static_cast<uint64_t>(m));
    }
    const auto completed = completer.complete_tasks(tasks);

    Tensor<float> out = Tensor<float>::zeros({3, 2 * width});
    float* o = out.mutable_data();
    for (int64_t m = 0; m < 3; ++m) {
        std::copy_n(full_stack.data() + m * width, width, o + m * 2 * width);
        std::copy_n(completed[static_cast<size_t>(m)].data() + m * width, width,
                    o + m * 2 * width + width);
    }
    return out;
}

std::vector<Tensor<float>> mmer_enhance_many(const Completer& completer,
                                             const std::vector<Tensor<float>>& stacks,
                                             rng::Key base) {
    if (stacks.empty()) return {};
    const int64_t width = stacks.front().dim(1);
    std::vector<InpaintTask> tasks;
    tasks.reserve(3 * stacks.size());
    for (size_t i = 0; i < stacks.size(); ++i) {
        if (stacks[i].rank() != 2 || stacks[i].dim(0) != 3 || stacks[i].dim(1) != width)
            raise(ErrorCategory::Shape,
                  "mmer_enhance: expected (3, width), got " + shape_str(stacks[i].dims()));
        const rng::Key key = base.child(static_cast<uint64_t>(i));
        for (int m = 0; m < 3; ++m) {
            InpaintTask t;
            t.observed = stacks[i];
            t.available = {true, true, true};
            t.available[static_cast<size_t>(m)] = false;
            t.start_n = completer.start_n();
            t.noise_key = key.child(static_cast<uint64_t>(m));
            tasks.push_back(std::move(t));
        }
    }
    const auto completed = completer.complete_tasks(tasks);

    std::vector<Tensor<float>> out;
    out.reserve(stacks.size());
    for (size_t i = 0; i < stacks.size(); ++i) {
        Tensor<float> enh = Tensor<float>::zeros({3, 2 * width});
        float* o = enh.mutable_data();
        for (int64_t m = 0; m < 3; ++m) {
            std::copy_n(stacks[i].data() + m * width, width, o + m * 2 * width);
            std::copy_n(completed[3 * i + static_cast<size_t>(m)].data() + m * width, width,
                        o + m * 2 * width + width);
        }
        out.push_back(std::move(enh));
    }
    return out;
}

Tensor<float> mmcr_logits(const PatternRegistry& registry, const Completer& completer,
                          const Tensor<float>& stack, const ModalityMask& mask, rng::Key key) {
    if (mask.none())
        raise(ErrorCategory::Usage, "mmcr: at least one modality must be available");
    const FusionModel<float>& mf = registry.model_for(mask);
    return fuse_classify(mf, completer.complete(stack, mask, key));
}

int64_t mmcr_infer(const PatternRegistry& registry, const FrozenExtractors& extractors,
                   const Completer& completer, const Sample& sample, const ModalityMask& mask,
                   rng::Key key) {
    Tensor<float> logits =
        mmcr_logits(registry, completer, extractors.extract_stack(sample), mask, key);
    return argmax_row(logits.data(), logits.numel());
}

FusionTrainResult train_mf(ModalityMask pattern, const std::vector<Tensor<float>>& train_stacks,
                           const std::vector<int64_t>& train_labels,
                           const std::vector<Tensor<float>>& val_stacks,
                           const std::vector<int64_t>& val_labels,
                           const FusionTrainConfig& cfg) {
    cfg.arch.validate();
    if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1)
        raise(ErrorCategory::Config, "train_mf: batch size, epochs and patience must be positive");
    const int64_t width = cfg.arch.input_width;
    check_feature_set(train_stacks, train_labels, width, cfg.arch.num_classes, "train");
    check_feature_set(val_stacks, val_labels, width, cfg.arch.num_classes, "validation");

    const rng::Key root =
        rng::Key(cfg.seed).child("train-mf").child(static_cast<uint64_t>(pattern.bits()));

    FusionTrainResult result;
    result.model = FusionModel<float>(cfg.arch, pattern, root.child("init"));

    nn::ParamMap<float> params;
    result.model.collect("mf", params);
    Adam<float> opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    params.register_into(opt);

    train::EarlyStopper stopper{cfg.patience, cfg.min_delta};
    std::vector<std::vector<float>> best = train::snapshot_params(params);

    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        opt.set_lr(train::lambda_lr(cfg.lr, epoch, cfg.lr_decay, cfg.lr_hold_epochs));
        auto order = root.child("order").child(static_cast<uint64_t>(epoch)).stream();
        const rng::Key drop_key = root.child("drop").child(static_cast<uint64_t>(epoch));

        double loss_sum = 0.0;
        size_t seen = 0;
        uint64_t batch_index = 0;
        for (const auto& indices :
             train::epoch_batches(train_stacks.size(), cfg.batch_size, order)) {
            Tensor<float> batch = stack_batch(train_stacks, indices, width);
            std::vector<int64_t> labels;
            labels.reserve(indices.size());
            for (size_t i : indices) labels.push_back(train_labels[i]);

            auto drop = drop_key.child(batch_index++).stream();
            Tensor<float> logits = result.model.forward(batch, &drop);
            Tensor<float> loss = ops::softmax_cross_entropy(logits, labels);
            const double value = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(value))
                raise(ErrorCategory::Training,
                      "train_mf: non-finite loss at epoch " + std::to_string(epoch));
            try {
                loss.backward();
                opt.step();
            } catch (const Error& e) {
                raise(e.category(),
                      std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
            }
            loss_sum += value * static_cast<double>(indices.size());
            seen += indices.size();
        }

        const double wa = validation_wa(result.model, val_stacks, val_labels, cfg.batch_size);
        result.history.push_back({loss_sum / static_cast<double>(seen), wa});

        // the stopper minimizes, WA is maximized
        if (stopper.observe(epoch, -wa)) best = train::snapshot_params(params);
        if (stopper.should_stop()) break;
    }

    train::restore_params(params, best);
    result.best_epoch = stopper.best_epoch;
    result.best_val_wa = -stopper.best;
    return result;
}

uint64_t denoiser_fingerprint(const DenoiserModel<float>& model) {
    nn::ParamMap<float> params;
    const_cast<DenoiserModel<float>&>(model).collect("adn", params);
    return nn::params_fingerprint(params, fnv1a64("adn", 3));
}

PatternRegistry train_fusion_registry(const FrozenExtractors& extractors,
                                      const Completer* completer,
                                      const std::vector<Sample>& train,
                                      const std::vector<Sample>& val, int64_t num_classes,
                                      const RegistryTrainOptions& opt,
                                      std::vector<PatternTrainSummary>* summaries) {
    if (opt.include_enhanced && !completer)
        raise(ErrorCategory::Config,
              "train_fusion_registry: the enhanced classifier needs a completion model");
    const uint64_t itfn_before = extractors.params_hash();
    const uint64_t adn_before = completer ? denoiser_fingerprint(completer->model()) : 0;

    const auto train_stacks = extractors.extract_stacks(train);
    const auto val_stacks = extractors.extract_stacks(val);
    std::vector<int64_t> train_labels, val_labels;
    train_labels.reserve(train.size());
    val_labels.reserve(val.size());
    for (const auto& s : train) train_labels.push_back(s.label);
    for (const auto& s : val) val_labels.push_back(s.label);

    FusionTrainConfig cfg = opt.fusion;
    cfg.arch.input_width = extractors.feature_width();
    cfg.arch.num_classes = num_classes;

    auto record = [&](const ModalityMask& pattern, bool enhanced,
                      const FusionTrainResult& r) {
        if (summaries)
            summaries->push_back({pattern, enhanced, r.best_epoch, r.best_val_wa,
                                  static_cast<int64_t>(r.history.size())});
    };

    std::map<uint8_t, FusionModel<float>> models;
    for (const ModalityMask& pattern : supported_patterns()) {
        std::vector<Tensor<float>> tr_feats, va_feats;
        if (pattern.all()) {
            // Identity replacement: inference features are the raw stacks.
            tr_feats = train_stacks;
            va_feats = val_stacks;
        } else if (completer) {
            const std::vector<ModalityMask> tr_masks(train_stacks.size(), pattern);
            const std::vector<ModalityMask> va_masks(val_stacks.size(), pattern);
            const rng::Key key =
                opt.completion_key.child("pattern").child(static_cast<uint64_t>(pattern.bits()));
            tr_feats = completer->complete_many(train_stacks, tr_masks, key.child("train"));
            va_feats = completer->complete_many(val_stacks, va_masks, key.child("val"));
        } else {
            tr_feats.reserve(train_stacks.size());
            va_feats.reserve(val_stacks.size());
            for (const auto& s : train_stacks) tr_feats.push_back(zero_fill_missing(s, pattern));
            for (const auto& s : val_stacks) va_feats.push_back(zero_fill_missing(s, pattern));
        }
        FusionTrainResult r =
            train_mf(pattern, tr_feats, train_labels, va_feats, val_labels, cfg);
        record(pattern, false, r);
        models.emplace(pattern.bits(), std::move(r.model));
    }

    std::optional<FusionModel<float>> enhanced;
    if (opt.include_enhanced) {
        const auto tr_enh =
            mmer_enhance_many(*completer, train_stacks, opt.completion_key.child("enh-train"));
        const auto va_enh =
            mmer_enhance_many(*completer, val_stacks, opt.completion_key.child("enh-val"));
        FusionTrainConfig wide = cfg;
        wide.arch.input_width = 2 * extractors.feature_width();
        FusionTrainResult r = train_mf(ModalityMask::from_bits(7), tr_enh, train_labels, va_enh,
                                       val_labels, wide);
        record(ModalityMask::from_bits(7), true, r);
        enhanced = std::move(r.model);
    }

    if (extractors.params_hash() != itfn_before)
        raise(ErrorCategory::Integrity,
              "fusion training mutated the frozen extractor parameters");
    if (completer && denoiser_fingerprint(completer->model()) != adn_before)
        raise(ErrorCategory::Integrity, "fusion training mutated the frozen denoiser parameters");

    return PatternRegistry(std::move(models), std::move(enhanced));
}

} // namespace admc
