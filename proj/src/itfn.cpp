#include "admc/itfn.hpp"

#include <algorithm>
#include <cmath>

#include "admc/adam.hpp"
#include "admc/hash.hpp"
#include "admc/metrics.hpp"
#include "admc/ops.hpp"
#include "admc/training.hpp"

namespace admc {

namespace {

constexpr float kMinScale = 1e-6f;

std::vector<std::pair<int64_t, int64_t>> text_banks(int64_t width) {
    // kernel widths 3/4/5 with channels splitting the target width
    const int64_t ch = width / 3;
    if (ch < 1) raise(ErrorCategory::Config, "itfn: encoder width too small for 3 conv banks");
    return {{3, width - 2 * ch}, {4, ch}, {5, ch}};
}

int64_t frame_dim_of(const std::vector<Sample>& samples, Modality m, const char* which) {
    if (samples.empty())
        raise(ErrorCategory::Config, std::string("train_unimodal: empty ") + which + " set");
    const int64_t dim = samples.front().of(m).dim(1);
    for (const auto& s : samples)
        if (s.of(m).dim(1) != dim)
            raise(ErrorCategory::Shape, std::string("train_unimodal: inconsistent frame dim in ") +
                                            which + " set");
    return dim;
}

std::vector<int64_t> argmax_rows(const Tensor<float>& logits) {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(logits.dim(0)));
    for (int64_t b = 0; b < logits.dim(0); ++b) {
        const float* row = logits.data() + b * logits.dim(1);
        out.push_back(std::max_element(row, row + logits.dim(1)) - row);
    }
    return out;
}

double validation_wa(const UnimodalModel& model, const std::vector<Sample>& val,
                     int64_t num_classes, int64_t batch_size) {
    autograd::NoGradGuard guard;
    ConfusionMatrix cm(num_classes);
    std::vector<size_t> indices;
    for (size_t start = 0; start < val.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(val.size(), start + static_cast<size_t>(batch_size));
        indices.resize(end - start);
        std::iota(indices.begin(), indices.end(), start);
        PaddedBatch batch = pad_batch(val, indices, model.modality);
        Tensor<float> logits =
            model.head.forward(model.encode_batch(batch.frames, batch.lengths));
        const auto preds = argmax_rows(logits);
        for (size_t i = 0; i < preds.size(); ++i) cm.add(batch.labels[i], preds[i]);
    }
    return compute_wa_ua(cm).wa;
}

} // namespace

UnimodalModel make_unimodal_model(Modality m, int64_t frame_dim, int64_t num_classes,
                                  const UnimodalTrainConfig& cfg, rng::Key init_key) {
    if (frame_dim < 1) raise(ErrorCategory::Config, "itfn: frame dim must be positive");
    if (num_classes < 2) raise(ErrorCategory::Config, "itfn: need at least two classes");
    if (cfg.encoder_width < 1 || cfg.head_hidden < 1)
        raise(ErrorCategory::Config, "itfn: widths must be positive");
    UnimodalModel model;
    model.modality = m;
    model.feature_width = cfg.encoder_width;
    model.classes = num_classes;
    if (m == Modality::Text)
        model.encoder = nn::ConvEncoder<float>(frame_dim, text_banks(cfg.encoder_width),
                                               init_key.child("encoder"));
    else
        model.encoder = nn::RecurrentEncoder<float>(frame_dim, cfg.encoder_width,
                                                    init_key.child("encoder"));
    model.head = nn::MlpHead<float>(cfg.encoder_width, cfg.head_hidden, num_classes,
                                    init_key.child("head"));
    return model;
}

Tensor<float> encode(const UnimodalModel& model, const Tensor<float>& frames) {
    autograd::NoGradGuard guard;
    if (frames.rank() != 2)
        raise(ErrorCategory::Shape,
              "encode: expected (length, frame_dim), got " + shape_str(frames.dims()));
    const int64_t len = frames.dim(0), dim = frames.dim(1);
    Tensor<float> padded = Tensor<float>::zeros({1, len, dim});
    std::copy_n(frames.data(), frames.numel(), padded.mutable_data());
    Tensor<float> feature = model.encode_batch(padded, {len});
    Tensor<float> out = Tensor<float>::zeros({model.feature_width});
    std::copy_n(feature.data(), out.numel(), out.mutable_data());
    return out;
}

UnimodalTrainResult train_unimodal(Modality m, const std::vector<Sample>& train,
                                   const std::vector<Sample>& val, int64_t num_classes,
                                   const UnimodalTrainConfig& cfg) {
    const int64_t frame_dim = frame_dim_of(train, m, "train");
    if (frame_dim_of(val, m, "validation") != frame_dim)
        raise(ErrorCategory::Shape, "train_unimodal: train/validation frame dims differ");
    if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1)
        raise(ErrorCategory::Config,
              "train_unimodal: batch size, epochs and patience must be positive");

    const rng::Key root =
        rng::Key(cfg.seed).child("train-itfn").child(static_cast<uint64_t>(m));

    UnimodalTrainResult result;
    result.model = make_unimodal_model(m, frame_dim, num_classes, cfg, root.child("init"));

    nn::ParamMap<float> params;
    result.model.collect(modality_name(m), params);
    Adam<float> opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    params.register_into(opt);

    train::EarlyStopper stopper{cfg.patience, cfg.min_delta};
    std::vector<std::vector<float>> best = train::snapshot_params(params);

    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        opt.set_lr(train::lambda_lr(cfg.lr, epoch, cfg.lr_decay, cfg.lr_hold_epochs));
        auto order = root.child("order").child(static_cast<uint64_t>(epoch)).stream();

        double loss_sum = 0.0;
        size_t seen = 0;
        for (const auto& indices : train::epoch_batches(train.size(), cfg.batch_size, order)) {
            PaddedBatch batch = pad_batch(train, indices, m);
            Tensor<float> logits =
                result.model.head.forward(result.model.encode_batch(batch.frames, batch.lengths));
            Tensor<float> loss = ops::softmax_cross_entropy(logits, batch.labels);
            const double value = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(value))
                raise(ErrorCategory::Training,
                      "train_unimodal: non-finite loss at epoch " + std::to_string(epoch));
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

        const double wa = validation_wa(result.model, val, num_classes, cfg.batch_size);
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

FrozenExtractors::FrozenExtractors(UnimodalModel text, UnimodalModel visual,
                                   UnimodalModel acoustic,
                                   const std::vector<Sample>& standardization_split) {
    if (text.modality != Modality::Text || visual.modality != Modality::Visual ||
        acoustic.modality != Modality::Acoustic)
        raise(ErrorCategory::Config, "frozen extractors: models passed in the wrong order");
    const int64_t width = text.feature_width;
    if (visual.feature_width != width || acoustic.feature_width != width)
        raise(ErrorCategory::Config, "frozen extractors: feature widths differ");
    models_[0] = std::move(text);
    models_[1] = std::move(visual);
    models_[2] = std::move(acoustic);
    ready_ = true;
    fit_stats(standardization_split);
}

void FrozenExtractors::require_ready() const {
    if (!ready_) raise(ErrorCategory::State, "frozen extractors: no models loaded");
}

const UnimodalModel& FrozenExtractors::model(Modality m) const {
    require_ready();
    return models_[static_cast<size_t>(m)];
}

UnimodalModel& FrozenExtractors::model(Modality m) {
    require_ready();
    return models_[static_cast<size_t>(m)];
}

const ModalityStats& FrozenExtractors::stats(Modality m) const {
    require_ready();
    return stats_[static_cast<size_t>(m)];
}

void FrozenExtractors::set_stats(Modality m, ModalityStats s) {
    const int64_t width = feature_width();
    if (static_cast<int64_t>(s.mean.size()) != width ||
        static_cast<int64_t>(s.scale.size()) != width)
        raise(ErrorCategory::Config, "frozen extractors: statistics width mismatch");
    for (float v : s.scale)
        if (!(v > 0.0f))
            raise(ErrorCategory::Config, "frozen extractors: scale entries must be positive");
    stats_[static_cast<size_t>(m)] = std::move(s);
}

int64_t FrozenExtractors::feature_width() const {
    require_ready();
    return models_[0].feature_width;
}

void FrozenExtractors::fit_stats(const std::vector<Sample>& split) {
    require_ready();
    if (split.empty())
        raise(ErrorCategory::Config, "frozen extractors: empty standardization split");
    autograd::NoGradGuard guard;
    const int64_t width = feature_width();
    const size_t batch_size = 64;
    for (Modality m : kModalities) {
        std::vector<double> sum(static_cast<size_t>(width), 0.0);
        std::vector<double> sum2(static_cast<size_t>(width), 0.0);
        std::vector<size_t> indices;
        for (size_t start = 0; start < split.size(); start += batch_size) {
            const size_t end = std::min(split.size(), start + batch_size);
            indices.resize(end - start);
            std::iota(indices.begin(), indices.end(), start);
            PaddedBatch batch = pad_batch(split, indices, m);
            Tensor<float> feats =
                models_[static_cast<size_t>(m)].encode_batch(batch.frames, batch.lengths);
            for (int64_t b = 0; b < feats.dim(0); ++b) {
                const float* row = feats.data() + b * width;
                for (int64_t j = 0; j < width; ++j) {
                    sum[static_cast<size_t>(j)] += row[j];
                    sum2[static_cast<size_t>(j)] += static_cast<double>(row[j]) * row[j];
                }
            }
        }
        ModalityStats st;
        st.mean.resize(static_cast<size_t>(width));
        st.scale.resize(static_cast<size_t>(width));
        const double n = static_cast<double>(split.size());
        for (int64_t j = 0; j < width; ++j) {
            const double mean = sum[static_cast<size_t>(j)] / n;
            const double var = std::max(0.0, sum2[static_cast<size_t>(j)] / n - mean * mean);
            st.mean[static_cast<size_t>(j)] = static_cast<float>(mean);
            st.scale[static_cast<size_t>(j)] =
                std::max(kMinScale, static_cast<float>(std::sqrt(var)));
        }
        stats_[static_cast<size_t>(m)] = std::move(st);
    }
}

Tensor<float> FrozenExtractors::extract_stack(const Sample& sample) const {
    return extract_stacks({sample})[0];
}

std::vector<Tensor<float>> FrozenExtractors::extract_stacks(
    const std::vector<Sample>& samples) const {
    require_ready();
    autograd::NoGradGuard guard;
    const int64_t width = feature_width();
    std::vector<Tensor<float>> out(samples.size());
    for (auto& t : out) t = Tensor<float>::zeros({3, width});

    const size_t batch_size = 64;
    std::vector<size_t> indices;
    for (Modality m : kModalities) {
        const auto& model = models_[static_cast<size_t>(m)];
        const auto& st = stats_[static_cast<size_t>(m)];
        for (size_t start = 0; start < samples.size(); start += batch_size) {
            const size_t end = std::min(samples.size(), start + batch_size);
            indices.resize(end - start);
            std::iota(indices.begin(), indices.end(), start);
            PaddedBatch batch = pad_batch(samples, indices, m);
            Tensor<float> feats = model.encode_batch(batch.frames, batch.lengths);
            for (size_t b = 0; b < indices.size(); ++b) {
                const float* row = feats.data() + static_cast<int64_t>(b) * width;
                float* dst = out[indices[b]].mutable_data() +
                             static_cast<int64_t>(m) * width;
                for (int64_t j = 0; j < width; ++j)
                    dst[j] = (row[j] - st.mean[static_cast<size_t>(j)]) /
                             st.scale[static_cast<size_t>(j)];
            }
        }
    }
    return out;
}

int64_t FrozenExtractors::classify_row(Modality m, const float* standardized_row) const {
    require_ready();
    autograd::NoGradGuard guard;
    const int64_t width = feature_width();
    const auto& st = stats_[static_cast<size_t>(m)];
    Tensor<float> raw = Tensor<float>::zeros({1, width});
    float* d = raw.mutable_data();
    for (int64_t j = 0; j < width; ++j)
        d[j] = standardized_row[j] * st.scale[static_cast<size_t>(j)] +
               st.mean[static_cast<size_t>(j)];
    Tensor<float> logits = models_[static_cast<size_t>(m)].head.forward(raw);
    return argmax_rows(logits)[0];
}

uint64_t FrozenExtractors::params_hash() const {
    require_ready();
    uint64_t h = fnv1a64("itfn", 4);
    for (Modality m : kModalities) {
        nn::ParamMap<float> params;
        const_cast<UnimodalModel&>(models_[static_cast<size_t>(m)])
            .collect(modality_name(m), params);
        h = nn::params_fingerprint(params, h);
    }
    return h;
}

uint64_t FrozenExtractors::encoder_hash() const {
    require_ready();
    uint64_t h = fnv1a64("itfn-encoders", 13);
    for (Modality m : kModalities) {
        nn::ParamMap<float> params;
        const_cast<UnimodalModel&>(models_[static_cast<size_t>(m)])
            .collect_encoder(modality_name(m), params);
        h = nn::params_fingerprint(params, h);
    }
    return h;
}

} // namespace admc
