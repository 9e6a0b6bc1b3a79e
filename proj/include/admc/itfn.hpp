#pragma once

#include <array>
#include <cstdint>
#include <variant>
#include <vector>

#include "admc/dataset.hpp"
#include "admc/nn.hpp"
#include "admc/tensor.hpp"

namespace admc {

struct UnimodalTrainConfig {
    int64_t encoder_width = 256;
    int64_t head_hidden = 128;
    int64_t batch_size = 64;
    int64_t max_epochs = 50;
    int64_t patience = 8;
    double min_delta = 0.0;
    double lr = 1e-4;
    double lr_decay = 0.97;
    int64_t lr_hold_epochs = 10;
    uint64_t seed = 1;
};

// Encoder + classification head for one modality. Text gets the conv-bank
// encoder, visual and acoustic the recurrent one.
struct UnimodalModel {
    Modality modality = Modality::Text;
    int64_t feature_width = 0;
    int64_t classes = 0;
    std::variant<nn::ConvEncoder<float>, nn::RecurrentEncoder<float>> encoder;
    nn::MlpHead<float> head;

    // padded: (B, L_max, frame_dim) with true lengths; returns (B, feature_width)
    Tensor<float> encode_batch(const Tensor<float>& padded,
                               const std::vector<int64_t>& lengths) const {
        return std::visit([&](const auto& e) { return e.forward(padded, lengths); }, encoder);
    }

    void collect_encoder(const std::string& prefix, nn::ParamMap<float>& out) {
        std::visit([&](auto& e) { e.collect(prefix + ".encoder", out); }, encoder);
    }

    void collect(const std::string& prefix, nn::ParamMap<float>& out) {
        collect_encoder(prefix, out);
        head.collect(prefix + ".head", out);
    }
};

UnimodalModel make_unimodal_model(Modality m, int64_t frame_dim, int64_t num_classes,
                                  const UnimodalTrainConfig& cfg, rng::Key init_key);

// Utterance-level feature for one sequence; frames is (length, frame_dim).
Tensor<float> encode(const UnimodalModel& model, const Tensor<float>& frames);

struct EpochRecord {
    double train_loss = 0.0;
    double val_wa = 0.0;
};

struct UnimodalTrainResult {
    UnimodalModel model;
    std::vector<EpochRecord> history;
    int64_t best_epoch = -1;
    double best_val_wa = 0.0;
};

UnimodalTrainResult train_unimodal(Modality m, const std::vector<Sample>& train,
                                   const std::vector<Sample>& val, int64_t num_classes,
                                   const UnimodalTrainConfig& cfg);

// Per-dimension z-scoring statistics, estimated on the training split.
struct ModalityStats {
    std::vector<float> mean;
    std::vector<float> scale; // standard deviation, floored to avoid blowups
};

// The three trained per-modality models with standardization statistics.
// Downstream stages treat the parameters as immutable; params_hash() lets
// them verify that.
class FrozenExtractors {
public:
    FrozenExtractors() = default;
    FrozenExtractors(UnimodalModel text, UnimodalModel visual, UnimodalModel acoustic,
                     const std::vector<Sample>& standardization_split);

    bool ready() const { return ready_; }
    const UnimodalModel& model(Modality m) const;
    UnimodalModel& model(Modality m);
    const ModalityStats& stats(Modality m) const;
    void set_stats(Modality m, ModalityStats s);
    int64_t feature_width() const;

    // Standardized (3, feature_width) stack, rows in (text, visual, acoustic) order.
    Tensor<float> extract_stack(const Sample& sample) const;
    std::vector<Tensor<float>> extract_stacks(const std::vector<Sample>& samples) const;

    // Classify a standardized feature row with the modality's own head.
    int64_t classify_row(Modality m, const float* standardized_row) const;

    uint64_t params_hash() const;    // encoders + heads
    uint64_t encoder_hash() const;   // encoders only

    // Recomputes standardization statistics from a split (used after loading).
    void fit_stats(const std::vector<Sample>& split);

private:
    std::array<UnimodalModel, 3> models_;
    std::array<ModalityStats, 3> stats_;
    bool ready_ = false;

    void require_ready() const;
};

} // namespace admc
