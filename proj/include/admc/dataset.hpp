#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "admc/rng.hpp"
#include "admc/tensor.hpp"

namespace admc {

enum class Modality : int { Text = 0, Visual = 1, Acoustic = 2 };
inline constexpr std::array<Modality, 3> kModalities = {Modality::Text, Modality::Visual,
                                                        Modality::Acoustic};
inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Text: return "text";
        case Modality::Visual: return "visual";
        case Modality::Acoustic: return "acoustic";
    }
    raise(ErrorCategory::Usage, "invalid modality");
}

struct ModalitySpec {
    int64_t frame_dim = 0;
    int64_t min_len = 0;
    int64_t max_len = 0;
};

// Generative recipe: label -> shared latent u = centroid[y] + latent_noise * n,
// then per modality frames_t = A_m u + drift_m + wave_m(t) + noise * eps_t.
// drift is constant per (sample, modality) and does not average out over
// time; wave is a smooth low-frequency oscillation. Each modality's map A_m
// attenuates a rotating third of the latent axes (gain weak_axis_gain), so a
// single modality sees only part of the class signal while any two cover it.
struct DatasetSpec {
    int64_t num_classes = 4;
    int64_t train_samples = 360;
    int64_t val_samples = 120;
    int64_t test_samples = 240;
    ModalitySpec text{64, 8, 16};
    ModalitySpec visual{48, 6, 12};
    ModalitySpec acoustic{40, 10, 20};
    double centroid_scale = 1.0;    // s
    double latent_noise = 1.0;      // gamma
    double feature_noise = 0.30;    // sigma_data, per-frame white noise
    double jitter_drift = 1.0;      // per-sample constant offset scale
    double jitter_wave = 0.25;      // smooth oscillation amplitude scale
    double weak_axis_gain = 0.30;   // attenuation of each modality's weak latent axes
    int64_t latent_dim = 16;
    uint64_t seed = 17;

    const ModalitySpec& modality(Modality m) const {
        switch (m) {
            case Modality::Text: return text;
            case Modality::Visual: return visual;
            case Modality::Acoustic: return acoustic;
        }
        raise(ErrorCategory::Usage, "invalid modality");
    }
    void validate() const;
};

struct Sample {
    int64_t id = 0;
    int64_t label = 0;
    std::array<Tensor<float>, 3> frames; // indexed by Modality, each (len, dim)

    const Tensor<float>& of(Modality m) const { return frames[static_cast<size_t>(m)]; }
};

struct Dataset {
    DatasetSpec spec;
    std::vector<Sample> train, val, test;

    const std::vector<Sample>& split(const std::string& name) const;
};

Dataset generate_dataset(const DatasetSpec& spec);

// Label-stratified split by largest-remainder allocation; deterministic per seed.
struct SplitRatios {
    double train = 0.8, val = 0.1, test = 0.1;
};
std::array<std::vector<Sample>, 3> split_dataset(const std::vector<Sample>& samples,
                                                 const SplitRatios& ratios, uint64_t seed);

// On-disk layout: one TensorFile per (sample, modality) plus manifest.txt.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Batching prep: pad one modality of a sample range into (B, L_max, dim)
// plus true lengths. Order follows `indices`.
struct PaddedBatch {
    Tensor<float> frames; // (B, L_max, dim)
    std::vector<int64_t> lengths;
    std::vector<int64_t> labels;
};
PaddedBatch pad_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices,
                      Modality m);

// Difficulty oracle: nearest class centroid over concatenated per-modality
// utterance means, centroids estimated on `train`. Returns accuracy on `eval`.
double centroid_oracle_accuracy(const std::vector<Sample>& train,
                                const std::vector<Sample>& eval_set, int64_t num_classes);

} // namespace admc
