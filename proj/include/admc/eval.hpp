#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "admc/fusion.hpp"
#include "admc/metrics.hpp"

namespace admc {

// ---------------------------------------------------------------------------
// Fixed-pattern evaluation

struct PatternEvalResult {
    ConfusionMatrix cm;
    WaUa wa_ua;
    F1Acc f1_acc;
    std::vector<int64_t> predicted; // one label per test sample, in order
};

// Evaluates one availability pattern over the whole test set: extract, complete
// missing rows (zero-fill them when completer is null), classify with the
// pattern's model. Per-sample completion noise comes from noise_base.child(i).
PatternEvalResult pattern_eval(const PatternRegistry& registry,
                               const FrozenExtractors& extractors, const Completer* completer,
                               const std::vector<Sample>& testset, const ModalityMask& mask,
                               rng::Key noise_base);

// ---------------------------------------------------------------------------
// Random missing-rate protocol

struct MissingRateResult {
    ConfusionMatrix cm;
    WaUa wa_ua;
    F1Acc f1_acc;
    std::vector<int64_t> predicted;
    std::vector<ModalityMask> masks; // availability drawn per sample
};

// With probability `rate` a sample loses a random nonempty strict subset of its
// modalities: subset size 1 or 2 with equal probability, uniform within the
// size. Draws depend only on (seed, sample index), so results are reproducible
// and rate 0 matches pattern_eval on the full pattern bit for bit.
MissingRateResult missing_rate_eval(const PatternRegistry& registry,
                                    const FrozenExtractors& extractors,
                                    const Completer& completer,
                                    const std::vector<Sample>& testset, double rate,
                                    uint64_t seed);

// ---------------------------------------------------------------------------
// Generation-quality sweep over the partial-noising level

// Generate `target` from the modalities in `sources`; anything outside
// `sources` is treated as missing during completion.
struct SweepDirection {
    ModalityMask sources;
    Modality target = Modality::Text;

    std::string label() const; // e.g. "TV->A", "A->T"
};

// The nine standard directions: each two-source pair toward its missing
// modality, then each single source toward both others.
std::vector<SweepDirection> default_sweep_directions();

struct SweepRow {
    SweepDirection direction;
    int64_t start_n = 0;
    WaUa wa_ua;
};

// For every (direction, start_n) pair, completes the test set from the
// direction's sources and scores the generated target rows with that
// modality's own classifier head. Rows come out direction-major.
std::vector<SweepRow> n_sweep(const FrozenExtractors& extractors,
                              const DenoiserModel<float>& denoiser, const NoiseSchedule& sched,
                              const std::vector<Sample>& testset,
                              const std::vector<int64_t>& start_values,
                              const std::vector<SweepDirection>& directions, uint64_t seed);

// ---------------------------------------------------------------------------
// Ablation

struct AblationArtifacts {
    const FrozenExtractors* extractors = nullptr;
    const PatternRegistry* registry = nullptr;
    const Completer* completer = nullptr;
    bool zero_fill = false; // replace missing rows with zeros; completer unused
};

struct AblationVariantSpec {
    std::string name;
    AblationArtifacts artifacts;
};

struct AblationRow {
    std::string variant;
    ModalityMask pattern;
    double wa = 0.0;
    double ua = 0.0;
};

// Evaluates each variant on all seven availability patterns. Variants missing
// their trained artifacts raise a state error; zero-fill variants never touch
// a sampler.
std::vector<AblationRow> ablation_run(const std::vector<AblationVariantSpec>& variants,
                                      const std::vector<Sample>& testset, rng::Key noise_base);

// Mean WA of one variant over the six partial patterns (the full pattern is
// reported but not averaged).
double ablation_average_wa(const std::vector<AblationRow>& rows, const std::string& variant);

// Joint end-to-end training of the three encoders with a single full-modality
// fusion classifier; the classifier is the training vehicle, the product is
// the encoder set (with standardization fit on the training split).
struct JointTrainConfig {
    UnimodalTrainConfig encoder;
    FusionConfig fusion; // input_width is forced to encoder.encoder_width
    int64_t batch_size = 64;
    int64_t max_epochs = 50;
    int64_t patience = 8;
    double min_delta = 0.0;
    double lr = 1e-4;
    double lr_decay = 0.97;
    int64_t lr_hold_epochs = 10;
    uint64_t seed = 1;
};

struct JointTrainResult {
    FrozenExtractors extractors;
    std::vector<EpochRecord> history;
    int64_t best_epoch = -1;
    double best_val_wa = 0.0;
};

JointTrainResult train_joint(const std::vector<Sample>& train, const std::vector<Sample>& val,
                             int64_t num_classes, const JointTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Embedding export

// Two principal components of `rows` (n x d, row-major): population
// covariance, eigenvectors of the two largest eigenvalues. Sign is fixed per
// axis so its largest-magnitude entry is positive (earliest index on ties).
std::vector<std::array<double, 2>> pca_plane(const float* rows, int64_t n, int64_t d);

struct EmbeddingExportConfig {
    int64_t k = 600; // samples drawn from each of the real and generated sets
    uint64_t seed = 0;
};

// Samples k real and k generated stacks (order-preserving, seed-determined),
// fits one PCA plane on all of their rows jointly, and writes one line per
// row: "x,y,<modality>,<real|generated>".
void export_embeddings(const std::vector<Tensor<float>>& real_stacks,
                       const std::vector<Tensor<float>>& generated_stacks,
                       const EmbeddingExportConfig& cfg, std::ostream& out);

// ---------------------------------------------------------------------------
// Experiment reports

struct ReportRow {
    std::string section;
    std::string label;
    std::string metric;
    double value = 0.0;
    uint64_t seed = 0;
    std::string checkpoint; // fingerprint of the artifacts that produced it
};

// Accumulates metric rows and renders them twice: a human-readable table
// grouped by section and a line-per-field key-value form. Rendering is
// deterministic, so identical inputs give identical bytes.
class ExperimentReport {
public:
    explicit ExperimentReport(std::string config_fingerprint)
        : config_fingerprint_(std::move(config_fingerprint)) {}

    void add(std::string section, std::string label, std::string metric, double value,
             uint64_t seed, std::string checkpoint);

    const std::vector<ReportRow>& rows() const { return rows_; }
    const std::string& config_fingerprint() const { return config_fingerprint_; }

    std::string table_text() const;
    std::string machine_text() const;

private:
    std::string config_fingerprint_;
    std::vector<ReportRow> rows_;
};

} // namespace admc
