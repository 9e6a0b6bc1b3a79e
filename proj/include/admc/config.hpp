#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "admc/dataset.hpp"
#include "admc/denoiser.hpp"
#include "admc/diffusion.hpp"
#include "admc/fusion.hpp"
#include "admc/itfn.hpp"
#include "admc/metrics.hpp"
#include "admc/schedule.hpp"

namespace admc {

// Evaluation-stage knobs. Rates/levels are what the sweep subcommands iterate
// over; export_* configures the embedding dump.
struct EvalSettings {
    std::vector<double> missing_rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<int64_t> sweep_start_values = {30, 50, 80};
    int64_t export_count = 600;
    std::string export_split = "train";
    WaVariant wa_variant = WaVariant::SupportWeightedRecall;
};

// Everything a full run needs except filesystem paths. The canonical text
// rendering (and the fingerprint derived from it) covers exactly these
// fields, so equal fingerprints mean scientifically identical runs no matter
// where their artifacts live.
//
// Stage seeds are not independent knobs: every trainer and sampler derives
// its streams from `seed` under stage-specific tags. The dataset keeps its
// own `data.seed` so the corpus can stay fixed while training seeds vary.
struct RunConfig {
    DatasetSpec data;

    UnimodalTrainConfig itfn;   // seed field ignored; see itfn_config()

    // Diffusion schedule + completion protocol.
    int64_t diffusion_steps = 1000;
    double beta_start = 0.0003;
    double beta_end = 0.06;
    PosteriorVariance posterior = PosteriorVariance::Beta;
    int64_t start_step = 50;    // reverse-chain entry point for completion

    DenoiserConfig adn_arch;    // feature_dim/max_steps derived; see denoiser_config()
    AdnTrainConfig adn;         // seed field ignored; see adn_config()

    FusionTrainConfig fusion;   // arch.input_width/num_classes/seed derived
    bool train_enhanced = false;

    EvalSettings eval;

    uint64_t seed = 7;

    // Assembled stage configs with the derived fields filled in.
    UnimodalTrainConfig itfn_config() const;
    DenoiserConfig denoiser_config() const;
    NoiseSchedule make_schedule() const;
    AdnTrainConfig adn_config() const;
    FusionTrainConfig fusion_config() const;

    void validate() const;

    // Key/value access over the flat "section.key" namespace. Unknown keys
    // and unparsable values raise Config errors.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static std::vector<std::string> keys();

    // Canonical rendering: fixed section order, fixed key order, shortest
    // round-trip numeric formatting. Parsing it back reproduces the config.
    std::string canonical_text() const;
    std::string fingerprint() const; // fnv1a64 of canonical_text, hex
};

// Applies "key = value" lines (with [section] headers and # comments) on top
// of the current contents. Syntax problems raise Format errors with a line
// number; unknown keys and bad values raise Config errors.
void apply_config_text(RunConfig& cfg, const std::string& text);

// Applies one "section.key=value" override (CLI --set syntax).
void apply_override(RunConfig& cfg, const std::string& assignment);

RunConfig load_config_file(const std::string& path);
void save_config_file(const RunConfig& cfg, const std::string& path);

} // namespace admc
