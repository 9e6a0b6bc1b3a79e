#include "admc/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <utility>

#include "admc/adam.hpp"
#include "admc/ops.hpp"
#include "admc/training.hpp"

namespace admc {

namespace {

constexpr size_t kEvalBatch = 64;

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

// Labels stacks[indices] with the model, writing into predicted[indices].
// Chunking is fixed so the same index list always produces the same batches.
void classify_into(const FusionModel<float>& model, const std::vector<Tensor<float>>& stacks,
                   const std::vector<size_t>& indices, std::vector<int64_t>& predicted) {
    autograd::NoGradGuard guard;
    const int64_t width = model.config().input_width;
    std::vector<size_t> chunk;
    for (size_t start = 0; start < indices.size(); start += kEvalBatch) {
        const size_t end = std::min(indices.size(), start + kEvalBatch);
        chunk.assign(indices.begin() + static_cast<std::ptrdiff_t>(start),
                     indices.begin() + static_cast<std::ptrdiff_t>(end));
        Tensor<float> logits = model.forward(stack_batch(stacks, chunk, width));
        for (int64_t r = 0; r < logits.dim(0); ++r)
            predicted[chunk[static_cast<size_t>(r)]] =
                argmax_row(logits.data() + r * logits.dim(1), logits.dim(1));
    }
}

ConfusionMatrix tally(const std::vector<Sample>& testset, const std::vector<int64_t>& predicted,
                      int64_t classes) {
    ConfusionMatrix cm(classes);
    for (size_t i = 0; i < testset.size(); ++i) cm.add(testset[i].label, predicted[i]);
    return cm;
}

} // namespace

PatternEvalResult pattern_eval(const PatternRegistry& registry,
                               const FrozenExtractors& extractors, const Completer* completer,
                               const std::vector<Sample>& testset, const ModalityMask& mask,
                               rng::Key noise_base) {
    if (testset.empty()) raise(ErrorCategory::Input, "pattern_eval: empty test set");
    if (mask.none())
        raise(ErrorCategory::Config, "pattern_eval: pattern must keep at least one modality");
    const FusionModel<float>& model = registry.model_for(mask);

    std::vector<Tensor<float>> feats = extractors.extract_stacks(testset);
    if (!mask.all()) {
        if (completer) {
            feats = completer->complete_many(feats, std::vector<ModalityMask>(feats.size(), mask),
                                             noise_base);
        } else {
            for (auto& s : feats) s = zero_fill_missing(s, mask);
        }
    }

    std::vector<int64_t> predicted(testset.size(), -1);
    std::vector<size_t> all(testset.size());
    std::iota(all.begin(), all.end(), size_t{0});
    classify_into(model, feats, all, predicted);

    ConfusionMatrix cm = tally(testset, predicted, model.config().num_classes);
    return {cm, compute_wa_ua(cm), compute_f1_acc(cm), std::move(predicted)};
}

MissingRateResult missing_rate_eval(const PatternRegistry& registry,
                                    const FrozenExtractors& extractors,
                                    const Completer& completer,
                                    const std::vector<Sample>& testset, double rate,
                                    uint64_t seed) {
    if (!(rate >= 0.0 && rate <= 0.5))
        raise(ErrorCategory::Config,
              "missing_rate_eval: rate " + std::to_string(rate) + " outside [0, 0.5]");
    if (testset.empty()) raise(ErrorCategory::Input, "missing_rate_eval: empty test set");

    const size_t n = testset.size();
    const rng::Key root(seed);
    const rng::Key drop_root = root.child("drop");
    const rng::Key noise_root = root.child("noise");

    // Per-sample draws are keyed by (seed, index) alone, never by what other
    // samples drew: a drop coin, then subset size 1 or 2, then which subset.
    std::vector<ModalityMask> masks(n, ModalityMask::from_bits(7));
    for (size_t i = 0; i < n; ++i) {
        auto s = drop_root.child(static_cast<uint64_t>(i)).stream();
        if (s.next_double() >= rate) continue;
        const uint64_t size = 1 + s.next_below(2);
        const size_t pick = static_cast<size_t>(s.next_below(3));
        ModalityMask m;
        if (size == 1) {
            m = ModalityMask::from_bits(7);
            m.available[pick] = false; // drop exactly `pick`
        } else {
            m.available = {false, false, false};
            m.available[pick] = true; // drop everything else
        }
        masks[i] = m;
    }

    const std::vector<Tensor<float>> stacks = extractors.extract_stacks(testset);
    std::map<uint8_t, std::vector<size_t>> groups;
    for (size_t i = 0; i < n; ++i) groups[masks[i].bits()].push_back(i);

    std::vector<Tensor<float>> feats(n);
    std::vector<int64_t> predicted(n, -1);
    int64_t classes = 0;
    for (const auto& [bits, idx] : groups) {
        const ModalityMask mask = ModalityMask::from_bits(bits);
        const FusionModel<float>& model = registry.model_for(mask);
        classes = model.config().num_classes;
        if (mask.all()) {
            for (size_t i : idx) feats[i] = stacks[i];
        } else {
            std::vector<InpaintTask> tasks(idx.size());
            for (size_t j = 0; j < idx.size(); ++j) {
                tasks[j].observed = stacks[idx[j]];
                tasks[j].available = mask.available;
                tasks[j].start_n = completer.start_n();
                tasks[j].noise_key = noise_root.child(static_cast<uint64_t>(idx[j]));
            }
            auto done = completer.complete_tasks(tasks);
            for (size_t j = 0; j < idx.size(); ++j) feats[idx[j]] = std::move(done[j]);
        }
        classify_into(model, feats, idx, predicted);
    }

    ConfusionMatrix cm = tally(testset, predicted, classes);
    return {cm, compute_wa_ua(cm), compute_f1_acc(cm), std::move(predicted), std::move(masks)};
}

std::string SweepDirection::label() const {
    static constexpr char letters[3] = {'T', 'V', 'A'};
    std::string s;
    for (size_t m = 0; m < 3; ++m)
        if (sources.available[m]) s += letters[m];
    s += "->";
    s += letters[static_cast<size_t>(target)];
    return s;
}

std::vector<SweepDirection> default_sweep_directions() {
    std::vector<SweepDirection> out;
    out.reserve(9);
    // both remaining modalities toward the missing one
    out.push_back({ModalityMask::from_string("011"), Modality::Text});
    out.push_back({ModalityMask::from_string("101"), Modality::Visual});
    out.push_back({ModalityMask::from_string("110"), Modality::Acoustic});
    // each single source toward both others
    for (int src = 0; src < 3; ++src)
        for (int dst = 0; dst < 3; ++dst) {
            if (src == dst) continue;
            ModalityMask m;
            m.available = {false, false, false};
            m.available[static_cast<size_t>(src)] = true;
            out.push_back({m, static_cast<Modality>(dst)});
        }
    return out;
}

std::vector<SweepRow> n_sweep(const FrozenExtractors& extractors,
                              const DenoiserModel<float>& denoiser, const NoiseSchedule& sched,
                              const std::vector<Sample>& testset,
                              const std::vector<int64_t>& start_values,
                              const std::vector<SweepDirection>& directions, uint64_t seed) {
    if (directions.empty()) raise(ErrorCategory::Config, "n_sweep: no directions given");
    if (start_values.empty()) raise(ErrorCategory::Config, "n_sweep: no noising levels given");
    if (testset.empty()) raise(ErrorCategory::Input, "n_sweep: empty test set");
    for (const auto& d : directions) {
        if (d.sources.none())
            raise(ErrorCategory::Config, "n_sweep: direction needs at least one source");
        if (d.sources.available[static_cast<size_t>(d.target)])
            raise(ErrorCategory::Config,
                  "n_sweep: direction " + d.label() + " targets an available modality");
    }

    const std::vector<Tensor<float>> stacks = extractors.extract_stacks(testset);
    const int64_t width = extractors.feature_width();
    const int64_t classes = extractors.model(Modality::Text).classes;

    // Directions sharing a source set also share completions.
    std::map<uint8_t, std::vector<size_t>> by_mask;
    for (size_t di = 0; di < directions.size(); ++di)
        by_mask[directions[di].sources.bits()].push_back(di);

    std::vector<SweepRow> rows(directions.size() * start_values.size());
    const rng::Key root = rng::Key(seed).child("sweep");
    for (size_t ni = 0; ni < start_values.size(); ++ni) {
        const int64_t level = start_values[ni];
        const Completer comp(denoiser, sched, static_cast<int>(level));
        for (const auto& [bits, dirs] : by_mask) {
            const ModalityMask mask = ModalityMask::from_bits(bits);
            const rng::Key base = root.child(static_cast<uint64_t>(level)).child(bits);
            std::vector<InpaintTask> tasks(testset.size());
            for (size_t i = 0; i < testset.size(); ++i) {
                tasks[i].observed = stacks[i];
                tasks[i].available = mask.available;
                tasks[i].start_n = static_cast<int>(level);
                tasks[i].noise_key = base.child(static_cast<uint64_t>(i));
            }
            const auto completed = comp.complete_tasks(tasks);
            for (size_t di : dirs) {
                const SweepDirection& d = directions[di];
                ConfusionMatrix cm(classes);
                for (size_t i = 0; i < testset.size(); ++i) {
                    const float* row =
                        completed[i].data() + static_cast<int64_t>(d.target) * width;
                    cm.add(testset[i].label, extractors.classify_row(d.target, row));
                }
                rows[di * start_values.size() + ni] = {d, level, compute_wa_ua(cm)};
            }
        }
    }
    return rows;
}

std::vector<AblationRow> ablation_run(const std::vector<AblationVariantSpec>& variants,
                                      const std::vector<Sample>& testset, rng::Key noise_base) {
    if (variants.empty()) raise(ErrorCategory::Config, "ablation_run: no variants given");
    if (testset.empty()) raise(ErrorCategory::Input, "ablation_run: empty test set");
    for (size_t i = 0; i < variants.size(); ++i)
        for (size_t j = i + 1; j < variants.size(); ++j)
            if (variants[i].name == variants[j].name)
                raise(ErrorCategory::Config,
                      "ablation_run: duplicate variant '" + variants[i].name + "'");

    std::vector<AblationRow> rows;
    rows.reserve(variants.size() * 7);
    for (const auto& v : variants) {
        const AblationArtifacts& a = v.artifacts;
        if (!a.extractors || !a.registry || !a.extractors->ready())
            raise(ErrorCategory::State,
                  "ablation_run: variant '" + v.name + "' is missing trained artifacts");
        if (!a.zero_fill && !a.completer)
            raise(ErrorCategory::State, "ablation_run: variant '" + v.name +
                                            "' has no completion model and is not zero-fill");
        const Completer* completer = a.zero_fill ? nullptr : a.completer;
        for (const ModalityMask& pattern : supported_patterns()) {
            PatternEvalResult r =
                pattern_eval(*a.registry, *a.extractors, completer, testset, pattern,
                             noise_base.child(v.name).child(static_cast<uint64_t>(pattern.bits())));
            rows.push_back({v.name, pattern, r.wa_ua.wa, r.wa_ua.ua});
        }
    }
    return rows;
}

double ablation_average_wa(const std::vector<AblationRow>& rows, const std::string& variant) {
    double sum = 0.0;
    int64_t n = 0;
    for (const auto& r : rows) {
        if (r.variant != variant || r.pattern.all()) continue;
        sum += r.wa;
        ++n;
    }
    if (n == 0)
        raise(ErrorCategory::Config,
              "ablation_average_wa: no partial-pattern rows for variant '" + variant + "'");
    return sum / static_cast<double>(n);
}

JointTrainResult train_joint(const std::vector<Sample>& train, const std::vector<Sample>& val,
                             int64_t num_classes, const JointTrainConfig& cfg) {
    if (train.empty() || val.empty())
        raise(ErrorCategory::Config, "train_joint: empty training or validation split");
    if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1)
        raise(ErrorCategory::Config,
              "train_joint: batch size, epochs and patience must be positive");
    FusionConfig arch = cfg.fusion;
    arch.input_width = cfg.encoder.encoder_width;
    arch.num_classes = num_classes;
    arch.validate();

    const rng::Key root = rng::Key(cfg.seed).child("train-joint");
    std::array<UnimodalModel, 3> encoders;
    for (int m = 0; m < 3; ++m) {
        const Modality mod = static_cast<Modality>(m);
        encoders[static_cast<size_t>(m)] =
            make_unimodal_model(mod, train[0].of(mod).dim(1), num_classes, cfg.encoder,
                                root.child("init").child(static_cast<uint64_t>(m)));
    }
    FusionModel<float> fusion(arch, ModalityMask::from_bits(7), root.child("init").child("fusion"));

    nn::ParamMap<float> params;
    for (int m = 0; m < 3; ++m)
        encoders[static_cast<size_t>(m)].collect_encoder(modality_name(static_cast<Modality>(m)),
                                                         params);
    fusion.collect("fusion", params);
    Adam<float> opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    params.register_into(opt);

    auto forward_batch = [&](const std::vector<Sample>& samples,
                             const std::vector<size_t>& indices, rng::Stream* drop) {
        std::vector<Tensor<float>> feats(3);
        std::vector<int64_t> labels;
        for (int m = 0; m < 3; ++m) {
            PaddedBatch b = pad_batch(samples, indices, static_cast<Modality>(m));
            feats[static_cast<size_t>(m)] =
                encoders[static_cast<size_t>(m)].encode_batch(b.frames, b.lengths);
            if (m == 0) labels = std::move(b.labels);
        }
        return std::pair(fusion.forward(ops::stack_tokens(feats), drop), std::move(labels));
    };

    JointTrainResult result;
    train::EarlyStopper stopper{cfg.patience, cfg.min_delta};
    std::vector<std::vector<float>> best = train::snapshot_params(params);

    for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        opt.set_lr(train::lambda_lr(cfg.lr, epoch, cfg.lr_decay, cfg.lr_hold_epochs));
        auto order = root.child("order").child(static_cast<uint64_t>(epoch)).stream();
        const rng::Key drop_key = root.child("drop").child(static_cast<uint64_t>(epoch));

        double loss_sum = 0.0;
        size_t seen = 0;
        uint64_t batch_index = 0;
        for (const auto& indices : train::epoch_batches(train.size(), cfg.batch_size, order)) {
            auto drop = drop_key.child(batch_index++).stream();
            auto [logits, labels] = forward_batch(train, indices, &drop);
            Tensor<float> loss = ops::softmax_cross_entropy(logits, labels);
            const double value = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(value))
                raise(ErrorCategory::Training,
                      "train_joint: non-finite loss at epoch " + std::to_string(epoch));
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

        double wa = 0.0;
        {
            autograd::NoGradGuard guard;
            ConfusionMatrix cm(num_classes);
            std::vector<size_t> indices;
            for (size_t start = 0; start < val.size();
                 start += static_cast<size_t>(cfg.batch_size)) {
                const size_t end =
                    std::min(val.size(), start + static_cast<size_t>(cfg.batch_size));
                indices.resize(end - start);
                std::iota(indices.begin(), indices.end(), start);
                auto [logits, labels] = forward_batch(val, indices, nullptr);
                for (int64_t r = 0; r < logits.dim(0); ++r)
                    cm.add(labels[static_cast<size_t>(r)],
                           argmax_row(logits.data() + r * logits.dim(1), logits.dim(1)));
            }
            wa = compute_wa_ua(cm).wa;
        }
        result.history.push_back({loss_sum / static_cast<double>(seen), wa});

        // the stopper minimizes, WA is maximized
        if (stopper.observe(epoch, -wa)) best = train::snapshot_params(params);
        if (stopper.should_stop()) break;
    }

    train::restore_params(params, best);
    result.best_epoch = stopper.best_epoch;
    result.best_val_wa = -stopper.best;
    result.extractors = FrozenExtractors(std::move(encoders[0]), std::move(encoders[1]),
                                         std::move(encoders[2]), train);
    return result;
}

std::vector<std::array<double, 2>> pca_plane(const float* rows, int64_t n, int64_t d) {
    if (n < 2 || d < 2)
        raise(ErrorCategory::Config, "pca_plane: need at least two points and two dimensions");
    Eigen::MatrixXd x(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) x(i, j) = static_cast<double>(rows[i * d + j]);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        raise(ErrorCategory::Metric, "pca_plane: eigendecomposition failed");
    Eigen::MatrixXd axes(d, 2);
    axes.col(0) = es.eigenvectors().col(d - 1); // eigenvalues come out ascending
    axes.col(1) = es.eigenvectors().col(d - 2);
    for (int c = 0; c < 2; ++c) {
        int64_t peak = 0;
        for (int64_t j = 1; j < d; ++j)
            if (std::abs(axes(j, c)) > std::abs(axes(peak, c))) peak = j;
        if (axes(peak, c) < 0.0) axes.col(c) = -axes.col(c);
    }

    const Eigen::MatrixXd proj = x * axes; // x is centered already
    std::vector<std::array<double, 2>> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = {proj(i, 0), proj(i, 1)};
    return out;
}

void export_embeddings(const std::vector<Tensor<float>>& real_stacks,
                       const std::vector<Tensor<float>>& generated_stacks,
                       const EmbeddingExportConfig& cfg, std::ostream& out) {
    if (cfg.k < 1) raise(ErrorCategory::Config, "export_embeddings: k must be positive");
    const size_t k = static_cast<size_t>(cfg.k);
    if (real_stacks.size() < k || generated_stacks.size() < k)
        raise(ErrorCategory::Sampling,
              "export_embeddings: requested " + std::to_string(cfg.k) + " samples but only " +
                  std::to_string(std::min(real_stacks.size(), generated_stacks.size())) +
                  " available");
    if (real_stacks[0].rank() != 2 || real_stacks[0].dim(0) != 3)
        raise(ErrorCategory::Shape, "export_embeddings: stacks must be (3, width)");
    const int64_t width = real_stacks[0].dim(1);
    auto check = [&](const std::vector<Tensor<float>>& stacks, const char* which) {
        for (const auto& s : stacks)
            if (s.rank() != 2 || s.dim(0) != 3 || s.dim(1) != width)
                raise(ErrorCategory::Shape, std::string("export_embeddings: ") + which +
                                                " stack " + shape_str(s.dims()) +
                                                ", expected (3," + std::to_string(width) + ")");
    };
    check(real_stacks, "real");
    check(generated_stacks, "generated");

    // Order-preserving subset; both sides draw from the same key so equal
    // populations select (and hence project) identically.
    auto pick = [&](size_t population) {
        std::vector<size_t> idx(population);
        std::iota(idx.begin(), idx.end(), size_t{0});
        auto s = rng::Key(cfg.seed).child("select").stream();
        s.shuffle(idx);
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    };
    const std::vector<size_t> real_idx = pick(real_stacks.size());
    const std::vector<size_t> gen_idx = pick(generated_stacks.size());

    std::vector<float> rows;
    rows.reserve(6 * k * static_cast<size_t>(width));
    auto append = [&](const std::vector<Tensor<float>>& stacks, const std::vector<size_t>& idx) {
        for (size_t i : idx)
            rows.insert(rows.end(), stacks[i].data(), stacks[i].data() + 3 * width);
    };
    append(real_stacks, real_idx);
    append(generated_stacks, gen_idx);

    const auto proj = pca_plane(rows.data(), static_cast<int64_t>(6 * k), width);

    static constexpr const char* kModality[3] = {"text", "visual", "acoustic"};
    char line[128];
    size_t p = 0;
    for (const char* origin : {"real", "generated"}) {
        for (size_t i = 0; i < k; ++i) {
            for (int m = 0; m < 3; ++m, ++p) {
                std::snprintf(line, sizeof line, "%.9g,%.9g,%s,%s\n", proj[p][0], proj[p][1],
                              kModality[m], origin);
                out << line;
            }
        }
    }
}

void ExperimentReport::add(std::string section, std::string label, std::string metric,
                           double value, uint64_t seed, std::string checkpoint) {
    rows_.push_back({std::move(section), std::move(label), std::move(metric), value, seed,
                     std::move(checkpoint)});
}

std::string ExperimentReport::table_text() const {
    std::ostringstream os;
    os << "experiment report (config " << config_fingerprint_ << ")\n";
    std::vector<std::string> sections;
    for (const auto& r : rows_)
        if (std::find(sections.begin(), sections.end(), r.section) == sections.end())
            sections.push_back(r.section);
    char value[32];
    for (const auto& s : sections) {
        os << "\n[" << s << "]\n";
        os << std::left << std::setw(24) << "label" << std::setw(10) << "metric" << std::right
           << std::setw(12) << "value" << "  " << std::left << std::setw(8) << "seed"
           << "checkpoint" << "\n";
        for (const auto& r : rows_) {
            if (r.section != s) continue;
            std::snprintf(value, sizeof value, "%12.6f", r.value);
            os << std::left << std::setw(24) << r.label << std::setw(10) << r.metric << value
               << "  " << std::setw(8) << r.seed << r.checkpoint << "\n";
        }
    }
    return os.str();
}

std::string ExperimentReport::machine_text() const {
    std::ostringstream os;
    os << "config_fingerprint=" << config_fingerprint_ << "\n";
    os << "rows=" << rows_.size() << "\n";
    char value[32];
    for (size_t i = 0; i < rows_.size(); ++i) {
        const auto& r = rows_[i];
        const std::string p = "row." + std::to_string(i) + ".";
        std::snprintf(value, sizeof value, "%.10g", r.value);
        os << p << "section=" << r.section << "\n";
        os << p << "label=" << r.label << "\n";
        os << p << "metric=" << r.metric << "\n";
        os << p << "value=" << value << "\n";
        os << p << "seed=" << r.seed << "\n";
        os << p << "checkpoint=" << r.checkpoint << "\n";
    }
    return os.str();
}

} // namespace admc
