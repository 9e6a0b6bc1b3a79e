#include "admc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "admc/tensor_io.hpp"

namespace admc {

namespace {

constexpr int kManifestFormat = 1;

std::string sample_rel_path(const std::string& split, int64_t id, Modality m) {
    std::ostringstream os;
    os << split << "/s" << id << "_" << modality_name(m) << ".admc";
    return os.str();
}

} // namespace

void DatasetSpec::validate() const {
    if (num_classes < 2)
        raise(ErrorCategory::Config, "dataset needs >= 2 classes, got " +
                                         std::to_string(num_classes));
    if (train_samples < 1 || val_samples < 1 || test_samples < 1)
        raise(ErrorCategory::Config, "every split needs at least one sample");
    for (Modality m : kModalities) {
        const auto& ms = modality(m);
        if (ms.frame_dim < 1 || ms.min_len < 1 || ms.max_len < ms.min_len)
            raise(ErrorCategory::Config, std::string("invalid dims/lengths for modality ") +
                                             modality_name(m));
    }
    if (centroid_scale <= 0.0 || latent_dim < 1)
        raise(ErrorCategory::Config, "centroid scale and latent dim must be positive");
    if (feature_noise < 0.0 || latent_noise < 0.0 || jitter_drift < 0.0 || jitter_wave < 0.0)
        raise(ErrorCategory::Config, "noise scales must be non-negative");
    if (weak_axis_gain < 0.0 || weak_axis_gain > 1.0)
        raise(ErrorCategory::Config, "weak_axis_gain must lie in [0,1]");
    if (feature_noise >= centroid_scale)
        raise(ErrorCategory::Config, "feature noise must stay below the centroid scale");
}

const std::vector<Sample>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    raise(ErrorCategory::Usage, "unknown split '" + name + "'");
}

Dataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    rng::Key root(spec.seed);

    // Class centroids in latent space and fixed per-modality mixing maps.
    std::vector<std::vector<double>> centroids(static_cast<size_t>(spec.num_classes));
    for (int64_t y = 0; y < spec.num_classes; ++y) {
        auto s = root.child("centroid").child(static_cast<uint64_t>(y)).stream();
        auto& c = centroids[static_cast<size_t>(y)];
        c.resize(static_cast<size_t>(spec.latent_dim));
        for (auto& v : c) v = s.next_normal() * spec.centroid_scale;
    }
    std::array<std::vector<double>, 3> maps; // (frame_dim x latent_dim), row-major
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (Modality m : kModalities) {
        auto s = root.child("map").child(static_cast<uint64_t>(m)).stream();
        auto& a = maps[static_cast<size_t>(m)];
        const int64_t dim = spec.modality(m).frame_dim;
        a.resize(static_cast<size_t>(dim * spec.latent_dim));
        for (auto& v : a) v = s.next_normal() * map_scale;
        // Latent axis j is weak for modality m unless j mod 3 hits m or m+1:
        // each modality carries 2/3 of the axes at full gain, and every axis
        // is fully visible to exactly two modalities.
        const auto mi = static_cast<int64_t>(m);
        for (int64_t j = 0; j < spec.latent_dim; ++j) {
            const int64_t r = j % 3;
            if (r == mi || r == (mi + 1) % 3) continue;
            for (int64_t i = 0; i < dim; ++i)
                a[static_cast<size_t>(i * spec.latent_dim + j)] *= spec.weak_axis_gain;
        }
    }

    Dataset ds;
    ds.spec = spec;
    int64_t next_id = 0;
    auto make_split = [&](std::vector<Sample>& out, int64_t count) {
        out.reserve(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) {
            Sample sample;
            sample.id = next_id++;
            sample.label = i % spec.num_classes;
            rng::Key skey = root.child("sample").child(static_cast<uint64_t>(sample.id));

            std::vector<double> u = centroids[static_cast<size_t>(sample.label)];
            auto lat = skey.child("latent").stream();
            for (auto& v : u) v += spec.latent_noise * lat.next_normal();

            for (Modality m : kModalities) {
                const auto& ms = spec.modality(m);
                const auto& a = maps[static_cast<size_t>(m)];
                rng::Key mkey = skey.child(modality_name(m));

                auto len_s = mkey.child("len").stream();
                const int64_t len =
                    ms.min_len + static_cast<int64_t>(
                                     len_s.next_below(static_cast<uint64_t>(ms.max_len - ms.min_len + 1)));

                std::vector<double> base(static_cast<size_t>(ms.frame_dim), 0.0);
                for (int64_t i2 = 0; i2 < ms.frame_dim; ++i2)
                    for (int64_t j = 0; j < spec.latent_dim; ++j)
                        base[static_cast<size_t>(i2)] +=
                            a[static_cast<size_t>(i2 * spec.latent_dim + j)] * u[static_cast<size_t>(j)];

                auto drift_s = mkey.child("drift").stream();
                std::vector<double> drift(static_cast<size_t>(ms.frame_dim));
                for (auto& v : drift) v = spec.jitter_drift * drift_s.next_normal();

                auto wave_s = mkey.child("wave").stream();
                std::vector<double> amp(static_cast<size_t>(ms.frame_dim));
                for (auto& v : amp) v = spec.jitter_wave * wave_s.next_normal();
                const double freq = 2.0 * std::numbers::pi * (0.5 + wave_s.next_double()) /
                                    static_cast<double>(len);
                const double phase = 2.0 * std::numbers::pi * wave_s.next_double();

                auto noise_s = mkey.child("noise").stream();
                Tensor<float> frames = Tensor<float>::zeros({len, ms.frame_dim});
                float* out_p = frames.mutable_data();
                for (int64_t t = 0; t < len; ++t) {
                    const double wave = std::sin(freq * static_cast<double>(t) + phase);
                    for (int64_t i2 = 0; i2 < ms.frame_dim; ++i2) {
                        const double v = base[static_cast<size_t>(i2)] +
                                         drift[static_cast<size_t>(i2)] +
                                         amp[static_cast<size_t>(i2)] * wave +
                                         spec.feature_noise * noise_s.next_normal();
                        out_p[t * ms.frame_dim + i2] = static_cast<float>(v);
                    }
                }
                sample.frames[static_cast<size_t>(m)] = std::move(frames);
            }
            out.push_back(std::move(sample));
        }
    };
    make_split(ds.train, spec.train_samples);
    make_split(ds.val, spec.val_samples);
    make_split(ds.test, spec.test_samples);
    return ds;
}

std::array<std::vector<Sample>, 3> split_dataset(const std::vector<Sample>& samples,
                                                 const SplitRatios& ratios, uint64_t seed) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9)
        raise(ErrorCategory::Config, "split ratios must sum to 1, got " + std::to_string(sum));
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
        raise(ErrorCategory::Config, "split ratios must be non-negative");

    std::map<int64_t, std::vector<size_t>> by_label;
    for (size_t i = 0; i < samples.size(); ++i) by_label[samples[i].label].push_back(i);

    std::array<std::vector<Sample>, 3> out;
    const double r[3] = {ratios.train, ratios.val, ratios.test};
    for (auto& [label, idx] : by_label) {
        auto s = rng::Key(seed).child("strat").child(static_cast<uint64_t>(label)).stream();
        s.shuffle(idx);

        const auto n = static_cast<int64_t>(idx.size());
        int64_t base[3];
        double frac[3];
        int64_t assigned = 0;
        for (int j = 0; j < 3; ++j) {
            const double exact = static_cast<double>(n) * r[j];
            base[j] = static_cast<int64_t>(std::floor(exact + 1e-12));
            frac[j] = exact - static_cast<double>(base[j]);
            assigned += base[j];
        }
        // Largest remainder; ties resolved toward earlier splits.
        while (assigned < n) {
            int best = 0;
            for (int j = 1; j < 3; ++j)
                if (frac[j] > frac[best] + 1e-12) best = j;
            ++base[best];
            frac[best] = -1.0;
            ++assigned;
        }
        size_t cursor = 0;
        for (int j = 0; j < 3; ++j)
            for (int64_t t = 0; t < base[j]; ++t) out[static_cast<size_t>(j)].push_back(samples[idx[cursor++]]);
    }
    return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::pair<const char*, const std::vector<Sample>*> splits[3] = {
        {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};

    std::ostringstream manifest;
    const auto& sp = ds.spec;
    manifest << "format " << kManifestFormat << "\n";
    manifest << "classes " << sp.num_classes << "\n";
    manifest << "seed " << sp.seed << "\n";
    manifest << "latent_dim " << sp.latent_dim << "\n";
    manifest << "centroid_scale " << sp.centroid_scale << "\n";
    manifest << "latent_noise " << sp.latent_noise << "\n";
    manifest << "feature_noise " << sp.feature_noise << "\n";
    manifest << "jitter_drift " << sp.jitter_drift << "\n";
    manifest << "jitter_wave " << sp.jitter_wave << "\n";
    manifest << "weak_axis_gain " << sp.weak_axis_gain << "\n";
    for (Modality m : kModalities) {
        const auto& ms = sp.modality(m);
        manifest << "modality " << modality_name(m) << " dim " << ms.frame_dim << " len "
                 << ms.min_len << " " << ms.max_len << "\n";
    }
    for (const auto& [name, list] : splits) {
        fs::create_directories(dir / name);
        for (const Sample& s : *list) {
            manifest << "sample " << name << " " << s.id << " " << s.label;
            for (Modality m : kModalities) {
                const std::string rel = sample_rel_path(name, s.id, m);
                io::write_tensor(dir / rel, s.of(m));
                manifest << " " << rel;
            }
            manifest << "\n";
        }
    }
    std::ofstream f(dir / "manifest.txt", std::ios::trunc);
    if (!f) raise(ErrorCategory::Io, "cannot write manifest in '" + dir.string() + "'");
    f << manifest.str();
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.txt");
    if (!f) raise(ErrorCategory::Io, "cannot open manifest in '" + dir.string() + "'");

    Dataset ds;
    auto& sp = ds.spec;
    sp.train_samples = sp.val_samples = sp.test_samples = 0; // filled from sample lines
    std::string line;
    int lineno = 0;
    bool saw_format = false;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string key;
        is >> key;
        auto bad = [&](const std::string& why) {
            raise(ErrorCategory::Format,
                  "manifest line " + std::to_string(lineno) + ": " + why);
        };
        if (key == "format") {
            int v = -1;
            is >> v;
            if (v != kManifestFormat) bad("unsupported format " + std::to_string(v));
            saw_format = true;
        } else if (key == "classes") {
            is >> sp.num_classes;
        } else if (key == "seed") {
            is >> sp.seed;
        } else if (key == "latent_dim") {
            is >> sp.latent_dim;
        } else if (key == "centroid_scale") {
            is >> sp.centroid_scale;
        } else if (key == "latent_noise") {
            is >> sp.latent_noise;
        } else if (key == "feature_noise") {
            is >> sp.feature_noise;
        } else if (key == "jitter_drift") {
            is >> sp.jitter_drift;
        } else if (key == "jitter_wave") {
            is >> sp.jitter_wave;
        } else if (key == "weak_axis_gain") {
            is >> sp.weak_axis_gain;
        } else if (key == "modality") {
            std::string name, dim_kw, len_kw;
            int64_t dim, lo, hi;
            is >> name >> dim_kw >> dim >> len_kw >> lo >> hi;
            if (!is || dim_kw != "dim" || len_kw != "len") bad("malformed modality line");
            for (Modality m : kModalities)
                if (name == modality_name(m)) {
                    auto& ms = m == Modality::Text ? sp.text
                               : m == Modality::Visual ? sp.visual
                                                       : sp.acoustic;
                    ms = {dim, lo, hi};
                }
        } else if (key == "sample") {
            std::string split_name;
            Sample s;
            std::string paths[3];
            is >> split_name >> s.id >> s.label >> paths[0] >> paths[1] >> paths[2];
            if (!is) bad("malformed sample line");
            if (s.label < 0 || s.label >= sp.num_classes) bad("label out of range");
            for (int m = 0; m < 3; ++m) {
                s.frames[static_cast<size_t>(m)] = io::read_tensor(dir / paths[m]);
                if (s.frames[static_cast<size_t>(m)].rank() != 2)
                    bad("sample tensor is not rank 2");
            }
            if (split_name == "train") {
                ds.train.push_back(std::move(s));
                ++sp.train_samples;
            } else if (split_name == "val") {
                ds.val.push_back(std::move(s));
                ++sp.val_samples;
            } else if (split_name == "test") {
                ds.test.push_back(std::move(s));
                ++sp.test_samples;
            } else {
                bad("unknown split '" + split_name + "'");
            }
        } else {
            bad("unknown key '" + key + "'");
        }
    }
    if (!saw_format)
        raise(ErrorCategory::Format, "manifest missing format line in '" + dir.string() + "'");
    return ds;
}

PaddedBatch pad_batch(const std::vector<Sample>& samples, const std::vector<size_t>& indices,
                      Modality m) {
    if (indices.empty()) raise(ErrorCategory::Usage, "pad_batch: empty index list");
    int64_t max_len = 0;
    const int64_t dim = samples.at(indices[0]).of(m).dim(1);
    for (size_t idx : indices) {
        const auto& t = samples.at(idx).of(m);
        if (t.dim(1) != dim)
            raise(ErrorCategory::Shape, "pad_batch: inconsistent frame dims within batch");
        max_len = std::max(max_len, t.dim(0));
    }
    PaddedBatch out;
    out.frames = Tensor<float>::zeros({static_cast<int64_t>(indices.size()), max_len, dim});
    float* p = out.frames.mutable_data();
    for (size_t b = 0; b < indices.size(); ++b) {
        const Sample& s = samples[indices[b]];
        const auto& t = s.of(m);
        std::copy_n(t.data(), t.numel(), p + static_cast<int64_t>(b) * max_len * dim);
        out.lengths.push_back(t.dim(0));
        out.labels.push_back(s.label);
    }
    return out;
}

namespace {

std::vector<double> mean_concat_features(const Sample& s) {
    std::vector<double> out;
    for (Modality m : kModalities) {
        const auto& t = s.of(m);
        const int64_t len = t.dim(0), dim = t.dim(1);
        for (int64_t j = 0; j < dim; ++j) {
            double acc = 0;
            for (int64_t i = 0; i < len; ++i) acc += static_cast<double>(t.data()[i * dim + j]);
            out.push_back(acc / static_cast<double>(len));
        }
    }
    return out;
}

} // namespace

double centroid_oracle_accuracy(const std::vector<Sample>& train,
                                const std::vector<Sample>& eval_set, int64_t num_classes) {
    if (train.empty() || eval_set.empty())
        raise(ErrorCategory::Usage, "centroid oracle needs non-empty splits");
    const size_t feat_dim = mean_concat_features(train[0]).size();
    std::vector<std::vector<double>> centroids(static_cast<size_t>(num_classes),
                                               std::vector<double>(feat_dim, 0.0));
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    for (const Sample& s : train) {
        auto f = mean_concat_features(s);
        auto& c = centroids[static_cast<size_t>(s.label)];
        for (size_t j = 0; j < feat_dim; ++j) c[j] += f[j];
        ++counts[static_cast<size_t>(s.label)];
    }
    for (int64_t y = 0; y < num_classes; ++y) {
        if (counts[static_cast<size_t>(y)] == 0)
            raise(ErrorCategory::Metric, "class " + std::to_string(y) + " has no training samples");
        for (auto& v : centroids[static_cast<size_t>(y)])
            v /= static_cast<double>(counts[static_cast<size_t>(y)]);
    }
    int64_t correct = 0;
    for (const Sample& s : eval_set) {
        auto f = mean_concat_features(s);
        int64_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int64_t y = 0; y < num_classes; ++y) {
            double d = 0;
            const auto& c = centroids[static_cast<size_t>(y)];
            for (size_t j = 0; j < feat_dim; ++j) d += (f[j] - c[j]) * (f[j] - c[j]);
            if (d < best_d) {
                best_d = d;
                best = y;
            }
        }
        if (best == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(eval_set.size());
}

} // namespace admc
